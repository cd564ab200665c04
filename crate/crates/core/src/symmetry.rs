//! Charge-parity conjugation as an index involution, and the invariance
//! predicates built on it.
//!
//! Conjugation acts on system indices only; bath states are left fixed.
//! Time reversal is tested through the transpose: `h` is T-symmetric iff
//! `h = h^T`.

use crate::error::{check_index, Error, Result};
use crate::quantum_core::{c, CMatrix, Operator};

/// Absolute tolerance of the predicates, scaled by `max(1, max|A|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;
const ENERGY_TOL: f64 = 1e-12;

/// Involution `s -> bar(s)` on system indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetryMap {
    bar: Vec<usize>,
}

impl SymmetryMap {
    /// Checks the involution property only.
    pub fn new(bar: Vec<usize>) -> Result<Self> {
        let n = bar.len();
        for (s, &b) in bar.iter().enumerate() {
            check_index("conjugate index", b, n)?;
            if bar[b] != s {
                return Err(Error::Symmetry(format!(
                    "bar is not an involution: bar({s}) = {b} but bar({b}) = {}",
                    bar[b]
                )));
            }
        }
        Ok(Self { bar })
    }

    /// Involution that additionally preserves the initial/final split and
    /// the state energies.
    pub fn for_states(bar: Vec<usize>, energies: &[f64], initial: &[usize]) -> Result<Self> {
        let map = Self::new(bar)?;
        map.validate(energies, initial)?;
        Ok(map)
    }

    pub fn identity(dim: usize) -> Self {
        Self { bar: (0..dim).collect() }
    }

    /// Swaps each listed pair and fixes every other index.
    pub fn from_pairs(dim: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut bar: Vec<usize> = (0..dim).collect();
        for &(a, b) in pairs {
            check_index("paired index", a, dim)?;
            check_index("paired index", b, dim)?;
            if bar[a] != a || bar[b] != b {
                return Err(Error::Symmetry(format!("index paired twice in ({a}, {b})")));
            }
            bar[a] = b;
            bar[b] = a;
        }
        Self::new(bar)
    }

    pub fn validate(&self, energies: &[f64], initial: &[usize]) -> Result<()> {
        if energies.len() != self.dim() {
            return Err(Error::Size(format!(
                "{} energies for a map on {} states",
                energies.len(),
                self.dim()
            )));
        }
        let mut is_initial = vec![false; self.dim()];
        for &k in initial {
            check_index("initial state", k, self.dim())?;
            is_initial[k] = true;
        }
        for s in 0..self.dim() {
            let b = self.bar[s];
            if is_initial[s] != is_initial[b] {
                return Err(Error::Symmetry(format!(
                    "bar maps {s} and {b} across the initial/final split"
                )));
            }
            if (energies[s] - energies[b]).abs() > ENERGY_TOL * energies[s].abs().max(1.0) {
                return Err(Error::Symmetry(format!(
                    "E({s}) = {} differs from E({b}) = {}",
                    energies[s], energies[b]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.bar.len()
    }

    pub fn bar(&self, s: usize) -> usize {
        self.bar[s]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.bar
    }

    fn check_dim(&self, m: &CMatrix) -> Result<()> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::Size(format!(
                "matrix of dim {} against a map on {} states",
                m.nrows(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `(P A P)_qs = A_{bar q, bar s}`.
    pub fn conjugate(&self, m: &CMatrix) -> Result<CMatrix> {
        self.check_dim(m)?;
        Ok(CMatrix::from_fn(self.dim(), self.dim(), |q, s| m[(self.bar[q], self.bar[s])]))
    }

    /// `(P A^T P)_qs = A_{bar s, bar q}`.
    pub fn conjugate_transpose_order(&self, m: &CMatrix) -> Result<CMatrix> {
        self.check_dim(m)?;
        Ok(CMatrix::from_fn(self.dim(), self.dim(), |q, s| m[(self.bar[s], self.bar[q])]))
    }

    /// `(A + P A P) / 2`; Hermiticity is preserved.
    pub fn cp_symmetrize(&self, op: &Operator) -> Result<Operator> {
        let m = (op.entries() + self.conjugate(op.entries())?) * c(0.5, 0.0);
        Operator::new(m, op.hermitian_hint())
    }

    /// `(A + P A^T P) / 2`; Hermiticity is preserved.
    pub fn cpt_symmetrize(&self, op: &Operator) -> Result<Operator> {
        let m = (op.entries() + self.conjugate_transpose_order(op.entries())?) * c(0.5, 0.0);
        Operator::new(m, op.hermitian_hint())
    }
}

/// Outcome of an invariance predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryCheck {
    pub passed: bool,
    /// Largest entry-wise mismatch.
    pub residual: f64,
    /// Entry `(row, col)` where the largest mismatch occurs.
    pub worst: Option<(usize, usize)>,
}

fn compare(a: &CMatrix, b: &CMatrix) -> SymmetryCheck {
    let mut residual = 0.0;
    let mut worst = None;
    let mut scale = 1.0f64;
    for q in 0..a.nrows() {
        for s in 0..a.ncols() {
            scale = scale.max(a[(q, s)].norm());
            let d = (a[(q, s)] - b[(q, s)]).norm();
            if d > residual {
                residual = d;
                worst = Some((q, s));
            }
        }
    }
    SymmetryCheck {
        passed: residual <= SYMMETRY_TOL * scale,
        residual,
        worst,
    }
}

/// `h_qs = h_{bar q, bar s}` for all `q, s`.
pub fn check_cp_interaction(h: &Operator, sym: &SymmetryMap) -> Result<SymmetryCheck> {
    Ok(compare(h.entries(), &sym.conjugate(h.entries())?))
}

/// `h_qs = h_{bar s, bar q}`; combined with a passing CP check this is
/// equivalent to T symmetry, so failing it means an apparent CPT violation.
pub fn check_cpt_interaction(h: &Operator, sym: &SymmetryMap) -> Result<SymmetryCheck> {
    Ok(compare(h.entries(), &sym.conjugate_transpose_order(h.entries())?))
}

/// `H_kf = H_{bar k, bar f}` over all pairs.
pub fn check_cp_system(hamiltonian: &Operator, sym: &SymmetryMap) -> Result<SymmetryCheck> {
    check_cp_interaction(hamiltonian, sym)
}

/// `H_kf = H_{bar f, bar k}` over all pairs.
pub fn check_cpt_system(hamiltonian: &Operator, sym: &SymmetryMap) -> Result<SymmetryCheck> {
    check_cpt_interaction(hamiltonian, sym)
}

/// Antisymmetric part `h - h^T` of an interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct TViolation {
    pub delta: CMatrix,
    pub violating: bool,
    pub max_abs: f64,
    /// Largest real part of `delta`; zero up to roundoff when `h` is Hermitian.
    pub max_real: f64,
}

pub fn check_t_violation(h: &Operator) -> TViolation {
    let delta = h.entries() - h.entries().transpose();
    let max_abs = delta.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let max_real = delta.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    TViolation {
        violating: max_abs > SYMMETRY_TOL * h.max_abs().max(1.0),
        delta,
        max_abs,
        max_real,
    }
}

/// Which of the two analysed cases a system falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemCase {
    CpInvariant,
    CpViolatingCptInvariant,
    Unclassified,
}

impl SystemCase {
    pub fn label(&self) -> &'static str {
        match self {
            SystemCase::CpInvariant => "CP-invariant",
            SystemCase::CpViolatingCptInvariant => "CP-violating, CPT-invariant",
            SystemCase::Unclassified => "unclassified",
        }
    }
}

/// What the case analysis predicts for `dLambda = Lambda_KK - Lambda_KbarKbar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    /// `dLambda = 0` and `Lambda_{K Kbar} = Lambda_{Kbar K}`.
    NoApparentViolation,
    /// `dLambda` given by the closed-form sum over final states.
    ClosedForm,
    /// No prediction: the system or the interaction is outside both cases.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub case: SystemCase,
    pub prediction: Prediction,
    pub cp_system: SymmetryCheck,
    pub cpt_system: SymmetryCheck,
    /// Per-bath-state CP check of the interaction.
    pub cp_interaction: Vec<SymmetryCheck>,
    /// Per-bath-state T-violation flag.
    pub t_violating: Vec<bool>,
    /// Bath states with a CP-symmetric, T-violating interaction.
    pub apparent_cpt_violation: Vec<usize>,
}

impl Classification {
    pub fn interaction_cp(&self) -> bool {
        self.cp_interaction.iter().all(|c| c.passed)
    }
}

/// Classifies the system Hamiltonian `H_0 + H_1` against the interaction
/// blocks. The interaction must be CP-symmetric for any prediction.
pub fn classify(system: &Operator, interactions: &[Operator], sym: &SymmetryMap) -> Result<Classification> {
    let cp_system = check_cp_system(system, sym)?;
    let cpt_system = check_cpt_system(system, sym)?;
    let cp_interaction = interactions
        .iter()
        .map(|h| check_cp_interaction(h, sym))
        .collect::<Result<Vec<_>>>()?;
    let t_violating: Vec<bool> = interactions.iter().map(|h| check_t_violation(h).violating).collect();
    let apparent_cpt_violation = (0..interactions.len())
        .filter(|&b| cp_interaction[b].passed && t_violating[b])
        .collect();

    let case = if cp_system.passed {
        SystemCase::CpInvariant
    } else if cpt_system.passed {
        SystemCase::CpViolatingCptInvariant
    } else {
        SystemCase::Unclassified
    };
    let interaction_cp = cp_interaction.iter().all(|c| c.passed);
    let prediction = match case {
        _ if !interaction_cp => Prediction::None,
        SystemCase::CpInvariant => Prediction::NoApparentViolation,
        SystemCase::CpViolatingCptInvariant => Prediction::ClosedForm,
        SystemCase::Unclassified => Prediction::None,
    };
    Ok(Classification {
        case,
        prediction,
        cp_system,
        cpt_system,
        cp_interaction,
        t_violating,
        apparent_cpt_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::C64;
    use crate::supersystem::random_hermitian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// K = 0, Kbar = 1, f = 2, fbar = 3.
    fn kaon_map() -> SymmetryMap {
        SymmetryMap::for_states(vec![1, 0, 3, 2], &[0.0, 0.0, 0.5, 0.5], &[0, 1]).unwrap()
    }

    fn kaon_h1(a: C64, b: C64) -> Operator {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 2)] = a;
        m[(1, 3)] = a.conj();
        m[(1, 2)] = b;
        m[(0, 3)] = b.conj();
        let m = &m + m.adjoint();
        Operator::hermitian(m).unwrap()
    }

    #[test]
    fn map_invariants() {
        assert!(SymmetryMap::new(vec![1, 2, 0]).is_err());
        assert!(SymmetryMap::for_states(vec![2, 1, 0], &[0.0, 0.0, 0.0], &[0, 1]).is_err());
        assert!(SymmetryMap::for_states(vec![1, 0], &[0.0, 0.1], &[0, 1]).is_err());
        let m = SymmetryMap::from_pairs(5, &[(0, 1), (3, 4)]).unwrap();
        assert_eq!(m.as_slice(), &[1, 0, 2, 4, 3]);
        assert!(SymmetryMap::from_pairs(3, &[(0, 1), (1, 2)]).is_err());
        for s in 0..5 {
            assert_eq!(m.bar(m.bar(s)), s);
        }
    }

    #[test]
    fn cp_interaction_cases() {
        let sym = kaon_map();
        let scalar = Operator::identity(4).scaled(0.3);
        assert!(check_cp_interaction(&scalar, &sym).unwrap().passed);

        let mut m = CMatrix::zeros(4, 4);
        m[(0, 2)] = c(0.1, 0.0);
        m[(2, 0)] = c(0.1, 0.0);
        let h = Operator::hermitian(m).unwrap();
        let check = check_cp_interaction(&h, &sym).unwrap();
        assert!(!check.passed);
        assert!((check.residual - 0.1).abs() < 1e-15);
        assert!(matches!(check.worst, Some((0, 2)) | Some((1, 3)) | Some((2, 0)) | Some((3, 1))));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let h = sym.cp_symmetrize(&random_hermitian(&mut rng, 4, 1.0)).unwrap();
            assert!(h.hermitian_hint());
            assert!(check_cp_interaction(&h, &sym).unwrap().passed);
            let t = check_t_violation(&h);
            if t.violating {
                assert!(!check_cpt_interaction(&h, &sym).unwrap().passed);
            }
        }
    }

    #[test]
    fn t_violation_arithmetic() {
        let real = Operator::from_rows(&[vec![[1.0, 0.0], [0.4, 0.0]], vec![[0.4, 0.0], [2.0, 0.0]]], true).unwrap();
        let t = check_t_violation(&real);
        assert!(!t.violating && t.max_abs == 0.0);

        let h = Operator::from_rows(&[vec![[0.0, 0.0], [0.0, 1.0]], vec![[0.0, -1.0], [0.0, 0.0]]], true).unwrap();
        let t = check_t_violation(&h);
        assert!(t.violating);
        assert_eq!(t.delta[(0, 1)], c(0.0, 2.0));
        assert_eq!(t.delta[(1, 0)], c(0.0, -2.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert!(check_t_violation(&random_hermitian(&mut rng, 5, 1.0)).max_real <= 1e-14);
        }
    }

    #[test]
    fn kaon_toy_is_cpt_but_not_cp() {
        let sym = kaon_map();
        let g = 0.01;
        let h1 = kaon_h1(c(g, g * 0.3), c(0.5 * g, -0.2 * g));
        // Hand check of one CPT pair: H_{K f} against H_{fbar Kbar}.
        assert_eq!(h1.get(0, 2), h1.get(3, 1));
        assert!(check_cpt_system(&h1, &sym).unwrap().passed);
        assert!(!check_cp_system(&h1, &sym).unwrap().passed);

        let mut bumped = h1.entries().clone();
        bumped[(0, 2)] += c(1e-6, 0.0);
        let check = check_cpt_system(&Operator::general(bumped).unwrap(), &sym).unwrap();
        assert!(!check.passed);
        assert!((check.residual - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn real_cp_symmetric_system_passes_both() {
        let sym = kaon_map();
        let h1 = kaon_h1(c(0.02, 0.0), c(0.01, 0.0));
        assert!(check_cp_system(&h1, &sym).unwrap().passed);
        assert!(check_cpt_system(&h1, &sym).unwrap().passed);
    }

    #[test]
    fn classification_cases() {
        let sym = kaon_map();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = vec![sym.cp_symmetrize(&random_hermitian(&mut rng, 4, 0.1)).unwrap()];

        let cp = classify(&kaon_h1(c(0.02, 0.0), c(0.01, 0.0)), &h, &sym).unwrap();
        assert_eq!(cp.case, SystemCase::CpInvariant);
        assert_eq!(cp.prediction, Prediction::NoApparentViolation);
        assert_eq!(cp.apparent_cpt_violation, vec![0]);

        let kaon = classify(&kaon_h1(c(0.02, 0.01), c(0.01, 0.0)), &h, &sym).unwrap();
        assert_eq!(kaon.case, SystemCase::CpViolatingCptInvariant);
        assert_eq!(kaon.prediction, Prediction::ClosedForm);

        let zero = classify(&Operator::zeros(4), &h, &sym).unwrap();
        assert!(zero.cp_system.passed && zero.cpt_system.passed);

        let broken = random_hermitian(&mut rng, 4, 1.0);
        let broken = classify(&broken, &h, &sym).unwrap();
        assert_eq!(broken.case, SystemCase::Unclassified);
        assert_eq!(broken.prediction, Prediction::None);
    }
}
