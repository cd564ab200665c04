//! Dense complex linear algebra and exact evolution primitives.
//!
//! Composite system-bath spaces use one flat index convention everywhere:
//! `|s>|beta>` lives at `s * dim_bath + beta` (system index varies slowest),
//! which is also the ordering produced by [`tensor`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative tolerance used for every Hermiticity check.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted for a density matrix.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;
/// Absolute tolerance on state norms and density-matrix traces.
pub const NORM_TOL: f64 = 1e-12;
/// Default cap on the number of matrix entries a tensor product may produce.
pub const DEFAULT_ENTRY_CAP: usize = 1 << 20;
/// Eigenvector condition number above which non-Hermitian evolution falls
/// back to scaling and squaring.
pub const CONDITION_LIMIT: f64 = 1e8;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

/// `max |m_ij - conj(m_ji)|`.
pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMatrix) -> bool {
    m.is_square() && hermiticity_residual(m) <= HERMITIAN_TOL * max_abs(m)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Dense square operator with a declared Hermiticity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    entries: CMatrix,
    hermitian: bool,
}

impl Operator {
    /// Wraps a square matrix. When `hermitian_hint` is set the matrix must be
    /// Hermitian to within [`HERMITIAN_TOL`] relative to its largest entry.
    pub fn new(entries: CMatrix, hermitian_hint: bool) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Size(format!(
                "operator must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if hermitian_hint {
            let residual = hermiticity_residual(&entries);
            if residual > HERMITIAN_TOL * max_abs(&entries) {
                return Err(Error::Contract(format!(
                    "operator declared Hermitian has residual {residual:.3e}"
                )));
            }
        }
        Ok(Self {
            entries,
            hermitian: hermitian_hint,
        })
    }

    pub fn hermitian(entries: CMatrix) -> Result<Self> {
        Self::new(entries, true)
    }

    pub fn general(entries: CMatrix) -> Result<Self> {
        Self::new(entries, false)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: CMatrix::identity(dim, dim),
            hermitian: true,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: CMatrix::zeros(dim, dim),
            hermitian: true,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = CVector::from_iterator(values.len(), values.iter().map(|&v| c(v, 0.0)));
        Self {
            entries: CMatrix::from_diagonal(&d),
            hermitian: true,
        }
    }

    /// Builds a matrix from row-major `[re, im]` pairs.
    pub fn from_rows(rows: &[Vec<[f64; 2]>], hermitian_hint: bool) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Size("operator rows must form a square matrix".into()));
        }
        let m = CMatrix::from_fn(n, n, |i, j| c(rows[i][j][0], rows[i][j][1]));
        Self::new(m, hermitian_hint)
    }

    pub fn to_rows(&self) -> Vec<Vec<[f64; 2]>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().map(|z| [z.re, z.im]).collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn hermitian_hint(&self) -> bool {
        self.hermitian
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn add(&self, other: &Operator) -> Result<Operator> {
        if self.dim() != other.dim() {
            return Err(Error::Size(format!(
                "cannot add operators of dims {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Operator {
            entries: &self.entries + &other.entries,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn scaled(&self, factor: f64) -> Operator {
        Operator {
            entries: &self.entries * c(factor, 0.0),
            hermitian: self.hermitian,
        }
    }

    pub fn commutator(&self, other: &Operator) -> CMatrix {
        commutator(&self.entries, &other.entries)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }
}

/// Kronecker product `a ⊗ b` with the default entry cap.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    tensor_with_cap(a, b, DEFAULT_ENTRY_CAP)
}

pub fn tensor_with_cap(a: &Operator, b: &Operator, entry_cap: usize) -> Result<Operator> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .ok_or_else(|| Error::Size("tensor dimension overflows usize".into()))?;
    let entries = dim
        .checked_mul(dim)
        .ok_or_else(|| Error::Size("tensor entry count overflows usize".into()))?;
    if entries > entry_cap {
        return Err(Error::Size(format!(
            "tensor product of dims {}x{} needs {entries} entries, cap is {entry_cap}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(Operator {
        entries: a.entries.kronecker(&b.entries),
        hermitian: a.hermitian && b.hermitian,
    })
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: CVector,
}

impl PureState {
    /// Normalizes `amplitudes`; rejects empty, zero or non-finite vectors.
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Size("state vector is empty".into()));
        }
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Parameter(format!("cannot normalize state with norm {norm}")));
        }
        Ok(Self {
            amplitudes: amplitudes / c(norm, 0.0),
        })
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(CVector::from_column_slice(amplitudes))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        crate::error::check_index("basis state", index, dim)?;
        let mut v = CVector::zeros(dim);
        v[index] = c(1.0, 0.0);
        Ok(Self { amplitudes: v })
    }

    /// Wraps a vector that is already unit norm up to roundoff (propagated states).
    pub(crate) fn from_propagated(amplitudes: CVector) -> Self {
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &PureState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// `|self> ⊗ |other>` in the system-major convention.
    pub fn tensor(&self, other: &PureState) -> PureState {
        PureState {
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        }
    }

    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Validated density matrix: Hermitian, unit trace, no negative eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::Size("density matrix must be square and non-empty".into()));
        }
        let residual = hermiticity_residual(&entries);
        if residual > HERMITIAN_TOL * max_abs(&entries).max(1.0) {
            return Err(Error::Contract(format!(
                "density matrix not Hermitian (residual {residual:.3e})"
            )));
        }
        let trace = entries.trace();
        if (trace - c(1.0, 0.0)).norm() > NORM_TOL {
            return Err(Error::Contract(format!("density matrix trace is {trace}")));
        }
        let lowest = hermitian_eigenvalues(&entries)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lowest < EIGENVALUE_FLOOR {
            return Err(Error::Contract(format!(
                "density matrix has eigenvalue {lowest:.3e}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_pure(state: &PureState) -> Self {
        Self {
            entries: state.projector(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    /// `tr(rho Q)`.
    pub fn expectation(&self, observable: &Operator) -> Result<C64> {
        if observable.dim() != self.dim() {
            return Err(Error::Size("observable dimension mismatch".into()));
        }
        Ok((&self.entries * observable.entries()).trace())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.entries)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        max_abs_diff(&self.entries, &other.entries)
    }
}

fn symmetrized(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    SymmetricEigen::new(symmetrized(m)).eigenvalues.iter().cloned().collect()
}

/// Cached eigendecomposition of a Hermitian operator, so repeated
/// evolutions cost one matrix-vector product pair each.
#[derive(Debug, Clone)]
pub struct HermitianPropagator {
    eigenvalues: DVector<f64>,
    eigenvectors: CMatrix,
}

impl HermitianPropagator {
    pub fn new(hamiltonian: &Operator) -> Result<Self> {
        if !hamiltonian.hermitian_hint() {
            return Err(Error::Contract(
                "unitary evolution requires an operator declared Hermitian".into(),
            ));
        }
        let eig = SymmetricEigen::new(symmetrized(hamiltonian.entries()));
        Ok(Self {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `exp(-iHt) v`.
    pub fn apply(&self, v: &CVector, t: f64) -> Result<CVector> {
        if v.len() != self.dim() {
            return Err(Error::Size(format!(
                "state dim {} does not match Hamiltonian dim {}",
                v.len(),
                self.dim()
            )));
        }
        let mut coeffs = self.eigenvectors.ad_mul(v);
        for (k, a) in coeffs.iter_mut().enumerate() {
            *a *= C64::from_polar(1.0, -self.eigenvalues[k] * t);
        }
        Ok(&self.eigenvectors * coeffs)
    }

    pub fn evolve(&self, psi0: &PureState, t: f64) -> Result<PureState> {
        Ok(PureState::from_propagated(self.apply(psi0.amplitudes(), t)?))
    }

    /// `exp(-iHt)` as a matrix.
    pub fn unitary(&self, t: f64) -> CMatrix {
        let phases = CVector::from_iterator(
            self.dim(),
            self.eigenvalues.iter().map(|&e| C64::from_polar(1.0, -e * t)),
        );
        &self.eigenvectors * CMatrix::from_diagonal(&phases) * self.eigenvectors.adjoint()
    }
}

/// `exp(-iHt) psi0` by eigendecomposition of a Hermitian `H` (ħ = 1).
pub fn evolve(hamiltonian: &Operator, psi0: &PureState, t: f64) -> Result<PureState> {
    HermitianPropagator::new(hamiltonian)?.evolve(psi0, t)
}

/// Result of a non-Hermitian propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct NonHermitianEvolution {
    pub amplitudes: CVector,
    /// Set when the eigenvector basis was too ill-conditioned and the matrix
    /// exponential was taken by scaling and squaring instead.
    pub used_fallback: bool,
    pub condition: f64,
}

#[derive(Debug, Clone)]
enum NonHermitianRoute {
    Diagonal {
        eigenvalues: CVector,
        vectors: CMatrix,
        inverse: CMatrix,
    },
    Series {
        generator: CMatrix,
    },
}

/// Propagator for `i d/dt a = L a` with a general (non-normal) `L`.
#[derive(Debug, Clone)]
pub struct NonHermitianPropagator {
    route: NonHermitianRoute,
    condition: f64,
    dim: usize,
}

impl NonHermitianPropagator {
    pub fn new(generator: &Operator) -> Result<Self> {
        let dim = generator.dim();
        let m = generator.entries().clone();
        let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
        let (q, t) = schur.unpack();
        let y = triangular_eigenvectors(&t);
        let mut vectors = q * y;
        for mut col in vectors.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= c(n, 0.0);
            }
        }
        let sv = vectors.clone().singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let inverse = if condition <= CONDITION_LIMIT {
            vectors.clone().try_inverse()
        } else {
            None
        };
        let route = match inverse {
            Some(inverse) => NonHermitianRoute::Diagonal {
                eigenvalues: t.diagonal(),
                vectors,
                inverse,
            },
            None => NonHermitianRoute::Series { generator: m },
        };
        Ok(Self {
            route,
            condition,
            dim,
        })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn uses_fallback(&self) -> bool {
        matches!(self.route, NonHermitianRoute::Series { .. })
    }

    /// `exp(-iLt) a0` for `t >= 0`.
    pub fn apply(&self, a0: &CVector, t: f64) -> Result<NonHermitianEvolution> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Parameter(format!(
                "non-Hermitian evolution runs forward only, got t = {t}"
            )));
        }
        if a0.len() != self.dim {
            return Err(Error::Size("amplitude vector dimension mismatch".into()));
        }
        let amplitudes = match &self.route {
            NonHermitianRoute::Diagonal {
                eigenvalues,
                vectors,
                inverse,
            } => {
                let mut coeffs = inverse * a0;
                for (k, a) in coeffs.iter_mut().enumerate() {
                    *a *= (-I * eigenvalues[k] * t).exp();
                }
                vectors * coeffs
            }
            NonHermitianRoute::Series { generator } => {
                expm(&(generator * (-I * t))) * a0
            }
        };
        Ok(NonHermitianEvolution {
            amplitudes,
            used_fallback: self.uses_fallback(),
            condition: self.condition,
        })
    }
}

/// `exp(-iLt) a0` for a general square `L` and `t >= 0`.
pub fn evolve_nonhermitian(
    generator: &Operator,
    a0: &CVector,
    t: f64,
) -> Result<NonHermitianEvolution> {
    NonHermitianPropagator::new(generator)?.apply(a0, t)
}

// Eigenvectors of an upper-triangular matrix by back substitution. Tiny
// pivots are lifted to `eps * |T|` so degenerate spectra stay finite; the
// condition check downstream catches the genuinely defective cases.
fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let scale = max_abs(t).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * scale;
    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = c(1.0, 0.0);
        let lambda = t[(k, k)];
        for i in (0..k).rev() {
            let mut acc = c(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            if acc.norm() == 0.0 {
                continue;
            }
            let mut pivot = t[(i, i)] - lambda;
            if pivot.norm() < small {
                pivot = c(small, 0.0);
            }
            y[(i, k)] = -acc / pivot;
        }
    }
    y
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * c(0.5f64.powi(squarings), 0.0);
    let mut result = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled * c(1.0 / k as f64, 0.0);
        result += &term;
        if max_abs(&term) < 1e-18 * max_abs(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `sum_beta <beta| rho |beta>` for a system-major composite density matrix.
pub fn partial_trace_bath(
    rho: &DensityMatrix,
    dim_system: usize,
    dim_bath: usize,
) -> Result<DensityMatrix> {
    let reduced = partial_trace_bath_entries(rho.entries(), dim_system, dim_bath)?;
    DensityMatrix::new(reduced)
}

/// Partial trace over the bath of an arbitrary composite matrix.
pub fn partial_trace_bath_entries(
    m: &CMatrix,
    dim_system: usize,
    dim_bath: usize,
) -> Result<CMatrix> {
    if dim_system == 0 || dim_bath == 0 || m.nrows() != dim_system * dim_bath || !m.is_square() {
        return Err(Error::Size(format!(
            "matrix of dim {} is not a {dim_system}x{dim_bath} composite",
            m.nrows()
        )));
    }
    Ok(CMatrix::from_fn(dim_system, dim_system, |s, q| {
        (0..dim_bath)
            .map(|b| m[(s * dim_bath + b, q * dim_bath + b)])
            .sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rabi(g: f64) -> Operator {
        Operator::from_rows(&[vec![[0.0, 0.0], [g, 0.0]], vec![[g, 0.0], [0.0, 0.0]]], true)
            .unwrap()
    }

    // Classical RK4 on i dpsi/dt = H psi; independent of the eigen route.
    fn rk4(h: &CMatrix, psi: &CVector, t: f64, steps: usize) -> CVector {
        let dt = t / steps as f64;
        let f = |v: &CVector| -(h * v) * I;
        let mut y = psi.clone();
        for _ in 0..steps {
            let k1 = f(&y);
            let k2 = f(&(&y + &k1 * c(dt / 2.0, 0.0)));
            let k3 = f(&(&y + &k2 * c(dt / 2.0, 0.0)));
            let k4 = f(&(&y + &k3 * c(dt, 0.0)));
            y += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        }
        y
    }

    #[test]
    fn tensor_identity_and_diagonal_blocks() {
        let i6 = tensor(&Operator::identity(2), &Operator::identity(3)).unwrap();
        assert_eq!(i6.entries(), Operator::identity(6).entries());
        let d = tensor(&Operator::diagonal(&[1.5, -2.0]), &Operator::identity(2)).unwrap();
        assert_eq!(d.entries(), Operator::diagonal(&[1.5, 1.5, -2.0, -2.0]).entries());
    }

    #[test]
    fn tensor_respects_entry_cap() {
        let a = Operator::identity(40);
        assert!(matches!(
            tensor_with_cap(&a, &a, 1000),
            Err(Error::Size(_))
        ));
        let big = Operator::identity(1025);
        assert!(tensor(&big, &Operator::identity(1)).is_err());
    }

    #[test]
    fn separable_hamiltonian_commutes_with_bath_term() {
        let hs = Operator::from_rows(
            &[vec![[0.3, 0.0], [0.1, 0.2]], vec![[0.1, -0.2], [-0.4, 0.0]]],
            true,
        )
        .unwrap();
        let hb = Operator::diagonal(&[0.0, 1.0, 2.5]);
        let full = tensor(&hs, &Operator::identity(3))
            .unwrap()
            .add(&tensor(&Operator::identity(2), &hb).unwrap())
            .unwrap();
        let bath = tensor(&Operator::identity(2), &hb).unwrap();
        assert!(max_abs(&full.commutator(&bath)) < 1e-14);
    }

    #[test]
    fn evolve_identity_at_zero_and_eigenstate_phase() {
        let h = Operator::diagonal(&[0.5, -1.25, 3.0]);
        let psi = PureState::from_slice(&[c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 1.0)]).unwrap();
        let same = evolve(&h, &psi, 0.0).unwrap();
        assert!(max_abs_diff(
            &CMatrix::from_column_slice(3, 1, same.amplitudes().as_slice()),
            &CMatrix::from_column_slice(3, 1, psi.amplitudes().as_slice())
        ) < 1e-15);

        let e1 = PureState::basis(3, 1).unwrap();
        let out = evolve(&h, &e1, 2.0).unwrap();
        let expected = C64::from_polar(1.0, 1.25 * 2.0);
        assert_abs_diff_eq!(out.amplitudes()[1].re, expected.re, epsilon = 1e-14);
        assert_abs_diff_eq!(out.amplitudes()[1].im, expected.im, epsilon = 1e-14);
    }

    #[test]
    fn rabi_survival_matches_closed_form_and_rk4() {
        let g = 0.7;
        let h = rabi(g);
        let psi = PureState::basis(2, 0).unwrap();
        for &t in &[0.1, 0.9, 2.3, 4.0] {
            let out = evolve(&h, &psi, t).unwrap();
            let p = psi.inner(&out).norm_sqr();
            assert_abs_diff_eq!(p, (g * t).cos().powi(2), epsilon = 1e-12);
            let reference = rk4(h.entries(), psi.amplitudes(), t, 4000);
            let p_rk4 = psi.amplitudes().dotc(&reference).norm_sqr();
            assert_abs_diff_eq!(p, p_rk4, epsilon = 1e-10);
        }
    }

    #[test]
    fn evolve_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let op = Operator::general(m.clone()).unwrap();
        assert!(matches!(
            evolve(&op, &PureState::basis(2, 0).unwrap(), 1.0),
            Err(Error::Contract(_))
        ));
        assert!(Operator::hermitian(m).is_err());
    }

    #[test]
    fn nonhermitian_pure_decay_and_unitary_limit() {
        let gamma = 0.3;
        let l = Operator::general(CMatrix::from_element(1, 1, c(0.0, -gamma / 2.0))).unwrap();
        let a0 = CVector::from_element(1, c(1.0, 0.0));
        for &t in &[0.0, 1.0, 7.5] {
            let out = evolve_nonhermitian(&l, &a0, t).unwrap();
            assert_abs_diff_eq!(out.amplitudes[0].re, (-gamma * t / 2.0).exp(), epsilon = 1e-14);
            assert!(!out.used_fallback);
        }

        let h = rabi(0.4);
        let a0 = CVector::from_column_slice(&[c(0.6, 0.0), c(0.0, 0.8)]);
        let out = evolve_nonhermitian(&h, &a0, 3.3).unwrap();
        assert_abs_diff_eq!(out.amplitudes.norm(), 1.0, epsilon = 1e-12);
        assert!(evolve_nonhermitian(&h, &a0, -1.0).is_err());
    }

    #[test]
    fn nonhermitian_defective_matrix_uses_series_fallback() {
        // Jordan block: eigenvectors coincide.
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0, -0.1), c(1.0, 0.0), c(0.0, 0.0), c(0.0, -0.1)]);
        let l = Operator::general(m.clone()).unwrap();
        let a0 = CVector::from_column_slice(&[c(0.0, 0.0), c(1.0, 0.0)]);
        let t = 2.0;
        let out = evolve_nonhermitian(&l, &a0, t).unwrap();
        assert!(out.used_fallback);
        // exp(-i t (lambda I + N)) = e^{-i lambda t} (I - i t N)
        let phase = (-I * c(0.0, -0.1) * t).exp();
        let expected = [phase * (-I * t), phase];
        assert_abs_diff_eq!((out.amplitudes[0] - expected[0]).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((out.amplitudes[1] - expected[1]).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_trace_of_product_and_bell_states() {
        let rho_s = CMatrix::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.3, 0.0)]);
        let rho_b = CMatrix::from_diagonal(&CVector::from_column_slice(&[
            c(0.5, 0.0),
            c(0.25, 0.0),
            c(0.25, 0.0),
        ]));
        let rho = DensityMatrix::new(rho_s.kronecker(&rho_b)).unwrap();
        let reduced = partial_trace_bath(&rho, 2, 3).unwrap();
        assert!(max_abs_diff(reduced.entries(), &rho_s) < 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = PureState::from_slice(&[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s, 0.0)]).unwrap();
        let reduced = partial_trace_bath(&DensityMatrix::from_pure(&bell), 2, 2).unwrap();
        let half = CMatrix::identity(2, 2) * c(0.5, 0.0);
        assert!(max_abs_diff(reduced.entries(), &half) < 1e-15);
        assert!(partial_trace_bath(&DensityMatrix::from_pure(&bell), 3, 2).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::identity(2, 2)).is_err());
        let neg = CMatrix::from_diagonal(&CVector::from_column_slice(&[c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(DensityMatrix::new(neg).is_err());
        let skew = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)]);
        assert!(DensityMatrix::new(skew).is_err());
    }

    #[test]
    fn expm_matches_diagonal_exponential() {
        let d = CMatrix::from_diagonal(&CVector::from_column_slice(&[c(0.3, 1.0), c(-2.0, 0.5)]));
        let e = expm(&(d.clone() * c(3.0, 0.0)));
        for k in 0..2 {
            let expected = (d[(k, k)] * 3.0).exp();
            assert!((e[(k, k)] - expected).norm() < 1e-12 * expected.norm());
        }
    }
}
