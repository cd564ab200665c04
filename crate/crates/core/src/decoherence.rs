//! Decoherence under an interaction that is diagonal in the system energy
//! basis and therefore commutes with the system Hamiltonian.
//!
//! For an initial state `(|s> + |q>)/sqrt(2)` and a thermal bath the reduced
//! off-diagonal entry is `A_sq(t) e^{-i(E_s - E_q)t} / 2`, where
//! `A_sq(t) = sum_beta p_beta exp(-i(h_s^beta - h_q^beta) t)`.

use std::io::{self, Write};

use crate::error::{check_index, Error, Result};
use crate::parallel::map_indexed;
use crate::quantum_core::{c, Operator, C64};
use crate::supersystem::{boltzmann, boltzmann_weights, CouplingModel, SupersystemSpec};

const DIAGONAL_TOL: f64 = 1e-14;
const COMMUTATOR_TOL: f64 = 1e-12;

/// Level at which a trajectory counts as having returned to its start.
pub const RETURN_LEVEL: f64 = 0.99;

/// A supersystem whose system Hamiltonian and interaction blocks are all
/// diagonal in one basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalInteractionSpec {
    base: SupersystemSpec,
    system_energies: Vec<f64>,
    /// `couplings[beta][s] = h_s^(beta)`.
    couplings: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiagonalInteractionSpec {
    /// Accepts a general spec and checks that it is of the diagonal form.
    pub fn from_supersystem(base: SupersystemSpec) -> Result<Self> {
        let hs = base.system_hamiltonian();
        let scale = hs.max_abs().max(1.0);
        let n = hs.dim();
        for i in 0..n {
            for j in 0..n {
                if i != j && hs.get(i, j).norm() > DIAGONAL_TOL * scale {
                    return Err(Error::Contract(format!(
                        "system Hamiltonian is not diagonal at ({i}, {j})"
                    )));
                }
            }
        }
        let mut couplings = Vec::with_capacity(base.dim_bath());
        for (beta, h) in base.interactions().iter().enumerate() {
            let hscale = h.max_abs().max(1.0);
            for i in 0..n {
                for j in 0..n {
                    if i != j && h.get(i, j).norm() > DIAGONAL_TOL * hscale {
                        return Err(Error::Contract(format!(
                            "interaction block {beta} is not diagonal at ({i}, {j})"
                        )));
                    }
                }
            }
            let comm = h.commutator(hs);
            if comm.iter().map(|z| z.norm()).fold(0.0, f64::max) > COMMUTATOR_TOL * scale * hscale {
                return Err(Error::Contract(format!(
                    "interaction block {beta} does not commute with the system Hamiltonian"
                )));
            }
            couplings.push((0..n).map(|s| h.get(s, s).re).collect());
        }
        let system_energies = (0..n).map(|s| hs.get(s, s).re).collect();
        let weights = boltzmann_weights(&base)?;
        Ok(Self {
            base,
            system_energies,
            couplings,
            weights,
        })
    }

    /// Builds the spec from level energies and per-bath-state couplings
    /// indexed `[beta][s]`.
    pub fn from_couplings(
        system_energies: Vec<f64>,
        bath_energies: Vec<f64>,
        kt: f64,
        couplings: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = system_energies.len();
        if let Some((beta, row)) = couplings.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Size(format!(
                "coupling row {beta} has {} entries for {n} levels",
                row.len()
            )));
        }
        let blocks = couplings.iter().map(|h| Operator::diagonal(h)).collect();
        let base = SupersystemSpec::new(Operator::diagonal(&system_energies), bath_energies, kt, blocks)?;
        Self::from_supersystem(base)
    }

    /// Couplings drawn from a diagonal [`CouplingModel`] with uniform bath
    /// populations on a degenerate bath.
    pub fn from_model(
        system_energies: Vec<f64>,
        dim_bath: usize,
        model: &CouplingModel,
        seed: u64,
    ) -> Result<Self> {
        if dim_bath == 0 {
            return Err(Error::Parameter("bath needs at least one state".into()));
        }
        let couplings = model.diagonal_couplings(system_energies.len(), dim_bath, seed)?;
        Self::from_couplings(system_energies, vec![0.0; dim_bath], f64::INFINITY, couplings)
    }

    /// Replaces the bath populations with Boltzmann weights over `bath_energies`.
    pub fn with_thermal_bath(self, bath_energies: Vec<f64>, kt: f64) -> Result<Self> {
        boltzmann(&bath_energies, kt)?;
        Self::from_couplings(self.system_energies, bath_energies, kt, self.couplings)
    }

    pub fn base(&self) -> &SupersystemSpec {
        &self.base
    }

    pub fn system_energies(&self) -> &[f64] {
        &self.system_energies
    }

    pub fn couplings(&self) -> &[Vec<f64>] {
        &self.couplings
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim_system(&self) -> usize {
        self.system_energies.len()
    }

    fn check_levels(&self, s: usize, q: usize) -> Result<()> {
        check_index("system level", s, self.dim_system())?;
        check_index("system level", q, self.dim_system())
    }
}

/// `A_sq(t)`; exactly 1 when `s == q`.
pub fn decoherence_factor(spec: &DiagonalInteractionSpec, s: usize, q: usize, t: f64) -> Result<C64> {
    spec.check_levels(s, q)?;
    Ok(factor_unchecked(spec, s, q, t))
}

fn factor_unchecked(spec: &DiagonalInteractionSpec, s: usize, q: usize, t: f64) -> C64 {
    if s == q {
        return c(1.0, 0.0);
    }
    spec.weights
        .iter()
        .zip(&spec.couplings)
        .map(|(&p, h)| c(0.0, -(h[s] - h[q]) * t).exp() * p)
        .sum()
}

/// `(rho_S)_sq(t)` for the initial system state `(|s> + |q>)/sqrt(2)`.
pub fn reduced_density_offdiagonal(
    spec: &DiagonalInteractionSpec,
    s: usize,
    q: usize,
    t: f64,
) -> Result<C64> {
    let a = decoherence_factor(spec, s, q, t)?;
    let gap = spec.system_energies[s] - spec.system_energies[q];
    Ok(a * c(0.0, -gap * t).exp() * 0.5)
}

/// One sample of a decoherence trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub factor: C64,
}

impl TrajectoryPoint {
    pub fn magnitude(&self) -> f64 {
        self.factor.norm()
    }
}

/// Sampled `A_sq` trajectory with recurrence statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceScan {
    pub points: Vec<TrajectoryPoint>,
    pub burn_in: f64,
    /// Largest `|A_sq|` at sample times strictly after the burn-in.
    pub max_after_burn_in: Option<TrajectoryPoint>,
    /// First local maximum above [`RETURN_LEVEL`] after `|A_sq|` has
    /// dropped below it.
    pub first_return: Option<TrajectoryPoint>,
}

impl RecurrenceScan {
    pub fn time_average_magnitude(&self) -> f64 {
        self.points.iter().map(TrajectoryPoint::magnitude).sum::<f64>() / self.points.len() as f64
    }

    /// Writes `t,re_A,im_A,abs_A` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,re_A,im_A,abs_A")?;
        for p in &self.points {
            writeln!(out, "{:e},{:e},{:e},{:e}", p.t, p.factor.re, p.factor.im, p.magnitude())?;
        }
        Ok(())
    }
}

/// Samples `A_sq` on `n_steps` equally spaced times over `[0, t_max]`.
/// `t_max = 0` yields the single sample at the origin.
pub fn recurrence_scan(
    spec: &DiagonalInteractionSpec,
    s: usize,
    q: usize,
    t_max: f64,
    n_steps: usize,
    burn_in: f64,
) -> Result<RecurrenceScan> {
    spec.check_levels(s, q)?;
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Parameter(format!("t_max must be finite and >= 0, got {t_max}")));
    }
    if !(burn_in >= 0.0) {
        return Err(Error::Parameter(format!("burn-in must be >= 0, got {burn_in}")));
    }
    let points = if t_max == 0.0 {
        vec![TrajectoryPoint { t: 0.0, factor: factor_unchecked(spec, s, q, 0.0) }]
    } else {
        if n_steps < 2 {
            return Err(Error::Parameter("recurrence scan needs at least 2 steps".into()));
        }
        let dt = t_max / (n_steps - 1) as f64;
        map_indexed(n_steps, |i| {
            let t = if i + 1 == n_steps { t_max } else { i as f64 * dt };
            TrajectoryPoint { t, factor: factor_unchecked(spec, s, q, t) }
        })
    };

    let max_after_burn_in = points
        .iter()
        .filter(|p| p.t > burn_in)
        .fold(None::<TrajectoryPoint>, |best, p| match best {
            Some(b) if b.magnitude() >= p.magnitude() => Some(b),
            _ => Some(*p),
        });

    let mut first_return = None;
    if let Some(drop) = points.iter().position(|p| p.magnitude() < RETURN_LEVEL) {
        for i in drop..points.len() {
            let m = points[i].magnitude();
            let left = points[i - 1].magnitude();
            let right = points.get(i + 1).map_or(f64::NEG_INFINITY, TrajectoryPoint::magnitude);
            if m > RETURN_LEVEL && m >= left && m >= right {
                first_return = Some(points[i]);
                break;
            }
        }
    }

    Ok(RecurrenceScan {
        points,
        burn_in,
        max_after_burn_in,
        first_return,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::{partial_trace_bath, CVector, PureState};
    use crate::supersystem::SupersystemPropagator;
    use std::f64::consts::PI;

    fn gaussian_spec(n_bath: usize, sigma: f64, seed: u64) -> DiagonalInteractionSpec {
        DiagonalInteractionSpec::from_model(
            vec![0.0, 1.0],
            n_bath,
            &CouplingModel::DiagonalGaussian { sigma },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn trivial_factors() {
        let spec = gaussian_spec(32, 1.0, 1);
        for &t in &[0.0, 0.7, 40.0] {
            assert_eq!(decoherence_factor(&spec, 1, 1, t).unwrap(), c(1.0, 0.0));
            let a = decoherence_factor(&spec, 0, 1, t).unwrap();
            let b = decoherence_factor(&spec, 1, 0, t).unwrap();
            assert!((a - b.conj()).norm() < 1e-15);
            assert!(a.norm() <= 1.0 + 1e-15);
        }
        let single = gaussian_spec(1, 1.0, 1);
        for &t in &[0.1, 3.0, 100.0] {
            assert!((decoherence_factor(&single, 0, 1, t).unwrap().norm() - 1.0).abs() < 1e-14);
        }
        let rho = reduced_density_offdiagonal(&spec, 0, 1, 0.0).unwrap();
        assert!((rho - c(0.5, 0.0)).norm() < 1e-15);
        assert!(decoherence_factor(&spec, 0, 2, 1.0).is_err());
    }

    #[test]
    fn analytic_entry_matches_exact_evolution() {
        let spec = DiagonalInteractionSpec::from_model(
            vec![0.0, 0.8],
            16,
            &CouplingModel::DiagonalUniform { half_width: 0.5 },
            4,
        )
        .unwrap()
        .with_thermal_bath((0..16).map(|b| 0.1 * b as f64).collect(), 0.6)
        .unwrap();
        let prop = SupersystemPropagator::new(spec.base()).unwrap();
        let psi = PureState::new(CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)])).unwrap();
        for &t in &[0.5, 3.3, 17.0] {
            let full = prop.composite_density(&psi, t).unwrap();
            let reduced = partial_trace_bath(&full, 2, 16).unwrap();
            let analytic = reduced_density_offdiagonal(&spec, 0, 1, t).unwrap();
            assert!((reduced.get(0, 1) - analytic).norm() < 1e-10);
            assert!((reduced.get(0, 0).re - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_bath_recurs_at_the_gap_period() {
        // Gap differences 0.3 and 1.1 give |A| = |cos(0.4 t)|, period 2 pi / 0.8.
        let spec = DiagonalInteractionSpec::from_couplings(
            vec![0.0, 1.0],
            vec![0.0, 0.0],
            f64::INFINITY,
            vec![vec![0.0, 0.3], vec![0.0, 1.1]],
        )
        .unwrap();
        let period = 2.0 * PI / 0.8;
        let t_max = 1.5 * period;
        let n = 3001;
        let scan = recurrence_scan(&spec, 0, 1, t_max, n, 1.0).unwrap();
        let step = t_max / (n - 1) as f64;
        let hit = scan.first_return.expect("recurrence found");
        assert!((hit.t - period).abs() <= step, "{} vs {period}", hit.t);
    }

    #[test]
    fn incommensurate_bath_does_not_recur() {
        let sigma = 1.0;
        let spec = gaussian_spec(512, sigma, 17);
        let scan = recurrence_scan(&spec, 0, 1, 1e3 / sigma, 20_001, 5.0 / sigma).unwrap();
        assert!(scan.max_after_burn_in.unwrap().magnitude() < 0.5);
        assert!(scan.first_return.is_none());
    }

    #[test]
    fn zero_length_scan() {
        let spec = gaussian_spec(8, 1.0, 0);
        let scan = recurrence_scan(&spec, 0, 1, 0.0, 1, 5.0).unwrap();
        assert_eq!(scan.points.len(), 1);
        assert_eq!(scan.points[0].factor, c(1.0, 0.0));
        assert!(scan.max_after_burn_in.is_none());
        assert!(recurrence_scan(&spec, 0, 1, 1.0, 1, 0.0).is_err());
    }

    #[test]
    fn long_time_average_is_small() {
        let n_bath = 256;
        let spec = gaussian_spec(n_bath, 1.0, 9);
        let scan = recurrence_scan(&spec, 0, 1, 2000.0, 40_001, 5.0).unwrap();
        let late: Vec<f64> = scan
            .points
            .iter()
            .filter(|p| p.t > 5.0)
            .map(|p| p.magnitude() / 2.0)
            .collect();
        let avg = late.iter().sum::<f64>() / late.len() as f64;
        assert!(avg <= 2.0 / (n_bath as f64).sqrt(), "avg {avg}");
    }

    #[test]
    fn csv_has_documented_header() {
        let spec = gaussian_spec(4, 1.0, 0);
        let scan = recurrence_scan(&spec, 0, 1, 1.0, 3, 0.0).unwrap();
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,re_A,im_A,abs_A"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn non_diagonal_interaction_is_rejected() {
        let hs = Operator::diagonal(&[0.0, 1.0]);
        let h = Operator::from_rows(&[vec![[0.0, 0.0], [0.1, 0.0]], vec![[0.1, 0.0], [0.0, 0.0]]], true).unwrap();
        let base = SupersystemSpec::new(hs, vec![0.0], 1.0, vec![h]).unwrap();
        assert!(matches!(
            DiagonalInteractionSpec::from_supersystem(base),
            Err(Error::Contract(_))
        ));
    }
}
