//! Random-phase bookkeeping for mixed states.
//!
//! A mixed state is written as a phase-tagged sum `sum_b sqrt(p_b) [b] |psi_b>`
//! where each `[b] = exp(-i theta_b)` carries an independent uniform angle.
//! Density operators follow from the averaging rule `<[a]* [b]> = I_ab`,
//! evaluated analytically by [`density_of_mixture`] and stochastically by
//! [`sample_density`].

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantum_core::{c, CMatrix, CVector, DensityMatrix, PureState, C64};

static NEXT_LABEL: AtomicU64 = AtomicU64::new(1);

/// Opaque identity of a random angle. Equal labels share the same angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhaseLabel(u64);

/// `e^{-i phi} [label]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomPhase {
    label: PhaseLabel,
    fixed_offset: f64,
}

impl RandomPhase {
    /// A phase independent of every phase created before it.
    pub fn fresh() -> Self {
        Self {
            label: PhaseLabel(NEXT_LABEL.fetch_add(1, Ordering::Relaxed)),
            fixed_offset: 0.0,
        }
    }

    pub fn label(&self) -> PhaseLabel {
        self.label
    }

    pub fn fixed_offset(&self) -> f64 {
        self.fixed_offset
    }

    /// `[b°] = e^{-i phi} [b]`: same random angle, extra fixed rotation.
    pub fn shifted(&self, phi: f64) -> Self {
        Self {
            label: self.label,
            fixed_offset: self.fixed_offset + phi,
        }
    }

    /// The product of two random phases is a new random phase, uncorrelated
    /// with either factor.
    pub fn product(&self, other: &RandomPhase) -> Self {
        Self {
            fixed_offset: self.fixed_offset + other.fixed_offset,
            ..Self::fresh()
        }
    }

    pub fn independent_of(&self, other: &RandomPhase) -> bool {
        self.label != other.label
    }

    /// Value for a concrete draw of the underlying angle.
    pub fn value(&self, theta: f64) -> C64 {
        C64::from_polar(1.0, -(theta + self.fixed_offset))
    }
}

/// `<a* b>` averaged over the random angles.
pub fn average_conj_product(a: &RandomPhase, b: &RandomPhase) -> C64 {
    if a.label == b.label {
        C64::from_polar(1.0, a.fixed_offset - b.fixed_offset)
    } else {
        c(0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub weight: f64,
    pub phase: RandomPhase,
    pub state: PureState,
}

impl Branch {
    pub fn new(weight: f64, state: PureState) -> Self {
        Self {
            weight,
            phase: RandomPhase::fresh(),
            state,
        }
    }
}

/// Weighted, phase-tagged collection of pure states. Branches stay factored:
/// each carries its own random phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMixture {
    branches: Vec<Branch>,
}

const WEIGHT_TOL: f64 = 1e-12;

impl PhaseMixture {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| Error::Parameter("mixture needs at least one branch".into()))?;
        let dim = first.state.dim();
        let mut total = 0.0;
        let mut seen = std::collections::HashSet::new();
        for b in &branches {
            if !(b.weight >= 0.0) || !b.weight.is_finite() {
                return Err(Error::Parameter(format!("branch weight {} is invalid", b.weight)));
            }
            if b.state.dim() != dim {
                return Err(Error::Size("mixture branches differ in dimension".into()));
            }
            if !seen.insert(b.phase.label()) {
                return Err(Error::Parameter(
                    "two branches share a random phase; factor them into one branch".into(),
                ));
            }
            total += b.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Parameter(format!("branch weights sum to {total}")));
        }
        Ok(Self { branches })
    }

    /// Single-branch mixture, i.e. a pure state.
    pub fn pure(state: PureState) -> Self {
        Self {
            branches: vec![Branch::new(1.0, state)],
        }
    }

    /// Equal-weight mixture of `states`, each with a fresh phase.
    pub fn uniform(states: Vec<PureState>) -> Result<Self> {
        let w = 1.0 / states.len().max(1) as f64;
        Self::new(states.into_iter().map(|s| Branch::new(w, s)).collect())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn dim(&self) -> usize {
        self.branches[0].state.dim()
    }

    /// Merges branches whose states coincide up to a global fixed phase. The
    /// merged branch gets a fresh phase standing for the summed phases.
    pub fn normalized(&self) -> PhaseMixture {
        let mut merged: Vec<Branch> = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            match merged
                .iter_mut()
                .find(|m| m.state.inner(&b.state).norm() >= 1.0 - 1e-12)
            {
                Some(m) => {
                    m.weight += b.weight;
                    m.phase = RandomPhase::fresh();
                }
                None => merged.push(b.clone()),
            }
        }
        PhaseMixture { branches: merged }
    }

    /// Replaces every branch phase by `e^{-i phi_b} [b]`.
    pub fn with_shifted_phases(&self, offsets: &[f64]) -> Result<PhaseMixture> {
        if offsets.len() != self.branches.len() {
            return Err(Error::Size("one offset per branch required".into()));
        }
        Ok(PhaseMixture {
            branches: self
                .branches
                .iter()
                .zip(offsets)
                .map(|(b, &phi)| Branch {
                    phase: b.phase.shifted(phi),
                    ..b.clone()
                })
                .collect(),
        })
    }
}

/// Exact phase-averaged density operator of a mixture.
pub fn density_of_mixture(m: &PhaseMixture) -> Result<DensityMatrix> {
    let dim = m.dim();
    let mut rho = CMatrix::zeros(dim, dim);
    for a in m.branches() {
        for b in m.branches() {
            let avg = average_conj_product(&b.phase, &a.phase);
            if avg.norm() == 0.0 {
                continue;
            }
            let amp = (a.weight * b.weight).sqrt();
            rho += a.state.amplitudes() * b.state.amplitudes().adjoint() * (avg * amp);
        }
    }
    DensityMatrix::new(rho)
}

/// Monte Carlo estimate of the density operator: draws every distinct phase
/// angle uniformly per sample and averages the resulting projectors.
pub fn sample_density(m: &PhaseMixture, n_samples: usize, seed: u64) -> Result<DensityMatrix> {
    if n_samples == 0 {
        return Err(Error::Parameter("sample_density needs at least one sample".into()));
    }
    let dim = m.dim();
    let mut slots: HashMap<PhaseLabel, usize> = HashMap::new();
    for b in m.branches() {
        let next = slots.len();
        slots.entry(b.phase.label()).or_insert(next);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut thetas = vec![0.0; slots.len()];
    let mut acc = CMatrix::zeros(dim, dim);
    for _ in 0..n_samples {
        for theta in thetas.iter_mut() {
            *theta = rng.random::<f64>() * TAU;
        }
        let mut v = CVector::zeros(dim);
        for b in m.branches() {
            let phase = b.phase.value(thetas[slots[&b.phase.label()]]);
            v += b.state.amplitudes() * (phase * b.weight.sqrt());
        }
        acc += &v * v.adjoint();
    }
    // Single draws are not unit vectors when branch states overlap, so the
    // average has unit trace only in expectation; rescale to the trace.
    let tr = acc.trace().re;
    let rho = acc / c(tr, 0.0);
    DensityMatrix::new((&rho + rho.adjoint()) * c(0.5, 0.0))
}

/// Builds the reduced wave function `sum_b sqrt(p_b) [b] |psi^(b)>` from the
/// per-bath-state system states.
pub fn reduce_supersystem_mixture(
    branch_states: &[PureState],
    probabilities: &[f64],
) -> Result<PhaseMixture> {
    if branch_states.len() != probabilities.len() {
        return Err(Error::Size(format!(
            "{} branch states but {} probabilities",
            branch_states.len(),
            probabilities.len()
        )));
    }
    PhaseMixture::new(
        branch_states
            .iter()
            .zip(probabilities)
            .map(|(s, &p)| Branch::new(p, s.clone()))
            .collect(),
    )
}
