//! System ⊗ bath Hamiltonians with a bath-diagonal interaction.
//!
//! The interaction never moves the bath between eigenstates:
//! `<q alpha| H_SB |s beta> = h^(beta)_qs I_alpha,beta`. Each bath sector
//! therefore evolves autonomously under `H^(beta) = H_S + h^(beta)` up to
//! the phase `e^{-i E_beta t}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::quantum_core::{
    c, tensor, CMatrix, CVector, DensityMatrix, HermitianPropagator, Operator,
    PureState, DEFAULT_ENTRY_CAP,
};
use crate::random_phase::{density_of_mixture, reduce_supersystem_mixture};

/// System Hamiltonian, bath spectrum, temperature and per-bath-state
/// interaction blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SupersystemSpec {
    system_hamiltonian: Operator,
    bath_energies: Vec<f64>,
    kt: f64,
    interaction: Vec<Operator>,
}

impl SupersystemSpec {
    /// `kt` may be `f64::INFINITY` (uniform bath populations).
    pub fn new(
        system_hamiltonian: Operator,
        bath_energies: Vec<f64>,
        kt: f64,
        interaction: Vec<Operator>,
    ) -> Result<Self> {
        if !system_hamiltonian.hermitian_hint() {
            return Err(Error::Contract("system Hamiltonian must be Hermitian".into()));
        }
        if bath_energies.is_empty() {
            return Err(Error::Parameter("bath needs at least one state".into()));
        }
        if let Some(e) = bath_energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::Parameter(format!("bath energy {e} is not finite")));
        }
        if !(kt > 0.0) {
            return Err(Error::Parameter(format!("kT must be positive, got {kt}")));
        }
        if interaction.len() != bath_energies.len() {
            return Err(Error::Size(format!(
                "{} interaction blocks for {} bath states",
                interaction.len(),
                bath_energies.len()
            )));
        }
        let dim = system_hamiltonian.dim();
        for (beta, h) in interaction.iter().enumerate() {
            if h.dim() != dim {
                return Err(Error::Size(format!("interaction block {beta} has dim {}", h.dim())));
            }
            if !h.hermitian_hint() {
                return Err(Error::Contract(format!(
                    "interaction block {beta} must be Hermitian"
                )));
            }
        }
        Ok(Self {
            system_hamiltonian,
            bath_energies,
            kt,
            interaction,
        })
    }

    /// Spec with every `h^(beta) = 0`.
    pub fn uncoupled(system_hamiltonian: Operator, bath_energies: Vec<f64>, kt: f64) -> Result<Self> {
        let n = bath_energies.len();
        let dim = system_hamiltonian.dim();
        Self::new(system_hamiltonian, bath_energies, kt, vec![Operator::zeros(dim); n])
    }

    pub fn dim_system(&self) -> usize {
        self.system_hamiltonian.dim()
    }

    pub fn dim_bath(&self) -> usize {
        self.bath_energies.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dim_system() * self.dim_bath()
    }

    pub fn system_hamiltonian(&self) -> &Operator {
        &self.system_hamiltonian
    }

    pub fn bath_energies(&self) -> &[f64] {
        &self.bath_energies
    }

    pub fn kt(&self) -> f64 {
        self.kt
    }

    pub fn interaction(&self, beta: usize) -> Result<&Operator> {
        check_index("bath state", beta, self.dim_bath())?;
        Ok(&self.interaction[beta])
    }

    pub fn interactions(&self) -> &[Operator] {
        &self.interaction
    }

    /// Flat index of `|s>|beta>`.
    pub fn flat_index(&self, s: usize, beta: usize) -> usize {
        s * self.dim_bath() + beta
    }
}

/// `H = H_S ⊗ I_B + I_S ⊗ H_B + sum_beta h^(beta) ⊗ |beta><beta|`.
pub fn build_full_hamiltonian(spec: &SupersystemSpec) -> Result<Operator> {
    let n = spec.total_dim();
    if n.saturating_mul(n) > DEFAULT_ENTRY_CAP {
        return Err(Error::Size(format!(
            "supersystem of dim {n} exceeds the {DEFAULT_ENTRY_CAP}-entry cap"
        )));
    }
    let ds = spec.dim_system();
    let db = spec.dim_bath();
    let hs = spec.system_hamiltonian.entries();
    let m = CMatrix::from_fn(n, n, |row, col| {
        let (q, alpha) = (row / db, row % db);
        let (s, beta) = (col / db, col % db);
        if alpha != beta {
            return c(0.0, 0.0);
        }
        let mut v = hs[(q, s)] + spec.interaction[beta].get(q, s);
        if q == s {
            v += c(spec.bath_energies[beta], 0.0);
        }
        v
    });
    debug_assert_eq!(m.nrows(), ds * db);
    Operator::hermitian(m)
}

/// `I_S ⊗ H_B`.
pub fn bath_operator(spec: &SupersystemSpec) -> Result<Operator> {
    tensor(
        &Operator::identity(spec.dim_system()),
        &Operator::diagonal(spec.bath_energies()),
    )
}

/// `H_S ⊗ I_B`.
pub fn system_operator(spec: &SupersystemSpec) -> Result<Operator> {
    tensor(spec.system_hamiltonian(), &Operator::identity(spec.dim_bath()))
}

/// Normalized `exp(-E_beta / kT)` with the lowest energy shifted to zero.
pub fn boltzmann(energies: &[f64], kt: f64) -> Result<Vec<f64>> {
    if energies.is_empty() {
        return Err(Error::Parameter("no bath energies".into()));
    }
    if !(kt > 0.0) {
        return Err(Error::Parameter(format!("kT must be positive, got {kt}")));
    }
    if kt.is_infinite() {
        return Ok(vec![1.0 / energies.len() as f64; energies.len()]);
    }
    let e_min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = energies.iter().map(|e| (-(e - e_min) / kt).exp()).collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Numerical(format!(
            "Boltzmann weights underflow (Z = {z}); raise kT or shift energies"
        )));
    }
    Ok(raw.into_iter().map(|w| w / z).collect())
}

pub fn boltzmann_weights(spec: &SupersystemSpec) -> Result<Vec<f64>> {
    boltzmann(spec.bath_energies(), spec.kt())
}

/// `H^(beta) = <beta|H|beta> - E_beta I_S = H_S + h^(beta)`.
pub fn effective_hamiltonian(spec: &SupersystemSpec, beta: usize) -> Result<Operator> {
    spec.system_hamiltonian().add(spec.interaction(beta)?)
}

/// Extracts the `<beta|H|beta>` block of a composite operator.
pub fn bath_block(full: &Operator, dim_system: usize, dim_bath: usize, beta: usize) -> Result<CMatrix> {
    if full.dim() != dim_system * dim_bath {
        return Err(Error::Size("operator is not a system-bath composite".into()));
    }
    check_index("bath state", beta, dim_bath)?;
    Ok(CMatrix::from_fn(dim_system, dim_system, |q, s| {
        full.get(q * dim_bath + beta, s * dim_bath + beta)
    }))
}

/// `||[H, I_S ⊗ H_B]|| / (||H|| ||H_B||)` in Frobenius norms.
pub fn bath_commutator_residual(full: &Operator, bath: &Operator) -> f64 {
    let scale = full.norm() * bath.norm();
    if scale == 0.0 {
        return 0.0;
    }
    full.commutator(bath).norm() / scale
}

/// Largest amplitude found outside the starting bath sector when every
/// `|s>|beta>` is evolved under `full` to each of `times`.
pub fn branch_leakage(
    full: &Operator,
    dim_system: usize,
    dim_bath: usize,
    times: &[f64],
) -> Result<f64> {
    if full.dim() != dim_system * dim_bath {
        return Err(Error::Size("operator is not a system-bath composite".into()));
    }
    let prop = HermitianPropagator::new(full)?;
    let mut worst = 0.0f64;
    for &t in times {
        let u = prop.unitary(t);
        for col in 0..full.dim() {
            let beta = col % dim_bath;
            for row in 0..full.dim() {
                if row % dim_bath != beta {
                    worst = worst.max(u[(row, col)].norm());
                }
            }
        }
    }
    Ok(worst)
}

/// Outcome of the structural checks on a composite Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport {
    pub bath_commutator: f64,
    pub system_commutator: f64,
    pub leakage: f64,
}

impl StructuralReport {
    pub const TOL: f64 = 1e-12;

    pub fn bath_diagonal(&self) -> bool {
        self.bath_commutator <= Self::TOL && self.leakage <= Self::TOL
    }
}

/// Commutators of `full` with `I_S ⊗ H_B` and `H_S ⊗ I_B`, plus cross-sector
/// leakage over `times`.
pub fn structural_checks(
    full: &Operator,
    spec: &SupersystemSpec,
    times: &[f64],
) -> Result<StructuralReport> {
    let bath = bath_operator(spec)?;
    let system = system_operator(spec)?;
    Ok(StructuralReport {
        bath_commutator: bath_commutator_residual(full, &bath),
        system_commutator: bath_commutator_residual(full, &system),
        leakage: branch_leakage(full, spec.dim_system(), spec.dim_bath(), times)?,
    })
}

/// Propagators for both descriptions of a thermal supersystem: the full
/// composite evolution and the per-sector reduced evolutions.
#[derive(Debug, Clone)]
pub struct SupersystemPropagator {
    spec: SupersystemSpec,
    weights: Vec<f64>,
    full: HermitianPropagator,
    branches: Vec<HermitianPropagator>,
}

impl SupersystemPropagator {
    pub fn new(spec: &SupersystemSpec) -> Result<Self> {
        let full = HermitianPropagator::new(&build_full_hamiltonian(spec)?)?;
        let branches = (0..spec.dim_bath())
            .map(|b| HermitianPropagator::new(&effective_hamiltonian(spec, b)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec: spec.clone(),
            weights: boltzmann_weights(spec)?,
            full,
            branches,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Full composite evolution of `|psi0>|beta>`.
    pub fn evolve_sector(&self, psi0: &PureState, beta: usize, t: f64) -> Result<PureState> {
        let bath = PureState::basis(self.spec.dim_bath(), beta)?;
        self.full.evolve(&psi0.tensor(&bath), t)
    }

    /// `|psi^(beta)(t)> = e^{-i E_beta t} exp(-i H^(beta) t) |psi0>`.
    pub fn branch_state(&self, psi0: &PureState, beta: usize, t: f64) -> Result<PureState> {
        check_index("bath state", beta, self.branches.len())?;
        let phase = c(0.0, -self.spec.bath_energies[beta] * t).exp();
        let v = self.branches[beta].apply(psi0.amplitudes(), t)? * phase;
        Ok(PureState::from_propagated(v))
    }

    /// `sum_beta p_beta |Psi_beta(t)><Psi_beta(t)|` from full evolution.
    pub fn composite_density(&self, psi0: &PureState, t: f64) -> Result<DensityMatrix> {
        let n = self.spec.total_dim();
        let mut rho = CMatrix::zeros(n, n);
        for (beta, &p) in self.weights.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let v = self.evolve_sector(psi0, beta, t)?;
            rho += v.projector() * c(p, 0.0);
        }
        DensityMatrix::new(rho)
    }

    /// Reduced density via the random-phase mixture of branch states.
    pub fn reduced_density_from_branches(&self, psi0: &PureState, t: f64) -> Result<DensityMatrix> {
        let states = (0..self.spec.dim_bath())
            .map(|b| self.branch_state(psi0, b, t))
            .collect::<Result<Vec<_>>>()?;
        density_of_mixture(&reduce_supersystem_mixture(&states, &self.weights)?)
    }
}

/// Stochastic generators for interaction blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingModel {
    /// Diagonal couplings; `sigma` is the standard deviation of the
    /// difference `h_s - h_q` between two levels.
    DiagonalGaussian { sigma: f64 },
    /// Diagonal couplings uniform on `[-half_width, half_width]` per level.
    DiagonalUniform { half_width: f64 },
    /// Diagonal couplings taking `low` or `high` with equal probability.
    DiagonalTwoPoint { low: f64, high: f64 },
    /// Dense Hermitian blocks with complex Gaussian entries of scale `sigma`.
    HermitianGaussian { sigma: f64 },
}

impl CouplingModel {
    pub fn is_diagonal(&self) -> bool {
        !matches!(self, CouplingModel::HermitianGaussian { .. })
    }

    /// Per-level diagonal couplings `h_s^(beta)`, indexed `[beta][s]`.
    pub fn diagonal_couplings(&self, dim_system: usize, dim_bath: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| -> Result<f64> {
            Ok(match *self {
                CouplingModel::DiagonalGaussian { sigma } => {
                    let z: f64 = StandardNormal.sample(rng);
                    z * sigma * std::f64::consts::FRAC_1_SQRT_2
                }
                CouplingModel::DiagonalUniform { half_width } => {
                    (2.0 * rng.random::<f64>() - 1.0) * half_width
                }
                CouplingModel::DiagonalTwoPoint { low, high } => {
                    if rng.random::<bool>() {
                        high
                    } else {
                        low
                    }
                }
                CouplingModel::HermitianGaussian { .. } => {
                    return Err(Error::Parameter(
                        "hermitian-gaussian blocks are not diagonal".into(),
                    ))
                }
            })
        };
        let mut out = Vec::with_capacity(dim_bath);
        for _ in 0..dim_bath {
            let mut row = Vec::with_capacity(dim_system);
            for _ in 0..dim_system {
                row.push(draw(&mut rng)?);
            }
            out.push(row);
        }
        Ok(out)
    }

    pub fn generate(&self, dim_system: usize, dim_bath: usize, seed: u64) -> Result<Vec<Operator>> {
        match *self {
            CouplingModel::HermitianGaussian { sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..dim_bath)
                    .map(|_| random_hermitian(&mut rng, dim_system, sigma))
                    .collect())
            }
            _ => Ok(self
                .diagonal_couplings(dim_system, dim_bath, seed)?
                .iter()
                .map(|h| Operator::diagonal(h))
                .collect()),
        }
    }
}

/// Hermitian matrix with `N(0, sigma^2)` diagonal and complex Gaussian
/// off-diagonal entries of variance `sigma^2`.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize, sigma: f64) -> Operator {
    let mut m = CMatrix::zeros(dim, dim);
    let s = sigma * std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..dim {
        let d: f64 = StandardNormal.sample(rng);
        m[(i, i)] = c(sigma * d, 0.0);
        for j in (i + 1)..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            m[(i, j)] = c(s * re, s * im);
            m[(j, i)] = m[(i, j)].conj();
        }
    }
    Operator::hermitian(m).expect("constructed Hermitian")
}

/// Random unit vector with complex Gaussian components.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> PureState {
    let v = CVector::from_fn(dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    });
    PureState::new(v).expect("gaussian vector is nonzero")
}

/// Plain-text document form of a [`SupersystemSpec`]. Matrices are row-major
/// lists of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecDocument {
    pub dim_s: usize,
    pub bath_energies: Vec<f64>,
    pub kt: f64,
    pub h_s: Vec<Vec<[f64; 2]>>,
    pub interaction: InteractionDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum InteractionDocument {
    Explicit { blocks: Vec<Vec<Vec<[f64; 2]>>> },
    Model { model: CouplingModel, seed: u64 },
}

impl SpecDocument {
    pub fn from_spec(spec: &SupersystemSpec) -> Self {
        SpecDocument {
            dim_s: spec.dim_system(),
            bath_energies: spec.bath_energies.clone(),
            kt: spec.kt,
            h_s: spec.system_hamiltonian.to_rows(),
            interaction: InteractionDocument::Explicit {
                blocks: spec.interaction.iter().map(Operator::to_rows).collect(),
            },
        }
    }

    pub fn to_spec(&self) -> Result<SupersystemSpec> {
        let hs = Operator::from_rows(&self.h_s, true)?;
        if hs.dim() != self.dim_s {
            return Err(Error::Parse(format!(
                "dim_s = {} but h_s is {}x{}",
                self.dim_s,
                hs.dim(),
                hs.dim()
            )));
        }
        let blocks = match &self.interaction {
            InteractionDocument::Explicit { blocks } => blocks
                .iter()
                .map(|b| Operator::from_rows(b, true))
                .collect::<Result<Vec<_>>>()?,
            InteractionDocument::Model { model, seed } => {
                model.generate(self.dim_s, self.bath_energies.len(), *seed)?
            }
        };
        SupersystemSpec::new(hs, self.bath_energies.clone(), self.kt, blocks)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}
