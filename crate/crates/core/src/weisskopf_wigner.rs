//! Second-order reduction of few-initial / many-final-state dynamics to a
//! non-Hermitian generator over the initial states.
//!
//! `Lambda_jk = <j|H_0 + H_1 + h|k> + sum_f <j|H_1 + h|f><f|H_1 + h|k> kappa_f`
//!
//! The continuum of final states is a set of cells. State `f` stands for the
//! energy interval of width `1 / rho_f` centred on `E_f`, and
//! `kappa_f = int_cell rho_f dE / (E_0 - E + i eps)`, evaluated in closed form.
//! In the limit `eps -> 0+` the real part is a principal value and the
//! imaginary part `-pi rho` is shared among the states in the on-shell window.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::quantum_core::{
    c, evolve_nonhermitian, CMatrix, CVector, HermitianPropagator, Operator, C64, DEFAULT_ENTRY_CAP,
};
use crate::symmetry::{check_cp_interaction, check_cpt_system, SymmetryMap};

const ENERGY_TOL: f64 = 1e-12;

/// Regularization of the energy denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EpsilonMode {
    /// Explicit `eps > 0`; `None` selects a tenth of the finest cell width.
    Finite { epsilon: Option<f64> },
    /// `eps -> 0+`; on-shell states are those with `|E_0 - E_f| <= window`.
    /// `None` uses each cell's own half-width.
    Limit { window: Option<f64> },
}

impl Default for EpsilonMode {
    fn default() -> Self {
        EpsilonMode::Finite { epsilon: None }
    }
}

/// Decay problem: initial states degenerate at `E_0` coupled to a set of
/// final-state cells through `H_1 + h^(beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayModelSpec {
    energies: Vec<f64>,
    initial: Vec<usize>,
    finals: Vec<usize>,
    /// Density of states per final state, aligned with `finals`.
    densities: Vec<f64>,
    h1: Operator,
    interactions: Vec<Operator>,
    mode: EpsilonMode,
    e0: f64,
}

impl DecayModelSpec {
    /// `initial` lists the initial states; every other index is a final
    /// state, and `densities` follows the ascending order of those.
    pub fn new(
        energies: Vec<f64>,
        initial: Vec<usize>,
        densities: Vec<f64>,
        h1: Operator,
        interactions: Vec<Operator>,
        mode: EpsilonMode,
    ) -> Result<Self> {
        let n = energies.len();
        if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::Parameter(format!("energy {e} is not finite")));
        }
        if initial.is_empty() {
            return Err(Error::Parameter("no initial states".into()));
        }
        let mut is_initial = vec![false; n];
        for &k in &initial {
            check_index("initial state", k, n)?;
            if is_initial[k] {
                return Err(Error::Parameter(format!("initial state {k} listed twice")));
            }
            is_initial[k] = true;
        }
        let finals: Vec<usize> = (0..n).filter(|&i| !is_initial[i]).collect();
        if densities.len() != finals.len() {
            return Err(Error::Size(format!(
                "{} densities for {} final states",
                densities.len(),
                finals.len()
            )));
        }
        if let Some(r) = densities.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::Parameter(format!("density of states {r} must be positive")));
        }
        let e0 = energies[initial[0]];
        for &k in &initial {
            if (energies[k] - e0).abs() > ENERGY_TOL * e0.abs().max(1.0) {
                return Err(Error::Parameter(format!(
                    "initial state {k} has energy {} but E_0 = {e0}",
                    energies[k]
                )));
            }
        }
        if h1.dim() != n || !h1.hermitian_hint() {
            return Err(Error::Contract(format!("H_1 must be a Hermitian {n}x{n} operator")));
        }
        if interactions.is_empty() {
            return Err(Error::Parameter("at least one interaction block is required".into()));
        }
        for (beta, h) in interactions.iter().enumerate() {
            if h.dim() != n || !h.hermitian_hint() {
                return Err(Error::Contract(format!(
                    "interaction block {beta} must be a Hermitian {n}x{n} operator"
                )));
            }
        }
        validate_mode(&mode)?;
        Ok(Self {
            energies,
            initial,
            finals,
            densities,
            h1,
            interactions,
            mode,
            e0,
        })
    }

    /// Single initial state at `e0` coupled with strength `g` to `n_final`
    /// states evenly spaced over `[e0 - half_width, e0 + half_width]`.
    pub fn uniform_band(g: f64, half_width: f64, n_final: usize, e0: f64, mode: EpsilonMode) -> Result<Self> {
        if n_final < 2 || !(half_width > 0.0) {
            return Err(Error::Parameter("band needs >= 2 states and a positive width".into()));
        }
        let spacing = 2.0 * half_width / (n_final - 1) as f64;
        let mut energies = vec![e0];
        energies.extend((0..n_final).map(|i| e0 - half_width + i as f64 * spacing));
        let n = n_final + 1;
        let mut h1 = CMatrix::zeros(n, n);
        for f in 1..n {
            h1[(0, f)] = c(g, 0.0);
            h1[(f, 0)] = c(g, 0.0);
        }
        Self::new(
            energies,
            vec![0],
            vec![1.0 / spacing; n_final],
            Operator::hermitian(h1)?,
            vec![Operator::zeros(n)],
            mode,
        )
    }

    pub fn with_interactions(&self, interactions: Vec<Operator>) -> Result<Self> {
        Self::new(
            self.energies.clone(),
            self.initial.clone(),
            self.densities.clone(),
            self.h1.clone(),
            interactions,
            self.mode,
        )
    }

    pub fn with_mode(&self, mode: EpsilonMode) -> Result<Self> {
        validate_mode(&mode)?;
        Ok(Self { mode, ..self.clone() })
    }

    pub fn with_h1(&self, h1: Operator) -> Result<Self> {
        Self::new(
            self.energies.clone(),
            self.initial.clone(),
            self.densities.clone(),
            h1,
            self.interactions.clone(),
            self.mode,
        )
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn initial(&self) -> &[usize] {
        &self.initial
    }

    pub fn finals(&self) -> &[usize] {
        &self.finals
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    /// Density of states at state index `f`, if `f` is a final state.
    pub fn density_of(&self, f: usize) -> Option<f64> {
        self.finals.binary_search(&f).ok().map(|i| self.densities[i])
    }

    pub fn h1(&self) -> &Operator {
        &self.h1
    }

    pub fn interactions(&self) -> &[Operator] {
        &self.interactions
    }

    pub fn interaction(&self, beta: usize) -> Result<&Operator> {
        check_index("bath state", beta, self.interactions.len())?;
        Ok(&self.interactions[beta])
    }

    pub fn mode(&self) -> EpsilonMode {
        self.mode
    }

    /// Width of the finest cell, `1 / max rho_f`.
    pub fn grid_spacing(&self) -> f64 {
        1.0 / self.densities.iter().cloned().fold(0.0, f64::max)
    }

    /// `eps` actually used in finite mode.
    pub fn epsilon(&self) -> Option<f64> {
        match self.mode {
            EpsilonMode::Finite { epsilon } => Some(epsilon.unwrap_or(self.grid_spacing() / 10.0)),
            EpsilonMode::Limit { .. } => None,
        }
    }

    /// `H_0 + H_1 + h^(beta)` on the full state space.
    pub fn exact_hamiltonian(&self, beta: usize) -> Result<Operator> {
        Operator::diagonal(&self.energies).add(&self.h1)?.add(self.interaction(beta)?)
    }

    fn is_on_shell(&self, i: usize) -> bool {
        let f = self.finals[i];
        let half = 0.5 / self.densities[i];
        let w = match self.mode {
            EpsilonMode::Limit { window: Some(w) } => w,
            _ => half,
        };
        (self.e0 - self.energies[f]).abs() <= w
    }
}

fn validate_mode(mode: &EpsilonMode) -> Result<()> {
    match *mode {
        EpsilonMode::Finite { epsilon: Some(e) } if !(e > 0.0) || !e.is_finite() => Err(Error::Parameter(format!(
            "eps must be positive for causal decay, got {e}"
        ))),
        EpsilonMode::Limit { window: Some(w) } if !(w >= 0.0) || !w.is_finite() => {
            Err(Error::Parameter(format!("on-shell window must be >= 0, got {w}")))
        }
        _ => Ok(()),
    }
}

/// Per-final-state weights `kappa_f` in the fixed summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    /// `(state index, kappa_f)`, ordered by ascending `|E_0 - E_f|` with
    /// ties to the lower index. Mirror-image states are therefore adjacent.
    pub terms: Vec<(usize, C64)>,
    pub on_shell: Vec<usize>,
    pub off_shell: Vec<usize>,
    /// Limit mode found no final state in the on-shell window.
    pub no_on_shell_state: bool,
}

impl Kernel {
    pub fn new(spec: &DecayModelSpec) -> Result<Self> {
        let e0 = spec.e0;
        let mut order: Vec<usize> = (0..spec.finals.len()).collect();
        order.sort_by(|&a, &b| {
            let da = (e0 - spec.energies[spec.finals[a]]).abs();
            let db = (e0 - spec.energies[spec.finals[b]]).abs();
            da.total_cmp(&db).then(spec.finals[a].cmp(&spec.finals[b]))
        });
        let on_shell_count = order.iter().filter(|&&i| spec.is_on_shell(i)).count();
        let mut terms = Vec::with_capacity(order.len());
        let mut on_shell = Vec::new();
        let mut off_shell = Vec::new();
        for &i in &order {
            let f = spec.finals[i];
            let rho = spec.densities[i];
            let lo = spec.energies[f] - 0.5 / rho;
            let hi = spec.energies[f] + 0.5 / rho;
            let on = spec.is_on_shell(i);
            if on {
                on_shell.push(f);
            } else {
                off_shell.push(f);
            }
            let kappa = match spec.mode {
                EpsilonMode::Finite { .. } => {
                    let eps = spec.epsilon().expect("finite mode");
                    (c(e0 - lo, eps) / c(e0 - hi, eps)).ln() * rho
                }
                EpsilonMode::Limit { .. } => {
                    if e0 == lo || e0 == hi {
                        return Err(Error::Parameter(format!(
                            "E_0 = {e0} lies on the edge of the cell of state {f}"
                        )));
                    }
                    let re = rho * ((e0 - lo) / (e0 - hi)).abs().ln();
                    let im = if on { -std::f64::consts::PI * rho / on_shell_count as f64 } else { 0.0 };
                    c(re, im)
                }
            };
            terms.push((f, kappa));
        }
        on_shell.sort_unstable();
        off_shell.sort_unstable();
        Ok(Self {
            terms,
            no_on_shell_state: matches!(spec.mode, EpsilonMode::Limit { .. }) && on_shell_count == 0,
            on_shell,
            off_shell,
        })
    }
}

/// Generator over the initial states and its Hermitian decomposition
/// `Lambda = M - (i/2) Gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveDecayModel {
    pub initial: Vec<usize>,
    /// `<j|H_0 + H_1 + h|k>` restricted to initial states.
    pub first_term: CMatrix,
    pub lambda: CMatrix,
    pub mass: CMatrix,
    pub decay: CMatrix,
    pub on_shell: Vec<usize>,
    pub off_shell: Vec<usize>,
    pub no_on_shell_state: bool,
}

impl EffectiveDecayModel {
    pub fn position(&self, state: usize) -> Result<usize> {
        self.initial
            .iter()
            .position(|&k| k == state)
            .ok_or_else(|| Error::Parameter(format!("state {state} is not an initial state")))
    }

    pub fn lambda_operator(&self) -> Result<Operator> {
        Operator::general(self.lambda.clone())
    }

    /// Eigenvalues of `Gamma`, ascending.
    pub fn decay_rates(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.decay.clone().symmetric_eigenvalues().iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Builds `Lambda^(beta)` with a precomputed kernel.
pub fn wwa_matrix_with_kernel(spec: &DecayModelSpec, beta: usize, kernel: &Kernel) -> Result<EffectiveDecayModel> {
    wwa_matrix_for_interaction(spec, spec.interaction(beta)?, kernel)
}

/// Builds the generator for an interaction block supplied by the caller
/// instead of one stored in the spec.
pub fn wwa_matrix_for_interaction(spec: &DecayModelSpec, h: &Operator, kernel: &Kernel) -> Result<EffectiveDecayModel> {
    if h.dim() != spec.dim() {
        return Err(Error::Size(format!("interaction of dim {} for {} states", h.dim(), spec.dim())));
    }
    let h1 = spec.h1.entries();
    let hb = h.entries();
    let m = spec.initial.len();
    let first_term = CMatrix::from_fn(m, m, |a, b| {
        let (j, k) = (spec.initial[a], spec.initial[b]);
        let e = if j == k { c(spec.energies[j], 0.0) } else { c(0.0, 0.0) };
        e + h1[(j, k)] + hb[(j, k)]
    });
    let lambda = CMatrix::from_fn(m, m, |a, b| {
        let (j, k) = (spec.initial[a], spec.initial[b]);
        let mut acc = first_term[(a, b)];
        let mut second = c(0.0, 0.0);
        for &(f, kappa) in &kernel.terms {
            second += (h1[(j, f)] + hb[(j, f)]) * (h1[(f, k)] + hb[(f, k)]) * kappa;
        }
        acc += second;
        acc
    });
    let adj = lambda.adjoint();
    let mass = (&lambda + &adj) * c(0.5, 0.0);
    let decay = (&lambda - &adj) * c(0.0, 1.0);
    Ok(EffectiveDecayModel {
        initial: spec.initial.clone(),
        first_term,
        lambda,
        mass,
        decay,
        on_shell: kernel.on_shell.clone(),
        off_shell: kernel.off_shell.clone(),
        no_on_shell_state: kernel.no_on_shell_state,
    })
}

pub fn wwa_matrix(spec: &DecayModelSpec, beta: usize) -> Result<EffectiveDecayModel> {
    wwa_matrix_with_kernel(spec, beta, &Kernel::new(spec)?)
}

/// `dLambda = Lambda_KK - Lambda_KbarKbar` split into mass and width parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaLambda {
    pub value: C64,
    /// `M_KK - M_KbarKbar`.
    pub delta_mass: f64,
    /// `Gamma_KK - Gamma_KbarKbar`.
    pub delta_gamma: f64,
    /// Imaginary remainders of the two differences; zero for Hermitian `M`, `Gamma`.
    pub imaginary_residue: f64,
    /// Contribution of the first-order term alone.
    pub first_term: C64,
}

impl DeltaLambda {
    fn from_model(model: &EffectiveDecayModel, k: usize, kbar: usize) -> Result<Self> {
        let (a, b) = (model.position(k)?, model.position(kbar)?);
        let dm = model.mass[(a, a)] - model.mass[(b, b)];
        let dg = model.decay[(a, a)] - model.decay[(b, b)];
        Ok(Self {
            value: model.lambda[(a, a)] - model.lambda[(b, b)],
            delta_mass: dm.re,
            delta_gamma: dg.re,
            imaginary_residue: dm.im.abs().max(dg.im.abs()),
            first_term: model.first_term[(a, a)] - model.first_term[(b, b)],
        })
    }
}

fn check_map(spec: &DecayModelSpec, sym: &SymmetryMap) -> Result<()> {
    sym.validate(&spec.energies, &spec.initial)?;
    for (i, &f) in spec.finals.iter().enumerate() {
        let fb = sym.bar(f);
        let rho_bar = spec.density_of(fb).expect("bar preserves finals");
        if (spec.densities[i] - rho_bar).abs() > ENERGY_TOL * spec.densities[i] {
            return Err(Error::Symmetry(format!("density of {f} differs from that of {fb}")));
        }
    }
    Ok(())
}

/// `Lambda_KK - Lambda_KbarKbar` from the full generator.
pub fn delta_lambda_direct(spec: &DecayModelSpec, beta: usize, k: usize, sym: &SymmetryMap) -> Result<DeltaLambda> {
    check_index("state", k, sym.dim())?;
    DeltaLambda::from_model(&wwa_matrix(spec, beta)?, k, sym.bar(k))
}

/// Direct route for a caller-supplied interaction block.
pub fn delta_lambda_for_interaction(
    spec: &DecayModelSpec,
    h: &Operator,
    k: usize,
    sym: &SymmetryMap,
    kernel: &Kernel,
) -> Result<DeltaLambda> {
    check_index("state", k, sym.dim())?;
    DeltaLambda::from_model(&wwa_matrix_for_interaction(spec, h, kernel)?, k, sym.bar(k))
}

/// `-sum_f (H'_Kf - H'_fK)(h_Kf - h_fK) kappa_f`, valid when `H_1` is CPT
/// invariant and `h^(beta)` is CP invariant. Refuses otherwise.
pub fn delta_lambda_closed_form(spec: &DecayModelSpec, beta: usize, k: usize, sym: &SymmetryMap) -> Result<DeltaLambda> {
    let kernel = Kernel::new(spec)?;
    delta_lambda_closed_form_with_kernel(spec, beta, k, sym, &kernel)
}

pub fn delta_lambda_closed_form_with_kernel(
    spec: &DecayModelSpec,
    beta: usize,
    k: usize,
    sym: &SymmetryMap,
    kernel: &Kernel,
) -> Result<DeltaLambda> {
    check_index("state", k, spec.dim())?;
    if !spec.initial.contains(&k) {
        return Err(Error::Parameter(format!("state {k} is not an initial state")));
    }
    check_map(spec, sym)?;
    let h = spec.interaction(beta)?;
    let cpt = check_cpt_system(&spec.h1, sym)?;
    if !cpt.passed {
        return Err(Error::Symmetry(format!(
            "H_1 is not CPT invariant (residual {:e} at {:?})",
            cpt.residual, cpt.worst
        )));
    }
    let cp = check_cp_interaction(h, sym)?;
    if !cp.passed {
        return Err(Error::Symmetry(format!(
            "interaction block {beta} is not CP invariant (residual {:e} at {:?})",
            cp.residual, cp.worst
        )));
    }
    let h1 = spec.h1.entries();
    let hb = h.entries();
    let mut value = c(0.0, 0.0);
    for &(f, kappa) in &kernel.terms {
        let d_h1 = h1[(k, f)] - h1[(f, k)];
        let d_h = hb[(k, f)] - hb[(f, k)];
        // Both factors are imaginary; their product is real.
        let product = (d_h1 * d_h).re;
        value -= kappa * product;
    }
    Ok(DeltaLambda {
        value,
        delta_mass: value.re,
        delta_gamma: -2.0 * value.im,
        imaginary_residue: 0.0,
        first_term: c(0.0, 0.0),
    })
}

/// Largest `|Im((H'_Kf - H'_fK)(h_Kf - h_fK))|` over final states.
pub fn closed_form_product_imaginary(spec: &DecayModelSpec, beta: usize, k: usize) -> Result<f64> {
    let h = spec.interaction(beta)?.entries();
    let h1 = spec.h1.entries();
    Ok(spec
        .finals
        .iter()
        .map(|&f| ((h1[(k, f)] - h1[(f, k)]) * (h[(k, f)] - h[(f, k)])).im.abs())
        .fold(0.0, f64::max))
}

/// First-order dressing of a diagonal interaction by `H_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedInteraction {
    pub operator: Operator,
    /// Pairs `(q, s)`, `q < s`, closer in energy than the on-shell window.
    /// Their correction diverges and is left out.
    pub divergent_pairs: Vec<(usize, usize)>,
    pub window: f64,
}

/// `sum_s h_s |s><s| + sum_{q != s} (h_s - h_q) H1_qs / (E_s - E_q) |q><s|`.
/// `h_diag` defaults to the diagonal of `h^(beta)`.
pub fn corrected_interaction(
    spec: &DecayModelSpec,
    beta: usize,
    h_diag: Option<&[f64]>,
) -> Result<CorrectedInteraction> {
    let n = spec.dim();
    let h: Vec<f64> = match h_diag {
        Some(v) if v.len() != n => {
            return Err(Error::Size(format!("{} diagonal couplings for {n} states", v.len())))
        }
        Some(v) => v.to_vec(),
        None => {
            let hb = spec.interaction(beta)?;
            (0..n).map(|s| hb.get(s, s).re).collect()
        }
    };
    let window = match spec.mode {
        EpsilonMode::Limit { window: Some(w) } => w,
        _ => spec.grid_spacing() / 2.0,
    };
    let h1 = spec.h1.entries();
    let mut divergent_pairs = Vec::new();
    let mut m = CMatrix::from_diagonal(&CVector::from_iterator(n, h.iter().map(|&x| c(x, 0.0))));
    for q in 0..n {
        for s in 0..n {
            if q == s {
                continue;
            }
            let gap = spec.energies[s] - spec.energies[q];
            if gap.abs() < window {
                if q < s {
                    divergent_pairs.push((q, s));
                }
                continue;
            }
            m[(q, s)] = h1[(q, s)] * ((h[s] - h[q]) / gap);
        }
    }
    Ok(CorrectedInteraction {
        operator: Operator::hermitian(m)?,
        divergent_pairs,
        window,
    })
}

/// Exact evolution against the reduced generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WwaComparison {
    pub times: Vec<f64>,
    /// Largest `|a_exact - a_wwa|` over initial states, components and times.
    pub max_amplitude_deviation: f64,
    /// Largest `|P_exact - P_wwa|` of survival probabilities.
    pub max_survival_deviation: f64,
    /// Largest `|P_exact - P_wwa| / P_wwa`.
    pub max_relative_survival_deviation: f64,
    /// Survival `P_exact(t)` per initial state.
    pub exact_survival: Vec<Vec<f64>>,
    pub wwa_survival: Vec<Vec<f64>>,
    /// `-d ln P_exact / dt` by least squares, per initial state.
    pub fitted_rates: Vec<f64>,
    pub decay_rates: Vec<f64>,
    pub used_fallback: bool,
}

pub fn wwa_vs_exact(spec: &DecayModelSpec, beta: usize, times: &[f64]) -> Result<WwaComparison> {
    let n = spec.dim();
    if n.saturating_mul(n) > DEFAULT_ENTRY_CAP {
        return Err(Error::Size(format!("exact evolution of dim {n} exceeds the entry cap")));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::Parameter(format!("comparison times must be >= 0, got {t}")));
    }
    let model = wwa_matrix(spec, beta)?;
    let lambda = model.lambda_operator()?;
    let exact = HermitianPropagator::new(&spec.exact_hamiltonian(beta)?)?;
    let m = spec.initial.len();

    let mut max_amp = 0.0f64;
    let mut max_surv = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut used_fallback = false;
    let mut exact_survival = vec![Vec::with_capacity(times.len()); m];
    let mut wwa_survival = vec![Vec::with_capacity(times.len()); m];
    for (a, &k) in spec.initial.iter().enumerate() {
        let mut start = CVector::zeros(n);
        start[k] = c(1.0, 0.0);
        let mut reduced_start = CVector::zeros(m);
        reduced_start[a] = c(1.0, 0.0);
        for &t in times {
            let full = exact.apply(&start, t)?;
            let reduced = evolve_nonhermitian(&lambda, &reduced_start, t)?;
            used_fallback |= reduced.used_fallback;
            for b in 0..m {
                max_amp = max_amp.max((full[spec.initial[b]] - reduced.amplitudes[b]).norm());
            }
            let p_exact = full[k].norm_sqr();
            let p_wwa = reduced.amplitudes[a].norm_sqr();
            let dev = (p_exact - p_wwa).abs();
            max_surv = max_surv.max(dev);
            if p_wwa > 0.0 {
                max_rel = max_rel.max(dev / p_wwa);
            }
            exact_survival[a].push(p_exact);
            wwa_survival[a].push(p_wwa);
        }
    }
    let fitted_rates = exact_survival.iter().map(|p| fit_rate(times, p)).collect();
    Ok(WwaComparison {
        times: times.to_vec(),
        max_amplitude_deviation: max_amp,
        max_survival_deviation: max_surv,
        max_relative_survival_deviation: max_rel,
        exact_survival,
        wwa_survival,
        fitted_rates,
        decay_rates: model.decay_rates(),
        used_fallback,
    })
}

/// Least-squares slope of `-ln P` against `t`, over samples with `P > 0`.
fn fit_rate(times: &[f64], p: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(p)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&t, &p)| (t, -p.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|q| q.0).sum::<f64>() / n;
    let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|q| (q.0 - mt) * (q.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|q| (q.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Two degenerate initial states `K`, `Kbar` (indices 0 and 1) decaying into
/// mirror pairs `(f, fbar)` spread evenly over a band.
///
/// `<K|H_1|f> = a`, `<Kbar|H_1|fbar> = conj(a)`, `<Kbar|H_1|f> = b`,
/// `<K|H_1|fbar> = conj(b)` with `a = g (1 + i cp_phase)` and
/// `b = cross_ratio * g (1 - i cp_phase)`. The result is CPT invariant and is
/// CP invariant only when `cp_phase = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaonToy {
    pub pair_count: usize,
    pub half_width: f64,
    /// Initial energy relative to the band centre.
    pub e0_offset: f64,
    pub coupling: f64,
    pub cp_phase: f64,
    pub cross_ratio: f64,
}

impl Default for KaonToy {
    fn default() -> Self {
        Self {
            pair_count: 41,
            half_width: 1.0,
            e0_offset: 0.0,
            coupling: 0.02,
            cp_phase: 0.3,
            cross_ratio: 0.5,
        }
    }
}

impl KaonToy {
    pub const K: usize = 0;
    pub const KBAR: usize = 1;

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.pair_count - 1) as f64
    }

    /// Band energy of pair `i`.
    pub fn pair_energy(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn pair_states(i: usize) -> (usize, usize) {
        (2 + 2 * i, 3 + 2 * i)
    }

    pub fn symmetry_map(&self) -> Result<SymmetryMap> {
        let mut pairs = vec![(Self::K, Self::KBAR)];
        pairs.extend((0..self.pair_count).map(Self::pair_states));
        SymmetryMap::from_pairs(2 + 2 * self.pair_count, &pairs)
    }

    pub fn build(&self, mode: EpsilonMode) -> Result<(DecayModelSpec, SymmetryMap)> {
        if self.pair_count < 2 || !(self.half_width > 0.0) {
            return Err(Error::Parameter("kaon toy needs >= 2 pairs and a positive width".into()));
        }
        let n = 2 + 2 * self.pair_count;
        let mut energies = vec![self.e0_offset; 2];
        for i in 0..self.pair_count {
            let e = self.pair_energy(i);
            energies.extend([e, e]);
        }
        let a = c(self.coupling, self.coupling * self.cp_phase);
        let b = c(self.coupling, -self.coupling * self.cp_phase) * self.cross_ratio;
        let mut h1 = CMatrix::zeros(n, n);
        for i in 0..self.pair_count {
            let (f, fbar) = Self::pair_states(i);
            h1[(Self::K, f)] = a;
            h1[(Self::KBAR, fbar)] = a.conj();
            h1[(Self::KBAR, f)] = b;
            h1[(Self::K, fbar)] = b.conj();
        }
        let h1 = &h1 + h1.adjoint();
        let spec = DecayModelSpec::new(
            energies,
            vec![Self::K, Self::KBAR],
            vec![1.0 / self.spacing(); 2 * self.pair_count],
            Operator::hermitian(h1)?,
            vec![Operator::zeros(n)],
            mode,
        )?;
        let sym = self.symmetry_map()?;
        check_map(&spec, &sym)?;
        Ok((spec, sym))
    }
}

/// Serializable summary of an [`EffectiveDecayModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub initial: Vec<usize>,
    pub lambda: Vec<Vec<[f64; 2]>>,
    pub mass: Vec<Vec<[f64; 2]>>,
    pub decay: Vec<Vec<[f64; 2]>>,
    pub decay_rates: Vec<f64>,
    pub on_shell: Vec<usize>,
    pub no_on_shell_state: bool,
}

fn rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

impl From<&EffectiveDecayModel> for DecayReport {
    fn from(m: &EffectiveDecayModel) -> Self {
        DecayReport {
            initial: m.initial.clone(),
            lambda: rows(&m.lambda),
            mass: rows(&m.mass),
            decay: rows(&m.decay),
            decay_rates: m.decay_rates(),
            on_shell: m.on_shell.clone(),
            no_on_shell_state: m.no_on_shell_state,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::hermiticity_residual;
    use crate::supersystem::random_hermitian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const LIMIT: EpsilonMode = EpsilonMode::Limit { window: None };

    #[test]
    fn golden_rule_rate() {
        let spec = DecayModelSpec::uniform_band(0.01, 1.0, 201, 0.0, LIMIT).unwrap();
        let model = wwa_matrix(&spec, 0).unwrap();
        let gamma = model.decay[(0, 0)].re;
        let oracle = 2.0 * PI * 0.01f64.powi(2) * 201.0 / 2.0;
        assert!((gamma / oracle - 1.0).abs() < 0.03, "{gamma} vs {oracle}");
        assert_eq!(model.on_shell, vec![101]);
        // Symmetric band around E_0: the principal part cancels.
        assert!(model.mass[(0, 0)].re.abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_no_width() {
        let spec = DecayModelSpec::uniform_band(0.0, 1.0, 11, 0.3, LIMIT).unwrap();
        let model = wwa_matrix(&spec, 0).unwrap();
        assert_eq!(model.lambda[(0, 0)], c(0.3, 0.0));
        assert_eq!(model.decay[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn finite_eps_matches_limit_under_refinement() {
        for &n in &[51usize, 201, 801] {
            let lim = DecayModelSpec::uniform_band(0.01, 1.0, n, 0.123, LIMIT).unwrap();
            let fin = lim.with_mode(EpsilonMode::Finite { epsilon: None }).unwrap();
            let a = wwa_matrix(&lim, 0).unwrap().lambda[(0, 0)];
            let b = wwa_matrix(&fin, 0).unwrap().lambda[(0, 0)];
            let rel = ((a - b) / (a - c(0.123, 0.0))).norm();
            assert!(rel < 0.01, "n = {n}: {rel}");
        }
    }

    #[test]
    fn mode_validation_and_edges() {
        let spec = DecayModelSpec::uniform_band(0.01, 1.0, 11, 0.0, LIMIT).unwrap();
        assert!(spec.with_mode(EpsilonMode::Finite { epsilon: Some(0.0) }).is_err());
        assert!(spec.with_mode(EpsilonMode::Finite { epsilon: Some(-1e-3) }).is_err());
        // Spacing 0.25: E_0 = 0.125 is the boundary between two cells.
        let edge = DecayModelSpec::uniform_band(0.01, 1.0, 9, 0.0, LIMIT).unwrap();
        let mut energies = edge.energies().to_vec();
        energies[0] = 0.125;
        let edge = DecayModelSpec::new(
            energies,
            vec![0],
            edge.densities().to_vec(),
            edge.h1().clone(),
            edge.interactions().to_vec(),
            LIMIT,
        )
        .unwrap();
        assert!(matches!(wwa_matrix(&edge, 0), Err(Error::Parameter(_))));
        let narrow = spec.with_mode(EpsilonMode::Limit { window: Some(0.0) }).unwrap();
        let mut e = narrow.energies().to_vec();
        e[0] = 0.01;
        let off = DecayModelSpec::new(
            e,
            vec![0],
            narrow.densities().to_vec(),
            narrow.h1().clone(),
            narrow.interactions().to_vec(),
            narrow.mode(),
        )
        .unwrap();
        let model = wwa_matrix(&off, 0).unwrap();
        assert!(model.no_on_shell_state);
        assert_eq!(model.decay[(0, 0)].re, 0.0);
    }

    #[test]
    fn decomposition_is_hermitian_and_width_is_positive() {
        let toy = KaonToy { e0_offset: 0.013, ..KaonToy::default() };
        let (spec, sym) = toy.build(EpsilonMode::Finite { epsilon: None }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = sym.cp_symmetrize(&random_hermitian(&mut rng, spec.dim(), 0.003)).unwrap();
        let spec = spec.with_interactions(vec![h]).unwrap();
        let model = wwa_matrix(&spec, 0).unwrap();
        assert!(hermiticity_residual(&model.mass) <= 1e-12);
        assert!(hermiticity_residual(&model.decay) <= 1e-12);
        let lam = &model.mass - &model.decay * c(0.0, 0.5);
        assert!((lam - &model.lambda).iter().all(|z| z.norm() < 1e-15));
        assert!(model.decay_rates()[0] >= -1e-10);
    }

    #[test]
    fn kaon_toy_cp_violation_without_environment() {
        let (spec, sym) = KaonToy::default().build(LIMIT).unwrap();
        let model = wwa_matrix(&spec, 0).unwrap();
        let d = delta_lambda_direct(&spec, 0, KaonToy::K, &sym).unwrap();
        assert!(d.value.norm() < 1e-15);
        assert!((model.lambda[(0, 1)] - model.lambda[(1, 0)]).norm() > 1e-6);
    }

    #[test]
    fn closed_form_agrees_with_direct_route() {
        let (base, sym) = KaonToy { e0_offset: 0.011, ..KaonToy::default() }.build(LIMIT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h = sym.cp_symmetrize(&random_hermitian(&mut rng, base.dim(), 0.01)).unwrap();
            let spec = base.with_interactions(vec![h]).unwrap();
            let direct = delta_lambda_direct(&spec, 0, KaonToy::K, &sym).unwrap();
            let closed = delta_lambda_closed_form(&spec, 0, KaonToy::K, &sym).unwrap();
            assert!((direct.value - closed.value).norm() <= 1e-8 * closed.value.norm());
            assert!(direct.first_term.norm() <= 1e-12);
            assert!(closed_form_product_imaginary(&spec, 0, KaonToy::K).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn closed_form_refuses_without_symmetry() {
        let (spec, sym) = KaonToy::default().build(LIMIT).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = random_hermitian(&mut rng, spec.dim(), 0.01);
        let spec = spec.with_interactions(vec![raw]).unwrap();
        assert!(matches!(
            delta_lambda_closed_form(&spec, 0, KaonToy::K, &sym),
            Err(Error::Symmetry(_))
        ));
    }

    #[test]
    fn corrected_interaction_trivial_cases() {
        let spec = DecayModelSpec::uniform_band(0.0, 1.0, 11, 0.0, LIMIT).unwrap();
        let h: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let out = corrected_interaction(&spec, 0, Some(&h)).unwrap();
        let diag = Operator::diagonal(&h);
        assert_eq!(out.operator, diag);

        let spec = DecayModelSpec::uniform_band(0.05, 1.0, 11, 0.0, LIMIT).unwrap();
        let flat = vec![0.2; 12];
        assert_eq!(corrected_interaction(&spec, 0, Some(&flat)).unwrap().operator, Operator::diagonal(&flat));
        let out = corrected_interaction(&spec, 0, Some(&h)).unwrap();
        assert_eq!(out.divergent_pairs, vec![(0, 6)]);
        assert!(out.operator.hermitian_hint());
    }

    #[test]
    fn comparison_with_zero_coupling_is_exact() {
        let spec = DecayModelSpec::uniform_band(0.0, 1.0, 21, 0.0, LIMIT).unwrap();
        let cmp = wwa_vs_exact(&spec, 0, &[0.0, 1.0, 10.0]).unwrap();
        assert!(cmp.max_amplitude_deviation < 1e-12);
    }

    #[test]
    fn comparison_tracks_golden_rule_at_late_times() {
        let spec = DecayModelSpec::uniform_band(0.01, 1.0, 201, 0.0, LIMIT).unwrap();
        let gamma = wwa_matrix(&spec, 0).unwrap().decay[(0, 0)].re;
        let times: Vec<f64> = (0..=60).map(|i| i as f64 * 3.0 / gamma / 60.0).collect();
        let cmp = wwa_vs_exact(&spec, 0, &times).unwrap();
        assert!((cmp.fitted_rates[0] / gamma - 1.0).abs() < 0.05, "{:?}", cmp.fitted_rates);
        assert!(cmp.max_survival_deviation < 0.1);
    }
}
