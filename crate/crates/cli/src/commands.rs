use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use radbath::decoherence::{decoherence_factor, recurrence_scan, DiagonalInteractionSpec, TrajectoryPoint};
use radbath::ensemble::{
    conditional_slice, run_ensemble, scatter_svg, Ellipse, EnsembleSummary, InteractionModel, ModelKind,
    SliceReport, ThermalBath,
};
use radbath::quantum_core::{c, Operator};
use radbath::supersystem::{random_hermitian, CouplingModel};
use radbath::symmetry::{classify, Prediction, SymmetryMap};
use radbath::weisskopf_wigner::{
    closed_form_product_imaginary, delta_lambda_closed_form, delta_lambda_direct, wwa_matrix, wwa_vs_exact,
    DecayModelSpec, DecayReport, EpsilonMode, KaonToy,
};

use crate::config::{
    DecohereConfig, EnsembleConfig, EnsembleModelKind, EpsKind, InteractionConfig, SymmetryConfig, SystemConfig,
    WwaConfig,
};
use crate::output::{config_header, Format, OutputDir};
use crate::CliError;

/// Where and how a run writes its files.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub format: Format,
}

/// Result of one subcommand run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Human-readable summary for stdout.
    pub lines: Vec<String>,
    /// Descriptions of requested checks that did not pass.
    pub failed_checks: Vec<String>,
}

impl RunReport {
    fn check(&mut self, passed: bool, what: String) {
        self.lines.push(format!("check {}: {what}", if passed { "passed" } else { "FAILED" }));
        if !passed {
            self.failed_checks.push(what);
        }
    }
}

#[derive(Serialize)]
struct Point {
    t: f64,
    abs: f64,
}

impl From<&TrajectoryPoint> for Point {
    fn from(p: &TrajectoryPoint) -> Self {
        Point { t: p.t, abs: p.magnitude() }
    }
}

#[derive(Serialize)]
struct DecohereSummary {
    levels: [usize; 2],
    samples: usize,
    burn_in: f64,
    time_average_abs: f64,
    max_after_burn_in: Option<Point>,
    first_return: Option<Point>,
}

/// Standard deviation of the coupling difference between two levels.
pub fn coupling_difference_sd(model: &CouplingModel) -> f64 {
    match *model {
        CouplingModel::DiagonalGaussian { sigma } => sigma,
        CouplingModel::DiagonalUniform { half_width } => half_width * (2.0f64 / 3.0).sqrt(),
        CouplingModel::DiagonalTwoPoint { low, high } => (high - low).abs() / std::f64::consts::SQRT_2,
        CouplingModel::HermitianGaussian { sigma } => sigma,
    }
}

pub fn decohere(cfg: &DecohereConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    if !cfg.coupling.is_diagonal() {
        return Err(CliError::Config("decohere.coupling: the model must be diagonal".into()));
    }
    let mut spec =
        DiagonalInteractionSpec::from_model(cfg.system_energies.clone(), cfg.bath_states, &cfg.coupling, cfg.seed)?;
    match (&cfg.bath_energies, cfg.kt) {
        (Some(e), Some(kt)) => spec = spec.with_thermal_bath(e.clone(), kt)?,
        (None, None) => {}
        _ => return Err(CliError::Config("decohere.bath_energies and decohere.kt go together".into())),
    }
    let [s, q] = cfg.levels;
    let spread = coupling_difference_sd(&cfg.coupling);
    let burn_in = cfg.burn_in.unwrap_or(if spread > 0.0 { 5.0 / spread } else { 0.0 });
    let scan = recurrence_scan(&spec, s, q, cfg.t_max, cfg.n_steps, burn_in)?;

    let mut out = OutputDir::new(&opts.out, config_header("decohere", cfg, opts.format)?)?;
    let mut csv = Vec::new();
    scan.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    out.text("decoherence.csv", &String::from_utf8_lossy(&csv))?;
    let summary = DecohereSummary {
        levels: cfg.levels,
        samples: scan.points.len(),
        burn_in,
        time_average_abs: scan.time_average_magnitude(),
        max_after_burn_in: scan.max_after_burn_in.as_ref().map(Point::from),
        first_return: scan.first_return.as_ref().map(Point::from),
    };
    out.toml("summary.toml", &summary)?;

    let mut report = RunReport::default();
    report.lines.push(format!("time-averaged |A_{s}{q}| = {:.6}", summary.time_average_abs));
    if let Some(p) = &summary.max_after_burn_in {
        report.lines.push(format!("max |A| after t = {burn_in:.4}: {:.6} at t = {:.4}", p.abs, p.t));
    }
    match &summary.first_return {
        Some(p) => report.lines.push(format!("first return above 0.99 at t = {:.4}", p.t)),
        None => report.lines.push("no return above 0.99 in the scanned window".into()),
    }
    if let Some(chk) = cfg.checks.magnitude_below {
        let a = decoherence_factor(&spec, s, q, chk.at)?.norm();
        report.check(a < chk.below, format!("|A_{s}{q}({})| = {a:.6} < {}", chk.at, chk.below));
    }
    report.files = out.into_files();
    Ok(report)
}

fn system_spec(sys: &SystemConfig, mode: EpsilonMode) -> Result<(DecayModelSpec, Option<SymmetryMap>), CliError> {
    match (sys, sys.kaon_toy()) {
        (_, Some(toy)) => {
            let (spec, sym) = toy.build(mode)?;
            Ok((spec, Some(sym)))
        }
        (SystemConfig::UniformBand { coupling, half_width, n_final, e0 }, None) => {
            Ok((DecayModelSpec::uniform_band(*coupling, *half_width, *n_final, *e0, mode)?, None))
        }
        _ => unreachable!("kaon_toy covers the toy variant"),
    }
}

fn draw_interaction(
    cfg: &InteractionConfig,
    spec: &DecayModelSpec,
    sym: Option<&SymmetryMap>,
) -> Result<Operator, CliError> {
    let n = spec.dim();
    match *cfg {
        InteractionConfig::None => Ok(Operator::zeros(n)),
        InteractionConfig::Gaussian { scale, seed } => {
            Ok(random_hermitian(&mut ChaCha8Rng::seed_from_u64(seed), n, scale))
        }
        InteractionConfig::GaussianCp { scale, seed } => {
            let sym = sym.ok_or_else(|| CliError::Config("interaction: gaussian-cp needs a kaon-toy system".into()))?;
            Ok(sym.cp_symmetrize(&random_hermitian(&mut ChaCha8Rng::seed_from_u64(seed), n, scale))?)
        }
    }
}

fn kind_name(kind: EpsKind) -> &'static str {
    match kind {
        EpsKind::Finite => "finite",
        EpsKind::Limit => "limit",
    }
}

#[derive(Serialize)]
struct GoldenRule {
    gamma: f64,
    oracle: f64,
    rel_err: f64,
}

#[derive(Serialize)]
struct DeltaLambdaReport {
    re: f64,
    im: f64,
    delta_mass: f64,
    delta_gamma: f64,
    imaginary_residue: f64,
    first_term_abs: f64,
    /// Largest `|Lambda|` entry, the scale for zero tests.
    scale: f64,
    /// `|Lambda_{K Kbar} - Lambda_{Kbar K}|`.
    off_diagonal_asymmetry: f64,
    closed_form: Option<ClosedFormReport>,
}

#[derive(Serialize)]
struct ClosedFormReport {
    re: f64,
    im: f64,
    rel_diff: f64,
    product_imaginary: f64,
}

#[derive(Serialize)]
struct ExactReport {
    times: usize,
    t_max: f64,
    max_survival_deviation: f64,
    max_relative_survival_deviation: f64,
    max_amplitude_deviation: f64,
    fitted_rates: Vec<f64>,
    decay_rates: Vec<f64>,
    used_fallback: bool,
}

#[derive(Serialize)]
struct ModeReport {
    epsilon: Option<f64>,
    window: Option<f64>,
    golden_rule: Option<GoldenRule>,
    delta_lambda: Option<DeltaLambdaReport>,
    exact: Option<ExactReport>,
    generator: DecayReport,
}

pub fn wwa(cfg: &WwaConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let kinds = if cfg.both_modes { vec![EpsKind::Finite, EpsKind::Limit] } else { vec![cfg.eps.kind()] };
    let mut out = OutputDir::new(&opts.out, config_header("wwa", cfg, opts.format)?)?;
    let mut report = RunReport::default();
    let mut modes = BTreeMap::new();

    for kind in kinds {
        let name = kind_name(kind);
        let (base, sym) = system_spec(&cfg.system, cfg.eps.to_mode(kind))?;
        let h = draw_interaction(&cfg.interaction, &base, sym.as_ref())?;
        let spec = base.with_interactions(vec![h])?;
        let model = wwa_matrix(&spec, 0)?;
        let scale = model.lambda.iter().map(|z| z.norm()).fold(0.0, f64::max);
        report.lines.push(format!(
            "[{name}] decay rates {:?}{}",
            model.decay_rates(),
            if model.no_on_shell_state { " (no on-shell final state)" } else { "" }
        ));

        let golden_rule = match cfg.system {
            SystemConfig::UniformBand { coupling, half_width, n_final, .. } => {
                let gamma = model.decay[(0, 0)].re;
                let oracle = 2.0 * std::f64::consts::PI * coupling * coupling * n_final as f64 / (2.0 * half_width);
                let rel_err = if oracle == 0.0 { gamma.abs() } else { (gamma / oracle - 1.0).abs() };
                report.lines.push(format!("[{name}] Gamma = {gamma:.6e}, 2 pi g^2 rho = {oracle:.6e}"));
                if let Some(tol) = cfg.checks.golden_rule_rel_tol {
                    report.check(rel_err <= tol, format!("[{name}] golden-rule relative error {rel_err:.4} <= {tol}"));
                }
                Some(GoldenRule { gamma, oracle, rel_err })
            }
            SystemConfig::KaonToy { .. } => None,
        };

        let delta_lambda = match &sym {
            Some(sym) => {
                let d = delta_lambda_direct(&spec, 0, KaonToy::K, sym)?;
                let (a, b) = (model.position(KaonToy::K)?, model.position(KaonToy::KBAR)?);
                let asym = (model.lambda[(a, b)] - model.lambda[(b, a)]).norm();
                let closed_form = match delta_lambda_closed_form(&spec, 0, KaonToy::K, sym) {
                    Ok(cf) => Some(ClosedFormReport {
                        re: cf.value.re,
                        im: cf.value.im,
                        rel_diff: (cf.value - d.value).norm() / d.value.norm().max(f64::MIN_POSITIVE),
                        product_imaginary: closed_form_product_imaginary(&spec, 0, KaonToy::K)?,
                    }),
                    Err(radbath::Error::Symmetry(_)) => None,
                    Err(e) => return Err(e.into()),
                };
                if d.value.norm() <= 1e-12 * scale {
                    report.lines.push(format!("[{name}] dLambda = 0 (|dLambda| = {:.3e})", d.value.norm()));
                } else {
                    report.lines.push(format!(
                        "[{name}] dLambda = {:.6e} {:+.6e}i (dM = {:.6e}, dGamma = {:.6e})",
                        d.value.re, d.value.im, d.delta_mass, d.delta_gamma
                    ));
                }
                if let Some(tol) = cfg.checks.delta_lambda_zero_tol {
                    report.check(
                        d.value.norm() <= tol * scale && asym <= tol * scale,
                        format!("[{name}] |dLambda| = {:.3e}, asymmetry {asym:.3e} within {tol} of {scale:.3e}", d.value.norm()),
                    );
                }
                Some(DeltaLambdaReport {
                    re: d.value.re,
                    im: d.value.im,
                    delta_mass: d.delta_mass,
                    delta_gamma: d.delta_gamma,
                    imaginary_residue: d.imaginary_residue,
                    first_term_abs: d.first_term.norm(),
                    scale,
                    off_diagonal_asymmetry: asym,
                    closed_form,
                })
            }
            None => None,
        };

        let exact = match cfg.exact {
            Some(ex) => {
                let rate = model.decay_rates().into_iter().fold(0.0, f64::max);
                if !(rate > 0.0) {
                    report.lines.push(format!("[{name}] exact comparison skipped: no decay"));
                    None
                } else {
                    if ex.n_times < 2 {
                        return Err(CliError::Config("wwa.exact.n_times must be at least 2".into()));
                    }
                    let t_max = ex.gamma_t_max / rate;
                    let times: Vec<f64> =
                        (0..ex.n_times).map(|i| t_max * i as f64 / (ex.n_times - 1) as f64).collect();
                    let cmp = wwa_vs_exact(&spec, 0, &times)?;
                    let mut csv = String::from("t");
                    for k in spec.initial() {
                        csv.push_str(&format!(",p_exact_{k},p_wwa_{k}"));
                    }
                    csv.push('\n');
                    for (i, t) in times.iter().enumerate() {
                        csv.push_str(&format!("{t:e}"));
                        for a in 0..spec.initial().len() {
                            csv.push_str(&format!(",{:e},{:e}", cmp.exact_survival[a][i], cmp.wwa_survival[a][i]));
                        }
                        csv.push('\n');
                    }
                    out.text(&format!("survival-{name}.csv"), &csv)?;
                    report.lines.push(format!(
                        "[{name}] exact vs WWA: max survival deviation {:.4e} over Gamma t <= {}",
                        cmp.max_survival_deviation, ex.gamma_t_max
                    ));
                    if let Some(tol) = cfg.checks.max_survival_deviation {
                        report.check(
                            cmp.max_survival_deviation < tol,
                            format!("[{name}] survival deviation {:.4e} < {tol}", cmp.max_survival_deviation),
                        );
                    }
                    Some(ExactReport {
                        times: times.len(),
                        t_max,
                        max_survival_deviation: cmp.max_survival_deviation,
                        max_relative_survival_deviation: cmp.max_relative_survival_deviation,
                        max_amplitude_deviation: cmp.max_amplitude_deviation,
                        fitted_rates: cmp.fitted_rates,
                        decay_rates: cmp.decay_rates,
                        used_fallback: cmp.used_fallback,
                    })
                }
            }
            None => None,
        };

        let (epsilon, window) = match spec.mode() {
            EpsilonMode::Finite { .. } => (spec.epsilon(), None),
            EpsilonMode::Limit { window } => (None, window),
        };
        modes.insert(
            name,
            ModeReport { epsilon, window, golden_rule, delta_lambda, exact, generator: DecayReport::from(&model) },
        );
    }
    out.toml("wwa.toml", &modes)?;
    report.files = out.into_files();
    Ok(report)
}

#[derive(Serialize)]
struct SliceSummary {
    gamma_tol: f64,
    count: usize,
    sd_dm: Option<f64>,
    mean_dm: Option<f64>,
    /// `sd(dM | slice) / sd(dM)`.
    ratio: Option<f64>,
}

#[derive(Serialize)]
struct EnsembleOutput {
    summary: EnsembleSummary,
    ellipse_65: Ellipse,
    ellipse_95: Ellipse,
    slice: SliceSummary,
}

pub fn ensemble(cfg: &EnsembleConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let toy = cfg
        .system
        .kaon_toy()
        .ok_or_else(|| CliError::Config("ensemble.system: the ensemble needs a kaon-toy system".into()))?;
    let (spec, sym) = toy.build(cfg.eps.to_mode(cfg.eps.kind()))?;
    let model = InteractionModel {
        kind: match cfg.model.kind {
            EnsembleModelKind::GaussianCp => ModelKind::GaussianHermitianCp,
            EnsembleModelKind::TwoPoint => ModelKind::TwoPoint,
        },
        scale: cfg.model.scale,
        cp_map: sym,
        on_shell_enhancement: cfg.model.on_shell_enhancement,
        window: cfg.model.window,
        bath: cfg.bath.as_ref().map(|b| ThermalBath { energies: b.energies.clone(), kt: b.kt }),
    };
    let result = run_ensemble(&spec, &model, cfg.n_samples, cfg.seed)?;
    let gamma_tol = cfg.slice_fraction * result.sd_gamma();
    let slice = match conditional_slice(&result, gamma_tol) {
        SliceReport::InsufficientData { count } => {
            SliceSummary { gamma_tol, count, sd_dm: None, mean_dm: None, ratio: None }
        }
        SliceReport::Stats { count, mean_dm, sd_dm, .. } => SliceSummary {
            gamma_tol,
            count,
            sd_dm: Some(sd_dm),
            mean_dm: Some(mean_dm),
            ratio: (result.sd_mass() > 0.0).then(|| sd_dm / result.sd_mass()),
        },
    };

    let mut out = OutputDir::new(&opts.out, config_header("ensemble", cfg, opts.format)?)?;
    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    out.text("scatter.csv", &String::from_utf8_lossy(&csv))?;
    if opts.format == Format::CsvPlot {
        out.raw("scatter.svg", scatter_svg(&result, Some(gamma_tol)).as_bytes())?;
    }

    let mut report = RunReport::default();
    let summary = result.summary();
    report.lines.push(format!(
        "{} samples ({} rejected), sd(dM) = {:.4e}, sd(dGamma) = {:.4e}, corr = {:.4}",
        summary.samples, summary.rejected, summary.sd_dm, summary.sd_dgamma, summary.correlation
    ));
    match slice.ratio {
        Some(r) => report.lines.push(format!(
            "slice |dGamma| <= {gamma_tol:.4e}: {} samples, sd(dM | slice) / sd(dM) = {r:.4}",
            slice.count
        )),
        None => report.lines.push(format!("slice |dGamma| <= {gamma_tol:.4e}: {} samples, no statistics", slice.count)),
    }
    if let Some(max) = cfg.checks.slice_sd_ratio_max {
        let passed = slice.ratio.is_some_and(|r| r <= max);
        report.check(passed, format!("conditional sd ratio {:?} <= {max}", slice.ratio));
    }
    out.toml(
        "summary.toml",
        &EnsembleOutput { summary, ellipse_65: result.ellipse_65, ellipse_95: result.ellipse_95, slice },
    )?;
    report.files = out.into_files();
    Ok(report)
}

#[derive(Serialize)]
struct SymmetryOutput {
    case: String,
    prediction: String,
    cp_system_residual: f64,
    cpt_system_residual: f64,
    cp_interaction: bool,
    t_violating: bool,
    apparent_cpt_violation: bool,
    delta_lambda_re: f64,
    delta_lambda_im: f64,
    closed_form_re: Option<f64>,
    closed_form_im: Option<f64>,
}

pub fn symmetry(cfg: &SymmetryConfig, opts: &RunOptions) -> Result<RunReport, CliError> {
    let (base, sym) = system_spec(&cfg.system, cfg.eps.to_mode(cfg.eps.kind()))?;
    let sym = sym.ok_or_else(|| CliError::Config("symmetry.system: classification needs a kaon-toy system".into()))?;
    let n = base.dim();
    let mut h1 = base.h1().entries().clone();
    for (i, p) in cfg.perturbations.iter().enumerate() {
        let (r, col) = (p[0] as usize, p[1] as usize);
        if p[0] != r as f64 || p[1] != col as f64 || r >= n || col >= n {
            return Err(CliError::Config(format!("symmetry.perturbations[{i}]: bad index pair ({}, {})", p[0], p[1])));
        }
        if r == col {
            h1[(r, r)] += c(p[2], 0.0);
        } else {
            h1[(r, col)] += c(p[2], p[3]);
            h1[(col, r)] += c(p[2], -p[3]);
        }
    }
    let h = draw_interaction(&cfg.interaction, &base, Some(&sym))?;
    let spec = base.with_h1(Operator::hermitian(h1.clone())?)?.with_interactions(vec![h.clone()])?;
    let system = Operator::hermitian(Operator::diagonal(spec.energies()).entries() + h1)?;
    let cls = classify(&system, std::slice::from_ref(&h), &sym)?;
    let direct = delta_lambda_direct(&spec, 0, KaonToy::K, &sym)?;
    let closed = match cls.prediction {
        Prediction::ClosedForm => Some(delta_lambda_closed_form(&spec, 0, KaonToy::K, &sym)?),
        _ => None,
    };
    let output = SymmetryOutput {
        case: cls.case.label().into(),
        prediction: match cls.prediction {
            Prediction::NoApparentViolation => "no apparent violation",
            Prediction::ClosedForm => "closed form",
            Prediction::None => "none",
        }
        .into(),
        cp_system_residual: cls.cp_system.residual,
        cpt_system_residual: cls.cpt_system.residual,
        cp_interaction: cls.interaction_cp(),
        t_violating: cls.t_violating[0],
        apparent_cpt_violation: !cls.apparent_cpt_violation.is_empty(),
        delta_lambda_re: direct.value.re,
        delta_lambda_im: direct.value.im,
        closed_form_re: closed.as_ref().map(|d| d.value.re),
        closed_form_im: closed.as_ref().map(|d| d.value.im),
    };
    let mut out = OutputDir::new(&opts.out, config_header("symmetry", cfg, opts.format)?)?;
    out.toml("symmetry.toml", &output)?;

    let mut report = RunReport::default();
    report.lines.push(format!("case: {}", output.case));
    report.lines.push(format!("prediction: {}", output.prediction));
    report.lines.push(format!("dLambda (direct) = {:.6e} {:+.6e}i", direct.value.re, direct.value.im));
    if let Some(d) = &closed {
        report.lines.push(format!("dLambda (closed form) = {:.6e} {:+.6e}i", d.value.re, d.value.im));
    }
    if let Some(expect) = &cfg.expect_case {
        report.check(&output.case == expect, format!("case \"{}\" matches \"{expect}\"", output.case));
    }
    report.files = out.into_files();
    Ok(report)
}

/// Per-sample comparison of two scatter files.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleCheck {
    pub samples: usize,
    pub max_rel_dev: f64,
    pub worst_id: Option<usize>,
}

fn read_scatter(path: &Path) -> Result<BTreeMap<usize, [f64; 3]>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let bad = |line: usize| CliError::Config(format!("{}:{line}: malformed scatter row", path.display()));
    let mut rows = BTreeMap::new();
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != "sample_id,weight,dM,dGamma" {
                return Err(CliError::Config(format!("{}: not a scatter file", path.display())));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(i + 1));
        }
        let id: usize = cols[0].parse().map_err(|_| bad(i + 1))?;
        let mut v = [0.0; 3];
        for (slot, s) in v.iter_mut().zip(&cols[1..]) {
            *slot = s.parse().map_err(|_| bad(i + 1))?;
        }
        rows.insert(id, v);
    }
    Ok(rows)
}

/// Checks that every sample of `b` equals `factor` times the sample of `a`
/// with the same id, in both `dM` and `dGamma`.
pub fn scale_check(a: &Path, b: &Path, factor: f64) -> Result<ScaleCheck, CliError> {
    let ra = read_scatter(a)?;
    let rb = read_scatter(b)?;
    if ra.len() != rb.len() || ra.keys().ne(rb.keys()) {
        return Err(CliError::Precondition("the two files hold different sample ids".into()));
    }
    let mut worst = (0.0f64, None);
    for (id, va) in &ra {
        let vb = &rb[id];
        for j in 1..3 {
            let want = factor * va[j];
            let dev = (vb[j] - want).abs();
            let rel = if dev == 0.0 { 0.0 } else { dev / want.abs().max(vb[j].abs()) };
            if rel > worst.0 {
                worst = (rel, Some(*id));
            }
        }
    }
    Ok(ScaleCheck { samples: ra.len(), max_rel_dev: worst.0, worst_id: worst.1 })
}
