//! Browser bindings. Each export runs one small experiment and returns its
//! data as a JSON string for the page script to draw.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use wasm_bindgen::prelude::*;

use radbath::decoherence::{decoherence_factor, DiagonalInteractionSpec};
use radbath::ensemble::{conditional_slice, run_ensemble, Ellipse, InteractionModel, SliceReport};
use radbath::supersystem::CouplingModel;
use radbath::weisskopf_wigner::{wwa_matrix, wwa_vs_exact, DecayModelSpec, EpsilonMode, KaonToy};

const MAX_POINTS: u32 = 20_000;

fn check_count(what: &str, n: u32, min: u32, max: u32) -> Result<usize, String> {
    if n < min || n > max {
        return Err(format!("{what} must lie in {min}..={max}, got {n}"));
    }
    Ok(n as usize)
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    t: Vec<f64>,
    abs: Vec<f64>,
    gaussian: Vec<f64>,
}

/// `|A_01(t)|` for a two-level system on a degenerate bath of `bath_states`
/// with Gaussian coupling differences of width `sigma`, next to
/// `exp(-sigma^2 t^2 / 2)`.
pub fn decoherence_curve_json(bath_states: u32, sigma: f64, t_max: f64, n_steps: u32, seed: u32) -> Result<String, String> {
    let n_bath = check_count("bath_states", bath_states, 1, 100_000)?;
    let steps = check_count("n_steps", n_steps, 2, MAX_POINTS)?;
    if !(sigma > 0.0) || !(t_max > 0.0) || !t_max.is_finite() {
        return Err("sigma and t_max must be positive".into());
    }
    let spec = DiagonalInteractionSpec::from_model(
        vec![0.0, 1.0],
        n_bath,
        &CouplingModel::DiagonalGaussian { sigma },
        seed as u64,
    )
    .map_err(|e| e.to_string())?;
    let t: Vec<f64> = (0..steps).map(|i| t_max * i as f64 / (steps - 1) as f64).collect();
    let abs = t
        .iter()
        .map(|&t| decoherence_factor(&spec, 0, 1, t).map(|a| a.norm()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let gaussian = t.iter().map(|&t| (-(sigma * t).powi(2) / 2.0).exp()).collect();
    json(&Curve { t, abs, gaussian })
}

#[derive(Serialize)]
struct Survival {
    times: Vec<f64>,
    exact: Vec<f64>,
    wwa: Vec<f64>,
    gamma: f64,
    golden_rule: f64,
    max_deviation: f64,
}

/// Exact survival of one state decaying into a band of `n_final` states
/// against the exponential of the reduced generator, for `Gamma t` up to
/// `gamma_t_max`.
pub fn survival_json(coupling: f64, n_final: u32, gamma_t_max: f64, n_times: u32) -> Result<String, String> {
    let n_final = check_count("n_final", n_final, 3, 801)?;
    let n_times = check_count("n_times", n_times, 2, 2_000)?;
    if !(coupling > 0.0) || !(gamma_t_max > 0.0) {
        return Err("coupling and gamma_t_max must be positive".into());
    }
    let spec = DecayModelSpec::uniform_band(coupling, 1.0, n_final, 0.0, EpsilonMode::Limit { window: None })
        .map_err(|e| e.to_string())?;
    let gamma = wwa_matrix(&spec, 0).map_err(|e| e.to_string())?.decay[(0, 0)].re;
    if !(gamma > 0.0) {
        return Err("no decay for these parameters".into());
    }
    let times: Vec<f64> = (0..n_times).map(|i| gamma_t_max / gamma * i as f64 / (n_times - 1) as f64).collect();
    let cmp = wwa_vs_exact(&spec, 0, &times).map_err(|e| e.to_string())?;
    json(&Survival {
        golden_rule: 2.0 * std::f64::consts::PI * coupling * coupling * n_final as f64 / 2.0,
        gamma,
        max_deviation: cmp.max_survival_deviation,
        exact: cmp.exact_survival.into_iter().next().unwrap_or_default(),
        wwa: cmp.wwa_survival.into_iter().next().unwrap_or_default(),
        times,
    })
}

#[derive(Serialize)]
struct Scatter {
    d_gamma: Vec<f64>,
    d_mass: Vec<f64>,
    ellipse_65: Ellipse,
    ellipse_95: Ellipse,
    slope: Option<f64>,
    intercept: Option<f64>,
    slice_tol: f64,
    slice_count: usize,
    slice_sd_ratio: Option<f64>,
}

/// Ensemble of mass and width splittings for the two-state toy with 21
/// final-state pairs, interaction scale `scale` and on-shell enhancement.
pub fn scatter_json(n_samples: u32, scale: f64, enhancement: f64, cp_phase: f64, seed: u32) -> Result<String, String> {
    let n = check_count("n_samples", n_samples, 3, MAX_POINTS)?;
    if !(scale >= 0.0) || !(enhancement > 0.0) || !cp_phase.is_finite() {
        return Err("scale must be >= 0, enhancement > 0 and the phase finite".into());
    }
    let toy = KaonToy { pair_count: 21, cp_phase, ..KaonToy::default() };
    let toy = KaonToy { e0_offset: toy.spacing() / 4.0, ..toy };
    let (spec, sym) = toy.build(EpsilonMode::Limit { window: None }).map_err(|e| e.to_string())?;
    let model = InteractionModel::gaussian(scale, sym).with_enhancement(enhancement);
    let r = run_ensemble(&spec, &model, n, seed as u64).map_err(|e| e.to_string())?;
    let slice_tol = 0.1 * r.sd_gamma();
    let (slice_count, slice_sd_ratio) = match conditional_slice(&r, slice_tol) {
        SliceReport::InsufficientData { count } => (count, None),
        SliceReport::Stats { count, sd_dm, .. } => (count, (r.sd_mass() > 0.0).then(|| sd_dm / r.sd_mass())),
    };
    json(&Scatter {
        d_gamma: r.samples.iter().map(|s| s.delta_gamma).collect(),
        d_mass: r.samples.iter().map(|s| s.delta_mass).collect(),
        ellipse_65: r.ellipse_65,
        ellipse_95: r.ellipse_95,
        slope: r.regression_slope,
        intercept: r.regression_intercept,
        slice_tol,
        slice_count,
        slice_sd_ratio,
    })
}

#[wasm_bindgen]
pub fn decoherence_curve(bath_states: u32, sigma: f64, t_max: f64, n_steps: u32, seed: u32) -> Result<String, JsError> {
    decoherence_curve_json(bath_states, sigma, t_max, n_steps, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn survival(coupling: f64, n_final: u32, gamma_t_max: f64, n_times: u32) -> Result<String, JsError> {
    survival_json(coupling, n_final, gamma_t_max, n_times).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scatter(n_samples: u32, scale: f64, enhancement: f64, cp_phase: f64, seed: u32) -> Result<String, JsError> {
    scatter_json(n_samples, scale, enhancement, cp_phase, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    fn floats(v: &Value) -> Vec<f64> {
        v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    }

    #[test]
    fn decoherence_curve_starts_coherent_and_tracks_gaussian() {
        let v = parse(&decoherence_curve_json(512, 1.0, 3.0, 61, 1).unwrap());
        let (abs, g) = (floats(&v["abs"]), floats(&v["gaussian"]));
        assert_eq!(abs.len(), 61);
        assert!((abs[0] - 1.0).abs() < 1e-15);
        let worst = abs.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 3.0 / 512f64.sqrt(), "{worst}");
    }

    #[test]
    fn survival_rate_matches_golden_rule() {
        let v = parse(&survival_json(0.01, 201, 3.0, 31).unwrap());
        let (gamma, oracle) = (v["gamma"].as_f64().unwrap(), v["golden_rule"].as_f64().unwrap());
        assert!((gamma / oracle - 1.0).abs() < 0.03);
        assert_eq!(floats(&v["exact"]).len(), 31);
        assert!((floats(&v["wwa"])[30] - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn scatter_has_points_and_ellipses() {
        let v = parse(&scatter_json(200, 0.002, 10.0, 0.3, 5).unwrap());
        assert_eq!(floats(&v["d_gamma"]).len(), 200);
        let a65 = floats(&v["ellipse_65"]["semi_axes"]);
        let a95 = floats(&v["ellipse_95"]["semi_axes"]);
        assert!(a95[0] > a65[0]);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(decoherence_curve_json(0, 1.0, 1.0, 10, 0).is_err());
        assert!(survival_json(0.0, 201, 3.0, 10).is_err());
        assert!(scatter_json(1, 0.002, 10.0, 0.3, 0).is_err());
    }
}
