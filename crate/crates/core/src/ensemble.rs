//! Monte Carlo over bath realizations of the interaction: the scatter of
//! `(dM, dGamma)` pairs, weighted statistics, confidence ellipses and the
//! conditional slice near `dGamma = 0`.

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::quantum_core::{c, CMatrix, Operator};
use crate::supersystem::{boltzmann, random_hermitian};
use crate::symmetry::{check_cp_interaction, SymmetryMap};
use crate::weisskopf_wigner::{delta_lambda_for_interaction, DecayModelSpec, Kernel};

/// Fewest samples for which a conditional slice reports statistics.
pub const MIN_SLICE_SAMPLES: usize = 10;
/// Relative eigenvalue floor below which an ellipse is flagged degenerate.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// How the interaction blocks of each realization are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Complex Gaussian entries, Hermitian-completed, then CP-symmetrized.
    GaussianHermitianCp,
    /// Entries with real and imaginary parts of `+-1/sqrt(2)`, diagonal `+-1`,
    /// then CP-symmetrized.
    TwoPoint,
    /// Fixed blocks, one per bath state, used as given.
    Explicit(Vec<Operator>),
}

/// Thermal bath attached to the draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalBath {
    pub energies: Vec<f64>,
    pub kt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionModel {
    pub kind: ModelKind,
    /// Overall coupling scale; every block is multiplied by it.
    pub scale: f64,
    pub cp_map: SymmetryMap,
    /// Multiplier on couplings between initial and on-shell final states.
    pub on_shell_enhancement: f64,
    /// On-shell window for the enhancement; half the grid spacing if `None`.
    pub window: Option<f64>,
    /// Explicit bath spectrum; draws are then stratified over bath states.
    pub bath: Option<ThermalBath>,
}

impl InteractionModel {
    pub fn gaussian(scale: f64, cp_map: SymmetryMap) -> Self {
        Self {
            kind: ModelKind::GaussianHermitianCp,
            scale,
            cp_map,
            on_shell_enhancement: 1.0,
            window: None,
            bath: None,
        }
    }

    pub fn with_enhancement(mut self, factor: f64) -> Self {
        self.on_shell_enhancement = factor;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Draws one block. `bath_state` selects the explicit block.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        spec: &DecayModelSpec,
        bath_state: Option<usize>,
        rng: &mut R,
    ) -> Result<Operator> {
        let n = spec.dim();
        let unit = match &self.kind {
            ModelKind::Explicit(blocks) => {
                let b = bath_state.unwrap_or(0);
                let block = blocks
                    .get(b)
                    .ok_or_else(|| Error::Parameter(format!("no explicit block for bath state {b}")))?;
                if block.dim() != n {
                    return Err(Error::Size(format!("explicit block {b} has dim {}", block.dim())));
                }
                return Ok(block.scaled(self.scale));
            }
            ModelKind::GaussianHermitianCp => random_hermitian(rng, n, 1.0).into_entries(),
            ModelKind::TwoPoint => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let sign = |r: &mut R| if r.random::<bool>() { 1.0 } else { -1.0 };
                let mut m = CMatrix::zeros(n, n);
                for i in 0..n {
                    m[(i, i)] = c(sign(rng), 0.0);
                    for j in (i + 1)..n {
                        m[(i, j)] = c(s * sign(rng), s * sign(rng));
                        m[(j, i)] = m[(i, j)].conj();
                    }
                }
                m
            }
        };
        let mut m = unit * c(self.scale, 0.0);
        if self.on_shell_enhancement != 1.0 {
            let w = self.window.unwrap_or(spec.grid_spacing() / 2.0);
            let e0 = spec.e0();
            for &f in spec.finals() {
                if (spec.energies()[f] - e0).abs() <= w {
                    for &k in spec.initial() {
                        m[(k, f)] *= self.on_shell_enhancement;
                        m[(f, k)] *= self.on_shell_enhancement;
                    }
                }
            }
        }
        self.cp_map.cp_symmetrize(&Operator::hermitian(m)?)
    }
}

/// One realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterSample {
    pub id: usize,
    pub bath_state: Option<usize>,
    pub weight: f64,
    pub delta_mass: f64,
    pub delta_gamma: f64,
    /// Imaginary remainder of the two differences.
    pub imaginary_residue: f64,
}

/// Confidence ellipse in the `(dGamma, dM)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub level: f64,
    pub quantile: f64,
    /// `(dGamma, dM)`.
    pub center: [f64; 2],
    /// Major then minor semi-axis.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the `dGamma` axis, in `(-pi/2, pi/2]`.
    pub angle: f64,
    pub degenerate: bool,
}

/// Chi-squared quantile with two degrees of freedom.
pub fn chi2_2dof_quantile(level: f64) -> f64 {
    -2.0 * (1.0 - level).ln()
}

/// Weighted mean and population covariance of `(x, y)` pairs.
pub fn weighted_moments(points: &[[f64; 2]], weights: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
    let total: f64 = weights.iter().sum();
    let mut mean = [0.0; 2];
    for (p, &w) in points.iter().zip(weights) {
        mean[0] += w * p[0];
        mean[1] += w * p[1];
    }
    mean[0] /= total;
    mean[1] /= total;
    let mut cov = [[0.0; 2]; 2];
    for (p, &w) in points.iter().zip(weights) {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += w * d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    (mean, cov)
}

/// Ellipse `{x : (x - mu)^T C^{-1} (x - mu) <= q(level)}`.
pub fn ellipse_from_moments(mean: [f64; 2], cov: [[f64; 2]; 2], level: f64) -> Result<Ellipse> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter(format!("confidence level {level} outside (0, 1)")));
    }
    let q = chi2_2dof_quantile(level);
    let (a, b, d) = (cov[0][0], cov[0][1], cov[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l_max = (half_tr + disc).max(0.0);
    let l_min = (half_tr - disc).max(0.0);
    let mut angle = 0.5 * (2.0 * b).atan2(a - d);
    if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    Ok(Ellipse {
        level,
        quantile: q,
        center: mean,
        semi_axes: [(q * l_max).sqrt(), (q * l_min).sqrt()],
        angle,
        degenerate: l_max == 0.0 || l_min <= DEGENERACY_RATIO * l_max,
    })
}

/// Fits an ellipse to raw points with equal weights.
pub fn fit_points(points: &[[f64; 2]], level: f64) -> Result<Ellipse> {
    if points.len() < 3 {
        return Err(Error::Parameter("ellipse fit needs at least 3 samples".into()));
    }
    let (mean, cov) = weighted_moments(points, &vec![1.0; points.len()]);
    ellipse_from_moments(mean, cov, level)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterResult {
    pub samples: Vec<ScatterSample>,
    pub rejected: usize,
    /// `(dM, dGamma)` weighted means.
    pub mean_mass: f64,
    pub mean_gamma: f64,
    /// Covariance in `(dGamma, dM)` order.
    pub covariance: [[f64; 2]; 2],
    pub ellipse_65: Ellipse,
    pub ellipse_95: Ellipse,
    /// Slope of the weighted least-squares line `dM = a + slope * dGamma`.
    pub regression_slope: Option<f64>,
    pub regression_intercept: Option<f64>,
}

impl ScatterResult {
    fn from_samples(samples: Vec<ScatterSample>, rejected: usize) -> Result<Self> {
        let points: Vec<[f64; 2]> = samples.iter().map(|s| [s.delta_gamma, s.delta_mass]).collect();
        let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
        let (mean, covariance) = weighted_moments(&points, &weights);
        let (slope, intercept) = if covariance[0][0] > 0.0 {
            let slope = covariance[0][1] / covariance[0][0];
            (Some(slope), Some(mean[1] - slope * mean[0]))
        } else {
            (None, None)
        };
        Ok(Self {
            ellipse_65: ellipse_from_moments(mean, covariance, 0.65)?,
            ellipse_95: ellipse_from_moments(mean, covariance, 0.95)?,
            samples,
            rejected,
            mean_gamma: mean[0],
            mean_mass: mean[1],
            covariance,
            regression_slope: slope,
            regression_intercept: intercept,
        })
    }

    pub fn sd_mass(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn sd_gamma(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }

    pub fn correlation(&self) -> f64 {
        let den = (self.covariance[0][0] * self.covariance[1][1]).sqrt();
        if den > 0.0 {
            self.covariance[0][1] / den
        } else {
            0.0
        }
    }

    /// Writes `sample_id,weight,dM,dGamma` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "sample_id,weight,dM,dGamma")?;
        for s in &self.samples {
            writeln!(out, "{},{:e},{:e},{:e}", s.id, s.weight, s.delta_mass, s.delta_gamma)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            samples: self.samples.len(),
            rejected: self.rejected,
            mean_dm: self.mean_mass,
            mean_dgamma: self.mean_gamma,
            sd_dm: self.sd_mass(),
            sd_dgamma: self.sd_gamma(),
            correlation: self.correlation(),
            regression_slope: self.regression_slope,
            ellipse_65: self.ellipse_65,
            ellipse_95: self.ellipse_95,
        }
    }
}

/// Serializable digest of a [`ScatterResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub samples: usize,
    pub rejected: usize,
    pub mean_dm: f64,
    pub mean_dgamma: f64,
    pub sd_dm: f64,
    pub sd_dgamma: f64,
    pub correlation: f64,
    pub regression_slope: Option<f64>,
    pub ellipse_65: Ellipse,
    pub ellipse_95: Ellipse,
}

/// Splits `n` samples over bath states in proportion to `p` by largest
/// remainder, ties to the lower index.
fn stratify(p: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = p.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Draws `n_samples` interaction realizations and records
/// `(dM, dGamma)` for the pair `(K, bar K)` with `K` the first initial state.
/// Sample `i` uses stream `i` of a ChaCha8 generator seeded with `seed`.
pub fn run_ensemble(
    spec: &DecayModelSpec,
    model: &InteractionModel,
    n_samples: usize,
    seed: u64,
) -> Result<ScatterResult> {
    if n_samples < 2 {
        return Err(Error::Parameter("an ensemble needs at least 2 samples".into()));
    }
    if !(model.scale >= 0.0) || !model.scale.is_finite() {
        return Err(Error::Parameter(format!("coupling scale {} must be finite and >= 0", model.scale)));
    }
    model.cp_map.validate(spec.energies(), spec.initial())?;
    let k = spec.initial()[0];
    let kernel = Kernel::new(spec)?;

    let bath_weights = match (&model.bath, &model.kind) {
        (Some(bath), _) => Some(boltzmann(&bath.energies, bath.kt)?),
        (None, ModelKind::Explicit(blocks)) => Some(vec![1.0 / blocks.len().max(1) as f64; blocks.len()]),
        (None, _) => None,
    };
    if let (Some(p), ModelKind::Explicit(blocks)) = (&bath_weights, &model.kind) {
        if p.len() != blocks.len() {
            return Err(Error::Size(format!("{} bath states for {} explicit blocks", p.len(), blocks.len())));
        }
    }
    let assignment: Vec<(Option<usize>, f64)> = match &bath_weights {
        None => vec![(None, 1.0); n_samples],
        Some(p) => {
            let counts = stratify(p, n_samples);
            counts
                .iter()
                .enumerate()
                .flat_map(|(b, &cnt)| std::iter::repeat_n((Some(b), p[b] / cnt.max(1) as f64), cnt))
                .collect()
        }
    };

    let outcomes = map_indexed(n_samples, |i| -> Result<Option<ScatterSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (bath_state, weight) = assignment[i];
        let h = model.draw(spec, bath_state, &mut rng)?;
        if !check_cp_interaction(&h, &model.cp_map)?.passed {
            return Ok(None);
        }
        let d = delta_lambda_for_interaction(spec, &h, k, &model.cp_map, &kernel)?;
        Ok(Some(ScatterSample {
            id: i,
            bath_state,
            weight,
            delta_mass: d.delta_mass,
            delta_gamma: d.delta_gamma,
            imaginary_residue: d.imaginary_residue,
        }))
    });
    let mut samples = Vec::with_capacity(n_samples);
    let mut rejected = 0;
    for o in outcomes {
        match o? {
            Some(s) => samples.push(s),
            None => rejected += 1,
        }
    }
    if samples.len() < 2 {
        return Err(Error::Symmetry(format!(
            "{rejected} of {n_samples} draws failed the CP check"
        )));
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    for s in &mut samples {
        s.weight /= total;
    }
    ScatterResult::from_samples(samples, rejected)
}

pub fn ellipse_fit(result: &ScatterResult, level: f64) -> Result<Ellipse> {
    if result.samples.len() < 3 {
        return Err(Error::Parameter("ellipse fit needs at least 3 samples".into()));
    }
    ellipse_from_moments([result.mean_gamma, result.mean_mass], result.covariance, level)
}

/// Statistics of `dM` over samples with `|dGamma| <= gamma_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SliceReport {
    InsufficientData { count: usize },
    Stats { count: usize, weight: f64, mean_dm: f64, sd_dm: f64 },
}

pub fn conditional_slice(result: &ScatterResult, gamma_tol: f64) -> SliceReport {
    let inside: Vec<&ScatterSample> = result
        .samples
        .iter()
        .filter(|s| s.delta_gamma.abs() <= gamma_tol)
        .collect();
    if inside.len() < MIN_SLICE_SAMPLES {
        return SliceReport::InsufficientData { count: inside.len() };
    }
    let weight: f64 = inside.iter().map(|s| s.weight).sum();
    let mean = inside.iter().map(|s| s.weight * s.delta_mass).sum::<f64>() / weight;
    let var = inside.iter().map(|s| s.weight * (s.delta_mass - mean).powi(2)).sum::<f64>() / weight;
    SliceReport::Stats {
        count: inside.len(),
        weight,
        mean_dm: mean,
        sd_dm: var.sqrt(),
    }
}

/// SVG scatter with both ellipses, the origin cross, the regression line
/// and, if given, the band `|dGamma| <= slice_tol`.
pub fn scatter_svg(result: &ScatterResult, slice_tol: Option<f64>) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 40.0;
    let xs = result.samples.iter().map(|s| s.delta_gamma);
    let ys = result.samples.iter().map(|s| s.delta_mass);
    let e = &result.ellipse_95;
    let reach = e.semi_axes[0];
    let span = |v: Box<dyn Iterator<Item = f64> + '_>, centre: f64| {
        v.fold((centre - reach, centre + reach), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (mut x0, mut x1) = span(Box::new(xs.chain([0.0])), e.center[0]);
    let (mut y0, mut y1) = span(Box::new(ys.chain([0.0])), e.center[1]);
    if x1 - x0 <= 0.0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = (SIZE - 2.0 * PAD) / (x1 - x0);
    let sy = (SIZE - 2.0 * PAD) / (y1 - y0);
    let px = |x: f64| PAD + (x - x0) * sx;
    let py = |y: f64| SIZE - PAD - (y - y0) * sy;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(tol) = slice_tol {
        let (a, b) = (px(-tol).max(PAD), px(tol).min(SIZE - PAD));
        let _ = writeln!(
            s,
            r##"<rect id="conditional-band" x="{a:.2}" y="{PAD}" width="{:.2}" height="{:.2}" fill="#f2c14e" fill-opacity="0.3"/>"##,
            (b - a).max(0.5),
            SIZE - 2.0 * PAD
        );
    }
    let _ = writeln!(s, r##"<g id="samples" fill="#4a6fa5" fill-opacity="0.5">"##);
    for p in &result.samples {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6"/>"#, px(p.delta_gamma), py(p.delta_mass));
    }
    let _ = writeln!(s, "</g>");
    for (id, el, dash) in [("ellipse-65", &result.ellipse_65, ""), ("ellipse-95", &result.ellipse_95, r#" stroke-dasharray="6 4""#)] {
        // Sample the ellipse in data space so unequal axis scales stay correct.
        let pts: Vec<String> = (0..=96)
            .map(|i| {
                let t = i as f64 / 96.0 * std::f64::consts::TAU;
                let (ca, sa) = (el.angle.cos(), el.angle.sin());
                let (u, v) = (el.semi_axes[0] * t.cos(), el.semi_axes[1] * t.sin());
                format!("{:.2},{:.2}", px(el.center[0] + u * ca - v * sa), py(el.center[1] + u * sa + v * ca))
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline id="{id}" points="{}" fill="none" stroke="#c0392b" stroke-width="1.5"{dash}/>"##,
            pts.join(" ")
        );
    }
    if let (Some(m), Some(b)) = (result.regression_slope, result.regression_intercept) {
        let _ = writeln!(
            s,
            r##"<line id="regression-line" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#2d8659" stroke-width="1.5"/>"##,
            px(x0),
            py(b + m * x0),
            px(x1),
            py(b + m * x1)
        );
    }
    let (ox, oy) = (px(0.0), py(0.0));
    let _ = writeln!(
        s,
        r#"<g id="origin-cross" stroke="black" stroke-width="1.5"><line x1="{:.2}" y1="{oy:.2}" x2="{:.2}" y2="{oy:.2}"/><line x1="{ox:.2}" y1="{:.2}" x2="{ox:.2}" y2="{:.2}"/></g>"#,
        ox - 8.0,
        ox + 8.0,
        oy - 8.0,
        oy + 8.0
    );
    let _ = writeln!(
        s,
        r#"<circle id="mean-dot" cx="{:.2}" cy="{:.2}" r="3.5" fill="black"/>"#,
        px(result.mean_gamma),
        py(result.mean_mass)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="13" text-anchor="middle">dGamma</text>"#,
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.0}" font-family="sans-serif" font-size="13" transform="rotate(-90 14 {:.0})" text-anchor="middle">dM</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weisskopf_wigner::{EpsilonMode, KaonToy};
    use rand_distr::{Distribution, StandardNormal};

    fn demo() -> (DecayModelSpec, SymmetryMap) {
        let toy = KaonToy { pair_count: 21, ..KaonToy::default() };
        let toy = KaonToy { e0_offset: toy.spacing() / 4.0, ..toy };
        toy.build(EpsilonMode::Limit { window: None }).unwrap()
    }

    #[test]
    fn quantiles() {
        assert!((chi2_2dof_quantile(0.65) - 2.0996).abs() < 1e-4);
        assert!((chi2_2dof_quantile(0.95) - 5.9915).abs() < 1e-4);
    }

    #[test]
    fn zero_scale_collapses_to_origin() {
        let (spec, sym) = demo();
        let r = run_ensemble(&spec, &InteractionModel::gaussian(0.0, sym), 20, 1).unwrap();
        assert!(r.samples.iter().all(|s| s.delta_mass.abs() < 1e-15 && s.delta_gamma.abs() < 1e-15));
        assert!(r.ellipse_95.degenerate);
    }

    #[test]
    fn reproducible_and_real() {
        let (spec, sym) = demo();
        let model = InteractionModel::gaussian(0.003, sym).with_enhancement(5.0);
        let a = run_ensemble(&spec, &model, 64, 9).unwrap();
        let b = run_ensemble(&spec, &model, 64, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|s| s.imaginary_residue <= 1e-12));
        assert!((a.samples.iter().map(|s| s.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_the_scale_doubles_every_sample() {
        let (spec, sym) = demo();
        let model = InteractionModel::gaussian(0.002, sym);
        let one = run_ensemble(&spec, &model, 50, 3).unwrap();
        let two = run_ensemble(&spec, &model.clone().with_scale(0.004), 50, 3).unwrap();
        for (a, b) in one.samples.iter().zip(&two.samples) {
            let norm = (a.delta_mass.hypot(a.delta_gamma)) * 2.0;
            let dev = (b.delta_mass - 2.0 * a.delta_mass).hypot(b.delta_gamma - 2.0 * a.delta_gamma);
            assert!(dev <= 1e-10 * norm, "{dev} vs {norm}");
        }
    }

    #[test]
    fn moments_match_two_point_formula() {
        let (spec, sym) = demo();
        let mut model = InteractionModel::gaussian(0.002, sym);
        model.kind = ModelKind::TwoPoint;
        let r = run_ensemble(&spec, &model, 40, 2).unwrap();
        // Covariance from pairwise differences, an independent route.
        let n = r.samples.len() as f64;
        let mut cxy = 0.0;
        for a in &r.samples {
            for b in &r.samples {
                cxy += (a.delta_gamma - b.delta_gamma) * (a.delta_mass - b.delta_mass);
            }
        }
        cxy /= 2.0 * n * n;
        assert!((cxy - r.covariance[0][1]).abs() <= 1e-10 * r.sd_gamma() * r.sd_mass());
    }

    #[test]
    fn stratified_weights_follow_boltzmann() {
        let (spec, sym) = demo();
        let blocks: Vec<Operator> = {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..3)
                .map(|_| sym.cp_symmetrize(&random_hermitian(&mut rng, spec.dim(), 1.0)).unwrap())
                .collect()
        };
        let model = InteractionModel {
            kind: ModelKind::Explicit(blocks),
            bath: Some(ThermalBath { energies: vec![0.0, 0.5, 1.0], kt: 0.5 }),
            ..InteractionModel::gaussian(0.002, sym)
        };
        let r = run_ensemble(&spec, &model, 100, 0).unwrap();
        let p = boltzmann(&[0.0, 0.5, 1.0], 0.5).unwrap();
        for (b, pb) in p.iter().enumerate() {
            let w: f64 = r.samples.iter().filter(|s| s.bath_state == Some(b)).map(|s| s.weight).sum();
            assert!((w - pb).abs() < 1e-12);
        }
        assert_eq!(stratify(&[0.5, 0.25, 0.25], 7), vec![3, 2, 2]);
    }

    #[test]
    fn explicit_non_cp_blocks_are_rejected() {
        let (spec, sym) = demo();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let good = sym.cp_symmetrize(&random_hermitian(&mut rng, spec.dim(), 1.0)).unwrap();
        let bad = random_hermitian(&mut rng, spec.dim(), 1.0);
        let model = InteractionModel {
            kind: ModelKind::Explicit(vec![good, bad]),
            ..InteractionModel::gaussian(0.002, sym)
        };
        let r = run_ensemble(&spec, &model, 10, 0).unwrap();
        assert_eq!(r.rejected, 5);
        assert_eq!(r.samples.len(), 5);
    }

    #[test]
    fn conditioning_shrinks_mass_spread() {
        let (spec, sym) = demo();
        let model = InteractionModel::gaussian(0.002, sym).with_enhancement(10.0);
        let r = run_ensemble(&spec, &model, 1000, 5).unwrap();
        match conditional_slice(&r, f64::INFINITY) {
            SliceReport::Stats { count, sd_dm, .. } => {
                assert_eq!(count, 1000);
                assert!((sd_dm - r.sd_mass()).abs() <= 1e-12 * r.sd_mass());
            }
            other => panic!("{other:?}"),
        }
        match conditional_slice(&r, 0.1 * r.sd_gamma()) {
            SliceReport::Stats { sd_dm, .. } => assert!(sd_dm < 0.5 * r.sd_mass()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(conditional_slice(&r, 0.0), SliceReport::InsufficientData { .. }));
    }

    #[test]
    fn gaussian_conditional_variance_oracle() {
        // Bivariate normal with correlation 0.8: sd(y | x ~ 0) = sd(y) sqrt(1 - rho^2).
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rho: f64 = 0.8;
        let samples: Vec<ScatterSample> = (0..20_000)
            .map(|id| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                ScatterSample {
                    id,
                    bath_state: None,
                    weight: 1.0 / 20_000.0,
                    delta_gamma: a,
                    delta_mass: rho * a + (1.0 - rho * rho).sqrt() * b,
                    imaginary_residue: 0.0,
                }
            })
            .collect();
        let r = ScatterResult::from_samples(samples, 0).unwrap();
        match conditional_slice(&r, 0.1) {
            SliceReport::Stats { sd_dm, .. } => assert!((sd_dm - 0.6).abs() < 0.05, "{sd_dm}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ellipse_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> = (0..50_000)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let e = fit_points(&pts, 0.95).unwrap();
        assert!((e.semi_axes[0] / 5.99f64.sqrt() - 1.0).abs() < 0.03);
        assert!((e.semi_axes[1] / 5.99f64.sqrt() - 1.0).abs() < 0.03);

        assert!(fit_points(&[[1.0, 2.0]; 5], 0.95).unwrap().degenerate);
        assert!(fit_points(&[[1.0, 2.0]; 2], 0.95).is_err());

        let stretched: Vec<[f64; 2]> = pts.iter().take(500).map(|p| [3.0 * p[0], 0.5 * p[1] + 0.2 * p[0]]).collect();
        let base = fit_points(&stretched, 0.65).unwrap();
        let theta: f64 = 0.7;
        let (ct, st) = (theta.cos(), theta.sin());
        let rotated: Vec<[f64; 2]> = stretched.iter().map(|p| [ct * p[0] - st * p[1], st * p[0] + ct * p[1]]).collect();
        let rot = fit_points(&rotated, 0.65).unwrap();
        let mut d = rot.angle - base.angle - theta;
        d -= (d / std::f64::consts::PI).round() * std::f64::consts::PI;
        assert!(d.abs() < 1e-10);
        assert!((rot.semi_axes[0] - base.semi_axes[0]).abs() < 1e-10 * base.semi_axes[0]);
    }

    #[test]
    fn svg_has_all_elements() {
        let (spec, sym) = demo();
        let r = run_ensemble(&spec, &InteractionModel::gaussian(0.002, sym), 50, 1).unwrap();
        let svg = scatter_svg(&r, Some(0.1 * r.sd_gamma()));
        for id in ["origin-cross", "ellipse-65", "ellipse-95", "regression-line", "conditional-band", "mean-dot"] {
            assert!(svg.contains(&format!("id=\"{id}\"")), "{id}");
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("sample_id,weight,dM,dGamma\n"));
    }
}
