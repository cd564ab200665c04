//! Run configuration. A config file holds one optional table per
//! subcommand; each subcommand reads its own table and fills in defaults.

use radbath::supersystem::CouplingModel;
use radbath::weisskopf_wigner::{EpsilonMode, KaonToy};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub decohere: Option<DecohereConfig>,
    pub wwa: Option<WwaConfig>,
    pub ensemble: Option<EnsembleConfig>,
    pub symmetry: Option<SymmetryConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Regularization mode as written in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EpsKind {
    Finite,
    Limit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsConfig {
    pub mode: Option<EpsKind>,
    /// Finite-mode epsilon; a tenth of the grid spacing when absent.
    pub epsilon: Option<f64>,
    /// Limit-mode on-shell half-window; each cell's half-width when absent.
    pub window: Option<f64>,
}

impl EpsConfig {
    pub fn kind(&self) -> EpsKind {
        self.mode.unwrap_or(EpsKind::Finite)
    }

    pub fn to_mode(&self, kind: EpsKind) -> EpsilonMode {
        match kind {
            EpsKind::Finite => EpsilonMode::Finite { epsilon: self.epsilon },
            EpsKind::Limit => EpsilonMode::Limit { window: self.window },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecohereConfig {
    pub seed: u64,
    pub system_energies: Vec<f64>,
    pub bath_states: usize,
    pub coupling: CouplingModel,
    /// Thermal bath spectrum; a degenerate bath with uniform weights if absent.
    pub bath_energies: Option<Vec<f64>>,
    pub kt: Option<f64>,
    pub levels: [usize; 2],
    pub t_max: f64,
    pub n_steps: usize,
    /// Defaults to five coherence times of the coupling model.
    pub burn_in: Option<f64>,
    pub checks: DecohereChecks,
}

impl Default for DecohereConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            system_energies: vec![0.0, 1.0],
            bath_states: 512,
            coupling: CouplingModel::DiagonalGaussian { sigma: 1.0 },
            bath_energies: None,
            kt: None,
            levels: [0, 1],
            t_max: 50.0,
            n_steps: 2001,
            burn_in: None,
            checks: DecohereChecks::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecohereChecks {
    /// Require `|A| < below` at time `at`.
    pub magnitude_below: Option<MagnitudeCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnitudeCheck {
    pub at: f64,
    pub below: f64,
}

/// Decay system: a single initial state over a uniform band, or the
/// two-state toy with conjugate final-state pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    UniformBand {
        coupling: f64,
        half_width: f64,
        n_final: usize,
        #[serde(default)]
        e0: f64,
    },
    KaonToy {
        #[serde(default = "defaults::pair_count")]
        pair_count: usize,
        #[serde(default = "defaults::half_width")]
        half_width: f64,
        #[serde(default)]
        e0_offset: f64,
        #[serde(default = "defaults::coupling")]
        coupling: f64,
        #[serde(default = "defaults::cp_phase")]
        cp_phase: f64,
        #[serde(default = "defaults::cross_ratio")]
        cross_ratio: f64,
    },
}

mod defaults {
    use radbath::weisskopf_wigner::KaonToy;

    pub fn pair_count() -> usize {
        KaonToy::default().pair_count
    }
    pub fn half_width() -> f64 {
        KaonToy::default().half_width
    }
    pub fn coupling() -> f64 {
        KaonToy::default().coupling
    }
    pub fn cp_phase() -> f64 {
        KaonToy::default().cp_phase
    }
    pub fn cross_ratio() -> f64 {
        KaonToy::default().cross_ratio
    }
    pub fn samples() -> usize {
        2000
    }
    pub fn one() -> f64 {
        1.0
    }
}

impl SystemConfig {
    pub fn kaon_toy(&self) -> Option<KaonToy> {
        match *self {
            SystemConfig::KaonToy { pair_count, half_width, e0_offset, coupling, cp_phase, cross_ratio } => {
                Some(KaonToy { pair_count, half_width, e0_offset, coupling, cp_phase, cross_ratio })
            }
            SystemConfig::UniformBand { .. } => None,
        }
    }
}

/// Random interaction drawn for a single bath state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InteractionConfig {
    #[default]
    None,
    /// Gaussian Hermitian entries, CP-symmetrized over the toy's pairs.
    GaussianCp {
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Gaussian Hermitian entries with no symmetry imposed.
    Gaussian {
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WwaConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub interaction: InteractionConfig,
    #[serde(default)]
    pub eps: EpsConfig,
    /// Report both regularization modes.
    #[serde(default)]
    pub both_modes: bool,
    pub exact: Option<ExactConfig>,
    #[serde(default)]
    pub checks: WwaChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactConfig {
    /// Comparison horizon in units of the largest decay time.
    pub gamma_t_max: f64,
    pub n_times: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self { gamma_t_max: 3.0, n_times: 301 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WwaChecks {
    /// Relative tolerance on the band decay rate against `2 pi g^2 N_f / 2W`.
    pub golden_rule_rel_tol: Option<f64>,
    /// Require `|dLambda| <= tol * max |Lambda|`.
    pub delta_lambda_zero_tol: Option<f64>,
    /// Bound on the absolute exact-vs-WWA survival deviation.
    pub max_survival_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub eps: EpsConfig,
    pub model: EnsembleModelConfig,
    pub bath: Option<BathConfig>,
    #[serde(default = "defaults::samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Slice half-width as a fraction of sd(dGamma).
    #[serde(default = "slice_fraction")]
    pub slice_fraction: f64,
    #[serde(default)]
    pub checks: EnsembleChecks,
}

fn slice_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleModelKind {
    GaussianCp,
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleModelConfig {
    pub kind: EnsembleModelKind,
    pub scale: f64,
    #[serde(default = "defaults::one")]
    pub on_shell_enhancement: f64,
    pub window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub energies: Vec<f64>,
    pub kt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleChecks {
    /// Require sd(dM | slice) <= ratio * sd(dM).
    pub slice_sd_ratio_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub interaction: InteractionConfig,
    #[serde(default)]
    pub eps: EpsConfig,
    /// Entries `[row, col, re, im]` added to the system Hamiltonian (with
    /// their Hermitian mirrors) after construction.
    #[serde(default)]
    pub perturbations: Vec<[f64; 4]>,
    /// Label the classification must match, e.g. `"CP-invariant"`.
    pub expect_case: Option<String>,
}

/// Shipped example configs, addressable by name.
pub const DEMOS: [(&str, &str); 4] = [
    ("decohere-demo", include_str!("../configs/decohere-demo.toml")),
    ("golden-rule", include_str!("../configs/golden-rule.toml")),
    ("kaon-cpt", include_str!("../configs/kaon-cpt.toml")),
    ("cp-invariant-null", include_str!("../configs/cp-invariant-null.toml")),
];

pub fn demo(name: &str) -> Option<&'static str> {
    DEMOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_parses() {
        for (name, text) in DEMOS {
            ExperimentConfig::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let err = ExperimentConfig::from_toml("[decohere]\nbath_sates = 4\n").unwrap_err();
        assert!(err.to_string().contains("bath_sates"), "{err}");
    }

    #[test]
    fn missing_table_defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml("[decohere]\nbath_states = 8\n").unwrap();
        let d = cfg.decohere.unwrap();
        assert_eq!(d.bath_states, 8);
        assert_eq!(d.levels, [0, 1]);
    }

    #[test]
    fn kaon_defaults_match_library() {
        let cfg = ExperimentConfig::from_toml(
            "[symmetry]\nsystem = { kind = \"kaon-toy\" }\n",
        )
        .unwrap();
        assert_eq!(cfg.symmetry.unwrap().system.kaon_toy(), Some(KaonToy::default()));
    }

    #[test]
    fn effective_config_round_trips() {
        for (_, text) in DEMOS {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            let again = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(again, cfg);
        }
    }
}
