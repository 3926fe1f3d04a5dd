//! Experiment configuration: one JSON document with `model`, `run`,
//! `checks` and `output` sections. Every field has an explicit default.

use std::path::PathBuf;

use gcstein::bounds::{BoundMode, DriftMode};
use gcstein::{ClockSpec, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: default_model(),
            run: RunSection::default(),
            checks: ChecksSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn default_model() -> ModelConfig {
    ModelConfig::Gg1 {
        arrival: ClockSpec::exponential(0.8),
        service: ClockSpec::exponential(1.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub events: u64,
    /// Events discarded before measuring; `null` picks a default from the run length.
    pub burn_in: Option<u64>,
    pub batches: usize,
    pub confidence: f64,
    pub seed: u64,
    /// Independent replications, each with `events` events.
    pub replications: usize,
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            events: 1_000_000,
            burn_in: None,
            batches: 32,
            confidence: 0.99,
            seed: 1,
            replications: 1,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    /// Pass threshold in standard errors.
    pub threshold: f64,
    /// Residual moment orders for the identity suite.
    pub moments: Vec<u32>,
    pub bar: BarChecks,
    pub stein: SteinChecks,
    pub bound: BoundChecks,
    pub w1: W1Checks,
    pub sweep: SweepChecks,
    pub rbm: RbmChecks,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            moments: vec![2, 3],
            bar: BarChecks::default(),
            stein: SteinChecks::default(),
            bound: BoundChecks::default(),
            w1: W1Checks::default(),
            sweep: SweepChecks::default(),
            rbm: RbmChecks::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarLibrary {
    Full,
    Compensated,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarChecks {
    pub library: BarLibrary,
    /// Functions for the expansion checks (G/G/1 and JSQ): any of `x_sq`,
    /// `tanh`, `log_quadratic`, `stein_identity`, `stein_min_2`.
    pub extraction: Vec<String>,
}

impl Default for BarChecks {
    fn default() -> Self {
        Self {
            library: BarLibrary::Both,
            extraction: vec!["x_sq".into(), "tanh".into(), "stein_identity".into()],
        }
    }
}

/// Piecewise-linear test function through the given points, extended
/// linearly past the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HSpec {
    pub id: String,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteinChecks {
    pub h: Vec<HSpec>,
    pub grid_points: usize,
    /// Write the `(x, f, f1, f2, f3)` grid of every solution.
    pub dump_grid: bool,
}

impl Default for SteinChecks {
    fn default() -> Self {
        Self {
            h: vec![
                HSpec {
                    id: "identity".into(),
                    points: vec![[0.0, 0.0], [1.0, 1.0]],
                },
                HSpec {
                    id: "min_2".into(),
                    points: vec![[0.0, 0.0], [2.0, 2.0], [3.0, 2.0]],
                },
            ],
            grid_points: 10_000,
            dump_grid: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundModeConfig {
    Crude,
    CrudeRoot,
    Simulated,
}

impl From<BoundModeConfig> for BoundMode {
    fn from(m: BoundModeConfig) -> Self {
        match m {
            BoundModeConfig::Crude => BoundMode::Crude,
            BoundModeConfig::CrudeRoot => BoundMode::CrudeRoot,
            BoundModeConfig::Simulated => BoundMode::Simulated,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundChecks {
    pub mode: BoundModeConfig,
    /// Known `E(R_a | X = 0)`; when absent in simulated mode it is estimated.
    pub conditional_residual: Option<f64>,
}

impl Default for BoundChecks {
    fn default() -> Self {
        Self {
            mode: BoundModeConfig::Simulated,
            conditional_residual: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct W1Checks {
    pub samples: usize,
    /// Mean number of events between stationary samples.
    pub spacing: u64,
    pub burn_in: u64,
    pub resamples: usize,
    pub confidence: f64,
    /// Moving-block length of the bootstrap; 1 is the ordinary bootstrap.
    pub block: usize,
}

impl Default for W1Checks {
    fn default() -> Self {
        Self {
            samples: 100_000,
            spacing: 100,
            burn_in: 1_000_000,
            resamples: 200,
            confidence: 0.99,
            block: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepChecks {
    pub rhos: Vec<f64>,
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for SweepChecks {
    fn default() -> Self {
        Self {
            rhos: vec![0.8, 0.9, 0.95],
            slope_min: 0.7,
            slope_max: 1.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbmChecks {
    pub dt: f64,
    pub drift_mode: DriftMode,
    /// Length of the dumped path.
    pub path_horizon: f64,
    pub burn_in: f64,
    /// Measured horizon of the averages and of the step-halving check.
    pub horizon: f64,
}

impl Default for RbmChecks {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            drift_mode: DriftMode::GeneratorConsistent,
            path_horizon: 100.0,
            burn_in: 500.0,
            horizon: 20_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; falls back to `GCSTEIN_OUT_DIR`, then `gcstein-out`.
    pub dir: Option<PathBuf>,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            svg: true,
        }
    }
}

impl Config {
    /// Parses a config, reporting the path of the offending field on error.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
