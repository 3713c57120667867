//! JSON run configuration.
//!
//! ```json
//! {
//!   "mode": "fit",
//!   "seed": 1,
//!   "out_dir": "out",
//!   "fit": {
//!     "input": "data.csv",
//!     "delta": 3,
//!     "estimator": "pd_emee",
//!     "moderators": [{"source": "day_index", "transform": "identity"}],
//!     "controls": [{"source": {"column": "ctl_audit"}}],
//!     "numerator": "auto",
//!     "inference": {"eta": 0.05, "residual_correction": true, "t_critical": true}
//!   },
//!   "simulate": {
//!     "generative": {"n": 100, "t": 100, "delta": 3, "p_a": 0.2},
//!     "estimators": ["pd_emee", "emee", "gee_ind", "gee_exch"],
//!     "moderated": false,
//!     "reps": 1000
//!   },
//!   "sweep": {
//!     "generative": {"n": 100, "t": 100, "delta": 3, "p_a": 0.2},
//!     "axis": "delta",
//!     "grid": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
//!     "reps": 1000
//!   }
//! }
//! ```
//!
//! Only the section matching `mode` is required; `--mode`, `--out-dir`,
//! `--seed`, `--reps` and `--threads` flags override their config
//! counterparts.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fit,
    Simulate,
    Sweep,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fit" => Ok(Mode::Fit),
            "simulate" => Ok(Mode::Simulate),
            "sweep" => Ok(Mode::Sweep),
            other => Err(format!("unknown mode `{other}` (fit|simulate|sweep)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    PdEmee,
    Emee,
    RefRegimeK { k: usize },
    RefRegimeKEmee { k: usize },
    GeeInd,
    GeeExch,
}

impl EstimatorChoice {
    pub fn is_gee(&self) -> bool {
        matches!(self, EstimatorChoice::GeeInd | EstimatorChoice::GeeExch)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorChoice {
    /// Design probability when randomization is constant, else a logistic
    /// fit on the moderators.
    #[default]
    Auto,
    Constant {
        value: f64,
    },
    EmpiricalMean,
    LogisticOnS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceChoice {
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_true")]
    pub residual_correction: bool,
    #[serde(default = "default_true")]
    pub t_critical: bool,
}

fn default_eta() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl Default for InferenceChoice {
    fn default() -> Self {
        InferenceChoice {
            eta: 0.05,
            residual_correction: true,
            t_critical: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub input: PathBuf,
    pub delta: usize,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorChoice,
    /// Moderator terms beyond the intercept; empty = fully marginal.
    #[serde(default)]
    pub moderators: Vec<crate::schema::Term>,
    /// Control terms beyond the intercept; `null` selects every `ctl_*`
    /// column in the file.
    #[serde(default)]
    pub controls: Option<Vec<crate::schema::Term>>,
    #[serde(default)]
    pub numerator: NumeratorChoice,
    #[serde(default)]
    pub inference: InferenceChoice,
}

fn default_estimator() -> EstimatorChoice {
    EstimatorChoice::PdEmee
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeChoice {
    pub n: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    pub delta: usize,
    pub p_a: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn default_t() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub generative: GenerativeChoice,
    #[serde(default = "default_simulate_estimators")]
    pub estimators: Vec<EstimatorChoice>,
    /// Use `S = (1, Z)` instead of the fully marginal `S = 1`.
    #[serde(default)]
    pub moderated: bool,
    pub reps: usize,
}

fn default_simulate_estimators() -> Vec<EstimatorChoice> {
    vec![
        EstimatorChoice::PdEmee,
        EstimatorChoice::Emee,
        EstimatorChoice::GeeInd,
        EstimatorChoice::GeeExch,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Delta,
    RandProb,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub generative: GenerativeChoice,
    pub axis: Axis,
    pub grid: Vec<f64>,
    pub reps: usize,
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Check that the section matching `mode` is present.
    pub fn validate(&self) -> CliResult<()> {
        let ok = match self.mode {
            Mode::Fit => self.fit.is_some(),
            Mode::Simulate => self.simulate.is_some(),
            Mode::Sweep => self.sweep.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "mode `{:?}` requires the matching config section",
                self.mode
            )))
        }
    }
}
