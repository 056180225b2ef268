//! JSON run configuration. Any key may be omitted; command-line flags win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use plrecon::fit::StepSize;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: Option<String>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub final_activation: Option<bool>,
    #[serde(rename = "T")]
    pub radius: Option<f64>,
    #[serde(rename = "N")]
    pub samples: Option<usize>,
    pub h: Option<f64>,
    pub tol: Option<f64>,
    pub ndirs: Option<usize>,
    pub radii_mode: Option<RadiiMode>,
    pub shrink: Option<f64>,
    pub reg: Option<RegKind>,
    pub lambda: Option<f64>,
    pub lr: Option<LearningRate>,
    pub iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub mc: Option<usize>,
    pub pairs: Option<PairPolicy>,
    pub p: Option<f64>,
    pub lambda_grid: Option<Vec<f64>>,
    pub region_samples: Option<usize>,
    pub net: Option<PathBuf>,
    pub probes: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RadiiMode {
    Disjoint,
    Gershgorin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    None,
    #[value(name = "all_overlapping")]
    AllOverlapping,
}

/// A positive number or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "LrValue")]
pub struct LearningRate(pub StepSize<f64>);

#[derive(Deserialize)]
#[serde(untagged)]
enum LrValue {
    Number(f64),
    Word(String),
}

impl TryFrom<LrValue> for LearningRate {
    type Error = String;

    fn try_from(v: LrValue) -> Result<Self, String> {
        match v {
            LrValue::Number(x) => Self::fixed(x),
            LrValue::Word(s) => s.parse(),
        }
    }
}

impl LearningRate {
    fn fixed(x: f64) -> Result<Self, String> {
        if x > 0.0 && x.is_finite() {
            Ok(Self(StepSize::Fixed(x)))
        } else {
            Err(format!("learning rate must be positive, got {x}"))
        }
    }
}

impl FromStr for LearningRate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self(StepSize::Auto));
        }
        let x: f64 = s.parse().map_err(|_| format!("expected a number or `auto`, got {s:?}"))?;
        Self::fixed(x)
    }
}

impl fmt::Display for LearningRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            StepSize::Auto => f.write_str("auto"),
            StepSize::Fixed(x) => write!(f, "{x}"),
        }
    }
}

pub fn require<V>(value: Option<V>, name: &str) -> anyhow::Result<V> {
    match value {
        Some(v) => Ok(v),
        None => bail!("missing --{name} (flag or config key)"),
    }
}
