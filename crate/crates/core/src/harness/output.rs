use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};

pub const FORMAT_VERSION: u32 = 1;

/// One equal-width histogram bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
}

/// Equal-width bins over `[min, max]`; the last bin is closed. All-equal
/// samples get one bin widened to `x +- 0.5`.
pub fn histogram(samples: &[f64], bins: usize) -> Vec<Bin> {
    assert!(bins >= 1, "at least one bin");
    if samples.is_empty() {
        return Vec::new();
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![Bin { left: lo - 0.5, right: lo + 0.5, count: samples.len() as u64 }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            left: lo + width * i as f64,
            right: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for &x in samples {
        let i = (((x - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

/// Writes `bin_left,bin_right,count` rows for [`histogram`].
pub fn emit_histogram(samples: &[f64], bins: usize, path: &Path) -> Result<Vec<Bin>, HarnessError> {
    if bins == 0 {
        return Err(HarnessError::Config("histogram needs at least one bin".into()));
    }
    let hist = histogram(samples, bins);
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    w.write_record(["bin_left", "bin_right", "count"]).map_err(|e| HarnessError::io(path, e))?;
    for b in &hist {
        w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])
            .map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(hist)
}

/// Outcome of a fresh goodness-of-fit check of one program at one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub theta: Vec<f64>,
    pub samples: usize,
    pub test: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    /// Mean, variance, skewness and excess kurtosis of the program's output.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub moments: Option<[f64; 4]>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl TestResult {
    pub fn failed(theta: &[f64], samples: usize, test: &str, error: String) -> Self {
        TestResult {
            theta: theta.to_vec(),
            samples,
            test: test.to_string(),
            statistic: None,
            p_value: None,
            moments: None,
            passed: false,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub index: usize,
    pub seed: u64,
    pub best_program: String,
    /// `None` when no evaluated program had finite penalty.
    pub best_log_penalty: Option<f64>,
    pub best_log_prior: Option<f64>,
    pub acceptance_rate: f64,
    pub iterations_run: usize,
    /// Current-state log penalty, thinned to at most 1000 points.
    pub trace: Vec<Option<f64>>,
    pub trace_stride: usize,
    pub train: Vec<TestResult>,
    pub held_out: Vec<TestResult>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramFile {
    pub label: String,
    pub source: String,
    pub theta: Vec<f64>,
    pub path: PathBuf,
}

/// Experiment report; every field is recomputable from `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub task: String,
    pub config: ExperimentConfig,
    pub chain_seeds: Vec<u64>,
    pub training_settings: Vec<Vec<f64>>,
    pub held_out_settings: Vec<Vec<f64>>,
    pub best_chain: usize,
    pub best_program: String,
    pub best_log_penalty: Option<f64>,
    pub train: Vec<TestResult>,
    pub held_out: Vec<TestResult>,
    /// True when any chain's best program passes every check.
    pub any_chain_passed: bool,
    pub chains: Vec<ChainSummary>,
    pub histograms: Vec<HistogramFile>,
    /// Task-specific findings.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub(crate) fn thin(trace: &[f64]) -> (Vec<Option<f64>>, usize) {
    let stride = trace.len().div_ceil(1000).max(1);
    (trace.iter().step_by(stride).map(|&x| finite(x)).collect(), stride)
}
