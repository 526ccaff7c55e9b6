//! Summary statistics, goodness-of-fit tests and the ABC log-likelihood.
//!
//! A candidate program is run `J` times at each parameter setting; each
//! setting contributes a log penalty (a Gaussian log density of summary
//! statistics, or the log p-value of a hypothesis test) and the settings'
//! contributions are summed. Structural failures (evaluation errors, samples
//! outside the test's support, zero variance) give `-inf`.

mod hypothesis;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Discrete, DiscreteCDF, Gamma, Normal, Poisson};
use thiserror::Error;

use crate::sexpr::{run_sampler_checked, EvalBudget, Program, SampleSet};

pub use hypothesis::{
    chi2_cdf, g_test_cells, g_test_p_value, g_test_poisson, ks_one_sample, ks_two_sample, q_ks, KsResult,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("degenerate sample: variance is zero")]
    DegenerateSample,
    #[error("theta must lie strictly between 0 and 1, got {0}")]
    DegenerateTheta(f64),
    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Population moments (denominator `n`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl SummaryStats {
    pub fn to_array(&self) -> [f64; 4] {
        [self.mean, self.variance, self.skewness, self.excess_kurtosis]
    }
}

pub fn summary_moments(samples: &[f64]) -> Result<SummaryStats, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::SampleTooSmall { needed: 2, got: n });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 || !m2.is_finite() {
        return Err(StatsError::DegenerateSample);
    }
    Ok(SummaryStats { mean, variance: m2, skewness: m3 / m2.powf(1.5), excess_kurtosis: m4 / (m2 * m2) - 3.0 })
}

/// Which kurtosis the fourth moment target refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kurtosis {
    #[default]
    Excess,
    Raw,
}

/// Sum over the four statistics of `ln N(stat; target, sigma^2)`.
pub fn moment_penalty(stats: &SummaryStats, targets: &[f64; 4], sigma: f64) -> f64 {
    moment_penalty_with(stats, targets, sigma, Kurtosis::Excess)
}

pub fn moment_penalty_with(stats: &SummaryStats, targets: &[f64; 4], sigma: f64, kurtosis: Kurtosis) -> f64 {
    let mut s = stats.to_array();
    if kurtosis == Kurtosis::Raw {
        s[3] += 3.0;
    }
    let norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    s.iter().zip(targets).map(|(x, t)| norm - 0.5 * ((x - t) / sigma).powi(2)).sum()
}

/// Reference distribution families with their parameter vectors `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `theta = [p]`
    Bernoulli,
    /// `theta = [lambda]`
    Poisson,
    /// Gamma(a, 1), `theta = [a]`
    Gamma,
    /// Beta(a, 1), `theta = [a]`
    Beta,
    /// `theta = []`
    StdNormal,
    /// `theta = [mu, sigma]`
    Normal,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Bernoulli, Family::Poisson, Family::Gamma, Family::Beta, Family::StdNormal, Family::Normal];

    pub fn id(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::Gamma => "gamma",
            Family::Beta => "beta",
            Family::StdNormal => "stdnormal",
            Family::Normal => "normal",
        }
    }

    pub fn from_id(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.id() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            Family::StdNormal => 0,
            Family::Normal => 2,
            _ => 1,
        }
    }

    pub fn is_discrete(self) -> bool {
        matches!(self, Family::Bernoulli | Family::Poisson)
    }

    pub fn validate(self, theta: &[f64]) -> Result<(), StatsError> {
        if theta.len() != self.arity() {
            return Err(StatsError::InvalidParameter(format!(
                "{} takes {} parameter(s), got {}",
                self.id(),
                self.arity(),
                theta.len()
            )));
        }
        let ok = match self {
            Family::Bernoulli => theta[0] > 0.0 && theta[0] < 1.0,
            Family::Poisson | Family::Gamma | Family::Beta => theta[0] > 0.0 && theta[0].is_finite(),
            Family::StdNormal => true,
            Family::Normal => theta[0].is_finite() && theta[1] > 0.0 && theta[1].is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(StatsError::InvalidParameter(format!("{}{:?}", self.id(), theta)))
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(self, theta: &[f64], x: f64) -> f64 {
        match self {
            Family::Bernoulli => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    1.0 - theta[0]
                } else {
                    1.0
                }
            }
            Family::Poisson => {
                if x < 0.0 {
                    0.0
                } else {
                    Poisson::new(theta[0]).expect("validated").cdf(x.floor() as u64)
                }
            }
            Family::Gamma => Gamma::new(theta[0], 1.0).expect("validated").cdf(x),
            Family::Beta => Beta::new(theta[0], 1.0).expect("validated").cdf(x),
            Family::StdNormal => Normal::new(0.0, 1.0).expect("valid").cdf(x),
            Family::Normal => Normal::new(theta[0], theta[1]).expect("validated").cdf(x),
        }
    }

    /// Probability mass at `k` for the discrete families.
    pub fn pmf(self, theta: &[f64], k: u64) -> f64 {
        match self {
            Family::Bernoulli => match k {
                0 => 1.0 - theta[0],
                1 => theta[0],
                _ => 0.0,
            },
            Family::Poisson => Poisson::new(theta[0]).expect("validated").pmf(k),
            _ => 0.0,
        }
    }

    /// Mean, variance, skewness and excess kurtosis.
    pub fn moments(self, theta: &[f64]) -> SummaryStats {
        let (mean, variance, skewness, excess_kurtosis) = match self {
            Family::Bernoulli => {
                let p = theta[0];
                let v = p * (1.0 - p);
                (p, v, (1.0 - 2.0 * p) / v.sqrt(), (1.0 - 6.0 * v) / v)
            }
            Family::Poisson => {
                let l = theta[0];
                (l, l, 1.0 / l.sqrt(), 1.0 / l)
            }
            Family::Gamma => {
                let a = theta[0];
                (a, a, 2.0 / a.sqrt(), 6.0 / a)
            }
            Family::Beta => {
                let a = theta[0];
                (
                    a / (a + 1.0),
                    a / ((a + 1.0).powi(2) * (a + 2.0)),
                    2.0 * (1.0 - a) * (a + 2.0).sqrt() / ((a + 3.0) * a.sqrt()),
                    6.0 * ((a - 1.0).powi(2) * (a + 2.0) - a * (a + 3.0)) / (a * (a + 3.0) * (a + 4.0)),
                )
            }
            Family::StdNormal => (0.0, 1.0, 0.0, 0.0),
            Family::Normal => (theta[0], theta[1] * theta[1], 0.0, 0.0),
        };
        SummaryStats { mean, variance, skewness, excess_kurtosis }
    }
}

/// The per-setting penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyKind {
    Moments {
        targets: [f64; 4],
        sigma: f64,
        #[serde(default)]
        kurtosis: Kurtosis,
    },
    /// G-test against Bernoulli(theta[0]).
    GTestBernoulli,
    /// Pooled-cell G-test against Poisson(theta[0]).
    GTestPoisson,
    KsTwoSample {
        reference: Vec<f64>,
    },
    KsOneSample {
        family: Family,
    },
}

/// How a program is scored: a penalty kind, the parameter settings the
/// program is run at, and the number of samples per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub param_settings: Vec<Vec<f64>>,
    pub samples_per_setting: usize,
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.param_settings.is_empty() {
            return Err(StatsError::InvalidParameter("at least one parameter setting is required".into()));
        }
        if self.samples_per_setting < 2 {
            return Err(StatsError::InvalidParameter("samples per setting must be at least 2".into()));
        }
        let dim = self.param_settings[0].len();
        if self.param_settings.iter().any(|t| t.len() != dim) {
            return Err(StatsError::InvalidParameter("parameter settings differ in length".into()));
        }
        match &self.kind {
            PenaltyKind::Moments { sigma, .. } if !(*sigma > 0.0) => {
                Err(StatsError::InvalidParameter("sigma must be positive".into()))
            }
            PenaltyKind::GTestBernoulli => {
                self.param_settings.iter().try_for_each(|t| Family::Bernoulli.validate(t).map_err(|_| theta_err(t)))
            }
            PenaltyKind::GTestPoisson => self.param_settings.iter().try_for_each(|t| Family::Poisson.validate(t)),
            PenaltyKind::KsTwoSample { reference } if reference.len() < 5 => {
                Err(StatsError::SampleTooSmall { needed: 5, got: reference.len() })
            }
            PenaltyKind::KsOneSample { family } => self.param_settings.iter().try_for_each(|t| family.validate(t)),
            _ => Ok(()),
        }
    }

    /// Log penalty of one setting's samples; `-inf` on structural failure.
    pub fn term(&self, theta: &[f64], samples: &[f64]) -> f64 {
        let floor = |p: f64| p.max(1e-300).ln();
        match &self.kind {
            PenaltyKind::Moments { targets, sigma, kurtosis } => match summary_moments(samples) {
                Ok(s) => moment_penalty_with(&s, targets, *sigma, *kurtosis),
                Err(_) => f64::NEG_INFINITY,
            },
            PenaltyKind::GTestBernoulli => match g_test_p_value(samples, theta[0]) {
                Ok(p) if on_support(&self.kind, samples) => floor(p),
                _ => f64::NEG_INFINITY,
            },
            PenaltyKind::GTestPoisson => match g_test_poisson(samples, theta[0]) {
                Ok(p) if on_support(&self.kind, samples) => floor(p),
                _ => f64::NEG_INFINITY,
            },
            PenaltyKind::KsTwoSample { reference } => match ks_two_sample(samples, reference) {
                Ok(r) => floor(r.p),
                Err(_) => f64::NEG_INFINITY,
            },
            PenaltyKind::KsOneSample { family } => match ks_one_sample(samples, |x| family.cdf(theta, x)) {
                Ok(r) => floor(r.p),
                Err(_) => f64::NEG_INFINITY,
            },
        }
    }
}

fn theta_err(t: &[f64]) -> StatsError {
    StatsError::DegenerateTheta(t.first().copied().unwrap_or(f64::NAN))
}

fn on_support(kind: &PenaltyKind, samples: &[f64]) -> bool {
    samples.iter().all(|&x| admissible(kind, x))
}

/// Whether a single value can occur under the test's null family.
fn admissible(kind: &PenaltyKind, x: f64) -> bool {
    match kind {
        PenaltyKind::GTestBernoulli => x == 0.0 || x == 1.0,
        PenaltyKind::GTestPoisson => x >= 0.0 && x.fract() == 0.0 && x < 1e15,
        _ => x.is_finite(),
    }
}

/// Penalty value together with the pseudo-data it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_penalty: f64,
    /// One sample set per parameter setting, in order; shorter than the
    /// setting list when evaluation stopped at a failing setting.
    pub samples: Vec<SampleSet>,
}

impl Evaluation {
    pub fn failed() -> Self {
        Evaluation { log_penalty: f64::NEG_INFINITY, samples: Vec::new() }
    }
}

/// Sum of per-setting log penalties of `program`; `-inf` as soon as one
/// setting fails.
pub fn accumulate_penalty(program: &Program, spec: &PenaltySpec, rng: &mut dyn RngCore, budget: EvalBudget) -> f64 {
    evaluate_penalty(program, spec, rng, budget).log_penalty
}

/// Like [`accumulate_penalty`] but keeps the simulated pseudo-data.
pub fn evaluate_penalty(
    program: &Program,
    spec: &PenaltySpec,
    rng: &mut dyn RngCore,
    budget: EvalBudget,
) -> Evaluation {
    let mut total = 0.0;
    let mut kept = Vec::with_capacity(spec.param_settings.len());
    for theta in &spec.param_settings {
        if theta.len() != program.params.len() {
            return Evaluation { log_penalty: f64::NEG_INFINITY, samples: kept };
        }
        let samples =
            run_sampler_checked(program, theta, spec.samples_per_setting, rng, budget, |x| admissible(&spec.kind, x));
        let term = match samples {
            Ok(s) => {
                let t = spec.term(theta, &s.values);
                kept.push(s);
                t
            }
            Err(_) => f64::NEG_INFINITY,
        };
        if term == f64::NEG_INFINITY {
            return Evaluation { log_penalty: term, samples: kept };
        }
        total += term;
    }
    Evaluation { log_penalty: total, samples: kept }
}

/// Scores programs for the MH chain.
pub trait Penalty: Send + Sync {
    fn evaluate(&self, program: &Program, rng: &mut dyn RngCore, budget: EvalBudget) -> Evaluation;

    fn log_penalty(&self, program: &Program, rng: &mut dyn RngCore, budget: EvalBudget) -> f64 {
        self.evaluate(program, rng, budget).log_penalty
    }
}

impl Penalty for PenaltySpec {
    fn evaluate(&self, program: &Program, rng: &mut dyn RngCore, budget: EvalBudget) -> Evaluation {
        evaluate_penalty(program, self, rng, budget)
    }
}
