//! Experiment orchestration: reference distributions, the learning,
//! generalization and compilation tasks, prior showcases, and report output.
//!
//! Every random quantity in a run derives from the configured seed, so a
//! report's echoed config reproduces it exactly. Chains run in parallel and
//! are joined in index order; files are written after the join.

mod output;
mod reference;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{builtin_corpus, fit_priors, fit_priors_with, load_corpus, CorpusEntry, CorpusError};
use crate::grammar::{
    sample_program, score_program, Grammar, GrammarConfig, GrammarError, GrammarState, Production, ProductionProbs,
};
use crate::mcmc::{run_chains, ChainConfig, ChainResult, McmcError, StopRule};
use crate::sexpr::{parse_program, run_sampler, EvalBudget, Prim, Program, TypeTag};
use crate::stats::{
    g_test_p_value, g_test_poisson, ks_one_sample, ks_two_sample, summary_moments, Family, Kurtosis, PenaltyKind,
    PenaltySpec,
};

pub use output::{emit_histogram, histogram, Bin, ChainSummary, HistogramFile, Report, TestResult, FORMAT_VERSION};
pub use reference::ReferenceDistribution;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: line {line}: {message}", path.display())]
    CsvFormat { path: PathBuf, line: u64, message: String },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Mcmc(#[from] McmcError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl Display) -> Self {
        HarnessError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    /// Process exit code: 3 for data errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::CsvFormat { .. } | HarnessError::Io { .. } => 3,
            _ => 2,
        }
    }
}

/// Posterior model compiled by the compilation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompileModel {
    /// Beta(1, 1) prior on a coin weight, four heads and no tails observed.
    #[serde(rename = "beta-binomial")]
    BetaBinomial,
}

impl CompileModel {
    /// Prior pseudo-counts and observed successes/failures.
    pub fn counts(self) -> (f64, f64, u32, u32) {
        match self {
            CompileModel::BetaBinomial => (1.0, 1.0, 4, 0),
        }
    }

    /// The conjugate posterior Beta(alpha0 + s, beta0 + f).
    pub fn posterior(self) -> (f64, f64) {
        let (a, b, s, f) = self.counts();
        (a + s as f64, b + f as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Learn a sampler for a reference family from its samples alone.
    Learn {
        target: Family,
        /// Held-out settings; drawn from the training ranges when absent.
        #[serde(default)]
        held_out: Option<Vec<Vec<f64>>>,
    },
    /// Learn a parameterless sampler matching a univariate CSV column.
    Generalize {
        data: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
    /// Learn a sampler for a posterior known only through MCMC draws.
    Compile { model: CompileModel },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Learn { .. } => "learn",
            Task::Generalize { .. } => "generalize",
            Task::Compile { .. } => "compile",
        }
    }
}

fn d_chains() -> usize {
    4
}
fn d_iterations() -> usize {
    5000
}
fn d_one() -> f64 {
    1.0
}
fn d_settings() -> usize {
    5
}
fn d_alpha() -> f64 {
    0.05
}
fn d_tolerances() -> [f64; 4] {
    [0.15, 0.25, 0.5, 1.0]
}
fn d_sigma() -> f64 {
    0.1
}
fn d_max_depth() -> u32 {
    GrammarConfig::default().max_depth
}
fn d_budget() -> EvalBudget {
    EvalBudget::default()
}
fn d_wave() -> usize {
    4
}
fn d_bins() -> usize {
    30
}
fn d_posterior() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "d_chains")]
    pub chains: usize,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_one")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of training parameter settings `N`.
    #[serde(default = "d_settings")]
    pub settings: usize,
    /// Draws per setting in the penalty; 100 for tests, 10 000 for moments
    /// when absent.
    #[serde(default)]
    pub samples_per_setting: Option<usize>,
    /// Draws for the fresh checks of best programs; 1 000 for tests, 10 000
    /// for moments when absent.
    #[serde(default)]
    pub check_samples: Option<usize>,
    /// Significance level of the fresh checks.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Allowed deviation of mean, variance, skewness and excess kurtosis in
    /// moment checks.
    #[serde(default = "d_tolerances")]
    pub moment_tolerances: [f64; 4],
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub kurtosis: Kurtosis,
    #[serde(default = "d_one")]
    pub pseudocount: f64,
    #[serde(default = "d_max_depth")]
    pub max_depth: u32,
    #[serde(default = "d_budget")]
    pub budget: EvalBudget,
    /// End a chain once its best program passes the fresh checks, and run
    /// chains in waves of `wave_size`, skipping later waves after a success.
    #[serde(default)]
    pub stop_on_success: bool,
    #[serde(default = "d_wave")]
    pub wave_size: usize,
    #[serde(default = "d_bins")]
    pub histogram_bins: usize,
    /// Draws of posterior pseudo-data in the compilation task.
    #[serde(default = "d_posterior")]
    pub posterior_samples: usize,
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    /// Where files go; nothing is written when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        serde_json::from_value(serde_json::json!({ "task": task })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.settings == 0 {
            return bad("settings must be at least 1");
        }
        if self.samples_per_setting.is_some_and(|j| j < 2) {
            return bad("samples_per_setting must be at least 2");
        }
        if self.check_samples.is_some_and(|j| j < 5) {
            return bad("check_samples must be at least 5");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.sigma > 0.0) || !(self.pseudocount > 0.0) {
            return bad("sigma and pseudocount must be positive");
        }
        if self.wave_size == 0 || self.histogram_bins == 0 {
            return bad("wave_size and histogram_bins must be at least 1");
        }
        if self.posterior_samples < 5 {
            return bad("posterior_samples must be at least 5");
        }
        if EvalBudget::new(self.budget.max_steps, self.budget.max_recursion_depth).is_err() {
            return bad("budget limits must be positive");
        }
        if let Task::Learn { target, held_out: Some(h) } = &self.task {
            for theta in h {
                target.validate(theta).map_err(|e| HarnessError::Config(format!("held-out setting: {e}")))?;
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    pub fn chain_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(1 + index as u64)
    }
}

const STREAM_SETTINGS: u64 = 1;
const STREAM_HELD_OUT: u64 = 2;
const STREAM_CHECKS: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const STREAM_POSTERIOR: u64 = 5;
const STREAM_HISTOGRAMS: u64 = 6;

/// Corpus target label under which `family`'s human-written samplers are filed.
pub fn corpus_target(family: Family) -> &'static str {
    match family {
        Family::StdNormal | Family::Normal => "normal",
        f => f.id(),
    }
}

/// Training ranges for each family's parameters.
pub fn parameter_ranges(family: Family) -> Vec<(f64, f64)> {
    match family {
        Family::Bernoulli => vec![(0.1, 0.9)],
        Family::Poisson => vec![(0.5, 8.0)],
        Family::Gamma | Family::Beta => vec![(0.5, 5.0)],
        Family::StdNormal => vec![],
        Family::Normal => vec![(-5.0, 5.0), (0.5, 3.0)],
    }
}

/// `n` settings drawn uniformly from the family's ranges; one empty setting
/// for parameterless families.
pub fn draw_settings<R: Rng + ?Sized>(family: Family, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let ranges = parameter_ranges(family);
    if ranges.is_empty() {
        return vec![vec![]];
    }
    (0..n).map(|_| ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()).collect()
}

/// Penalty used to learn `family`.
pub fn default_penalty(family: Family, config: &ExperimentConfig, settings: Vec<Vec<f64>>) -> PenaltySpec {
    let kind = match family {
        Family::Bernoulli => PenaltyKind::GTestBernoulli,
        Family::Poisson => PenaltyKind::GTestPoisson,
        Family::StdNormal => {
            PenaltyKind::Moments { targets: [0.0, 1.0, 0.0, 0.0], sigma: config.sigma, kurtosis: config.kurtosis }
        }
        f => PenaltyKind::KsOneSample { family: f },
    };
    let default_j = if matches!(kind, PenaltyKind::Moments { .. }) { 10_000 } else { 100 };
    PenaltySpec { kind, param_settings: settings, samples_per_setting: config.samples_per_setting.unwrap_or(default_j) }
}

pub fn load_corpus_for(config: &ExperimentConfig) -> Result<Vec<CorpusEntry>, HarnessError> {
    Ok(match &config.corpus_dir {
        Some(dir) => load_corpus(dir)?,
        None => builtin_corpus(),
    })
}

fn grammar_from(probs: ProductionProbs, config: &ExperimentConfig) -> Result<GrammarState, HarnessError> {
    let g = Grammar::new(probs, GrammarConfig { max_depth: config.max_depth, ..GrammarConfig::default() })?;
    Ok(GrammarState::new(g))
}

/// Prior for a learning task: the corpus fit with the target's entries left out.
pub fn learn_grammar(
    config: &ExperimentConfig,
    corpus: &[CorpusEntry],
    family: Family,
) -> Result<GrammarState, HarnessError> {
    grammar_from(fit_priors(corpus, config.pseudocount, corpus_target(family)), config)
}

/// A fresh goodness-of-fit check of a program at one setting.
#[derive(Debug, Clone)]
pub enum Check {
    GTestBernoulli,
    GTestPoisson,
    /// Against the family at the setting, or at `fixed` for parameterless
    /// programs.
    KsOneSample {
        family: Family,
        fixed: Option<Vec<f64>>,
        mean_within: Option<f64>,
    },
    KsTwoSample {
        reference: Arc<Vec<f64>>,
    },
    Moments {
        targets: [f64; 4],
        tolerances: [f64; 4],
    },
}

impl Check {
    fn name(&self) -> &'static str {
        match self {
            Check::GTestBernoulli => "g_test_bernoulli",
            Check::GTestPoisson => "g_test_poisson",
            Check::KsOneSample { .. } => "ks_one_sample",
            Check::KsTwoSample { .. } => "ks_two_sample",
            Check::Moments { .. } => "moments",
        }
    }

    /// Runs `program` `n` times at `theta` and tests the output.
    pub fn run<R: Rng + ?Sized>(
        &self,
        program: &Program,
        theta: &[f64],
        n: usize,
        alpha: f64,
        rng: &mut R,
        budget: EvalBudget,
    ) -> TestResult {
        let samples = match run_sampler(program, theta, n, rng, budget) {
            Ok(s) => s.values,
            Err(e) => return TestResult::failed(theta, n, self.name(), e.to_string()),
        };
        let moments = summary_moments(&samples).ok().map(|s| s.to_array());
        let mut r = TestResult {
            theta: theta.to_vec(),
            samples: n,
            test: self.name().to_string(),
            statistic: None,
            p_value: None,
            moments,
            passed: false,
            error: None,
        };
        let outcome = match self {
            Check::GTestBernoulli => g_test_p_value(&samples, theta[0]).map(|p| (None, p)),
            Check::GTestPoisson => g_test_poisson(&samples, theta[0]).map(|p| (None, p)),
            Check::KsOneSample { family, fixed, .. } => {
                let t = fixed.as_deref().unwrap_or(theta);
                ks_one_sample(&samples, |x| family.cdf(t, x)).map(|k| (Some(k.d), k.p))
            }
            Check::KsTwoSample { reference } => ks_two_sample(&samples, reference).map(|k| (Some(k.d), k.p)),
            Check::Moments { targets, tolerances } => {
                r.passed = moments.is_some_and(|m| (0..4).all(|i| (m[i] - targets[i]).abs() <= tolerances[i]));
                if moments.is_none() {
                    r.error = Some("degenerate sample".into());
                }
                return r;
            }
        };
        match outcome {
            Ok((d, p)) => {
                r.statistic = d;
                r.p_value = Some(p);
                r.passed = p >= alpha;
                if let Check::KsOneSample { family, fixed, mean_within: Some(tol) } = self {
                    let target = family.moments(fixed.as_deref().unwrap_or(theta)).mean;
                    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
                    r.passed &= (mean - target).abs() <= *tol;
                }
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        r
    }
}

/// Fresh checks applied to candidate programs; deterministic in the program.
#[derive(Debug, Clone)]
pub struct Checker {
    pub train: Vec<(Vec<f64>, Check)>,
    pub held_out: Vec<(Vec<f64>, Check)>,
    pub samples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub budget: EvalBudget,
}

impl Checker {
    pub fn check(&self, program: &Program) -> (Vec<TestResult>, Vec<TestResult>, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_CHECKS);
        let mut run = |list: &[(Vec<f64>, Check)]| -> Vec<TestResult> {
            list.iter().map(|(t, c)| c.run(program, t, self.samples, self.alpha, &mut rng, self.budget)).collect()
        };
        let train = run(&self.train);
        let held_out = run(&self.held_out);
        let passed = train.iter().chain(&held_out).all(|r| r.passed);
        (train, held_out, passed)
    }
}

/// A fully specified search: prior, penalty, signature and checks.
pub struct Search {
    pub grammar: GrammarState,
    pub penalty: PenaltySpec,
    pub param_types: Vec<TypeTag>,
    pub checker: Arc<Checker>,
}

struct SearchOutcome {
    summaries: Vec<ChainSummary>,
    results: Vec<ChainResult>,
}

fn run_search(search: &Search, config: &ExperimentConfig) -> Result<SearchOutcome, HarnessError> {
    let penalty = Arc::new(search.penalty.clone());
    let stop: Option<StopRule> = config.stop_on_success.then(|| {
        let checker = search.checker.clone();
        Arc::new(move |p: &Program, _: f64| checker.check(p).2) as StopRule
    });
    let make = |i: usize| ChainConfig {
        iterations: config.iterations,
        seed: config.chain_seed(i),
        temperature: config.temperature,
        grammar: search.grammar.clone(),
        penalty: penalty.clone(),
        budget: config.budget,
        param_types: search.param_types.clone(),
        ret: TypeTag::Real,
        init: None,
        stop: stop.clone(),
    };
    let wave = if config.stop_on_success { config.wave_size } else { config.chains };
    let mut summaries = Vec::new();
    let mut results = Vec::new();
    let mut start = 0;
    while start < config.chains {
        let end = (start + wave).min(config.chains);
        let configs: Vec<ChainConfig> = (start..end).map(make).collect();
        let batch = run_chains(&configs)?;
        for (k, r) in batch.into_iter().enumerate() {
            let index = start + k;
            let (train, held_out, passed) = search.checker.check(&r.best_program);
            let (trace, trace_stride) = output::thin(&r.penalty_trace);
            summaries.push(ChainSummary {
                index,
                seed: config.chain_seed(index),
                best_program: r.best_program.to_string(),
                best_log_penalty: output::finite(r.best_log_penalty),
                best_log_prior: output::finite(r.best_log_prior),
                acceptance_rate: r.acceptance_rate,
                iterations_run: r.penalty_trace.len(),
                trace,
                trace_stride,
                train,
                held_out,
                passed,
            });
            results.push(r);
        }
        if config.stop_on_success && summaries.iter().any(|s| s.passed) {
            break;
        }
        start = end;
    }
    Ok(SearchOutcome { summaries, results })
}

/// Index of the chain with the highest best penalty, ties toward higher
/// prior, then lower index.
fn best_chain(results: &[ChainResult]) -> usize {
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        let b = &results[best];
        if r.best_log_penalty > b.best_log_penalty
            || (r.best_log_penalty == b.best_log_penalty && r.best_log_prior > b.best_log_prior)
        {
            best = i;
        }
    }
    best
}

/// Draws reference samples for histogram setting `theta`.
type ReferenceSource<'a> = dyn Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + 'a;

fn assemble(
    config: &ExperimentConfig,
    search: &Search,
    outcome: SearchOutcome,
    held_out_settings: Vec<Vec<f64>>,
    reference: &ReferenceSource<'_>,
    extra: serde_json::Value,
) -> Result<Report, HarnessError> {
    let SearchOutcome { summaries, results } = outcome;
    let best = best_chain(&results);
    let b = &summaries[best];
    let mut report = Report {
        format_version: FORMAT_VERSION,
        task: config.task.name().to_string(),
        config: config.clone(),
        chain_seeds: summaries.iter().map(|s| s.seed).collect(),
        training_settings: search.penalty.param_settings.clone(),
        held_out_settings,
        best_chain: best,
        best_program: b.best_program.clone(),
        best_log_penalty: b.best_log_penalty,
        train: b.train.clone(),
        held_out: b.held_out.clone(),
        any_chain_passed: summaries.iter().any(|s| s.passed),
        chains: summaries,
        histograms: Vec::new(),
        extra,
    };
    if let Some(dir) = &config.out_dir {
        write_outputs(dir, config, search, &results, &mut report, reference)?;
    }
    Ok(report)
}

fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    search: &Search,
    results: &[ChainResult],
    report: &mut Report,
    reference: &ReferenceSource<'_>,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let best = &results[report.best_chain].best_program;
    let mut rng = config.rng(STREAM_HISTOGRAMS);
    let labelled = search
        .checker
        .train
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (format!("train{i}"), t))
        .chain(search.checker.held_out.iter().enumerate().map(|(i, (t, _))| (format!("heldout{i}"), t)));
    for (label, theta) in labelled {
        let inferred = run_sampler(best, theta, search.checker.samples, &mut rng, config.budget)
            .map(|s| s.values)
            .unwrap_or_default();
        let expected = reference(theta, &mut rng);
        for (source, values) in [("inferred", inferred), ("reference", expected)] {
            if values.is_empty() {
                continue;
            }
            let path = dir.join(format!("hist_{label}_{source}.csv"));
            emit_histogram(&values, config.histogram_bins, &path)?;
            report.histograms.push(HistogramFile {
                label: label.clone(),
                source: source.to_string(),
                theta: theta.clone(),
                path,
            });
        }
    }

    let traces = dir.join("traces.csv");
    let mut w = csv::Writer::from_path(&traces).map_err(|e| HarnessError::io(&traces, e))?;
    w.write_record(["chain", "iteration", "log_penalty"]).map_err(|e| HarnessError::io(&traces, e))?;
    for (c, r) in results.iter().enumerate() {
        for (i, x) in r.penalty_trace.iter().enumerate() {
            w.write_record([c.to_string(), (i + 1).to_string(), x.to_string()])
                .map_err(|e| HarnessError::io(&traces, e))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(&traces, e))?;

    let program_path = dir.join("best_program.sx");
    std::fs::write(&program_path, format!("{}\n", report.best_program))
        .map_err(|e| HarnessError::io(&program_path, e))?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.to_json()).map_err(|e| HarnessError::io(&report_path, e))?;
    Ok(())
}

/// Runs whichever task `config` describes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    match config.task {
        Task::Learn { .. } => run_learn_distribution(config),
        Task::Generalize { .. } => run_generalize_data(config),
        Task::Compile { .. } => run_compile_posterior(config),
    }
}

/// Learns a sampler for a reference family with leave-one-out corpus priors.
pub fn run_learn_distribution(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let Task::Learn { target, held_out } = &config.task else {
        return Err(HarnessError::Config("expected a learn task".into()));
    };
    let family = *target;
    let corpus = load_corpus_for(config)?;
    let grammar = learn_grammar(config, &corpus, family)?;
    let training = draw_settings(family, config.settings, &mut config.rng(STREAM_SETTINGS));
    let held_out = match held_out {
        Some(h) => h.clone(),
        None if family == Family::Bernoulli => vec![vec![0.3]],
        None if family.arity() == 0 => Vec::new(),
        None => draw_settings(family, 1, &mut config.rng(STREAM_HELD_OUT)),
    };
    if held_out.iter().any(|h| training.contains(h)) {
        return Err(HarnessError::Config("held-out settings overlap the training settings".into()));
    }
    let penalty = default_penalty(family, config, training.clone());
    let moments = matches!(penalty.kind, PenaltyKind::Moments { .. });
    let check = match family {
        Family::Bernoulli => Check::GTestBernoulli,
        Family::Poisson => Check::GTestPoisson,
        Family::StdNormal => Check::Moments { targets: [0.0, 1.0, 0.0, 0.0], tolerances: config.moment_tolerances },
        f => Check::KsOneSample { family: f, fixed: None, mean_within: None },
    };
    let checker = Checker {
        train: training.iter().map(|t| (t.clone(), check.clone())).collect(),
        held_out: held_out.iter().map(|t| (t.clone(), check.clone())).collect(),
        samples: config.check_samples.unwrap_or(if moments { 10_000 } else { 1000 }),
        alpha: config.alpha,
        seed: config.seed,
        budget: config.budget,
    };
    let search =
        Search { grammar, penalty, param_types: vec![TypeTag::Real; family.arity()], checker: Arc::new(checker) };
    let outcome = run_search(&search, config)?;
    let n = search.checker.samples;
    let reference = move |theta: &[f64], rng: &mut ChaCha8Rng| {
        ReferenceDistribution::new(family, theta).map(|d| d.sample(n, rng).values).unwrap_or_default()
    };
    let extra = serde_json::json!({
        "target": family,
        "corpus_exclusion": corpus_target(family),
        "analytic_moments": training.iter().map(|t| family.moments(t).to_array()).collect::<Vec<_>>(),
    });
    assemble(config, &search, outcome, held_out, &reference, extra)
}

/// Reads a one-column CSV of finite reals with at least 20 rows.
pub fn read_data_csv(path: &Path, has_header: bool) -> Result<Vec<f64>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 1 + has_header as u64;
        let err = |message: String| HarnessError::CsvFormat { path: path.to_path_buf(), line, message };
        let record = record.map_err(|e| err(e.to_string()))?;
        if record.len() != 1 {
            return Err(err(format!("expected one column, found {}", record.len())));
        }
        let cell = &record[0];
        let x: f64 = cell.parse().map_err(|_| err(format!("not a number: '{cell}'")))?;
        if !x.is_finite() {
            return Err(err(format!("not finite: '{cell}'")));
        }
        values.push(x);
    }
    if values.len() < 20 {
        return Err(HarnessError::CsvFormat {
            path: path.to_path_buf(),
            line: values.len() as u64,
            message: format!("need at least 20 rows, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Seeded 50/50 split into (training, held-out) halves.
pub fn split_data<R: Rng + ?Sized>(data: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut v = data.to_vec();
    v.shuffle(rng);
    let held = v.split_off(v.len() / 2);
    (v, held)
}

/// Learns a parameterless sampler for empirical data via two-sample KS.
pub fn run_generalize_data(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let Task::Generalize { data, has_header } = &config.task else {
        return Err(HarnessError::Config("expected a generalize task".into()));
    };
    let values = read_data_csv(data, *has_header)?;
    let (train, held) = split_data(&values, &mut config.rng(STREAM_SPLIT));
    let corpus = load_corpus_for(config)?;
    let grammar = grammar_from(fit_priors(&corpus, config.pseudocount, "none"), config)?;
    let train = Arc::new(train);
    let held = Arc::new(held);
    let penalty = PenaltySpec {
        kind: PenaltyKind::KsTwoSample { reference: train.to_vec() },
        param_settings: vec![vec![]],
        samples_per_setting: config.samples_per_setting.unwrap_or(100),
    };
    let checker = Checker {
        train: vec![(vec![], Check::KsTwoSample { reference: train.clone() })],
        held_out: vec![(vec![], Check::KsTwoSample { reference: held.clone() })],
        samples: config.check_samples.unwrap_or(1000),
        alpha: config.alpha,
        seed: config.seed,
        budget: config.budget,
    };
    let search = Search { grammar, penalty, param_types: vec![], checker: Arc::new(checker) };
    let outcome = run_search(&search, config)?;
    let all = values.clone();
    let reference = move |_: &[f64], _: &mut ChaCha8Rng| all.clone();
    let extra = serde_json::json!({
        "rows": values.len(),
        "training_rows": train.len(),
        "held_out_rows": held.len(),
    });
    assemble(config, &search, outcome, vec![vec![]], &reference, extra)
}

/// Random-walk Metropolis over the coin weight of the uncollapsed
/// Beta-Bernoulli model; returns `count` draws kept every `thin` steps after
/// `burn_in` steps.
pub fn beta_binomial_posterior_mh<R: Rng + ?Sized>(
    model: CompileModel,
    count: usize,
    thin: usize,
    burn_in: usize,
    rng: &mut R,
) -> Vec<f64> {
    let (a0, b0, s, f) = model.counts();
    let log_target = |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            f64::NEG_INFINITY
        } else {
            (a0 - 1.0 + s as f64) * t.ln() + (b0 - 1.0 + f as f64) * (1.0 - t).ln()
        }
    };
    let step = NormalDist::new(0.0, 0.3).expect("valid scale");
    let mut theta = 0.5;
    let mut current = log_target(theta);
    let mut out = Vec::with_capacity(count);
    let mut i = 0usize;
    while out.len() < count {
        let proposal = theta + step.sample(rng);
        let lp = log_target(proposal);
        if rng.random::<f64>().ln() < lp - current {
            theta = proposal;
            current = lp;
        }
        i += 1;
        if i > burn_in && (i - burn_in).is_multiple_of(thin) {
            out.push(theta);
        }
    }
    out
}

/// The human-written posterior sampler the compilation task aims for.
pub const COMPILE_TARGET_PROGRAM: &str = "(lambda () (safe-beta 5.0 1.0))";

/// Prior for the compilation task: whole corpus, extended primitive set.
pub fn compile_grammar(config: &ExperimentConfig, corpus: &[CorpusEntry]) -> Result<GrammarState, HarnessError> {
    grammar_from(fit_priors_with(corpus, config.pseudocount, "none", &Production::ALL, &Prim::ALL), config)
}

/// Learns a sampler for a posterior represented only by MCMC draws.
pub fn run_compile_posterior(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let Task::Compile { model } = &config.task else {
        return Err(HarnessError::Config("expected a compile task".into()));
    };
    let (pa, pb) = model.posterior();
    if pb != 1.0 {
        return Err(HarnessError::Config("only Beta(a, 1) posteriors are supported".into()));
    }
    let n = config.posterior_samples;
    let mut rng = config.rng(STREAM_POSTERIOR);
    let exact = ReferenceDistribution::beta(pa)?.sample(n, &mut rng).values;
    let mh = beta_binomial_posterior_mh(*model, n, 20, 1000, &mut rng);
    let agreement = ks_two_sample(&mh, &exact).map_err(|e| HarnessError::InvalidParameter(e.to_string()))?;

    let corpus = load_corpus_for(config)?;
    let grammar = compile_grammar(config, &corpus)?;
    let target_prior = score_program(&parse_program(COMPILE_TARGET_PROGRAM).expect("valid text"), &grammar)?;

    let mh = Arc::new(mh);
    let penalty = PenaltySpec {
        kind: PenaltyKind::KsTwoSample { reference: mh.to_vec() },
        param_settings: vec![vec![]],
        samples_per_setting: config.samples_per_setting.unwrap_or(100),
    };
    let checker = Checker {
        train: vec![(vec![], Check::KsTwoSample { reference: mh.clone() })],
        held_out: vec![(
            vec![],
            Check::KsOneSample { family: Family::Beta, fixed: Some(vec![pa]), mean_within: Some(0.05) },
        )],
        samples: config.check_samples.unwrap_or(1000),
        alpha: config.alpha,
        seed: config.seed,
        budget: config.budget,
    };
    let search = Search { grammar, penalty, param_types: vec![], checker: Arc::new(checker) };
    let outcome = run_search(&search, config)?;
    let exact_for_hist = exact.clone();
    let reference = move |_: &[f64], _: &mut ChaCha8Rng| exact_for_hist.clone();
    let extra = serde_json::json!({
        "posterior": { "alpha": pa, "beta": pb },
        "mh_vs_exact_ks": { "d": agreement.d, "p": agreement.p, "samples": n },
        "target_program": COMPILE_TARGET_PROGRAM,
        "target_log_prior": output::finite(target_prior),
    });
    assemble(config, &search, outcome, vec![vec![]], &reference, extra)
}

/// Summary of a prior showcase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Showcase {
    pub format_version: u32,
    pub seed: u64,
    pub programs: Vec<String>,
    pub attempts: usize,
    pub skipped: usize,
    pub skip_rate: f64,
    pub files: Vec<PathBuf>,
}

/// Draws parameterless programs from `grammar` until `count` of them
/// evaluate `samples` times without error, writing one histogram per program
/// when `out_dir` is given. Gives up after `1000 * count` attempts.
pub fn sample_prior_showcase(
    grammar: &GrammarState,
    count: usize,
    samples: usize,
    seed: u64,
    budget: EvalBudget,
    bins: usize,
    out_dir: Option<&Path>,
) -> Result<Showcase, HarnessError> {
    if count == 0 || samples == 0 || bins == 0 {
        return Err(HarnessError::Config("count, samples and bins must be at least 1".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut programs = Vec::new();
    let mut files = Vec::new();
    let mut attempts = 0;
    while programs.len() < count && attempts < 1000 * count {
        attempts += 1;
        let mut scratch = grammar.clone();
        let program = sample_program(&[], TypeTag::Real, &mut scratch, &mut rng);
        let Ok(values) = run_sampler(&program, &[], samples, &mut rng, budget) else {
            continue;
        };
        if let Some(dir) = out_dir {
            let path = dir.join(format!("prior_{}.csv", programs.len()));
            emit_histogram(&values.values, bins, &path)?;
            files.push(path);
        }
        programs.push(program.to_string());
    }
    let skipped = attempts - programs.len();
    let showcase = Showcase {
        format_version: FORMAT_VERSION,
        seed,
        programs,
        attempts,
        skipped,
        skip_rate: skipped as f64 / attempts as f64,
        files,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("showcase.json");
        std::fs::write(&path, serde_json::to_string_pretty(&showcase)?).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(showcase)
}

/// Prior used by the showcase: the whole corpus, base primitives.
pub fn showcase_grammar(corpus: &[CorpusEntry], pseudocount: f64) -> Result<GrammarState, HarnessError> {
    let probs = fit_priors(corpus, pseudocount, "none");
    Ok(GrammarState::new(Grammar::new(probs, GrammarConfig::default())?))
}
