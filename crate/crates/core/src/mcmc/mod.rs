//! Metropolis-Hastings over program text with an ABC likelihood.
//!
//! The current state's pseudo-data is kept between steps; only proposals
//! are simulated. Proposals regenerate one uniformly chosen body node.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{canonicalize, regenerate_subtree, sample_program, score_program, GrammarState};
use crate::sexpr::{parse_program, EvalBudget, Program, SampleSet, TypeTag};
use crate::stats::{Evaluation, Penalty};

/// Retry cap for drawing an initial program with finite penalty.
pub const INIT_RETRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum McmcError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

/// Called with each new best program and its log penalty; returning true
/// ends the chain early.
pub type StopRule = Arc<dyn Fn(&Program, f64) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct ChainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub temperature: f64,
    pub grammar: GrammarState,
    pub penalty: Arc<dyn Penalty>,
    pub budget: EvalBudget,
    pub param_types: Vec<TypeTag>,
    pub ret: TypeTag,
    /// Starting program; drawn from the prior when absent.
    pub init: Option<Program>,
    pub stop: Option<StopRule>,
}

impl fmt::Debug for ChainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainConfig")
            .field("iterations", &self.iterations)
            .field("seed", &self.seed)
            .field("temperature", &self.temperature)
            .field("param_types", &self.param_types)
            .field("ret", &self.ret)
            .finish_non_exhaustive()
    }
}

impl ChainConfig {
    pub fn new(grammar: GrammarState, penalty: Arc<dyn Penalty>, param_types: Vec<TypeTag>, ret: TypeTag) -> Self {
        ChainConfig {
            iterations: 1000,
            seed: 0,
            temperature: 1.0,
            grammar,
            penalty,
            budget: EvalBudget::default(),
            param_types,
            ret,
            init: None,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), McmcError> {
        if self.iterations == 0 {
            return Err(McmcError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(McmcError::InvalidConfig(format!("temperature {} is not positive", self.temperature)));
        }
        if let Some(p) = &self.init {
            let types: Vec<TypeTag> = p.params.iter().map(|q| q.ty).collect();
            if types != self.param_types || p.ret != self.ret {
                return Err(McmcError::InvalidConfig("initial program has the wrong signature".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhState {
    pub program: Program,
    pub log_prior: f64,
    pub log_penalty: f64,
    pub cached_samples: Vec<SampleSet>,
    pub iteration: usize,
}

/// Outcome of one MH step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    /// The evaluated proposal, if one got as far as simulation.
    pub proposal: Option<(Program, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub best_program: Program,
    pub best_log_penalty: f64,
    pub best_log_prior: f64,
    pub acceptance_rate: f64,
    pub penalty_trace: Vec<f64>,
    pub final_state: MhState,
    /// RNG position after the last step, for checkpointing.
    pub rng: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string: the word position is 68 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, McmcError> {
        let pos: u128 = self.word_pos.parse().map_err(|_| McmcError::Checkpoint("bad word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Serializable snapshot of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub iteration: usize,
    pub current_program: String,
    #[serde(with = "log_value")]
    pub current_log_prior: f64,
    #[serde(with = "log_value")]
    pub current_log_penalty: f64,
    pub best_program: String,
    #[serde(with = "log_value")]
    pub best_log_penalty: f64,
    pub rng: RngState,
}

mod log_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

fn finite_or_none(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

impl ChainResult {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: 1,
            iteration: self.final_state.iteration,
            current_program: self.final_state.program.to_string(),
            current_log_prior: self.final_state.log_prior,
            current_log_penalty: self.final_state.log_penalty,
            best_program: self.best_program.to_string(),
            best_log_penalty: self.best_log_penalty,
            rng: self.rng.clone(),
        }
    }
}

impl Checkpoint {
    /// JSON text; `-inf` values are written as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, McmcError> {
        serde_json::from_str(text).map_err(|e| McmcError::Checkpoint(e.to_string()))
    }

    /// Rebuilds the chain state. Cached pseudo-data is not stored, so the
    /// resumed state carries the recorded penalty with an empty cache.
    pub fn state(&self) -> Result<(MhState, ChaCha8Rng), McmcError> {
        let program = parse_program(&self.current_program).map_err(|e| McmcError::Checkpoint(e.to_string()))?;
        let state = MhState {
            program,
            log_prior: self.current_log_prior,
            log_penalty: self.current_log_penalty,
            cached_samples: Vec::new(),
            iteration: self.iteration,
        };
        Ok((state, self.rng.restore()?))
    }
}

fn prior_of(program: &Program, grammar: &GrammarState) -> f64 {
    finite_or_none(score_program(program, grammar).unwrap_or(f64::NEG_INFINITY))
}

fn better(pen: f64, prior: f64, best_pen: f64, best_prior: f64) -> bool {
    pen > best_pen || (pen == best_pen && prior > best_prior)
}

/// Initial state using the chain's own seed.
pub fn init_chain(config: &ChainConfig) -> MhState {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_with(config, &mut rng)
}

/// Draws prior programs until one has finite penalty or the retry cap is
/// hit; returns the best draw seen.
pub fn init_with(config: &ChainConfig, rng: &mut ChaCha8Rng) -> MhState {
    let evaluate = |program: Program, rng: &mut ChaCha8Rng| {
        let program = canonicalize(&program);
        let log_prior = prior_of(&program, &config.grammar);
        let Evaluation { log_penalty, samples } = config.penalty.evaluate(&program, rng, config.budget);
        MhState { program, log_prior, log_penalty: finite_or_none(log_penalty), cached_samples: samples, iteration: 0 }
    };
    if let Some(p) = &config.init {
        return evaluate(p.clone(), rng);
    }
    let mut best: Option<MhState> = None;
    for _ in 0..INIT_RETRIES {
        let mut scratch = config.grammar.clone();
        let program = sample_program(&config.param_types, config.ret, &mut scratch, rng);
        let s = evaluate(program, rng);
        let done = s.log_penalty > f64::NEG_INFINITY;
        if best.as_ref().is_none_or(|b| better(s.log_penalty, s.log_prior, b.log_penalty, b.log_prior)) {
            best = Some(s);
        }
        if done {
            break;
        }
    }
    best.expect("at least one initializer")
}

/// Log acceptance ratio; `+inf` means accept outright.
pub fn log_acceptance(
    current: (f64, f64),
    proposal: (f64, f64),
    temperature: f64,
    log_q_forward: f64,
    log_q_reverse: f64,
    nodes: usize,
    nodes_proposed: usize,
) -> f64 {
    let (prior, pen) = current;
    let (prior2, pen2) = proposal;
    if prior2 == f64::NEG_INFINITY || (pen2 == f64::NEG_INFINITY && pen > f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    if pen == f64::NEG_INFINITY && pen2 > f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let d_pen = if pen == f64::NEG_INFINITY { 0.0 } else { pen2 - pen };
    let d_prior = if prior == f64::NEG_INFINITY { 0.0 } else { prior2 - prior };
    (d_prior + d_pen) / temperature + log_q_reverse - log_q_forward + (nodes as f64).ln() - (nodes_proposed as f64).ln()
}

/// One MH transition. On rejection the state, including its cached
/// pseudo-data, is left as it was.
pub fn mh_step<R: Rng + ?Sized>(state: &mut MhState, config: &ChainConfig, rng: &mut R) -> StepInfo {
    state.iteration += 1;
    let n = state.program.node_count();
    let index = rng.random_range(0..n);
    let Ok(regen) = regenerate_subtree(&state.program, index, &config.grammar, rng) else {
        return StepInfo { accepted: false, proposal: None };
    };
    let log_prior = prior_of(&regen.program, &config.grammar);
    if log_prior == f64::NEG_INFINITY {
        return StepInfo { accepted: false, proposal: None };
    }
    let eval = config.penalty.evaluate(&regen.program, &mut RngAdapter(rng), config.budget);
    let log_penalty = finite_or_none(eval.log_penalty);
    let log_alpha = log_acceptance(
        (state.log_prior, state.log_penalty),
        (log_prior, log_penalty),
        config.temperature,
        regen.log_q_forward,
        regen.log_q_reverse,
        n,
        regen.program.node_count(),
    );
    let u: f64 = rng.random();
    let accepted = log_alpha >= 0.0 || u.ln() < log_alpha;
    let proposal = (regen.program, log_prior, log_penalty);
    if accepted {
        state.program = proposal.0.clone();
        state.log_prior = log_prior;
        state.log_penalty = log_penalty;
        state.cached_samples = eval.samples;
    }
    StepInfo { accepted, proposal: Some(proposal) }
}

/// Lets a possibly unsized generic rng be passed as `&mut dyn RngCore`.
struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

struct Best {
    program: Program,
    log_penalty: f64,
    log_prior: f64,
}

impl Best {
    fn offer(&mut self, program: &Program, log_prior: f64, log_penalty: f64) -> bool {
        if log_penalty > f64::NEG_INFINITY && better(log_penalty, log_prior, self.log_penalty, self.log_prior) {
            self.program = program.clone();
            self.log_penalty = log_penalty;
            self.log_prior = log_prior;
            true
        } else {
            false
        }
    }
}

/// Runs a full chain from its seed.
pub fn run_chain(config: &ChainConfig) -> Result<ChainResult, McmcError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let state = init_with(config, &mut rng);
    continue_chain(config, state, rng)
}

/// Continues a chain from `state` until `config.iterations` total steps.
pub fn continue_chain(config: &ChainConfig, mut state: MhState, mut rng: ChaCha8Rng) -> Result<ChainResult, McmcError> {
    config.validate()?;
    let mut best = Best { program: state.program.clone(), log_penalty: state.log_penalty, log_prior: state.log_prior };
    let mut stopped = config
        .stop
        .as_ref()
        .is_some_and(|f| best.log_penalty > f64::NEG_INFINITY && f(&best.program, best.log_penalty));
    let start = state.iteration;
    let mut trace = Vec::with_capacity(config.iterations.saturating_sub(start));
    let mut accepted = 0usize;
    while !stopped && state.iteration < config.iterations {
        let info = mh_step(&mut state, config, &mut rng);
        accepted += info.accepted as usize;
        if let Some((p, prior, pen)) = &info.proposal {
            if best.offer(p, *prior, *pen) {
                stopped = config.stop.as_ref().is_some_and(|f| f(&best.program, best.log_penalty));
            }
        }
        trace.push(state.log_penalty);
    }
    let steps = state.iteration - start;
    Ok(ChainResult {
        best_program: best.program,
        best_log_penalty: best.log_penalty,
        best_log_prior: best.log_prior,
        acceptance_rate: if steps == 0 { 0.0 } else { accepted as f64 / steps as f64 },
        penalty_trace: trace,
        final_state: state,
        rng: RngState::capture(&rng),
    })
}

/// Independent chains in parallel, returned in input order.
pub fn run_chains(configs: &[ChainConfig]) -> Result<Vec<ChainResult>, McmcError> {
    configs.par_iter().map(run_chain).collect()
}
