use std::collections::HashMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sampler_synth::grammar::{
    score_program, ConstantBase, Grammar, GrammarConfig, GrammarState, Production, ProductionProbs,
};
use sampler_synth::mcmc::{continue_chain, init_chain, mh_step, run_chain, ChainConfig, Checkpoint};
use sampler_synth::sexpr::{parse_program, run_sampler, EvalBudget, Prim, Program, SampleSet, TypeTag};
use sampler_synth::stats::{Evaluation, Kurtosis, Penalty, PenaltyKind, PenaltySpec};

fn toy_state(prods: &[Production], atoms: &[f64]) -> GrammarState {
    let probs = ProductionProbs::uniform(prods, &[Prim::Add], ConstantBase::atoms_only(atoms));
    GrammarState::new(Grammar::new(probs, GrammarConfig { max_depth: 2, ..Default::default() }).unwrap())
}

/// Deterministic penalty `-scale * |value - target|` of a parameterless program.
struct Distance {
    target: f64,
    scale: f64,
}

impl Penalty for Distance {
    fn evaluate(&self, program: &Program, rng: &mut dyn RngCore, budget: EvalBudget) -> Evaluation {
        match run_sampler(program, &[], 1, rng, budget) {
            Ok(s) => Evaluation { log_penalty: -self.scale * (s.values[0] - self.target).abs(), samples: vec![s] },
            Err(_) => Evaluation::failed(),
        }
    }
}

/// Finite only for programs that return exactly `target`.
struct Exactly(f64);

impl Penalty for Exactly {
    fn evaluate(&self, program: &Program, rng: &mut dyn RngCore, budget: EvalBudget) -> Evaluation {
        match run_sampler(program, &[], 1, rng, budget) {
            Ok(s) if s.values[0] == self.0 => Evaluation { log_penalty: 0.0, samples: vec![s] },
            _ => Evaluation::failed(),
        }
    }
}

/// All body texts of the toy grammar: constants 0/1, `+`, `let`, `if`, depth 2.
fn enumerate(ty: &str, depth: u32, vars: &[String]) -> Vec<String> {
    let mut out: Vec<String> =
        if ty == "real" { vec!["0.0".into(), "1.0".into()] } else { vec!["true".into(), "false".into()] };
    if ty == "real" {
        out.extend(vars.iter().cloned());
    }
    if depth >= 2 {
        return out;
    }
    if ty == "real" {
        for a in enumerate("real", depth + 1, vars) {
            for b in enumerate("real", depth + 1, vars) {
                out.push(format!("(+ {a} {b})"));
            }
        }
    }
    let name = format!("v{}", vars.len());
    let mut inner = vars.to_vec();
    inner.push(name.clone());
    for v in enumerate("real", depth + 1, vars) {
        for b in enumerate(ty, depth + 1, &inner) {
            out.push(format!("(let ({name} {v}) {b})"));
        }
    }
    for c in enumerate("bool", depth + 1, vars) {
        for t in enumerate(ty, depth + 1, vars) {
            for e in enumerate(ty, depth + 1, vars) {
                out.push(format!("(if {c} {t} {e})"));
            }
        }
    }
    out
}

fn config(grammar: GrammarState, penalty: Arc<dyn Penalty>, iterations: usize, seed: u64) -> ChainConfig {
    let mut c = ChainConfig::new(grammar, penalty, vec![], TypeTag::Real);
    c.iterations = iterations;
    c.seed = seed;
    c
}

#[test]
fn chain_occupancy_matches_the_enumerated_target() {
    let prods = [Production::Variable, Production::Constant, Production::PrimCall, Production::Let, Production::If];
    let st = toy_state(&prods, &[0.0, 1.0]);
    let penalty = Distance { target: 1.0, scale: 1.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut target: HashMap<String, f64> = HashMap::new();
    for body in enumerate("real", 1, &[]) {
        let p = parse_program(&format!("(lambda () {body})")).unwrap();
        let w = score_program(&p, &st).unwrap() + penalty.log_penalty(&p, &mut rng, EvalBudget::default());
        target.insert(p.to_string(), w.exp());
    }
    assert_eq!(target.len(), 20);
    let z: f64 = target.values().sum();

    let cfg = config(st, Arc::new(penalty), 200_000, 11);
    let mut state = init_chain(&cfg);
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..cfg.iterations {
        mh_step(&mut state, &cfg, &mut rng);
        *counts.entry(state.program.to_string()).or_insert(0) += 1;
    }
    for k in counts.keys() {
        assert!(target.contains_key(k), "chain left the enumerated support: {k}");
    }
    let tv: f64 = 0.5
        * target
            .iter()
            .map(|(k, w)| (w / z - *counts.get(k).unwrap_or(&0) as f64 / cfg.iterations as f64).abs())
            .sum::<f64>();
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn identical_proposals_are_always_accepted() {
    let st = toy_state(&[Production::Constant], &[0.0]);
    let mut cfg = config(st, Arc::new(Distance { target: 1.0, scale: 1.0 }), 200, 3);
    cfg.init = Some(parse_program("(lambda () 0.0)").unwrap());
    let r = run_chain(&cfg).unwrap();
    assert_eq!(r.acceptance_rate, 1.0);
    assert_eq!(r.best_program.to_string(), "(lambda () 0.0)");
}

#[test]
fn proposals_with_infinite_penalty_are_rejected() {
    let st = toy_state(&[Production::Constant], &[0.0, 1.0]);
    let mut cfg = config(st, Arc::new(Exactly(0.0)), 0, 4);
    cfg.init = Some(parse_program("(lambda () 0.0)").unwrap());
    let mut state = init_chain(&cfg);
    assert_eq!(state.log_penalty, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rejected = 0;
    for _ in 0..500 {
        let before = state.clone();
        let info = mh_step(&mut state, &cfg, &mut rng);
        let (p, _, pen) = info.proposal.unwrap();
        if pen == f64::NEG_INFINITY {
            assert!(!info.accepted, "{p}");
            assert_eq!(state.program, before.program);
            assert_eq!(state.cached_samples, before.cached_samples);
            rejected += 1;
        }
        assert_eq!(state.program.to_string(), "(lambda () 0.0)");
    }
    assert!(rejected > 100);
}

#[test]
fn chains_are_reproducible_from_the_seed() {
    let st = GrammarState::new(Grammar::default());
    let spec = PenaltySpec {
        kind: PenaltyKind::Moments { targets: [0.0, 1.0, 0.0, 0.0], sigma: 1.0, kurtosis: Kurtosis::Excess },
        param_settings: vec![vec![]],
        samples_per_setting: 200,
    };
    let cfg = config(st, Arc::new(spec), 300, 99);
    let a = run_chain(&cfg).unwrap();
    let b = run_chain(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.penalty_trace.len(), 300);
    assert!((0.0..=1.0).contains(&a.acceptance_rate));
    assert_eq!(init_chain(&cfg), init_chain(&cfg));

    // a longer run with the same seed extends the shorter one
    let mut longer = cfg.clone();
    longer.iterations = 600;
    let c = run_chain(&longer).unwrap();
    assert_eq!(c.penalty_trace[..300], a.penalty_trace[..]);
    assert!(c.best_log_penalty >= a.best_log_penalty);
    assert!(a.penalty_trace.iter().all(|&x| x <= a.best_log_penalty));
}

#[test]
fn iteration_bounds() {
    let st = toy_state(&[Production::Constant], &[0.0, 1.0]);
    let cfg = config(st, Arc::new(Exactly(0.0)), 1, 1);
    assert_eq!(run_chain(&cfg).unwrap().penalty_trace.len(), 1);
    let mut zero = cfg.clone();
    zero.iterations = 0;
    assert!(run_chain(&zero).is_err());
    let mut cold = cfg;
    cold.temperature = 0.0;
    assert!(run_chain(&cold).is_err());
}

#[test]
fn initialization_falls_back_to_the_best_failure() {
    // constant programs have zero variance, so the moment penalty always fails
    let st = toy_state(&[Production::Constant], &[0.0, 1.0]);
    let spec = PenaltySpec {
        kind: PenaltyKind::Moments { targets: [0.0, 1.0, 0.0, 0.0], sigma: 1.0, kurtosis: Kurtosis::Excess },
        param_settings: vec![vec![]],
        samples_per_setting: 10,
    };
    let s = init_chain(&config(st.clone(), Arc::new(spec), 1, 8));
    assert_eq!(s.log_penalty, f64::NEG_INFINITY);
    assert!(s.log_prior.is_finite());

    // a singleton support is found immediately
    let st = toy_state(&[Production::Constant], &[1.0]);
    let s = init_chain(&config(st, Arc::new(Distance { target: 1.0, scale: 1.0 }), 1, 8));
    assert_eq!(s.program.to_string(), "(lambda () 1.0)");
    assert_eq!(s.log_penalty, 0.0);
    assert_eq!(s.cached_samples, vec![SampleSet::new(vec![1.0])]);
}

#[test]
fn checkpoints_resume_the_chain() {
    let prods = [Production::Variable, Production::Constant, Production::PrimCall, Production::Let, Production::If];
    let st = toy_state(&prods, &[0.0, 1.0]);
    let cfg = config(st, Arc::new(Distance { target: 1.0, scale: 1.0 }), 500, 21);
    let half = run_chain(&ChainConfig { iterations: 250, ..cfg.clone() }).unwrap();
    let json = half.checkpoint().to_json();
    let restored = Checkpoint::from_json(&json).unwrap();
    assert_eq!(restored, half.checkpoint());
    let (state, rng) = restored.state().unwrap();
    let resumed = continue_chain(&cfg, state, rng).unwrap();
    let full = run_chain(&cfg).unwrap();
    assert_eq!(resumed.final_state.program, full.final_state.program);
    assert_eq!(resumed.penalty_trace[..], full.penalty_trace[250..]);

    let bad = Checkpoint::from_json("{\"iteration\": 1}");
    assert!(bad.is_err());
}
