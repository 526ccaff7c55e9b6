use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sampler_synth::corpus::{
    builtin_corpus, count_productions, fit_priors, fit_priors_with, load_corpus, probs_from_counts, CorpusEntry,
    ProductionCounts,
};
use sampler_synth::grammar::{
    sample_program_logged, Event, Grammar, GrammarConfig, GrammarState, Production, ProductionProbs,
};
use sampler_synth::sexpr::{parse_program, Param, Prim, TypeTag, Value};

const BERNOULLI: &str = "(lambda (par) (if (< (uniform-continuous 0.0 1.0) par) 1.0 0.0))";

#[test]
fn bernoulli_sampler_counts() {
    let c = count_productions(&parse_program(BERNOULLI).unwrap()).unwrap();
    let real = TypeTag::Real;
    assert_eq!(c.production(real, Production::If), 1);
    assert_eq!(c.production(real, Production::PrimCall), 1);
    assert_eq!(c.primitive(real, Prim::SafeUc), 1);
    assert_eq!(c.production(real, Production::Variable), 1);
    // the branch constants 1.0 and 0.0 plus the two bounds of the uniform draw
    assert_eq!(c.production(real, Production::Constant), 4);
    assert_eq!(c.constants.real, vec![Value::Real(0.0), Value::Real(1.0), Value::Real(1.0), Value::Real(0.0)]);
    assert_eq!(c.production(TypeTag::Bool, Production::PrimCall), 1);
    assert_eq!(c.primitive(TypeTag::Bool, Prim::Lt), 1);
    assert_eq!(c.events(), 8);
}

#[test]
fn counts_are_additive_over_subtrees() {
    let whole = count_productions(&parse_program("(lambda (x) (+ (* x 2.0) (if true x 1.0)))").unwrap()).unwrap();
    let mut parts = ProductionCounts::default();
    for sub in ["(lambda (x) (* x 2.0))", "(lambda (x) (if true x 1.0))"] {
        parts.merge(&count_productions(&parse_program(sub).unwrap()).unwrap());
    }
    *parts.productions.real.entry(Production::PrimCall).or_insert(0) += 1;
    *parts.primitives.real.entry(Prim::Add).or_insert(0) += 1;
    assert_eq!(whole.productions, parts.productions);
    assert_eq!(whole.primitives, parts.primitives);
    assert_eq!(whole.events(), parts.events());
}

#[test]
fn empty_corpus_gives_the_uniform_prior() {
    let fitted = fit_priors(&[], 1.0, "none");
    let uniform = ProductionProbs::default();
    for ty in TypeTag::ALL {
        for ((p, w), (q, v)) in fitted.productions[ty].iter().zip(&uniform.productions[ty]) {
            assert_eq!(p, q);
            assert!((w - v).abs() < 1e-15);
        }
        for ((p, w), (q, v)) in fitted.primitives[ty].iter().zip(&uniform.primitives[ty]) {
            assert_eq!(p, q);
            assert!((w - v).abs() < 1e-15);
        }
    }
    assert_eq!(fitted.constants, uniform.constants);
    assert!(fitted.validate().is_ok());
}

#[test]
fn exclusion_removes_the_target() {
    let only = vec![CorpusEntry::new("bernoulli", BERNOULLI, "bernoulli").unwrap()];
    assert_eq!(fit_priors(&only, 1.0, "bernoulli"), fit_priors(&[], 1.0, "none"));

    let corpus = builtin_corpus();
    for target in ["bernoulli", "normal", "poisson", "beta", "gamma"] {
        let kept: Vec<CorpusEntry> = corpus.iter().filter(|e| e.target != target).cloned().collect();
        assert_eq!(fit_priors(&corpus, 1.0, target), fit_priors(&kept, 1.0, "none"));
    }
}

#[test]
fn dirichlet_mean_by_hand() {
    let mut counts = ProductionCounts::default();
    counts.productions.real.insert(Production::If, 3);
    counts.productions.real.insert(Production::Constant, 1);
    let prods = [Production::Variable, Production::Constant, Production::PrimCall, Production::If];
    let probs = probs_from_counts(&counts, 1.0, &prods, &Prim::BASE);
    assert_eq!(probs.production_prob(TypeTag::Real, Production::If), Some(0.5));
    assert_eq!(probs.production_prob(TypeTag::Real, Production::Constant), Some(0.25));
    assert!(probs.validate().is_ok());
}

#[test]
fn adding_an_if_never_lowers_its_probability() {
    let corpus = builtin_corpus();
    let base = fit_priors(&corpus, 1.0, "none");
    let mut more = corpus.clone();
    more.push(CorpusEntry::new("extra", "(lambda (x) (if (< x 0.0) 0.0 x))", "none").unwrap());
    let after = fit_priors(&more, 1.0, "none");
    let ty = TypeTag::Real;
    assert!(after.production_prob(ty, Production::If) >= base.production_prob(ty, Production::If));
}

#[test]
#[allow(clippy::approx_constant)]
fn fitted_corpus_prior_is_valid_and_favors_corpus_constants() {
    let probs = fit_priors(&builtin_corpus(), 1.0, "none");
    assert!(probs.validate().is_ok());
    assert!(probs.constants.atom_mass(3.14159) > 0.0);
    assert!(probs.constants.atom_mass(0.0) > probs.constants.atom_mass(-2.0));
    let extended = fit_priors_with(&builtin_corpus(), 1.0, "none", &Production::ALL, &Prim::ALL);
    assert!(extended.primitive_prob(TypeTag::Real, Prim::SafeBeta).is_some());
}

#[test]
fn counting_matches_the_sampler_choice_log() {
    let probs = fit_priors(&builtin_corpus(), 1.0, "none");
    let st = GrammarState::new(Grammar::new(probs, GrammarConfig::default()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = [Param::new("x0", TypeTag::Real), Param::new("x1", TypeTag::Bool)];
    for _ in 0..500 {
        let mut s = st.clone();
        let drawn = sample_program_logged(&params, TypeTag::Real, &mut s, &mut rng);
        let counted = count_productions(&drawn.program).unwrap();
        let mut logged = ProductionCounts::default();
        let mut constants: Vec<Value> = Vec::new();
        for e in &drawn.events {
            match e {
                Event::Production { ty, production } => *logged.productions[*ty].entry(*production).or_insert(0) += 1,
                Event::Primitive { ty, prim } => *logged.primitives[*ty].entry(*prim).or_insert(0) += 1,
                Event::Constant(v) => constants.push(*v),
            }
        }
        assert_eq!(counted.productions, logged.productions);
        assert_eq!(counted.primitives, logged.primitives);
        let mut all: Vec<Value> = counted.constants.real.iter().chain(&counted.constants.bool).copied().collect();
        let key = |v: &Value| (v.ty() as u8, v.to_f64().to_bits());
        all.sort_by_key(key);
        constants.sort_by_key(key);
        assert_eq!(all, constants);
    }
}

#[test]
fn loads_a_corpus_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.sx"), BERNOULLI).unwrap();
    std::fs::write(dir.path().join("b.json"), r#"{"name": "bern", "target": "bernoulli"}"#).unwrap();
    std::fs::write(dir.path().join("a.sx"), "(lambda () 1.0)").unwrap();
    std::fs::write(dir.path().join("a.json"), r#"{"name": "one", "target": "none"}"#).unwrap();
    let c = load_corpus(dir.path()).unwrap();
    assert_eq!(c.iter().map(|e| e.name.as_str()).collect::<Vec<_>>(), ["one", "bern"]);

    std::fs::write(dir.path().join("c.sx"), "(lambda () (").unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"name": "broken", "target": "none"}"#).unwrap();
    assert!(load_corpus(dir.path()).is_err());

    let shipped = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    assert_eq!(load_corpus(&shipped).unwrap().len(), builtin_corpus().len());
}
