use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sampler_synth::corpus::{builtin_corpus, fit_priors, CorpusEntry};
use sampler_synth::grammar::score_program;
use sampler_synth::harness::{
    beta_binomial_posterior_mh, compile_grammar, default_penalty, draw_settings, emit_histogram, histogram,
    learn_grammar, read_data_csv, run_compile_posterior, run_generalize_data, run_learn_distribution,
    sample_prior_showcase, showcase_grammar, split_data, CompileModel, ExperimentConfig, HarnessError,
    ReferenceDistribution, Report, Task, COMPILE_TARGET_PROGRAM,
};
use sampler_synth::sexpr::{parse_program, EvalBudget};
use sampler_synth::stats::{ks_one_sample, ks_two_sample, summary_moments, Family, PenaltyKind};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

#[test]
fn reference_beta_and_poisson_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let beta = ReferenceDistribution::beta(5.0).unwrap().sample(1_000_000, &mut rng);
    assert!((mean_var(&beta.values).0 - 5.0 / 6.0).abs() < 0.002);

    let pois = ReferenceDistribution::poisson(4.0).unwrap().sample(1_000_000, &mut rng);
    let (m, v) = mean_var(&pois.values);
    assert!((m - 4.0).abs() < 0.01, "{m}");
    assert!((v - 4.0).abs() < 0.05, "{v}");
    assert!(pois.values.iter().all(|x| x.fract() == 0.0 && *x >= 0.0));
}

#[test]
fn reference_parameters_are_validated() {
    assert!(matches!(ReferenceDistribution::bernoulli(1.0), Err(HarnessError::InvalidParameter(_))));
    assert!(matches!(ReferenceDistribution::poisson(0.0), Err(HarnessError::InvalidParameter(_))));
    assert!(matches!(ReferenceDistribution::gamma(-1.0), Err(HarnessError::InvalidParameter(_))));
    assert!(matches!(ReferenceDistribution::normal(0.0, 0.0), Err(HarnessError::InvalidParameter(_))));
    assert!(ReferenceDistribution::new(Family::Beta, &[1.0, 2.0]).is_err());
}

/// Sample moments of 10^6 exact draws against the analytic ones, with
/// tolerances of five standard errors (delta-method for the variance).
#[test]
fn reference_moments_match_analytic_values() {
    let dists = [
        ReferenceDistribution::bernoulli(0.3).unwrap(),
        ReferenceDistribution::poisson(2.5).unwrap(),
        ReferenceDistribution::gamma(0.7).unwrap(),
        ReferenceDistribution::gamma(3.0).unwrap(),
        ReferenceDistribution::beta(2.0).unwrap(),
        ReferenceDistribution::std_normal(),
        ReferenceDistribution::normal(-1.0, 2.0).unwrap(),
    ];
    let n = 1_000_000;
    for (i, d) in dists.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let x = d.sample(n, &mut rng).values;
        let s = summary_moments(&x).unwrap();
        let a = d.moments();
        let se_mean = (a.variance / n as f64).sqrt();
        let se_var = (a.variance * a.variance * (a.excess_kurtosis + 2.0) / n as f64).sqrt();
        assert!((s.mean - a.mean).abs() < 5.0 * se_mean, "{d:?} mean {} vs {}", s.mean, a.mean);
        assert!((s.variance - a.variance).abs() < 5.0 * se_var, "{d:?} var {} vs {}", s.variance, a.variance);
    }
}

#[test]
fn continuous_reference_samplers_pass_one_sample_ks() {
    let dists = [
        ReferenceDistribution::gamma(0.7).unwrap(),
        ReferenceDistribution::gamma(3.0).unwrap(),
        ReferenceDistribution::beta(5.0).unwrap(),
        ReferenceDistribution::std_normal(),
        ReferenceDistribution::normal(2.0, 0.5).unwrap(),
    ];
    for d in &dists {
        let passes = (0..10)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = d.sample(100_000, &mut rng).values;
                ks_one_sample(&x, |v| d.cdf(v)).unwrap().p >= 0.001
            })
            .count();
        assert!(passes >= 9, "{d:?}: {passes}/10");
    }
}

#[test]
fn histogram_conventions() {
    let h = histogram(&[0.0, 1.0], 2);
    assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), [1, 1]);
    assert_eq!((h[0].left, h[1].right), (0.0, 1.0));

    let h = histogram(&[2.0; 7], 5);
    assert_eq!(h.len(), 1);
    assert_eq!((h[0].left, h[0].right, h[0].count), (1.5, 2.5, 7));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    emit_histogram(&[0.0, 0.5, 1.0], 2, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("bin_left,bin_right,count"));
    assert_eq!(text.lines().count(), 3);
    assert!(emit_histogram(&[1.0], 0, &path).is_err());
    assert!(matches!(emit_histogram(&[1.0], 1, &dir.path().join("missing/h.csv")), Err(HarnessError::Io { .. })));
}

proptest! {
    #[test]
    fn histogram_counts_are_conserved(xs in prop::collection::vec(-1e6f64..1e6, 1..300), bins in 1usize..50) {
        let h = histogram(&xs, bins);
        prop_assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), xs.len() as u64);
        for w in h.windows(2) {
            prop_assert!(w[0].right <= w[1].left + 1e-9 * w[0].right.abs().max(1.0));
        }
    }
}

fn learn(target: Family) -> ExperimentConfig {
    ExperimentConfig::new(Task::Learn { target, held_out: None })
}

#[test]
fn degenerate_learning_run_gives_a_complete_report() {
    let mut c = learn(Family::Bernoulli);
    c.chains = 1;
    c.iterations = 1;
    let dir = tempfile::tempdir().unwrap();
    c.out_dir = Some(dir.path().to_path_buf());
    let r = run_learn_distribution(&c).unwrap();
    assert_eq!(r.format_version, 1);
    assert_eq!(r.chains.len(), 1);
    assert_eq!(r.chains[0].iterations_run, 1);
    assert_eq!(r.training_settings.len(), 5);
    assert!(r.training_settings.iter().all(|t| t[0] >= 0.1 && t[0] <= 0.9));
    assert_eq!(r.held_out_settings, vec![vec![0.3]]);
    assert_eq!(r.held_out.len(), 1);
    assert_eq!(r.held_out[0].theta, vec![0.3]);
    assert_eq!(r.held_out[0].samples, 1000);
    assert_eq!(r.train.len(), 5);
    parse_program(&r.best_program).unwrap();
    for f in ["report.json", "traces.csv", "best_program.sx"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for h in &r.histograms {
        assert!(h.path.exists());
    }
    let back = Report::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn per_target_default_penalties() {
    let c = learn(Family::StdNormal);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = draw_settings(Family::StdNormal, 5, &mut rng);
    assert_eq!(s, vec![Vec::<f64>::new()]);
    let p = default_penalty(Family::StdNormal, &c, s);
    match p.kind {
        PenaltyKind::Moments { targets, sigma, .. } => {
            assert_eq!(targets, [0.0, 1.0, 0.0, 0.0]);
            assert_eq!(sigma, 0.1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(p.samples_per_setting, 10_000);
    let p = default_penalty(Family::Bernoulli, &c, vec![vec![0.5]]);
    assert_eq!((p.kind, p.samples_per_setting), (PenaltyKind::GTestBernoulli, 100));
    assert_eq!(default_penalty(Family::Poisson, &c, vec![vec![1.0]]).kind, PenaltyKind::GTestPoisson);
    for f in [Family::Gamma, Family::Beta, Family::Normal] {
        assert_eq!(default_penalty(f, &c, vec![]).kind, PenaltyKind::KsOneSample { family: f });
    }
    let s = draw_settings(Family::Normal, 5, &mut rng);
    assert!(s.iter().all(|t| (-5.0..=5.0).contains(&t[0]) && (0.5..=3.0).contains(&t[1])));
}

#[test]
fn leave_one_out_is_enforced() {
    let corpus = builtin_corpus();
    for (family, label) in [
        (Family::Bernoulli, "bernoulli"),
        (Family::StdNormal, "normal"),
        (Family::Normal, "normal"),
        (Family::Poisson, "poisson"),
        (Family::Beta, "beta"),
        (Family::Gamma, "gamma"),
    ] {
        let c = learn(family);
        let g = learn_grammar(&c, &corpus, family).unwrap();
        let kept: Vec<CorpusEntry> = corpus.iter().filter(|e| e.target != label).cloned().collect();
        assert_eq!(g.grammar.probs, fit_priors(&kept, 1.0, "none"), "{family:?}");
    }
}

#[test]
fn held_out_settings_are_checked() {
    let mut c = learn(Family::Bernoulli);
    c.task = Task::Learn { target: Family::Bernoulli, held_out: Some(vec![vec![1.5]]) };
    assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    let bad = r#"{"task": {"kind": "learn", "target": "bernoulli"}, "chains": 0}"#;
    assert!(ExperimentConfig::from_json(bad).is_err());
    let unknown = r#"{"task": {"kind": "learn", "target": "bernoulli"}, "chainz": 3}"#;
    assert!(ExperimentConfig::from_json(unknown).is_err());
    let ok = r#"{"task": {"kind": "learn", "target": "gamma"}, "iterations": 10}"#;
    assert_eq!(ExperimentConfig::from_json(ok).unwrap().iterations, 10);
}

#[test]
fn learning_runs_are_reproducible() {
    let mut c = learn(Family::Bernoulli);
    c.chains = 2;
    c.iterations = 300;
    c.seed = 17;
    let dir = tempfile::tempdir().unwrap();
    c.out_dir = Some(dir.path().to_path_buf());
    let a = run_learn_distribution(&c).unwrap();
    let echoed = Report::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let b = run_learn_distribution(&echoed.config).unwrap();
    assert_eq!(a.best_program, b.best_program);
    assert_eq!(a, b);
}

fn write_csv(dir: &Path, name: &str, rows: &[String]) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, rows.join("\n")).unwrap();
    p
}

#[test]
fn data_csv_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<String> = (0..30).map(|i| format!("{}", i as f64 * 0.5)).collect();
    let p = write_csv(dir.path(), "ok.csv", &rows);
    assert_eq!(read_data_csv(&p, false).unwrap().len(), 30);

    let mut with_header = vec!["x".to_string()];
    with_header.extend(rows.iter().cloned());
    let p = write_csv(dir.path(), "header.csv", &with_header);
    assert_eq!(read_data_csv(&p, true).unwrap().len(), 30);
    assert!(matches!(read_data_csv(&p, false), Err(HarnessError::CsvFormat { line: 1, .. })));

    let mut bad = rows.clone();
    bad[7] = "abc".into();
    let p = write_csv(dir.path(), "bad.csv", &bad);
    let err = read_data_csv(&p, false).unwrap_err();
    assert!(matches!(err, HarnessError::CsvFormat { line: 8, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    let p = write_csv(dir.path(), "short.csv", &rows[..10]);
    assert!(matches!(read_data_csv(&p, false), Err(HarnessError::CsvFormat { .. })));
    let p = write_csv(dir.path(), "wide.csv", &vec!["1,2".to_string(); 25]);
    assert!(matches!(read_data_csv(&p, false), Err(HarnessError::CsvFormat { .. })));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f64> = (0..31).map(f64::from).collect();
    let (a, b) = split_data(&data, &mut rng);
    assert_eq!((a.len(), b.len()), (15, 16));
    let mut all: Vec<f64> = a.into_iter().chain(b).collect();
    all.sort_by(f64::total_cmp);
    assert_eq!(all, data);
}

#[test]
fn constant_column_is_a_valid_generalization_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_csv(dir.path(), "const.csv", &vec!["2.5".to_string(); 40]);
    let mut c = ExperimentConfig::new(Task::Generalize { data: p, has_header: false });
    c.chains = 1;
    c.iterations = 200;
    let r = run_generalize_data(&c).unwrap();
    assert_eq!(r.held_out.len(), 1);
    let ks = &r.held_out[0];
    assert!(ks.statistic.is_some() || ks.error.is_some());
    assert_eq!(r.extra["held_out_rows"], 20);

    // a nonconstant program is far from a point mass, the point mass is not
    let x: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    assert!(ks_two_sample(&x, &[2.5; 20]).unwrap().p < 1e-6);
    assert_eq!(ks_two_sample(&[2.5; 20], &[2.5; 20]).unwrap().d, 0.0);

    let bad = write_csv(dir.path(), "bad.csv", &vec!["x".to_string(); 40]);
    let c = ExperimentConfig::new(Task::Generalize { data: bad, has_header: false });
    assert_eq!(run_generalize_data(&c).unwrap_err().exit_code(), 3);
}

#[test]
fn internal_posterior_mh_matches_the_conjugate_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mh = beta_binomial_posterior_mh(CompileModel::BetaBinomial, 5000, 20, 1000, &mut rng);
    assert_eq!(mh.len(), 5000);
    let beta = ReferenceDistribution::beta(5.0).unwrap();
    let p = ks_one_sample(&mh, |x| beta.cdf(x)).unwrap().p;
    assert!(p >= 0.01, "{p}");
    assert_eq!(CompileModel::BetaBinomial.posterior(), (5.0, 1.0));
}

#[test]
fn compile_target_has_finite_prior_and_report_is_complete() {
    let mut c = ExperimentConfig::new(Task::Compile { model: CompileModel::BetaBinomial });
    let g = compile_grammar(&c, &builtin_corpus()).unwrap();
    let target = parse_program(COMPILE_TARGET_PROGRAM).unwrap();
    assert!(score_program(&target, &g).unwrap().is_finite());

    c.chains = 1;
    c.iterations = 50;
    let r = run_compile_posterior(&c).unwrap();
    assert!(r.extra["mh_vs_exact_ks"]["p"].as_f64().unwrap() >= 0.01);
    assert!(r.extra["target_log_prior"].as_f64().unwrap().is_finite());
    assert_eq!(r.held_out[0].test, "ks_one_sample");
}

#[test]
fn prior_showcase() {
    let g = showcase_grammar(&builtin_corpus(), 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = sample_prior_showcase(&g, 6, 10_000, 3, EvalBudget::default(), 30, Some(dir.path())).unwrap();
    assert_eq!(s.programs.len(), 6);
    assert_eq!(s.files.len(), 6);
    for f in &s.files {
        let text = std::fs::read_to_string(f).unwrap();
        let total: u64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
        assert_eq!(total, 10_000);
    }
    assert!(dir.path().join("showcase.json").exists());

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let a = sample_prior_showcase(&g, 1, 1000, 9, EvalBudget::default(), 20, Some(d1.path())).unwrap();
    let b = sample_prior_showcase(&g, 1, 1000, 9, EvalBudget::default(), 20, Some(d2.path())).unwrap();
    assert_eq!(a.programs, b.programs);
    assert_eq!(std::fs::read(&a.files[0]).unwrap(), std::fs::read(&b.files[0]).unwrap());

    let many = sample_prior_showcase(&g, 1000, 100, 5, EvalBudget::default(), 10, None).unwrap();
    assert!(many.attempts >= 1000);
    assert!(many.skip_rate < 1.0);
    assert!(sample_prior_showcase(&g, 0, 10, 0, EvalBudget::default(), 10, None).is_err());
}
