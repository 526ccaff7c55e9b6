//! Python bindings: programs, the corpus-fitted prior, test statistics and
//! experiment runs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use synth::corpus::{builtin_corpus, fit_priors, load_corpus};
use synth::grammar::{sample_program, score_program, Grammar, GrammarConfig, GrammarState};
use synth::harness::{run_experiment as run_task, ExperimentConfig};
use synth::sexpr::{parse_program, run_sampler, EvalBudget, Program, TypeTag};
use synth::stats::{self, Penalty, PenaltySpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn type_tag(name: &str) -> PyResult<TypeTag> {
    TypeTag::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown type '{name}'")))
}

/// A parsed and type-checked sampler program.
#[pyclass(name = "Program", module = "sampler_synth", frozen)]
struct PyProgram {
    inner: Program,
}

#[pymethods]
impl PyProgram {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        parse_program(text).map(|inner| PyProgram { inner }).map_err(value_err)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Program({:?})", self.inner.to_string())
    }

    fn __eq__(&self, other: &PyProgram) -> bool {
        self.inner == other.inner
    }

    #[getter]
    fn param_types(&self) -> Vec<&'static str> {
        self.inner.param_types().into_iter().map(TypeTag::name).collect()
    }

    #[getter]
    fn return_type(&self) -> &'static str {
        self.inner.ret.name()
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn depth(&self) -> usize {
        self.inner.max_depth()
    }

    /// Evaluates the program `count` times at `args`.
    #[pyo3(signature = (args, count, seed = 0))]
    fn sample(&self, args: Vec<f64>, count: usize, seed: u64) -> PyResult<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_sampler(&self.inner, &args, count, &mut rng, EvalBudget::default()).map(|s| s.values).map_err(value_err)
    }
}

/// Program prior fitted to the sampler corpus.
#[pyclass(name = "Grammar", module = "sampler_synth")]
struct PyGrammar {
    state: GrammarState,
}

#[pymethods]
impl PyGrammar {
    /// Fits production probabilities to the corpus, leaving out entries for
    /// `exclude` ("none" keeps everything).
    #[staticmethod]
    #[pyo3(signature = (exclude = "none", pseudocount = 1.0, corpus_dir = None))]
    fn from_corpus(exclude: &str, pseudocount: f64, corpus_dir: Option<std::path::PathBuf>) -> PyResult<Self> {
        let corpus = match corpus_dir {
            Some(dir) => load_corpus(&dir).map_err(value_err)?,
            None => builtin_corpus(),
        };
        let grammar =
            Grammar::new(fit_priors(&corpus, pseudocount, exclude), GrammarConfig::default()).map_err(value_err)?;
        Ok(PyGrammar { state: GrammarState::new(grammar) })
    }

    fn log_prior(&self, program: &PyProgram) -> PyResult<f64> {
        score_program(&program.inner, &self.state).map_err(value_err)
    }

    #[pyo3(signature = (param_types, ret = "real", seed = 0))]
    fn sample(&self, param_types: Vec<String>, ret: &str, seed: u64) -> PyResult<PyProgram> {
        let params = param_types.iter().map(|t| type_tag(t)).collect::<PyResult<Vec<_>>>()?;
        let mut scratch = self.state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = sample_program(&params, type_tag(ret)?, &mut scratch, &mut rng);
        Ok(PyProgram { inner })
    }
}

#[pyfunction]
fn chi2_cdf(x: f64, k: u32) -> f64 {
    stats::chi2_cdf(x, k)
}

/// G-test p-value of 0/1 samples against Bernoulli(p).
#[pyfunction]
fn g_test_bernoulli(samples: Vec<f64>, p: f64) -> PyResult<f64> {
    stats::g_test_p_value(&samples, p).map_err(value_err)
}

#[pyfunction]
fn g_test_poisson(samples: Vec<f64>, lam: f64) -> PyResult<f64> {
    stats::g_test_poisson(&samples, lam).map_err(value_err)
}

/// Two-sample KS statistic and asymptotic p-value.
#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    stats::ks_two_sample(&a, &b).map(|r| (r.d, r.p)).map_err(value_err)
}

/// Mean, variance, skewness and excess kurtosis.
#[pyfunction]
fn summary_moments(samples: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    let s = stats::summary_moments(&samples).map_err(value_err)?;
    Ok((s.mean, s.variance, s.skewness, s.excess_kurtosis))
}

/// Log penalty of a program under a JSON penalty spec.
#[pyfunction]
#[pyo3(signature = (program, spec_json, seed = 0))]
fn log_penalty(program: &PyProgram, spec_json: &str, seed: u64) -> PyResult<f64> {
    let spec: PenaltySpec = serde_json::from_str(spec_json).map_err(value_err)?;
    spec.validate().map_err(value_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(spec.log_penalty(&program.inner, &mut rng, EvalBudget::default()))
}

/// Runs the experiment described by a JSON config and returns the report JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(value_err)?;
    py.detach(|| run_task(&config)).map(|r| r.to_json()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn sampler_synth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProgram>()?;
    m.add_class::<PyGrammar>()?;
    m.add_function(wrap_pyfunction!(chi2_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(g_test_bernoulli, m)?)?;
    m.add_function(wrap_pyfunction!(g_test_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(summary_moments, m)?)?;
    m.add_function(wrap_pyfunction!(log_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
