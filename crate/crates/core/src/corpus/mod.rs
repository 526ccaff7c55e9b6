//! Human-written sampler corpus and prior fitting.
//!
//! Every node of a corpus program is one production event keyed by its type;
//! primitive calls also record which primitive was chosen and constants
//! record their value. [`fit_priors`] turns the pooled counts into
//! Dirichlet-smoothed production probabilities, leaving out every entry that
//! targets the distribution being learned.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::grammar::{common_constants, ConstantBase, PerType, Production, ProductionProbs};
use crate::sexpr::{self, Expr, Prim, Program, TypeTag, Value};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unsupported program: {0}")]
    UnsupportedProgram(String),
    #[error("corpus entry '{name}': {message}")]
    Entry { name: String, message: String },
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub program: Program,
    /// Reference distribution family the program samples, or `"none"`.
    pub target: String,
}

#[derive(Debug, Deserialize)]
struct EntryMeta {
    name: String,
    target: String,
}

impl CorpusEntry {
    /// Parses and type-checks program text.
    pub fn new(name: &str, text: &str, target: &str) -> Result<Self, CorpusError> {
        let err = |message: String| CorpusError::Entry { name: name.to_string(), message };
        let program = sexpr::parse_program(text).map_err(|e| err(e.to_string()))?;
        sexpr::check_program(&program).map_err(|e| err(e.to_string()))?;
        count_productions(&program).map_err(|e| err(e.to_string()))?;
        Ok(CorpusEntry { name: name.to_string(), program, target: target.to_string() })
    }
}

const BUILTIN: [(&str, &str, &str); 5] = [
    ("bernoulli", include_str!("../../../../corpus/bernoulli.sx"), "bernoulli"),
    ("box-muller-normal", include_str!("../../../../corpus/box-muller-normal.sx"), "normal"),
    ("knuth-poisson", include_str!("../../../../corpus/knuth-poisson.sx"), "poisson"),
    ("beta-inverse-cdf", include_str!("../../../../corpus/beta-inverse-cdf.sx"), "beta"),
    ("marsaglia-tsang-gamma", include_str!("../../../../corpus/marsaglia-tsang-gamma.sx"), "gamma"),
];

/// The shipped corpus.
pub fn builtin_corpus() -> Vec<CorpusEntry> {
    BUILTIN
        .iter()
        .map(|(name, text, target)| CorpusEntry::new(name, text, target).expect("shipped corpus is valid"))
        .collect()
}

/// Loads every `NAME.sx` with a sibling `NAME.json` (`{"name", "target"}`),
/// sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sx"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|sx| {
            let stem = sx.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let meta_text = std::fs::read_to_string(sx.with_extension("json"))
                .map_err(|e| CorpusError::Entry { name: stem.clone(), message: format!("metadata: {e}") })?;
            let meta: EntryMeta = serde_json::from_str(&meta_text)
                .map_err(|e| CorpusError::Entry { name: stem.clone(), message: format!("metadata: {e}") })?;
            CorpusEntry::new(&meta.name, &std::fs::read_to_string(&sx)?, &meta.target)
        })
        .collect()
}

/// Event counts of one or more programs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProductionCounts {
    pub productions: PerType<BTreeMap<Production, u64>>,
    pub primitives: PerType<BTreeMap<Prim, u64>>,
    /// Constant values in order of appearance.
    pub constants: PerType<Vec<Value>>,
}

impl ProductionCounts {
    pub fn production(&self, ty: TypeTag, p: Production) -> u64 {
        self.productions[ty].get(&p).copied().unwrap_or(0)
    }

    pub fn primitive(&self, ty: TypeTag, p: Prim) -> u64 {
        self.primitives[ty].get(&p).copied().unwrap_or(0)
    }

    /// Total number of production events.
    pub fn events(&self) -> u64 {
        TypeTag::ALL.iter().map(|&t| self.productions[t].values().sum::<u64>()).sum()
    }

    pub fn merge(&mut self, other: &ProductionCounts) {
        for ty in TypeTag::ALL {
            for (p, c) in &other.productions[ty] {
                *self.productions[ty].entry(*p).or_insert(0) += c;
            }
            for (p, c) in &other.primitives[ty] {
                *self.primitives[ty].entry(*p).or_insert(0) += c;
            }
            self.constants[ty].extend(other.constants[ty].iter().copied());
        }
    }

    fn record(&mut self, e: &Expr) {
        let ty = e.ty();
        *self.productions[ty].entry(Production::of(e)).or_insert(0) += 1;
        match e {
            Expr::Prim { op, .. } => *self.primitives[ty].entry(*op).or_insert(0) += 1,
            Expr::Const(v) => self.constants[ty].push(*v),
            _ => {}
        }
    }
}

/// Counts the production events of a program: one per node of the main body
/// and of each procedure body.
pub fn count_productions(program: &Program) -> Result<ProductionCounts, CorpusError> {
    let mut counts = ProductionCounts::default();
    let mut bad = None;
    program.body.walk(&mut |e| {
        if matches!(e, Expr::Recur { .. }) {
            bad = Some("recur outside a compound procedure".to_string());
        }
        counts.record(e);
    });
    for p in &program.procedures {
        p.body.walk(&mut |e| {
            if matches!(e, Expr::Call { .. }) {
                bad = Some(format!("procedure '{}' calls another compound procedure", p.name));
            }
            counts.record(e);
        });
    }
    match bad {
        Some(msg) => Err(CorpusError::UnsupportedProgram(msg)),
        None => Ok(counts),
    }
}

/// Dirichlet-smoothed probabilities from counts: `(count + pseudocount)`
/// normalized over each categorical. Observed real constants join the common
/// constants as atoms of the real base distribution, weighted the same way.
pub fn probs_from_counts(
    counts: &ProductionCounts,
    pseudocount: f64,
    productions: &[Production],
    prims: &[Prim],
) -> ProductionProbs {
    assert!(pseudocount > 0.0, "pseudocount must be positive");
    let smooth = |c: u64| c as f64 + pseudocount;
    let productions =
        PerType::from_fn(|ty| normalize(productions.iter().map(|&p| (p, smooth(counts.production(ty, p)))).collect()));
    let primitives = PerType::from_fn(|ty| {
        normalize(prims.iter().filter(|p| p.ret() == ty).map(|&p| (p, smooth(counts.primitive(ty, p)))).collect())
    });
    let mut atoms: Vec<(f64, u64)> = common_constants().into_iter().map(|v| (v, 0)).collect();
    for v in &counts.constants.real {
        let x = v.to_f64();
        match atoms.iter_mut().find(|(a, _)| a.to_bits() == x.to_bits()) {
            Some(a) => a.1 += 1,
            None => atoms.push((x, 1)),
        }
    }
    let constants = ConstantBase::with_atoms(atoms.into_iter().map(|(v, c)| (v, smooth(c))).collect());
    ProductionProbs { productions, primitives, constants }
}

fn normalize<K>(mut v: Vec<(K, f64)>) -> Vec<(K, f64)> {
    let z: f64 = v.iter().map(|(_, w)| w).sum();
    v.iter_mut().for_each(|(_, w)| *w /= z);
    v
}

/// Pooled counts of every entry whose target differs from `exclude`.
pub fn corpus_counts(corpus: &[CorpusEntry], exclude: &str) -> ProductionCounts {
    let mut total = ProductionCounts::default();
    for entry in corpus.iter().filter(|e| e.target != exclude) {
        total.merge(&count_productions(&entry.program).expect("corpus entries are validated on construction"));
    }
    total
}

/// Fits production probabilities over all seven productions and the base
/// primitive set, leaving out entries targeting `exclude`.
pub fn fit_priors(corpus: &[CorpusEntry], pseudocount: f64, exclude: &str) -> ProductionProbs {
    fit_priors_with(corpus, pseudocount, exclude, &Production::ALL, &Prim::BASE)
}

pub fn fit_priors_with(
    corpus: &[CorpusEntry],
    pseudocount: f64,
    exclude: &str,
    productions: &[Production],
    prims: &[Prim],
) -> ProductionProbs {
    probs_from_counts(&corpus_counts(corpus, exclude), pseudocount, productions, prims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_corpus_is_valid() {
        let c = builtin_corpus();
        assert_eq!(c.len(), 5);
        assert!(c.iter().all(|e| sexpr::check_program(&e.program).is_ok()));
    }

    #[test]
    fn single_constant() {
        let p = sexpr::parse_program("(lambda () 1.0)").unwrap();
        let c = count_productions(&p).unwrap();
        assert_eq!(c.events(), 1);
        assert_eq!(c.production(TypeTag::Real, Production::Constant), 1);
        assert_eq!(c.constants.real, vec![Value::Real(1.0)]);
    }

    #[test]
    fn top_level_recur_is_unsupported() {
        let p = sexpr::parse_program("(lambda (x) real (if (< x 0.0) x (recur (dec x))))").unwrap();
        assert!(count_productions(&p).is_err());
    }
}
