//! Generative prior over program text.
//!
//! Expressions of a requested type are expanded by one of seven productions
//! (variable, constant, primitive call, compound call, let, if, recur) whose
//! probabilities are renormalized over the productions eligible at a node.
//! Constants and compound procedures are memoized per type by Chinese
//! restaurant processes, so values and procedures already used in a program
//! are likely to be reused.
//!
//! [`score_program`] computes the exact log probability of the sampling
//! process in [`sample_program`], including CRP seatings, base densities and
//! procedure bodies.

mod crp;
mod regen;
mod sample;
mod score;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::{Index, IndexMut};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sexpr::{self, Ident, Prim, Procedure, TypeTag, Value};

pub use crp::{CrpStore, Seating};
pub use regen::{canonicalize, locate, node_context, regenerate_subtree, replace_subtree, NodeAddr, Regeneration};
pub use sample::{sample_program, sample_program_logged, Event, SampledProgram};
pub use score::score_program;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("unsupported program: {0}")]
    UnsupportedProgram(String),
    #[error("node index {index} out of range (program has {count} addressable nodes)")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("invalid grammar: {0}")]
    Invalid(String),
}

/// The seven expansion rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Production {
    Variable,
    Constant,
    PrimCall,
    CompoundCall,
    Let,
    If,
    Recur,
}

impl Production {
    pub const ALL: [Production; 7] = [
        Production::Variable,
        Production::Constant,
        Production::PrimCall,
        Production::CompoundCall,
        Production::Let,
        Production::If,
        Production::Recur,
    ];

    /// The production an existing node was generated by.
    pub fn of(e: &sexpr::Expr) -> Production {
        use sexpr::Expr;
        match e {
            Expr::Var { .. } => Production::Variable,
            Expr::Const(_) => Production::Constant,
            Expr::Prim { .. } => Production::PrimCall,
            Expr::Call { .. } => Production::CompoundCall,
            Expr::Let { .. } => Production::Let,
            Expr::If { .. } => Production::If,
            Expr::Recur { .. } => Production::Recur,
        }
    }
}

/// One value per type tag.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerType<T> {
    pub real: T,
    pub bool: T,
}

impl<T> PerType<T> {
    pub fn from_fn(mut f: impl FnMut(TypeTag) -> T) -> Self {
        PerType { real: f(TypeTag::Real), bool: f(TypeTag::Bool) }
    }
}

impl<T> Index<TypeTag> for PerType<T> {
    type Output = T;
    fn index(&self, t: TypeTag) -> &T {
        match t {
            TypeTag::Real => &self.real,
            TypeTag::Bool => &self.bool,
        }
    }
}

impl<T> IndexMut<TypeTag> for PerType<T> {
    fn index_mut(&mut self, t: TypeTag) -> &mut T {
        match t {
            TypeTag::Real => &mut self.real,
            TypeTag::Bool => &mut self.bool,
        }
    }
}

/// The common-constant atoms of the real base distribution.
pub fn common_constants() -> Vec<f64> {
    vec![-2.0, -1.0, 0.0, 1.0, 2.0, PI]
}

/// Base distribution for real constants: a normal component, a uniform
/// component and weighted atoms. Component weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantBase {
    pub normal_weight: f64,
    pub normal_sd: f64,
    pub uniform_weight: f64,
    pub uniform_low: f64,
    pub uniform_high: f64,
    pub atom_weight: f64,
    /// `(value, weight)` with weights summing to one inside the atom component.
    pub atoms: Vec<(f64, f64)>,
}

impl Default for ConstantBase {
    fn default() -> Self {
        ConstantBase::with_atoms(common_constants().into_iter().map(|v| (v, 1.0)).collect())
    }
}

impl ConstantBase {
    /// Default mixture (0.45 normal, 0.45 uniform, 0.10 atoms) over the given
    /// unnormalized atom weights.
    pub fn with_atoms(atoms: Vec<(f64, f64)>) -> Self {
        ConstantBase {
            normal_weight: 0.45,
            normal_sd: 10.0,
            uniform_weight: 0.45,
            uniform_low: -100.0,
            uniform_high: 100.0,
            atom_weight: 0.10,
            atoms: normalize_atoms(atoms),
        }
    }

    /// A purely discrete base over the given values, uniformly weighted.
    pub fn atoms_only(values: &[f64]) -> Self {
        ConstantBase {
            normal_weight: 0.0,
            uniform_weight: 0.0,
            atom_weight: 1.0,
            atoms: normalize_atoms(values.iter().map(|&v| (v, 1.0)).collect()),
            ..ConstantBase::with_atoms(Vec::new())
        }
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let total = self.normal_weight + self.uniform_weight + self.atom_weight;
        let ok = self.normal_weight >= 0.0
            && self.uniform_weight >= 0.0
            && self.atom_weight >= 0.0
            && (total - 1.0).abs() < 1e-12
            && self.normal_sd > 0.0
            && self.uniform_high > self.uniform_low
            && (self.atom_weight == 0.0 || !self.atoms.is_empty())
            && self.atoms.iter().all(|(v, w)| v.is_finite() && *w > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GrammarError::Invalid("constant base weights must be nonnegative and sum to one".into()))
        }
    }

    /// Probability mass the base assigns to exactly `x`.
    pub fn atom_mass(&self, x: f64) -> f64 {
        self.atom_weight * self.atoms.iter().filter(|(v, _)| v.to_bits() == x.to_bits()).map(|(_, w)| w).sum::<f64>()
    }

    /// Density of the continuous part at `x`.
    pub fn continuous_density(&self, x: f64) -> f64 {
        let z = x / self.normal_sd;
        let normal = (-0.5 * z * z).exp() / (self.normal_sd * (2.0 * PI).sqrt());
        let uniform = if (self.uniform_low..=self.uniform_high).contains(&x) {
            1.0 / (self.uniform_high - self.uniform_low)
        } else {
            0.0
        };
        self.normal_weight * normal + self.uniform_weight * uniform
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>();
        if u < self.normal_weight {
            Normal::new(0.0, self.normal_sd).expect("positive sd").sample(rng)
        } else if u < self.normal_weight + self.uniform_weight {
            self.uniform_low + (self.uniform_high - self.uniform_low) * rng.random::<f64>()
        } else {
            let mut v = rng.random::<f64>();
            for (x, w) in &self.atoms {
                if v < *w {
                    return *x;
                }
                v -= w;
            }
            self.atoms.last().map(|(x, _)| *x).unwrap_or(0.0)
        }
    }
}

fn normalize_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    // merge duplicates (bitwise) preserving first-seen order
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, w) in atoms.drain(..) {
        match merged.iter_mut().find(|(x, _)| x.to_bits() == v.to_bits()) {
            Some(m) => m.1 += w,
            None => merged.push((v, w)),
        }
    }
    let z: f64 = merged.iter().map(|(_, w)| w).sum();
    if z > 0.0 {
        for m in &mut merged {
            m.1 /= z;
        }
    }
    merged
}

fn normalize<K: Copy>(items: Vec<(K, f64)>) -> Vec<(K, f64)> {
    let z: f64 = items.iter().map(|(_, w)| w).sum();
    items.into_iter().map(|(k, w)| (k, w / z)).collect()
}

/// Production, primitive and constant-base probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductionProbs {
    /// Per type, the enabled productions with their probabilities.
    pub productions: PerType<Vec<(Production, f64)>>,
    /// Per type, the primitives returning that type with their probabilities.
    pub primitives: PerType<Vec<(Prim, f64)>>,
    pub constants: ConstantBase,
}

impl ProductionProbs {
    /// Uniform probabilities over the given productions and primitives.
    pub fn uniform(productions: &[Production], prims: &[Prim], constants: ConstantBase) -> Self {
        ProductionProbs {
            productions: PerType::from_fn(|_| normalize(productions.iter().map(|&p| (p, 1.0)).collect())),
            primitives: PerType::from_fn(|t| {
                normalize(prims.iter().filter(|p| p.ret() == t).map(|&p| (p, 1.0)).collect())
            }),
            constants,
        }
    }

    pub fn production_prob(&self, ty: TypeTag, prod: Production) -> Option<f64> {
        self.productions[ty].iter().find(|(p, _)| *p == prod).map(|(_, w)| *w)
    }

    pub fn primitive_prob(&self, ty: TypeTag, prim: Prim) -> Option<f64> {
        self.primitives[ty].iter().find(|(p, _)| *p == prim).map(|(_, w)| *w)
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        for ty in TypeTag::ALL {
            let prods = &self.productions[ty];
            let sum: f64 = prods.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-12 || prods.iter().any(|(_, w)| *w <= 0.0) {
                return Err(GrammarError::Invalid(format!("{ty} productions must be positive and sum to one")));
            }
            if self.production_prob(ty, Production::Constant).is_none() {
                return Err(GrammarError::Invalid(format!("the constant production must be enabled for {ty}")));
            }
            let prims = &self.primitives[ty];
            let sum: f64 = prims.iter().map(|(_, w)| w).sum();
            if !prims.is_empty() && ((sum - 1.0).abs() > 1e-12 || prims.iter().any(|(_, w)| *w <= 0.0)) {
                return Err(GrammarError::Invalid(format!("{ty} primitives must be positive and sum to one")));
            }
            if prims.iter().any(|(p, _)| p.ret() != ty) {
                return Err(GrammarError::Invalid(format!("{ty} primitive list contains a wrongly typed primitive")));
            }
        }
        self.constants.validate()
    }
}

impl Default for ProductionProbs {
    fn default() -> Self {
        ProductionProbs::uniform(&Production::ALL, &Prim::BASE, ConstantBase::default())
    }
}

/// Structural settings of the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub max_depth: u32,
    /// CRP concentration for constants.
    pub alpha: f64,
    /// CRP concentration for compound procedures.
    pub beta: f64,
    /// Mean of the Poisson part of `1 + Poisson(mean)` procedure arity.
    pub arity_mean: f64,
    /// Arity cap; the Poisson tail is folded onto it.
    pub max_arity: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig { max_depth: 12, alpha: 1.0, beta: 1.0, arity_mean: 1.0, max_arity: 3 }
    }
}

/// The frozen part of the prior: probabilities plus structure.
#[derive(Default, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub probs: ProductionProbs,
    pub config: GrammarConfig,
}

/// Lexical context of an expansion site.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctx {
    pub scope: Vec<(Ident, TypeTag)>,
    pub depth: u32,
    /// Signature of the lambda `recur` would re-enter, when recursion is allowed.
    pub recur: Option<(Vec<TypeTag>, TypeTag)>,
    /// Inside a compound procedure body, where further compound calls are not generated.
    pub in_body: bool,
}

impl Ctx {
    pub fn top(params: &[sexpr::Param]) -> Self {
        Ctx { scope: params.iter().map(|p| (p.name.clone(), p.ty)).collect(), depth: 1, recur: None, in_body: false }
    }

    pub fn procedure_body(p: &Procedure) -> Self {
        Ctx {
            scope: p.params.iter().map(|q| (q.name.clone(), q.ty)).collect(),
            depth: 1,
            recur: Some((p.param_types(), p.ret)),
            in_body: true,
        }
    }

    pub fn child(&self) -> Self {
        Ctx { depth: self.depth + 1, ..self.clone() }
    }

    /// Visible variables of type `ty` (shadowed names are hidden).
    pub fn vars_of(&self, ty: TypeTag) -> Vec<Ident> {
        let mut out: Vec<Ident> = Vec::new();
        let mut seen: Vec<&Ident> = Vec::new();
        for (n, t) in self.scope.iter().rev() {
            if seen.contains(&n) {
                continue;
            }
            seen.push(n);
            if *t == ty {
                out.push(n.clone());
            }
        }
        out.reverse();
        out
    }

    /// Canonical name for a new let binding at this site.
    pub fn let_name(&self) -> Ident {
        let_name_for(&self.scope)
    }
}

pub(crate) fn let_name_for(scope: &[(Ident, TypeTag)]) -> Ident {
    let mut name = format!("v{}", scope.len());
    while scope.iter().any(|(n, _)| **n == *name) {
        name.push('_');
    }
    Ident::from(name)
}

impl Grammar {
    pub fn new(probs: ProductionProbs, config: GrammarConfig) -> Result<Self, GrammarError> {
        probs.validate()?;
        if config.max_depth < 1 || config.alpha <= 0.0 || config.beta <= 0.0 || config.max_arity < 1 {
            return Err(GrammarError::Invalid("max_depth, alpha, beta and max_arity must be positive".into()));
        }
        Ok(Grammar { probs, config })
    }

    /// Productions available at a site, renormalized.
    pub fn eligible(&self, ty: TypeTag, ctx: &Ctx) -> Vec<(Production, f64)> {
        let at_cap = ctx.depth >= self.config.max_depth;
        let has_var = ctx.scope.iter().any(|(_, t)| *t == ty) && !ctx.vars_of(ty).is_empty();
        let items: Vec<(Production, f64)> = self.probs.productions[ty]
            .iter()
            .copied()
            .filter(|(p, _)| match p {
                Production::Variable => has_var,
                Production::Constant => true,
                Production::PrimCall => !at_cap && !self.probs.primitives[ty].is_empty(),
                Production::CompoundCall => !at_cap && !ctx.in_body,
                Production::Let | Production::If => !at_cap,
                Production::Recur => !at_cap && ctx.recur.as_ref().is_some_and(|(_, r)| *r == ty),
            })
            .collect();
        normalize(items)
    }

    /// Probability of arity `k` under `1 + Poisson(mean)` capped at `max_arity`.
    pub fn arity_prob(&self, k: usize) -> f64 {
        let cap = self.config.max_arity;
        if k < 1 || k > cap {
            return 0.0;
        }
        let lambda = self.config.arity_mean;
        let pois = |j: usize| {
            let mut p = (-lambda).exp();
            for i in 1..=j {
                p *= lambda / i as f64;
            }
            p
        };
        if k < cap {
            pois(k - 1)
        } else {
            1.0 - (1..cap).map(|j| pois(j - 1)).sum::<f64>()
        }
    }

    /// Log predictive probability (or density, for unseen continuous values)
    /// of drawing `v` from the constant store.
    pub fn constant_log_prob(&self, store: &CrpStore<Value>, v: Value) -> f64 {
        let n = store.total() as f64;
        let alpha = store.concentration;
        let c = store.count_of(&v) as f64;
        match v {
            Value::Bool(_) => ((c + alpha * 0.5) / (n + alpha)).ln(),
            Value::Real(x) => {
                let mass = self.probs.constants.atom_mass(x);
                if c > 0.0 || mass > 0.0 {
                    ((c + alpha * mass) / (n + alpha)).ln()
                } else {
                    (alpha * self.probs.constants.continuous_density(x) / (n + alpha)).ln()
                }
            }
        }
    }

    pub fn sample_constant<R: Rng + ?Sized>(&self, ty: TypeTag, rng: &mut R) -> Value {
        match ty {
            TypeTag::Bool => Value::Bool(rng.random::<bool>()),
            TypeTag::Real => Value::Real(self.probs.constants.sample(rng)),
        }
    }
}

/// CRP stores for constants and compound procedures, one per type.
#[derive(Debug, Clone, PartialEq)]
pub struct CrpStores {
    pub constants: PerType<CrpStore<Value>>,
    pub procedures: PerType<CrpStore<Arc<Procedure>>>,
}

impl CrpStores {
    pub fn new(alpha: f64, beta: f64) -> Self {
        CrpStores {
            constants: PerType::from_fn(|_| CrpStore::new(alpha)),
            procedures: PerType::from_fn(|_| CrpStore::new(beta)),
        }
    }

    pub fn for_grammar(g: &Grammar) -> Self {
        CrpStores::new(g.config.alpha, g.config.beta)
    }

    pub fn procedure(&self, name: &str) -> Option<&Arc<Procedure>> {
        TypeTag::ALL.iter().flat_map(|&t| self.procedures[t].tables.iter()).map(|(p, _)| p).find(|p| &*p.name == name)
    }

    /// A procedure name not used by any table nor listed in `taken`.
    pub fn fresh_name(&self, taken: &[Ident]) -> Ident {
        (0..)
            .map(|k| format!("f{k}"))
            .find(|n| self.procedure(n).is_none() && !taken.iter().any(|t| **t == **n))
            .map(Ident::from)
            .expect("unbounded name supply")
    }
}

/// Prior state: frozen grammar plus mutable CRP stores.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarState {
    pub grammar: Grammar,
    pub stores: CrpStores,
}

impl GrammarState {
    pub fn new(grammar: Grammar) -> Self {
        let stores = CrpStores::for_grammar(&grammar);
        GrammarState { grammar, stores }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let constants = PerType::from_fn(|t| {
            self.stores.constants[t]
                .tables
                .iter()
                .map(|(v, c)| StoredConstant { value: v.to_f64(), count: *c })
                .collect::<Vec<_>>()
        });
        let procedures = PerType::from_fn(|t| {
            self.stores.procedures[t]
                .tables
                .iter()
                .map(|(p, c)| StoredProcedure { definition: p.to_string(), count: *c })
                .collect::<Vec<_>>()
        });
        serde_json::to_value(Snapshot { format_version: 1, grammar: self.grammar.clone(), constants, procedures })
            .expect("grammar state serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, GrammarError> {
        let snap: Snapshot = serde_json::from_value(value.clone()).map_err(|e| GrammarError::Invalid(e.to_string()))?;
        let grammar = Grammar::new(snap.grammar.probs, snap.grammar.config)?;
        let mut stores = CrpStores::for_grammar(&grammar);
        for ty in TypeTag::ALL {
            for c in &snap.constants[ty] {
                let v = match ty {
                    TypeTag::Real => Value::Real(c.value),
                    TypeTag::Bool => Value::Bool(c.value != 0.0),
                };
                stores.constants[ty].tables.push((v, c.count));
            }
            for p in &snap.procedures[ty] {
                let prog = sexpr::parse_program(&format!("(lambda () {} 0.0)", p.definition))
                    .map_err(|e| GrammarError::Invalid(e.to_string()))?;
                let proc = prog.procedures.into_iter().next().ok_or_else(|| {
                    GrammarError::Invalid(format!("stored procedure is not a define form: {}", p.definition))
                })?;
                stores.procedures[ty].tables.push((proc, p.count));
            }
        }
        Ok(GrammarState { grammar, stores })
    }
}

#[derive(Serialize, Deserialize)]
struct StoredConstant {
    value: f64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredProcedure {
    definition: String,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format_version: u32,
    grammar: Grammar,
    constants: PerType<Vec<StoredConstant>>,
    procedures: PerType<Vec<StoredProcedure>>,
}

/// Per-type production counts keyed by production, for reporting.
pub fn production_table(probs: &ProductionProbs) -> BTreeMap<String, BTreeMap<Production, f64>> {
    TypeTag::ALL.iter().map(|&t| (t.to_string(), probs.productions[t].iter().copied().collect())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_distribution_sums_to_one() {
        let g = Grammar::default();
        let e = (-1.0f64).exp();
        assert!((g.arity_prob(1) - e).abs() < 1e-15);
        assert!((g.arity_prob(2) - e).abs() < 1e-15);
        assert!((g.arity_prob(3) - (1.0 - 2.0 * e)).abs() < 1e-15);
        assert_eq!(g.arity_prob(4), 0.0);
        let s: f64 = (0..6).map(|k| g.arity_prob(k)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eligibility_at_the_depth_cap() {
        let g = Grammar::new(ProductionProbs::default(), GrammarConfig { max_depth: 1, ..Default::default() }).unwrap();
        let ctx = Ctx::top(&[]);
        assert_eq!(g.eligible(TypeTag::Real, &ctx), vec![(Production::Constant, 1.0)]);
        let ctx = Ctx::top(&[sexpr::Param::new("x", TypeTag::Real)]);
        let el = g.eligible(TypeTag::Real, &ctx);
        assert_eq!(el.len(), 2);
        assert!(el.iter().all(|(_, w)| (*w - 0.5).abs() < 1e-12));
    }

    #[test]
    fn recur_only_in_bodies() {
        let g = Grammar::default();
        let top = Ctx::top(&[]);
        assert!(g.eligible(TypeTag::Real, &top).iter().all(|(p, _)| *p != Production::Recur));
        let body = Ctx { recur: Some((vec![TypeTag::Real], TypeTag::Real)), in_body: true, ..Ctx::top(&[]) };
        let el = g.eligible(TypeTag::Real, &body);
        assert!(el.iter().any(|(p, _)| *p == Production::Recur));
        assert!(el.iter().all(|(p, _)| *p != Production::CompoundCall));
        assert!(g.eligible(TypeTag::Bool, &body).iter().all(|(p, _)| *p != Production::Recur));
    }

    #[test]
    fn base_mass_and_density() {
        let b = ConstantBase::default();
        assert!((b.atom_mass(0.0) - 0.1 / 6.0).abs() < 1e-15);
        assert_eq!(b.atom_mass(0.5), 0.0);
        let normal = |x: f64| (-x * x / 200.0).exp() / (10.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((b.continuous_density(3.0) - (0.45 * normal(3.0) + 0.45 / 200.0)).abs() < 1e-15);
        // outside the uniform component only the normal tail remains
        assert!((b.continuous_density(150.0) / (0.45 * normal(150.0)) - 1.0).abs() < 1e-12);
        assert!(b.validate().is_ok());
        let a = ConstantBase::atoms_only(&[0.0, 1.0, 1.0]);
        assert_eq!(a.atoms, vec![(0.0, 1.0 / 3.0), (1.0, 2.0 / 3.0)]);
        assert_eq!(a.continuous_density(0.3), 0.0);
    }

    #[test]
    fn probabilities_validate() {
        assert!(ProductionProbs::default().validate().is_ok());
        let mut bad = ProductionProbs::default();
        bad.productions.real.retain(|(p, _)| *p != Production::Constant);
        assert!(bad.validate().is_err());
    }
}
