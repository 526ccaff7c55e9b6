//! Budgeted evaluator.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{Expr, Ident, Prim, Procedure, Program, TypeTag, Value};

/// Per-call limits on evaluator work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBudget {
    /// Node visits allowed for one top-level call.
    pub max_steps: u64,
    /// Nesting of compound-procedure and recur calls.
    pub max_recursion_depth: u32,
}

impl Default for EvalBudget {
    fn default() -> Self {
        EvalBudget { max_steps: 10_000, max_recursion_depth: 50 }
    }
}

impl EvalBudget {
    pub fn new(max_steps: u64, max_recursion_depth: u32) -> Result<Self, EvalError> {
        if max_steps == 0 || max_recursion_depth == 0 {
            return Err(EvalError::Malformed("evaluation budget limits must be positive".into()));
        }
        Ok(EvalBudget { max_steps, max_recursion_depth })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation budget exceeded: {0}")]
    BudgetExceeded(&'static str),
    #[error("numeric error: {op} produced a non-finite value")]
    Numeric { op: &'static str },
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// Failure of one invocation inside a batch of sampler runs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("invocation {index} failed: {source}")]
    Eval { index: usize, source: EvalError },
    #[error("invocation {index} produced a value outside the accepted support")]
    Rejected { index: usize },
    #[error("{0}")]
    Invalid(String),
}

/// A batch of values from repeated evaluation, with the arguments used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub param_vector: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Self {
        SampleSet { values, param_vector: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Lexically scoped bindings.
#[derive(Debug, Clone, Default)]
pub struct Env {
    bindings: Vec<(Ident, Value)>,
    parent: Option<Arc<Env>>,
    counter: u64,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    /// A child scope with one extra binding.
    pub fn extend(self: &Arc<Self>, name: &str, value: Value) -> Env {
        Env { bindings: vec![(Ident::from(name), value)], parent: Some(self.clone()), counter: self.counter }
    }

    pub fn bind(&mut self, name: &str, value: Value) {
        self.bindings.push((Ident::from(name), value));
    }

    pub fn lookup(&self, name: &str) -> Option<Value> {
        self.bindings
            .iter()
            .rev()
            .find(|(n, _)| &**n == name)
            .map(|(_, v)| *v)
            .or_else(|| self.parent.as_ref().and_then(|p| p.lookup(name)))
    }

    /// Returns a fresh name not bound anywhere in this scope chain.
    pub fn gensym(&mut self, prefix: &str) -> Ident {
        loop {
            let name = format!("{prefix}{}", self.counter);
            self.counter += 1;
            if self.lookup(&name).is_none() {
                return Ident::from(name);
            }
        }
    }

    fn flatten(&self, out: &mut Vec<(Ident, Value)>) {
        if let Some(p) = &self.parent {
            p.flatten(out);
        }
        out.extend(self.bindings.iter().cloned());
    }
}

#[derive(Clone, Copy)]
enum Callee<'a> {
    None,
    Top(&'a Program),
    Proc(&'a Procedure),
}

struct Interp<'a, R: ?Sized> {
    procs: &'a [Arc<Procedure>],
    rng: &'a mut R,
    steps: u64,
    budget: EvalBudget,
}

fn finite(op: &'static str, x: f64) -> Result<Value, EvalError> {
    if x.is_finite() {
        Ok(Value::Real(x))
    } else {
        Err(EvalError::Numeric { op })
    }
}

pub fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn safe_log(a: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else {
        a.ln()
    }
}

pub fn safe_sqrt(a: f64) -> f64 {
    if a < 0.0 {
        0.0
    } else {
        a.sqrt()
    }
}

/// Uniform draw on `[min(a,b), max(a,b))`; returns `a` when `a == b`.
pub fn safe_uc<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let (lo, hi) = if a > b { (b, a) } else { (a, b) };
    if lo == hi {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

fn safe_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    match Beta::new(a, b) {
        Ok(d) if a > 0.0 && b > 0.0 => d.sample(rng),
        _ => 0.0,
    }
}

fn safe_normal<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let sd = sd.abs();
    if sd == 0.0 {
        return mean;
    }
    match Normal::new(mean, sd) {
        Ok(d) => d.sample(rng),
        Err(_) => f64::NAN,
    }
}

fn safe_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    match Gamma::new(shape, scale) {
        Ok(d) if shape > 0.0 && scale > 0.0 => d.sample(rng),
        _ => 0.0,
    }
}

impl<'a, R: Rng + ?Sized> Interp<'a, R> {
    fn tick(&mut self) -> Result<(), EvalError> {
        self.steps += 1;
        if self.steps > self.budget.max_steps {
            Err(EvalError::BudgetExceeded("step limit"))
        } else {
            Ok(())
        }
    }

    fn real(
        &mut self,
        e: &'a Expr,
        frame: &mut Vec<(Ident, Value)>,
        callee: Callee<'a>,
        depth: u32,
    ) -> Result<f64, EvalError> {
        match self.eval(e, frame, callee, depth)? {
            Value::Real(x) => Ok(x),
            Value::Bool(_) => Err(EvalError::Malformed("expected a real value".into())),
        }
    }

    fn eval(
        &mut self,
        e: &'a Expr,
        frame: &mut Vec<(Ident, Value)>,
        callee: Callee<'a>,
        depth: u32,
    ) -> Result<Value, EvalError> {
        self.tick()?;
        match e {
            Expr::Const(v) => Ok(*v),
            Expr::Var { name, .. } => frame
                .iter()
                .rev()
                .find(|(n, _)| Arc::ptr_eq(n, name) || n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| EvalError::Malformed(format!("unbound variable '{name}'"))),
            Expr::Prim { op, args } => self.prim(*op, args, frame, callee, depth),
            Expr::If { cond, then, els } => match self.eval(cond, frame, callee, depth)? {
                Value::Bool(true) => self.eval(then, frame, callee, depth),
                Value::Bool(false) => self.eval(els, frame, callee, depth),
                Value::Real(_) => Err(EvalError::Malformed("if condition is not bool".into())),
            },
            Expr::Let { name, value, body } => {
                let v = self.eval(value, frame, callee, depth)?;
                frame.push((name.clone(), v));
                let out = self.eval(body, frame, callee, depth);
                frame.pop();
                out
            }
            Expr::Call { proc, args, .. } => {
                let p = self
                    .procs
                    .iter()
                    .find(|p| Arc::ptr_eq(&p.name, proc) || p.name == *proc)
                    .ok_or_else(|| EvalError::Malformed(format!("unknown procedure '{proc}'")))?;
                let p: &'a Procedure = p;
                self.invoke(Callee::Proc(p), args, frame, callee, depth)
            }
            Expr::Recur { args, .. } => match callee {
                Callee::None => Err(EvalError::Malformed("recur outside of a lambda".into())),
                target => self.invoke(target, args, frame, callee, depth),
            },
        }
    }

    fn invoke(
        &mut self,
        target: Callee<'a>,
        args: &'a [Expr],
        frame: &mut Vec<(Ident, Value)>,
        callee: Callee<'a>,
        depth: u32,
    ) -> Result<Value, EvalError> {
        if depth + 1 > self.budget.max_recursion_depth {
            return Err(EvalError::BudgetExceeded("recursion depth limit"));
        }
        let (params, body) = match target {
            Callee::Top(p) => (&p.params, &p.body),
            Callee::Proc(p) => (&p.params, &p.body),
            Callee::None => unreachable!("invoke target is always a lambda"),
        };
        if params.len() != args.len() {
            return Err(EvalError::Malformed("arity mismatch".into()));
        }
        let mut inner = Vec::with_capacity(params.len() + 2);
        for (p, a) in params.iter().zip(args) {
            let v = self.eval(a, frame, callee, depth)?;
            inner.push((p.name.clone(), v));
        }
        self.eval(body, &mut inner, target, depth + 1)
    }

    fn prim(
        &mut self,
        op: Prim,
        args: &'a [Expr],
        frame: &mut Vec<(Ident, Value)>,
        callee: Callee<'a>,
        depth: u32,
    ) -> Result<Value, EvalError> {
        if args.len() != op.arg_types().len() {
            return Err(EvalError::Malformed(format!("'{op}' arity mismatch")));
        }
        let a = self.real(&args[0], frame, callee, depth)?;
        let b = if args.len() == 2 { self.real(&args[1], frame, callee, depth)? } else { 0.0 };
        let name = op.name();
        match op {
            Prim::Add => finite(name, a + b),
            Prim::Sub => finite(name, a - b),
            Prim::Mul => finite(name, a * b),
            Prim::SafeDiv => finite(name, safe_div(a, b)),
            Prim::Exp => finite(name, a.exp()),
            Prim::SafeLog => finite(name, safe_log(a)),
            Prim::SafeSqrt => finite(name, safe_sqrt(a)),
            Prim::Cos => finite(name, a.cos()),
            Prim::Sin => finite(name, a.sin()),
            Prim::Inc => finite(name, a + 1.0),
            Prim::Dec => finite(name, a - 1.0),
            Prim::Lt => Ok(Value::Bool(a < b)),
            Prim::SafeUc => finite(name, safe_uc(a, b, self.rng)),
            Prim::SafeBeta => finite(name, safe_beta(a, b, self.rng)),
            Prim::SafeNormal => finite(name, safe_normal(a, b, self.rng)),
            Prim::SafeGamma => finite(name, safe_gamma(a, b, self.rng)),
        }
    }
}

/// Evaluates a closed-over expression (no compound procedures) in `env`.
pub fn evaluate<R: Rng + ?Sized>(expr: &Expr, env: &Env, rng: &mut R, budget: EvalBudget) -> Result<Value, EvalError> {
    evaluate_with(&[], expr, env, rng, budget)
}

/// Evaluates an expression that may call the given compound procedures.
pub fn evaluate_with<R: Rng + ?Sized>(
    procs: &[Arc<Procedure>],
    expr: &Expr,
    env: &Env,
    rng: &mut R,
    budget: EvalBudget,
) -> Result<Value, EvalError> {
    let mut frame = Vec::new();
    env.flatten(&mut frame);
    let mut interp = Interp { procs, rng, steps: 0, budget };
    interp.eval(expr, &mut frame, Callee::None, 0)
}

impl Program {
    /// Applies the program to `args` once.
    pub fn apply<R: Rng + ?Sized>(&self, args: &[f64], rng: &mut R, budget: EvalBudget) -> Result<Value, EvalError> {
        if args.len() != self.params.len() {
            return Err(EvalError::Malformed(format!(
                "program takes {} argument(s), got {}",
                self.params.len(),
                args.len()
            )));
        }
        let mut frame: Vec<(Ident, Value)> = Vec::with_capacity(args.len() + 4);
        for (p, &x) in self.params.iter().zip(args) {
            let v = match p.ty {
                TypeTag::Real => Value::Real(x),
                TypeTag::Bool => Value::Bool(x != 0.0),
            };
            frame.push((p.name.clone(), v));
        }
        let mut interp = Interp { procs: &self.procedures, rng, steps: 0, budget };
        interp.eval(&self.body, &mut frame, Callee::Top(self), 0)
    }
}

/// Evaluates `program(args)` `count` times, failing on the first error.
pub fn run_sampler<R: Rng + ?Sized>(
    program: &Program,
    args: &[f64],
    count: usize,
    rng: &mut R,
    budget: EvalBudget,
) -> Result<SampleSet, SampleError> {
    run_sampler_checked(program, args, count, rng, budget, |_| true)
}

/// Like [`run_sampler`] but stops as soon as `accept` rejects a value.
pub fn run_sampler_checked<R: Rng + ?Sized>(
    program: &Program,
    args: &[f64],
    count: usize,
    rng: &mut R,
    budget: EvalBudget,
    mut accept: impl FnMut(f64) -> bool,
) -> Result<SampleSet, SampleError> {
    if count == 0 {
        return Err(SampleError::Invalid("sample count must be at least 1".into()));
    }
    if args.len() != program.params.len() {
        return Err(SampleError::Invalid(format!(
            "program takes {} argument(s), got {}",
            program.params.len(),
            args.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for index in 0..count {
        let x = program.apply(args, rng, budget).map_err(|source| SampleError::Eval { index, source })?.to_f64();
        if !accept(x) {
            return Err(SampleError::Rejected { index });
        }
        values.push(x);
    }
    Ok(SampleSet { values, param_vector: args.to_vec() })
}
