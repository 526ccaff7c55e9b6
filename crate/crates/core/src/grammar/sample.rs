use std::sync::Arc;

use rand::Rng;

use super::{CrpStores, Ctx, Grammar, GrammarState, Production, Seating};
use crate::sexpr::{Expr, Ident, Param, Prim, Procedure, Program, TypeTag, Value};

/// One recorded generative choice.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Production { ty: TypeTag, production: Production },
    Primitive { ty: TypeTag, prim: Prim },
    Constant(Value),
}

#[derive(Debug, Clone)]
pub struct SampledProgram {
    pub program: Program,
    /// Log probability of the choices made, given the stores' state before sampling.
    pub log_prob: f64,
    pub events: Vec<Event>,
}

fn pick<R: Rng + ?Sized, K: Copy>(items: &[(K, f64)], rng: &mut R) -> (K, f64) {
    let mut u = rng.random::<f64>();
    for &(k, w) in items {
        if u < w {
            return (k, w);
        }
        u -= w;
    }
    *items.last().expect("non-empty categorical")
}

pub(crate) struct Sampler<'a, R: ?Sized> {
    pub grammar: &'a Grammar,
    pub stores: &'a mut CrpStores,
    pub rng: &'a mut R,
    pub log_prob: f64,
    pub events: Vec<Event>,
    /// Procedures called by the sampled code, in first-use order.
    pub used: Vec<Arc<Procedure>>,
    pub taken_names: Vec<Ident>,
}

impl<'a, R: Rng + ?Sized> Sampler<'a, R> {
    pub fn new(grammar: &'a Grammar, stores: &'a mut CrpStores, rng: &'a mut R) -> Self {
        Sampler { grammar, stores, rng, log_prob: 0.0, events: Vec::new(), used: Vec::new(), taken_names: Vec::new() }
    }

    pub fn expr(&mut self, ty: TypeTag, ctx: &Ctx) -> Expr {
        let eligible = self.grammar.eligible(ty, ctx);
        let (production, w) = pick(&eligible, self.rng);
        self.log_prob += w.ln();
        self.events.push(Event::Production { ty, production });
        match production {
            Production::Variable => {
                let vars = ctx.vars_of(ty);
                let i = self.rng.random_range(0..vars.len());
                self.log_prob -= (vars.len() as f64).ln();
                Expr::Var { name: vars[i].clone(), ty }
            }
            Production::Constant => {
                let store = &self.stores.constants[ty];
                let v = match store.choose(self.rng) {
                    Seating::Existing(i) => store.tables[i].0,
                    Seating::Fresh => self.grammar.sample_constant(ty, self.rng),
                };
                self.log_prob += self.grammar.constant_log_prob(store, v);
                self.stores.constants[ty].seat_value(v);
                self.events.push(Event::Constant(v));
                Expr::Const(v)
            }
            Production::PrimCall => {
                let (op, pw) = pick(&self.grammar.probs.primitives[ty], self.rng);
                self.log_prob += pw.ln();
                self.events.push(Event::Primitive { ty, prim: op });
                let child = ctx.child();
                let args = op.arg_types().iter().map(|&t| self.expr(t, &child)).collect();
                Expr::Prim { op, args }
            }
            Production::CompoundCall => {
                let store = &self.stores.procedures[ty];
                let norm = store.log_normalizer();
                let proc = match store.choose(self.rng) {
                    Seating::Existing(i) => {
                        self.log_prob += (store.tables[i].1 as f64).ln() + norm;
                        self.stores.procedures[ty].seat_existing(i)
                    }
                    Seating::Fresh => {
                        self.log_prob += store.concentration.ln() + norm;
                        let p = self.fresh_procedure(ty);
                        self.stores.procedures[ty].add_table(p.clone());
                        p
                    }
                };
                if !self.used.iter().any(|u| Arc::ptr_eq(u, &proc)) {
                    self.used.push(proc.clone());
                }
                let child = ctx.child();
                let args = proc.params.iter().map(|p| self.expr(p.ty, &child)).collect();
                Expr::Call { proc: proc.name.clone(), ret: ty, args }
            }
            Production::Let => {
                let child = ctx.child();
                let value = self.expr(TypeTag::Real, &child);
                let name = ctx.let_name();
                let mut inner = child;
                inner.scope.push((name.clone(), TypeTag::Real));
                let body = self.expr(ty, &inner);
                Expr::Let { name, value: Box::new(value), body: Box::new(body) }
            }
            Production::If => {
                let child = ctx.child();
                let cond = self.expr(TypeTag::Bool, &child);
                let then = self.expr(ty, &child);
                let els = self.expr(ty, &child);
                Expr::If { cond: Box::new(cond), then: Box::new(then), els: Box::new(els) }
            }
            Production::Recur => {
                let (params, _) = ctx.recur.clone().expect("recur is only eligible inside a lambda");
                let child = ctx.child();
                let args = params.iter().map(|&t| self.expr(t, &child)).collect();
                Expr::Recur { ty, args }
            }
        }
    }

    /// Draws a procedure from the base distribution of compound procedures.
    fn fresh_procedure(&mut self, ret: TypeTag) -> Arc<Procedure> {
        let arities: Vec<(usize, f64)> =
            (1..=self.grammar.config.max_arity).map(|k| (k, self.grammar.arity_prob(k))).collect();
        let (k, pk) = pick(&arities, self.rng);
        self.log_prob += pk.ln();
        let params: Vec<Param> = (0..k)
            .map(|i| {
                let ty = if self.rng.random::<bool>() { TypeTag::Real } else { TypeTag::Bool };
                Param::new(&format!("a{i}"), ty)
            })
            .collect();
        self.log_prob += k as f64 * 0.5f64.ln();
        let name = self.stores.fresh_name(&self.taken_names);
        self.taken_names.push(name.clone());
        let shell = Procedure { name, params, ret, body: Expr::Const(Value::Bool(false)) };
        let body = self.expr(ret, &Ctx::procedure_body(&shell));
        Arc::new(Procedure { body, ..shell })
    }
}

/// Samples a program with parameters named `x0, x1, ...`.
pub fn sample_program<R: Rng + ?Sized>(
    param_types: &[TypeTag],
    ret: TypeTag,
    state: &mut GrammarState,
    rng: &mut R,
) -> Program {
    let params: Vec<Param> = param_types.iter().enumerate().map(|(i, &t)| Param::new(&format!("x{i}"), t)).collect();
    sample_program_logged(&params, ret, state, rng).program
}

/// Samples a program and reports the log probability and choice log of the draw.
pub fn sample_program_logged<R: Rng + ?Sized>(
    params: &[Param],
    ret: TypeTag,
    state: &mut GrammarState,
    rng: &mut R,
) -> SampledProgram {
    let GrammarState { grammar, stores } = state;
    let mut s = Sampler::new(grammar, stores, rng);
    let body = s.expr(ret, &Ctx::top(params));
    let program = Program { params: params.to_vec(), ret, procedures: s.used, body };
    SampledProgram { program, log_prob: s.log_prob, events: s.events }
}
