use std::sync::Arc;

use super::{CrpStores, Ctx, Grammar, GrammarError, GrammarState, Production};
use crate::sexpr::{Expr, Procedure, Program, TypeTag};

/// Exact log prior of a program under the sampling process.
pub(crate) struct Scorer<'a> {
    pub grammar: &'a Grammar,
    pub program: &'a Program,
    pub stores: CrpStores,
    /// A node to skip; its context is recorded when reached.
    pub exclude: Option<*const Expr>,
    pub excluded_ctx: Option<Ctx>,
}

impl<'a> Scorer<'a> {
    pub fn new(grammar: &'a Grammar, program: &'a Program, stores: CrpStores) -> Self {
        Scorer { grammar, program, stores, exclude: None, excluded_ctx: None }
    }

    pub fn expr(&mut self, e: &Expr, ctx: &Ctx) -> Result<f64, GrammarError> {
        if self.exclude.is_some_and(|x| std::ptr::eq(x, e)) {
            self.excluded_ctx = Some(ctx.clone());
            return Ok(0.0);
        }
        let ty = e.ty();
        let production = Production::of(e);
        let weight = self.grammar.eligible(ty, ctx).into_iter().find(|(p, _)| *p == production).map(|(_, w)| w);
        let mut lp = weight.map_or(f64::NEG_INFINITY, f64::ln);
        let child = ctx.child();
        match e {
            Expr::Var { name, ty } => {
                let vars = ctx.vars_of(*ty);
                if vars.contains(name) {
                    lp -= (vars.len() as f64).ln();
                } else {
                    lp = f64::NEG_INFINITY;
                }
            }
            Expr::Const(v) => {
                lp += self.grammar.constant_log_prob(&self.stores.constants[ty], *v);
                self.stores.constants[ty].seat_value(*v);
            }
            Expr::Prim { op, args } => {
                let p = self.grammar.probs.primitive_prob(ty, *op).ok_or_else(|| {
                    GrammarError::UnsupportedProgram(format!("primitive '{op}' is not in the grammar"))
                })?;
                lp += p.ln();
                for a in args {
                    lp += self.expr(a, &child)?;
                }
            }
            Expr::Call { proc, ret, args } => {
                let def = self
                    .program
                    .procedure(proc)
                    .ok_or_else(|| GrammarError::UnsupportedProgram(format!("unknown procedure '{proc}'")))?
                    .clone();
                if weight.is_some() {
                    lp += self.seat_procedure(&def, *ret)?;
                }
                for a in args {
                    lp += self.expr(a, &child)?;
                }
            }
            Expr::Let { name, value, body } => {
                lp += self.expr(value, &child)?;
                let mut inner = child;
                inner.scope.push((name.clone(), TypeTag::Real));
                lp += self.expr(body, &inner)?;
            }
            Expr::If { cond, then, els } => {
                lp += self.expr(cond, &child)?;
                lp += self.expr(then, &child)?;
                lp += self.expr(els, &child)?;
            }
            Expr::Recur { args, .. } => {
                for a in args {
                    lp += self.expr(a, &child)?;
                }
            }
        }
        Ok(lp)
    }

    /// Seats one call of `def`; opening a table includes the base density of the procedure.
    fn seat_procedure(&mut self, def: &Arc<Procedure>, ret: TypeTag) -> Result<f64, GrammarError> {
        let store = &self.stores.procedures[ret];
        let norm = store.log_normalizer();
        if let Some(i) = store.tables.iter().position(|(p, _)| p.name == def.name) {
            let same = *store.tables[i].0 == **def;
            let count = store.tables[i].1 as f64;
            self.stores.procedures[ret].seat_existing(i);
            return Ok(if same { count.ln() + norm } else { f64::NEG_INFINITY });
        }
        let open = store.concentration.ln() + norm;
        self.stores.procedures[ret].add_table(def.clone());
        Ok(open + self.procedure_base(def)?)
    }

    /// Log density of a procedure under the compound-procedure base distribution.
    pub fn procedure_base(&mut self, def: &Procedure) -> Result<f64, GrammarError> {
        let k = def.params.len();
        let pk = self.grammar.arity_prob(k);
        if pk == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lp = pk.ln() + k as f64 * 0.5f64.ln();
        lp += self.expr(&def.body, &Ctx::procedure_body(def))?;
        Ok(lp)
    }
}

/// Exact log probability of `program` under `state`, scored against a copy
/// of the state's stores (the state itself is not modified).
///
/// Returns `-inf` for programs outside the grammar's support and
/// [`GrammarError::UnsupportedProgram`] for programs using primitives the
/// grammar does not have.
pub fn score_program(program: &Program, state: &GrammarState) -> Result<f64, GrammarError> {
    let mut s = Scorer::new(&state.grammar, program, state.stores.clone());
    let lp = s.expr(&program.body, &Ctx::top(&program.params))?;
    // definitions that are never called cannot be generated
    let all_called = program.procedures.iter().all(|p| s.stores.procedure(&p.name).is_some());
    Ok(if all_called { lp } else { f64::NEG_INFINITY })
}

/// Seats every draw of `program` outside `excluded` on top of `stores`. Returns the stores, the context of the excluded node, and the log
/// probability of the remainder.
pub(crate) fn seat_rest(
    grammar: &Grammar,
    stores: CrpStores,
    program: &Program,
    excluded: &Expr,
) -> Result<(CrpStores, Ctx, f64), GrammarError> {
    let mut s = Scorer::new(grammar, program, stores);
    s.exclude = Some(excluded as *const Expr);
    let mut lp = s.expr(&program.body, &Ctx::top(&program.params))?;
    // a procedure whose body holds the excluded node is still seated through
    // calls outside it; bodies of procedures never reached are visited here so
    // the context is always found
    if s.excluded_ctx.is_none() {
        for p in &program.procedures {
            if s.excluded_ctx.is_some() {
                break;
            }
            let mut probe = Scorer::new(grammar, program, CrpStores::for_grammar(grammar));
            probe.exclude = s.exclude;
            probe.expr(&p.body, &Ctx::procedure_body(p))?;
            if probe.excluded_ctx.is_some() {
                s.excluded_ctx = probe.excluded_ctx;
                lp = f64::NEG_INFINITY;
            }
        }
    }
    let ctx = s
        .excluded_ctx
        .take()
        .ok_or_else(|| GrammarError::UnsupportedProgram("node is not part of the program".into()))?;
    Ok((s.stores, ctx, lp))
}
