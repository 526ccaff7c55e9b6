use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use super::sample::Sampler;
use super::score::{seat_rest, Scorer};
use super::{let_name_for, CrpStores, Ctx, GrammarError, GrammarState};
use crate::sexpr::{Expr, Ident, Param, Procedure, Program, TypeTag};

/// Position of an addressable node: the body it lives in (0 for the main
/// body, `k` for the `k`-th procedure) and the child path from that body's root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeAddr {
    pub body: usize,
    pub path: Vec<usize>,
}

/// A proposed program with the log densities of the new and the replaced subtree.
#[derive(Debug, Clone)]
pub struct Regeneration {
    pub program: Program,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
}

/// Resolves a preorder node index (main body first, then procedure bodies).
pub fn locate(program: &Program, index: usize) -> Result<NodeAddr, GrammarError> {
    let count = program.node_count();
    let mut rest = index;
    for (body, root) in program.bodies().enumerate() {
        let n = root.size();
        if rest < n {
            let mut path = Vec::new();
            find_path(root, rest, &mut path);
            return Ok(NodeAddr { body, path });
        }
        rest -= n;
    }
    Err(GrammarError::IndexOutOfRange { index, count })
}

fn find_path(e: &Expr, offset: usize, path: &mut Vec<usize>) {
    if offset == 0 {
        return;
    }
    let mut k = offset - 1;
    for (i, c) in e.children().into_iter().enumerate() {
        let n = c.size();
        if k < n {
            path.push(i);
            return find_path(c, k, path);
        }
        k -= n;
    }
}

fn node_at<'a>(program: &'a Program, addr: &NodeAddr) -> &'a Expr {
    let mut e = program.bodies().nth(addr.body).expect("valid address");
    for &i in &addr.path {
        e = e.children()[i];
    }
    e
}

fn replace_at(program: &Program, addr: &NodeAddr, new: Expr) -> Program {
    let mut out = program.clone();
    let mut e =
        if addr.body == 0 { &mut out.body } else { &mut Arc::make_mut(&mut out.procedures[addr.body - 1]).body };
    for &i in &addr.path {
        e = e.children_mut().into_iter().nth(i).expect("valid address");
    }
    *e = new;
    out
}

/// Lexical context of the node at `index`.
pub fn node_context(program: &Program, index: usize, state: &GrammarState) -> Result<Ctx, GrammarError> {
    let addr = locate(program, index)?;
    let node = node_at(program, &addr);
    Ok(seat_rest(&state.grammar, state.stores.clone(), program, node)?.1)
}

struct Replacement {
    expr: Expr,
    procedures: Vec<Arc<Procedure>>,
    log_q: f64,
}

fn propose(
    program: &Program,
    index: usize,
    state: &GrammarState,
    make: impl FnOnce(TypeTag, &Ctx, CrpStores) -> Result<Replacement, GrammarError>,
) -> Result<Regeneration, GrammarError> {
    let addr = locate(program, index)?;
    let node = node_at(program, &addr);
    let (stores, ctx, _) = seat_rest(&state.grammar, state.stores.clone(), program, node)?;
    let log_q_reverse = Scorer::new(&state.grammar, program, stores.clone()).expr(node, &ctx)?;
    let r = make(node.ty(), &ctx, stores)?;
    let mut out = replace_at(program, &addr, r.expr);
    for p in r.procedures {
        if out.procedure(&p.name).is_none() {
            out.procedures.push(p);
        }
    }
    Ok(Regeneration { program: canonicalize(&out), log_q_forward: r.log_q, log_q_reverse })
}

/// Replaces the node at `index` by a fresh draw of the same type in the
/// node's context, given the CRP seatings of the rest of the program.
pub fn regenerate_subtree<R: Rng + ?Sized>(
    program: &Program,
    index: usize,
    state: &GrammarState,
    rng: &mut R,
) -> Result<Regeneration, GrammarError> {
    propose(program, index, state, |ty, ctx, mut stores| {
        let mut s = Sampler::new(&state.grammar, &mut stores, rng);
        s.taken_names = program.procedures.iter().map(|p| p.name.clone()).collect();
        let expr = s.expr(ty, ctx);
        Ok(Replacement { expr, procedures: s.used, log_q: s.log_prob })
    })
}

/// Deterministic counterpart of [`regenerate_subtree`]: puts `replacement`
/// at `index`. Calls in `replacement` resolve against `procedures`; a
/// definition identical to one already in `program` is shared, others are
/// added under fresh names.
pub fn replace_subtree(
    program: &Program,
    index: usize,
    replacement: &Expr,
    procedures: &[Arc<Procedure>],
    state: &GrammarState,
) -> Result<Regeneration, GrammarError> {
    propose(program, index, state, |ty, ctx, stores| {
        if replacement.ty() != ty {
            return Err(GrammarError::UnsupportedProgram(format!(
                "replacement has type {} but the node has type {ty}",
                replacement.ty()
            )));
        }
        let mut taken: Vec<Ident> = program.procedures.iter().map(|p| p.name.clone()).collect();
        let mut rename = HashMap::new();
        let mut added = Vec::new();
        let mut called = Vec::new();
        collect_calls(replacement, &mut called);
        for name in called {
            let def = procedures
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| GrammarError::UnsupportedProgram(format!("unknown procedure '{name}'")))?;
            if program.procedure(&name).is_some_and(|p| **p == **def) {
                continue;
            }
            let fresh = stores.fresh_name(&taken);
            taken.push(fresh.clone());
            rename.insert(name, fresh.clone());
            added.push(Arc::new(Procedure { name: fresh, ..(**def).clone() }));
        }
        let expr = rename_calls(replacement, &rename);
        let mut scope_program = program.clone();
        scope_program.procedures.extend(added.iter().cloned());
        let log_q = Scorer::new(&state.grammar, &scope_program, stores).expr(&expr, ctx)?;
        Ok(Replacement { expr, procedures: added, log_q })
    })
}

fn collect_calls(e: &Expr, out: &mut Vec<Ident>) {
    e.walk(&mut |n| {
        if let Expr::Call { proc, .. } = n {
            if !out.contains(proc) {
                out.push(proc.clone());
            }
        }
    });
}

fn rename_calls(e: &Expr, map: &HashMap<Ident, Ident>) -> Expr {
    let mut out = e.clone();
    fn go(e: &mut Expr, map: &HashMap<Ident, Ident>) {
        if let Expr::Call { proc, .. } = e {
            if let Some(n) = map.get(proc) {
                *proc = n.clone();
            }
        }
        for c in e.children_mut() {
            go(c, map);
        }
    }
    go(&mut out, map);
    out
}

/// Canonical form of a program: procedures named `f0, f1, ...` in order of
/// first use, unreferenced procedures dropped, procedure parameters named
/// `a0, a1, ...` and let bindings named as the sampler names them.
///
/// Canonicalization preserves the prior score.
pub fn canonicalize(program: &Program) -> Program {
    let mut order = Vec::new();
    collect_calls(&program.body, &mut order);
    let mut i = 0;
    while i < order.len() {
        if let Some(p) = program.procedure(&order[i]) {
            collect_calls(&p.body, &mut order);
        }
        i += 1;
    }
    let names: HashMap<Ident, Ident> =
        order.iter().enumerate().map(|(k, n)| (n.clone(), Ident::from(format!("f{k}")))).collect();
    let procedures = order
        .iter()
        .filter_map(|n| program.procedure(n))
        .map(|p| {
            let params: Vec<Param> =
                p.params.iter().enumerate().map(|(i, q)| Param::new(&format!("a{i}"), q.ty)).collect();
            let mut scope: Vec<(Ident, TypeTag)> = params.iter().map(|q| (q.name.clone(), q.ty)).collect();
            let mut renames: Vec<(Ident, Ident)> =
                p.params.iter().zip(&params).map(|(old, new)| (old.name.clone(), new.name.clone())).collect();
            let body = rename_binders(&p.body, &mut scope, &mut renames, &names);
            Arc::new(Procedure { name: names[&p.name].clone(), params, ret: p.ret, body })
        })
        .collect();
    let mut scope: Vec<(Ident, TypeTag)> = program.params.iter().map(|q| (q.name.clone(), q.ty)).collect();
    let body = rename_binders(&program.body, &mut scope, &mut Vec::new(), &names);
    Program { params: program.params.clone(), ret: program.ret, procedures, body }
}

fn rename_binders(
    e: &Expr,
    scope: &mut Vec<(Ident, TypeTag)>,
    renames: &mut Vec<(Ident, Ident)>,
    procs: &HashMap<Ident, Ident>,
) -> Expr {
    let args = |xs: &[Expr], scope: &mut Vec<(Ident, TypeTag)>, renames: &mut Vec<(Ident, Ident)>| {
        xs.iter().map(|x| rename_binders(x, scope, renames, procs)).collect::<Vec<_>>()
    };
    match e {
        Expr::Var { name, ty } => {
            let name = renames.iter().rev().find(|(old, _)| old == name).map_or(name, |(_, new)| new).clone();
            Expr::Var { name, ty: *ty }
        }
        Expr::Const(v) => Expr::Const(*v),
        Expr::Prim { op, args: xs } => Expr::Prim { op: *op, args: args(xs, scope, renames) },
        Expr::Call { proc, ret, args: xs } => {
            Expr::Call { proc: procs.get(proc).unwrap_or(proc).clone(), ret: *ret, args: args(xs, scope, renames) }
        }
        Expr::Let { name, value, body } => {
            let value = rename_binders(value, scope, renames, procs);
            let fresh = let_name_for(scope);
            scope.push((fresh.clone(), TypeTag::Real));
            renames.push((name.clone(), fresh.clone()));
            let body = rename_binders(body, scope, renames, procs);
            scope.pop();
            renames.pop();
            Expr::Let { name: fresh, value: Box::new(value), body: Box::new(body) }
        }
        Expr::If { cond, then, els } => Expr::If {
            cond: Box::new(rename_binders(cond, scope, renames, procs)),
            then: Box::new(rename_binders(then, scope, renames, procs)),
            els: Box::new(rename_binders(els, scope, renames, procs)),
        },
        Expr::Recur { ty, args: xs } => Expr::Recur { ty: *ty, args: args(xs, scope, renames) },
    }
}
