//! The sampler mini-language: typed s-expressions with a budgeted evaluator.
//!
//! Programs are closed lambdas over `real` and `bool` values. Compound
//! procedures are declared with `define` forms ahead of the lambda body and
//! see only their own parameters; `recur` re-invokes the innermost lambda.
//!
//! ```text
//! (lambda (rate)
//!   (define f0 (lambda (k p limit) real
//!     (if (< p limit) (dec k) (recur (inc k) (* p (safe-uc 0.0 1.0)) limit))))
//!   (f0 1.0 (safe-uc 0.0 1.0) (exp (* -1.0 rate))))
//! ```

mod ast;
mod eval;
mod parse;
mod print;

use thiserror::Error;

pub use ast::{Expr, Ident, Param, Prim, Procedure, Program, TypeTag, Value};
pub use eval::{
    evaluate, evaluate_with, run_sampler, run_sampler_checked, safe_div, safe_log, safe_sqrt, safe_uc, Env, EvalBudget,
    EvalError, SampleError, SampleSet,
};
pub use parse::{parse_expr, parse_expr_in, parse_program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SexprError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("type error: {0}")]
    Type(String),
}

/// Re-checks scoping and typing of an already constructed program.
pub fn check_program(program: &Program) -> Result<(), SexprError> {
    let mut names = std::collections::HashSet::new();
    for p in &program.procedures {
        if !names.insert(p.name.clone()) {
            return Err(SexprError::Syntax(format!("procedure '{}' defined twice", p.name)));
        }
    }
    for p in &program.procedures {
        let mut scope: Vec<(Ident, TypeTag)> = p.params.iter().map(|q| (q.name.clone(), q.ty)).collect();
        let ty = check_expr(&p.body, &mut scope, program, Some((p.param_types(), p.ret)))?;
        if ty != p.ret {
            return Err(SexprError::Type(format!("procedure '{}' body has type {ty}, declared {}", p.name, p.ret)));
        }
    }
    let mut scope: Vec<(Ident, TypeTag)> = program.params.iter().map(|q| (q.name.clone(), q.ty)).collect();
    let ty = check_expr(&program.body, &mut scope, program, Some((program.param_types(), program.ret)))?;
    if ty != program.ret {
        return Err(SexprError::Type(format!("body has type {ty}, declared {}", program.ret)));
    }
    Ok(())
}

fn check_args(
    args: &[Expr],
    want: &[TypeTag],
    scope: &mut Vec<(Ident, TypeTag)>,
    program: &Program,
    recur: Option<(Vec<TypeTag>, TypeTag)>,
    head: &str,
) -> Result<(), SexprError> {
    if args.len() != want.len() {
        return Err(SexprError::Type(format!("'{head}' arity mismatch")));
    }
    for (a, &t) in args.iter().zip(want) {
        let got = check_expr(a, scope, program, recur.clone())?;
        if got != t {
            return Err(SexprError::Type(format!("'{head}' argument must be {t}, found {got}")));
        }
    }
    Ok(())
}

fn check_expr(
    e: &Expr,
    scope: &mut Vec<(Ident, TypeTag)>,
    program: &Program,
    recur: Option<(Vec<TypeTag>, TypeTag)>,
) -> Result<TypeTag, SexprError> {
    match e {
        Expr::Var { name, ty } => match scope.iter().rev().find(|(n, _)| n == name) {
            Some((_, t)) if t == ty => Ok(*ty),
            Some((_, t)) => Err(SexprError::Type(format!("variable '{name}' is {t}, annotated {ty}"))),
            None => Err(SexprError::Syntax(format!("unbound variable '{name}'"))),
        },
        Expr::Const(v) => Ok(v.ty()),
        Expr::Prim { op, args } => {
            check_args(args, op.arg_types(), scope, program, recur, op.name())?;
            Ok(op.ret())
        }
        Expr::Call { proc, ret, args } => {
            let p = program.procedure(proc).ok_or_else(|| SexprError::Syntax(format!("unknown procedure '{proc}'")))?;
            if p.ret != *ret {
                return Err(SexprError::Type(format!("call of '{proc}' annotated with the wrong return type")));
            }
            check_args(args, &p.param_types(), scope, program, recur, proc)?;
            Ok(*ret)
        }
        Expr::Let { name, value, body } => {
            if check_expr(value, scope, program, recur.clone())? != TypeTag::Real {
                return Err(SexprError::Type("let binds only real values".into()));
            }
            scope.push((name.clone(), TypeTag::Real));
            let t = check_expr(body, scope, program, recur);
            scope.pop();
            t
        }
        Expr::If { cond, then, els } => {
            if check_expr(cond, scope, program, recur.clone())? != TypeTag::Bool {
                return Err(SexprError::Type("if condition must be bool".into()));
            }
            let a = check_expr(then, scope, program, recur.clone())?;
            let b = check_expr(els, scope, program, recur)?;
            if a != b {
                return Err(SexprError::Type("if branches disagree".into()));
            }
            Ok(a)
        }
        Expr::Recur { ty, args } => {
            let Some((params, ret)) = recur.clone() else {
                return Err(SexprError::Syntax("recur outside of a lambda".into()));
            };
            if *ty != ret {
                return Err(SexprError::Type("recur annotated with the wrong return type".into()));
            }
            check_args(args, &params, scope, program, recur, "recur")?;
            Ok(ret)
        }
    }
}
