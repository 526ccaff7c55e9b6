//! Canonical printer: single spaces, shortest round-tripping float literals.

use std::fmt::{self, Display, Write};

use super::ast::{Expr, Param, Procedure, Program, TypeTag, Value};

impl Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(x) => write!(f, "{x:?}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var { name, .. } => f.write_str(name),
            Expr::Const(v) => v.fmt(f),
            Expr::Prim { op, args } => write_app(f, op.name(), args),
            Expr::Call { proc, args, .. } => write_app(f, proc, args),
            Expr::Recur { args, .. } => write_app(f, "recur", args),
            Expr::Let { name, value, body } => write!(f, "(let ({name} {value}) {body})"),
            Expr::If { cond, then, els } => write!(f, "(if {cond} {then} {els})"),
        }
    }
}

fn write_app(f: &mut fmt::Formatter<'_>, head: &str, args: &[Expr]) -> fmt::Result {
    f.write_char('(')?;
    f.write_str(head)?;
    for a in args {
        write!(f, " {a}")?;
    }
    f.write_char(')')
}

fn write_params(f: &mut fmt::Formatter<'_>, params: &[Param]) -> fmt::Result {
    f.write_char('(')?;
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            f.write_char(' ')?;
        }
        match p.ty {
            TypeTag::Real => f.write_str(&p.name)?,
            TypeTag::Bool => write!(f, "({} bool)", p.name)?,
        }
    }
    f.write_char(')')
}

impl Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(define {} (lambda ", self.name)?;
        write_params(f, &self.params)?;
        write!(f, " {} {}))", self.ret, self.body)
    }
}

impl Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(lambda ")?;
        write_params(f, &self.params)?;
        if contains_recur(&self.body) {
            // needed to re-derive the recur type on parsing
            write!(f, " {}", self.ret)?;
        }
        for p in &self.procedures {
            write!(f, " {p}")?;
        }
        write!(f, " {})", self.body)
    }
}

fn contains_recur(e: &Expr) -> bool {
    let mut found = false;
    e.walk(&mut |n| found |= matches!(n, Expr::Recur { .. }));
    found
}
