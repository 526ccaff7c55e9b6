//! Reader and type-checking builder for program text.

use std::collections::HashMap;
use std::sync::Arc;

use super::ast::{Expr, Ident, Param, Prim, Procedure, Program, TypeTag, Value};
use super::SexprError;

const RESERVED: [&str; 9] = ["lambda", "let", "if", "recur", "define", "true", "false", "real", "bool"];

/// Untyped s-expression tree.
#[derive(Debug, Clone, PartialEq)]
enum Sx {
    Atom(String),
    List(Vec<Sx>),
}

impl Sx {
    fn describe(&self) -> String {
        match self {
            Sx::Atom(a) => a.clone(),
            Sx::List(items) => format!("({} ...)", items.first().map(Sx::describe).unwrap_or_default()),
        }
    }
}

fn syntax(msg: impl Into<String>) -> SexprError {
    SexprError::Syntax(msg.into())
}

fn type_err(msg: impl Into<String>) -> SexprError {
    SexprError::Type(msg.into())
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ';' => {
                // comment to end of line
                for d in chars.by_ref() {
                    if d == '\n' {
                        break;
                    }
                }
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            '(' | '[' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push("(".into());
            }
            ')' | ']' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(")".into());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn read(text: &str) -> Result<Sx, SexprError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(syntax("empty input"));
    }
    let mut pos = 0;
    let sx = read_one(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(syntax(format!("trailing input after expression: '{}'", tokens[pos])));
    }
    Ok(sx)
}

fn read_one(tokens: &[String], pos: &mut usize) -> Result<Sx, SexprError> {
    let Some(tok) = tokens.get(*pos) else {
        return Err(syntax("unexpected end of input (unbalanced parentheses)"));
    };
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    None => return Err(syntax("unexpected end of input (unbalanced parentheses)")),
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sx::List(items));
                    }
                    Some(_) => items.push(read_one(tokens, pos)?),
                }
            }
        }
        ")" => Err(syntax("unexpected ')'")),
        atom => Ok(Sx::Atom(atom.to_string())),
    }
}

fn parse_number(tok: &str) -> Option<f64> {
    let mut chars = tok.chars();
    let first = chars.next()?;
    let looks_numeric = match first {
        '0'..='9' => true,
        '-' | '+' | '.' => {
            let rest = &tok[1..];
            rest.starts_with(|c: char| c.is_ascii_digit())
                || (first != '.' && rest.starts_with('.') && rest[1..].starts_with(|c: char| c.is_ascii_digit()))
        }
        _ => false,
    };
    if !looks_numeric {
        return None;
    }
    tok.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn is_identifier(tok: &str) -> bool {
    parse_number(tok).is_none() && !tok.is_empty() && tok.chars().all(|c| c.is_ascii_graphic())
}

#[derive(Debug, Clone)]
enum RecurCtx {
    /// Not inside any lambda that may recur.
    None,
    Known {
        params: Vec<TypeTag>,
        ret: TypeTag,
    },
    /// Top-level lambda whose return type has not been declared.
    Unknown,
}

/// Internal signal that a top-level recur needs a return type guess.
const NEEDS_RET: &str = "recur at top level requires a declared return type";

struct Builder {
    procs: HashMap<String, (Vec<TypeTag>, TypeTag)>,
    scope: Vec<(Ident, TypeTag)>,
    recur: RecurCtx,
}

impl Builder {
    fn lookup(&self, name: &str) -> Option<(Ident, TypeTag)> {
        self.scope.iter().rev().find(|(n, _)| &**n == name).cloned()
    }

    fn expr(&mut self, sx: &Sx) -> Result<Expr, SexprError> {
        match sx {
            Sx::Atom(tok) => self.atom(tok),
            Sx::List(items) => {
                let Some(head) = items.first() else {
                    return Err(syntax("empty application '()'"));
                };
                let Sx::Atom(head) = head else {
                    return Err(syntax(format!("application head must be a symbol, found {}", head.describe())));
                };
                let rest = &items[1..];
                match head.as_str() {
                    "let" => self.let_form(rest),
                    "if" => self.if_form(rest),
                    "recur" => self.recur_form(rest),
                    "lambda" => Err(syntax("lambda is only allowed at the top level or in a define")),
                    "define" => Err(syntax("define is only allowed directly inside a lambda")),
                    name => {
                        if let Some(op) = Prim::from_name(name) {
                            let args = self.typed_args(name, rest, op.arg_types())?;
                            Ok(Expr::Prim { op, args })
                        } else if let Some((params, ret)) = self.procs.get(name).cloned() {
                            let args = self.typed_args(name, rest, &params)?;
                            Ok(Expr::Call { proc: Ident::from(name), ret, args })
                        } else {
                            Err(syntax(format!("unknown head symbol '{name}'")))
                        }
                    }
                }
            }
        }
    }

    fn atom(&self, tok: &str) -> Result<Expr, SexprError> {
        if let Some(x) = parse_number(tok) {
            return Ok(Expr::Const(Value::Real(x)));
        }
        match tok {
            "true" => return Ok(Expr::Const(Value::Bool(true))),
            "false" => return Ok(Expr::Const(Value::Bool(false))),
            _ => {}
        }
        if let Some((name, ty)) = self.lookup(tok) {
            return Ok(Expr::Var { name, ty });
        }
        if RESERVED.contains(&tok) || Prim::from_name(tok).is_some() {
            return Err(syntax(format!("'{tok}' cannot be used as a value")));
        }
        Err(syntax(format!("unbound variable '{tok}'")))
    }

    fn typed_args(&mut self, head: &str, rest: &[Sx], want: &[TypeTag]) -> Result<Vec<Expr>, SexprError> {
        if rest.len() != want.len() {
            return Err(type_err(format!("'{head}' expects {} argument(s), got {}", want.len(), rest.len())));
        }
        rest.iter()
            .zip(want)
            .enumerate()
            .map(|(i, (sx, &ty))| {
                let e = self.expr(sx)?;
                if e.ty() != ty {
                    return Err(type_err(format!("argument {} of '{head}' must be {ty}, found {}", i + 1, e.ty())));
                }
                Ok(e)
            })
            .collect()
    }

    fn let_form(&mut self, rest: &[Sx]) -> Result<Expr, SexprError> {
        let [binding, body] = rest else {
            return Err(syntax("let expects a binding and a body"));
        };
        let Sx::List(pair) = binding else {
            return Err(syntax("let binding must be a list (name value)"));
        };
        let [Sx::Atom(name), value] = pair.as_slice() else {
            return Err(syntax("let binding must be (name value)"));
        };
        if !is_identifier(name) || RESERVED.contains(&name.as_str()) {
            return Err(syntax(format!("invalid let name '{name}'")));
        }
        let value = self.expr(value)?;
        if value.ty() != TypeTag::Real {
            return Err(type_err(format!("let binds only real values, '{name}' is {}", value.ty())));
        }
        let name = Ident::from(name.as_str());
        self.scope.push((name.clone(), TypeTag::Real));
        let body = self.expr(body);
        self.scope.pop();
        Ok(Expr::Let { name, value: Box::new(value), body: Box::new(body?) })
    }

    fn if_form(&mut self, rest: &[Sx]) -> Result<Expr, SexprError> {
        let [c, t, e] = rest else {
            return Err(syntax("if expects condition, then and else"));
        };
        let cond = self.expr(c)?;
        if cond.ty() != TypeTag::Bool {
            return Err(type_err("if condition must be bool"));
        }
        let then = self.expr(t)?;
        let els = self.expr(e)?;
        if then.ty() != els.ty() {
            return Err(type_err(format!("if branches disagree: {} vs {}", then.ty(), els.ty())));
        }
        Ok(Expr::If { cond: Box::new(cond), then: Box::new(then), els: Box::new(els) })
    }

    fn recur_form(&mut self, rest: &[Sx]) -> Result<Expr, SexprError> {
        let (params, ret) = match &self.recur {
            RecurCtx::None => return Err(syntax("recur outside of a lambda")),
            RecurCtx::Unknown => return Err(type_err(NEEDS_RET)),
            RecurCtx::Known { params, ret } => (params.clone(), *ret),
        };
        let args = self.typed_args("recur", rest, &params)?;
        Ok(Expr::Recur { ty: ret, args })
    }
}

fn parse_params(sx: &Sx) -> Result<Vec<Param>, SexprError> {
    let Sx::List(items) = sx else {
        return Err(syntax("lambda parameters must be a list"));
    };
    let mut params: Vec<Param> = Vec::with_capacity(items.len());
    for item in items {
        let (name, ty) = match item {
            Sx::Atom(name) => (name.as_str(), TypeTag::Real),
            Sx::List(pair) => match pair.as_slice() {
                [Sx::Atom(name), Sx::Atom(ty)] => {
                    let ty = TypeTag::from_name(ty).ok_or_else(|| syntax(format!("unknown type '{ty}'")))?;
                    (name.as_str(), ty)
                }
                _ => return Err(syntax("typed parameter must be (name type)")),
            },
        };
        if !is_identifier(name) || RESERVED.contains(&name) {
            return Err(syntax(format!("invalid parameter name '{name}'")));
        }
        if params.iter().any(|p| &*p.name == name) {
            return Err(syntax(format!("duplicate parameter '{name}'")));
        }
        params.push(Param::new(name, ty));
    }
    Ok(params)
}

/// Splits `(lambda PARAMS [RET] FORMS...)` into its pieces.
fn lambda_parts(sx: &Sx) -> Result<(Vec<Param>, Option<TypeTag>, &[Sx]), SexprError> {
    let Sx::List(items) = sx else {
        return Err(syntax(format!("expected a lambda, found {}", sx.describe())));
    };
    match items.first() {
        Some(Sx::Atom(h)) if h == "lambda" => {}
        _ => return Err(syntax(format!("expected a lambda, found {}", sx.describe()))),
    }
    let params = parse_params(items.get(1).ok_or_else(|| syntax("lambda without parameters"))?)?;
    let mut rest = &items[2..];
    let mut ret = None;
    if let Some(Sx::Atom(t)) = rest.first() {
        if let Some(ty) = TypeTag::from_name(t) {
            ret = Some(ty);
            rest = &rest[1..];
        }
    }
    if rest.is_empty() {
        return Err(syntax("lambda without a body"));
    }
    Ok((params, ret, rest))
}

fn scope_of(params: &[Param]) -> Vec<(Ident, TypeTag)> {
    params.iter().map(|p| (p.name.clone(), p.ty)).collect()
}

/// Parses a complete sampler program `(lambda (params...) [ret] (define ...)* body)`.
pub fn parse_program(text: &str) -> Result<Program, SexprError> {
    let sx = read(text)?;
    let (params, declared_ret, forms) = lambda_parts(&sx)?;
    let (defines, body_sx) = forms.split_at(forms.len() - 1);

    // Register every signature first so definitions may refer to each other.
    let mut raw_defs = Vec::with_capacity(defines.len());
    let mut procs = HashMap::new();
    for d in defines {
        let Sx::List(items) = d else {
            return Err(syntax("only define forms may precede the lambda body"));
        };
        let [Sx::Atom(head), Sx::Atom(name), lam] = items.as_slice() else {
            return Err(syntax("define must be (define name (lambda ...))"));
        };
        if head != "define" {
            return Err(syntax("only define forms may precede the lambda body"));
        }
        if !is_identifier(name) || RESERVED.contains(&name.as_str()) || Prim::from_name(name).is_some() {
            return Err(syntax(format!("invalid procedure name '{name}'")));
        }
        let (pparams, pret, pforms) = lambda_parts(lam)?;
        let pret = pret.ok_or_else(|| syntax(format!("procedure '{name}' must declare its return type")))?;
        let [pbody] = pforms else {
            return Err(syntax(format!("procedure '{name}' must have exactly one body expression")));
        };
        if procs.insert(name.clone(), (pparams.iter().map(|p| p.ty).collect::<Vec<_>>(), pret)).is_some() {
            return Err(syntax(format!("procedure '{name}' defined twice")));
        }
        raw_defs.push((name.clone(), pparams, pret, pbody));
    }

    let mut procedures = Vec::with_capacity(raw_defs.len());
    for (name, pparams, pret, pbody) in raw_defs {
        let mut b = Builder {
            procs: procs.clone(),
            scope: scope_of(&pparams),
            recur: RecurCtx::Known { params: pparams.iter().map(|p| p.ty).collect(), ret: pret },
        };
        let body = b.expr(pbody)?;
        if body.ty() != pret {
            return Err(type_err(format!("procedure '{name}' declares {pret} but its body is {}", body.ty())));
        }
        procedures.push(Arc::new(Procedure { name: Ident::from(name.as_str()), params: pparams, ret: pret, body }));
    }

    let param_types: Vec<TypeTag> = params.iter().map(|p| p.ty).collect();
    let build_body = |recur: RecurCtx| {
        let mut b = Builder { procs: procs.clone(), scope: scope_of(&params), recur };
        b.expr(&body_sx[0])
    };
    let body = match declared_ret {
        Some(ret) => {
            let body = build_body(RecurCtx::Known { params: param_types, ret })?;
            if body.ty() != ret {
                return Err(type_err(format!("lambda declares {ret} but its body is {}", body.ty())));
            }
            body
        }
        None => match build_body(RecurCtx::Unknown) {
            Err(SexprError::Type(msg)) if msg == NEEDS_RET => {
                let mut found = None;
                let mut last_err = None;
                for ret in TypeTag::ALL {
                    match build_body(RecurCtx::Known { params: param_types.clone(), ret }) {
                        Ok(body) if body.ty() == ret => {
                            found = Some(body);
                            break;
                        }
                        Ok(_) => {}
                        Err(e) => last_err = Some(e),
                    }
                }
                found.ok_or_else(|| last_err.unwrap_or_else(|| type_err("cannot infer the lambda's return type")))?
            }
            other => other?,
        },
    };
    let ret = body.ty();
    Ok(Program { params, ret, procedures, body })
}

/// Parses a standalone expression with no free variables or procedures.
pub fn parse_expr(text: &str) -> Result<Expr, SexprError> {
    parse_expr_in(text, &[])
}

/// Parses an expression whose free variables are the given typed names.
pub fn parse_expr_in(text: &str, scope: &[Param]) -> Result<Expr, SexprError> {
    let sx = read(text)?;
    let mut b = Builder { procs: HashMap::new(), scope: scope_of(scope), recur: RecurCtx::None };
    b.expr(&sx)
}
