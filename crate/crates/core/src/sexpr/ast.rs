//! Typed abstract syntax of the sampler language.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Identifier type shared by variables, parameters and procedure names.
pub type Ident = Arc<str>;

/// The closed set of value types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Real,
    Bool,
}

impl TypeTag {
    pub const ALL: [TypeTag; 2] = [TypeTag::Real, TypeTag::Bool];

    pub fn name(self) -> &'static str {
        match self {
            TypeTag::Real => "real",
            TypeTag::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<TypeTag> {
        match s {
            "real" => Some(TypeTag::Real),
            "bool" => Some(TypeTag::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A runtime value. Reals compare bitwise so that structural equality
/// agrees with canonical text equality (`0.0` and `-0.0` differ).
#[derive(Debug, Clone, Copy)]
pub enum Value {
    Real(f64),
    Bool(bool),
}

impl Value {
    pub fn ty(self) -> TypeTag {
        match self {
            Value::Real(_) => TypeTag::Real,
            Value::Bool(_) => TypeTag::Bool,
        }
    }

    pub fn as_real(self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(x),
            Value::Bool(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            Value::Real(_) => None,
        }
    }

    /// Numeric view used when collecting samples: booleans map to 1.0 / 0.0.
    pub fn to_f64(self) -> f64 {
        match self {
            Value::Real(x) => x,
            Value::Bool(true) => 1.0,
            Value::Bool(false) => 0.0,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

/// Primitive procedures of the global environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    SafeDiv,
    Exp,
    SafeLog,
    SafeSqrt,
    Cos,
    Sin,
    Inc,
    Dec,
    Lt,
    SafeUc,
    SafeBeta,
    SafeNormal,
    SafeGamma,
}

const R: TypeTag = TypeTag::Real;

impl Prim {
    pub const ALL: [Prim; 16] = [
        Prim::Add,
        Prim::Sub,
        Prim::Mul,
        Prim::SafeDiv,
        Prim::Exp,
        Prim::SafeLog,
        Prim::SafeSqrt,
        Prim::Cos,
        Prim::Sin,
        Prim::Inc,
        Prim::Dec,
        Prim::Lt,
        Prim::SafeUc,
        Prim::SafeBeta,
        Prim::SafeNormal,
        Prim::SafeGamma,
    ];

    /// The default global environment.
    pub const BASE: [Prim; 13] = [
        Prim::Add,
        Prim::Sub,
        Prim::Mul,
        Prim::SafeDiv,
        Prim::Exp,
        Prim::SafeLog,
        Prim::SafeSqrt,
        Prim::Cos,
        Prim::Sin,
        Prim::Inc,
        Prim::Dec,
        Prim::Lt,
        Prim::SafeUc,
    ];

    /// Stochastic primitives added for posterior compilation.
    pub const EXTENDED: [Prim; 3] = [Prim::SafeBeta, Prim::SafeNormal, Prim::SafeGamma];

    /// Canonical printed name.
    pub fn name(self) -> &'static str {
        match self {
            Prim::Add => "+",
            Prim::Sub => "-",
            Prim::Mul => "*",
            Prim::SafeDiv => "safe-div",
            Prim::Exp => "exp",
            Prim::SafeLog => "safe-log",
            Prim::SafeSqrt => "safe-sqrt",
            Prim::Cos => "cos",
            Prim::Sin => "sin",
            Prim::Inc => "inc",
            Prim::Dec => "dec",
            Prim::Lt => "<",
            Prim::SafeUc => "safe-uc",
            Prim::SafeBeta => "safe-beta",
            Prim::SafeNormal => "safe-normal",
            Prim::SafeGamma => "safe-gamma",
        }
    }

    /// Resolves canonical names and the unsafe spellings used in
    /// human-written code (`log`, `uniform-continuous`, ...).
    pub fn from_name(s: &str) -> Option<Prim> {
        let p = match s {
            "+" => Prim::Add,
            "-" => Prim::Sub,
            "*" => Prim::Mul,
            "safe-div" | "/" => Prim::SafeDiv,
            "exp" => Prim::Exp,
            "safe-log" | "log" => Prim::SafeLog,
            "safe-sqrt" | "sqrt" => Prim::SafeSqrt,
            "cos" => Prim::Cos,
            "sin" => Prim::Sin,
            "inc" => Prim::Inc,
            "dec" => Prim::Dec,
            "<" => Prim::Lt,
            "safe-uc" | "uniform-continuous" => Prim::SafeUc,
            "safe-beta" | "beta" => Prim::SafeBeta,
            "safe-normal" | "normal" => Prim::SafeNormal,
            "safe-gamma" | "gamma" => Prim::SafeGamma,
            _ => return None,
        };
        Some(p)
    }

    pub fn arg_types(self) -> &'static [TypeTag] {
        match self {
            Prim::Exp | Prim::SafeLog | Prim::SafeSqrt | Prim::Cos | Prim::Sin | Prim::Inc | Prim::Dec => &[R],
            _ => &[R, R],
        }
    }

    pub fn ret(self) -> TypeTag {
        match self {
            Prim::Lt => TypeTag::Bool,
            _ => TypeTag::Real,
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Prim::SafeUc | Prim::SafeBeta | Prim::SafeNormal | Prim::SafeGamma)
    }
}

impl fmt::Display for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A typed expression node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var {
        name: Ident,
        ty: TypeTag,
    },
    Const(Value),
    Prim {
        op: Prim,
        args: Vec<Expr>,
    },
    /// Call of a compound procedure defined in the enclosing [`Program`].
    Call {
        proc: Ident,
        ret: TypeTag,
        args: Vec<Expr>,
    },
    /// Binds a real value; the node's type is the body's type.
    Let {
        name: Ident,
        value: Box<Expr>,
        body: Box<Expr>,
    },
    If {
        cond: Box<Expr>,
        then: Box<Expr>,
        els: Box<Expr>,
    },
    /// Recursive call of the innermost enclosing lambda.
    Recur {
        ty: TypeTag,
        args: Vec<Expr>,
    },
}

impl Expr {
    pub fn real(x: f64) -> Expr {
        Expr::Const(Value::Real(x))
    }

    pub fn ty(&self) -> TypeTag {
        match self {
            Expr::Var { ty, .. } => *ty,
            Expr::Const(v) => v.ty(),
            Expr::Prim { op, .. } => op.ret(),
            Expr::Call { ret, .. } => *ret,
            Expr::Let { body, .. } => body.ty(),
            Expr::If { then, .. } => then.ty(),
            Expr::Recur { ty, .. } => *ty,
        }
    }

    /// Direct subexpressions, left to right.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Var { .. } | Expr::Const(_) => Vec::new(),
            Expr::Prim { args, .. } | Expr::Call { args, .. } | Expr::Recur { args, .. } => args.iter().collect(),
            Expr::Let { value, body, .. } => vec![value, body],
            Expr::If { cond, then, els } => vec![cond, then, els],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Var { .. } | Expr::Const(_) => Vec::new(),
            Expr::Prim { args, .. } | Expr::Call { args, .. } | Expr::Recur { args, .. } => args.iter_mut().collect(),
            Expr::Let { value, body, .. } => vec![value.as_mut(), body.as_mut()],
            Expr::If { cond, then, els } => vec![cond.as_mut(), then.as_mut(), els.as_mut()],
        }
    }

    /// Number of nodes in this subtree.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    /// Height of this subtree; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Expr::depth).max().unwrap_or(0)
    }

    /// Visits every node in preorder.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: Ident,
    pub ty: TypeTag,
}

impl Param {
    pub fn new(name: &str, ty: TypeTag) -> Self {
        Param { name: Ident::from(name), ty }
    }
}

/// A closed compound procedure: its body sees only its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    pub name: Ident,
    pub params: Vec<Param>,
    pub ret: TypeTag,
    pub body: Expr,
}

impl Procedure {
    pub fn param_types(&self) -> Vec<TypeTag> {
        self.params.iter().map(|p| p.ty).collect()
    }
}

/// A top-level sampler lambda together with the compound procedures it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub params: Vec<Param>,
    pub ret: TypeTag,
    pub procedures: Vec<Arc<Procedure>>,
    pub body: Expr,
}

impl Program {
    pub fn param_types(&self) -> Vec<TypeTag> {
        self.params.iter().map(|p| p.ty).collect()
    }

    pub fn procedure(&self, name: &str) -> Option<&Arc<Procedure>> {
        self.procedures.iter().find(|p| &*p.name == name)
    }

    /// The bodies addressed by node indices: the main body first, then each
    /// procedure body in definition order.
    pub fn bodies(&self) -> impl Iterator<Item = &Expr> {
        std::iter::once(&self.body).chain(self.procedures.iter().map(|p| &p.body))
    }

    /// Total number of addressable nodes (every node except the lambda root).
    pub fn node_count(&self) -> usize {
        self.bodies().map(Expr::size).sum()
    }

    /// Expression depth of the main body and of each procedure body.
    pub fn max_depth(&self) -> usize {
        self.bodies().map(Expr::depth).max().unwrap_or(0)
    }
}
