//! Straight-line kernel IR.
//!
//! Every array is either a baked constant or a statically sized global;
//! statements address them by name. Shapes are fixed at specialization time
//! and checked once by [`KernelProgram::validate`].

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KERNEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("ill-formed kernel: {0}")]
    IllFormed(String),
}

fn ill(msg: impl Into<String>) -> KernelError {
    KernelError::IllFormed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub n: usize,
    pub m: usize,
    pub trip_count: usize,
}

/// A baked constant. Scalars are `1 x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ConstDecl {
    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

/// A mutable global array owned by one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDecl {
    pub name: String,
    pub owner: String,
    pub rows: usize,
    pub cols: usize,
    /// Initial contents; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
}

impl GlobalDecl {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Single element of a constant or global, by flat row-major index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElemRef {
    pub array: String,
    pub index: usize,
}

impl ElemRef {
    pub fn new(array: impl Into<String>, index: usize) -> Self {
        ElemRef {
            array: array.into(),
            index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expr", rename_all = "snake_case")]
pub enum Expr {
    Lit { value: f64 },
    Load { elem: ElemRef },
    Add { lhs: Box<Expr>, rhs: Box<Expr> },
    Sub { lhs: Box<Expr>, rhs: Box<Expr> },
    Mul { lhs: Box<Expr>, rhs: Box<Expr> },
    Div { lhs: Box<Expr>, rhs: Box<Expr> },
    Neg { arg: Box<Expr> },
    Sqrt { arg: Box<Expr> },
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn lit(value: f64) -> Self {
        Expr::Lit { value }
    }

    pub fn load(array: impl Into<String>, index: usize) -> Self {
        Expr::Load {
            elem: ElemRef::new(array, index),
        }
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Self {
        Expr::Add {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Self {
        Expr::Mul {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn div(lhs: Expr, rhs: Expr) -> Self {
        Expr::Div {
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn neg(arg: Expr) -> Self {
        Expr::Neg { arg: Box::new(arg) }
    }

    pub fn visit_loads<'a>(&'a self, f: &mut impl FnMut(&'a ElemRef)) {
        match self {
            Expr::Lit { .. } => {}
            Expr::Load { elem } => f(elem),
            Expr::Add { lhs, rhs } | Expr::Sub { lhs, rhs } | Expr::Mul { lhs, rhs } | Expr::Div { lhs, rhs } => {
                lhs.visit_loads(f);
                rhs.visit_loads(f);
            }
            Expr::Neg { arg } | Expr::Sqrt { arg } => arg.visit_loads(f),
        }
    }
}

/// Contract group checked by an `assert_contract` statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseKind {
    Requires,
    Ensures,
    LoopInvariant,
    Lemmas,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractTag {
    pub function: String,
    pub kind: ClauseKind,
}

impl std::fmt::Display for ContractTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            ClauseKind::Requires => "requires",
            ClauseKind::Ensures => "ensures",
            ClauseKind::LoopInvariant => "loop_invariant",
            ClauseKind::Lemmas => "lemmas",
        };
        write!(f, "{}:{}", self.function, kind)
    }
}

/// Matrix statements carry their dimensions explicitly; validation checks
/// them against the declarations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Stmt {
    /// `dst = expr` on one element.
    ElemAssign {
        dst: ElemRef,
        expr: Expr,
    },
    /// `dst[rows x cols] = a[rows x inner] * b[inner x cols]`, accumulated
    /// from `0.0` in increasing inner index.
    MatMulFixed {
        dst: String,
        a: String,
        b: String,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    /// `dst = a + b` element-wise.
    MatAddFixed {
        dst: String,
        a: String,
        b: String,
        len: usize,
    },
    /// `dst = s * src` element-wise.
    ScaleFixed {
        dst: String,
        src: String,
        scalar: ElemRef,
        len: usize,
    },
    /// `dst = L` with `L L^T = src`.
    CholFactorFixed {
        dst: String,
        src: String,
        dim: usize,
    },
    /// `dst = (L L^T)^{-1} rhs`.
    CholSolveFixed {
        dst: String,
        factor: String,
        rhs: String,
        dim: usize,
    },
    /// `dst = sum a_i b_i`, accumulated from `0.0`.
    DotFixed {
        dst: ElemRef,
        a: String,
        b: String,
        len: usize,
    },
    /// `dst = sqrt(max(src, 0))`.
    Sqrt {
        dst: ElemRef,
        src: ElemRef,
    },
    Div {
        dst: ElemRef,
        num: ElemRef,
        den: ElemRef,
    },
    /// `dst = -src` element-wise.
    Neg {
        dst: String,
        src: String,
        len: usize,
    },
    Call {
        function: String,
    },
    AssertContract {
        tag: ContractTag,
    },
    FixedLoop {
        count: usize,
        counter: String,
        body: Vec<Stmt>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub version: u32,
    pub sizes: Sizes,
    pub constants: Vec<ConstDecl>,
    pub globals: Vec<GlobalDecl>,
    pub functions: Vec<Function>,
    pub entry: String,
}

/// Where a name lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Const(usize),
    Global(usize),
}

impl KernelProgram {
    pub fn constant(&self, name: &str) -> Option<&ConstDecl> {
        self.constants.iter().find(|c| c.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.constant(name).filter(|c| c.is_scalar()).map(|c| c.values[0])
    }

    /// Bytes of mutable static storage; depends on sizes only.
    pub fn static_footprint_bytes(&self) -> usize {
        self.globals.iter().map(|g| g.len() * std::mem::size_of::<f64>()).sum()
    }

    pub fn slots(&self) -> HashMap<&str, Slot> {
        let mut out = HashMap::new();
        for (i, c) in self.constants.iter().enumerate() {
            out.insert(c.name.as_str(), Slot::Const(i));
        }
        for (i, g) in self.globals.iter().enumerate() {
            out.insert(g.name.as_str(), Slot::Global(i));
        }
        out
    }

    fn len_of(&self, slots: &HashMap<&str, Slot>, name: &str) -> Result<usize, KernelError> {
        match slots.get(name) {
            Some(Slot::Const(i)) => Ok(self.constants[*i].values.len()),
            Some(Slot::Global(i)) => Ok(self.globals[*i].len()),
            None => Err(ill(format!("unknown array `{name}`"))),
        }
    }

    fn writable(&self, slots: &HashMap<&str, Slot>, name: &str) -> Result<usize, KernelError> {
        match slots.get(name) {
            Some(Slot::Global(i)) => Ok(self.globals[*i].len()),
            Some(Slot::Const(_)) => Err(ill(format!("statement writes constant `{name}`"))),
            None => Err(ill(format!("unknown array `{name}`"))),
        }
    }

    /// Checks declarations, statement shapes, the call graph and the loop
    /// structure.
    pub fn validate(&self) -> Result<(), KernelError> {
        let mut seen = HashSet::new();
        for c in &self.constants {
            if !seen.insert(c.name.as_str()) {
                return Err(ill(format!("duplicate name `{}`", c.name)));
            }
            if c.values.len() != c.rows * c.cols || c.values.is_empty() {
                return Err(ill(format!(
                    "constant `{}` has {} values for {}x{}",
                    c.name,
                    c.values.len(),
                    c.rows,
                    c.cols
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(ill(format!("constant `{}` is not finite", c.name)));
            }
        }
        for g in &self.globals {
            if !seen.insert(g.name.as_str()) {
                return Err(ill(format!("duplicate name `{}`", g.name)));
            }
            if g.is_empty() {
                return Err(ill(format!("global `{}` is empty", g.name)));
            }
            if let Some(init) = &g.init {
                if init.len() != g.len() || init.iter().any(|v| !v.is_finite()) {
                    return Err(ill(format!("global `{}` has a bad initializer", g.name)));
                }
            }
        }
        let mut fnames = HashSet::new();
        for f in &self.functions {
            if !fnames.insert(f.name.as_str()) {
                return Err(ill(format!("duplicate function `{}`", f.name)));
            }
        }
        if !fnames.contains(self.entry.as_str()) {
            return Err(ill(format!("entry `{}` is not defined", self.entry)));
        }

        let slots = self.slots();
        let mut loops = Vec::new();
        for f in &self.functions {
            self.validate_body(&slots, &fnames, &f.name, &f.body, 0, &mut loops)?;
        }
        match loops.as_slice() {
            [(owner, count)] => {
                if *owner != "pathfollowing" {
                    return Err(ill(format!("fixed loop lives in `{owner}`, not `pathfollowing`")));
                }
                if *count != self.sizes.trip_count {
                    return Err(ill(format!(
                        "loop count {count} differs from trip_count {}",
                        self.sizes.trip_count
                    )));
                }
            }
            other => return Err(ill(format!("expected exactly one fixed loop, found {}", other.len()))),
        }
        self.check_acyclic()
    }

    fn validate_body<'a>(
        &'a self,
        slots: &HashMap<&str, Slot>,
        fnames: &HashSet<&str>,
        owner: &'a str,
        body: &[Stmt],
        depth: usize,
        loops: &mut Vec<(&'a str, usize)>,
    ) -> Result<(), KernelError> {
        let elem = |e: &ElemRef, write: bool| -> Result<(), KernelError> {
            let len = if write {
                self.writable(slots, &e.array)?
            } else {
                self.len_of(slots, &e.array)?
            };
            if e.index >= len {
                return Err(ill(format!(
                    "`{}[{}]` is out of bounds (length {len})",
                    e.array, e.index
                )));
            }
            Ok(())
        };
        let exact = |name: &str, want: usize, write: bool| -> Result<(), KernelError> {
            let len = if write {
                self.writable(slots, name)?
            } else {
                self.len_of(slots, name)?
            };
            if len != want {
                return Err(ill(format!(
                    "array `{name}` has length {len}, statement expects {want}"
                )));
            }
            Ok(())
        };
        let distinct = |dst: &str, srcs: &[&str]| -> Result<(), KernelError> {
            if srcs.contains(&dst) {
                return Err(ill(format!("`{dst}` aliases an input of a non-elementwise statement")));
            }
            Ok(())
        };
        for stmt in body {
            match stmt {
                Stmt::ElemAssign { dst, expr } => {
                    elem(dst, true)?;
                    let mut err = Ok(());
                    expr.visit_loads(&mut |e| {
                        if err.is_ok() {
                            err = elem(e, false);
                        }
                    });
                    err?;
                }
                Stmt::MatMulFixed {
                    dst,
                    a,
                    b,
                    rows,
                    inner,
                    cols,
                } => {
                    exact(dst, rows * cols, true)?;
                    exact(a, rows * inner, false)?;
                    exact(b, inner * cols, false)?;
                    distinct(dst, &[a, b])?;
                }
                Stmt::MatAddFixed { dst, a, b, len } => {
                    exact(dst, *len, true)?;
                    exact(a, *len, false)?;
                    exact(b, *len, false)?;
                }
                Stmt::ScaleFixed { dst, src, scalar, len } => {
                    exact(dst, *len, true)?;
                    exact(src, *len, false)?;
                    elem(scalar, false)?;
                }
                Stmt::CholFactorFixed { dst, src, dim } => {
                    exact(dst, dim * dim, true)?;
                    exact(src, dim * dim, false)?;
                    distinct(dst, &[src])?;
                }
                Stmt::CholSolveFixed { dst, factor, rhs, dim } => {
                    exact(dst, *dim, true)?;
                    exact(factor, dim * dim, false)?;
                    exact(rhs, *dim, false)?;
                    distinct(dst, &[factor, rhs])?;
                }
                Stmt::DotFixed { dst, a, b, len } => {
                    elem(dst, true)?;
                    exact(a, *len, false)?;
                    exact(b, *len, false)?;
                }
                Stmt::Sqrt { dst, src } => {
                    elem(dst, true)?;
                    elem(src, false)?;
                }
                Stmt::Div { dst, num, den } => {
                    elem(dst, true)?;
                    elem(num, false)?;
                    elem(den, false)?;
                }
                Stmt::Neg { dst, src, len } => {
                    exact(dst, *len, true)?;
                    exact(src, *len, false)?;
                }
                Stmt::Call { function } => {
                    if !fnames.contains(function.as_str()) {
                        return Err(ill(format!("call to undefined function `{function}`")));
                    }
                }
                Stmt::AssertContract { .. } => {}
                Stmt::FixedLoop { count, body, .. } => {
                    if depth > 0 {
                        return Err(ill("nested fixed loop"));
                    }
                    if *count == 0 {
                        return Err(ill("fixed loop with zero trips"));
                    }
                    loops.push((owner, *count));
                    self.validate_body(slots, fnames, owner, body, depth + 1, loops)?;
                }
            }
        }
        Ok(())
    }

    /// Names of functions called directly by `f`, in statement order.
    pub fn callees(f: &Function) -> Vec<&str> {
        fn walk<'a>(body: &'a [Stmt], out: &mut Vec<&'a str>) {
            for s in body {
                match s {
                    Stmt::Call { function } => out.push(function),
                    Stmt::FixedLoop { body, .. } => walk(body, out),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&f.body, &mut out);
        out
    }

    fn check_acyclic(&self) -> Result<(), KernelError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let index: HashMap<&str, usize> = self
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect();
        let mut marks = vec![Mark::Fresh; self.functions.len()];
        fn visit(
            p: &KernelProgram,
            index: &HashMap<&str, usize>,
            marks: &mut [Mark],
            i: usize,
        ) -> Result<(), KernelError> {
            match marks[i] {
                Mark::Done => return Ok(()),
                Mark::Active => return Err(ill(format!("recursive call involving `{}`", p.functions[i].name))),
                Mark::Fresh => {}
            }
            marks[i] = Mark::Active;
            for callee in KernelProgram::callees(&p.functions[i]) {
                visit(p, index, marks, index[callee])?;
            }
            marks[i] = Mark::Done;
            Ok(())
        }
        for i in 0..self.functions.len() {
            visit(self, &index, &mut marks, i)?;
        }
        Ok(())
    }

    /// Globals written (directly or through callees) by `function`.
    pub fn assigned_globals(&self, function: &str) -> Vec<String> {
        fn direct(body: &[Stmt], out: &mut Vec<String>) {
            for s in body {
                let name = match s {
                    Stmt::ElemAssign { dst, .. }
                    | Stmt::DotFixed { dst, .. }
                    | Stmt::Sqrt { dst, .. }
                    | Stmt::Div { dst, .. } => Some(dst.array.clone()),
                    Stmt::MatMulFixed { dst, .. }
                    | Stmt::MatAddFixed { dst, .. }
                    | Stmt::ScaleFixed { dst, .. }
                    | Stmt::CholFactorFixed { dst, .. }
                    | Stmt::CholSolveFixed { dst, .. }
                    | Stmt::Neg { dst, .. } => Some(dst.clone()),
                    Stmt::FixedLoop { body, .. } => {
                        direct(body, out);
                        None
                    }
                    Stmt::Call { .. } | Stmt::AssertContract { .. } => None,
                };
                if let Some(n) = name {
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
            }
        }
        let mut out = Vec::new();
        let mut stack = vec![function.to_string()];
        let mut visited = HashSet::new();
        while let Some(name) = stack.pop() {
            if !visited.insert(name.clone()) {
                continue;
            }
            if let Some(f) = self.function(&name) {
                direct(&f.body, &mut out);
                stack.extend(Self::callees(f).into_iter().rev().map(str::to_string));
            }
        }
        let order: HashMap<&str, usize> = self
            .globals
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.as_str(), i))
            .collect();
        out.sort_by_key(|n| order.get(n.as_str()).copied().unwrap_or(usize::MAX));
        out
    }
}
