//! Contract sidecar: structured predicates attached to kernel functions, the
//! main loop, and the lemma chain behind the `update_t` postcondition.
//!
//! Terms are evaluated at run time by the interpreter. Equalities compare
//! against a magnitude that tracks `|a| |b|` through products and sums, so a
//! matrix identity is judged relative to the size of the numbers that were
//! actually combined rather than the size of the result.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ir::{KernelProgram, Slot};
use crate::barrier::{self, BarrierEval};
use crate::ipm::IterationSchedule;
use crate::linalg::{self, Matrix};
use crate::lp::LpInstance;
use crate::tolerances::{Tolerances, CONTRACT_EQ_REL};

pub const SIDECAR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "term", rename_all = "snake_case")]
pub enum Term {
    Num {
        value: f64,
    },
    /// Baked constant, scalar or matrix.
    Const {
        name: String,
    },
    /// Whole global array as a matrix; `1 x 1` globals are scalars.
    Var {
        name: String,
    },
    Elem {
        name: String,
        row: usize,
        col: usize,
    },
    /// Lemma binder.
    Bound {
        name: String,
    },
    LoopIndex,
    /// Value at function entry.
    Old {
        arg: Box<Term>,
    },
    Add {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    Sub {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    Mul {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    Div {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    Neg {
        arg: Box<Term>,
    },
    Sqrt {
        arg: Box<Term>,
    },
    MatMul {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    MatAdd {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    MatScal {
        mat: Box<Term>,
        scalar: Box<Term>,
    },
    Transpose {
        arg: Box<Term>,
    },
    Dot {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    Hess {
        x: Box<Term>,
    },
    Grad {
        x: Box<Term>,
    },
    /// `||y||_x`.
    Norm {
        y: Box<Term>,
        x: Box<Term>,
    },
    /// `||t c + F'(x)||_x <= bound`.
    Acc {
        t: Box<Term>,
        x: Box<Term>,
        bound: Box<Term>,
    },
    Lower {
        k: Box<Term>,
    },
    /// LP optimum.
    Sol,
    /// `A x < b` row-wise.
    StrictlyFeasible {
        x: Box<Term>,
    },
    Cmp {
        op: CmpOp,
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
    And {
        args: Vec<Term>,
    },
    Implies {
        lhs: Box<Term>,
        rhs: Box<Term>,
    },
}

fn bx(t: Term) -> Box<Term> {
    Box::new(t)
}

#[allow(clippy::should_implement_trait)]
impl Term {
    pub fn num(value: f64) -> Self {
        Term::Num { value }
    }
    pub fn cst(name: &str) -> Self {
        Term::Const { name: name.into() }
    }
    pub fn var(name: &str) -> Self {
        Term::Var { name: name.into() }
    }
    pub fn elem(name: &str, row: usize, col: usize) -> Self {
        Term::Elem {
            name: name.into(),
            row,
            col,
        }
    }
    pub fn bound(name: &str) -> Self {
        Term::Bound { name: name.into() }
    }
    pub fn old(arg: Term) -> Self {
        Term::Old { arg: bx(arg) }
    }
    pub fn add(lhs: Term, rhs: Term) -> Self {
        Term::Add {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn sub(lhs: Term, rhs: Term) -> Self {
        Term::Sub {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn mul(lhs: Term, rhs: Term) -> Self {
        Term::Mul {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn div(lhs: Term, rhs: Term) -> Self {
        Term::Div {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn neg(arg: Term) -> Self {
        Term::Neg { arg: bx(arg) }
    }
    pub fn sqrt(arg: Term) -> Self {
        Term::Sqrt { arg: bx(arg) }
    }
    pub fn mat_mul(lhs: Term, rhs: Term) -> Self {
        Term::MatMul {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn mat_add(lhs: Term, rhs: Term) -> Self {
        Term::MatAdd {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn mat_scal(mat: Term, scalar: Term) -> Self {
        Term::MatScal {
            mat: bx(mat),
            scalar: bx(scalar),
        }
    }
    pub fn transpose(arg: Term) -> Self {
        Term::Transpose { arg: bx(arg) }
    }
    pub fn dot(lhs: Term, rhs: Term) -> Self {
        Term::Dot {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn hess(x: Term) -> Self {
        Term::Hess { x: bx(x) }
    }
    pub fn grad(x: Term) -> Self {
        Term::Grad { x: bx(x) }
    }
    pub fn norm(y: Term, x: Term) -> Self {
        Term::Norm { y: bx(y), x: bx(x) }
    }
    pub fn acc(t: Term, x: Term, bound: Term) -> Self {
        Term::Acc {
            t: bx(t),
            x: bx(x),
            bound: bx(bound),
        }
    }
    pub fn lower(k: Term) -> Self {
        Term::Lower { k: bx(k) }
    }
    pub fn feasible(x: Term) -> Self {
        Term::StrictlyFeasible { x: bx(x) }
    }
    pub fn cmp(lhs: Term, op: CmpOp, rhs: Term) -> Self {
        Term::Cmp {
            op,
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }
    pub fn implies(lhs: Term, rhs: Term) -> Self {
        Term::Implies {
            lhs: bx(lhs),
            rhs: bx(rhs),
        }
    }

    fn children(&self) -> Vec<&Term> {
        match self {
            Term::Num { .. }
            | Term::Const { .. }
            | Term::Var { .. }
            | Term::Elem { .. }
            | Term::Bound { .. }
            | Term::LoopIndex
            | Term::Sol => vec![],
            Term::Old { arg } | Term::Neg { arg } | Term::Sqrt { arg } | Term::Transpose { arg } => vec![arg],
            Term::Hess { x } | Term::Grad { x } | Term::StrictlyFeasible { x } => vec![x],
            Term::Lower { k } => vec![k],
            Term::Add { lhs, rhs }
            | Term::Sub { lhs, rhs }
            | Term::Mul { lhs, rhs }
            | Term::Div { lhs, rhs }
            | Term::MatMul { lhs, rhs }
            | Term::MatAdd { lhs, rhs }
            | Term::Dot { lhs, rhs }
            | Term::Cmp { lhs, rhs, .. }
            | Term::Implies { lhs, rhs } => vec![lhs, rhs],
            Term::MatScal { mat, scalar } => vec![mat, scalar],
            Term::Norm { y, x } => vec![y, x],
            Term::Acc { t, x, bound } => vec![t, x, bound],
            Term::And { args } => args.iter().collect(),
        }
    }

    pub fn any(&self, pred: &impl Fn(&Term) -> bool) -> bool {
        pred(self) || self.children().into_iter().any(|c| c.any(pred))
    }

    pub fn mentions_sol(&self) -> bool {
        self.any(&|t| matches!(t, Term::Sol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub term: Term,
    /// Runtime-checkable sufficient condition, used when `term` needs a
    /// value the interpreter may not have (the LP optimum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Term>,
}

/// Half-open element range `[from, to)` of a global.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignsRange {
    pub global: String,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionContract {
    pub name: String,
    pub requires: Vec<Clause>,
    pub ensures: Vec<Clause>,
    pub assigns: Vec<AssignsRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopContract {
    pub function: String,
    pub counter: String,
    pub invariants: Vec<Clause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaBinding {
    pub binder: String,
    pub value: Term,
}

/// Where a universally quantified lemma is instantiated and checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaInstance {
    pub function: String,
    pub bindings: Vec<LemmaBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma {
    pub name: String,
    pub binders: Vec<String>,
    pub statement: Term,
    pub instance: LemmaInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSidecar {
    pub version: u32,
    pub functions: Vec<FunctionContract>,
    #[serde(rename = "loop")]
    pub loop_contract: LoopContract,
    pub lemmas: Vec<Lemma>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SidecarError {
    #[error("contract for unknown function `{0}`")]
    UnknownFunction(String),
    #[error("assigns range {from}..{to} of `{global}` is not inside a declared global")]
    BadAssigns { global: String, from: usize, to: usize },
    #[error("term in `{clause}` references unknown name `{name}`")]
    UnknownName { clause: String, name: String },
    #[error("lemma `{lemma}` uses unbound name `{name}`")]
    UnboundBinder { lemma: String, name: String },
}

impl ContractSidecar {
    pub fn function(&self, name: &str) -> Option<&FunctionContract> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn lemmas_at<'a>(&'a self, function: &'a str) -> impl Iterator<Item = &'a Lemma> + 'a {
        self.lemmas.iter().filter(move |l| l.instance.function == function)
    }

    /// Every contract names a function, every assigns range a global, every
    /// term only constants, globals and bound names.
    pub fn validate(&self, k: &KernelProgram) -> Result<(), SidecarError> {
        let slots = k.slots();
        let check_names = |clause: &str, t: &Term, binders: &[String]| match first_unknown(t, &slots, binders) {
            Some(name) => Err(SidecarError::UnknownName {
                clause: clause.into(),
                name,
            }),
            None => Ok(()),
        };
        for f in &self.functions {
            if k.function(&f.name).is_none() {
                return Err(SidecarError::UnknownFunction(f.name.clone()));
            }
            for a in &f.assigns {
                let ok = k.global(&a.global).is_some_and(|g| a.from < a.to && a.to <= g.len());
                if !ok {
                    return Err(SidecarError::BadAssigns {
                        global: a.global.clone(),
                        from: a.from,
                        to: a.to,
                    });
                }
            }
            for c in f.requires.iter().chain(&f.ensures) {
                check_names(&c.name, &c.term, &[])?;
                if let Some(w) = &c.witness {
                    check_names(&c.name, w, &[])?;
                }
            }
        }
        if k.function(&self.loop_contract.function).is_none() {
            return Err(SidecarError::UnknownFunction(self.loop_contract.function.clone()));
        }
        for c in &self.loop_contract.invariants {
            check_names(&c.name, &c.term, &[])?;
        }
        for l in &self.lemmas {
            if k.function(&l.instance.function).is_none() {
                return Err(SidecarError::UnknownFunction(l.instance.function.clone()));
            }
            check_names(&l.name, &l.statement, &l.binders)?;
            for b in &l.binders {
                if !l.instance.bindings.iter().any(|x| &x.binder == b) {
                    return Err(SidecarError::UnboundBinder {
                        lemma: l.name.clone(),
                        name: b.clone(),
                    });
                }
            }
            for b in &l.instance.bindings {
                check_names(&l.name, &b.value, &[])?;
            }
        }
        Ok(())
    }
}

fn first_unknown(t: &Term, slots: &HashMap<&str, Slot>, binders: &[String]) -> Option<String> {
    let missing = match t {
        Term::Const { name } => !matches!(slots.get(name.as_str()), Some(Slot::Const(_))),
        Term::Var { name } => !matches!(slots.get(name.as_str()), Some(Slot::Global(_))),
        Term::Elem { name, .. } => !slots.contains_key(name.as_str()),
        Term::Bound { name } => !binders.contains(name),
        _ => false,
    };
    if missing {
        if let Term::Const { name } | Term::Var { name } | Term::Elem { name, .. } | Term::Bound { name } = t {
            return Some(name.clone());
        }
    }
    t.children().into_iter().find_map(|c| first_unknown(c, slots, binders))
}

pub fn render_sidecar_json(s: &ContractSidecar) -> String {
    serde_json::to_string_pretty(s).expect("sidecar serializes")
}

pub fn parse_sidecar_json(text: &str) -> Result<ContractSidecar, serde_json::Error> {
    serde_json::from_str(text)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown name `{0}`")]
    Unknown(String),
    #[error("term needs the LP optimum")]
    NeedsSol,
    #[error("barrier evaluation failed: {0}")]
    Barrier(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// `mag` bounds the magnitude of the quantities combined to form `v`.
    Num {
        v: f64,
        mag: f64,
    },
    Mat {
        m: Matrix,
        mag: Vec<f64>,
    },
    Bool(bool),
}

impl Value {
    fn num(v: f64) -> Self {
        Value::Num { v, mag: v.abs() }
    }

    fn mat(m: Matrix) -> Self {
        let mag = m.data().iter().map(|v| v.abs()).collect();
        Value::Mat { m, mag }
    }

    fn from_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self, EvalError> {
        if rows == 1 && cols == 1 {
            return Ok(Value::num(data[0]));
        }
        Matrix::new(rows, cols, data.to_vec())
            .map(Value::mat)
            .map_err(|e| EvalError::Type(e.to_string()))
    }

    fn as_num(&self) -> Result<(f64, f64), EvalError> {
        match self {
            Value::Num { v, mag } => Ok((*v, *mag)),
            Value::Mat { m, mag } if m.shape() == (1, 1) => Ok((m.data()[0], mag[0])),
            other => Err(EvalError::Type(format!("expected a scalar, got {other:?}"))),
        }
    }

    fn as_mat(&self) -> Result<(Matrix, Vec<f64>), EvalError> {
        match self {
            Value::Mat { m, mag } => Ok((m.clone(), mag.clone())),
            Value::Num { v, mag } => Ok((Matrix::new(1, 1, vec![*v]).expect("finite"), vec![*mag])),
            Value::Bool(_) => Err(EvalError::Type("expected a matrix, got a boolean".into())),
        }
    }

    fn as_bool(&self) -> Result<bool, EvalError> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(EvalError::Type(format!("expected a boolean, got {other:?}"))),
        }
    }
}

/// Result of checking one predicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub holds: bool,
    /// Left-hand side of the deciding comparison (NaN when there is none).
    pub measured: f64,
}

/// Barrier evaluations keyed by the bit pattern of the point.
#[derive(Default)]
pub struct BarrierCache {
    map: HashMap<Vec<u64>, Rc<BarrierEval>>,
}

impl BarrierCache {
    pub fn clear(&mut self) {
        self.map.clear();
    }
}

/// Everything a term can refer to.
pub struct EvalEnv<'a> {
    pub kernel: &'a KernelProgram,
    pub slots: &'a HashMap<&'a str, Slot>,
    pub globals: &'a [Vec<f64>],
    pub old: Option<&'a [Vec<f64>]>,
    pub binders: &'a [(String, Value)],
    pub loop_index: Option<usize>,
    pub lp: &'a LpInstance,
    pub schedule: &'a IterationSchedule,
    pub tol: &'a Tolerances,
    pub sol: Option<f64>,
    pub cache: &'a RefCell<BarrierCache>,
}

impl EvalEnv<'_> {
    fn barrier_at(&self, x: &Matrix) -> Result<Rc<BarrierEval>, EvalError> {
        let key: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        if let Some(be) = self.cache.borrow().map.get(&key) {
            return Ok(be.clone());
        }
        let be = barrier::eval_barrier_with(self.lp, x, self.tol.feas_margin)
            .map_err(|e| EvalError::Barrier(e.to_string()))?;
        let be = Rc::new(be);
        self.cache.borrow_mut().map.insert(key, be.clone());
        Ok(be)
    }

    fn array(&self, name: &str, old: bool) -> Result<(usize, usize, &[f64]), EvalError> {
        match self.slots.get(name) {
            Some(Slot::Const(i)) => {
                let c = &self.kernel.constants[*i];
                Ok((c.rows, c.cols, &c.values))
            }
            Some(Slot::Global(i)) => {
                let g = &self.kernel.globals[*i];
                let store = match (old, self.old) {
                    (true, Some(o)) => o,
                    _ => self.globals,
                };
                Ok((g.rows, g.cols, &store[*i]))
            }
            None => Err(EvalError::Unknown(name.into())),
        }
    }

    pub fn eval(&self, t: &Term) -> Result<Value, EvalError> {
        self.eval_in(t, false)
    }

    fn eval_in(&self, t: &Term, old: bool) -> Result<Value, EvalError> {
        let ev = |t: &Term| self.eval_in(t, old);
        let num = |t: &Term| ev(t)?.as_num();
        let mat = |t: &Term| ev(t)?.as_mat();
        let point = |t: &Term| -> Result<Matrix, EvalError> { Ok(mat(t)?.0) };
        let la = |r: Result<Matrix, linalg::LinalgError>| r.map_err(|e| EvalError::Type(e.to_string()));
        Ok(match t {
            Term::Num { value } => Value::num(*value),
            Term::Const { name } | Term::Var { name } => {
                let (r, c, data) = self.array(name, old)?;
                Value::from_slice(r, c, data)?
            }
            Term::Elem { name, row, col } => {
                let (r, c, data) = self.array(name, old)?;
                if *row >= r || *col >= c {
                    return Err(EvalError::Type(format!("{name}[{row}][{col}] out of bounds")));
                }
                Value::num(data[row * c + col])
            }
            Term::Bound { name } => self
                .binders
                .iter()
                .find(|(b, _)| b == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| EvalError::Unknown(name.clone()))?,
            Term::LoopIndex => Value::num(
                self.loop_index
                    .ok_or_else(|| EvalError::Type("loop index outside the loop".into()))? as f64,
            ),
            Term::Old { arg } => self.eval_in(arg, true)?,
            Term::Add { lhs, rhs } | Term::Sub { lhs, rhs } => {
                let ((a, ma), (b, mb)) = (num(lhs)?, num(rhs)?);
                let v = if matches!(t, Term::Add { .. }) { a + b } else { a - b };
                Value::Num { v, mag: ma + mb }
            }
            Term::Mul { lhs, rhs } => {
                let ((a, ma), (b, mb)) = (num(lhs)?, num(rhs)?);
                Value::Num { v: a * b, mag: ma * mb }
            }
            Term::Div { lhs, rhs } => {
                let ((a, ma), (b, _)) = (num(lhs)?, num(rhs)?);
                let v = a / b;
                Value::Num {
                    v,
                    mag: (ma / b.abs()).max(v.abs()),
                }
            }
            Term::Neg { arg } => {
                let (a, ma) = num(arg)?;
                Value::Num { v: -a, mag: ma }
            }
            Term::Sqrt { arg } => {
                let (a, _) = num(arg)?;
                Value::num(a.max(0.0).sqrt())
            }
            Term::MatMul { lhs, rhs } => {
                let ((a, ma), (b, mb)) = (mat(lhs)?, mat(rhs)?);
                let m = la(linalg::mat_mul(&a, &b))?;
                let mut mag = vec![0.0; m.rows() * m.cols()];
                linalg::matmul_into(&ma, &mb, a.rows(), a.cols(), b.cols(), &mut mag);
                Value::Mat { m, mag }
            }
            Term::MatAdd { lhs, rhs } => {
                let ((a, ma), (b, mb)) = (mat(lhs)?, mat(rhs)?);
                let m = la(linalg::mat_add(&a, &b))?;
                let mag = ma.iter().zip(&mb).map(|(x, y)| x + y).collect();
                Value::Mat { m, mag }
            }
            Term::MatScal { mat: a, scalar } => {
                let ((a, ma), (s, ms)) = (mat(a)?, num(scalar)?);
                let m = la(linalg::mat_scale(&a, s))?;
                let mag = ma.iter().map(|x| x * ms).collect();
                Value::Mat { m, mag }
            }
            Term::Transpose { arg } => {
                let (a, ma) = mat(arg)?;
                let m = linalg::transpose(&a);
                let mm = Matrix::new(a.rows(), a.cols(), ma).expect("finite magnitudes");
                Value::Mat {
                    m,
                    mag: linalg::transpose(&mm).into_data(),
                }
            }
            Term::Dot { lhs, rhs } => {
                let ((a, ma), (b, mb)) = (mat(lhs)?, mat(rhs)?);
                if a.data().len() != b.data().len() {
                    return Err(EvalError::Type("dot of unequal lengths".into()));
                }
                Value::Num {
                    v: linalg::dot_slices(a.data(), b.data()),
                    mag: linalg::dot_slices(&ma, &mb),
                }
            }
            Term::Hess { x } => Value::mat(self.barrier_at(&point(x)?)?.hess.clone()),
            Term::Grad { x } => Value::mat(self.barrier_at(&point(x)?)?.grad.clone()),
            Term::Norm { y, x } => {
                let be = self.barrier_at(&point(x)?)?;
                let y = point(y)?;
                Value::num(barrier::local_norm(&be, &y).map_err(|e| EvalError::Barrier(e.to_string()))?)
            }
            Term::Lower { k } => {
                let (k, _) = num(k)?;
                if !(k >= 0.0 && k.fract() == 0.0) {
                    return Err(EvalError::Type(format!("lower() of non-index {k}")));
                }
                Value::num(self.schedule.lower(k as usize))
            }
            Term::Sol => Value::num(self.sol.ok_or(EvalError::NeedsSol)?),
            Term::Acc { .. }
            | Term::StrictlyFeasible { .. }
            | Term::Cmp { .. }
            | Term::And { .. }
            | Term::Implies { .. } => Value::Bool(self.check_in(t, old)?.holds),
        })
    }

    pub fn check(&self, t: &Term) -> Result<Outcome, EvalError> {
        self.check_in(t, false)
    }

    fn check_in(&self, t: &Term, old: bool) -> Result<Outcome, EvalError> {
        let slack = self.tol.acc_slack;
        Ok(match t {
            Term::Acc { t: tt, x, bound } => {
                let (tv, _) = self.eval_in(tt, old)?.as_num()?;
                let (bv, _) = self.eval_in(bound, old)?.as_num()?;
                let x = self.eval_in(x, old)?.as_mat()?.0;
                let be = self.barrier_at(&x)?;
                let r = barrier::acc(self.lp, &be, tv, bv, slack).map_err(|e| EvalError::Barrier(e.to_string()))?;
                Outcome {
                    holds: r.holds,
                    measured: r.lhs,
                }
            }
            Term::StrictlyFeasible { x } => {
                let x = self.eval_in(x, old)?.as_mat()?.0;
                let s = self.lp.slacks(&x).map_err(|e| EvalError::Type(e.to_string()))?;
                let min = s.data().iter().copied().fold(f64::INFINITY, f64::min);
                Outcome {
                    holds: min > self.tol.feas_margin,
                    measured: min,
                }
            }
            Term::Cmp { op, lhs, rhs } => {
                let l = self.eval_in(lhs, old)?;
                let r = self.eval_in(rhs, old)?;
                if let CmpOp::Eq = op {
                    let (lm, lmag) = l.as_mat()?;
                    let (rm, rmag) = r.as_mat()?;
                    if lm.shape() != rm.shape() {
                        return Err(EvalError::Type(format!(
                            "== between {:?} and {:?}",
                            lm.shape(),
                            rm.shape()
                        )));
                    }
                    let mut worst: f64 = 0.0;
                    let mut holds = true;
                    for i in 0..lm.data().len() {
                        let d = (lm.data()[i] - rm.data()[i]).abs();
                        let scale = 1.0 + lmag[i].max(rmag[i]);
                        holds &= d <= CONTRACT_EQ_REL * scale;
                        worst = worst.max(d);
                    }
                    let measured = if lm.shape() == (1, 1) { lm.data()[0] } else { worst };
                    Outcome { holds, measured }
                } else {
                    let (a, _) = l.as_num()?;
                    let (b, _) = r.as_num()?;
                    let holds = match op {
                        CmpOp::Lt => a < b + slack,
                        CmpOp::Le => a <= b + slack,
                        CmpOp::Ge => a >= b - slack,
                        CmpOp::Gt => a > b - slack,
                        CmpOp::Eq => unreachable!(),
                    };
                    Outcome { holds, measured: a }
                }
            }
            Term::And { args } => {
                let mut out = Outcome {
                    holds: true,
                    measured: f64::NAN,
                };
                for a in args {
                    let o = self.check_in(a, old)?;
                    if !o.holds {
                        return Ok(o);
                    }
                    out = o;
                }
                out
            }
            Term::Implies { lhs, rhs } => {
                let pre = self.check_in(lhs, old)?;
                if pre.holds {
                    self.check_in(rhs, old)?
                } else {
                    Outcome {
                        holds: true,
                        measured: f64::NAN,
                    }
                }
            }
            other => Outcome {
                holds: self.eval_in(other, old)?.as_bool()?,
                measured: f64::NAN,
            },
        })
    }

    /// Checks a clause: its term when evaluable, and its witness if any.
    pub fn check_clause(&self, c: &Clause) -> Result<Outcome, EvalError> {
        let mut result = None;
        if self.sol.is_some() || !c.term.mentions_sol() {
            result = Some(self.check(&c.term)?);
        }
        if let Some(w) = &c.witness {
            let o = self.check(w)?;
            if !o.holds || result.is_none() {
                result = Some(o);
            }
        }
        result.ok_or(EvalError::NeedsSol)
    }
}

// ---------------------------------------------------------------------------
// ACSL-style text

/// Renders a term in the annotation syntax used in the C comments.
pub fn acsl(t: &Term, k: &KernelProgram) -> String {
    let r = |t: &Term| acsl(t, k);
    match t {
        Term::Num { value } => format!("{value:?}"),
        Term::Const { name } => name.clone(),
        Term::Var { name } => match k.global(name) {
            Some(g) if g.len() == 1 => format!("{name}[0]"),
            Some(g) => format!("MatVar({name}, {}, {})", g.rows, g.cols),
            None => name.clone(),
        },
        Term::Elem { name, row, col } => {
            let cols = k
                .global(name)
                .map(|g| g.cols)
                .or_else(|| k.constant(name).map(|c| c.cols))
                .unwrap_or(1);
            format!("{name}[{}]", row * cols + col)
        }
        Term::Bound { name } => name.clone(),
        Term::LoopIndex => "l".into(),
        Term::Old { arg } => format!("\\old({})", r(arg)),
        Term::Add { lhs, rhs } => format!("({} + {})", r(lhs), r(rhs)),
        Term::Sub { lhs, rhs } => format!("({} - {})", r(lhs), r(rhs)),
        Term::Mul { lhs, rhs } => format!("{}*{}", r(lhs), r(rhs)),
        Term::Div { lhs, rhs } => format!("{}/{}", r(lhs), r(rhs)),
        Term::Neg { arg } => format!("-{}", r(arg)),
        Term::Sqrt { arg } => format!("\\sqrt({})", r(arg)),
        Term::MatMul { lhs, rhs } => format!("mat_mult({}, {})", r(lhs), r(rhs)),
        Term::MatAdd { lhs, rhs } => format!("mat_add({}, {})", r(lhs), r(rhs)),
        Term::MatScal { mat, scalar } => format!("mat_scal({}, {})", r(mat), r(scalar)),
        Term::Transpose { arg } => format!("transpose({})", r(arg)),
        Term::Dot { lhs, rhs } => format!("dot({}, {})", r(lhs), r(rhs)),
        Term::Hess { x } => format!("hess(A, b, {})", r(x)),
        Term::Grad { x } => format!("grad(A, b, {})", r(x)),
        Term::Norm { y, x } => format!("norm(A, b, {}, {})", r(y), r(x)),
        Term::Acc { t, x, bound } => format!("acc(A, b, c, {}, {}, {})", r(t), r(x), r(bound)),
        Term::Lower { k: idx } => format!("lower({})", r(idx)),
        Term::Sol => "sol(A, b, c)".into(),
        Term::StrictlyFeasible { x } => format!("mat_gt(b, mat_mult(A, {}))", r(x)),
        Term::Cmp { op, lhs, rhs } => format!("{} {} {}", r(lhs), op.symbol(), r(rhs)),
        Term::And { args } => args.iter().map(r).collect::<Vec<_>>().join(" && "),
        Term::Implies { lhs, rhs } => format!("{} ==> {}", r(lhs), r(rhs)),
    }
}

/// Annotation block placed before a function definition.
pub fn acsl_function_block(fc: &FunctionContract, k: &KernelProgram) -> String {
    let mut lines = Vec::new();
    for c in &fc.requires {
        lines.push(format!("requires {};", acsl(&c.term, k)));
    }
    for c in &fc.ensures {
        lines.push(format!("ensures {};", acsl(&c.term, k)));
    }
    if fc.assigns.is_empty() {
        lines.push("assigns \\nothing;".into());
    } else {
        let ranges: Vec<String> = fc
            .assigns
            .iter()
            .map(|a| {
                if a.to - a.from == 1 {
                    format!("{}[{}]", a.global, a.from)
                } else {
                    format!("*({}+({}..{}))", a.global, a.from, a.to - 1)
                }
            })
            .collect();
        lines.push(format!("assigns {};", ranges.join(", ")));
    }
    comment_block(&lines)
}

pub fn acsl_loop_block(lc: &LoopContract, k: &KernelProgram) -> String {
    let lines: Vec<String> = lc
        .invariants
        .iter()
        .map(|c| format!("loop invariant {};", acsl(&c.term, k)))
        .collect();
    comment_block(&lines)
}

pub fn acsl_lemma_block(l: &Lemma, k: &KernelProgram) -> String {
    let binders = l
        .binders
        .iter()
        .map(|b| {
            if b == "x" {
                format!("LMat {b}")
            } else {
                format!("real {b}")
            }
        })
        .collect::<Vec<_>>()
        .join(", ");
    comment_block(&[format!(
        "lemma {}: \\forall {binders}; {};",
        l.name,
        acsl(&l.statement, k)
    )])
}

fn comment_block(lines: &[String]) -> String {
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let lead = if i == 0 { "/*@ " } else { "  @ " };
        let _ = write!(out, "{lead}{line}");
        out.push('\n');
    }
    if out.is_empty() {
        out.push_str("/*@ */\n");
    } else {
        out.pop();
        out.push_str(" */\n");
    }
    out
}
