//! Reference interpreter for kernel programs.
//!
//! Names are resolved to indices once, then statements run against flat
//! buffers using the same slice kernels as the library solver. In checked
//! mode every `assert_contract` statement evaluates its clauses; `\old`
//! refers to a snapshot taken when the enclosing function was entered.

use std::cell::RefCell;
use std::collections::HashMap;

use thiserror::Error;

use super::contract::{BarrierCache, Clause, ContractSidecar, EvalEnv, EvalError, SidecarError, Value};
use super::ir::{ClauseKind, ContractTag, ElemRef, Expr, KernelError, KernelProgram, Slot, Stmt};
use crate::barrier;
use crate::ipm::{IterationSchedule, SolveCertificate, SolveStatus, StepRecord};
use crate::linalg::{self, Matrix};
use crate::lp::LpInstance;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("contract `{clause}` ({tag}) violated at iteration {k}: measured {measured:e}")]
    ContractViolation {
        tag: String,
        clause: String,
        k: usize,
        measured: f64,
    },
    #[error(transparent)]
    IllFormedKernel(#[from] KernelError),
    #[error("sidecar does not match kernel: {0}")]
    Sidecar(#[from] SidecarError),
    #[error("contract `{clause}` could not be evaluated: {error}")]
    Eval { clause: String, error: EvalError },
    #[error("numerical failure in `{function}`: {message}")]
    Numerical { function: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractViolation {
    pub tag: String,
    pub clause: String,
    pub k: usize,
    pub measured: f64,
}

pub struct CheckedOptions<'a> {
    pub sidecar: &'a ContractSidecar,
    /// LP optimum, when known, so clauses that mention it are checked
    /// directly and not only through their witness.
    pub sol: Option<f64>,
    /// Stop at the first violation; otherwise collect them all.
    pub abort_on_violation: bool,
    pub tol: Tolerances,
}

pub enum ExecMode<'a> {
    Unchecked,
    Checked(CheckedOptions<'a>),
}

impl<'a> ExecMode<'a> {
    pub fn checked(sidecar: &'a ContractSidecar) -> Self {
        ExecMode::Checked(CheckedOptions {
            sidecar,
            sol: None,
            abort_on_violation: true,
            tol: Tolerances::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRun {
    pub certificate: SolveCertificate,
    pub clauses_checked: usize,
    pub violations: Vec<ContractViolation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Arr {
    C(usize),
    G(usize),
}

type Cell = (Arr, usize);

enum RExpr {
    Lit(f64),
    Load(Cell),
    Add(Box<RExpr>, Box<RExpr>),
    Sub(Box<RExpr>, Box<RExpr>),
    Mul(Box<RExpr>, Box<RExpr>),
    Div(Box<RExpr>, Box<RExpr>),
    Neg(Box<RExpr>),
    Sqrt(Box<RExpr>),
}

enum RStmt {
    Assign {
        dst: (usize, usize),
        expr: RExpr,
    },
    MatMul {
        dst: usize,
        a: Arr,
        b: Arr,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    MatAdd {
        dst: usize,
        a: Arr,
        b: Arr,
    },
    Scale {
        dst: usize,
        src: Arr,
        s: Cell,
    },
    Chol {
        dst: usize,
        src: Arr,
        dim: usize,
    },
    Solve {
        dst: usize,
        factor: Arr,
        rhs: Arr,
        dim: usize,
    },
    Dot {
        dst: (usize, usize),
        a: Arr,
        b: Arr,
    },
    Sqrt {
        dst: (usize, usize),
        src: Cell,
    },
    Div {
        dst: (usize, usize),
        num: Cell,
        den: Cell,
    },
    Neg {
        dst: usize,
        src: Arr,
    },
    Call(usize),
    Assert(usize),
    Loop {
        count: usize,
        body: Vec<RStmt>,
    },
}

struct Resolver<'k> {
    slots: HashMap<&'k str, Slot>,
    fn_index: HashMap<&'k str, usize>,
    tags: Vec<ContractTag>,
}

impl<'k> Resolver<'k> {
    fn arr(&self, name: &str) -> Arr {
        match self.slots[name] {
            Slot::Const(i) => Arr::C(i),
            Slot::Global(i) => Arr::G(i),
        }
    }

    fn global(&self, name: &str) -> usize {
        match self.slots[name] {
            Slot::Global(i) => i,
            Slot::Const(_) => unreachable!("validated: writes go to globals"),
        }
    }

    fn cell(&self, e: &ElemRef) -> Cell {
        (self.arr(&e.array), e.index)
    }

    fn dst(&self, e: &ElemRef) -> (usize, usize) {
        (self.global(&e.array), e.index)
    }

    fn expr(&self, e: &Expr) -> RExpr {
        let b = |e: &Expr| Box::new(self.expr(e));
        match e {
            Expr::Lit { value } => RExpr::Lit(*value),
            Expr::Load { elem } => RExpr::Load(self.cell(elem)),
            Expr::Add { lhs, rhs } => RExpr::Add(b(lhs), b(rhs)),
            Expr::Sub { lhs, rhs } => RExpr::Sub(b(lhs), b(rhs)),
            Expr::Mul { lhs, rhs } => RExpr::Mul(b(lhs), b(rhs)),
            Expr::Div { lhs, rhs } => RExpr::Div(b(lhs), b(rhs)),
            Expr::Neg { arg } => RExpr::Neg(b(arg)),
            Expr::Sqrt { arg } => RExpr::Sqrt(b(arg)),
        }
    }

    fn body(&mut self, body: &[Stmt]) -> Vec<RStmt> {
        body.iter()
            .map(|s| match s {
                Stmt::ElemAssign { dst, expr } => RStmt::Assign {
                    dst: self.dst(dst),
                    expr: self.expr(expr),
                },
                Stmt::MatMulFixed {
                    dst,
                    a,
                    b,
                    rows,
                    inner,
                    cols,
                } => RStmt::MatMul {
                    dst: self.global(dst),
                    a: self.arr(a),
                    b: self.arr(b),
                    rows: *rows,
                    inner: *inner,
                    cols: *cols,
                },
                Stmt::MatAddFixed { dst, a, b, .. } => RStmt::MatAdd {
                    dst: self.global(dst),
                    a: self.arr(a),
                    b: self.arr(b),
                },
                Stmt::ScaleFixed { dst, src, scalar, .. } => RStmt::Scale {
                    dst: self.global(dst),
                    src: self.arr(src),
                    s: self.cell(scalar),
                },
                Stmt::CholFactorFixed { dst, src, dim } => RStmt::Chol {
                    dst: self.global(dst),
                    src: self.arr(src),
                    dim: *dim,
                },
                Stmt::CholSolveFixed { dst, factor, rhs, dim } => RStmt::Solve {
                    dst: self.global(dst),
                    factor: self.arr(factor),
                    rhs: self.arr(rhs),
                    dim: *dim,
                },
                Stmt::DotFixed { dst, a, b, .. } => RStmt::Dot {
                    dst: self.dst(dst),
                    a: self.arr(a),
                    b: self.arr(b),
                },
                Stmt::Sqrt { dst, src } => RStmt::Sqrt {
                    dst: self.dst(dst),
                    src: self.cell(src),
                },
                Stmt::Div { dst, num, den } => RStmt::Div {
                    dst: self.dst(dst),
                    num: self.cell(num),
                    den: self.cell(den),
                },
                Stmt::Neg { dst, src, .. } => RStmt::Neg {
                    dst: self.global(dst),
                    src: self.arr(src),
                },
                Stmt::Call { function } => RStmt::Call(self.fn_index[function.as_str()]),
                Stmt::AssertContract { tag } => {
                    let idx = match self.tags.iter().position(|t| t == tag) {
                        Some(i) => i,
                        None => {
                            self.tags.push(tag.clone());
                            self.tags.len() - 1
                        }
                    };
                    RStmt::Assert(idx)
                }
                Stmt::FixedLoop { count, body, .. } => RStmt::Loop {
                    count: *count,
                    body: self.body(body),
                },
            })
            .collect()
    }
}

struct Checker<'a> {
    sidecar: &'a ContractSidecar,
    sol: Option<f64>,
    abort: bool,
    tol: Tolerances,
    cache: RefCell<BarrierCache>,
    clauses_checked: usize,
    violations: Vec<ContractViolation>,
    records: Vec<StepRecord>,
    /// Violations seen during the current iteration.
    iteration_failures: usize,
}

struct Machine<'a> {
    k: &'a KernelProgram,
    slots: &'a HashMap<&'a str, Slot>,
    names: Vec<&'a str>,
    fns: Vec<Vec<RStmt>>,
    tags: Vec<ContractTag>,
    globals: Vec<Vec<f64>>,
    old: Vec<Vec<Vec<f64>>>,
    loop_index: Option<usize>,
    lp: LpInstance,
    schedule: IterationSchedule,
    x_global: usize,
    t_global: usize,
    dt_global: usize,
    checker: Option<Checker<'a>>,
}

fn read<'b>(k: &'b KernelProgram, globals: &'b [Vec<f64>], a: Arr) -> &'b [f64] {
    match a {
        Arr::C(i) => &k.constants[i].values,
        Arr::G(i) => &globals[i],
    }
}

impl<'a> Machine<'a> {
    fn cell(&self, (a, i): Cell) -> f64 {
        read(self.k, &self.globals, a)[i]
    }

    fn eval(&self, e: &RExpr) -> f64 {
        match e {
            RExpr::Lit(v) => *v,
            RExpr::Load(c) => self.cell(*c),
            RExpr::Add(a, b) => self.eval(a) + self.eval(b),
            RExpr::Sub(a, b) => self.eval(a) - self.eval(b),
            RExpr::Mul(a, b) => self.eval(a) * self.eval(b),
            RExpr::Div(a, b) => self.eval(a) / self.eval(b),
            RExpr::Neg(a) => -self.eval(a),
            RExpr::Sqrt(a) => self.eval(a).max(0.0).sqrt(),
        }
    }

    /// Input slice for an element-wise statement whose output is `dst`;
    /// an aliased input is read from a copy of the output buffer.
    fn input(&self, out: &[f64], dst: usize, a: Arr) -> Vec<f64> {
        if a == Arr::G(dst) {
            out.to_vec()
        } else {
            read(self.k, &self.globals, a).to_vec()
        }
    }

    fn exec_body(&mut self, fi: usize, body: &[RStmt]) -> Result<(), InterpError> {
        for s in body {
            match s {
                RStmt::Assign { dst, expr } => {
                    let v = self.eval(expr);
                    self.globals[dst.0][dst.1] = v;
                }
                RStmt::MatMul {
                    dst,
                    a,
                    b,
                    rows,
                    inner,
                    cols,
                } => {
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    linalg::matmul_into(
                        read(self.k, &self.globals, *a),
                        read(self.k, &self.globals, *b),
                        *rows,
                        *inner,
                        *cols,
                        &mut out,
                    );
                    self.globals[*dst] = out;
                }
                RStmt::MatAdd { dst, a, b } => {
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    let (x, y) = (self.input(&out, *dst, *a), self.input(&out, *dst, *b));
                    for (o, (p, q)) in out.iter_mut().zip(x.iter().zip(&y)) {
                        *o = p + q;
                    }
                    self.globals[*dst] = out;
                }
                RStmt::Scale { dst, src, s } => {
                    let sv = self.cell(*s);
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    let x = self.input(&out, *dst, *src);
                    for (o, v) in out.iter_mut().zip(&x) {
                        *o = sv * v;
                    }
                    self.globals[*dst] = out;
                }
                RStmt::Neg { dst, src } => {
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    let x = self.input(&out, *dst, *src);
                    for (o, v) in out.iter_mut().zip(&x) {
                        *o = -v;
                    }
                    self.globals[*dst] = out;
                }
                RStmt::Chol { dst, src, dim } => {
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    let r = linalg::cholesky_into(read(self.k, &self.globals, *src), *dim, &mut out);
                    self.globals[*dst] = out;
                    r.map_err(|e| InterpError::Numerical {
                        function: self.names[fi].into(),
                        message: e.to_string(),
                    })?;
                }
                RStmt::Solve { dst, factor, rhs, dim } => {
                    let mut out = std::mem::take(&mut self.globals[*dst]);
                    linalg::cholesky_solve_into(
                        read(self.k, &self.globals, *factor),
                        *dim,
                        read(self.k, &self.globals, *rhs),
                        &mut out,
                    );
                    self.globals[*dst] = out;
                }
                RStmt::Dot { dst, a, b } => {
                    let v = linalg::dot_slices(read(self.k, &self.globals, *a), read(self.k, &self.globals, *b));
                    self.globals[dst.0][dst.1] = v;
                }
                RStmt::Sqrt { dst, src } => {
                    let v = self.cell(*src).max(0.0).sqrt();
                    self.globals[dst.0][dst.1] = v;
                }
                RStmt::Div { dst, num, den } => {
                    let v = self.cell(*num) / self.cell(*den);
                    self.globals[dst.0][dst.1] = v;
                }
                RStmt::Call(callee) => self.call(*callee)?,
                RStmt::Assert(tag) => self.assert(*tag)?,
                RStmt::Loop { count, body } => {
                    for l in 0..*count {
                        self.loop_index = Some(l);
                        let before = self.begin_iteration();
                        self.exec_body(fi, body)?;
                        self.end_iteration(l + 1, before)?;
                    }
                    self.loop_index = Some(*count);
                }
            }
        }
        Ok(())
    }

    fn call(&mut self, fi: usize) -> Result<(), InterpError> {
        let checked = self.checker.is_some();
        if checked {
            self.old.push(self.globals.clone());
        }
        let body = std::mem::take(&mut self.fns[fi]);
        let r = self.exec_body(fi, &body);
        self.fns[fi] = body;
        if checked {
            self.old.pop();
        }
        r
    }

    fn iteration(&self) -> usize {
        match self.loop_index {
            Some(l) if l < self.k.sizes.trip_count => l + 1,
            Some(l) => l,
            None => 0,
        }
    }

    fn assert(&mut self, tag_idx: usize) -> Result<(), InterpError> {
        let Some(checker) = self.checker.as_ref() else {
            return Ok(());
        };
        let tag = &self.tags[tag_idx];
        let sidecar = checker.sidecar;
        let mut groups: Vec<(&Clause, Vec<(String, Value)>)> = Vec::new();
        match tag.kind {
            ClauseKind::Requires | ClauseKind::Ensures => {
                if let Some(fc) = sidecar.function(&tag.function) {
                    let list = if tag.kind == ClauseKind::Requires {
                        &fc.requires
                    } else {
                        &fc.ensures
                    };
                    groups.extend(list.iter().map(|c| (c, Vec::new())));
                }
            }
            ClauseKind::LoopInvariant => {
                groups.extend(sidecar.loop_contract.invariants.iter().map(|c| (c, Vec::new())));
            }
            ClauseKind::Lemmas => {}
        }
        let lemma_clauses: Vec<(Clause, Vec<(String, Value)>)> = if tag.kind == ClauseKind::Lemmas {
            let mut out = Vec::new();
            for lemma in sidecar.lemmas_at(&tag.function) {
                let env = self.env(&[]);
                let mut binders = Vec::new();
                for b in &lemma.instance.bindings {
                    let v = env.eval(&b.value).map_err(|error| InterpError::Eval {
                        clause: lemma.name.clone(),
                        error,
                    })?;
                    binders.push((b.binder.clone(), v));
                }
                out.push((
                    Clause {
                        name: lemma.name.clone(),
                        term: lemma.statement.clone(),
                        witness: None,
                    },
                    binders,
                ));
            }
            out
        } else {
            Vec::new()
        };
        let all = groups.into_iter().map(|(c, b)| (c.clone(), b)).chain(lemma_clauses);

        let k = self.iteration();
        let tag_text = tag.to_string();
        let mut failures = Vec::new();
        let mut checked = 0;
        for (clause, binders) in all {
            let env = self.env(&binders);
            let outcome = env.check_clause(&clause).map_err(|error| InterpError::Eval {
                clause: clause.name.clone(),
                error,
            })?;
            checked += 1;
            if !outcome.holds {
                failures.push(ContractViolation {
                    tag: tag_text.clone(),
                    clause: clause.name.clone(),
                    k,
                    measured: outcome.measured,
                });
            }
        }
        let checker = self.checker.as_mut().expect("checked mode");
        checker.clauses_checked += checked;
        if let Some(v) = failures.first() {
            if checker.abort {
                return Err(InterpError::ContractViolation {
                    tag: v.tag.clone(),
                    clause: v.clause.clone(),
                    k: v.k,
                    measured: v.measured,
                });
            }
            checker.iteration_failures += failures.len();
            checker.violations.extend(failures);
        }
        Ok(())
    }

    fn env<'e>(&'e self, binders: &'e [(String, Value)]) -> EvalEnv<'e> {
        let checker = self.checker.as_ref().expect("checked mode");
        EvalEnv {
            kernel: self.k,
            slots: self.slots,
            globals: &self.globals,
            old: self.old.last().map(|v| v.as_slice()),
            binders,
            loop_index: self.loop_index,
            lp: &self.lp,
            schedule: &self.schedule,
            tol: &checker.tol,
            sol: checker.sol,
            cache: &checker.cache,
        }
    }

    fn begin_iteration(&mut self) -> Option<Vec<f64>> {
        let checker = self.checker.as_mut()?;
        checker.cache.borrow_mut().clear();
        checker.iteration_failures = 0;
        Some(self.globals[self.x_global].clone())
    }

    /// Monitor record for the iteration that just finished.
    fn end_iteration(&mut self, k: usize, x_before: Option<Vec<f64>>) -> Result<(), InterpError> {
        let (Some(x_before), Some(checker)) = (x_before, self.checker.as_ref()) else {
            return Ok(());
        };
        let t = self.globals[self.t_global][0];
        let x = self.globals[self.x_global].clone();
        let n = x.len();
        let tol = checker.tol;
        let num = |message: String| InterpError::Numerical {
            function: "pathfollowing".into(),
            message,
        };
        let col = |v: Vec<f64>| Matrix::new(n, 1, v).map_err(|e| num(e.to_string()));
        let before =
            barrier::eval_barrier_with(&self.lp, &col(x_before)?, tol.feas_margin).map_err(|e| num(e.to_string()))?;
        let acc_after_t = barrier::acc(&self.lp, &before, t, 0.0, 0.0)
            .map_err(|e| num(e.to_string()))?
            .lhs;
        let x = col(x)?;
        let slacks = self.lp.slacks(&x).map_err(|e| num(e.to_string()))?;
        let min_slack = slacks.data().iter().copied().fold(f64::INFINITY, f64::min);
        let acc_after_x = match barrier::eval_barrier_with(&self.lp, &x, tol.feas_margin) {
            Ok(be) => {
                barrier::acc(&self.lp, &be, t, 0.0, 0.0)
                    .map_err(|e| num(e.to_string()))?
                    .lhs
            }
            Err(_) => f64::NAN,
        };
        let record = StepRecord {
            k,
            t,
            dt: self.globals[self.dt_global][0],
            acc_after_t,
            acc_after_x,
            min_slack,
            lower_k: self.schedule.lower(k),
            pass: checker.iteration_failures == 0,
            violations: Vec::new(),
        };
        self.checker.as_mut().expect("checked mode").records.push(record);
        Ok(())
    }
}

fn scalar(k: &KernelProgram, name: &str) -> Result<f64, KernelError> {
    k.scalar(name)
        .ok_or_else(|| KernelError::IllFormed(format!("missing scalar constant `{name}`")))
}

fn matrix(k: &KernelProgram, name: &str) -> Result<Matrix, KernelError> {
    let c = k
        .constant(name)
        .ok_or_else(|| KernelError::IllFormed(format!("missing constant `{name}`")))?;
    Matrix::new(c.rows, c.cols, c.values.clone()).map_err(|e| KernelError::IllFormed(e.to_string()))
}

fn global_index(k: &KernelProgram, name: &str, len: usize) -> Result<usize, KernelError> {
    k.globals
        .iter()
        .position(|g| g.name == name && g.len() == len)
        .ok_or_else(|| KernelError::IllFormed(format!("missing global `{name}` of length {len}")))
}

/// Runs the kernel from its entry function.
pub fn interpret(k: &KernelProgram, mode: ExecMode<'_>) -> Result<KernelRun, InterpError> {
    k.validate()?;
    let lp = LpInstance::new(matrix(k, "A")?, matrix(k, "b")?, matrix(k, "c")?, scalar(k, "EPSILON")?)
        .map_err(|e| KernelError::IllFormed(e.to_string()))?;
    let schedule = IterationSchedule {
        t_init: scalar(k, "T_INIT")?,
        ratio: scalar(k, "RATIO")?,
        t_stop: scalar(k, "T_STOP")?,
        trip_count: k.sizes.trip_count,
        nu: scalar(k, "NU")?,
        gap_constant: scalar(k, "GAP_CONSTANT")?,
    };
    if lp.n() != k.sizes.n || lp.m() != k.sizes.m {
        return Err(KernelError::IllFormed("sizes disagree with the baked constants".into()).into());
    }
    let n = lp.n();
    let x_global = global_index(k, super::specialize::X, n)?;
    let t_global = global_index(k, super::specialize::T, 1)?;
    let dt_global = global_index(k, super::specialize::DT, 1)?;

    let checker = match mode {
        ExecMode::Unchecked => None,
        ExecMode::Checked(opts) => {
            opts.sidecar.validate(k)?;
            Some(Checker {
                sidecar: opts.sidecar,
                sol: opts.sol,
                abort: opts.abort_on_violation,
                tol: opts.tol,
                cache: RefCell::new(BarrierCache::default()),
                clauses_checked: 0,
                violations: Vec::new(),
                records: Vec::new(),
                iteration_failures: 0,
            })
        }
    };

    let slots = k.slots();
    let mut resolver = Resolver {
        slots: slots.clone(),
        fn_index: k
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect(),
        tags: Vec::new(),
    };
    let fns: Vec<Vec<RStmt>> = k.functions.iter().map(|f| resolver.body(&f.body)).collect();
    let entry = resolver.fn_index[k.entry.as_str()];
    let globals: Vec<Vec<f64>> = k
        .globals
        .iter()
        .map(|g| g.init.clone().unwrap_or_else(|| vec![0.0; g.len()]))
        .collect();
    let x_center = Matrix::new(n, 1, globals[x_global].clone()).map_err(|e| KernelError::IllFormed(e.to_string()))?;

    let mut machine = Machine {
        k,
        slots: &slots,
        names: k.functions.iter().map(|f| f.name.as_str()).collect(),
        fns,
        tags: resolver.tags,
        globals,
        old: Vec::new(),
        loop_index: None,
        lp,
        schedule,
        x_global,
        t_global,
        dt_global,
        checker,
    };
    machine.call(entry)?;

    let x_final = Matrix::new(n, 1, machine.globals[x_global].clone()).map_err(|e| InterpError::Numerical {
        function: k.entry.clone(),
        message: e.to_string(),
    })?;
    let t_final = machine.globals[t_global][0];
    let objective = machine.lp.objective(&x_final).map_err(|e| InterpError::Numerical {
        function: k.entry.clone(),
        message: e.to_string(),
    })?;
    let (clauses_checked, violations, monitor) = match machine.checker {
        Some(c) => (c.clauses_checked, c.violations, c.records),
        None => (0, Vec::new(), Vec::new()),
    };
    Ok(KernelRun {
        certificate: SolveCertificate {
            status: SolveStatus::Success,
            x_final,
            objective,
            t_final,
            gap_bound: schedule.gap_bound(t_final),
            iterations: k.sizes.trip_count,
            centering_steps: 0,
            x_center,
            schedule: Some(schedule),
            beta: scalar(k, "BETA")?,
            gamma: scalar(k, "GAMMA")?,
            epsilon: machine.lp.epsilon(),
            monitor,
        },
        clauses_checked,
        violations,
    })
}
