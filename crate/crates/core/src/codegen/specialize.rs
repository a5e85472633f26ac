//! Builds the kernel and its contracts for one LP instance.
//!
//! Call tree:
//!
//! ```text
//! compute
//! `-- pathfollowing            (the fixed loop)
//!     |-- update_pre           slacks, gradient, Hessian
//!     |   `-- cholesky
//!     |-- update_t
//!     |   `-- compute_dt
//!     `-- update_x
//!         |-- compute_dx
//!         `-- set_dX
//! ```
//!
//! The arithmetic reproduces the operation order of the library solver, so a
//! kernel run and a library run from the same center agree bit for bit.

use super::contract::{
    AssignsRange, Clause, CmpOp, ContractSidecar, FunctionContract, Lemma, LemmaBinding, LemmaInstance, LoopContract,
    Term, SIDECAR_SCHEMA_VERSION,
};
use super::ir::{
    ClauseKind, ConstDecl, ContractTag, ElemRef, Expr, Function, GlobalDecl, KernelProgram, Sizes, Stmt,
    KERNEL_SCHEMA_VERSION,
};
use crate::ipm::{IpmConfig, IterationSchedule};
use crate::linalg::Matrix;
use crate::lp::LpInstance;

pub const DEFAULT_ELEM_SPLIT_THRESHOLD: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecializeOptions {
    /// Matrix statements with more output elements than this become calls
    /// to one `set_*` function per element.
    pub elem_split_threshold: usize,
}

impl Default for SpecializeOptions {
    fn default() -> Self {
        SpecializeOptions {
            elem_split_threshold: DEFAULT_ELEM_SPLIT_THRESHOLD,
        }
    }
}

pub const X: &str = "pathfollowing_X";
pub const T: &str = "pathfollowing_t";
const AX: &str = "update_pre_ax";
const NEG_AX: &str = "update_pre_negax";
const SLACK: &str = "update_pre_slack";
const INV: &str = "update_pre_inv";
const WEIGHT: &str = "update_pre_weight";
const GRAD: &str = "update_pre_grad";
const HESS: &str = "update_pre_hess";
const L: &str = "cholesky_L";
const DT_SOL: &str = "compute_dt_cholesky";
const DT_DOT: &str = "compute_dt_dot";
const DT_NORM: &str = "compute_dt_norm";
pub const DT: &str = "compute_dt_dt";
const TC: &str = "compute_dx_tc";
const RHS: &str = "compute_dx_rhs";
const DX_SOL: &str = "compute_dx_cholesky";
const DX: &str = "update_x_dX";

fn global(name: &str, owner: &str, rows: usize, cols: usize, init: Option<Vec<f64>>) -> GlobalDecl {
    GlobalDecl {
        name: name.into(),
        owner: owner.into(),
        rows,
        cols,
        init,
    }
}

fn constant(name: &str, rows: usize, cols: usize, values: Vec<f64>) -> ConstDecl {
    ConstDecl {
        name: name.into(),
        rows,
        cols,
        values,
    }
}

fn scalar(name: &str, v: f64) -> ConstDecl {
    constant(name, 1, 1, vec![v])
}

fn e0(name: &str) -> ElemRef {
    ElemRef::new(name, 0)
}

fn tag(function: &str, kind: ClauseKind) -> Stmt {
    Stmt::AssertContract {
        tag: ContractTag {
            function: function.into(),
            kind,
        },
    }
}

fn call(function: &str) -> Stmt {
    Stmt::Call {
        function: function.into(),
    }
}

fn clause(name: &str, term: Term) -> Clause {
    Clause {
        name: name.into(),
        term,
        witness: None,
    }
}

pub fn specialize(
    p: &LpInstance,
    cfg: &IpmConfig,
    schedule: &IterationSchedule,
    x_ac: &Matrix,
    opts: SpecializeOptions,
) -> (KernelProgram, ContractSidecar) {
    let (n, m) = (p.n(), p.m());
    let a = p.a();
    let mut at = Vec::with_capacity(n * m);
    for j in 0..n {
        for i in 0..m {
            at.push(a.get(i, j));
        }
    }
    let mut aat = Vec::with_capacity(n * n * m);
    for j in 0..n {
        for k in 0..n {
            for i in 0..m {
                aat.push(a.get(i, j) * a.get(i, k));
            }
        }
    }
    let constants = vec![
        constant("A", m, n, a.data().to_vec()),
        constant("b", m, 1, p.b().data().to_vec()),
        constant("c", n, 1, p.c().data().to_vec()),
        constant("AT", n, m, at),
        constant("AAT", n * n, m, aat),
        scalar("BETA", cfg.beta),
        scalar("GAMMA", cfg.gamma),
        scalar("EPSILON", cfg.epsilon),
        scalar("NU", schedule.nu),
        scalar("T_INIT", schedule.t_init),
        scalar("RATIO", schedule.ratio),
        scalar("T_STOP", schedule.t_stop),
        scalar("GAP_CONSTANT", schedule.gap_constant),
    ];
    let globals = vec![
        global(X, "pathfollowing", n, 1, Some(x_ac.data().to_vec())),
        global(T, "pathfollowing", 1, 1, Some(vec![0.0])),
        global(AX, "update_pre", m, 1, None),
        global(NEG_AX, "update_pre", m, 1, None),
        global(SLACK, "update_pre", m, 1, None),
        global(INV, "update_pre", m, 1, None),
        global(WEIGHT, "update_pre", m, 1, None),
        global(GRAD, "update_pre", n, 1, None),
        global(HESS, "update_pre", n, n, None),
        global(L, "cholesky", n, n, None),
        global(DT_SOL, "compute_dt", n, 1, None),
        global(DT_DOT, "compute_dt", 1, 1, None),
        global(DT_NORM, "compute_dt", 1, 1, None),
        global(DT, "compute_dt", 1, 1, None),
        global(TC, "compute_dx", n, 1, None),
        global(RHS, "compute_dx", n, 1, None),
        global(DX_SOL, "compute_dx", n, 1, None),
        global(DX, "update_x", n, 1, None),
    ];

    let mut update_pre = vec![
        tag("update_pre", ClauseKind::Requires),
        Stmt::MatMulFixed {
            dst: AX.into(),
            a: "A".into(),
            b: X.into(),
            rows: m,
            inner: n,
            cols: 1,
        },
        Stmt::Neg {
            dst: NEG_AX.into(),
            src: AX.into(),
            len: m,
        },
        Stmt::MatAddFixed {
            dst: SLACK.into(),
            a: "b".into(),
            b: NEG_AX.into(),
            len: m,
        },
    ];
    for i in 0..m {
        update_pre.push(Stmt::ElemAssign {
            dst: ElemRef::new(INV, i),
            expr: Expr::div(Expr::lit(1.0), Expr::load(SLACK, i)),
        });
    }
    for i in 0..m {
        update_pre.push(Stmt::ElemAssign {
            dst: ElemRef::new(WEIGHT, i),
            expr: Expr::mul(Expr::load(INV, i), Expr::load(INV, i)),
        });
    }
    update_pre.extend([
        Stmt::MatMulFixed {
            dst: GRAD.into(),
            a: "AT".into(),
            b: INV.into(),
            rows: n,
            inner: m,
            cols: 1,
        },
        Stmt::MatMulFixed {
            dst: HESS.into(),
            a: "AAT".into(),
            b: WEIGHT.into(),
            rows: n * n,
            inner: m,
            cols: 1,
        },
        call("cholesky"),
        tag("update_pre", ClauseKind::Ensures),
    ]);

    let functions = vec![
        Function {
            name: "compute".into(),
            body: vec![
                tag("compute", ClauseKind::Requires),
                call("pathfollowing"),
                tag("compute", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "pathfollowing".into(),
            body: vec![
                tag("pathfollowing", ClauseKind::Requires),
                Stmt::FixedLoop {
                    count: schedule.trip_count,
                    counter: "l".into(),
                    body: vec![
                        tag("pathfollowing", ClauseKind::LoopInvariant),
                        call("update_pre"),
                        call("update_t"),
                        call("update_x"),
                    ],
                },
                tag("pathfollowing", ClauseKind::LoopInvariant),
                tag("pathfollowing", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "update_pre".into(),
            body: update_pre,
        },
        Function {
            name: "cholesky".into(),
            body: vec![
                Stmt::CholFactorFixed {
                    dst: L.into(),
                    src: HESS.into(),
                    dim: n,
                },
                tag("cholesky", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "update_t".into(),
            body: vec![
                tag("update_t", ClauseKind::Requires),
                call("compute_dt"),
                Stmt::ElemAssign {
                    dst: e0(T),
                    expr: Expr::add(Expr::load(T, 0), Expr::load(DT, 0)),
                },
                tag("update_t", ClauseKind::Lemmas),
                tag("update_t", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "compute_dt".into(),
            body: vec![
                Stmt::CholSolveFixed {
                    dst: DT_SOL.into(),
                    factor: L.into(),
                    rhs: "c".into(),
                    dim: n,
                },
                Stmt::DotFixed {
                    dst: e0(DT_DOT),
                    a: "c".into(),
                    b: DT_SOL.into(),
                    len: n,
                },
                Stmt::Sqrt {
                    dst: e0(DT_NORM),
                    src: e0(DT_DOT),
                },
                Stmt::Div {
                    dst: e0(DT),
                    num: e0("GAMMA"),
                    den: e0(DT_NORM),
                },
                tag("compute_dt", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "update_x".into(),
            body: vec![
                tag("update_x", ClauseKind::Requires),
                call("compute_dx"),
                call("set_dX"),
                Stmt::MatAddFixed {
                    dst: X.into(),
                    a: X.into(),
                    b: DX.into(),
                    len: n,
                },
                tag("update_x", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "compute_dx".into(),
            body: vec![
                Stmt::ScaleFixed {
                    dst: TC.into(),
                    src: "c".into(),
                    scalar: e0(T),
                    len: n,
                },
                Stmt::MatAddFixed {
                    dst: RHS.into(),
                    a: TC.into(),
                    b: GRAD.into(),
                    len: n,
                },
                Stmt::CholSolveFixed {
                    dst: DX_SOL.into(),
                    factor: L.into(),
                    rhs: RHS.into(),
                    dim: n,
                },
                tag("compute_dx", ClauseKind::Ensures),
            ],
        },
        Function {
            name: "set_dX".into(),
            body: vec![
                Stmt::Neg {
                    dst: DX.into(),
                    src: DX_SOL.into(),
                    len: n,
                },
                tag("set_dX", ClauseKind::Ensures),
            ],
        },
    ];

    let mut kernel = KernelProgram {
        version: KERNEL_SCHEMA_VERSION,
        sizes: Sizes {
            n,
            m,
            trip_count: schedule.trip_count,
        },
        constants,
        globals,
        functions,
        entry: "compute".into(),
    };
    let element_fns = split_elements(&mut kernel, opts.elem_split_threshold);
    let sidecar = contracts(&kernel, schedule, &element_fns);
    (kernel, sidecar)
}

/// An element function produced by splitting: its name, target and body.
struct ElementFn {
    name: String,
    dst: ElemRef,
    expr: Expr,
}

/// Expression for element `idx` of a matrix statement, in the same
/// operation order as the whole-matrix kernel.
fn element_expr(stmt: &Stmt, idx: usize) -> Option<Expr> {
    Some(match stmt {
        Stmt::MatMulFixed { a, b, inner, cols, .. } => {
            let (r, c) = (idx / cols, idx % cols);
            let mut e = Expr::lit(0.0);
            for i in 0..*inner {
                e = Expr::add(e, Expr::mul(Expr::load(a, r * inner + i), Expr::load(b, i * cols + c)));
            }
            e
        }
        Stmt::MatAddFixed { a, b, .. } => Expr::add(Expr::load(a, idx), Expr::load(b, idx)),
        Stmt::ScaleFixed { src, scalar, .. } => Expr::mul(Expr::Load { elem: scalar.clone() }, Expr::load(src, idx)),
        Stmt::Neg { src, .. } => Expr::neg(Expr::load(src, idx)),
        _ => return None,
    })
}

fn split_elements(k: &mut KernelProgram, threshold: usize) -> Vec<ElementFn> {
    let mut made = Vec::new();
    let shapes: Vec<(String, usize, usize)> = k.globals.iter().map(|g| (g.name.clone(), g.rows, g.cols)).collect();
    let shape = |name: &str| shapes.iter().find(|s| s.0 == name).map(|s| (s.1, s.2)).unwrap();
    for f in &mut k.functions {
        let mut body = Vec::with_capacity(f.body.len());
        for stmt in f.body.drain(..) {
            let target = match &stmt {
                Stmt::MatMulFixed { dst, rows, cols, .. } => Some((dst.clone(), rows * cols)),
                Stmt::MatAddFixed { dst, len, .. } | Stmt::ScaleFixed { dst, len, .. } | Stmt::Neg { dst, len, .. } => {
                    Some((dst.clone(), *len))
                }
                _ => None,
            };
            match target {
                Some((dst, len)) if len > threshold => {
                    let (_, gcols) = shape(&dst);
                    for idx in 0..len {
                        let name = format!("set_{dst}_{}_{}", idx / gcols, idx % gcols);
                        body.push(call(&name));
                        made.push(ElementFn {
                            name,
                            dst: ElemRef::new(dst.as_str(), idx),
                            expr: element_expr(&stmt, idx).expect("splittable statement"),
                        });
                    }
                }
                _ => body.push(stmt),
            }
        }
        f.body = body;
    }
    for e in &made {
        k.functions.push(Function {
            name: e.name.clone(),
            body: vec![
                Stmt::ElemAssign {
                    dst: e.dst.clone(),
                    expr: e.expr.clone(),
                },
                tag(&e.name, ClauseKind::Ensures),
            ],
        });
    }
    made
}

fn expr_term(e: &Expr, k: &KernelProgram) -> Term {
    let r = |e: &Expr| expr_term(e, k);
    match e {
        Expr::Lit { value } => Term::num(*value),
        Expr::Load { elem } => {
            let cols = k
                .global(&elem.array)
                .map(|g| g.cols)
                .or_else(|| k.constant(&elem.array).map(|c| c.cols))
                .unwrap_or(1);
            Term::elem(&elem.array, elem.index / cols, elem.index % cols)
        }
        Expr::Add { lhs, rhs } => Term::add(r(lhs), r(rhs)),
        Expr::Sub { lhs, rhs } => Term::sub(r(lhs), r(rhs)),
        Expr::Mul { lhs, rhs } => Term::mul(r(lhs), r(rhs)),
        Expr::Div { lhs, rhs } => Term::div(r(lhs), r(rhs)),
        Expr::Neg { arg } => Term::neg(r(arg)),
        Expr::Sqrt { arg } => Term::sqrt(r(arg)),
    }
}

fn full_assigns(k: &KernelProgram, function: &str) -> Vec<AssignsRange> {
    k.assigned_globals(function)
        .into_iter()
        .map(|g| {
            let len = k.global(&g).map_or(0, |d| d.len());
            AssignsRange {
                global: g,
                from: 0,
                to: len,
            }
        })
        .collect()
}

/// `1 + GAMMA / (1 + BETA)` for a unit barrier parameter, otherwise
/// `1 + GAMMA / (BETA + sqrt(NU))`.
fn ratio_term(schedule: &IterationSchedule) -> Term {
    let denom = if schedule.nu == 1.0 {
        Term::add(Term::num(1.0), Term::cst("BETA"))
    } else {
        Term::add(Term::cst("BETA"), Term::sqrt(Term::cst("NU")))
    };
    Term::add(Term::num(1.0), Term::div(Term::cst("GAMMA"), denom))
}

fn contracts(k: &KernelProgram, schedule: &IterationSchedule, element_fns: &[ElementFn]) -> ContractSidecar {
    let x = || Term::var(X);
    let t = || Term::var(T);
    let beta = || Term::cst("BETA");
    let gamma = || Term::cst("GAMMA");
    let c = || Term::cst("c");
    let feasible = |name: &str| clause(name, Term::feasible(x()));
    let fc = |name: &str, requires: Vec<Clause>, ensures: Vec<Clause>| FunctionContract {
        name: name.into(),
        requires,
        ensures,
        assigns: full_assigns(k, name),
    };

    let optimality = Clause {
        name: "pathfollowing_ensures_optimal".into(),
        term: Term::cmp(
            Term::sub(Term::dot(x(), c()), Term::Sol),
            CmpOp::Lt,
            Term::cst("EPSILON"),
        ),
        witness: Some(Term::cmp(
            Term::div(Term::cst("GAP_CONSTANT"), t()),
            CmpOp::Le,
            Term::cst("EPSILON"),
        )),
    };

    let mut functions = vec![
        fc(
            "compute",
            vec![feasible("compute_requires_feasible")],
            vec![feasible("compute_ensures_feasible")],
        ),
        fc(
            "pathfollowing",
            vec![
                feasible("pathfollowing_requires_feasible"),
                clause("pathfollowing_requires_acc", Term::acc(Term::num(0.0), x(), beta())),
            ],
            vec![feasible("pathfollowing_ensures_feasible"), optimality],
        ),
        fc(
            "update_pre",
            vec![feasible("update_pre_requires_feasible")],
            vec![
                clause(
                    "update_pre_ensures_hess",
                    Term::cmp(Term::var(HESS), CmpOp::Eq, Term::hess(x())),
                ),
                clause(
                    "update_pre_ensures_grad",
                    Term::cmp(Term::var(GRAD), CmpOp::Eq, Term::grad(x())),
                ),
            ],
        ),
        fc(
            "cholesky",
            vec![],
            vec![clause(
                "cholesky_ensures_factor",
                Term::cmp(
                    Term::mat_mul(Term::var(L), Term::transpose(Term::var(L))),
                    CmpOp::Eq,
                    Term::var(HESS),
                ),
            )],
        ),
        fc(
            "update_t",
            vec![
                clause(
                    "update_t_requires_hess",
                    Term::cmp(Term::var(HESS), CmpOp::Eq, Term::hess(x())),
                ),
                clause("update_t_requires_acc", Term::acc(t(), x(), beta())),
            ],
            vec![
                clause("update_t_ensures_acc", Term::acc(t(), x(), Term::add(beta(), gamma()))),
                clause(
                    "update_t_ensures_progress",
                    Term::cmp(t(), CmpOp::Gt, Term::mul(Term::old(t()), ratio_term(schedule))),
                ),
            ],
        ),
        fc(
            "compute_dt",
            vec![],
            vec![clause(
                "compute_dt_ensures_dt",
                Term::cmp(
                    Term::elem(DT, 0, 0),
                    CmpOp::Eq,
                    Term::div(gamma(), Term::norm(c(), x())),
                ),
            )],
        ),
        fc(
            "update_x",
            vec![clause(
                "update_x_requires_acc",
                Term::acc(t(), x(), Term::add(beta(), gamma())),
            )],
            vec![
                clause("update_x_ensures_acc", Term::acc(t(), x(), beta())),
                feasible("update_x_ensures_feasible"),
            ],
        ),
        fc(
            "compute_dx",
            vec![],
            vec![clause(
                "compute_dx_ensures_newton",
                Term::cmp(
                    Term::mat_mul(Term::var(HESS), Term::var(DX_SOL)),
                    CmpOp::Eq,
                    Term::mat_add(Term::mat_scal(c(), t()), Term::var(GRAD)),
                ),
            )],
        ),
        fc(
            "set_dX",
            vec![],
            vec![clause(
                "set_dX_ensures",
                Term::cmp(
                    Term::var(DX),
                    CmpOp::Eq,
                    Term::old(Term::mat_scal(Term::var(DX_SOL), Term::num(-1.0))),
                ),
            )],
        ),
    ];
    for e in element_fns {
        let g = k.global(&e.dst.array).expect("split target is a global");
        functions.push(FunctionContract {
            name: e.name.clone(),
            requires: vec![],
            ensures: vec![clause(
                &format!("{}_ensures", e.name),
                Term::cmp(
                    Term::elem(&e.dst.array, e.dst.index / g.cols, e.dst.index % g.cols),
                    CmpOp::Eq,
                    Term::old(expr_term(&e.expr, k)),
                ),
            )],
            assigns: vec![AssignsRange {
                global: e.dst.array.clone(),
                from: e.dst.index,
                to: e.dst.index + 1,
            }],
        });
    }

    let loop_contract = LoopContract {
        function: "pathfollowing".into(),
        counter: "l".into(),
        invariants: vec![
            feasible("loop_invariant_feasible"),
            clause("loop_invariant_acc", Term::acc(t(), x(), beta())),
            clause(
                "loop_invariant_lower",
                Term::cmp(t(), CmpOp::Ge, Term::lower(Term::LoopIndex)),
            ),
        ],
    };

    ContractSidecar {
        version: SIDECAR_SCHEMA_VERSION,
        functions,
        loop_contract,
        lemmas: lemma_chain(),
    }
}

/// `update_t_ensures1` and the four steps used to establish it. Binders are
/// `x`, `t` and `dt`; the instance binds them to the point, the path
/// parameter before the update, and the computed increment.
pub fn lemma_chain() -> Vec<Lemma> {
    let x = || Term::bound("x");
    let t = || Term::bound("t");
    let dt = || Term::bound("dt");
    let c = || Term::cst("c");
    let beta = || Term::cst("BETA");
    let gamma = || Term::cst("GAMMA");
    let p1 = || Term::acc(t(), x(), beta());
    let p2 = || Term::cmp(dt(), CmpOp::Eq, Term::div(gamma(), Term::norm(c(), x())));
    let shifted = || {
        Term::norm(
            Term::mat_add(Term::grad(x()), Term::mat_scal(c(), Term::add(t(), dt()))),
            x(),
        )
    };
    let current = || Term::norm(Term::mat_add(Term::grad(x()), Term::mat_scal(c(), t())), x());
    let step = || Term::norm(Term::mat_scal(c(), dt()), x());
    let le = |a, b| Term::cmp(a, CmpOp::Le, b);

    let statements = [
        (
            "update_t_ensures1",
            Term::implies(
                p1(),
                Term::implies(p2(), Term::acc(Term::add(t(), dt()), x(), Term::add(beta(), gamma()))),
            ),
        ),
        (
            "update_t_ensures1_l0",
            Term::implies(p1(), Term::implies(p2(), le(shifted(), Term::add(beta(), gamma())))),
        ),
        (
            "update_t_ensures1_l1",
            Term::implies(p1(), Term::implies(p2(), le(shifted(), Term::add(current(), step())))),
        ),
        ("update_t_ensures1_l2", Term::implies(p1(), le(current(), beta()))),
        (
            "update_t_ensures1_l3",
            Term::implies(p2(), Term::cmp(step(), CmpOp::Eq, gamma())),
        ),
    ];
    let bindings = vec![
        LemmaBinding {
            binder: "x".into(),
            value: Term::var(X),
        },
        LemmaBinding {
            binder: "t".into(),
            value: Term::old(Term::var(T)),
        },
        LemmaBinding {
            binder: "dt".into(),
            value: Term::elem(DT, 0, 0),
        },
    ];
    statements
        .into_iter()
        .map(|(name, statement)| Lemma {
            name: name.into(),
            binders: vec!["x".into(), "t".into(), "dt".into()],
            statement,
            instance: LemmaInstance {
                function: "update_t".into(),
                bindings: bindings.clone(),
            },
        })
        .collect()
}
