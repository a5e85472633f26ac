//! C99 rendering of kernel programs.
//!
//! Output is fully unrolled: the only loop left is the path-following
//! iteration itself. Each function carries its annotation block, and
//! scalar-checkable clauses are also emitted as executable checks when
//! `IPMFORGE_RUNTIME_CHECKS` is defined.

use std::collections::BTreeSet;
use std::fmt::Write;

use super::contract::{acsl_function_block, acsl_lemma_block, acsl_loop_block, Clause, CmpOp, ContractSidecar, Term};
use super::ir::{ClauseKind, ContractTag, ElemRef, Expr, KernelProgram, Stmt};

pub const RUNTIME_CHECKS_MACRO: &str = "IPMFORGE_RUNTIME_CHECKS";
pub const VIOLATION_COUNTER: &str = "ipmforge_violations";

fn lit(v: f64) -> String {
    if v.is_sign_negative() {
        format!("({v:?})")
    } else {
        format!("{v:?}")
    }
}

struct Renderer<'a> {
    k: &'a KernelProgram,
    sidecar: &'a ContractSidecar,
    out: String,
    indent: usize,
}

impl<'a> Renderer<'a> {
    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn block(&mut self, text: &str) {
        for l in text.lines() {
            self.line(l);
        }
    }

    fn is_scalar_const(&self, name: &str) -> bool {
        self.k.constant(name).is_some_and(|c| c.is_scalar())
    }

    fn elem(&self, name: &str, index: usize) -> String {
        if self.is_scalar_const(name) {
            name.to_string()
        } else {
            format!("{name}[{index}]")
        }
    }

    fn cell(&self, e: &ElemRef) -> String {
        self.elem(&e.array, e.index)
    }

    fn expr(&self, e: &Expr) -> String {
        match e {
            Expr::Lit { value } => lit(*value),
            Expr::Load { elem } => self.cell(elem),
            Expr::Add { lhs, rhs } => format!("({} + {})", self.expr(lhs), self.expr(rhs)),
            Expr::Sub { lhs, rhs } => format!("({} - {})", self.expr(lhs), self.expr(rhs)),
            Expr::Mul { lhs, rhs } => format!("({} * {})", self.expr(lhs), self.expr(rhs)),
            Expr::Div { lhs, rhs } => format!("({} / {})", self.expr(lhs), self.expr(rhs)),
            Expr::Neg { arg } => format!("(-{})", self.expr(arg)),
            Expr::Sqrt { arg } => {
                let a = self.expr(arg);
                format!("sqrt({a} > 0.0 ? {a} : 0.0)")
            }
        }
    }

    /// Left-associated `0.0 + p0 + p1 + ...`, matching an accumulator
    /// that starts at zero.
    fn sum_of_products(terms: impl Iterator<Item = (String, String)>) -> String {
        let mut s = String::from("0.0");
        for (a, b) in terms {
            let _ = write!(s, " + {a} * {b}");
        }
        s
    }

    fn stmt(&mut self, s: &Stmt) {
        match s {
            Stmt::ElemAssign { dst, expr } => {
                let l = format!("{} = {};", self.cell(dst), self.expr(expr));
                self.line(&l);
            }
            Stmt::MatMulFixed {
                dst,
                a,
                b,
                rows,
                inner,
                cols,
            } => {
                for r in 0..*rows {
                    for c in 0..*cols {
                        let sum = Self::sum_of_products(
                            (0..*inner).map(|i| (self.elem(a, r * inner + i), self.elem(b, i * cols + c))),
                        );
                        let l = format!("{dst}[{}] = {sum};", r * cols + c);
                        self.line(&l);
                    }
                }
            }
            Stmt::MatAddFixed { dst, a, b, len } => {
                for i in 0..*len {
                    let l = format!("{dst}[{i}] = {} + {};", self.elem(a, i), self.elem(b, i));
                    self.line(&l);
                }
            }
            Stmt::ScaleFixed { dst, src, scalar, len } => {
                let sv = self.cell(scalar);
                for i in 0..*len {
                    let l = format!("{dst}[{i}] = {sv} * {};", self.elem(src, i));
                    self.line(&l);
                }
            }
            Stmt::Neg { dst, src, len } => {
                for i in 0..*len {
                    let l = format!("{dst}[{i}] = -{};", self.elem(src, i));
                    self.line(&l);
                }
            }
            Stmt::CholFactorFixed { dst, src, dim } => self.cholesky(dst, src, *dim),
            Stmt::CholSolveFixed { dst, factor, rhs, dim } => self.solve(dst, factor, rhs, *dim),
            Stmt::DotFixed { dst, a, b, len } => {
                let sum = Self::sum_of_products((0..*len).map(|i| (self.elem(a, i), self.elem(b, i))));
                let l = format!("{} = {sum};", self.cell(dst));
                self.line(&l);
            }
            Stmt::Sqrt { dst, src } => {
                let v = self.cell(src);
                let l = format!("{} = sqrt({v} > 0.0 ? {v} : 0.0);", self.cell(dst));
                self.line(&l);
            }
            Stmt::Div { dst, num, den } => {
                let l = format!("{} = {} / {};", self.cell(dst), self.cell(num), self.cell(den));
                self.line(&l);
            }
            Stmt::Call { function } => self.line(&format!("{function}();")),
            Stmt::AssertContract { tag } => self.assert(tag),
            Stmt::FixedLoop { counter, body, .. } => {
                let inv = acsl_loop_block(&self.sidecar.loop_contract, self.k);
                self.block(&inv);
                self.line(&format!("for ({counter} = 0; {counter} < NBR; {counter}++) {{"));
                self.indent += 1;
                for s in body {
                    self.stmt(s);
                }
                self.indent -= 1;
                self.line("}");
            }
        }
    }

    fn cholesky(&mut self, dst: &str, src: &str, n: usize) {
        for r in 0..n {
            for c in (r + 1)..n {
                self.line(&format!("{dst}[{}] = 0.0;", r * n + c));
            }
        }
        for j in 0..n {
            let mut s = self.elem(src, j * n + j);
            for k in 0..j {
                let _ = write!(s, " - {dst}[{}] * {dst}[{}]", j * n + k, j * n + k);
            }
            self.line(&format!("{dst}[{}] = sqrt({s} > 0.0 ? {s} : 0.0);", j * n + j));
            for i in (j + 1)..n {
                let mut s = self.elem(src, i * n + j);
                for k in 0..j {
                    let _ = write!(s, " - {dst}[{}] * {dst}[{}]", i * n + k, j * n + k);
                }
                self.line(&format!("{dst}[{}] = ({s}) / {dst}[{}];", i * n + j, j * n + j));
            }
        }
    }

    fn solve(&mut self, dst: &str, factor: &str, rhs: &str, n: usize) {
        for i in 0..n {
            let mut s = self.elem(rhs, i);
            for k in 0..i {
                let _ = write!(s, " - {} * {dst}[{k}]", self.elem(factor, i * n + k));
            }
            let l = format!("{dst}[{i}] = ({s}) / {};", self.elem(factor, i * n + i));
            self.line(&l);
        }
        for i in (0..n).rev() {
            let mut s = format!("{dst}[{i}]");
            for k in (i + 1)..n {
                let _ = write!(s, " - {} * {dst}[{k}]", self.elem(factor, k * n + i));
            }
            let l = format!("{dst}[{i}] = ({s}) / {};", self.elem(factor, i * n + i));
            self.line(&l);
        }
    }

    fn clauses(&self, tag: &ContractTag) -> Vec<&'a Clause> {
        let sc = self.sidecar;
        match tag.kind {
            ClauseKind::Requires => sc
                .function(&tag.function)
                .map_or(Vec::new(), |f| f.requires.iter().collect()),
            ClauseKind::Ensures => sc
                .function(&tag.function)
                .map_or(Vec::new(), |f| f.ensures.iter().collect()),
            ClauseKind::LoopInvariant => sc.loop_contract.invariants.iter().collect(),
            ClauseKind::Lemmas => Vec::new(),
        }
    }

    fn assert(&mut self, tag: &ContractTag) {
        let checks: Vec<(String, Option<String>)> = self
            .clauses(tag)
            .into_iter()
            .map(|c| (c.name.clone(), CheckExpr::new(self).bool_term(&c.term, false)))
            .collect();
        if checks.is_empty() {
            return;
        }
        self.line(&format!("#ifdef {RUNTIME_CHECKS_MACRO}"));
        for (name, check) in checks {
            match check {
                Some(cond) => {
                    self.line(&format!("if (!({cond})) {{ {VIOLATION_COUNTER}++; }} /* {name} */"));
                }
                None => self.line(&format!("/* {name}: checked only by the interpreter */")),
            }
        }
        self.line("#endif");
    }

    /// Globals read under `\old` by the executable checks of `function`.
    fn old_globals(&self, function: &str) -> Vec<String> {
        let mut names = BTreeSet::new();
        let mut tags = Vec::new();
        if let Some(f) = self.k.function(function) {
            collect_tags(&f.body, &mut tags);
        }
        for tag in tags {
            for c in self.clauses(&tag) {
                let mut probe = CheckExpr::new(self);
                if probe.bool_term(&c.term, false).is_some() {
                    names.extend(probe.old_used);
                }
            }
        }
        self.k
            .globals
            .iter()
            .filter(|g| names.contains(&g.name))
            .map(|g| g.name.clone())
            .collect()
    }

    fn function(&mut self, name: &str) {
        let f = self.k.function(name).expect("validated");
        if let Some(fc) = self.sidecar.function(name) {
            let b = acsl_function_block(fc, self.k);
            self.block(&b);
        }
        let sig = if name == self.k.entry {
            format!("void {name}(void)")
        } else {
            format!("static void {name}(void)")
        };
        self.line(&format!("{sig} {{"));
        self.indent += 1;
        let mut counters = Vec::new();
        collect_counters(&f.body, &mut counters);
        for c in counters {
            self.line(&format!("int {c};"));
        }
        let old = self.old_globals(name);
        if !old.is_empty() {
            self.line(&format!("#ifdef {RUNTIME_CHECKS_MACRO}"));
            for g in &old {
                let len = self.k.global(g).expect("validated").len();
                self.line(&format!("double old_{g}[{len}];"));
            }
            for g in &old {
                let len = self.k.global(g).expect("validated").len();
                for i in 0..len {
                    self.line(&format!("old_{g}[{i}] = {g}[{i}];"));
                }
            }
            self.line("#endif");
        }
        for s in &f.body {
            self.stmt(s);
        }
        self.indent -= 1;
        self.line("}");
        self.out.push('\n');
    }
}

fn collect_tags(body: &[Stmt], out: &mut Vec<ContractTag>) {
    for s in body {
        match s {
            Stmt::AssertContract { tag } if !out.contains(tag) => out.push(tag.clone()),
            Stmt::FixedLoop { body, .. } => collect_tags(body, out),
            _ => {}
        }
    }
}

fn collect_counters(body: &[Stmt], out: &mut Vec<String>) {
    for s in body {
        if let Stmt::FixedLoop { counter, body, .. } = s {
            if !out.contains(counter) {
                out.push(counter.clone());
            }
            collect_counters(body, out);
        }
    }
}

/// Translation of scalar-elementary clauses into C expressions.
struct CheckExpr<'r, 'a> {
    r: &'r Renderer<'a>,
    old_used: BTreeSet<String>,
}

impl<'r, 'a> CheckExpr<'r, 'a> {
    fn new(r: &'r Renderer<'a>) -> Self {
        CheckExpr {
            r,
            old_used: BTreeSet::new(),
        }
    }

    fn global_elem(&mut self, name: &str, index: usize, old: bool) -> Option<String> {
        let k = self.r.k;
        if k.global(name).is_some() {
            if old {
                self.old_used.insert(name.to_string());
                Some(format!("old_{name}[{index}]"))
            } else {
                Some(format!("{name}[{index}]"))
            }
        } else {
            k.constant(name).map(|_| self.r.elem(name, index))
        }
    }

    fn num(&mut self, t: &Term, old: bool) -> Option<String> {
        let k = self.r.k;
        Some(match t {
            Term::Num { value } => lit(*value),
            Term::Const { name } if k.constant(name)?.is_scalar() => name.clone(),
            Term::Var { name } if k.global(name)?.len() == 1 => self.global_elem(name, 0, old)?,
            Term::Elem { name, row, col } => {
                let cols = k
                    .global(name)
                    .map(|g| g.cols)
                    .or_else(|| k.constant(name).map(|c| c.cols))?;
                self.global_elem(name, row * cols + col, old)?
            }
            Term::LoopIndex => "((double) l)".into(),
            Term::Old { arg } => self.num(arg, true)?,
            Term::Add { lhs, rhs } => format!("({} + {})", self.num(lhs, old)?, self.num(rhs, old)?),
            Term::Sub { lhs, rhs } => format!("({} - {})", self.num(lhs, old)?, self.num(rhs, old)?),
            Term::Mul { lhs, rhs } => format!("({} * {})", self.num(lhs, old)?, self.num(rhs, old)?),
            Term::Div { lhs, rhs } => format!("({} / {})", self.num(lhs, old)?, self.num(rhs, old)?),
            Term::Neg { arg } => format!("(-{})", self.num(arg, old)?),
            Term::Sqrt { arg } => {
                let a = self.num(arg, old)?;
                format!("sqrt({a} > 0.0 ? {a} : 0.0)")
            }
            Term::Lower { k: idx } => {
                k.constant("T_INIT")?;
                k.constant("RATIO")?;
                let i = self.num(idx, old)?;
                format!("({i} < 0.5 ? 0.0 : T_INIT * pow(RATIO, {i} - 1.0))")
            }
            _ => return None,
        })
    }

    fn bool_term(&mut self, t: &Term, old: bool) -> Option<String> {
        match t {
            Term::Cmp { op, lhs, rhs } => {
                let (l, r) = (self.num(lhs, old)?, self.num(rhs, old)?);
                Some(match op {
                    CmpOp::Eq => format!("IPMFORGE_CLOSE({l}, {r})"),
                    CmpOp::Lt => format!("{l} < {r} + IPMFORGE_CHECK_SLACK"),
                    CmpOp::Le => format!("{l} <= {r} + IPMFORGE_CHECK_SLACK"),
                    CmpOp::Gt => format!("{l} + IPMFORGE_CHECK_SLACK > {r}"),
                    CmpOp::Ge => format!("{l} + IPMFORGE_CHECK_SLACK >= {r}"),
                })
            }
            Term::And { args } => {
                let parts: Option<Vec<String>> = args.iter().map(|a| self.bool_term(a, old)).collect();
                Some(parts?.iter().map(|p| format!("({p})")).collect::<Vec<_>>().join(" && "))
            }
            Term::Implies { lhs, rhs } => Some(format!(
                "!({}) || ({})",
                self.bool_term(lhs, old)?,
                self.bool_term(rhs, old)?
            )),
            Term::Old { arg } => self.bool_term(arg, true),
            Term::StrictlyFeasible { x } => {
                let (name, old) = match x.as_ref() {
                    Term::Var { name } => (name, old),
                    Term::Old { arg } => match arg.as_ref() {
                        Term::Var { name } => (name, true),
                        _ => return None,
                    },
                    _ => return None,
                };
                let k = self.r.k;
                let (n, m) = (k.sizes.n, k.sizes.m);
                let a = k.constant("A")?;
                let b = k.constant("b")?;
                if a.rows != m || a.cols != n || b.values.len() != m || k.global(name)?.len() != n {
                    return None;
                }
                let mut rows = Vec::with_capacity(m);
                for i in 0..m {
                    let mut ax = String::from("0.0");
                    for j in 0..n {
                        let xj = self.global_elem(name, j, old)?;
                        let _ = write!(ax, " + A[{}] * {xj}", i * n + j);
                    }
                    rows.push(format!("(b[{i}] - ({ax}) > 0.0)"));
                }
                Some(rows.join(" && "))
            }
            _ => None,
        }
    }
}

/// Renders the kernel as a self-contained C99 translation unit.
pub fn render_c(k: &KernelProgram, sidecar: &ContractSidecar) -> String {
    let mut r = Renderer {
        k,
        sidecar,
        out: String::new(),
        indent: 0,
    };
    r.line(&format!(
        "/* Instance-specialized path-following kernel: n = {}, m = {}, {} iterations. */",
        k.sizes.n, k.sizes.m, k.sizes.trip_count
    ));
    r.line("#include <math.h>");
    r.out.push('\n');
    r.line(&format!("#define N {}", k.sizes.n));
    r.line(&format!("#define M {}", k.sizes.m));
    r.line(&format!("#define NBR {}", k.sizes.trip_count));
    for c in k.constants.iter().filter(|c| c.is_scalar()) {
        r.line(&format!("#define {} ({:?})", c.name, c.values[0]));
    }
    r.out.push('\n');

    let mut body_text = Renderer {
        k,
        sidecar,
        out: String::new(),
        indent: 0,
    };
    let order = function_order(k);
    for f in &order {
        body_text.function(f);
    }
    let body = body_text.out;
    let code = strip_comments(&body);

    let referenced = |name: &str| {
        let bytes = code.as_bytes();
        code.match_indices(name).any(|(i, _)| {
            let before = i.checked_sub(1).map(|p| bytes[p]);
            let after = bytes.get(i + name.len()).copied();
            let ident = |c: Option<u8>| c.is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_');
            !ident(before) && !ident(after)
        })
    };

    for c in k.constants.iter().filter(|c| !c.is_scalar() && referenced(&c.name)) {
        let vals: Vec<String> = c.values.iter().map(|v| format!("{v:?}")).collect();
        r.line(&format!(
            "static const double {}[{}] = {{{}}};",
            c.name,
            c.values.len(),
            vals.join(", ")
        ));
    }
    r.out.push('\n');
    for g in k.globals.iter().filter(|g| referenced(&g.name)) {
        match &g.init {
            Some(init) => {
                let vals: Vec<String> = init.iter().map(|v| format!("{v:?}")).collect();
                r.line(&format!(
                    "static double {}[{}] = {{{}}};",
                    g.name,
                    g.len(),
                    vals.join(", ")
                ));
            }
            None => r.line(&format!("static double {}[{}];", g.name, g.len())),
        }
    }
    r.out.push('\n');

    r.line(&format!("#ifdef {RUNTIME_CHECKS_MACRO}"));
    r.line(&format!("int {VIOLATION_COUNTER} = 0;"));
    r.line("#define IPMFORGE_ABS(v) ((v) < 0.0 ? -(v) : (v))");
    r.line("#define IPMFORGE_CHECK_SLACK 1e-9");
    r.line(
        "#define IPMFORGE_CLOSE(a, b) (IPMFORGE_ABS((a) - (b)) <= 1e-10 * (1.0 + IPMFORGE_ABS(a) + IPMFORGE_ABS(b)))",
    );
    r.line("#endif");
    r.out.push('\n');

    for l in &sidecar.lemmas {
        let b = acsl_lemma_block(l, k);
        r.block(&b);
    }
    if !sidecar.lemmas.is_empty() {
        r.out.push('\n');
    }

    for f in &order {
        if *f == k.entry {
            r.line(&format!("void {f}(void);"));
        } else {
            r.line(&format!("static void {f}(void);"));
        }
    }
    r.out.push('\n');
    r.out.push_str(&body);
    r.out
}

/// Functions in declaration order, entry last.
fn function_order(k: &KernelProgram) -> Vec<&str> {
    let mut v: Vec<&str> = k
        .functions
        .iter()
        .map(|f| f.name.as_str())
        .filter(|n| *n != k.entry)
        .collect();
    v.push(&k.entry);
    v
}

fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("/*") {
        out.push_str(&rest[..start]);
        match rest[start..].find("*/") {
            Some(end) => rest = &rest[start + end + 2..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}
