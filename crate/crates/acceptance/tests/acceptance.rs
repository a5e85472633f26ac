//! Acceptance report: one PASS/FAIL line per criterion, evaluated over the
//! seeded random suite. Exits non-zero when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use ipmforge::barrier::{eval_barrier, local_norm};
use ipmforge::codegen::{build_kernel, interpret, render_c, ExecMode, SpecializeOptions};
use ipmforge::ipm::{analytic_center, build_schedule};
use ipmforge::lp::{check_strict_feasibility, random_instance, SUITE_EPSILON};
use ipmforge::suite::{
    run_instance, suite_instance, unit_gap_constant, unit_ratio, InstanceReport, RunOptions, SuiteSpec,
};
use ipmforge::{solve, IpmConfig, LpInstance, Matrix};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, text: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id} {text}", if pass { "PASS" } else { "FAIL" });
    }

    fn note(&self, id: &str, text: String) {
        println!("[INFO] {id} {text}");
    }

    fn skip(&self, id: &str, text: String) {
        println!("[SKIP] {id} {text}");
    }
}

fn worst(reports: &[InstanceReport], f: impl Fn(&InstanceReport) -> f64) -> (f64, Option<&InstanceReport>) {
    reports.iter().map(|r| (f(r), r)).fold(
        (f64::NEG_INFINITY, None),
        |acc, (v, r)| if v > acc.0 { (v, Some(r)) } else { acc },
    )
}

fn tag(r: Option<&InstanceReport>) -> String {
    r.map_or_else(String::new, |r| format!(" at (n={}, m={}, seed={})", r.n, r.m, r.seed))
}

fn criterion_suite(rep: &mut Report, reports: &[InstanceReport], cfg: &IpmConfig) {
    let total = reports.len();
    let errors: Vec<&InstanceReport> = reports.iter().filter(|r| !r.ok()).collect();
    if let Some(e) = errors.first() {
        rep.note(
            "suite",
            format!(
                "{} instance(s) reported errors; first (n={}, m={}, seed={}): {}",
                errors.len(),
                e.n,
                e.m,
                e.seed,
                e.error.as_deref().unwrap_or("")
            ),
        );
    }
    let eps = SUITE_EPSILON;

    // 1
    let within = reports
        .iter()
        .filter(|r| r.ok() && r.oracle_gap.is_some_and(|g| g.abs() <= eps + 1e-9))
        .count();
    let (w, at) = worst(reports, |r| r.oracle_gap.map_or(f64::INFINITY, f64::abs));
    rep.line(
        "1",
        within == total,
        format!(
            "optimality vs vertex enumeration: {within}/{total} with |c'x - opt| <= eps + 1e-9 (worst {w:.3e}{})",
            tag(at)
        ),
    );

    // 2
    let bx = cfg.beta + 1e-9;
    let bt = cfg.beta + cfg.gamma + 1e-9;
    let (wx, ax) = worst(reports, |r| r.max_acc_after_x);
    let (wt, at_) = worst(reports, |r| r.max_acc_after_t);
    let bad = reports
        .iter()
        .filter(|r| !r.ok() || !(r.max_acc_after_x <= bx) || !(r.max_acc_after_t <= bt))
        .count();
    rep.line(
        "2",
        bad == 0,
        format!(
            "centering preserved: {bad} offending instances; max after x-update {wx:.6} (bound {:.6}){}, max after t-update {wt:.6} (bound {:.6}){}",
            cfg.beta,
            tag(ax),
            cfg.beta + cfg.gamma,
            tag(at_)
        ),
    );

    // 3
    let unit = unit_ratio(cfg.beta, cfg.gamma);
    let trips_ok = reports
        .iter()
        .all(|r| r.ok() && r.iterations == r.trip_count && r.t_final >= r.t_stop);
    let unit_bad = reports.iter().filter(|r| !(r.unit_lower_ok && r.unit_ratio_ok)).count();
    let (neg_min, at) = worst(reports, |r| -r.min_step_ratio);
    rep.line(
        "3",
        unit_bad == 0 && trips_ok,
        format!(
            "geometric progress with ratio 1 + gamma/(1 + beta) = {unit:.6}: {unit_bad}/{total} instances have a step or lower-bound violation; smallest observed t'/t {:.6}{}; exact trip counts and t_final >= t_stop: {trips_ok}",
            -neg_min,
            tag(at)
        ),
    );
    let gen_bad = reports.iter().filter(|r| !(r.lower_ok && r.ratio_ok)).count();
    rep.note(
        "3",
        format!(
            "with the barrier parameter nu = m (ratio 1 + gamma/(beta + sqrt(m))): {gen_bad}/{total} instances violate lower(k) or the step ratio"
        ),
    );

    // 4
    let unit_c = unit_gap_constant(cfg.beta);
    let unit_gap_bad: Vec<&InstanceReport> = reports
        .iter()
        .filter(|r| !r.oracle_gap.is_some_and(|g| unit_c / r.t_final >= g - 1e-9))
        .collect();
    let (ratio_w, at) = worst(reports, |r| r.oracle_gap.unwrap_or(f64::NAN) * r.t_final / unit_c);
    rep.line(
        "4",
        unit_gap_bad.is_empty(),
        format!(
            "gap bound (1 + (beta + 1) beta/(1 - beta))/t_final >= measured gap: {}/{total} violations; worst measured/bound {ratio_w:.3}{}",
            unit_gap_bad.len(),
            tag(at)
        ),
    );
    let gen_gap_bad = reports
        .iter()
        .filter(|r| !r.oracle_gap.is_some_and(|g| r.gap_bound >= g - 1e-9))
        .count();
    let (gw, at) = worst(reports, |r| r.oracle_gap.unwrap_or(f64::NAN) / r.gap_bound);
    rep.note(
        "4",
        format!(
            "with nu = m (bound (nu + (beta + sqrt(nu)) beta/(1 - beta))/t_final): {gen_gap_bad}/{total} violations; worst measured/bound {gw:.3e}{}",
            tag(at)
        ),
    );
}

fn criterion_differential(rep: &mut Report, reports: &[InstanceReport]) {
    let total = reports.len();
    let diffs: Vec<_> = reports
        .iter()
        .filter_map(|r| r.kernel.as_ref().map(|k| (r, k)))
        .collect();
    let (maxd, at) = diffs
        .iter()
        .map(|(r, k)| (k.max_coord_diff, *r))
        .fold((0.0, None), |acc, (d, r)| if d > acc.0 { (d, Some(r)) } else { acc });
    let trips = diffs.iter().filter(|(_, k)| k.trip_count_equal).count();
    let violations: usize = diffs.iter().map(|(_, k)| k.violations).sum();
    let clauses: usize = diffs.iter().map(|(_, k)| k.clauses_checked).sum();
    let first = diffs.iter().find_map(|(r, k)| {
        k.first_violation
            .as_ref()
            .map(|v| format!("; first (n={}, m={}, seed={}): {v}", r.n, r.m, r.seed))
    });
    rep.line(
        "6",
        diffs.len() == total && maxd <= 1e-12 && trips == total && violations == 0,
        format!(
            "kernel differential: {}/{total} interpreted, max |dx| {maxd:.3e}{}, trip counts equal {trips}/{total}, {violations} contract violations in {clauses} checked clauses{}",
            diffs.len(),
            tag(at),
            first.unwrap_or_default()
        ),
    );
}

fn barrier_value(p: &LpInstance, x: &[f64]) -> f64 {
    let (a, b) = (p.a(), p.b().data());
    let n = p.n();
    let mut v = 0.0;
    for (i, bi) in b.iter().enumerate() {
        let ax: f64 = (0..n).map(|j| a.get(i, j) * x[j]).sum();
        v -= (bi - ax).ln();
    }
    v
}

fn min_slack(p: &LpInstance, x: &[f64]) -> f64 {
    let (a, b) = (p.a(), p.b().data());
    (0..p.m())
        .map(|i| b[i] - (0..p.n()).map(|j| a.get(i, j) * x[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn interior_point(p: &LpInstance, rng: &mut ChaCha8Rng, floor: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..p.n()).map(|_| rng.gen_range(-0.9..0.9)).collect();
        if min_slack(p, &x) >= floor {
            return x;
        }
    }
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let num = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den = an.iter().map(|v| v * v).sum::<f64>().sqrt();
    num / den
}

fn criterion_calculus(rep: &mut Report, spec: &SuiteSpec) {
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let mut classes = 0;
    let mut points = 0;
    for &n in &spec.n_values {
        for m in spec.m_range.rows(n) {
            classes += 1;
            let (p, _) = random_instance(n, m, spec.seed).expect("suite instance");
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + (n * 100 + m) as u64);
            for _ in 0..20 {
                points += 1;
                let x = interior_point(&p, &mut rng, 0.1);
                let be = eval_barrier(&p, &Matrix::column(&x).unwrap()).unwrap();
                let shifted = |i: usize, hi: f64, j: usize, hj: f64| {
                    let mut y = x.clone();
                    y[i] += hi;
                    y[j] += hj;
                    barrier_value(&p, &y)
                };
                let hg = 1e-6;
                let fd_g: Vec<f64> = (0..n)
                    .map(|i| (shifted(i, hg, i, 0.0) - shifted(i, -hg, i, 0.0)) / (2.0 * hg))
                    .collect();
                worst_g = worst_g.max(rel_err(&fd_g, be.grad.data()));
                let hh = 1e-4;
                let mut fd_h = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        fd_h[i * n + j] = (shifted(i, hh, j, hh) - shifted(i, hh, j, -hh) - shifted(i, -hh, j, hh)
                            + shifted(i, -hh, j, -hh))
                            / (4.0 * hh * hh);
                    }
                }
                worst_h = worst_h.max(rel_err(&fd_h, be.hess.data()));
            }
        }
    }
    rep.line(
        "5",
        worst_g <= 1e-5 && worst_h <= 1e-5,
        format!(
            "barrier derivatives vs central differences at {points} points over {classes} classes: worst relative error gradient {worst_g:.2e}, Hessian {worst_h:.2e} (limit 1e-5)"
        ),
    );
}

fn criterion_unit_interval(rep: &mut Report) {
    let p = LpInstance::boxed(&[1.0], 1.0, 1e-2).unwrap();
    let start = check_strict_feasibility(&p, &Matrix::column(&[0.5]).unwrap()).unwrap();
    let cfg_unit = IpmConfig {
        nu: Some(1.0),
        ..IpmConfig::default_config(1e-2)
    };
    let center = analytic_center(&p, &start, &cfg_unit).unwrap();
    let xc = center.x.data()[0];
    let schedule = build_schedule(&p, &center.eval, &cfg_unit).unwrap();
    let cert = solve(&p, &start, &IpmConfig::default_config(1e-2)).unwrap();
    let first_dt = cert.monitor[0].dt;

    // Independent progression: at the center x = 0 both slacks are 1, so
    // the Hessian is 2 and ||c||_x = 1/sqrt(2).
    let (beta, gamma, eps): (f64, f64, f64) = (0.25, 1.0 / 12.0, 1e-2);
    let dt0 = gamma * 2f64.sqrt();
    let ratio = 1.0 + gamma / (1.0 + beta);
    let t_stop = (1.0 + (beta + 1.0) * beta / (1.0 - beta)) / eps;
    let mut t = dt0;
    let mut k = 1;
    while t < t_stop {
        t *= ratio;
        k += 1;
    }
    let pass = xc.abs() <= 1e-8
        && (first_dt - 0.117851).abs() <= 1e-6
        && (dt0 - 0.117851).abs() <= 1e-6
        && schedule.trip_count == 111
        && k == 111;
    rep.line(
        "7",
        pass,
        format!(
            "unit interval: center {xc:.2e}, first dt {first_dt:.7} (progression {dt0:.7}), trip count {} with nu = 1 (progression {k})",
            schedule.trip_count
        ),
    );
    let default = build_schedule(&p, &center.eval, &IpmConfig::default_config(1e-2)).unwrap();
    rep.note(
        "7",
        format!("with the default nu = m = 2 the trip count is {}", default.trip_count),
    );
}

fn criterion_lemmas(rep: &mut Report, spec: &SuiteSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_tri = f64::NEG_INFINITY;
    let mut worst_hom: f64 = 0.0;
    let samples = 1000;
    for s in 0..samples {
        let n = spec.n_values[s % spec.n_values.len()];
        let rows = spec.m_range.rows(n);
        let m = rng.gen_range(rows);
        let (p, _) = random_instance(n, m, rng.gen()).unwrap();
        let x = interior_point(&p, &mut rng, 1e-3);
        let be = eval_barrier(&p, &Matrix::column(&x).unwrap()).unwrap();
        let vec = |rng: &mut ChaCha8Rng| {
            Matrix::column(&(0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>()).unwrap()
        };
        let (u, v) = (vec(&mut rng), vec(&mut rng));
        let alpha: f64 = rng.sample::<f64, _>(StandardNormal) * 10.0;
        let norm = |y: &Matrix| local_norm(&be, y).unwrap();
        let uv = ipmforge::linalg::mat_add(&u, &v).unwrap();
        worst_tri = worst_tri.max(norm(&uv) - (norm(&u) + norm(&v)));
        let au = ipmforge::linalg::mat_scale(&u, alpha).unwrap();
        worst_hom = worst_hom.max((norm(&au) - alpha.abs() * norm(&u)).abs());
    }
    rep.line(
        "8",
        worst_tri <= 1e-9 && worst_hom <= 1e-9,
        format!(
            "local-norm lemmas over {samples} samples: max ||u+v|| - ||u|| - ||v|| = {worst_tri:.2e}, max | ||a u|| - |a| ||u|| | = {worst_hom:.2e}"
        ),
    );
}

fn c_compiler() -> Option<String> {
    ["cc", "gcc", "clang"].into_iter().map(String::from).find(|cc| {
        Command::new(cc)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}

fn compile_and_run(cc: &str, dir: &Path, source: &str) -> Result<Vec<f64>, String> {
    std::fs::write(dir.join("solver.c"), source).map_err(|e| e.to_string())?;
    let harness = "#include <stdio.h>\n#include \"solver.c\"\nint main(void) {\n    int i;\n    compute();\n    for (i = 0; i < N; i++) printf(\"%.17g\\n\", pathfollowing_X[i]);\n    return 0;\n}\n";
    std::fs::write(dir.join("main.c"), harness).map_err(|e| e.to_string())?;
    let exe = dir.join("solver");
    let out = Command::new(cc)
        .args([
            "-std=c99",
            "-pedantic",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-ffp-contract=off",
            "-O2",
            "-o",
        ])
        .arg(&exe)
        .arg(dir.join("main.c"))
        .arg("-lm")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let run = Command::new(&exe).output().map_err(|e| e.to_string())?;
    String::from_utf8_lossy(&run.stdout)
        .lines()
        .map(|l| l.parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn criterion_c(rep: &mut Report, spec: &SuiteSpec, cfg: &IpmConfig) {
    let Some(cc) = c_compiler() else {
        rep.skip("9", "no C compiler found".into());
        return;
    };
    let dir = tempfile::tempdir().expect("temp dir");
    let items = spec.items();
    let picks: Vec<_> = (0..5).map(|i| items[i * items.len() / 5 + i]).collect();
    let mut worst: f64 = 0.0;
    let mut problems = Vec::new();
    for item in &picks {
        let (p, w) = suite_instance(*item, SUITE_EPSILON).unwrap();
        let b = build_kernel(&p, &w, cfg, SpecializeOptions::default()).unwrap();
        let x = interpret(&b.kernel, ExecMode::Unchecked).unwrap().certificate.x_final;
        match compile_and_run(&cc, dir.path(), &render_c(&b.kernel, &b.sidecar)) {
            Ok(cx) if cx.len() == x.data().len() => {
                for (a, b) in cx.iter().zip(x.data()) {
                    worst = worst.max((a - b).abs());
                }
            }
            Ok(_) => problems.push(format!(
                "(n={}, m={}, seed={}): wrong output length",
                item.n, item.m, item.seed
            )),
            Err(e) => problems.push(format!("(n={}, m={}, seed={}): {e}", item.n, item.m, item.seed)),
        }
    }
    rep.line(
        "9",
        problems.is_empty() && worst <= 1e-12,
        format!(
            "emitted C via {cc} (-std=c99 -pedantic -Wall -Wextra -Werror) on {} instances: max |x_c - x_interp| {worst:.3e}{}",
            picks.len(),
            problems.first().map(|p| format!("; {p}")).unwrap_or_default()
        ),
    );
}

fn main() -> ExitCode {
    let started = Instant::now();
    let spec = SuiteSpec::default();
    let cfg = IpmConfig::default_config(SUITE_EPSILON);
    let items = spec.items();
    let opts = RunOptions {
        oracle: true,
        kernel: true,
        specialize: SpecializeOptions::default(),
    };
    let reports: Vec<InstanceReport> = items
        .par_iter()
        .map(|item| run_instance(*item, &cfg, SUITE_EPSILON, opts))
        .collect();
    let mut rep = Report { failures: 0 };
    rep.note(
        "suite",
        format!(
            "{} instances, n in {:?}, m in [3n, 5n), eps = {SUITE_EPSILON}, beta = {}, gamma = {:.6}, nu = m; {:.1}s",
            reports.len(),
            spec.n_values,
            cfg.beta,
            cfg.gamma,
            started.elapsed().as_secs_f64()
        ),
    );
    criterion_suite(&mut rep, &reports, &cfg);
    criterion_calculus(&mut rep, &spec);
    criterion_differential(&mut rep, &reports);
    criterion_unit_interval(&mut rep);
    criterion_lemmas(&mut rep, &spec);
    criterion_c(&mut rep, &spec, &cfg);
    println!(
        "acceptance: {} criterion line(s) failed; total {:.1}s",
        rep.failures,
        started.elapsed().as_secs_f64()
    );
    if rep.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
