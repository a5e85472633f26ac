//! Random-instance benchmark suite.
//!
//! Each instance is solved, compared against the vertex-enumeration
//! optimum, and optionally regenerated as a kernel and re-run through the
//! checked interpreter. Reports carry the measurements the acceptance
//! checks and the `bench` command need.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codegen::{interpret, specialize, CheckedOptions, ExecMode, SpecializeOptions};
use crate::ipm::{solve, IpmConfig, SolveCertificate, SolveError};
use crate::lp::{random_instance, LpInstance, SUITE_EPSILON};
use crate::oracle::solve_by_vertex_enumeration;

/// Which instance shapes to generate: `n` from `n_values`, and for each `n`
/// the rows `m` in `[m_lo(n), m_hi(n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub n_values: Vec<usize>,
    pub m_range: MRange,
    pub count: usize,
    pub seed: u64,
    pub epsilon: f64,
}

/// Row-count range, either absolute or in multiples of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MRange {
    Absolute { lo: usize, hi: usize },
    PerVariable { lo: usize, hi: usize },
}

impl MRange {
    pub fn rows(&self, n: usize) -> std::ops::Range<usize> {
        match *self {
            MRange::Absolute { lo, hi } => lo..hi,
            MRange::PerVariable { lo, hi } => lo * n..hi * n,
        }
    }
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            n_values: vec![2, 3, 4],
            m_range: MRange::PerVariable { lo: 3, hi: 5 },
            count: 100,
            seed: 0,
            epsilon: SUITE_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SuiteItem {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl SuiteSpec {
    /// Items sorted by `(n, m, seed)`.
    pub fn items(&self) -> Vec<SuiteItem> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for m in self.m_range.rows(n) {
                for i in 0..self.count as u64 {
                    out.push(SuiteItem {
                        n,
                        m,
                        seed: self.seed.wrapping_add(i),
                    });
                }
            }
        }
        out.sort();
        out
    }
}

/// Kernel-versus-library comparison for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelComparison {
    pub max_coord_diff: f64,
    pub trip_count_equal: bool,
    pub violations: usize,
    pub clauses_checked: usize,
    pub first_violation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub trip_count: usize,
    pub iterations: usize,
    pub t_init: f64,
    pub t_stop: f64,
    pub t_final: f64,
    pub gap_bound: f64,
    pub objective: f64,
    pub oracle_optimum: Option<f64>,
    /// `objective - optimum`.
    pub oracle_gap: Option<f64>,
    pub monitor_pass: bool,
    pub max_acc_after_x: f64,
    pub max_acc_after_t: f64,
    /// Every `t_k >= lower(k) - 1e-12` under the run's own schedule.
    pub lower_ok: bool,
    /// Every step has `t' > t * ratio - 1e-12` under the run's own ratio.
    pub ratio_ok: bool,
    /// Same checks with the unit-parameter ratio `1 + gamma/(1 + beta)`.
    pub unit_lower_ok: bool,
    pub unit_ratio_ok: bool,
    /// Smallest observed `t'/t` over steps with `t > 0`.
    pub min_step_ratio: f64,
    pub kernel: Option<KernelComparison>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

impl InstanceReport {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub oracle: bool,
    pub kernel: bool,
    pub specialize: SpecializeOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            oracle: true,
            kernel: false,
            specialize: SpecializeOptions::default(),
        }
    }
}

pub const PROGRESS_ABS_SLACK: f64 = 1e-12;

/// `1 + gamma/(1 + beta)`.
pub fn unit_ratio(beta: f64, gamma: f64) -> f64 {
    1.0 + gamma / (1.0 + beta)
}

/// `1 + (beta + 1) beta / (1 - beta)`.
pub fn unit_gap_constant(beta: f64) -> f64 {
    1.0 + (beta + 1.0) * beta / (1.0 - beta)
}

fn blank(item: SuiteItem) -> InstanceReport {
    InstanceReport {
        n: item.n,
        m: item.m,
        seed: item.seed,
        trip_count: 0,
        iterations: 0,
        t_init: f64::NAN,
        t_stop: f64::NAN,
        t_final: f64::NAN,
        gap_bound: f64::NAN,
        objective: f64::NAN,
        oracle_optimum: None,
        oracle_gap: None,
        monitor_pass: false,
        max_acc_after_x: f64::NAN,
        max_acc_after_t: f64::NAN,
        lower_ok: false,
        ratio_ok: false,
        unit_lower_ok: false,
        unit_ratio_ok: false,
        min_step_ratio: f64::NAN,
        kernel: None,
        wall_ms: 0.0,
        error: None,
    }
}

pub fn suite_instance(item: SuiteItem, epsilon: f64) -> Result<(LpInstance, crate::lp::FeasibleWitness), String> {
    let (p, w) = random_instance(item.n, item.m, item.seed).map_err(|e| e.to_string())?;
    let p = p.with_epsilon(epsilon).map_err(|e| e.to_string())?;
    Ok((p, w))
}

fn fill_from_certificate(r: &mut InstanceReport, cert: &SolveCertificate, cfg: &IpmConfig) {
    r.iterations = cert.iterations;
    r.t_final = cert.t_final;
    r.gap_bound = cert.gap_bound;
    r.objective = cert.objective;
    r.monitor_pass = cert.monitor_clean();
    r.max_acc_after_x = cert.monitor.iter().map(|s| s.acc_after_x).fold(0.0, f64::max);
    r.max_acc_after_t = cert.monitor.iter().map(|s| s.acc_after_t).fold(0.0, f64::max);
    let Some(s) = cert.schedule else {
        return;
    };
    r.trip_count = s.trip_count;
    r.t_init = s.t_init;
    r.t_stop = s.t_stop;
    let unit = unit_ratio(cfg.beta, cfg.gamma);
    let unit_lower = |k: usize| {
        if k == 0 {
            0.0
        } else {
            s.t_init * unit.powi((k - 1) as i32)
        }
    };
    r.lower_ok = cert
        .monitor
        .iter()
        .all(|rec| rec.t >= s.lower(rec.k) - PROGRESS_ABS_SLACK);
    r.unit_lower_ok = cert
        .monitor
        .iter()
        .all(|rec| rec.t >= unit_lower(rec.k) - PROGRESS_ABS_SLACK);
    let mut prev = 0.0;
    let (mut ratio_ok, mut unit_ok, mut min_ratio) = (true, true, f64::INFINITY);
    for rec in &cert.monitor {
        ratio_ok &= rec.t > prev * s.ratio - PROGRESS_ABS_SLACK;
        unit_ok &= rec.t > prev * unit - PROGRESS_ABS_SLACK;
        if prev > 0.0 {
            min_ratio = min_ratio.min(rec.t / prev);
        }
        prev = rec.t;
    }
    r.ratio_ok = ratio_ok;
    r.unit_ratio_ok = unit_ok;
    r.min_step_ratio = min_ratio;
}

/// Solves one suite instance and gathers its measurements. Failures are
/// recorded in the report, never raised.
pub fn run_instance(item: SuiteItem, cfg_template: &IpmConfig, epsilon: f64, opts: RunOptions) -> InstanceReport {
    let mut r = blank(item);
    let (p, w) = match suite_instance(item, epsilon) {
        Ok(v) => v,
        Err(e) => {
            r.error = Some(e);
            return r;
        }
    };
    let cfg = IpmConfig {
        epsilon,
        ..cfg_template.clone()
    };
    let started = Instant::now();
    let solved = solve(&p, &w, &cfg);
    r.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let cert = match solved {
        Ok(c) => c,
        Err(SolveError::Step { error, certificate }) => {
            fill_from_certificate(&mut r, &certificate, &cfg);
            r.error = Some(error.to_string());
            return r;
        }
        Err(e) => {
            r.error = Some(e.to_string());
            return r;
        }
    };
    fill_from_certificate(&mut r, &cert, &cfg);

    if opts.oracle {
        match solve_by_vertex_enumeration(&p) {
            Ok(o) => {
                r.oracle_optimum = Some(o.optimum);
                r.oracle_gap = Some(cert.objective - o.optimum);
            }
            Err(e) => r.error = Some(format!("oracle: {e}")),
        }
    }

    if opts.kernel {
        if let Some(schedule) = cert.schedule {
            let (kernel, sidecar) = specialize(&p, &cfg, &schedule, &cert.x_center, opts.specialize);
            let run = interpret(
                &kernel,
                ExecMode::Checked(CheckedOptions {
                    sidecar: &sidecar,
                    sol: r.oracle_optimum,
                    abort_on_violation: false,
                    tol: cfg.tol,
                }),
            );
            match run {
                Ok(run) => {
                    let max_coord_diff = run
                        .certificate
                        .x_final
                        .data()
                        .iter()
                        .zip(cert.x_final.data())
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    r.kernel = Some(KernelComparison {
                        max_coord_diff,
                        trip_count_equal: kernel.sizes.trip_count == cert.iterations,
                        violations: run.violations.len(),
                        clauses_checked: run.clauses_checked,
                        first_violation: run
                            .violations
                            .first()
                            .map(|v| format!("{} {} k={}", v.tag, v.clause, v.k)),
                    });
                }
                Err(e) => r.error = Some(format!("kernel: {e}")),
            }
        }
    }
    r
}

pub const CSV_HEADER: &str = "n,m,seed,trip_count,t_final,gap_bound,oracle_gap,monitor_pass,wall_ms";

pub fn csv_row(r: &InstanceReport) -> String {
    let gap = r.oracle_gap.map_or_else(String::new, |g| format!("{g:e}"));
    format!(
        "{},{},{},{},{:e},{:e},{},{},{:.3}",
        r.n,
        r.m,
        r.seed,
        r.trip_count,
        r.t_final,
        r.gap_bound,
        gap,
        r.monitor_pass && r.ok(),
        r.wall_ms
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_shape() {
        let items = SuiteSpec::default().items();
        // m in [3n, 5n): 2n values per n.
        assert_eq!(items.len(), (4 + 6 + 8) * 100);
        assert_eq!(items[0], SuiteItem { n: 2, m: 6, seed: 0 });
        assert!(items.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn absolute_rows() {
        assert_eq!(MRange::Absolute { lo: 7, hi: 9 }.rows(2), 7..9);
    }

    #[test]
    fn one_instance_end_to_end() {
        let item = SuiteItem { n: 2, m: 7, seed: 3 };
        let cfg = IpmConfig::default_config(SUITE_EPSILON);
        let r = run_instance(
            item,
            &cfg,
            SUITE_EPSILON,
            RunOptions {
                kernel: true,
                ..RunOptions::default()
            },
        );
        assert!(r.ok(), "{:?}", r.error);
        assert!(r.monitor_pass);
        assert!(r.oracle_gap.unwrap().abs() <= SUITE_EPSILON + 1e-9);
        assert!(r.lower_ok && r.ratio_ok);
        let k = r.kernel.clone().unwrap();
        assert_eq!(k.violations, 0, "{:?}", k.first_violation);
        assert!(k.max_coord_diff <= 1e-12);
        let row = csv_row(&r);
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }
}
