//! Short-step primal path following with an a-priori trip count.
//!
//! The solver runs in two phases. [`analytic_center`] minimizes the barrier
//! with damped Newton steps until the Newton decrement is inside the
//! centering radius. [`solve`] then performs exactly
//! [`IterationSchedule::trip_count`] path-following steps; there is no
//! data-dependent exit. Every step is checked by the invariant monitor:
//!
//! * strict feasibility of the new point,
//! * `||(t + dt) c + F'(x)||_x <= beta + gamma` after the `t` update,
//! * `||t c + F'(x)||_x <= beta` after the `x` update,
//! * geometric progress `t' > t * ratio` and `t_k >= lower(k)`.
//!
//! The schedule constants depend on the barrier parameter `nu` of the LP
//! log-barrier (`nu = m` for `m` inequality rows):
//!
//! ```text
//! ratio     = 1 + gamma / (beta + sqrt(nu))
//! gap(t)    = (nu + (beta + sqrt(nu)) beta / (1 - beta)) / t
//! t_stop    = gap_constant / epsilon
//! ```
//!
//! `nu = 1` gives `ratio = 1 + gamma/(1 + beta)` and
//! `gap(t) = (1 + (beta + 1) beta / (1 - beta)) / t`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{self, BarrierError, BarrierEval};
use crate::linalg::{self, Matrix};
use crate::lp::{FeasibleWitness, LpInstance};
use crate::tolerances::Tolerances;

/// Upper limit on the centering radius: `(3 - sqrt 5) / 2`.
pub fn beta_limit() -> f64 {
    (3.0 - 5f64.sqrt()) / 2.0
}

/// Largest step parameter that preserves the ACC: `sqrt(b)/(1+sqrt(b)) - b`.
pub fn gamma_limit(beta: f64) -> f64 {
    beta.sqrt() / (1.0 + beta.sqrt()) - beta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonitorMode {
    /// Violations abort the solve.
    Error,
    /// Violations are recorded and the solve continues where possible.
    Warn,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("beta = {beta} must lie in (0, {limit})")]
    Beta { beta: f64, limit: f64 },
    #[error("gamma = {gamma} must lie in (0, {limit}] for beta = {beta}")]
    Gamma { gamma: f64, beta: f64, limit: f64 },
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("barrier parameter nu must be >= 1, got {0}")]
    Nu(f64),
    #[error("center_safety must lie in (0, 1], got {0}")]
    CenterSafety(f64),
    #[error("center_polish must be non-negative, got {0}")]
    CenterPolish(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmConfig {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Barrier parameter. `None` uses the number of constraint rows.
    pub nu: Option<f64>,
    /// Centering succeeds once the Newton decrement is `<= beta * center_safety`.
    pub center_safety: f64,
    /// Inside the centering radius, Newton steps continue until the decrement
    /// drops to this value or stops shrinking.
    pub center_polish: f64,
    pub max_center_iters: usize,
    pub monitor: MonitorMode,
    pub tol: Tolerances,
}

impl IpmConfig {
    /// `beta = 1/4` and the largest admissible `gamma`, which is `1/12`.
    pub fn default_config(epsilon: f64) -> Self {
        let beta = 0.25;
        IpmConfig {
            beta,
            gamma: gamma_limit(beta),
            epsilon,
            nu: None,
            center_safety: 0.9,
            center_polish: 1e-12,
            max_center_iters: 500,
            monitor: MonitorMode::Error,
            tol: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let limit = beta_limit();
        if !(self.beta > 0.0 && self.beta < limit) {
            return Err(ConfigError::Beta { beta: self.beta, limit });
        }
        let glimit = gamma_limit(self.beta);
        if !(self.gamma > 0.0 && self.gamma <= glimit) {
            return Err(ConfigError::Gamma {
                gamma: self.gamma,
                beta: self.beta,
                limit: glimit,
            });
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        if let Some(nu) = self.nu {
            if !(nu >= 1.0 && nu.is_finite()) {
                return Err(ConfigError::Nu(nu));
            }
        }
        if !(self.center_safety > 0.0 && self.center_safety <= 1.0) {
            return Err(ConfigError::CenterSafety(self.center_safety));
        }
        if !(self.center_polish >= 0.0) {
            return Err(ConfigError::CenterPolish(self.center_polish));
        }
        Ok(())
    }

    pub fn nu_for(&self, p: &LpInstance) -> f64 {
        self.nu.unwrap_or(p.m() as f64)
    }

    /// Common ratio of the `lower` progression.
    pub fn ratio(&self, nu: f64) -> f64 {
        1.0 + self.gamma / (self.beta + nu.sqrt())
    }

    /// Numerator of the optimality-gap bound at path parameter `t`.
    pub fn gap_constant(&self, nu: f64) -> f64 {
        nu + (self.beta + nu.sqrt()) * self.beta / (1.0 - self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationSchedule {
    /// Path parameter after the first step from `t = 0`.
    pub t_init: f64,
    pub ratio: f64,
    pub t_stop: f64,
    pub trip_count: usize,
    pub nu: f64,
    pub gap_constant: f64,
}

impl IterationSchedule {
    /// `lower(0) = 0` and `lower(k) = t_init * ratio^(k-1)` for `k >= 1`.
    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.t_init * self.ratio.powi((k - 1) as i32)
        }
    }

    pub fn gap_bound(&self, t: f64) -> f64 {
        self.gap_constant / t
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("cost vector is zero in the local norm ({norm:e}); every feasible point is optimal")]
    DegenerateCost { norm: f64 },
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

pub fn build_schedule(
    p: &LpInstance,
    be_at_center: &BarrierEval,
    cfg: &IpmConfig,
) -> Result<IterationSchedule, ScheduleError> {
    let norm_c = barrier::local_norm(be_at_center, p.c())?;
    if norm_c <= cfg.tol.degenerate_cost {
        return Err(ScheduleError::DegenerateCost { norm: norm_c });
    }
    let nu = cfg.nu_for(p);
    let t_init = cfg.gamma / norm_c;
    let ratio = cfg.ratio(nu);
    let gap_constant = cfg.gap_constant(nu);
    let t_stop = gap_constant / cfg.epsilon;
    Ok(IterationSchedule {
        t_init,
        ratio,
        t_stop,
        trip_count: trip_count(t_init, ratio, t_stop),
        nu,
        gap_constant,
    })
}

/// Smallest `k >= 1` with `t_init * ratio^(k-1) >= t_stop`.
fn trip_count(t_init: f64, ratio: f64, t_stop: f64) -> usize {
    let lower = |k: usize| t_init * ratio.powi((k - 1) as i32);
    let estimate = 1.0 + (t_stop / t_init).ln() / ratio.ln();
    let mut k = if estimate.is_finite() && estimate > 1.0 {
        estimate.ceil() as usize
    } else {
        1
    };
    while lower(k) < t_stop {
        k += 1;
    }
    while k > 1 && lower(k - 1) >= t_stop {
        k -= 1;
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteringReport {
    pub x: Matrix,
    pub eval: BarrierEval,
    /// Damped Newton steps taken.
    pub steps: usize,
    /// Newton decrement at each visited point, including the returned one.
    pub decrements: Vec<f64>,
    /// Barrier value at each visited point.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CenteringError {
    #[error("centering did not reach decrement {target:e} in {iters} steps (last {last:e})")]
    Divergence { iters: usize, last: f64, target: f64 },
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

/// Damped Newton on the barrier with step length `1 / (1 + lambda)`.
pub fn analytic_center(
    p: &LpInstance,
    start: &FeasibleWitness,
    cfg: &IpmConfig,
) -> Result<CenteringReport, CenteringError> {
    let target = cfg.beta * cfg.center_safety;
    let mut x = start.x.clone();
    let mut decrements: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for steps in 0..=cfg.max_center_iters {
        let eval = barrier::eval_barrier_with(p, &x, cfg.tol.feas_margin)?;
        let newton = linalg::chol_solve(&eval.hess_factor, &eval.grad).map_err(BarrierError::from)?;
        let lambda = linalg::dot(&eval.grad, &newton)
            .map_err(BarrierError::from)?
            .max(0.0)
            .sqrt();
        let stalled = decrements.last().is_some_and(|&prev| lambda >= prev);
        decrements.push(lambda);
        values.push(eval.value);
        let centered = lambda <= target;
        if centered && (lambda <= cfg.center_polish || stalled || steps == cfg.max_center_iters) {
            debug!("centered after {steps} damped steps, decrement {lambda:e}");
            return Ok(CenteringReport {
                x,
                eval,
                steps,
                decrements,
                values,
            });
        }
        if steps == cfg.max_center_iters {
            return Err(CenteringError::Divergence {
                iters: steps,
                last: lambda,
                target,
            });
        }
        let damp = 1.0 / (1.0 + lambda);
        let data = x
            .data()
            .iter()
            .zip(newton.data())
            .map(|(xi, di)| xi - damp * di)
            .collect();
        x = Matrix::new(p.n(), 1, data).map_err(BarrierError::from)?;
    }
    unreachable!("loop returns on its last iteration")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Matrix,
    pub t: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Feasibility,
    AccAfterT,
    AccAfterX,
    Progress,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: Check,
    /// Iteration index after the step (1-based).
    pub k: usize,
    pub measured: f64,
    pub bound: f64,
}

/// Monitor output for one path-following step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub dt: f64,
    pub acc_after_t: f64,
    pub acc_after_x: f64,
    pub min_slack: f64,
    pub lower_k: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("monitor violation at k = {}: {:?} measured {:e} against {:e}", .0.k, .0.check, .0.measured, .0.bound)]
    Monitor(Violation, Box<StepRecord>),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

/// One short step: `dt = gamma / ||c||_x`, `t' = t + dt`,
/// `x' = x - F''(x)^{-1} (t' c + F'(x))`.
pub fn path_following_step(
    p: &LpInstance,
    cfg: &IpmConfig,
    schedule: &IterationSchedule,
    it: &Iterate,
    be: &BarrierEval,
) -> Result<(Iterate, BarrierEval, StepRecord), StepError> {
    let tol = &cfg.tol;
    let k = it.k + 1;

    // update_t
    let norm_c = barrier::local_norm(be, p.c())?;
    let dt = cfg.gamma / norm_c;
    let t = it.t + dt;

    // update_x
    let rhs = barrier::centering_residual(p, be, t);
    let sol = linalg::chol_solve(&be.hess_factor, &rhs).map_err(BarrierError::from)?;
    let acc_after_t = linalg::dot(&rhs, &sol).map_err(BarrierError::from)?.max(0.0).sqrt();
    let data = it.x.data().iter().zip(sol.data()).map(|(xi, si)| xi + (-si)).collect();
    let x = Matrix::new(p.n(), 1, data).map_err(BarrierError::from)?;

    let lower_k = schedule.lower(k);
    let mut record = StepRecord {
        k,
        t,
        dt,
        acc_after_t,
        acc_after_x: f64::NAN,
        min_slack: f64::NAN,
        lower_k,
        pass: true,
        violations: Vec::new(),
    };

    let next = match barrier::eval_barrier_with(p, &x, tol.feas_margin) {
        Ok(next) => next,
        Err(BarrierError::NotStrictlyInterior { slack, .. }) => {
            let v = Violation {
                check: Check::Feasibility,
                k,
                measured: slack,
                bound: tol.feas_margin,
            };
            record.min_slack = slack;
            record.pass = false;
            record.violations.push(v);
            return Err(StepError::Monitor(v, Box::new(record)));
        }
        Err(e) => return Err(e.into()),
    };
    record.min_slack = next.min_slack();
    record.acc_after_x = barrier::acc(p, &next, t, cfg.beta, tol.acc_slack)?.lhs;

    let mut checks = vec![
        (
            Check::AccAfterT,
            acc_after_t,
            cfg.beta + cfg.gamma,
            acc_after_t <= cfg.beta + cfg.gamma + tol.acc_slack,
        ),
        (
            Check::AccAfterX,
            record.acc_after_x,
            cfg.beta,
            record.acc_after_x <= cfg.beta + tol.acc_slack,
        ),
        (Check::LowerBound, t, lower_k, t >= lower_k - tol.progress_slack),
    ];
    if it.t > 0.0 {
        let want = it.t * schedule.ratio;
        checks.push((Check::Progress, t, want, t > want - tol.progress_slack));
    }
    for (check, measured, bound, ok) in checks {
        if !ok {
            record.pass = false;
            record.violations.push(Violation {
                check,
                k,
                measured,
                bound,
            });
        }
    }
    if let (MonitorMode::Error, Some(&v)) = (cfg.monitor, record.violations.first()) {
        return Err(StepError::Monitor(v, Box::new(record)));
    }
    Ok((Iterate { x, t, k }, next, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Success,
    /// `c` vanishes in the local norm; the start point is returned.
    DegenerateCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveCertificate {
    pub status: SolveStatus,
    pub x_final: Matrix,
    pub objective: f64,
    pub t_final: f64,
    pub gap_bound: f64,
    pub iterations: usize,
    pub centering_steps: usize,
    pub x_center: Matrix,
    pub schedule: Option<IterationSchedule>,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub monitor: Vec<StepRecord>,
}

impl SolveCertificate {
    pub fn monitor_clean(&self) -> bool {
        self.monitor.iter().all(|r| r.pass)
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.monitor.iter().flat_map(|r| r.violations.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("starting point: {0}")]
    Start(BarrierError),
    #[error(transparent)]
    Centering(#[from] CenteringError),
    #[error("{error}")]
    Step {
        error: StepError,
        certificate: Box<SolveCertificate>,
    },
    #[error(transparent)]
    Schedule(ScheduleError),
}

impl SolveError {
    /// Certificate built up to the failing step, when there is one.
    pub fn partial_certificate(&self) -> Option<&SolveCertificate> {
        match self {
            SolveError::Step { certificate, .. } => Some(certificate),
            _ => None,
        }
    }
}

/// Centers, builds the schedule and runs exactly `trip_count` steps.
pub fn solve(p: &LpInstance, start: &FeasibleWitness, cfg: &IpmConfig) -> Result<SolveCertificate, SolveError> {
    cfg.validate()?;
    barrier::eval_barrier_with(p, &start.x, cfg.tol.feas_margin).map_err(SolveError::Start)?;
    let center = analytic_center(p, start, cfg)?;
    let mut cert = SolveCertificate {
        status: SolveStatus::Success,
        x_final: center.x.clone(),
        objective: f64::NAN,
        t_final: 0.0,
        gap_bound: f64::INFINITY,
        iterations: 0,
        centering_steps: center.steps,
        x_center: center.x.clone(),
        schedule: None,
        beta: cfg.beta,
        gamma: cfg.gamma,
        epsilon: cfg.epsilon,
        monitor: Vec::new(),
    };
    let schedule = match build_schedule(p, &center.eval, cfg) {
        Ok(s) => s,
        Err(ScheduleError::DegenerateCost { .. }) => {
            cert.status = SolveStatus::DegenerateCost;
            cert.x_final = start.x.clone();
            cert.objective = p.objective(&start.x).map_err(|e| SolveError::Start(e.into()))?;
            cert.gap_bound = 0.0;
            return Ok(cert);
        }
        Err(e) => return Err(SolveError::Schedule(e)),
    };
    cert.schedule = Some(schedule);
    debug!(
        "schedule: t_init {:e} ratio {} t_stop {:e} trips {}",
        schedule.t_init, schedule.ratio, schedule.t_stop, schedule.trip_count
    );

    let mut it = Iterate {
        x: center.x,
        t: 0.0,
        k: 0,
    };
    let mut be = center.eval;
    for _ in 0..schedule.trip_count {
        match path_following_step(p, cfg, &schedule, &it, &be) {
            Ok((next, next_be, record)) => {
                if !record.pass {
                    warn!("monitor: {:?}", record.violations);
                }
                cert.monitor.push(record);
                it = next;
                be = next_be;
                cert.iterations = it.k;
                cert.x_final = it.x.clone();
                cert.t_final = it.t;
            }
            Err(error) => {
                if let StepError::Monitor(_, record) = &error {
                    cert.monitor.push((**record).clone());
                }
                cert.objective = p.objective(&it.x).unwrap_or(f64::NAN);
                cert.gap_bound = schedule.gap_bound(it.t);
                return Err(SolveError::Step {
                    error,
                    certificate: Box::new(cert),
                });
            }
        }
    }
    cert.objective = p.objective(&cert.x_final).map_err(|e| SolveError::Start(e.into()))?;
    cert.gap_bound = schedule.gap_bound(cert.t_final);
    Ok(cert)
}

/// Certificate file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub t_final: f64,
    pub gap_bound: f64,
    pub iterations: usize,
    pub config: CertificateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<IterationSchedule>,
    pub centering_steps: usize,
    pub x_center: Vec<f64>,
    pub monitor: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl From<&SolveCertificate> for CertificateJson {
    fn from(c: &SolveCertificate) -> Self {
        CertificateJson {
            status: c.status,
            x: c.x_final.data().to_vec(),
            objective: c.objective,
            t_final: c.t_final,
            gap_bound: c.gap_bound,
            iterations: c.iterations,
            config: CertificateConfig {
                beta: c.beta,
                gamma: c.gamma,
                epsilon: c.epsilon,
                nu: c.schedule.map(|s| s.nu),
            },
            schedule: c.schedule,
            centering_steps: c.centering_steps,
            x_center: c.x_center.data().to_vec(),
            monitor: c.monitor.clone(),
        }
    }
}
