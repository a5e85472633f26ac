//! Instance-specialized kernels: IR, contracts, an interpreter and C
//! rendering.

pub mod contract;
pub mod interp;
pub mod ir;
pub mod render_c;
pub mod specialize;

use thiserror::Error;

pub use contract::{parse_sidecar_json, render_sidecar_json, ContractSidecar, SidecarError};
pub use interp::{interpret, CheckedOptions, ContractViolation, ExecMode, InterpError, KernelRun};
pub use ir::{KernelError, KernelProgram, KERNEL_SCHEMA_VERSION};
pub use render_c::render_c;
pub use specialize::{specialize, SpecializeOptions, DEFAULT_ELEM_SPLIT_THRESHOLD};

use crate::barrier::{self, BarrierError};
use crate::ipm::{analytic_center, build_schedule, CenteringError, ConfigError, IpmConfig, ScheduleError};
use crate::lp::{FeasibleWitness, LpInstance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("starting point: {0}")]
    Start(#[from] BarrierError),
    #[error(transparent)]
    Centering(#[from] CenteringError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Generated artifacts for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltKernel {
    pub kernel: KernelProgram,
    pub sidecar: ContractSidecar,
    pub centering_steps: usize,
}

/// Centers from `start`, fixes the iteration schedule and specializes.
pub fn build_kernel(
    p: &LpInstance,
    start: &FeasibleWitness,
    cfg: &IpmConfig,
    opts: SpecializeOptions,
) -> Result<BuiltKernel, BuildError> {
    cfg.validate()?;
    barrier::eval_barrier_with(p, &start.x, cfg.tol.feas_margin)?;
    let center = analytic_center(p, start, cfg)?;
    let schedule = build_schedule(p, &center.eval, cfg)?;
    let (kernel, sidecar) = specialize(p, cfg, &schedule, &center.x, opts);
    Ok(BuiltKernel {
        kernel,
        sidecar,
        centering_steps: center.steps,
    })
}

pub fn render_kernel_json(k: &KernelProgram) -> String {
    serde_json::to_string_pretty(k).expect("kernel serializes")
}

/// Parses and validates a kernel document.
pub fn parse_kernel_json(text: &str) -> Result<KernelProgram, KernelError> {
    let k: KernelProgram =
        serde_json::from_str(text).map_err(|e| KernelError::IllFormed(format!("kernel JSON: {e}")))?;
    if k.version != KERNEL_SCHEMA_VERSION {
        return Err(KernelError::IllFormed(format!(
            "unsupported kernel version {} (expected {KERNEL_SCHEMA_VERSION})",
            k.version
        )));
    }
    k.validate()?;
    Ok(k)
}
