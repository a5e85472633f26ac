//! Finite-horizon linear MPC encoded as a canonical inequality LP.
//!
//! Minimizes `sum_k |u_k|_1` over `N` steps of `x_{k+1} = A x_k + B u_k`
//! with fixed endpoints `x_0` and `x_N`. The decision vector is
//!
//! ```text
//! z = [u_0 .. u_{N-1}, x_1 .. x_{N-1}, s_0 .. s_{N-1}]
//! ```
//!
//! where `s_k` are epigraph variables with `|u_k| <= s_k`. Each dynamics
//! equality is relaxed to `|x_{k+1} - A x_k - B u_k| <= relax_margin` so the
//! feasible set has a strict interior, and every variable is boxed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::lp::{self, FeasibleWitness, LpError, LpInstance};

pub const DEFAULT_RELAX_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MpcError {
    #[error("field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("decision vector has length {got}, layout expects {expected}")]
    Length { got: usize, expected: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn schema(field: &str, message: impl Into<String>) -> MpcError {
    MpcError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSpec {
    pub a_dyn: Matrix,
    pub b_dyn: Matrix,
    pub x0: Matrix,
    pub x_n: Matrix,
    pub horizon: usize,
    pub u_bound: f64,
    pub x_bound: f64,
}

impl MpcSpec {
    pub fn validate(&self) -> Result<(), MpcError> {
        let s = self.a_dyn.rows();
        if self.a_dyn.cols() != s || s == 0 {
            return Err(schema("A_dyn", format!("must be square, got {:?}", self.a_dyn.shape())));
        }
        if self.b_dyn.rows() != s || self.b_dyn.cols() == 0 {
            return Err(schema(
                "B_dyn",
                format!("must have {s} rows, got {:?}", self.b_dyn.shape()),
            ));
        }
        if self.x0.shape() != (s, 1) {
            return Err(schema("x0", format!("must have {s} entries")));
        }
        if self.x_n.shape() != (s, 1) {
            return Err(schema("xN", format!("must have {s} entries")));
        }
        if self.horizon < 2 {
            return Err(schema("N", format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(self.u_bound > 0.0 && self.u_bound.is_finite()) {
            return Err(schema("u_bound", "must be positive"));
        }
        if !(self.x_bound > 0.0 && self.x_bound.is_finite()) {
            return Err(schema("x_bound", "must be positive"));
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.a_dyn.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b_dyn.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarRole {
    Input { step: usize, channel: usize },
    State { step: usize, channel: usize },
    AbsSlack { step: usize, channel: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub horizon: usize,
    pub states: usize,
    pub inputs: usize,
    pub x0: Vec<f64>,
    #[serde(rename = "xN")]
    pub x_n: Vec<f64>,
    pub roles: Vec<VarRole>,
}

impl VariableLayout {
    fn new(spec: &MpcSpec) -> Self {
        let (n_steps, s, u) = (spec.horizon, spec.states(), spec.inputs());
        let mut roles = Vec::with_capacity(2 * n_steps * u + (n_steps - 1) * s);
        for step in 0..n_steps {
            for channel in 0..u {
                roles.push(VarRole::Input { step, channel });
            }
        }
        for step in 1..n_steps {
            for channel in 0..s {
                roles.push(VarRole::State { step, channel });
            }
        }
        for step in 0..n_steps {
            for channel in 0..u {
                roles.push(VarRole::AbsSlack { step, channel });
            }
        }
        VariableLayout {
            horizon: n_steps,
            states: s,
            inputs: u,
            x0: spec.x0.data().to_vec(),
            x_n: spec.x_n.data().to_vec(),
            roles,
        }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    /// Decision-vector index of a role.
    pub fn index(&self, role: VarRole) -> Option<usize> {
        let (n_steps, s, u) = (self.horizon, self.states, self.inputs);
        match role {
            VarRole::Input { step, channel } if step < n_steps && channel < u => Some(step * u + channel),
            VarRole::State { step, channel } if (1..n_steps).contains(&step) && channel < s => {
                Some(n_steps * u + (step - 1) * s + channel)
            }
            VarRole::AbsSlack { step, channel } if step < n_steps && channel < u => {
                Some(n_steps * u + (n_steps - 1) * s + step * u + channel)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `N` input vectors.
    pub inputs: Vec<Vec<f64>>,
    /// `N + 1` state vectors, endpoints included.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMpc {
    pub lp: LpInstance,
    pub layout: VariableLayout,
    pub witness: Option<FeasibleWitness>,
}

/// Sparse row builder: `sum coeffs . z <= rhs`.
struct Rows {
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        let start = self.a.len();
        self.a.resize(start + self.n, 0.0);
        for &(j, v) in coeffs {
            self.a[start + j] += v;
        }
        self.b.push(rhs);
    }
}

pub fn encode(spec: &MpcSpec, epsilon: f64, relax_margin: f64) -> Result<EncodedMpc, MpcError> {
    spec.validate()?;
    if !(relax_margin > 0.0 && relax_margin.is_finite()) {
        return Err(schema("relax_margin", "must be positive"));
    }
    let layout = VariableLayout::new(spec);
    let (n_steps, s, u) = (spec.horizon, spec.states(), spec.inputs());
    let n = layout.len();
    let idx = |role| layout.index(role).expect("role within layout");
    let mut rows = Rows {
        n,
        a: Vec::new(),
        b: Vec::new(),
    };

    for step in 0..n_steps {
        for channel in 0..u {
            let ui = idx(VarRole::Input { step, channel });
            let si = idx(VarRole::AbsSlack { step, channel });
            rows.push(&[(ui, 1.0), (si, -1.0)], 0.0);
            rows.push(&[(ui, -1.0), (si, -1.0)], 0.0);
        }
    }

    // x_{k+1} - A x_k - B u_k, split into variable terms and a constant
    for k in 0..n_steps {
        for r in 0..s {
            let mut coeffs = Vec::new();
            let mut constant = 0.0;
            if k + 1 == n_steps {
                constant += spec.x_n.get(r, 0);
            } else {
                coeffs.push((
                    idx(VarRole::State {
                        step: k + 1,
                        channel: r,
                    }),
                    1.0,
                ));
            }
            for c in 0..s {
                let a = spec.a_dyn.get(r, c);
                if k == 0 {
                    constant -= a * spec.x0.get(c, 0);
                } else {
                    coeffs.push((idx(VarRole::State { step: k, channel: c }), -a));
                }
            }
            for c in 0..u {
                coeffs.push((idx(VarRole::Input { step: k, channel: c }), -spec.b_dyn.get(r, c)));
            }
            rows.push(&coeffs, relax_margin - constant);
            let neg: Vec<_> = coeffs.iter().map(|&(j, v)| (j, -v)).collect();
            rows.push(&neg, relax_margin + constant);
        }
    }

    for (j, role) in layout.roles.iter().enumerate() {
        let bound = match role {
            VarRole::State { .. } => spec.x_bound,
            VarRole::Input { .. } | VarRole::AbsSlack { .. } => spec.u_bound,
        };
        rows.push(&[(j, 1.0)], bound);
        rows.push(&[(j, -1.0)], bound);
    }

    let m = rows.b.len();
    let mut c = vec![0.0; n];
    for step in 0..n_steps {
        for channel in 0..u {
            c[idx(VarRole::AbsSlack { step, channel })] = 1.0;
        }
    }
    let lp = LpInstance::new(
        Matrix::new(m, n, rows.a)?,
        Matrix::column(&rows.b)?,
        Matrix::column(&c)?,
        epsilon,
    )?;
    let witness = interpolated_witness(spec, &layout, &lp);
    Ok(EncodedMpc { lp, layout, witness })
}

/// Straight-line state interpolation from `x_0` to `x_N`, inputs from the
/// least-squares solve of `B u_k = x_{k+1} - A x_k`, epigraph variables
/// lifted halfway between `|u|` and the input bound. `None` when that point
/// is not strictly interior.
fn interpolated_witness(spec: &MpcSpec, layout: &VariableLayout, lp: &LpInstance) -> Option<FeasibleWitness> {
    let (n_steps, s, u) = (spec.horizon, spec.states(), spec.inputs());
    let states: Vec<Vec<f64>> = (0..=n_steps)
        .map(|k| {
            let f = k as f64 / n_steps as f64;
            (0..s)
                .map(|r| spec.x0.get(r, 0) + f * (spec.x_n.get(r, 0) - spec.x0.get(r, 0)))
                .collect()
        })
        .collect();
    let bt = linalg::transpose(&spec.b_dyn);
    let gram = linalg::mat_mul(&bt, &spec.b_dyn).ok()?;
    let factor = linalg::chol_factor(&gram).ok()?;
    let mut z = vec![0.0; layout.len()];
    for k in 0..n_steps {
        let xk = Matrix::column(&states[k]).ok()?;
        let target = Matrix::column(&states[k + 1]).ok()?;
        let resid = linalg::mat_sub(&target, &linalg::mat_mul(&spec.a_dyn, &xk).ok()?).ok()?;
        let uk = linalg::chol_solve(&factor, &linalg::mat_mul(&bt, &resid).ok()?).ok()?;
        for channel in 0..u {
            let v = uk.get(channel, 0);
            z[layout.index(VarRole::Input { step: k, channel })?] = v;
            z[layout.index(VarRole::AbsSlack { step: k, channel })?] = 0.5 * (v.abs() + spec.u_bound);
        }
        if k >= 1 {
            for channel in 0..s {
                z[layout.index(VarRole::State { step: k, channel })?] = states[k][channel];
            }
        }
    }
    lp::check_strict_feasibility(lp, &Matrix::column(&z).ok()?).ok()
}

pub fn decode(layout: &VariableLayout, z: &Matrix) -> Result<Trajectory, MpcError> {
    if z.rows() * z.cols() != layout.len() {
        return Err(MpcError::Length {
            got: z.rows() * z.cols(),
            expected: layout.len(),
        });
    }
    let z = z.data();
    let (n_steps, s, u) = (layout.horizon, layout.states, layout.inputs);
    let inputs = (0..n_steps)
        .map(|step| {
            (0..u)
                .map(|channel| z[layout.index(VarRole::Input { step, channel }).unwrap()])
                .collect()
        })
        .collect();
    let mut states = vec![layout.x0.clone()];
    for step in 1..n_steps {
        states.push(
            (0..s)
                .map(|channel| z[layout.index(VarRole::State { step, channel }).unwrap()])
                .collect(),
        );
    }
    states.push(layout.x_n.clone());
    Ok(Trajectory { inputs, states })
}

/// On-disk MPC problem format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcJson {
    #[serde(rename = "A_dyn")]
    pub a_dyn: Vec<Vec<f64>>,
    #[serde(rename = "B_dyn")]
    pub b_dyn: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    #[serde(rename = "xN")]
    pub x_n: Vec<f64>,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub u_bound: f64,
    pub x_bound: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relax_margin: Option<f64>,
}

impl MpcJson {
    pub fn to_spec(&self) -> Result<MpcSpec, MpcError> {
        let rows = |field: &str, v: &[Vec<f64>]| Matrix::from_rows(v).map_err(|e| schema(field, e.to_string()));
        let col = |field: &str, v: &[f64]| Matrix::column(v).map_err(|e| schema(field, e.to_string()));
        let spec = MpcSpec {
            a_dyn: rows("A_dyn", &self.a_dyn)?,
            b_dyn: rows("B_dyn", &self.b_dyn)?,
            x0: col("x0", &self.x0)?,
            x_n: col("xN", &self.x_n)?,
            horizon: self.horizon,
            u_bound: self.u_bound,
            x_bound: self.x_bound,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn encode(&self) -> Result<EncodedMpc, MpcError> {
        encode(
            &self.to_spec()?,
            self.epsilon,
            self.relax_margin.unwrap_or(DEFAULT_RELAX_MARGIN),
        )
    }
}
