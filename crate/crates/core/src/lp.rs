//! Canonical inequality-form LP: minimize `c^T x` subject to `A x <= b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::tolerances::FEAS_MARGIN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("instance has {m} constraints for {n} variables; need at least n + 1")]
    TooFewConstraints { m: usize, n: usize },
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("point is not strictly interior: row {row} has slack {slack:e}")]
    NotStrictlyInterior { row: usize, slack: f64 },
    #[error("random instance needs m >= 3n (n = {n}, m = {m})")]
    BadDimensions { n: usize, m: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `min c^T x  s.t.  A x <= b` with target optimality gap `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpInstance {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    epsilon: f64,
}

impl LpInstance {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, epsilon: f64) -> Result<Self, LpError> {
        let (m, n) = a.shape();
        if b.shape() != (m, 1) {
            return Err(LpError::Schema {
                field: "b".into(),
                message: format!("expected {m} entries, got shape {:?}", b.shape()),
            });
        }
        if c.shape() != (n, 1) {
            return Err(LpError::Schema {
                field: "c".into(),
                message: format!("expected {n} entries, got shape {:?}", c.shape()),
            });
        }
        if n == 0 {
            return Err(LpError::Schema {
                field: "A".into(),
                message: "no variables".into(),
            });
        }
        if m < n + 1 {
            return Err(LpError::TooFewConstraints { m, n });
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(LpError::BadEpsilon(epsilon));
        }
        Ok(LpInstance { a, b, c, epsilon })
    }

    /// The hypercube `|x_i| <= radius` alone, with cost `c`.
    pub fn boxed(c: &[f64], radius: f64, epsilon: f64) -> Result<Self, LpError> {
        let n = c.len();
        let (a, b) = hypercube_rows(n, radius);
        LpInstance::new(a, b, Matrix::column(c)?, epsilon)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of variables.
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Number of constraints.
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, LpError> {
        LpInstance::new(self.a.clone(), self.b.clone(), self.c.clone(), epsilon)
    }

    pub fn with_cost(&self, c: Matrix) -> Result<Self, LpError> {
        LpInstance::new(self.a.clone(), self.b.clone(), c, self.epsilon)
    }

    pub fn objective(&self, x: &Matrix) -> Result<f64, LpError> {
        Ok(linalg::dot(&self.c, x)?)
    }

    /// `b - A x`.
    pub fn slacks(&self, x: &Matrix) -> Result<Matrix, LpError> {
        Ok(linalg::mat_sub(&self.b, &linalg::mat_mul(&self.a, x)?)?)
    }
}

/// A point of the strict interior together with its slacks `b - A x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleWitness {
    pub x: Matrix,
    pub slacks: Matrix,
}

impl FeasibleWitness {
    pub fn min_slack(&self) -> f64 {
        self.slacks.data().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn check_strict_feasibility(p: &LpInstance, x: &Matrix) -> Result<FeasibleWitness, LpError> {
    check_strict_feasibility_with(p, x, FEAS_MARGIN)
}

pub fn check_strict_feasibility_with(p: &LpInstance, x: &Matrix, margin: f64) -> Result<FeasibleWitness, LpError> {
    if x.shape() != (p.n(), 1) {
        return Err(LpError::Linalg(LinalgError::Shape {
            op: "check_strict_feasibility",
            left: (p.n(), 1),
            right: x.shape(),
        }));
    }
    let slacks = p.slacks(x)?;
    if let Some((row, &slack)) = slacks.data().iter().enumerate().find(|(_, s)| !(**s > margin)) {
        return Err(LpError::NotStrictlyInterior { row, slack });
    }
    Ok(FeasibleWitness { x: x.clone(), slacks })
}

/// Rows `x_i <= radius` and `-x_i <= radius`, interleaved per coordinate.
pub fn hypercube_rows(n: usize, radius: f64) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(2 * n, n);
    for i in 0..n {
        a.set(2 * i, i, 1.0);
        a.set(2 * i + 1, i, -1.0);
    }
    let b = Matrix::new(2 * n, 1, vec![radius; 2 * n]).expect("finite radius");
    (a, b)
}

/// Appends the `2n` hypercube rows, making the feasible set bounded.
pub fn add_hypercube(p: &LpInstance, radius: f64) -> Result<LpInstance, LpError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(LpError::Schema {
            field: "radius".into(),
            message: format!("must be positive, got {radius}"),
        });
    }
    let (ha, hb) = hypercube_rows(p.n(), radius);
    LpInstance::new(p.a.vstack(&ha)?, p.b.vstack(&hb)?, p.c.clone(), p.epsilon)
}

/// Target gap used by the random benchmark instances.
pub const SUITE_EPSILON: f64 = 1e-2;
/// Half-width of the bounding hypercube of random instances.
pub const SUITE_RADIUS: f64 = 1.0;

/// Random bounded instance: the unit hypercube followed by `m - 2n` rows
/// with unit-normalized Gaussian directions and right-hand sides drawn in
/// `[0.5, 2.0]`, so the origin is strictly interior. The cost is Gaussian.
pub fn random_instance(n: usize, m: usize, seed: u64) -> Result<(LpInstance, FeasibleWitness), LpError> {
    if n == 0 || m < 3 * n {
        return Err(LpError::BadDimensions { n, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = hypercube_rows(n, SUITE_RADIUS);
    let extra = m - 2 * n;
    let mut rows = Vec::with_capacity(extra * n);
    let mut rhs = Vec::with_capacity(extra);
    for _ in 0..extra {
        let dir = loop {
            let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                break d.into_iter().map(|v| v / norm).collect::<Vec<_>>();
            }
        };
        rows.extend(dir);
        rhs.push(rng.gen_range(0.5..=2.0));
    }
    a = a.vstack(&Matrix::new(extra, n, rows)?)?;
    b = b.vstack(&Matrix::new(extra, 1, rhs)?)?;
    let c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let p = LpInstance::new(a, b, Matrix::column(&c)?, SUITE_EPSILON)?;
    let w = check_strict_feasibility(&p, &Matrix::zeros(n, 1))?;
    Ok((p, w))
}

/// On-disk LP format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl LpJson {
    pub fn from_instance(p: &LpInstance, x0: Option<&Matrix>) -> Self {
        LpJson {
            a: (0..p.m()).map(|r| p.a.row(r).to_vec()).collect(),
            b: p.b.data().to_vec(),
            c: p.c.data().to_vec(),
            epsilon: p.epsilon,
            x0: x0.map(|x| x.data().to_vec()),
        }
    }

    /// Validates shapes with field-level diagnostics.
    pub fn to_instance(&self) -> Result<(LpInstance, Option<Matrix>), LpError> {
        let n = self.c.len();
        for (i, row) in self.a.iter().enumerate() {
            if row.len() != n {
                return Err(LpError::Schema {
                    field: format!("A[{i}]"),
                    message: format!("has {} entries, expected {n} (length of c)", row.len()),
                });
            }
        }
        if self.b.len() != self.a.len() {
            return Err(LpError::Schema {
                field: "b".into(),
                message: format!("has {} entries, expected {} (rows of A)", self.b.len(), self.a.len()),
            });
        }
        let finite = |field: &str, v: &[f64]| -> Result<(), LpError> {
            match v.iter().position(|x| !x.is_finite()) {
                Some(i) => Err(LpError::Schema {
                    field: format!("{field}[{i}]"),
                    message: "not a finite number".into(),
                }),
                None => Ok(()),
            }
        };
        for (i, row) in self.a.iter().enumerate() {
            finite(&format!("A[{i}]"), row)?;
        }
        finite("b", &self.b)?;
        finite("c", &self.c)?;
        let a = Matrix::new(self.a.len(), n, self.a.concat())?;
        let p = LpInstance::new(a, Matrix::column(&self.b)?, Matrix::column(&self.c)?, self.epsilon)?;
        let x0 = match &self.x0 {
            Some(x) if x.len() != n => {
                return Err(LpError::Schema {
                    field: "x0".into(),
                    message: format!("has {} entries, expected {n}", x.len()),
                })
            }
            Some(x) => {
                finite("x0", x)?;
                Some(Matrix::column(x)?)
            }
            None => None,
        };
        Ok((p, x0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn unit1() -> LpInstance {
        LpInstance::new(
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            Matrix::column(&[1.0, 1.0]).unwrap(),
            Matrix::column(&[1.0]).unwrap(),
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn unit_interval_feasibility() {
        let p = unit1();
        let w = check_strict_feasibility(&p, &Matrix::column(&[0.0]).unwrap()).unwrap();
        assert_eq!(w.slacks.data(), &[1.0, 1.0]);
        let err = check_strict_feasibility(&p, &Matrix::column(&[1.0]).unwrap()).unwrap_err();
        assert!(matches!(err, LpError::NotStrictlyInterior { row: 0, .. }));
        let w = check_strict_feasibility(&p, &Matrix::column(&[0.5]).unwrap()).unwrap();
        assert_eq!(w.slacks.data(), &[0.5, 1.5]);
    }

    #[test]
    fn boxed_unit_interval_is_unit1() {
        let p = LpInstance::boxed(&[1.0], 1.0, 0.01).unwrap();
        assert_eq!(p, unit1());
    }

    #[test]
    fn hypercube_adds_2n_rows() {
        let base = LpInstance::new(
            Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 0.5], vec![0.0, -1.0]]).unwrap(),
            Matrix::column(&[1.0, 1.0, 1.0]).unwrap(),
            Matrix::column(&[1.0, 0.0]).unwrap(),
            0.1,
        )
        .unwrap();
        let p = add_hypercube(&base, 5.0).unwrap();
        assert_eq!(p.m(), base.m() + 4);
        let s = p.slacks(&Matrix::zeros(2, 1)).unwrap();
        assert_eq!(&s.data()[3..], &[5.0; 4]);
        assert!(add_hypercube(&base, 0.0).is_err());
    }

    #[test]
    fn too_few_constraints() {
        let err = LpInstance::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Matrix::column(&[1.0, 1.0]).unwrap(),
            Matrix::column(&[1.0, 1.0]).unwrap(),
            0.1,
        )
        .unwrap_err();
        assert_eq!(err, LpError::TooFewConstraints { m: 2, n: 2 });
    }

    #[test]
    fn random_instance_is_deterministic() {
        let (p1, _) = random_instance(2, 6, 42).unwrap();
        let (p2, _) = random_instance(2, 6, 42).unwrap();
        assert_eq!(p1, p2);
        let (p3, _) = random_instance(2, 6, 43).unwrap();
        assert_ne!(p1, p3);
        assert!(matches!(random_instance(3, 8, 0), Err(LpError::BadDimensions { .. })));
    }

    #[test]
    fn json_schema_errors_name_the_field() {
        let mut j = LpJson::from_instance(&unit1(), None);
        j.a[1].push(2.0);
        match j.to_instance() {
            Err(LpError::Schema { field, .. }) => assert_eq!(field, "A[1]"),
            other => panic!("{other:?}"),
        }
        let mut j = LpJson::from_instance(&unit1(), None);
        j.x0 = Some(vec![0.0, 0.0]);
        assert!(matches!(j.to_instance(), Err(LpError::Schema { field, .. }) if field == "x0"));
    }

    #[test]
    fn json_round_trip() {
        let p = unit1();
        let x0 = Matrix::column(&[0.25]).unwrap();
        let text = serde_json::to_string(&LpJson::from_instance(&p, Some(&x0))).unwrap();
        let back: LpJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_instance().unwrap(), (p, Some(x0)));
    }

    proptest! {
        #[test]
        fn random_instances_contain_origin(n in 1usize..5, extra in 0usize..8, seed in any::<u64>()) {
            let m = 3 * n + extra;
            let (p, w) = random_instance(n, m, seed).unwrap();
            prop_assert_eq!(p.m(), m);
            prop_assert!(w.min_slack() >= 0.5);
        }

        #[test]
        fn witness_slacks_are_exact(x in -0.9..0.9f64, y in -0.9..0.9f64, seed in 0u64..50) {
            let (p, _) = random_instance(2, 7, seed).unwrap();
            let pt = Matrix::column(&[x, y]).unwrap();
            let slacks = p.slacks(&pt).unwrap();
            let min = slacks.data().iter().copied().fold(f64::INFINITY, f64::min);
            match check_strict_feasibility(&p, &pt) {
                Ok(w) => { prop_assert!(min > FEAS_MARGIN); prop_assert_eq!(w.slacks, slacks); }
                Err(_) => prop_assert!(min <= FEAS_MARGIN),
            }
        }
    }
}
