//! Brute-force LP optimum by vertex enumeration.
//!
//! For a bounded, nonempty polytope the minimum of a linear function is
//! attained at a vertex. Every `n`-subset of rows is solved as a square
//! system; feasible solutions are vertices. This is deliberately naive and
//! shares nothing with the interior-point code path except [`Matrix`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::lp::LpInstance;
use crate::tolerances::DET_GUARD_REL;

/// Largest supported number of variables.
pub const MAX_VARS: usize = 8;
/// Largest supported number of row subsets.
pub const MAX_SUBSETS: u128 = 1_000_000;
/// Feasibility / tightness tolerance for candidate vertices.
pub const VERTEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no feasible vertex (empty or degenerate polytope)")]
    NoFeasibleVertex,
    #[error("instance too large for enumeration: n = {n}, C(m, n) = {subsets}")]
    GuardExceeded { n: usize, subsets: u128 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub optimum: f64,
    pub argmin: Matrix,
    /// Sorted row indices defining the optimal vertex.
    pub active_set: Vec<usize>,
}

fn binomial(m: usize, n: usize) -> u128 {
    if n > m {
        return 0;
    }
    let k = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / 1024 {
            return u128::MAX;
        }
    }
    acc
}

/// `C(m, n)` guard check shared with callers that want to pre-screen.
pub fn within_guard(p: &LpInstance) -> Result<(), OracleError> {
    let subsets = binomial(p.m(), p.n());
    if p.n() > MAX_VARS || subsets > MAX_SUBSETS {
        return Err(OracleError::GuardExceeded { n: p.n(), subsets });
    }
    Ok(())
}

/// All feasible vertices with their defining row subsets, in lexicographic
/// subset order. Degenerate vertices appear once per defining subset.
pub fn vertices(p: &LpInstance) -> Result<Vec<(Vec<usize>, Matrix)>, OracleError> {
    within_guard(p)?;
    let (m, n) = (p.m(), p.n());
    let a = p.a();
    let b = p.b().data();
    let mut out = Vec::new();
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        if let Some(x) = solve_square(a, b, &subset) {
            if (0..m).all(|i| row_dot(a.row(i), &x) <= b[i] + VERTEX_TOL) {
                out.push((subset.clone(), Matrix::column(&x).expect("finite vertex")));
            }
        }
        if !next_subset(&mut subset, m) {
            break;
        }
    }
    Ok(out)
}

pub fn solve_by_vertex_enumeration(p: &LpInstance) -> Result<OracleResult, OracleError> {
    let c = p.c().data();
    let mut best: Option<OracleResult> = None;
    for (active_set, x) in vertices(p)? {
        let value = row_dot(c, x.data());
        // strict improvement keeps the lexicographically smallest tie
        if best.as_ref().is_none_or(|r| value < r.optimum) {
            best = Some(OracleResult {
                optimum: value,
                argmin: x,
                active_set,
            });
        }
    }
    best.ok_or(OracleError::NoFeasibleVertex)
}

fn row_dot(row: &[f64], x: &[f64]) -> f64 {
    row.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn next_subset(idx: &mut [usize], m: usize) -> bool {
    let n = idx.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if idx[i] < m - n + i {
            idx[i] += 1;
            for j in i + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Gaussian elimination with partial pivoting on the rows in `subset`.
/// Returns `None` when the system is singular relative to its scale.
#[allow(clippy::needless_range_loop)]
fn solve_square(a: &Matrix, b: &[f64], subset: &[usize]) -> Option<Vec<f64>> {
    let n = subset.len();
    let mut m: Vec<Vec<f64>> = subset
        .iter()
        .map(|&r| {
            let mut row = a.row(r).to_vec();
            row.push(b[r]);
            row
        })
        .collect();
    let scale: f64 = m
        .iter()
        .map(|row| row[..n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    if scale == 0.0 {
        return None;
    }
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col] == 0.0 {
            return None;
        }
        m.swap(col, pivot);
        det *= m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for k in col..=n {
                m[r][k] -= f * m[col][k];
            }
        }
    }
    // Hadamard: |det| <= product of row norms
    if det.abs() <= DET_GUARD_REL * scale {
        return None;
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for k in r + 1..n {
            s -= m[r][k] * x[k];
        }
        x[r] = s / m[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{add_hypercube, random_instance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_interval() {
        let p = LpInstance::boxed(&[1.0], 1.0, 0.01).unwrap();
        let r = solve_by_vertex_enumeration(&p).unwrap();
        assert_eq!(r.optimum, -1.0);
        assert_eq!(r.argmin.data(), &[-1.0]);
        assert_eq!(r.active_set, vec![1]);
    }

    #[test]
    fn square_box() {
        let p = LpInstance::boxed(&[1.0, 1.0], 1.0, 0.01).unwrap();
        let r = solve_by_vertex_enumeration(&p).unwrap();
        assert_eq!(r.optimum, -2.0);
        assert_eq!(r.argmin.data(), &[-1.0, -1.0]);
    }

    #[test]
    fn tie_breaks_to_smallest_active_set() {
        // c = (1, 0): every point of the face x = -1 is optimal
        let p = LpInstance::boxed(&[1.0, 0.0], 1.0, 0.01).unwrap();
        let r = solve_by_vertex_enumeration(&p).unwrap();
        assert_eq!(r.optimum, -1.0);
        assert_eq!(r.active_set, vec![1, 2]);
    }

    #[test]
    fn infeasible_polytope() {
        // x <= -1 and -x <= -1 (x >= 1)
        let p = LpInstance::new(
            Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
            Matrix::column(&[-1.0, -1.0]).unwrap(),
            Matrix::column(&[1.0]).unwrap(),
            0.1,
        )
        .unwrap();
        assert_eq!(solve_by_vertex_enumeration(&p), Err(OracleError::NoFeasibleVertex));
    }

    #[test]
    fn guard() {
        let p = LpInstance::boxed(&[1.0; 9], 1.0, 0.1).unwrap();
        assert!(matches!(
            solve_by_vertex_enumeration(&p),
            Err(OracleError::GuardExceeded { n: 9, .. })
        ));
        assert_eq!(binomial(19, 4), 3876);
        assert_eq!(binomial(5, 5), 1);
    }

    /// No random feasible point beats the enumerated optimum.
    #[test]
    fn sampled_points_never_beat_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let (p, _) = random_instance(2, 7, seed).unwrap();
            let r = solve_by_vertex_enumeration(&p).unwrap();
            for i in 0..p.m() {
                let row = p.a().row(i);
                let lhs: f64 = row.iter().zip(r.argmin.data()).map(|(a, x)| a * x).sum();
                assert!(lhs <= p.b().get(i, 0) + 1e-9);
            }
            for &i in &r.active_set {
                let lhs: f64 = p.a().row(i).iter().zip(r.argmin.data()).map(|(a, x)| a * x).sum();
                assert!((lhs - p.b().get(i, 0)).abs() <= 1e-9);
            }
            let mut found = 0;
            while found < 100 {
                let y = Matrix::column(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
                if p.slacks(&y).unwrap().data().iter().all(|s| *s >= 0.0) {
                    assert!(p.objective(&y).unwrap() >= r.optimum - 1e-9);
                    found += 1;
                }
            }
        }
    }

    #[test]
    fn hypercube_bounds_the_optimum() {
        let base = LpInstance::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 1.0], vec![0.5, -1.0]]).unwrap(),
            Matrix::column(&[4.0, 3.0, 2.0]).unwrap(),
            Matrix::column(&[-1.0, -1.0]).unwrap(),
            0.1,
        )
        .unwrap();
        let p = add_hypercube(&base, 2.5).unwrap();
        let all = vertices(&p).unwrap();
        assert!(!all.is_empty());
        for (_, v) in all {
            assert!(v.data().iter().all(|x| x.abs() <= 2.5 + 1e-9));
        }
    }
}
