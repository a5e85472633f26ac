use ipmforge::ipm::{solve, IpmConfig};
use ipmforge::linalg::Matrix;
use ipmforge::mpc::{decode, encode, MpcSpec, Trajectory, DEFAULT_RELAX_MARGIN};
use ipmforge::oracle::solve_by_vertex_enumeration;

fn scalar(a: f64, x0: f64, xn: f64) -> MpcSpec {
    MpcSpec {
        a_dyn: Matrix::from_rows(&[vec![a]]).unwrap(),
        b_dyn: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        x0: Matrix::column(&[x0]).unwrap(),
        x_n: Matrix::column(&[xn]).unwrap(),
        horizon: 2,
        u_bound: 2.0,
        x_bound: 2.0,
    }
}

fn max_dynamics_residual(spec: &MpcSpec, traj: &Trajectory) -> f64 {
    let a = spec.a_dyn.get(0, 0);
    let b = spec.b_dyn.get(0, 0);
    (0..spec.horizon)
        .map(|k| (traj.states[k + 1][0] - a * traj.states[k][0] - b * traj.inputs[k][0]).abs())
        .fold(0.0, f64::max)
}

#[test]
fn oracle_solution_decodes_to_consistent_dynamics() {
    let spec = scalar(1.0, 0.0, 1.0);
    let eps = 1e-2;
    let enc = encode(&spec, eps, DEFAULT_RELAX_MARGIN).unwrap();
    assert_eq!(enc.lp.n(), 5);
    let opt = solve_by_vertex_enumeration(&enc.lp).unwrap();
    assert!((opt.optimum - 1.0).abs() <= 2.0 * DEFAULT_RELAX_MARGIN + 1e-9);
    let traj = decode(&enc.layout, &opt.argmin).unwrap();
    assert_eq!(traj.states.first().unwrap(), &vec![0.0]);
    assert_eq!(traj.states.last().unwrap(), &vec![1.0]);
    assert!(max_dynamics_residual(&spec, &traj) <= 2.0 * (eps + 1e-9));
}

#[test]
fn interior_point_solution_decodes_to_consistent_dynamics() {
    let spec = scalar(0.5, 0.0, 1.0);
    let eps = 1e-2;
    let enc = encode(&spec, eps, DEFAULT_RELAX_MARGIN).unwrap();
    let cert = solve(&enc.lp, enc.witness.as_ref().unwrap(), &IpmConfig::default_config(eps)).unwrap();
    assert!(cert.monitor_clean());
    let opt = solve_by_vertex_enumeration(&enc.lp).unwrap();
    assert!(cert.objective - opt.optimum <= eps);
    let traj = decode(&enc.layout, &cert.x_final).unwrap();
    assert!(max_dynamics_residual(&spec, &traj) <= 2.0 * (eps + 1e-9));
    assert!((traj.inputs[1][0] - 1.0).abs() <= eps);
}

#[test]
fn zero_trajectory_decodes_to_zero_inputs() {
    let spec = scalar(1.0, 0.0, 0.0);
    let enc = encode(&spec, 1e-2, DEFAULT_RELAX_MARGIN).unwrap();
    let traj = decode(&enc.layout, &Matrix::zeros(enc.layout.len(), 1)).unwrap();
    assert!(traj.inputs.iter().flatten().all(|&u| u == 0.0));
    let opt = solve_by_vertex_enumeration(&enc.lp).unwrap();
    assert!(opt.optimum.abs() <= 1e-9);
}
