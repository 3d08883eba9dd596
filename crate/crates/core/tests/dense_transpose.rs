mod common;

use common::{control_source, dense_system, tiny};
use seirdiff_core::sensitivity::{assemble_coeffs, duality, solve_adjoint, solve_tangent};
use seirdiff_core::{simulate, Diffusion, Species};

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |a, b| a.max(b.abs()))
}

#[test]
fn adjoint_equals_dense_transpose_solve() {
    let sc = tiny();
    let (problem, u) = (&sc.problem, &sc.start);
    let traj = simulate(problem, Diffusion::Controls(u)).unwrap();
    let coeffs = assemble_coeffs(problem, &traj).unwrap();
    let adjoint = solve_adjoint(problem, &traj, &coeffs).unwrap();
    let dense = dense_system(problem, &traj, u);
    let lambda = dense.multiplier();
    let dt = problem.time.dt();

    let scale = max_abs(lambda.iter().copied());
    assert!(scale > 1e-3, "degenerate oracle: |λ| = {scale}");
    let mut worst: f64 = 0.0;
    for k in 1..=problem.time.steps() {
        let oracle = dense.unpack(&lambda, k);
        let ours = &adjoint.levels[k - 1];
        for sp in Species::ALL {
            // stored per unit time: p = λ/Δt
            worst = worst.max(max_abs(ours.get(sp).iter().zip(oracle.get(sp)).map(|(a, b)| a * dt - b)));
        }
    }
    assert!(worst <= 1e-10 * scale, "adjoint deviates from dense transpose by {worst:e}");
    assert!(adjoint.levels[problem.time.steps()].min_value() == 0.0);
}

#[test]
fn tangent_and_duality_match_dense_oracle() {
    let sc = tiny();
    let (problem, u) = (&sc.problem, &sc.start);
    let traj = simulate(problem, Diffusion::Controls(u)).unwrap();
    let coeffs = assemble_coeffs(problem, &traj).unwrap();
    let adjoint = solve_adjoint(problem, &traj, &coeffs).unwrap();
    let dense = dense_system(problem, &traj, u);
    let dir = [0.3, -0.7, 0.2, 0.9, -0.4, 0.5, -0.1, 0.8];

    let source = control_source(problem, &traj, u, &dir);
    let tau = dense.tangent(&source);
    let tangent = solve_tangent(problem, &traj, &coeffs, &dir).unwrap();
    let scale = max_abs(tau.iter().copied());
    for k in 1..=problem.time.steps() {
        let oracle = dense.unpack(&tau, k);
        for sp in Species::ALL {
            let err = max_abs(tangent.levels[k].get(sp).iter().zip(oracle.get(sp)).map(|(a, b)| a - b));
            assert!(err <= 1e-10 * scale, "tangent level {k} {sp:?}: {err:e}");
        }
    }

    let oracle_dj = dense.tracking_gradient.dot(&tau);
    let d = duality(problem, &traj, &coeffs, &adjoint, &dir).unwrap();
    assert!((d.tracking - oracle_dj).abs() <= 1e-10 * oracle_dj.abs());
    assert!((d.diffusion - oracle_dj).abs() <= 1e-10 * oracle_dj.abs());
    assert!(d.gap <= 1e-10, "gap {}", d.gap);

    let doubled: Vec<f64> = dir.iter().map(|v| 2.0 * v).collect();
    let d2 = duality(problem, &traj, &coeffs, &adjoint, &doubled).unwrap();
    assert!((d2.tracking - 2.0 * d.tracking).abs() <= 1e-12 * d.tracking.abs());
    assert!((d2.gap - d.gap).abs() <= 1e-10);
}
