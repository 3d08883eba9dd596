mod common;

use seirdiff_core::control::{cost_at, optimize, random_admissible};
use seirdiff_core::forward::{mass_history, max_relative_drift};
use seirdiff_core::model::{InitialData, StateFields};
use seirdiff_core::{simulate, Diffusion, Problem, ScenarioConfig, Species};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SHIPPED: [&str; 4] = ["demo.json", "gradient_1d.json", "ode.json", "zero_infection.json"];

#[test]
fn shipped_configs_build_and_echo_round_trips() {
    for name in SHIPPED {
        let cfg = common::load_config(name);
        let sc = cfg.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(sc.warnings.is_empty(), "{name}: {:?}", sc.warnings);
        let echo = cfg.echo();
        let again = ScenarioConfig::from_json(&echo).unwrap();
        assert_eq!(again.echo(), echo, "{name}");
    }
}

#[test]
fn zero_initial_data_gives_zero_trajectory_and_mass() {
    let sc = common::load("gradient_1d.json");
    let problem = Problem {
        initial: InitialData::new(StateFields::zeros(sc.problem.num_cells())).unwrap(),
        ..sc.problem.clone()
    };
    let traj = simulate(&problem, Diffusion::Controls(&sc.start)).unwrap();
    assert!(traj.levels().iter().all(|l| l.min_value() == 0.0 && l.n().iter().all(|v| *v == 0.0)));
    assert!(mass_history(&problem.domain, &traj).iter().all(|m| *m == 0.0));
}

#[test]
fn swapping_species_in_initial_data_keeps_mass_history() {
    let sc = common::load("demo.json");
    let traj = simulate(&sc.problem, Diffusion::Controls(&sc.start)).unwrap();
    let mut swapped = sc.problem.initial.fields().clone();
    std::mem::swap(&mut swapped.s, &mut swapped.r);
    let problem = Problem {
        initial: InitialData::new(swapped).unwrap(),
        ..sc.problem.clone()
    };
    let other = simulate(&problem, Diffusion::Controls(&sc.start)).unwrap();
    let (a, b) = (mass_history(&sc.problem.domain, &traj), mass_history(&problem.domain, &other));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * x.abs());
    }
}

#[test]
fn state_dependent_mode_conserves_mass_and_stays_bounded() {
    let mut cfg = common::load_config("demo.json");
    cfg.diffusion = serde_json::from_str(
        r#"{"mode": "nonlinear",
            "kappa": {"s": {"form": "saturating", "low": 0.01, "high": 0.08, "n_half": 0.5},
                      "e": {"form": "constant", "value": 0.02},
                      "i": {"form": "constant", "value": 0.01},
                      "r": {"form": "saturating", "low": 0.005, "high": 0.05, "n_half": 1.0}},
            "picard": {"max_iterations": 5}}"#,
    )
    .unwrap();
    let sc = cfg.build().unwrap();
    let traj = simulate(&sc.problem, sc.diffusion()).unwrap();
    assert!(max_relative_drift(&mass_history(&sc.problem.domain, &traj)) <= 1e-10);
    assert!(traj.min_value() >= -1e-10);
    let init_sup = sc.problem.initial.fields().n().into_iter().fold(0.0, f64::max);
    for level in traj.levels() {
        for sp in Species::ALL {
            assert!(level.get(sp).iter().all(|v| *v <= 4.0 * init_sup));
        }
    }
}

#[test]
fn zero_infection_drives_controls_to_lower_bounds() {
    let sc = common::load("zero_infection.json");
    let (u, report) = optimize(&sc.problem, &sc.bounds, &sc.cost, &sc.optimizer, None, sc.seed).unwrap();
    assert!(report.converged);
    assert_eq!(u.values(), sc.bounds.lower());
}

#[test]
fn demo_optimum_is_stationary_and_beats_random_controls() {
    let sc = common::load("demo.json");
    let (u, report) = optimize(&sc.problem, &sc.bounds, &sc.cost, &sc.optimizer, None, sc.seed).unwrap();
    assert!(report.converged && report.residual <= 1e-6);
    assert!(report.variational_min >= -1e-8, "{}", report.variational_min);
    assert!(report.history.windows(2).all(|w| w[1].cost <= w[0].cost));
    for (k, t) in report.targets.iter().enumerate() {
        assert!((u.values()[k] - t).abs() <= 1e-6);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let v = random_admissible(&sc.bounds, &mut rng);
        assert!(report.cost <= cost_at(&sc.problem, &v, &sc.cost).unwrap());
    }
}
