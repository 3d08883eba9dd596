#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use seirdiff_core::forward::{assemble_operators, step_residual};
use seirdiff_core::grid::transmissibility_derivative;
use seirdiff_core::model::{expand_controls, expand_direction};
use seirdiff_core::sensitivity::trapezoid_weight;
use seirdiff_core::{ControlVector, Problem, Scenario, ScenarioConfig, Species, StateFields, Trajectory};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load_config(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(config_path(name)).expect("config file");
    ScenarioConfig::from_json(&text).expect("valid config")
}

pub fn load(name: &str) -> Scenario {
    load_config(name).build().expect("buildable config")
}

/// 4 cells on [0, 1], two regions, target on the right half, constant β, 5 steps.
pub fn tiny() -> Scenario {
    let text = r#"{
        "domain": {"extents": [1.0], "cells": [4]},
        "time": {"final_time": 0.5, "steps": 5},
        "regions": [{"min": [0.0], "max": [0.5]}, {"min": [0.5], "max": [1.0]}],
        "control_target": [{"min": [0.5], "max": [1.0]}],
        "parameters": {"sigma": 0.6, "phi_e": 0.15, "phi_r": 0.3,
                       "gamma": [{"start": 0.0, "value": 0.1}, {"start": 0.25, "value": 0.2}]},
        "transmission": {"shape": {"form": "constant"}, "beta_i0": 1.2, "beta_e0": 0.4},
        "kappa_bounds": {"lower": 0.01, "upper": 2.0},
        "initial": {
            "regions": [{"s": 1.0, "e": 0.1, "i": 0.3, "r": 0.0}, {"s": 0.7, "e": 0.0, "i": 0.05, "r": 0.2}],
            "bumps": [{"species": "i", "center": [0.6], "width": 0.2, "amplitude": 0.2}]
        },
        "controls": {
            "lower": {"s": [0.05, 0.05], "e": [0.05, 0.05], "i": [0.05, 0.05], "r": [0.05, 0.05]},
            "upper": {"s": [1.0, 1.0], "e": [1.0, 1.0], "i": [1.0, 1.0], "r": [1.0, 1.0]},
            "initial": {"s": [0.2, 0.7], "e": [0.4, 0.1], "i": [0.9, 0.3], "r": [0.15, 0.5]}
        },
        "cost": {"alpha": 0.1},
        "solver": {"tolerance": 1e-14}
    }"#;
    ScenarioConfig::from_json(text).unwrap().build().unwrap()
}

/// Space-time quantities assembled densely from the step residual.
pub struct DenseSystem {
    /// `∂R/∂Y` for the unknown levels `1..=K`, blocks ordered by level then species then cell.
    pub jacobian: DMatrix<f64>,
    /// `∂J_track/∂Y`.
    pub tracking_gradient: DVector<f64>,
    pub block: usize,
}

impl DenseSystem {
    pub fn index(&self, level: usize, sp: Species, cell: usize) -> usize {
        (level - 1) * self.block + sp.index() * (self.block / 4) + cell
    }

    /// `λ` with `Jᵀ λ = ∂J/∂Y`.
    pub fn multiplier(&self) -> DVector<f64> {
        self.jacobian.transpose().lu().solve(&self.tracking_gradient).expect("nonsingular step Jacobian")
    }

    /// Tangent `−J⁻¹ (∂R/∂u δu)`.
    pub fn tangent(&self, control_source: &DVector<f64>) -> DVector<f64> {
        -self.jacobian.clone().lu().solve(control_source).expect("nonsingular step Jacobian")
    }

    pub fn unpack(&self, v: &DVector<f64>, level: usize) -> StateFields {
        let n = self.block / 4;
        let mut out = StateFields::zeros(n);
        for sp in Species::ALL {
            for c in 0..n {
                out.get_mut(sp)[c] = v[self.index(level, sp, c)];
            }
        }
        out
    }
}

fn perturbed(state: &StateFields, sp: Species, cell: usize, h: f64) -> StateFields {
    let mut s = state.clone();
    s.get_mut(sp)[cell] += h;
    s
}

/// Builds the Jacobian column by column from centered differences of the step
/// residual. With constant β the residual is quadratic, so the differences are
/// exact up to rounding.
pub fn dense_system(problem: &Problem, traj: &Trajectory, u: &ControlVector) -> DenseSystem {
    let n = problem.num_cells();
    let steps = problem.time.steps();
    let block = 4 * n;
    let dim = block * steps;
    let ops = assemble_operators(&problem.domain, &expand_controls(u, &problem.partition).unwrap()).unwrap();
    let h = 1e-3;
    let mut jacobian = DMatrix::zeros(dim, dim);
    let mut sys = DenseSystem {
        jacobian: DMatrix::zeros(0, 0),
        tracking_gradient: DVector::zeros(dim),
        block,
    };
    for k in 0..steps {
        // residual block of step k → k+1 depends on levels k and k+1
        for (level, is_next) in [(k, false), (k + 1, true)] {
            if level == 0 {
                continue;
            }
            for sp in Species::ALL {
                for c in 0..n {
                    let res = |d: f64| {
                        let (cur, next) = if is_next {
                            (traj.level(k).clone(), perturbed(traj.level(k + 1), sp, c, d))
                        } else {
                            (perturbed(traj.level(k), sp, c, d), traj.level(k + 1).clone())
                        };
                        step_residual(problem, &ops, &cur, &next, k)
                    };
                    let (plus, minus) = (res(h), res(-h));
                    let col = sys.index(level, sp, c);
                    for rsp in Species::ALL {
                        for rc in 0..n {
                            let row = k * block + rsp.index() * n + rc;
                            let i = rsp.index();
                            jacobian[(row, col)] = (plus[i][rc] - minus[i][rc]) / (2.0 * h);
                        }
                    }
                }
            }
        }
    }
    let vol = problem.domain.cell_volume();
    let mask = problem.partition.control_mask();
    for k in 1..=steps {
        let w = trapezoid_weight(problem, k);
        let y = traj.level(k);
        for c in (0..n).filter(|&c| mask[c]) {
            let ie = sys.index(k, Species::E, c);
            let ii = sys.index(k, Species::I, c);
            sys.tracking_gradient[ie] = w * vol * y.e[c];
            sys.tracking_gradient[ii] = w * vol * y.i[c];
        }
    }
    sys.jacobian = jacobian;
    sys
}

/// `∂R/∂u δu`: the stiffness derivative applied to the implicit level.
pub fn control_source(problem: &Problem, traj: &Trajectory, u: &ControlVector, direction: &[f64]) -> DVector<f64> {
    let n = problem.num_cells();
    let steps = problem.time.steps();
    let kappa = expand_controls(u, &problem.partition).unwrap();
    let dkappa = expand_direction(direction, &problem.partition);
    let mut out = DVector::zeros(4 * n * steps);
    for k in 0..steps {
        let y = traj.level(k + 1);
        for sp in Species::ALL {
            let dt = transmissibility_derivative(&problem.domain, &kappa[sp.index()], &dkappa[sp.index()]);
            let f = y.get(sp);
            for (face, w) in problem.domain.faces().iter().zip(&dt) {
                let flux = w * (f[face.lo] - f[face.hi]);
                out[k * 4 * n + sp.index() * n + face.lo] += flux;
                out[k * 4 * n + sp.index() * n + face.hi] -= flux;
            }
        }
    }
    out
}
