//! Numerical self-checks of the solver, sensitivities and optimality system.
//!
//! Each check compares a computed quantity with an independent oracle
//! (finite differences, a dense transpose identity, an explicit ODE integrator,
//! a fine-step reference run) and reports the measured values next to their
//! thresholds.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::control::{cost_at, evaluate, CostConfig};
use crate::error::{Error, Result};
use crate::forward::{mass_history, max_relative_drift, simulate, Diffusion, Problem, Trajectory};
use crate::grid::TimeGrid;
use crate::model::{ControlBounds, ControlVector, InitialData, KappaBounds, Species, StateFields};
use crate::scenario::Scenario;
use crate::sensitivity::{assemble_coeffs, duality, solve_adjoint, solve_tangent};

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const DUALITY_TOLERANCE: f64 = 1e-9;
pub const DRIFT_TOLERANCE: f64 = 1e-10;
pub const NEGATIVITY_FLOOR: f64 = -1e-10;
pub const ODE_TOLERANCE: f64 = 1e-5;
pub const HOMOGENEITY_TOLERANCE: f64 = 1e-12;
pub const TANGENT_RATIO: (f64, f64) = (50.0, 200.0);
pub const CONTDEP_RATIO: (f64, f64) = (1.8, 2.2);
pub const ORDER_RANGE: (f64, f64) = (0.8, 1.2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Gradient,
    Duality,
    Conservation,
    Nonnegativity,
    Ode,
    Contdep,
    Tangent,
    Temporal,
    Coefficients,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Gradient,
        Check::Duality,
        Check::Conservation,
        Check::Nonnegativity,
        Check::Ode,
        Check::Contdep,
        Check::Tangent,
        Check::Temporal,
        Check::Coefficients,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Gradient => "gradient",
            Check::Duality => "duality",
            Check::Conservation => "conservation",
            Check::Nonnegativity => "nonnegativity",
            Check::Ode => "ode",
            Check::Contdep => "contdep",
            Check::Tangent => "tangent",
            Check::Temporal => "temporal",
            Check::Coefficients => "coefficients",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown check '{s}'")))
    }
}

/// One measured value and its admissible range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub passed: bool,
}

impl Measurement {
    pub fn at_most(name: impl Into<String>, value: f64, max: f64) -> Self {
        Self::within(name, value, None, Some(max))
    }

    pub fn at_least(name: impl Into<String>, value: f64, min: f64) -> Self {
        Self::within(name, value, Some(min), None)
    }

    pub fn between(name: impl Into<String>, value: f64, range: (f64, f64)) -> Self {
        Self::within(name, value, Some(range.0), Some(range.1))
    }

    fn within(name: impl Into<String>, value: f64, min: Option<f64>, max: Option<f64>) -> Self {
        let passed = value.is_finite() && min.map_or(true, |m| value >= m) && max.map_or(true, |m| value <= m);
        Self {
            name: name.into(),
            value,
            min,
            max,
            passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check: Check,
    pub passed: bool,
    pub measurements: Vec<Measurement>,
    pub details: serde_json::Value,
}

impl CheckReport {
    fn new(check: Check, measurements: Vec<Measurement>, details: serde_json::Value) -> Self {
        Self {
            check,
            passed: measurements.iter().all(|m| m.passed),
            measurements,
            details,
        }
    }
}

/// A control vector with its own box, used for probes that may leave the admissible set.
pub fn probe_controls(regions: usize, values: Vec<f64>) -> Result<ControlVector> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kappa = KappaBounds { lower: lo, upper: hi };
    kappa.validate()?;
    ControlVector::new(ControlBounds::uniform(regions, lo, hi, &kappa)?, values)
}

fn shifted(u: &ControlVector, direction: &[f64], h: f64) -> Result<ControlVector> {
    let vals = u.values().iter().zip(direction).map(|(a, d)| a + h * d).collect();
    probe_controls(u.regions(), vals)
}

/// Random direction with entries `±[0.5, 1]·u_j`, so every control moves proportionally.
pub fn random_direction(u: &ControlVector, rng: &mut impl Rng) -> Vec<f64> {
    u.values()
        .iter()
        .map(|v| {
            let mag = rng.gen_range(0.5..1.0);
            if rng.gen_bool(0.5) {
                mag * v
            } else {
                -mag * v
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub adjoint: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
}

/// Adjoint gradient against per-coordinate centered differences of the cost.
pub fn gradient_check(problem: &Problem, u: &ControlVector, cfg: &CostConfig, eps: f64) -> Result<GradientCheck> {
    let eval = evaluate(problem, u, cfg)?;
    let fd = (0..u.values().len())
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; u.values().len()];
            e[j] = 1.0;
            let plus = cost_at(problem, &shifted(u, &e, eps)?, cfg)?;
            let minus = cost_at(problem, &shifted(u, &e, -eps)?, cfg)?;
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect::<Result<Vec<f64>>>()?;
    let relative_errors: Vec<f64> = eval.gradient.iter().zip(&fd).map(|(a, b)| relative(*a, *b)).collect();
    Ok(GradientCheck {
        max_relative_error: relative_errors.iter().copied().fold(0.0, f64::max),
        adjoint: eval.gradient,
        finite_difference: fd,
        relative_errors,
    })
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Tangent solution against centered differences of the state at two step sizes.
#[derive(Debug, Clone, Serialize)]
pub struct TangentCheck {
    pub steps: [f64; 2],
    pub errors: [f64; 2],
    pub ratio: f64,
}

pub fn tangent_check(problem: &Problem, u: &ControlVector, direction: &[f64], steps: [f64; 2]) -> Result<TangentCheck> {
    let traj = simulate(problem, Diffusion::Controls(u))?;
    let coeffs = assemble_coeffs(problem, &traj)?;
    let tangent = solve_tangent(problem, &traj, &coeffs, direction)?;
    let mut errors = [0.0; 2];
    for (err, &eps) in errors.iter_mut().zip(&steps) {
        let plus = simulate(problem, Diffusion::Controls(&shifted(u, direction, eps)?))?;
        let minus = simulate(problem, Diffusion::Controls(&shifted(u, direction, -eps)?))?;
        for (k, t) in tangent.levels.iter().enumerate() {
            for sp in Species::ALL {
                let (a, b, d) = (plus.level(k).get(sp), minus.level(k).get(sp), t.get(sp));
                for c in 0..a.len() {
                    *err = f64::max(*err, ((a[c] - b[c]) / (2.0 * eps) - d[c]).abs());
                }
            }
        }
    }
    Ok(TangentCheck {
        steps,
        errors,
        ratio: errors[0] / errors[1],
    })
}

/// Largest deviation from the structural coefficient identities over all cells and levels.
pub fn coefficient_violation(problem: &Problem, traj: &Trajectory) -> Result<f64> {
    let coeffs = assemble_coeffs(problem, traj)?;
    let p = &problem.params;
    let mut worst: f64 = 0.0;
    for (k, f) in coeffs.levels().iter().enumerate() {
        let gamma = p.gamma.eval(problem.time.time(k));
        for c in 0..problem.num_cells() {
            let pairs = [
                (f.a[1][c], -f.a[0][c]),
                (f.c[1][c], -f.c[0][c]),
                (f.b[1][c], -f.b[0][c] + p.sigma + p.phi_e),
                (f.d[1][c], -f.d[0][c] - gamma),
                (f.a[2][c], 0.0),
                (f.b[2][c], -p.sigma),
                (f.c[2][c], p.phi_r),
                (f.d[2][c], 0.0),
                (f.a[3][c], 0.0),
                (f.b[3][c], -p.phi_e),
                (f.c[3][c], -p.phi_r),
                (f.d[3][c], gamma),
            ];
            for (a, b) in pairs {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Spatially homogeneous copy of the problem: each species replaced by its mean.
pub fn homogenized(problem: &Problem) -> Result<Problem> {
    if problem.rates.multiplier.is_some() {
        return Err(Error::Usage("the ODE reduction needs a spatially uniform transmission rate".into()));
    }
    let init = problem.initial.fields();
    let measure = problem.domain.measure();
    let mut fields = StateFields::zeros(problem.num_cells());
    for sp in Species::ALL {
        let mean = problem.domain.integrate(init.get(sp), None) / measure;
        fields.get_mut(sp).iter_mut().for_each(|v| *v = mean);
    }
    Ok(Problem {
        initial: InitialData::new(fields)?,
        ..problem.clone()
    })
}

/// Classical RK4 for the space-free system, restarted at every `γ` breakpoint.
pub fn ode_reference(problem: &Problem, y0: [f64; 4], substeps: usize) -> [f64; 4] {
    let p = &problem.params;
    let rhs = |t: f64, y: [f64; 4], gamma: f64| {
        let n = y.iter().sum();
        let (bi, be) = problem.rates.eval_cell(0, t, n);
        let g = bi * y[2] + be * y[1];
        [
            -g * y[0] + gamma * y[3],
            g * y[0] - (p.sigma + p.phi_e) * y[1],
            p.sigma * y[1] - p.phi_r * y[2],
            p.phi_r * y[2] + p.phi_e * y[1] - gamma * y[3],
        ]
    };
    let tf = problem.time.final_time();
    let mut cuts: Vec<f64> = p.gamma.entries.iter().map(|e| e.start).filter(|&s| s > 0.0 && s < tf).collect();
    cuts.insert(0, 0.0);
    cuts.push(tf);
    let mut y = y0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        // value on (a, b]
        let gamma = p.gamma.eval(0.5 * (a + b));
        let count = ((substeps as f64 * (b - a) / tf).ceil() as usize).max(1);
        let h = (b - a) / count as f64;
        for k in 0..count {
            let t = a + k as f64 * h;
            let add = |y: [f64; 4], d: [f64; 4], s: f64| std::array::from_fn::<f64, 4, _>(|q| y[q] + s * d[q]);
            let k1 = rhs(t, y, gamma);
            let k2 = rhs(t + 0.5 * h, add(y, k1, 0.5 * h), gamma);
            let k3 = rhs(t + 0.5 * h, add(y, k2, 0.5 * h), gamma);
            let k4 = rhs(t + h, add(y, k3, h), gamma);
            y = std::array::from_fn(|q| y[q] + h / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]));
        }
    }
    y
}

#[derive(Debug, Clone, Serialize)]
pub struct OdeCheck {
    pub simulated: [f64; 4],
    pub reference: [f64; 4],
    pub relative_error: f64,
    /// Largest cell-to-cell spread relative to the field size, over all levels.
    pub inhomogeneity: f64,
}

pub fn ode_check(problem: &Problem, u: &ControlVector) -> Result<OdeCheck> {
    let problem = homogenized(problem)?;
    let traj = simulate(&problem, Diffusion::Controls(u))?;
    let mut inhomogeneity: f64 = 0.0;
    for level in traj.levels() {
        for sp in Species::ALL {
            let f = level.get(sp);
            let hi = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
            let scale = hi.abs().max(lo.abs());
            if scale > 0.0 {
                inhomogeneity = inhomogeneity.max((hi - lo) / scale);
            }
        }
    }
    let y0 = problem.initial.fields();
    let reference = ode_reference(&problem, [y0.s[0], y0.e[0], y0.i[0], y0.r[0]], 200_000);
    let last = traj.final_state();
    let simulated = [last.s[0], last.e[0], last.i[0], last.r[0]];
    let scale = reference.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let diff = simulated.iter().zip(&reference).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(OdeCheck {
        simulated,
        reference,
        relative_error: if scale > 0.0 { diff / scale } else { diff },
        inhomogeneity,
    })
}

/// Discrete `L²(0,T; H¹)` norm of the difference of two trajectories.
pub fn trajectory_distance(problem: &Problem, a: &Trajectory, b: &Trajectory) -> f64 {
    let weights = problem.domain.geometry_weights();
    let dt = problem.time.dt();
    let mut total = 0.0;
    for k in 1..a.levels().len() {
        for sp in Species::ALL {
            let d: Vec<f64> = a.level(k).get(sp).iter().zip(b.level(k).get(sp)).map(|(x, y)| x - y).collect();
            let l2: f64 = problem.domain.integrate(&d.iter().map(|v| v * v).collect::<Vec<_>>(), None);
            total += dt * (l2 + problem.domain.grad_pairing(&weights, &d, &d));
        }
    }
    total.sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityCheck {
    pub sizes: [f64; 3],
    pub distances: [f64; 3],
    pub ratios: [f64; 2],
}

/// Trajectory distance for perturbations `h, h/2, h/4` along `direction` (unit max norm).
pub fn continuity_check(problem: &Problem, u: &ControlVector, direction: &[f64], h: f64) -> Result<ContinuityCheck> {
    let base = simulate(problem, Diffusion::Controls(u))?;
    let norm = direction.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if norm == 0.0 {
        return Err(Error::Usage("perturbation direction is zero".into()));
    }
    let unit: Vec<f64> = direction.iter().map(|v| v / norm).collect();
    let sizes = [h, h / 2.0, h / 4.0];
    let mut distances = [0.0; 3];
    for (d, &s) in distances.iter_mut().zip(&sizes) {
        let pert = simulate(problem, Diffusion::Controls(&shifted(u, &unit, s)?))?;
        *d = trajectory_distance(problem, &pert, &base);
    }
    Ok(ContinuityCheck {
        sizes,
        distances,
        ratios: [distances[0] / distances[1], distances[1] / distances[2]],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TemporalCheck {
    pub reference_steps: usize,
    pub steps: Vec<usize>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
}

/// Final-time `L²` errors against a fine-step run, and the observed orders.
pub fn temporal_check(
    problem: &Problem,
    diffusion: Diffusion<'_>,
    reference_steps: usize,
    steps: &[usize],
) -> Result<TemporalCheck> {
    let tf = problem.time.final_time();
    let run = |k: usize| simulate(&problem.with_time(TimeGrid::new(tf, k)?), diffusion);
    let reference = run(reference_steps)?;
    let errors = steps
        .par_iter()
        .map(|&k| {
            let traj = run(k)?;
            let mut sq = 0.0;
            for sp in Species::ALL {
                let d: Vec<f64> = traj
                    .final_state()
                    .get(sp)
                    .iter()
                    .zip(reference.final_state().get(sp))
                    .map(|(a, b)| (a - b) * (a - b))
                    .collect();
                sq += problem.domain.integrate(&d, None);
            }
            Ok(sq.sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let orders = errors
        .windows(2)
        .zip(steps.windows(2))
        .map(|(e, k)| (e[0] / e[1]).ln() / (k[1] as f64 / k[0] as f64).ln())
        .collect();
    Ok(TemporalCheck {
        reference_steps,
        steps: steps.to_vec(),
        errors,
        orders,
    })
}

/// Runs one check on a scenario, using its starting controls.
pub fn run(scenario: &Scenario, check: Check) -> Result<CheckReport> {
    let sc = scenario.with_solver_tolerance(scenario.verify.solver_tolerance);
    let problem = &sc.problem;
    let u = &sc.start;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let report = match check {
        Check::Gradient => {
            let g = gradient_check(problem, u, &sc.cost, sc.verify.fd_step)?;
            let m = vec![Measurement::at_most("max_relative_error", g.max_relative_error, GRADIENT_TOLERANCE)];
            CheckReport::new(check, m, json!({ "fd_step": sc.verify.fd_step, "gradient": g }))
        }
        Check::Duality => {
            let dir = random_direction(u, &mut rng);
            let traj = simulate(problem, Diffusion::Controls(u))?;
            let coeffs = assemble_coeffs(problem, &traj)?;
            let adjoint = solve_adjoint(problem, &traj, &coeffs)?;
            let d = duality(problem, &traj, &coeffs, &adjoint, &dir)?;
            let m = vec![Measurement::at_most("relative_gap", d.gap, DUALITY_TOLERANCE)];
            CheckReport::new(
                check,
                m,
                json!({ "direction": dir, "tracking_side": d.tracking, "diffusion_side": d.diffusion }),
            )
        }
        Check::Conservation | Check::Nonnegativity => {
            let traj = simulate(problem, sc.diffusion())?;
            let masses = mass_history(&problem.domain, &traj);
            let drift = max_relative_drift(&masses);
            let m = if check == Check::Conservation {
                vec![Measurement::at_most("max_relative_drift", drift, DRIFT_TOLERANCE)]
            } else {
                vec![Measurement::at_least("min_value", traj.min_value(), NEGATIVITY_FLOOR)]
            };
            CheckReport::new(
                check,
                m,
                json!({
                    "initial_mass": masses[0],
                    "final_mass": masses[masses.len() - 1],
                    "max_relative_drift": drift,
                    "min_value": traj.min_value(),
                    "dt": problem.time.dt(),
                    "dt_safe": problem.dt_safe(),
                }),
            )
        }
        Check::Ode => {
            let o = ode_check(problem, u)?;
            let m = vec![
                Measurement::at_most("relative_error", o.relative_error, ODE_TOLERANCE),
                Measurement::at_most("inhomogeneity", o.inhomogeneity, HOMOGENEITY_TOLERANCE),
            ];
            CheckReport::new(check, m, json!({ "steps": problem.time.steps(), "ode": o }))
        }
        Check::Contdep => {
            let dir = random_direction(u, &mut rng);
            let c = continuity_check(problem, u, &dir, sc.verify.perturbation)?;
            let m = vec![
                Measurement::between("ratio_h_over_h2", c.ratios[0], CONTDEP_RATIO),
                Measurement::between("ratio_h2_over_h4", c.ratios[1], CONTDEP_RATIO),
            ];
            CheckReport::new(check, m, json!(c))
        }
        Check::Tangent => {
            let dir = random_direction(u, &mut rng);
            let t = tangent_check(problem, u, &dir, [1e-3, 1e-4])?;
            let m = vec![Measurement::between("error_ratio", t.ratio, TANGENT_RATIO)];
            CheckReport::new(check, m, json!(t))
        }
        Check::Temporal => {
            let t = temporal_check(problem, sc.diffusion(), 4096, &[64, 128, 256])?;
            let m = t
                .orders
                .iter()
                .enumerate()
                .map(|(k, o)| Measurement::between(format!("order_{k}"), *o, ORDER_RANGE))
                .collect();
            CheckReport::new(check, m, json!(t))
        }
        Check::Coefficients => {
            let traj = simulate(problem, Diffusion::Controls(u))?;
            let v = coefficient_violation(problem, &traj)?;
            CheckReport::new(check, vec![Measurement::at_most("max_violation", v, 0.0)], json!({}))
        }
    };
    Ok(report)
}
