//! Backward-Euler time stepping of the four-compartment system.
//!
//! One step `k → k+1` solves, species by species,
//!
//! ```text
//! s: vol[(s'−s)/Δt + G s' − γ' r] + K_s s' = 0          G = β_i(n)i + β_e(n)e
//! e: vol[(e'−e)/Δt − G s' + (σ+φ_e) e'] + K_e e' = 0
//! i: vol[(i'−i)/Δt + φ_r i' − σ e'] + K_i i' = 0
//! r: vol[(r'−r)/Δt − φ_r i' − φ_e e' + γ' r] + K_r r' = 0
//! ```
//!
//! where unprimed values are at level `k`, `β` is evaluated at `n^k` and
//! `γ' = γ(t_{k+1})`. Every reaction term appears in exactly two equations with
//! opposite signs and the stiffness matrices have zero column sums, so the
//! total population is conserved up to the linear-solver residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assemble_diffusion, DiffusionOperator, Domain, SubdomainPartition, TimeGrid};
use crate::linalg::{solve_shifted, SolverOptions};
use crate::model::{
    expand_controls, ControlVector, InitialData, NonlinearDiffusion, Parameters, Species, StateFields,
    TransmissionRate,
};

/// Fields below this value are reported as negative.
pub const NEGATIVITY_TOLERANCE: f64 = -1e-10;

/// Everything except the diffusion coefficients.
#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: Domain,
    pub partition: SubdomainPartition,
    pub time: TimeGrid,
    pub params: Parameters,
    pub rates: TransmissionRate,
    pub initial: InitialData,
    pub solver: SolverOptions,
}

impl Problem {
    pub fn num_cells(&self) -> usize {
        self.domain.num_cells()
    }

    /// Heuristic positivity step bound `0.5/(β*·n_max + σ + φ_e + φ_r + γ*)`.
    pub fn dt_safe(&self) -> f64 {
        let n_max = self.initial.fields().n().into_iter().fold(0.0, f64::max);
        let p = &self.params;
        0.5 / (self.rates.bound() * n_max + p.sigma + p.phi_e + p.phi_r + p.gamma.bound())
    }

    pub fn with_time(&self, time: TimeGrid) -> Self {
        Self { time, ..self.clone() }
    }

    pub fn with_solver(&self, solver: SolverOptions) -> Self {
        Self { solver, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardOptions {
    #[serde(default = "default_picard_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_picard_tolerance")]
    pub tolerance: f64,
}

fn default_picard_iterations() -> usize {
    20
}

fn default_picard_tolerance() -> f64 {
    1e-10
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iterations: default_picard_iterations(),
            tolerance: default_picard_tolerance(),
        }
    }
}

/// Source of the diffusion coefficients for a run.
#[derive(Debug, Clone, Copy)]
pub enum Diffusion<'a> {
    /// Piecewise-constant, time-independent coefficients from a control vector.
    Controls(&'a ControlVector),
    /// `κ(n)` evaluated at the previous level, optionally refined by Picard iteration.
    StateDependent {
        kappa: &'a NonlinearDiffusion,
        picard: Option<PicardOptions>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FixedControls,
    StateDependent,
}

/// States at all `K + 1` time levels.
#[derive(Debug, Clone)]
pub struct Trajectory {
    levels: Vec<StateFields>,
    time: TimeGrid,
    mode: Mode,
    controls: Option<ControlVector>,
    min_value: f64,
    linear_iterations: usize,
}

impl Trajectory {
    pub fn levels(&self) -> &[StateFields] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &StateFields {
        &self.levels[k]
    }

    pub fn final_state(&self) -> &StateFields {
        self.levels.last().expect("trajectory has at least one level")
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn dt(&self) -> f64 {
        self.time.dt()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Controls used in fixed-coefficient mode.
    pub fn controls(&self) -> Option<&ControlVector> {
        self.controls.as_ref()
    }

    /// Smallest field value over all species and levels.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    /// Set when some value dropped below [`NEGATIVITY_TOLERANCE`].
    pub fn negativity_warning(&self) -> bool {
        self.min_value < NEGATIVITY_TOLERANCE
    }

    /// Total conjugate-gradient iterations spent on the run.
    pub fn linear_iterations(&self) -> usize {
        self.linear_iterations
    }

    #[cfg(test)]
    pub(crate) fn with_levels(self, levels: Vec<StateFields>) -> Self {
        Self { levels, ..self }
    }
}

/// Per-cell reaction data frozen at the start of a step.
#[derive(Debug, Clone)]
pub(crate) struct Incidence {
    pub beta_i: Vec<f64>,
    pub beta_e: Vec<f64>,
    /// `β_i(n) i + β_e(n) e`.
    pub force: Vec<f64>,
}

pub(crate) fn incidence(rates: &TransmissionRate, t: f64, state: &StateFields) -> Incidence {
    let (beta_i, beta_e) = rates.eval(t, &state.n());
    let force = (0..state.num_cells())
        .map(|c| beta_i[c] * state.i[c] + beta_e[c] * state.e[c])
        .collect();
    Incidence { beta_i, beta_e, force }
}

/// Assembles the four operators from per-species coefficient fields.
pub fn assemble_operators(domain: &Domain, kappa: &[Vec<f64>; 4]) -> Result<[DiffusionOperator; 4]> {
    Ok([
        assemble_diffusion(domain, &kappa[0])?,
        assemble_diffusion(domain, &kappa[1])?,
        assemble_diffusion(domain, &kappa[2])?,
        assemble_diffusion(domain, &kappa[3])?,
    ])
}

/// Advances `current` (level `step`) by one backward-Euler step.
pub fn step_forward(
    problem: &Problem,
    ops: &[DiffusionOperator; 4],
    current: &StateFields,
    step: usize,
) -> Result<StateFields> {
    step_forward_counted(problem, ops, current, step).map(|(s, _)| s)
}

fn step_forward_counted(
    problem: &Problem,
    ops: &[DiffusionOperator; 4],
    current: &StateFields,
    step: usize,
) -> Result<(StateFields, usize)> {
    let n = current.num_cells();
    if !current.is_finite() {
        return Err(Error::Domain(format!("non-finite state entering step {step}")));
    }
    let dt = problem.time.dt();
    let vol = problem.domain.cell_volume();
    let t_old = problem.time.time(step);
    let gamma = problem.params.gamma.eval(problem.time.time(step + 1));
    let p = &problem.params;
    let inc = incidence(&problem.rates, t_old, current);

    let mut next = current.clone();
    let mut iterations = 0;
    let mut solve = |sp: Species, shift: Vec<f64>, rhs: Vec<f64>, x: &mut Vec<f64>| -> Result<()> {
        // reaction-only guess; exact when the field is spatially constant
        for ((xi, b), d) in x.iter_mut().zip(&rhs).zip(&shift) {
            *xi = b / d;
        }
        let stats = solve_shifted(&ops[sp.index()], &shift, &rhs, x, &problem.solver, || {
            format!("{}-equation, step {step}", sp.name())
        })?;
        iterations += stats.iterations;
        Ok(())
    };

    let shift: Vec<f64> = inc.force.iter().map(|g| vol * (1.0 / dt + g)).collect();
    let rhs: Vec<f64> = (0..n).map(|c| vol * (current.s[c] / dt + gamma * current.r[c])).collect();
    solve(Species::S, shift, rhs, &mut next.s)?;

    let shift = vec![vol * (1.0 / dt + p.sigma + p.phi_e); n];
    let rhs: Vec<f64> = (0..n).map(|c| vol * (current.e[c] / dt + inc.force[c] * next.s[c])).collect();
    solve(Species::E, shift, rhs, &mut next.e)?;

    let shift = vec![vol * (1.0 / dt + p.phi_r); n];
    let rhs: Vec<f64> = (0..n).map(|c| vol * (current.i[c] / dt + p.sigma * next.e[c])).collect();
    solve(Species::I, shift, rhs, &mut next.i)?;

    let shift = vec![vol / dt; n];
    let rhs: Vec<f64> = (0..n)
        .map(|c| vol * (current.r[c] / dt - gamma * current.r[c] + p.phi_r * next.i[c] + p.phi_e * next.e[c]))
        .collect();
    solve(Species::R, shift, rhs, &mut next.r)?;

    Ok((next, iterations))
}

/// Residual of the discrete step equations for a candidate `next` state.
///
/// Returns `[R_s, R_e, R_i, R_r]`; it vanishes (to solver tolerance) for the
/// state produced by [`step_forward`].
pub fn step_residual(
    problem: &Problem,
    ops: &[DiffusionOperator; 4],
    current: &StateFields,
    next: &StateFields,
    step: usize,
) -> [Vec<f64>; 4] {
    let n = current.num_cells();
    let dt = problem.time.dt();
    let vol = problem.domain.cell_volume();
    let gamma = problem.params.gamma.eval(problem.time.time(step + 1));
    let p = &problem.params;
    let inc = incidence(&problem.rates, problem.time.time(step), current);

    let mut res: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for c in 0..n {
        let infection = inc.force[c] * next.s[c];
        res[0][c] = vol * ((next.s[c] - current.s[c]) / dt + infection - gamma * current.r[c]);
        res[1][c] = vol * ((next.e[c] - current.e[c]) / dt - infection + (p.sigma + p.phi_e) * next.e[c]);
        res[2][c] = vol * ((next.i[c] - current.i[c]) / dt + p.phi_r * next.i[c] - p.sigma * next.e[c]);
        res[3][c] = vol
            * ((next.r[c] - current.r[c]) / dt - p.phi_r * next.i[c] - p.phi_e * next.e[c]
                + gamma * current.r[c]);
    }
    for sp in Species::ALL {
        ops[sp.index()].add_stiffness(next.get(sp), &mut res[sp.index()]);
    }
    res
}

/// Runs the full time integration.
pub fn simulate(problem: &Problem, diffusion: Diffusion<'_>) -> Result<Trajectory> {
    let steps = problem.time.steps();
    let mut levels = Vec::with_capacity(steps + 1);
    levels.push(problem.initial.fields().clone());
    let mut min_value = levels[0].min_value();
    let mut linear_iterations = 0;

    let (mode, controls) = match diffusion {
        Diffusion::Controls(u) => {
            let ops = assemble_operators(&problem.domain, &expand_controls(u, &problem.partition)?)?;
            for k in 0..steps {
                let (next, its) = step_forward_counted(problem, &ops, &levels[k], k)?;
                linear_iterations += its;
                min_value = min_value.min(next.min_value());
                levels.push(next);
            }
            (Mode::FixedControls, Some(u.clone()))
        }
        Diffusion::StateDependent { kappa, picard } => {
            for k in 0..steps {
                let lagged = kappa_fields(kappa, &levels[k]);
                let ops = assemble_operators(&problem.domain, &lagged)?;
                let (mut next, its) = step_forward_counted(problem, &ops, &levels[k], k)?;
                linear_iterations += its;
                if let Some(opts) = picard {
                    for _ in 0..opts.max_iterations {
                        let ops = assemble_operators(&problem.domain, &kappa_fields(kappa, &next))?;
                        let (candidate, its) = step_forward_counted(problem, &ops, &levels[k], k)?;
                        linear_iterations += its;
                        let change = candidate
                            .n()
                            .iter()
                            .zip(next.n())
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        next = candidate;
                        if change <= opts.tolerance {
                            break;
                        }
                    }
                }
                min_value = min_value.min(next.min_value());
                levels.push(next);
            }
            (Mode::StateDependent, None)
        }
    };

    Ok(Trajectory {
        levels,
        time: problem.time,
        mode,
        controls,
        min_value,
        linear_iterations,
    })
}

fn kappa_fields(kappa: &NonlinearDiffusion, state: &StateFields) -> [Vec<f64>; 4] {
    let n = state.n();
    Species::ALL.map(|sp| kappa.eval(sp, &n))
}

/// `∫_Ω n` at every level.
pub fn mass_history(domain: &Domain, traj: &Trajectory) -> Vec<f64> {
    traj.levels().iter().map(|l| domain.integrate(&l.n(), None)).collect()
}

/// Largest `|M_k − M_0| / M_0` over the levels (absolute deviation if `M_0 = 0`).
pub fn max_relative_drift(masses: &[f64]) -> f64 {
    let m0 = masses.first().copied().unwrap_or(0.0);
    let scale = if m0 != 0.0 { m0.abs() } else { 1.0 };
    masses.iter().map(|m| (m - m0).abs() / scale).fold(0.0, f64::max)
}
