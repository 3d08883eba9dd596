//! Cost functional, reduced gradient and box-constrained optimization of the
//! diffusion controls.
//!
//! The cost is
//!
//! ```text
//! J(u) = ½ ∫_{Q_C} (e² + i²) + (α/2) T Σ_j |Ω_j| Σ_species (u_j)²
//! ```
//!
//! with the tracking term integrated by the trapezoid rule over time levels.
//! At a stationary point every control equals the clamp of `μ_j/α` onto its
//! interval, where `μ_j = ∫_{Q_j} ∇y·∇p / (|Ω_j| T)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{simulate, Diffusion, Problem, Trajectory};
use crate::model::{ControlBounds, ControlVector, Species};
use crate::sensitivity::{assemble_coeffs, control_pairings, solve_adjoint, trapezoid_weight, AdjointFields, LinearizedCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub alpha: f64,
}

impl CostConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be a positive constant, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// `½ Σ_k w_k ∫_{Ω_C} (e_k² + i_k²)`.
pub fn tracking_cost(problem: &Problem, traj: &Trajectory) -> f64 {
    let mask = problem.partition.control_mask();
    traj.levels()
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let sq: Vec<f64> = y.e.iter().zip(&y.i).map(|(e, i)| e * e + i * i).collect();
            trapezoid_weight(problem, k) * problem.domain.integrate(&sq, Some(mask))
        })
        .sum::<f64>()
        * 0.5
}

/// `(α/2) T Σ_j |Ω_j| Σ_species u_j²`, exact for piecewise-constant controls.
pub fn control_penalty(problem: &Problem, u: &ControlVector, cfg: &CostConfig) -> f64 {
    let measures = problem.partition.measures();
    let m = measures.len();
    let sum: f64 = u
        .values()
        .iter()
        .enumerate()
        .map(|(k, v)| measures[k % m] * v * v)
        .sum();
    0.5 * cfg.alpha * problem.time.final_time() * sum
}

pub fn evaluate_cost(problem: &Problem, traj: &Trajectory, u: &ControlVector, cfg: &CostConfig) -> f64 {
    tracking_cost(problem, traj) + control_penalty(problem, u, cfg)
}

/// `μ_j = ∫_{Q_j} ∇y·∇p / (|Ω_j| T)` for all species and regions.
pub fn weighted_means(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    adjoint: &AdjointFields,
) -> Vec<f64> {
    let pair = control_pairings(problem, traj, coeffs, adjoint);
    means_from_pairings(problem, &pair)
}

fn means_from_pairings(problem: &Problem, pair: &[f64]) -> Vec<f64> {
    let measures = problem.partition.measures();
    let m = measures.len();
    let t = problem.time.final_time();
    pair.iter().enumerate().map(|(k, v)| v / (measures[k % m] * t)).collect()
}

fn gradient_from_pairings(problem: &Problem, u: &ControlVector, cfg: &CostConfig, pair: &[f64]) -> Vec<f64> {
    let measures = problem.partition.measures();
    let m = measures.len();
    let t = problem.time.final_time();
    u.values()
        .iter()
        .zip(pair)
        .enumerate()
        .map(|(k, (v, p))| cfg.alpha * v * measures[k % m] * t - p)
        .collect()
}

/// `g_j = α u_j |Ω_j| T − ∫_{Q_j} ∇y·∇p` for all species and regions.
pub fn reduced_gradient(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    adjoint: &AdjointFields,
    u: &ControlVector,
    cfg: &CostConfig,
) -> Vec<f64> {
    let pair = control_pairings(problem, traj, coeffs, adjoint);
    gradient_from_pairings(problem, u, cfg, &pair)
}

/// Entrywise clamp onto the admissible box.
pub fn project(values: &[f64], bounds: &ControlBounds) -> ControlVector {
    ControlVector::projected(bounds, values)
}

/// `‖u − clamp(μ/α)‖_∞`.
pub fn optimality_residual(u: &ControlVector, means: &[f64], cfg: &CostConfig) -> f64 {
    let scaled: Vec<f64> = means.iter().map(|m| m / cfg.alpha).collect();
    let target = u.bounds().clamp(&scaled);
    u.values()
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Smallest `⟨g, v − u⟩` over random admissible `v`; nonnegative at a stationary point.
pub fn variational_inequality_min(gradient: &[f64], u: &ControlVector, samples: usize, rng: &mut impl Rng) -> f64 {
    (0..samples)
        .map(|_| {
            let v = random_admissible(u.bounds(), rng);
            gradient
                .iter()
                .zip(v.values().iter().zip(u.values()))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Uniform sample from the admissible box.
pub fn random_admissible(bounds: &ControlBounds, rng: &mut impl Rng) -> ControlVector {
    let vals: Vec<f64> = bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .map(|(lo, hi)| if lo < hi { rng.gen_range(*lo..=*hi) } else { *lo })
        .collect();
    ControlVector::new(bounds.clone(), vals).expect("sample lies in the box")
}

/// Everything computed at one control: state, cost, adjoint-based gradient and means.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub controls: ControlVector,
    pub trajectory: Trajectory,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub means: Vec<f64>,
    pub residual: f64,
}

pub fn evaluate(problem: &Problem, u: &ControlVector, cfg: &CostConfig) -> Result<Evaluation> {
    let trajectory = simulate(problem, Diffusion::Controls(u))?;
    let cost = evaluate_cost(problem, &trajectory, u, cfg);
    let coeffs = assemble_coeffs(problem, &trajectory)?;
    let adjoint = solve_adjoint(problem, &trajectory, &coeffs)?;
    let pair = control_pairings(problem, &trajectory, &coeffs, &adjoint);
    let gradient = gradient_from_pairings(problem, u, cfg, &pair);
    let means = means_from_pairings(problem, &pair);
    let residual = optimality_residual(u, &means, cfg);
    Ok(Evaluation {
        controls: u.clone(),
        trajectory,
        cost,
        gradient,
        means,
        residual,
    })
}

/// Cost only (one forward solve).
pub fn cost_at(problem: &Problem, u: &ControlVector, cfg: &CostConfig) -> Result<f64> {
    let traj = simulate(problem, Diffusion::Controls(u))?;
    Ok(evaluate_cost(problem, &traj, u, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `u ← clamp(u − τ g)` with Armijo backtracking.
    #[default]
    ProjectedGradient,
    /// `u ← clamp(μ(u)/α)`; no convergence guarantee.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerOptions {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Stop when `‖u − clamp(μ/α)‖_∞` falls to this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_armijo")]
    pub armijo: f64,
    #[serde(default = "default_backtracks")]
    pub max_backtracks: usize,
    /// Number of starts; starts after the first are random admissible points.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_armijo() -> f64 {
    1e-4
}
fn default_backtracks() -> usize {
    40
}
fn default_restarts() -> usize {
    1
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            method: Method::default(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            armijo: default_armijo(),
            max_backtracks: default_backtracks(),
            restarts: default_restarts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub gradient_norm: f64,
    pub residual: f64,
    /// Step length that produced this iterate (0 for the starting point).
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub start: Vec<f64>,
    pub controls: Vec<f64>,
    pub cost: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of [`optimize`] for the best start.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalityReport {
    pub start: Vec<f64>,
    pub controls: Vec<f64>,
    pub means: Vec<f64>,
    /// `clamp(μ/α)`.
    pub targets: Vec<f64>,
    pub gradient: Vec<f64>,
    pub residual: f64,
    pub cost: f64,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub runs: Vec<RunSummary>,
    /// Smallest `⟨g, v − u⟩` over 100 random admissible `v`.
    pub variational_min: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Run {
    eval: Evaluation,
    history: Vec<IterationRecord>,
    summary: RunSummary,
}

fn run_from(problem: &Problem, start: ControlVector, cfg: &CostConfig, opts: &OptimizerOptions) -> Result<Run> {
    let bounds = start.bounds().clone();
    let m = problem.partition.num_regions();
    let max_measure = problem.partition.measures().iter().copied().fold(0.0, f64::max);
    let base_step = 1.0 / (cfg.alpha * problem.time.final_time() * max_measure);

    let mut eval = evaluate(problem, &start, cfg)?;
    let mut history = Vec::new();
    let mut step_taken = 0.0;
    let mut converged = false;
    let mut iteration = 0;
    loop {
        history.push(IterationRecord {
            iteration,
            cost: eval.cost,
            gradient_norm: norm2(&eval.gradient),
            residual: eval.residual,
            step_size: step_taken,
        });
        if eval.residual <= opts.tolerance {
            converged = true;
            break;
        }
        if iteration >= opts.max_iterations {
            break;
        }
        iteration += 1;

        match opts.method {
            Method::FixedPoint => {
                let scaled: Vec<f64> = eval.means.iter().map(|v| v / cfg.alpha).collect();
                eval = evaluate(problem, &project(&scaled, &bounds), cfg)?;
                step_taken = 1.0;
            }
            Method::ProjectedGradient => {
                let mut tau = base_step;
                let mut accepted = None;
                for _ in 0..=opts.max_backtracks {
                    let raw: Vec<f64> = eval.controls.values().iter().zip(&eval.gradient).map(|(u, g)| u - tau * g).collect();
                    let cand = project(&raw, &bounds);
                    let decrease: f64 = eval
                        .gradient
                        .iter()
                        .zip(cand.values().iter().zip(eval.controls.values()))
                        .map(|(g, (a, b))| g * (a - b))
                        .sum();
                    let cost = cost_at(problem, &cand, cfg)?;
                    if cost <= eval.cost + opts.armijo * decrease {
                        accepted = Some(cand);
                        break;
                    }
                    tau *= 0.5;
                }
                let Some(cand) = accepted else {
                    return Err(Error::Optimization {
                        message: format!(
                            "Armijo line search failed after {} halvings ({} regions)",
                            opts.max_backtracks, m
                        ),
                        iteration,
                        cost: eval.cost,
                        residual: eval.residual,
                    });
                };
                eval = evaluate(problem, &cand, cfg)?;
                step_taken = tau;
            }
        }
    }
    let summary = RunSummary {
        start: start.values().to_vec(),
        controls: eval.controls.values().to_vec(),
        cost: eval.cost,
        residual: eval.residual,
        iterations: iteration,
        converged,
    };
    Ok(Run { eval, history, summary })
}

/// Minimizes the cost over the admissible box.
///
/// The first run starts at `start` (interval midpoints when `None`), further
/// runs at seeded random admissible points. The run with the lowest final cost
/// is reported.
pub fn optimize(
    problem: &Problem,
    bounds: &ControlBounds,
    cfg: &CostConfig,
    opts: &OptimizerOptions,
    start: Option<ControlVector>,
    seed: u64,
) -> Result<(ControlVector, OptimalityReport)> {
    if bounds.regions() != problem.partition.num_regions() {
        return Err(Error::Config(format!(
            "control bounds cover {} regions, partition has {}",
            bounds.regions(),
            problem.partition.num_regions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Run> = None;
    let mut runs = Vec::new();
    for r in 0..opts.restarts.max(1) {
        let u0 = match (r, &start) {
            (0, Some(u)) => u.clone(),
            (0, None) => bounds.midpoint(),
            _ => random_admissible(bounds, &mut rng),
        };
        let run = run_from(problem, u0, cfg, opts)?;
        runs.push(run.summary.clone());
        if best.as_ref().map_or(true, |b| run.eval.cost < b.eval.cost) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one run");
    let eval = best.eval;
    let scaled: Vec<f64> = eval.means.iter().map(|v| v / cfg.alpha).collect();
    let variational_min = variational_inequality_min(&eval.gradient, &eval.controls, 100, &mut rng);
    let report = OptimalityReport {
        start: best.summary.start.clone(),
        controls: eval.controls.values().to_vec(),
        targets: bounds.clamp(&scaled),
        means: eval.means,
        gradient: eval.gradient,
        residual: eval.residual,
        cost: eval.cost,
        converged: best.summary.converged,
        history: best.history,
        runs,
        variational_min,
    };
    Ok((eval.controls, report))
}

/// Which bound, if any, an entry sits on.
pub fn active_bound(u: &ControlVector, index: usize) -> &'static str {
    let (lo, hi) = (u.bounds().lower()[index], u.bounds().upper()[index]);
    let v = u.values()[index];
    if v <= lo {
        "lower"
    } else if v >= hi {
        "upper"
    } else {
        "none"
    }
}

/// `(species, region)` of a flat control index.
pub fn entry_label(bounds: &ControlBounds, index: usize) -> (Species, usize) {
    (Species::ALL[index / bounds.regions()], index % bounds.regions())
}
