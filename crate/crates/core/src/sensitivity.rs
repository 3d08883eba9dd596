//! Linearization of the state system with respect to the diffusion controls.
//!
//! Two objects live here:
//!
//! * the pointwise coefficient fields `A_r, B_r, C_r, D_r` (rows `r = 1..4`) of
//!   the linearized reaction terms, evaluated at every level of a trajectory;
//! * the exact derivative of the discrete time-stepping map, used to propagate
//!   tangents forward and adjoints backward.
//!
//! The discrete adjoint is the transpose of the discrete tangent propagator, so
//! gradients obtained from it are exact derivatives of the discrete cost up to
//! the linear-solver tolerance.
//!
//! Indexing: tangent level `k` lives at time `t_k` (level 0 is zero). Adjoint
//! level `k < K` holds the multiplier of the step `t_k → t_{k+1}`, and level `K`
//! is the zero terminal value. Pairings between the state and the adjoint
//! therefore combine state level `k + 1` with adjoint level `k`.

use crate::error::{Error, Result};
use crate::forward::{assemble_operators, incidence, Mode, Problem, Trajectory};
use crate::grid::{transmissibility_derivative, DiffusionOperator};
use crate::linalg::solve_shifted;
use crate::model::{expand_controls, expand_direction, ControlVector, Species, StateFields};

/// Pointwise coefficients of the linearized reaction terms at one level.
///
/// `a[r]` multiplies `ξ` in row `r`, `b[r]` multiplies `η`, `c[r]` `ι` and `d[r]` `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    pub a: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
    pub c: [Vec<f64>; 4],
    pub d: [Vec<f64>; 4],
}

impl CoefficientFields {
    /// Jacobian-vector product of the reaction terms.
    pub fn apply(&self, dir: &StateFields) -> StateFields {
        let n = dir.num_cells();
        let row = |r: usize| -> Vec<f64> {
            (0..n)
                .map(|c| {
                    self.a[r][c] * dir.s[c] + self.b[r][c] * dir.e[c] + self.c[r][c] * dir.i[c] + self.d[r][c] * dir.r[c]
                })
                .collect()
        };
        StateFields {
            s: row(0),
            e: row(1),
            i: row(2),
            r: row(3),
        }
    }
}

/// Reaction part of the state equations at a single level:
///
/// ```text
/// s: β_i s i + β_e s e − γ r
/// e: −β_i s i − β_e s e + (σ + φ_e) e
/// i: φ_r i − σ e
/// r: −φ_r i − φ_e e + γ r
/// ```
pub fn reaction_terms(problem: &Problem, state: &StateFields, t: f64) -> StateFields {
    let p = &problem.params;
    let gamma = p.gamma.eval(t);
    let (bi, be) = problem.rates.eval(t, &state.n());
    let n = state.num_cells();
    let mut out = StateFields::zeros(n);
    for c in 0..n {
        let inf = bi[c] * state.s[c] * state.i[c] + be[c] * state.s[c] * state.e[c];
        out.s[c] = inf - gamma * state.r[c];
        out.e[c] = -inf + (p.sigma + p.phi_e) * state.e[c];
        out.i[c] = p.phi_r * state.i[c] - p.sigma * state.e[c];
        out.r[c] = -p.phi_r * state.i[c] - p.phi_e * state.e[c] + gamma * state.r[c];
    }
    out
}

/// Evaluates `A..D` for a single state.
pub fn coefficient_fields(problem: &Problem, state: &StateFields, t: f64) -> CoefficientFields {
    let p = &problem.params;
    let gamma = p.gamma.eval(t);
    let n_field = state.n();
    let (bi, be) = problem.rates.eval(t, &n_field);
    let (dbi, dbe) = problem.rates.eval_prime(t, &n_field);
    let n = state.num_cells();
    let zeros = || vec![0.0; n];
    let fill = |v: f64| vec![v; n];

    let (s, e, i) = (&state.s, &state.e, &state.i);
    // derivative of β_i s i + β_e s e through n
    let dn: Vec<f64> = (0..n).map(|c| dbi[c] * s[c] * i[c] + dbe[c] * s[c] * e[c]).collect();
    let a1: Vec<f64> = (0..n).map(|c| dn[c] + bi[c] * i[c] + be[c] * e[c]).collect();
    let b1: Vec<f64> = (0..n).map(|c| dn[c] + be[c] * s[c]).collect();
    let c1: Vec<f64> = (0..n).map(|c| dn[c] + bi[c] * s[c]).collect();
    let d1: Vec<f64> = (0..n).map(|c| dn[c] - gamma).collect();

    let a2 = a1.iter().map(|v| -v).collect();
    let b2 = b1.iter().map(|v| -v + p.sigma + p.phi_e).collect();
    let c2 = c1.iter().map(|v| -v).collect();
    let d2 = d1.iter().map(|v| -v - gamma).collect();

    CoefficientFields {
        a: [a1, a2, zeros(), zeros()],
        b: [b1, b2, fill(-p.sigma), fill(-p.phi_e)],
        c: [c1, c2, fill(p.phi_r), fill(-p.phi_r)],
        d: [d1, d2, zeros(), fill(gamma)],
    }
}

/// Data of one step `k → k+1` frozen at level `k`.
#[derive(Debug, Clone)]
pub struct StepCoefficients {
    pub beta_i: Vec<f64>,
    pub beta_e: Vec<f64>,
    /// `G = β_i(n) i + β_e(n) e`.
    pub force: Vec<f64>,
    /// `∂G/∂n = β_i′(n) i + β_e′(n) e`.
    pub force_dn: Vec<f64>,
    /// `γ(t_{k+1})`.
    pub gamma: f64,
}

/// Linearization data for a fixed-control trajectory.
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    levels: Vec<CoefficientFields>,
    steps: Vec<StepCoefficients>,
    kappa: [Vec<f64>; 4],
    operators: [DiffusionOperator; 4],
    controls: ControlVector,
}

impl LinearizedCoefficients {
    /// Pointwise `A..D` at every level `0..=K`.
    pub fn levels(&self) -> &[CoefficientFields] {
        &self.levels
    }

    pub fn steps(&self) -> &[StepCoefficients] {
        &self.steps
    }

    pub fn kappa(&self) -> &[Vec<f64>; 4] {
        &self.kappa
    }

    pub fn operators(&self) -> &[DiffusionOperator; 4] {
        &self.operators
    }

    pub fn controls(&self) -> &ControlVector {
        &self.controls
    }
}

/// Assembles the linearization coefficients along a fixed-control trajectory.
pub fn assemble_coeffs(problem: &Problem, traj: &Trajectory) -> Result<LinearizedCoefficients> {
    let controls = match (traj.mode(), traj.controls()) {
        (Mode::FixedControls, Some(u)) => u.clone(),
        _ => {
            return Err(Error::Usage(
                "sensitivities require a trajectory computed with fixed piecewise-constant controls".into(),
            ))
        }
    };
    if traj.levels().len() != problem.time.steps() + 1 {
        return Err(Error::Usage("trajectory does not match the problem time grid".into()));
    }
    let kappa = expand_controls(&controls, &problem.partition)?;
    let operators = assemble_operators(&problem.domain, &kappa)?;
    let time = &problem.time;

    let levels = traj
        .levels()
        .iter()
        .enumerate()
        .map(|(k, y)| coefficient_fields(problem, y, time.time(k)))
        .collect();

    let steps = (0..time.steps())
        .map(|k| {
            let y = traj.level(k);
            let t = time.time(k);
            let inc = incidence(&problem.rates, t, y);
            let (dbi, dbe) = problem.rates.eval_prime(t, &y.n());
            let force_dn = (0..y.num_cells()).map(|c| dbi[c] * y.i[c] + dbe[c] * y.e[c]).collect();
            StepCoefficients {
                beta_i: inc.beta_i,
                beta_e: inc.beta_e,
                force: inc.force,
                force_dn,
                gamma: problem.params.gamma.eval(time.time(k + 1)),
            }
        })
        .collect();

    Ok(LinearizedCoefficients {
        levels,
        steps,
        kappa,
        operators,
        controls,
    })
}

/// Tangent `(ξ, η, ι, ρ)` at every level, stored in the `s, e, i, r` slots.
#[derive(Debug, Clone)]
pub struct TangentFields {
    pub levels: Vec<StateFields>,
}

/// Adjoint `(p, q, w, z)` at every level, stored in the `s, e, i, r` slots.
///
/// Level `k < K` holds the multiplier of step `k → k+1` divided by `Δt`, which
/// approximates the continuous adjoint; level `K` is zero.
#[derive(Debug, Clone)]
pub struct AdjointFields {
    pub levels: Vec<StateFields>,
}

/// `out −= dK y` for stiffness weights `dt` (face-wise).
fn sub_weighted_stiffness(problem: &Problem, weights: &[f64], y: &[f64], out: &mut [f64]) {
    for (f, w) in problem.domain.faces().iter().zip(weights) {
        let flux = w * (y[f.lo] - y[f.hi]);
        out[f.lo] -= flux;
        out[f.hi] += flux;
    }
}

fn check_direction(coeffs: &LinearizedCoefficients, direction: &[f64]) -> Result<()> {
    if direction.len() != coeffs.controls.values().len() {
        return Err(Error::Config(format!(
            "control direction has {} entries, expected {}",
            direction.len(),
            coeffs.controls.values().len()
        )));
    }
    Ok(())
}

/// Propagates a control perturbation `δu` forward through the discrete scheme.
pub fn solve_tangent(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    direction: &[f64],
) -> Result<TangentFields> {
    check_direction(coeffs, direction)?;
    let n = problem.num_cells();
    let dt = problem.time.dt();
    let vol = problem.domain.cell_volume();
    let p = &problem.params;
    let dkappa = expand_direction(direction, &problem.partition);
    let dtrans: [Vec<f64>; 4] = std::array::from_fn(|k| {
        transmissibility_derivative(&problem.domain, &coeffs.kappa[k], &dkappa[k])
    });

    let mut levels = Vec::with_capacity(traj.levels().len());
    levels.push(StateFields::zeros(n));
    for (k, sc) in coeffs.steps.iter().enumerate() {
        let old = &levels[k];
        let y = traj.level(k + 1);
        let mut new = old.clone();
        let d_force: Vec<f64> = (0..n)
            .map(|c| {
                let dn = old.s[c] + old.e[c] + old.i[c] + old.r[c];
                sc.force_dn[c] * dn + sc.beta_i[c] * old.i[c] + sc.beta_e[c] * old.e[c]
            })
            .collect();
        let solve = |sp: Species, shift: Vec<f64>, mut rhs: Vec<f64>, x: &mut Vec<f64>| -> Result<()> {
            sub_weighted_stiffness(problem, &dtrans[sp.index()], y.get(sp), &mut rhs);
            solve_shifted(&coeffs.operators[sp.index()], &shift, &rhs, x, &problem.solver, || {
                format!("tangent {}-equation, step {k}", sp.name())
            })?;
            Ok(())
        };

        let shift = sc.force.iter().map(|g| vol * (1.0 / dt + g)).collect();
        let rhs = (0..n)
            .map(|c| vol * (old.s[c] / dt - y.s[c] * d_force[c] + sc.gamma * old.r[c]))
            .collect();
        solve(Species::S, shift, rhs, &mut new.s)?;

        let shift = vec![vol * (1.0 / dt + p.sigma + p.phi_e); n];
        let rhs = (0..n)
            .map(|c| vol * (old.e[c] / dt + sc.force[c] * new.s[c] + y.s[c] * d_force[c]))
            .collect();
        solve(Species::E, shift, rhs, &mut new.e)?;

        let shift = vec![vol * (1.0 / dt + p.phi_r); n];
        let rhs = (0..n).map(|c| vol * (old.i[c] / dt + p.sigma * new.e[c])).collect();
        solve(Species::I, shift, rhs, &mut new.i)?;

        let shift = vec![vol / dt; n];
        let rhs = (0..n)
            .map(|c| vol * ((1.0 / dt - sc.gamma) * old.r[c] + p.phi_r * new.i[c] + p.phi_e * new.e[c]))
            .collect();
        solve(Species::R, shift, rhs, &mut new.r)?;

        levels.push(new);
    }
    Ok(TangentFields { levels })
}

/// Trapezoid weight of level `k` in the time quadrature of the tracking term.
pub fn trapezoid_weight(problem: &Problem, level: usize) -> f64 {
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    if level == 0 || level == steps {
        0.5 * dt
    } else {
        dt
    }
}

/// Solves the discrete adjoint backward from the zero terminal value.
///
/// Sources are `e` and `i` on the target set `Ω_C`, weighted by the trapezoid
/// rule used for the tracking term.
pub fn solve_adjoint(problem: &Problem, traj: &Trajectory, coeffs: &LinearizedCoefficients) -> Result<AdjointFields> {
    let n = problem.num_cells();
    let steps = problem.time.steps();
    let dt = problem.time.dt();
    let vol = problem.domain.cell_volume();
    let p = &problem.params;
    let mask = problem.partition.control_mask();

    let mut levels = vec![StateFields::zeros(n); steps + 1];
    // multiplier of step (k−1 → k) is stored at levels[k − 1]
    for k in (1..=steps).rev() {
        let w = trapezoid_weight(problem, k) / dt;
        let y = traj.level(k);
        let mut b = StateFields::zeros(n);
        for c in 0..n {
            if mask[c] {
                b.e[c] = w * vol * y.e[c];
                b.i[c] = w * vol * y.i[c];
            }
        }
        if k < steps {
            let next = &levels[k];
            let sc = &coeffs.steps[k];
            let s_new = &traj.level(k + 1).s;
            for c in 0..n {
                let diff = next.s[c] - next.e[c];
                let sn = s_new[c];
                b.s[c] -= vol * (sn * sc.force_dn[c] * diff - next.s[c] / dt);
                b.e[c] -= vol * (sn * (sc.force_dn[c] + sc.beta_e[c]) * diff - next.e[c] / dt);
                b.i[c] -= vol * (sn * (sc.force_dn[c] + sc.beta_i[c]) * diff - next.i[c] / dt);
                b.r[c] -= vol * (sn * sc.force_dn[c] * diff + sc.gamma * (next.r[c] - next.s[c]) - next.r[c] / dt);
            }
        }

        let sc = &coeffs.steps[k - 1];
        let mut cur = if k < steps { levels[k].clone() } else { StateFields::zeros(n) };
        let solve = |sp: Species, shift: Vec<f64>, rhs: Vec<f64>, x: &mut Vec<f64>| -> Result<()> {
            solve_shifted(&coeffs.operators[sp.index()], &shift, &rhs, x, &problem.solver, || {
                format!("adjoint {}-equation, level {k}", sp.name())
            })?;
            Ok(())
        };

        solve(Species::R, vec![vol / dt; n], b.r.clone(), &mut cur.r)?;

        let rhs = (0..n).map(|c| b.i[c] + vol * p.phi_r * cur.r[c]).collect();
        solve(Species::I, vec![vol * (1.0 / dt + p.phi_r); n], rhs, &mut cur.i)?;

        let rhs = (0..n)
            .map(|c| b.e[c] + vol * (p.sigma * cur.i[c] + p.phi_e * cur.r[c]))
            .collect();
        solve(Species::E, vec![vol * (1.0 / dt + p.sigma + p.phi_e); n], rhs, &mut cur.e)?;

        let shift = sc.force.iter().map(|g| vol * (1.0 / dt + g)).collect();
        let rhs = (0..n).map(|c| b.s[c] + vol * sc.force[c] * cur.e[c]).collect();
        solve(Species::S, shift, rhs, &mut cur.s)?;

        levels[k - 1] = cur;
    }
    Ok(AdjointFields { levels })
}

/// Discrete `∫_{Q_j} ∇y·∇p` for every species and region (`4m` values, species-major).
///
/// Face contributions are weighted by the derivative of the face
/// transmissibility with respect to each adjacent region's control, so that
/// `Σ_j pairing_j δu_j` is exactly the directional derivative of the diffusion
/// bilinear form.
pub fn control_pairings(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    adjoint: &AdjointFields,
) -> Vec<f64> {
    let m = problem.partition.num_regions();
    let labels = problem.partition.labels();
    let dt = problem.time.dt();
    let faces = problem.domain.faces();
    let mut out = vec![0.0; 4 * m];
    for sp in Species::ALL {
        let kappa = &coeffs.kappa[sp.index()];
        let mut per_face = vec![0.0; faces.len()];
        for k in 0..problem.time.steps() {
            let y = traj.level(k + 1).get(sp);
            let a = adjoint.levels[k].get(sp);
            for (acc, f) in per_face.iter_mut().zip(faces) {
                *acc += dt * (y[f.lo] - y[f.hi]) * (a[f.lo] - a[f.hi]);
            }
        }
        for (f, v) in faces.iter().zip(&per_face) {
            let (da, db) = crate::grid::harmonic_mean_partials(kappa[f.lo], kappa[f.hi]);
            out[sp.index() * m + labels[f.lo]] += f.geometry * da * v;
            out[sp.index() * m + labels[f.hi]] += f.geometry * db * v;
        }
    }
    out
}

/// Both sides of the duality identity for a control direction.
#[derive(Debug, Clone, Copy)]
pub struct Duality {
    /// `Σ_k w_k ∫_{Ω_C} (e η + i ι)`.
    pub tracking: f64,
    /// `−Σ_k Δt Σ_species ∫ δκ ∇y·∇p`.
    pub diffusion: f64,
    /// `|tracking − diffusion| / max(|tracking|, |diffusion|)`, 0 when both vanish.
    pub gap: f64,
}

pub fn duality(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    adjoint: &AdjointFields,
    direction: &[f64],
) -> Result<Duality> {
    let tangent = solve_tangent(problem, traj, coeffs, direction)?;
    let mask = problem.partition.control_mask();
    let vol = problem.domain.cell_volume();
    let mut tracking = 0.0;
    for k in 1..=problem.time.steps() {
        let (y, t) = (traj.level(k), &tangent.levels[k]);
        let local: f64 = (0..problem.num_cells())
            .filter(|&c| mask[c])
            .map(|c| y.e[c] * t.e[c] + y.i[c] * t.i[c])
            .sum();
        tracking += trapezoid_weight(problem, k) * vol * local;
    }
    let pair = control_pairings(problem, traj, coeffs, adjoint);
    let diffusion = -pair.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>();
    let scale = tracking.abs().max(diffusion.abs());
    let gap = if scale == 0.0 { 0.0 } else { (tracking - diffusion).abs() / scale };
    Ok(Duality {
        tracking,
        diffusion,
        gap,
    })
}

/// Relative duality gap for a direction; computes the adjoint internally.
pub fn duality_gap(
    problem: &Problem,
    traj: &Trajectory,
    coeffs: &LinearizedCoefficients,
    direction: &[f64],
) -> Result<f64> {
    let adjoint = solve_adjoint(problem, traj, coeffs)?;
    Ok(duality(problem, traj, coeffs, &adjoint, direction)?.gap)
}
