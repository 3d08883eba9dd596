use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use seirdiff_core::control::{active_bound, entry_label, optimize as run_optimizer};
use seirdiff_core::scenario::TrajectoryLayout;
use seirdiff_core::verify::{self, Check};
use seirdiff_core::{simulate as run_forward, Diffusion, Error, Scenario, ScenarioConfig, Trajectory};

use crate::output::{self, num, Metadata, Writer};
use crate::Failure;

pub struct Context {
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Context {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

struct Loaded {
    bytes: Vec<u8>,
    config: ScenarioConfig,
    scenario: Scenario,
}

fn load(ctx: &Context, path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path).map_err(|e| {
        Failure::Core(Error::Parse {
            line: 0,
            column: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| {
        Failure::Core(Error::Parse {
            line: 0,
            column: 0,
            message: format!("{} is not valid UTF-8", path.display()),
        })
    })?;
    let mut config = ScenarioConfig::from_json(&text)?;
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let scenario = config.build()?;
    if !ctx.quiet {
        for w in &scenario.warnings {
            eprintln!("seirdiff: warning: {w}");
        }
    }
    Ok(Loaded { bytes, config, scenario })
}

fn writer(ctx: &Context, command: &'static str, loaded: &Loaded) -> Result<Writer, Failure> {
    let meta = Metadata::new(command, &loaded.bytes, &loaded.scenario.problem, loaded.scenario.seed);
    let w = Writer::new(&ctx.output_dir, meta)?;
    w.raw("config.json", &(loaded.config.echo() + "\n"))?;
    Ok(w)
}

fn write_simulation(w: &Writer, sc: &Scenario, traj: &Trajectory, runtime: f64) -> Result<f64, Failure> {
    let problem = &sc.problem;
    let per_cell = sc.output.trajectory == TrajectoryLayout::Cells;
    let id = if per_cell { "cell_id" } else { "region_id" };
    w.csv(
        "trajectory.csv",
        &format!("time,{id},s,e,i,r,n"),
        &output::trajectory_rows(problem, traj, per_cell),
    )?;
    let (rows, masses, drift) = output::mass_rows(problem, traj);
    w.csv("mass.csv", "time,total_n,relative_drift", &rows)?;
    if sc.output.snapshot_every > 0 {
        for k in (0..traj.levels().len()).step_by(sc.output.snapshot_every) {
            w.csv(
                &format!("snapshot_{k:06}.csv"),
                "cell,x,y,s,e,i,r,n",
                &output::snapshot_rows(problem, traj, k),
            )?;
        }
    }
    let (final_masses, mins) = output::final_summary(problem, traj);
    w.json(
        "summary.json",
        json!({
            "mode": traj.mode(),
            "initial_total_n": masses[0],
            "final_masses": final_masses,
            "min_values": mins,
            "relative_drift": drift,
            "negativity_warning": traj.negativity_warning(),
            "dt": problem.time.dt(),
            "dt_safe": problem.dt_safe(),
            "warnings": sc.warnings,
            "linear_iterations": traj.linear_iterations(),
            "runtime_seconds": runtime,
        }),
    )?;
    Ok(drift)
}

pub fn simulate(ctx: &Context, path: &Path) -> Result<(), Failure> {
    let loaded = load(ctx, path)?;
    let w = writer(ctx, "simulate", &loaded)?;
    let sc = &loaded.scenario;
    let start = Instant::now();
    let traj = run_forward(&sc.problem, sc.diffusion())?;
    let drift = write_simulation(&w, sc, &traj, start.elapsed().as_secs_f64())?;
    ctx.say(format!(
        "simulated {} steps on {} cells; relative mass drift {drift:.3e}; min value {:.3e}",
        sc.problem.time.steps(),
        sc.problem.num_cells(),
        traj.min_value()
    ));
    Ok(())
}

pub fn optimize(ctx: &Context, path: &Path) -> Result<(), Failure> {
    let loaded = load(ctx, path)?;
    let w = writer(ctx, "optimize", &loaded)?;
    let sc = &loaded.scenario;
    let started = Instant::now();
    let (u, report) = match run_optimizer(
        &sc.problem,
        &sc.bounds,
        &sc.cost,
        &sc.optimizer,
        Some(sc.start.clone()),
        sc.seed,
    ) {
        Ok(r) => r,
        Err(e @ Error::Optimization { .. }) => {
            w.json("optimize_failure.json", json!({ "error": e.to_string() }))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    let entries: Vec<_> = (0..u.values().len())
        .map(|k| {
            let (sp, j) = entry_label(&sc.bounds, k);
            json!({
                "species": sp.name(),
                "region": j + 1,
                "u": u.values()[k],
                "mu": report.means[k],
                "target": report.targets[k],
                "gradient": report.gradient[k],
                "lower": sc.bounds.lower()[k],
                "upper": sc.bounds.upper()[k],
                "active_bound": active_bound(&u, k),
            })
        })
        .collect();
    w.json(
        "controls.json",
        json!({
            "alpha": sc.cost.alpha,
            "controls": entries,
            "cost": report.cost,
            "residual": report.residual,
            "converged": report.converged,
            "tolerance": sc.optimizer.tolerance,
            "iterations": report.history.len().saturating_sub(1),
            "variational_min": report.variational_min,
            "start": report.start,
            "runs": report.runs,
        }),
    )?;
    let mut rows = String::new();
    for h in &report.history {
        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            h.iteration,
            num(h.cost),
            num(h.gradient_norm),
            num(h.residual),
            num(h.step_size)
        ));
    }
    w.csv("history.csv", "iteration,cost,gradient_norm,residual,step_size", &rows)?;

    let traj = run_forward(&sc.problem, Diffusion::Controls(&u))?;
    write_simulation(&w, sc, &traj, started.elapsed().as_secs_f64())?;
    ctx.say(format!(
        "optimized {} controls: cost {:.6e}, optimality residual {:.3e}, {} iterations",
        u.values().len(),
        report.cost,
        report.residual,
        report.history.len().saturating_sub(1)
    ));
    if !report.converged {
        return Err(Failure::Unconverged(format!(
            "optimizer stopped at the iteration cap with residual {:.3e} > {:.1e}",
            report.residual, sc.optimizer.tolerance
        )));
    }
    Ok(())
}

pub fn verify(ctx: &Context, path: &Path, names: &[String]) -> Result<(), Failure> {
    let checks: Vec<Check> = if names.iter().any(|n| n == "all") {
        Check::ALL.to_vec()
    } else {
        names.iter().map(|n| n.parse()).collect::<Result<_, Error>>()?
    };
    let loaded = load(ctx, path)?;
    let w = writer(ctx, "verify", &loaded)?;
    let mut failed = Vec::new();
    for check in checks {
        let report = verify::run(&loaded.scenario, check)?;
        w.json(&format!("verify_{check}.json"), &report)?;
        for m in &report.measurements {
            ctx.say(format!(
                "{} {check}: {} = {:.6e} {}",
                if m.passed { "PASS" } else { "FAIL" },
                m.name,
                m.value,
                match (m.min, m.max) {
                    (Some(a), Some(b)) => format!("in [{a}, {b}]"),
                    (None, Some(b)) => format!("<= {b:e}"),
                    (Some(a), None) => format!(">= {a:e}"),
                    (None, None) => String::new(),
                }
            ));
        }
        if !report.passed {
            failed.push(check.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed))
    }
}
