//! Result files. CSV numbers use 17 significant digits; every file carries a
//! metadata block (a leading `#` line in CSV, a `metadata` object in JSON).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use seirdiff_core::forward::{mass_history, max_relative_drift};
use seirdiff_core::{Problem, Species, Trajectory};

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub dimension: usize,
    pub cells: Vec<usize>,
    pub regions: usize,
    pub steps: usize,
    pub final_time: f64,
    pub seed: u64,
}

impl Metadata {
    pub fn new(command: &'static str, config_bytes: &[u8], problem: &Problem, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: hex::encode(Sha256::digest(config_bytes)),
            dimension: problem.domain.dim(),
            cells: problem.domain.cell_counts().to_vec(),
            regions: problem.partition.num_regions(),
            steps: problem.time.steps(),
            final_time: problem.time.final_time(),
            seed,
        }
    }

    fn csv_line(&self) -> String {
        let cells: Vec<String> = self.cells.iter().map(|c| c.to_string()).collect();
        format!(
            "# tool={} version={} command={} config_sha256={} cells={} regions={} steps={} final_time={} seed={}\n",
            self.tool,
            self.version,
            self.command,
            self.config_sha256,
            cells.join("x"),
            self.regions,
            self.steps,
            self.final_time,
            self.seed
        )
    }
}

pub struct Writer {
    dir: PathBuf,
    meta: Metadata,
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl Writer {
    pub fn new(dir: &Path, meta: Metadata) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn csv(&self, name: &str, header: &str, body: &str) -> Result<(), Failure> {
        let text = format!("{}{header}\n{body}", self.meta.csv_line());
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    /// Writes `value` (an object) with a `metadata` member added.
    pub fn json(&self, name: &str, value: impl Serialize) -> Result<(), Failure> {
        let mut v = serde_json::to_value(value).map_err(|e| Failure::Io(e.to_string()))?;
        if let Value::Object(map) = &mut v {
            map.insert("metadata".into(), json!(self.meta));
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(|e| Failure::Io(e.to_string()))?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    pub fn raw(&self, name: &str, text: &str) -> Result<(), Failure> {
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }
}

/// `trajectory.csv`: one row per level and region (region averages) or per cell.
pub fn trajectory_rows(problem: &Problem, traj: &Trajectory, per_cell: bool) -> String {
    let mut out = String::new();
    let domain = &problem.domain;
    let part = &problem.partition;
    for (k, level) in traj.levels().iter().enumerate() {
        let t = num(problem.time.time(k));
        let n = level.n();
        if per_cell {
            for c in 0..domain.num_cells() {
                let vals = [level.s[c], level.e[c], level.i[c], level.r[c], n[c]];
                let _ = writeln!(out, "{t},{c},{}", join(&vals));
            }
        } else {
            for j in 0..part.num_regions() {
                let ind: Vec<bool> = part.labels().iter().map(|&l| l == j).collect();
                let avg = |f: &[f64]| domain.integrate(f, Some(&ind)) / part.measures()[j];
                let vals = [avg(&level.s), avg(&level.e), avg(&level.i), avg(&level.r), avg(&n)];
                let _ = writeln!(out, "{t},{},{}", j + 1, join(&vals));
            }
        }
    }
    out
}

/// `mass.csv` rows and the largest relative drift.
pub fn mass_rows(problem: &Problem, traj: &Trajectory) -> (String, Vec<f64>, f64) {
    let masses = mass_history(&problem.domain, traj);
    let m0 = masses[0];
    let scale = if m0 != 0.0 { m0.abs() } else { 1.0 };
    let mut out = String::new();
    for (k, m) in masses.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", num(problem.time.time(k)), num(*m), num((m - m0).abs() / scale));
    }
    let drift = max_relative_drift(&masses);
    (out, masses, drift)
}

/// Flat field snapshot: cell, x, y, s, e, i, r, n.
pub fn snapshot_rows(problem: &Problem, traj: &Trajectory, level: usize) -> String {
    let state = traj.level(level);
    let n = state.n();
    let mut out = String::new();
    for c in 0..problem.num_cells() {
        let x = problem.domain.cell_center(c);
        let vals = [x[0], x[1], state.s[c], state.e[c], state.i[c], state.r[c], n[c]];
        let _ = writeln!(out, "{c},{}", join(&vals));
    }
    out
}

/// Per-species integrals and minima of the final state.
pub fn final_summary(problem: &Problem, traj: &Trajectory) -> (Value, Value) {
    let last = traj.final_state();
    let mut masses = serde_json::Map::new();
    let mut mins = serde_json::Map::new();
    for sp in Species::ALL {
        let f = last.get(sp);
        masses.insert(sp.name().into(), json!(problem.domain.integrate(f, None)));
        mins.insert(sp.name().into(), json!(f.iter().copied().fold(f64::INFINITY, f64::min)));
    }
    masses.insert("n".into(), json!(problem.domain.integrate(&last.n(), None)));
    mins.insert("all_levels".into(), json!(traj.min_value()));
    (Value::Object(masses), Value::Object(mins))
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| num(*v)).collect::<Vec<_>>().join(",")
}
