//! JSON scenario files.
//!
//! A scenario bundles the grid, time grid, regions, model coefficients,
//! initial data, control bounds and optimizer settings. Loading resolves every
//! default so that [`ScenarioConfig::echo`] reproduces the complete setup.

use serde::{Deserialize, Serialize};

use crate::control::{CostConfig, OptimizerOptions};
use crate::error::{Error, Result};
use crate::forward::{Diffusion, PicardOptions, Problem};
use crate::grid::{build_grid, Domain, RegionBox, TimeGrid};
use crate::linalg::SolverOptions;
use crate::model::{
    ControlBounds, ControlVector, InitialData, KappaBounds, NonlinearDiffusion, Parameters, Species, StateFields,
    TransmissionRate,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub final_time: f64,
    pub steps: usize,
}

/// How the diffusion coefficients are obtained during `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// Piecewise-constant controls (the initial controls of the scenario).
    #[default]
    Controls,
    /// `κ(n)` per species.
    Nonlinear {
        kappa: NonlinearDiffusion,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        picard: Option<PicardOptions>,
    },
}

/// Constant values on one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionValues {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
}

/// `amplitude · exp(−|x − center|² / (2 width²))` added to one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBump {
    pub species: Species,
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// One entry per region.
    pub regions: Vec<RegionValues>,
    #[serde(default)]
    pub bumps: Vec<GaussianBump>,
}

/// Per-species arrays with one value per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesArrays {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl SpeciesArrays {
    fn flatten(&self, regions: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(4 * regions);
        for sp in Species::ALL {
            let v = match sp {
                Species::S => &self.s,
                Species::E => &self.e,
                Species::I => &self.i,
                Species::R => &self.r,
            };
            if v.len() != regions {
                return Err(Error::Config(format!(
                    "{what}.{} has {} entries, expected one per region ({regions})",
                    sp.name(),
                    v.len()
                )));
            }
            out.extend_from_slice(v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub lower: SpeciesArrays,
    pub upper: SpeciesArrays,
    /// Starting controls; interval midpoints when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<SpeciesArrays>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryLayout {
    /// Region averages per level.
    #[default]
    Regions,
    /// Every cell per level.
    Cells,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub trajectory: TrajectoryLayout,
    /// Write full field snapshots every this many steps (0 disables).
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Centered finite-difference step for gradient probes.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    /// Largest perturbation size `h` for the continuous-dependence check.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    /// Linear-solver tolerance used by all checks.
    #[serde(default = "default_verify_tolerance")]
    pub solver_tolerance: f64,
}

fn default_fd_step() -> f64 {
    1e-4
}
fn default_perturbation() -> f64 {
    1e-2
}
fn default_verify_tolerance() -> f64 {
    1e-14
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            fd_step: default_fd_step(),
            perturbation: default_perturbation(),
            solver_tolerance: default_verify_tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSpec,
    pub time: TimeSpec,
    pub regions: Vec<RegionBox>,
    pub control_target: Vec<RegionBox>,
    pub parameters: Parameters,
    pub transmission: TransmissionRate,
    pub kappa_bounds: KappaBounds,
    #[serde(default)]
    pub diffusion: DiffusionSpec,
    pub initial: InitialSpec,
    pub controls: ControlSpec,
    pub cost: CostConfig,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Parses a JSON document. Syntax errors map to [`Error::Parse`]; a
    /// well-formed document with missing, unknown or mistyped fields maps to
    /// [`Error::Config`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            use serde_json::error::Category;
            match e.classify() {
                Category::Data => Error::Config(e.to_string()),
                _ => Error::Parse {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                },
            }
        })
    }

    /// Pretty JSON with all defaults filled in.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config serializes")
    }

    /// Validates everything and builds the runnable scenario.
    pub fn build(&self) -> Result<Scenario> {
        let domain = Domain::new(&self.domain.extents, &self.domain.cells)?;
        let time = TimeGrid::new(self.time.final_time, self.time.steps)?;
        let partition = build_grid(&domain, &self.regions, &self.control_target)?;
        let m = partition.num_regions();

        self.parameters.validate()?;
        self.transmission.validate(domain.num_cells())?;
        self.kappa_bounds.validate()?;
        if let DiffusionSpec::Nonlinear { kappa, .. } = &self.diffusion {
            kappa.validate(&self.kappa_bounds)?;
        }
        if self.solver.tolerance <= 0.0 {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        let cost = CostConfig::new(self.cost.alpha)?;
        let o = &self.optimizer;
        if !(o.tolerance > 0.0 && o.armijo > 0.0 && o.armijo < 1.0) {
            return Err(Error::Config("optimizer needs tolerance > 0 and armijo in (0, 1)".into()));
        }
        let v = &self.verify;
        if !(v.fd_step > 0.0 && v.perturbation > 0.0 && v.solver_tolerance > 0.0) {
            return Err(Error::Config("verify fd_step, perturbation and solver_tolerance must be positive".into()));
        }

        let initial = self.initial_data(&domain, partition.labels(), m)?;
        let bounds = ControlBounds::new(
            m,
            self.controls.lower.flatten(m, "controls.lower")?,
            self.controls.upper.flatten(m, "controls.upper")?,
            &self.kappa_bounds,
        )?;
        let start = match &self.controls.initial {
            Some(init) => ControlVector::new(bounds.clone(), init.flatten(m, "controls.initial")?)?,
            None => bounds.midpoint(),
        };

        let problem = Problem {
            domain,
            partition,
            time,
            params: self.parameters.clone(),
            rates: self.transmission.clone(),
            initial,
            solver: self.solver,
        };
        let mut warnings = Vec::new();
        let dt_safe = problem.dt_safe();
        if time.dt() > dt_safe {
            warnings.push(format!(
                "time step {} exceeds the positivity guideline {dt_safe:.6e}; fields may turn negative",
                time.dt()
            ));
        }
        Ok(Scenario {
            problem,
            kappa_bounds: self.kappa_bounds,
            bounds,
            start,
            cost,
            optimizer: self.optimizer,
            diffusion: self.diffusion.clone(),
            output: self.output,
            verify: self.verify,
            seed: self.seed,
            warnings,
        })
    }

    fn initial_data(&self, domain: &Domain, labels: &[usize], m: usize) -> Result<InitialData> {
        if self.initial.regions.len() != m {
            return Err(Error::Config(format!(
                "initial.regions has {} entries, expected one per region ({m})",
                self.initial.regions.len()
            )));
        }
        let n = domain.num_cells();
        let mut fields = StateFields::zeros(n);
        for (c, &l) in labels.iter().enumerate() {
            let v = self.initial.regions[l];
            fields.s[c] = v.s;
            fields.e[c] = v.e;
            fields.i[c] = v.i;
            fields.r[c] = v.r;
        }
        for (k, b) in self.initial.bumps.iter().enumerate() {
            if b.center.len() != domain.dim() || !(b.width > 0.0) || !b.amplitude.is_finite() {
                return Err(Error::Config(format!(
                    "initial.bumps[{k}] needs a {}-dimensional center and a positive width",
                    domain.dim()
                )));
            }
            let f = fields.get_mut(b.species);
            for (c, v) in f.iter_mut().enumerate() {
                let x = domain.cell_center(c);
                let d2: f64 = b.center.iter().zip(x).map(|(a, x)| (x - a) * (x - a)).sum();
                *v += b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp();
            }
        }
        InitialData::new(fields)
    }
}

/// A validated, ready-to-run scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: Problem,
    pub kappa_bounds: KappaBounds,
    pub bounds: ControlBounds,
    /// Starting controls (also used by `simulate` in control mode).
    pub start: ControlVector,
    pub cost: CostConfig,
    pub optimizer: OptimizerOptions,
    pub diffusion: DiffusionSpec,
    pub output: OutputSpec,
    pub verify: VerifySpec,
    pub seed: u64,
    /// Non-fatal findings, such as a time step above the positivity guideline.
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Diffusion source for a plain simulation.
    pub fn diffusion(&self) -> Diffusion<'_> {
        match &self.diffusion {
            DiffusionSpec::Controls => Diffusion::Controls(&self.start),
            DiffusionSpec::Nonlinear { kappa, picard } => Diffusion::StateDependent { kappa, picard: *picard },
        }
    }

    pub fn with_solver_tolerance(&self, tolerance: f64) -> Self {
        let mut s = self.clone();
        s.problem.solver = SolverOptions {
            tolerance,
            ..s.problem.solver
        };
        s
    }
}
