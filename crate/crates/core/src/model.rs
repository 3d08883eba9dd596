//! Model data: rate parameters, transmission and diffusion coefficient
//! functions, initial data, state fields and the control vector.
//!
//! Coefficient functions of the total population `n` are evaluated pointwise
//! on a cell field (Nemytskii evaluation): `β(x, t, n(x, t))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SubdomainPartition;

/// The four compartments, in solve order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    S,
    E,
    I,
    R,
}

impl Species {
    pub const ALL: [Species; 4] = [Species::S, Species::E, Species::I, Species::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::S => "s",
            Species::E => "e",
            Species::I => "i",
            Species::R => "r",
        }
    }
}

/// Piecewise-constant loss-of-immunity rate `γ(t)`.
///
/// Entry `k` applies on `(start_k, start_{k+1}]`; the first entry also covers
/// everything up to its start. Lookup is left-continuous, so at a breakpoint the
/// earlier value is returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GammaTable {
    pub entries: Vec<GammaEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaEntry {
    pub start: f64,
    pub value: f64,
}

impl GammaTable {
    pub fn constant(value: f64) -> Self {
        Self {
            entries: vec![GammaEntry { start: 0.0, value }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("gamma table needs at least one entry".into()));
        }
        for w in self.entries.windows(2) {
            if !(w[0].start < w[1].start) {
                return Err(Error::Config("gamma table start times must be strictly increasing".into()));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| !(e.value.is_finite() && e.value >= 0.0)) {
            return Err(Error::Config(format!("gamma must be nonnegative, got {}", e.value)));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.entries.iter().rposition(|e| e.start < t).unwrap_or(0);
        self.entries[idx].value
    }

    /// `γ*`, the sup of the table.
    pub fn bound(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(0.0, f64::max)
    }
}

/// Constant rates `σ`, `φ_e`, `φ_r` and the table for `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub sigma: f64,
    pub phi_e: f64,
    pub phi_r: f64,
    pub gamma: GammaTable,
}

impl Parameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma", self.sigma), ("phi_e", self.phi_e), ("phi_r", self.phi_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive constant, got {v}")));
            }
        }
        self.gamma.validate()
    }
}

/// Shape of the density dependence shared by `β_i` and `β_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaShape {
    /// `f(n) = 1`.
    Constant,
    /// `f(n) = 1 / (1 + n/n_sat)` for `n ≥ 0`, continued as
    /// `2 − 1/(1 − n/n_sat)` for `n < 0` so that `f` is C¹ and bounded on ℝ.
    Saturating { n_sat: f64 },
    /// `f(n) = 1 / (1 + exp((n − n_crit)/width))`.
    Logistic { n_crit: f64, width: f64 },
}

impl BetaShape {
    fn validate(&self) -> Result<()> {
        match *self {
            BetaShape::Constant => Ok(()),
            BetaShape::Saturating { n_sat } if n_sat.is_finite() && n_sat > 0.0 => Ok(()),
            BetaShape::Saturating { n_sat } => Err(Error::Config(format!("n_sat must be positive, got {n_sat}"))),
            BetaShape::Logistic { n_crit, width } if n_crit.is_finite() && width.is_finite() && width > 0.0 => Ok(()),
            BetaShape::Logistic { width, .. } => Err(Error::Config(format!("logistic width must be positive, got {width}"))),
        }
    }

    pub fn value(&self, n: f64) -> f64 {
        match *self {
            BetaShape::Constant => 1.0,
            BetaShape::Saturating { n_sat } => {
                if n >= 0.0 {
                    1.0 / (1.0 + n / n_sat)
                } else {
                    2.0 - 1.0 / (1.0 - n / n_sat)
                }
            }
            BetaShape::Logistic { n_crit, width } => logistic(-(n - n_crit) / width),
        }
    }

    pub fn derivative(&self, n: f64) -> f64 {
        match *self {
            BetaShape::Constant => 0.0,
            BetaShape::Saturating { n_sat } => {
                let q = 1.0 + n.abs() / n_sat;
                -1.0 / (n_sat * q * q)
            }
            BetaShape::Logistic { n_crit, width } => {
                let f = logistic(-(n - n_crit) / width);
                -f * (1.0 - f) / width
            }
        }
    }

    /// `sup f` over ℝ.
    pub fn sup(&self) -> f64 {
        match self {
            BetaShape::Constant | BetaShape::Logistic { .. } => 1.0,
            BetaShape::Saturating { .. } => 2.0,
        }
    }

    /// `sup |f'|` over ℝ.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            BetaShape::Constant => 0.0,
            BetaShape::Saturating { n_sat } => 1.0 / n_sat,
            BetaShape::Logistic { width, .. } => 0.25 / width,
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Transmission rates `β_i = β_i0·m(x)·f(n)` and `β_e = β_e0·m(x)·f(n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionRate {
    pub shape: BetaShape,
    pub beta_i0: f64,
    pub beta_e0: f64,
    /// Optional per-cell spatial multiplier in `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<Vec<f64>>,
}

impl TransmissionRate {
    pub fn constant(beta_i0: f64, beta_e0: f64) -> Self {
        Self {
            shape: BetaShape::Constant,
            beta_i0,
            beta_e0,
            multiplier: None,
        }
    }

    pub fn validate(&self, cells: usize) -> Result<()> {
        self.shape.validate()?;
        for (name, v) in [("beta_i0", self.beta_i0), ("beta_e0", self.beta_e0)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if let Some(m) = &self.multiplier {
            if m.len() != cells {
                return Err(Error::Config(format!(
                    "transmission multiplier has {} entries, grid has {cells} cells",
                    m.len()
                )));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("transmission multiplier entries must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn weight(&self, cell: usize) -> f64 {
        self.multiplier.as_ref().map_or(1.0, |m| m[cell])
    }

    /// Declared bound `β*` on both rates.
    pub fn bound(&self) -> f64 {
        self.beta_i0.max(self.beta_e0) * self.shape.sup()
    }

    /// Declared Lipschitz constant in `n` of both rates.
    pub fn lipschitz(&self) -> f64 {
        self.beta_i0.max(self.beta_e0) * self.shape.lipschitz()
    }

    /// `(β_i, β_e)` at a single cell.
    pub fn eval_cell(&self, cell: usize, _t: f64, n: f64) -> (f64, f64) {
        let f = self.weight(cell) * self.shape.value(n);
        (self.beta_i0 * f, self.beta_e0 * f)
    }

    /// `(β_i′, β_e′)` at a single cell.
    pub fn eval_prime_cell(&self, cell: usize, _t: f64, n: f64) -> (f64, f64) {
        let f = self.weight(cell) * self.shape.derivative(n);
        (self.beta_i0 * f, self.beta_e0 * f)
    }

    /// Pointwise `(β_i(n), β_e(n))` fields.
    pub fn eval(&self, t: f64, n: &[f64]) -> (Vec<f64>, Vec<f64>) {
        n.iter().enumerate().map(|(c, &v)| self.eval_cell(c, t, v)).unzip()
    }

    /// Pointwise `(β_i′(n), β_e′(n))` fields.
    pub fn eval_prime(&self, t: f64, n: &[f64]) -> (Vec<f64>, Vec<f64>) {
        n.iter().enumerate().map(|(c, &v)| self.eval_prime_cell(c, t, v)).unzip()
    }
}

/// Global bounds `κ_* ≤ κ ≤ κ^*` on every diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaBounds {
    pub lower: f64,
    pub upper: f64,
}

impl KappaBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.lower > 0.0) {
            return Err(Error::Config(format!("kappa_star lower bound must be positive, got {}", self.lower)));
        }
        if !(self.upper.is_finite() && self.upper >= self.lower) {
            return Err(Error::Config(format!(
                "kappa upper bound {} is below lower bound {}",
                self.upper, self.lower
            )));
        }
        Ok(())
    }
}

/// State-dependent diffusion coefficient `κ(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaForm {
    Constant { value: f64 },
    /// `low + (high − low)·n⁺/(n_half + n⁺)`.
    Saturating { low: f64, high: f64, n_half: f64 },
}

impl KappaForm {
    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            KappaForm::Constant { value } => value,
            KappaForm::Saturating { low, high, n_half } => {
                let p = n.max(0.0);
                low + (high - low) * p / (n_half + p)
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            KappaForm::Constant { value } => (value, value),
            KappaForm::Saturating { low, high, .. } => (low.min(high), low.max(high)),
        }
    }
}

/// The four coefficient functions `κ_s, κ_e, κ_i, κ_r` of `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearDiffusion {
    pub s: KappaForm,
    pub e: KappaForm,
    pub i: KappaForm,
    pub r: KappaForm,
}

impl NonlinearDiffusion {
    pub fn form(&self, sp: Species) -> &KappaForm {
        match sp {
            Species::S => &self.s,
            Species::E => &self.e,
            Species::I => &self.i,
            Species::R => &self.r,
        }
    }

    pub fn validate(&self, bounds: &KappaBounds) -> Result<()> {
        for sp in Species::ALL {
            let form = self.form(sp);
            if let KappaForm::Saturating { n_half, .. } = form {
                if !(n_half.is_finite() && *n_half > 0.0) {
                    return Err(Error::Config(format!("kappa_{} n_half must be positive", sp.name())));
                }
            }
            let (lo, hi) = form.range();
            if lo < bounds.lower || hi > bounds.upper {
                return Err(Error::Config(format!(
                    "kappa_{} range [{lo}, {hi}] leaves [kappa_star, kappa^star] = [{}, {}]",
                    sp.name(),
                    bounds.lower,
                    bounds.upper
                )));
            }
        }
        Ok(())
    }

    /// Pointwise `κ_sp(n)`.
    pub fn eval(&self, sp: Species, n: &[f64]) -> Vec<f64> {
        let form = self.form(sp);
        n.iter().map(|&v| form.eval(v)).collect()
    }
}

/// Values of the four compartments on the grid at one time level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateFields {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl StateFields {
    pub fn zeros(cells: usize) -> Self {
        Self {
            s: vec![0.0; cells],
            e: vec![0.0; cells],
            i: vec![0.0; cells],
            r: vec![0.0; cells],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.s.len()
    }

    pub fn get(&self, sp: Species) -> &[f64] {
        match sp {
            Species::S => &self.s,
            Species::E => &self.e,
            Species::I => &self.i,
            Species::R => &self.r,
        }
    }

    pub fn get_mut(&mut self, sp: Species) -> &mut Vec<f64> {
        match sp {
            Species::S => &mut self.s,
            Species::E => &mut self.e,
            Species::I => &mut self.i,
            Species::R => &mut self.r,
        }
    }

    /// Total population `n = s + e + i + r`, recomputed on every call.
    pub fn n(&self) -> Vec<f64> {
        (0..self.num_cells())
            .map(|c| self.s[c] + self.e[c] + self.i[c] + self.r[c])
            .collect()
    }

    pub fn min_value(&self) -> f64 {
        Species::ALL
            .iter()
            .flat_map(|&sp| self.get(sp).iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        Species::ALL.iter().all(|&sp| self.get(sp).iter().all(|v| v.is_finite()))
    }
}

/// Nonnegative bounded initial data.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData(StateFields);

impl InitialData {
    pub fn new(fields: StateFields) -> Result<Self> {
        let n = fields.num_cells();
        for sp in Species::ALL {
            let f = fields.get(sp);
            if f.len() != n {
                return Err(Error::Config("initial fields have different lengths".into()));
            }
            if let Some(v) = f.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Config(format!(
                    "initial {}0 must be nonnegative and finite, found {v}",
                    sp.name()
                )));
            }
        }
        Ok(Self(fields))
    }

    pub fn fields(&self) -> &StateFields {
        &self.0
    }
}

/// Per-entry box `[u_min, u_max]` for the `4m` control scalars.
///
/// Entries are stored species-major: index `sp·m + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    regions: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(regions: usize, lower: Vec<f64>, upper: Vec<f64>, kappa: &KappaBounds) -> Result<Self> {
        if lower.len() != 4 * regions || upper.len() != 4 * regions {
            return Err(Error::Config(format!(
                "control bounds need {} entries per side for {regions} regions",
                4 * regions
            )));
        }
        for k in 0..4 * regions {
            let (sp, j) = (Species::ALL[k / regions], k % regions + 1);
            let (lo, hi) = (lower[k], upper[k]);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("control interval for {},{j} is not finite", sp.name())));
            }
            if lo > hi {
                return Err(Error::Config(format!(
                    "empty control interval [{lo}, {hi}] for u^{{{},{j}}}",
                    sp.name()
                )));
            }
            if lo < kappa.lower {
                return Err(Error::Config(format!(
                    "u_min^{{{},{j}}} is below kappa_star bound ({lo} < {})",
                    sp.name(),
                    kappa.lower
                )));
            }
            if hi > kappa.upper {
                return Err(Error::Config(format!(
                    "u_max^{{{},{j}}} exceeds kappa_star bound ({hi} > {})",
                    sp.name(),
                    kappa.upper
                )));
            }
        }
        Ok(Self { regions, lower, upper })
    }

    /// Same interval for every species and region.
    pub fn uniform(regions: usize, lower: f64, upper: f64, kappa: &KappaBounds) -> Result<Self> {
        Self::new(regions, vec![lower; 4 * regions], vec![upper; 4 * regions], kappa)
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn index(&self, sp: Species, region: usize) -> usize {
        sp.index() * self.regions + region
    }

    /// Entrywise clamp onto the box.
    pub fn clamp(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.min(*hi).max(*lo))
            .collect()
    }

    pub fn midpoint(&self) -> ControlVector {
        let values = self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect();
        ControlVector {
            bounds: self.clone(),
            values,
        }
    }
}

/// The `4m` admissible control scalars `u_j^s, u_j^e, u_j^i, u_j^r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    bounds: ControlBounds,
    values: Vec<f64>,
}

impl ControlVector {
    pub fn new(bounds: ControlBounds, values: Vec<f64>) -> Result<Self> {
        if values.len() != bounds.len() {
            return Err(Error::Config(format!(
                "control vector has {} entries, expected {}",
                values.len(),
                bounds.len()
            )));
        }
        for (k, v) in values.iter().enumerate() {
            if !(bounds.lower[k] <= *v && *v <= bounds.upper[k]) {
                let (sp, j) = (Species::ALL[k / bounds.regions], k % bounds.regions + 1);
                return Err(Error::Config(format!(
                    "control u^{{{},{j}}} = {v} lies outside [{}, {}]",
                    sp.name(),
                    bounds.lower[k],
                    bounds.upper[k]
                )));
            }
        }
        Ok(Self { bounds, values })
    }

    /// Projects arbitrary values onto the admissible box.
    pub fn projected(bounds: &ControlBounds, values: &[f64]) -> Self {
        Self {
            values: bounds.clamp(values),
            bounds: bounds.clone(),
        }
    }

    pub fn bounds(&self) -> &ControlBounds {
        &self.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn regions(&self) -> usize {
        self.bounds.regions
    }

    pub fn get(&self, sp: Species, region: usize) -> f64 {
        self.values[self.bounds.index(sp, region)]
    }

    pub fn species_values(&self, sp: Species) -> &[f64] {
        let m = self.bounds.regions;
        &self.values[sp.index() * m..(sp.index() + 1) * m]
    }
}

/// Expands the controls into the four piecewise-constant coefficient fields.
pub fn expand_controls(u: &ControlVector, partition: &SubdomainPartition) -> Result<[Vec<f64>; 4]> {
    if partition.num_regions() != u.regions() {
        return Err(Error::Config(format!(
            "controls are defined on {} regions, partition has {}",
            u.regions(),
            partition.num_regions()
        )));
    }
    Ok(Species::ALL.map(|sp| {
        let vals = u.species_values(sp);
        partition.labels().iter().map(|&l| vals[l]).collect()
    }))
}

/// Expands a raw `4m` direction (not necessarily admissible) into per-cell fields.
pub fn expand_direction(direction: &[f64], partition: &SubdomainPartition) -> [Vec<f64>; 4] {
    let m = partition.num_regions();
    Species::ALL.map(|sp| {
        let vals = &direction[sp.index() * m..(sp.index() + 1) * m];
        partition.labels().iter().map(|&l| vals[l]).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain, RegionBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kb() -> KappaBounds {
        KappaBounds { lower: 0.01, upper: 5.0 }
    }

    fn halves() -> (Domain, SubdomainPartition) {
        let d = Domain::new_1d(1.0, 4).unwrap();
        let regions = [
            RegionBox { min: vec![0.0], max: vec![0.5] },
            RegionBox { min: vec![0.5], max: vec![1.0] },
        ];
        let p = build_grid(&d, &regions, &[]).unwrap();
        (d, p)
    }

    #[test]
    fn single_region_expands_uniformly() {
        let d = Domain::new_1d(1.0, 5).unwrap();
        let p = SubdomainPartition::whole(&d, vec![false; 5]).unwrap();
        let b = ControlBounds::uniform(1, 0.1, 2.0, &kb()).unwrap();
        let u = ControlVector::new(b, vec![0.7, 0.2, 0.3, 0.4]).unwrap();
        let k = expand_controls(&u, &p).unwrap();
        assert!(k[0].iter().all(|&v| v == 0.7));
    }

    #[test]
    fn two_regions_expand_by_label() {
        let (d, p) = halves();
        let b = ControlBounds::uniform(2, 0.1, 2.0, &kb()).unwrap();
        let u = ControlVector::new(b, vec![0.3, 0.3, 0.2, 0.2, 0.1, 0.5, 0.4, 0.4]).unwrap();
        let k = expand_controls(&u, &p).unwrap();
        assert_eq!(k[Species::I.index()], vec![0.1, 0.1, 0.5, 0.5]);
        let integral = d.integrate(&k[Species::I.index()], None);
        assert!((integral - (0.1 * 0.5 + 0.5 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn region_count_mismatch_is_rejected() {
        let (_, p) = halves();
        let b = ControlBounds::uniform(1, 0.1, 2.0, &kb()).unwrap();
        assert!(expand_controls(&b.midpoint(), &p).is_err());
    }

    #[test]
    fn control_bounds_validation_messages() {
        let err = ControlBounds::new(1, vec![0.5, 0.1, 0.1, 0.1], vec![0.2, 1.0, 1.0, 1.0], &kb()).unwrap_err();
        assert!(err.to_string().contains("empty control interval"));
        let err = ControlBounds::new(2, vec![0.1; 8], vec![1.0, 1.0, 1.0, 1.0, 1.0, 9.0, 1.0, 1.0], &kb()).unwrap_err();
        assert!(err.to_string().contains("u_max^{i,2} exceeds kappa_star bound"), "{err}");
    }

    #[test]
    fn gamma_table_is_left_continuous() {
        let g = GammaTable {
            entries: vec![GammaEntry { start: 0.0, value: 0.1 }, GammaEntry { start: 0.5, value: 0.3 }],
        };
        g.validate().unwrap();
        assert_eq!(g.eval(0.0), 0.1);
        assert_eq!(g.eval(0.5), 0.1);
        assert_eq!(g.eval(0.5000001), 0.3);
        assert_eq!(g.bound(), 0.3);
    }

    #[test]
    fn beta_forms_direct_values() {
        let c = TransmissionRate::constant(0.3, 0.1);
        let (bi, _) = c.eval(0.0, &[0.0, 5.0, 100.0]);
        assert!(bi.iter().all(|&b| b == 0.3));
        let (dbi, dbe) = c.eval_prime(0.0, &[0.0, 5.0]);
        assert!(dbi.iter().chain(&dbe).all(|&b| b == 0.0));

        let s = TransmissionRate {
            shape: BetaShape::Saturating { n_sat: 1.0 },
            beta_i0: 0.4,
            beta_e0: 0.4,
            multiplier: None,
        };
        assert!((s.eval(0.0, &[1.0]).0[0] - 0.2).abs() < 1e-15);
        assert!((s.eval_prime(0.0, &[0.0]).0[0] + 0.4).abs() < 1e-15);

        let masked = TransmissionRate {
            multiplier: Some(vec![1.0, 0.0]),
            ..s
        };
        let (bi, be) = masked.eval(0.0, &[1.0, 1.0]);
        assert_eq!((bi[1], be[1]), (0.0, 0.0));
    }

    fn sample_forms() -> Vec<TransmissionRate> {
        vec![
            TransmissionRate::constant(0.3, 0.1),
            TransmissionRate {
                shape: BetaShape::Saturating { n_sat: 0.7 },
                beta_i0: 0.5,
                beta_e0: 0.2,
                multiplier: None,
            },
            TransmissionRate {
                shape: BetaShape::Logistic { n_crit: 1.5, width: 0.4 },
                beta_i0: 0.8,
                beta_e0: 0.3,
                multiplier: None,
            },
        ]
    }

    #[test]
    fn builtin_forms_satisfy_bound_lipschitz_and_derivative_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for rate in sample_forms() {
            rate.validate(1).unwrap();
            let (bound, lip) = (rate.bound(), rate.lipschitz());
            for _ in 0..2000 {
                let z1: f64 = rng.gen_range(-20.0..20.0);
                let z2: f64 = rng.gen_range(-20.0..20.0);
                let (bi1, be1) = rate.eval_cell(0, 0.0, z1);
                let (bi2, be2) = rate.eval_cell(0, 0.0, z2);
                for b in [bi1, be1] {
                    assert!((0.0..=bound).contains(&b), "{b} outside [0, {bound}]");
                }
                assert!((bi1 - bi2).abs() <= lip * (z1 - z2).abs() * (1.0 + 1e-12) + 1e-15);
                assert!((be1 - be2).abs() <= lip * (z1 - z2).abs() * (1.0 + 1e-12) + 1e-15);

                // centered finite difference oracle, away from the C¹ seam at 0
                if z1.abs() > 1e-3 {
                    let h = 1e-5;
                    let fd = (rate.eval_cell(0, 0.0, z1 + h).0 - rate.eval_cell(0, 0.0, z1 - h).0) / (2.0 * h);
                    let an = rate.eval_prime_cell(0, 0.0, z1).0;
                    // absolute floor: cancellation in the oracle where f is nearly flat
                    assert!(
                        (fd - an).abs() <= 1e-6 * an.abs() + 1e-10,
                        "derivative mismatch at {z1}: {fd} vs {an}"
                    );
                    assert!(an.abs() <= lip * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn expanded_admissible_controls_stay_in_kappa_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, p) = halves();
        let kappa = kb();
        let b = ControlBounds::new(2, vec![0.01, 0.1, 0.2, 0.3, 0.05, 0.5, 1.0, 0.01], vec![5.0; 8], &kappa).unwrap();
        for _ in 0..100 {
            let vals: Vec<f64> = b.lower().iter().zip(b.upper()).map(|(l, h)| rng.gen_range(*l..=*h)).collect();
            let u = ControlVector::new(b.clone(), vals).unwrap();
            for f in expand_controls(&u, &p).unwrap() {
                assert!(f.iter().all(|k| (kappa.lower..=kappa.upper).contains(k)));
            }
        }
    }

    #[test]
    fn nonlinear_diffusion_respects_bounds() {
        let nd = NonlinearDiffusion {
            s: KappaForm::Saturating { low: 0.1, high: 0.5, n_half: 1.0 },
            e: KappaForm::Constant { value: 0.2 },
            i: KappaForm::Constant { value: 0.2 },
            r: KappaForm::Constant { value: 0.2 },
        };
        nd.validate(&KappaBounds { lower: 0.05, upper: 1.0 }).unwrap();
        assert!(nd.validate(&KappaBounds { lower: 0.15, upper: 1.0 }).is_err());
        let k = nd.eval(Species::S, &[-1.0, 0.0, 1.0, 1e9]);
        assert_eq!(k[0], 0.1);
        assert!((k[2] - 0.3).abs() < 1e-15);
        assert!(k[3] <= 0.5);
    }

    #[test]
    fn initial_data_rejects_negative_values() {
        let mut f = StateFields::zeros(3);
        f.i[1] = -1e-3;
        assert!(InitialData::new(f).is_err());
    }
}
