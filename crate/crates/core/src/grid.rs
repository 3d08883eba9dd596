//! Cell-centered finite-volume grids on intervals and rectangles.
//!
//! Cells are numbered `ix + nx * iy`. The boundary carries a homogeneous
//! Neumann condition, which in a cell-centered scheme simply means that no
//! face is created on the boundary: every flux is an interior face flux and
//! therefore appears with opposite signs in exactly two cells.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interior face between two cells, `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub lo: usize,
    pub hi: usize,
    /// Face measure divided by the distance between the two cell centers.
    pub geometry: f64,
}

/// Uniform axis-aligned domain in one or two dimensions.
#[derive(Debug, Clone)]
pub struct Domain {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
    cell_volume: f64,
    faces: Arc<[Face]>,
}

impl Domain {
    pub fn new_1d(length: f64, cells: usize) -> Result<Self> {
        Self::new(&[length], &[cells])
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    /// Builds a domain from per-axis extents and cell counts (one or two axes).
    pub fn new(extents: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = extents.len();
        if !(1..=2).contains(&dim) || cells.len() != dim {
            return Err(Error::Config(format!(
                "domain must have 1 or 2 axes with matching cell counts (got {} extents, {} counts)",
                extents.len(),
                cells.len()
            )));
        }
        for (axis, (&l, &n)) in extents.iter().zip(cells).enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("extent of axis {axis} must be positive, got {l}")));
            }
            if n < 2 {
                return Err(Error::Config(format!("axis {axis} needs at least 2 cells, got {n}")));
            }
        }
        let ext = [extents[0], if dim == 2 { extents[1] } else { 1.0 }];
        let cnt = [cells[0], if dim == 2 { cells[1] } else { 1 }];
        let spacing = [ext[0] / cnt[0] as f64, ext[1] / cnt[1] as f64];
        let cell_volume = if dim == 2 { spacing[0] * spacing[1] } else { spacing[0] };

        let mut faces = Vec::with_capacity(2 * cnt[0] * cnt[1]);
        let (nx, ny) = (cnt[0], cnt[1]);
        // x-faces: measure hy (1 in 1D), center distance hx
        let gx = if dim == 2 { spacing[1] / spacing[0] } else { 1.0 / spacing[0] };
        for iy in 0..ny {
            for ix in 0..nx - 1 {
                let c = ix + nx * iy;
                faces.push(Face { lo: c, hi: c + 1, geometry: gx });
            }
        }
        if dim == 2 {
            let gy = spacing[0] / spacing[1];
            for iy in 0..ny - 1 {
                for ix in 0..nx {
                    let c = ix + nx * iy;
                    faces.push(Face { lo: c, hi: c + nx, geometry: gy });
                }
            }
        }

        Ok(Self {
            dim,
            extents: ext,
            cells: cnt,
            spacing,
            cell_volume,
            faces: faces.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn num_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Measure of the whole domain.
    pub fn measure(&self) -> f64 {
        self.cell_volume * self.num_cells() as f64
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Cell center; the second coordinate is 0 in 1D.
    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let ix = cell % self.cells[0];
        let iy = cell / self.cells[0];
        let y = if self.dim == 2 { (iy as f64 + 0.5) * self.spacing[1] } else { 0.0 };
        [(ix as f64 + 0.5) * self.spacing[0], y]
    }

    /// `Σ field·vol` over all cells, or only over the masked cells.
    pub fn integrate(&self, field: &[f64], mask: Option<&[bool]>) -> f64 {
        debug_assert_eq!(field.len(), self.num_cells());
        let sum: f64 = match mask {
            None => field.iter().sum(),
            Some(mask) => field.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum(),
        };
        sum * self.cell_volume
    }

    /// Face-wise gradient pairing `Σ_f w_f (a_lo − a_hi)(b_lo − b_hi)`.
    ///
    /// With `w` the transmissibilities of an operator this is the discrete
    /// `∫ κ ∇a·∇b`; with `w_f = geometry` it is the unweighted `∫ ∇a·∇b`.
    pub fn grad_pairing(&self, weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
        self.faces
            .iter()
            .zip(weights)
            .map(|(f, w)| w * (a[f.lo] - a[f.hi]) * (b[f.lo] - b[f.hi]))
            .sum()
    }

    /// Unit-coefficient face weights.
    pub fn geometry_weights(&self) -> Vec<f64> {
        self.faces.iter().map(|f| f.geometry).collect()
    }
}

/// Uniform time grid on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(Error::Config(format!("final time must be positive, got {final_time}")));
        }
        if steps == 0 {
            return Err(Error::Config("number of time steps must be positive".into()));
        }
        Ok(Self { final_time, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// Time of level `k`; level `K` returns `T` exactly.
    pub fn time(&self, level: usize) -> f64 {
        if level == self.steps {
            self.final_time
        } else {
            level as f64 * self.dt()
        }
    }
}

/// Axis-aligned half-open box `[min, max)` used to describe regions; cells are
/// assigned by center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl RegionBox {
    pub fn contains(&self, point: &[f64]) -> bool {
        self.min
            .iter()
            .zip(&self.max)
            .zip(point)
            .all(|((lo, hi), x)| *lo <= *x && *x < *hi)
    }
}

/// Disjoint labeling of the cells into regions `Ω_1..Ω_m`, plus the target mask `Ω_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainPartition {
    labels: Vec<usize>,
    measures: Vec<f64>,
    control_mask: Vec<bool>,
    control_measure: f64,
}

impl SubdomainPartition {
    /// Builds a partition from explicit zero-based cell labels.
    pub fn from_labels(domain: &Domain, labels: Vec<usize>, control_mask: Vec<bool>) -> Result<Self> {
        let n = domain.num_cells();
        if labels.len() != n || control_mask.len() != n {
            return Err(Error::Config(format!(
                "partition covers {} cells and mask {} cells, grid has {n}",
                labels.len(),
                control_mask.len()
            )));
        }
        let regions = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; regions];
        for &l in &labels {
            counts[l] += 1;
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("region {} contains no cells", j + 1)));
        }
        let vol = domain.cell_volume();
        let measures = counts.iter().map(|&c| c as f64 * vol).collect();
        let control_measure = control_mask.iter().filter(|&&m| m).count() as f64 * vol;
        Ok(Self {
            labels,
            measures,
            control_mask,
            control_measure,
        })
    }

    /// Single region covering the whole domain.
    pub fn whole(domain: &Domain, control_mask: Vec<bool>) -> Result<Self> {
        Self::from_labels(domain, vec![0; domain.num_cells()], control_mask)
    }

    pub fn num_regions(&self) -> usize {
        self.measures.len()
    }

    /// Zero-based region label of every cell.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn control_mask(&self) -> &[bool] {
        &self.control_mask
    }

    pub fn control_measure(&self) -> f64 {
        self.control_measure
    }

    /// Indicator field of region `j` (zero-based).
    pub fn indicator(&self, region: usize) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == region { 1.0 } else { 0.0 }).collect()
    }
}

/// Assigns cells to regions and to the control target by cell center.
///
/// Every cell center must lie in exactly one region box.
pub fn build_grid(domain: &Domain, regions: &[RegionBox], control: &[RegionBox]) -> Result<SubdomainPartition> {
    if regions.is_empty() {
        return Err(Error::Config("at least one region is required".into()));
    }
    for (j, b) in regions.iter().chain(control).enumerate() {
        if b.min.len() != domain.dim() || b.max.len() != domain.dim() {
            return Err(Error::Config(format!(
                "box {} has dimension {} but the domain is {}-dimensional",
                j + 1,
                b.min.len(),
                domain.dim()
            )));
        }
    }
    let mut labels = Vec::with_capacity(domain.num_cells());
    let mut mask = Vec::with_capacity(domain.num_cells());
    for c in 0..domain.num_cells() {
        let center = domain.cell_center(c);
        let p = &center[..domain.dim()];
        let mut hit = regions.iter().enumerate().filter(|(_, b)| b.contains(p)).map(|(j, _)| j);
        let label = match (hit.next(), hit.next()) {
            (Some(j), None) => j,
            (None, _) => {
                return Err(Error::Config(format!("cell {c} at {p:?} is not covered by any region")));
            }
            (Some(a), Some(b)) => {
                return Err(Error::Config(format!(
                    "cell {c} at {p:?} is covered by overlapping regions {} and {}",
                    a + 1,
                    b + 1
                )));
            }
        };
        labels.push(label);
        mask.push(control.iter().any(|b| b.contains(p)));
    }
    let partition = SubdomainPartition::from_labels(domain, labels, mask)?;
    if partition.num_regions() != regions.len() {
        return Err(Error::Config(format!(
            "region {} contains no cell centers",
            partition.num_regions() + 1
        )));
    }
    Ok(partition)
}

/// `2ab / (a + b)`.
#[inline]
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Partial derivatives of [`harmonic_mean`] with respect to `a` and `b`.
#[inline]
pub fn harmonic_mean_partials(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let s2 = s * s;
    (2.0 * b * b / s2, 2.0 * a * a / s2)
}

/// Discrete `v ↦ div(κ∇v)` with face transmissibilities `geometry · hm(κ_lo, κ_hi)`.
///
/// Internally the operator is kept in stiffness form `K` (symmetric positive
/// semi-definite, `(Kv)_c = Σ_f T_f (v_c − v_nb)`); the divergence is
/// `−K v / vol`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    domain: Domain,
    transmissibility: Vec<f64>,
    diagonal: Vec<f64>,
}

impl DiffusionOperator {
    pub fn transmissibility(&self) -> &[f64] {
        &self.transmissibility
    }

    /// Diagonal of the stiffness matrix.
    pub fn stiffness_diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// `out += K v`.
    pub fn add_stiffness(&self, v: &[f64], out: &mut [f64]) {
        for (f, t) in self.domain.faces().iter().zip(&self.transmissibility) {
            let flux = t * (v[f.lo] - v[f.hi]);
            out[f.lo] += flux;
            out[f.hi] -= flux;
        }
    }

    /// Applies `div(κ∇·)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.add_stiffness(v, &mut out);
        let inv = -1.0 / self.domain.cell_volume();
        out.iter_mut().for_each(|x| *x *= inv);
        out
    }

    /// Row-major dense matrix of `div(κ∇·)`; intended for small grids and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.domain.num_cells();
        let mut m = vec![vec![0.0; n]; n];
        let inv = 1.0 / self.domain.cell_volume();
        for (f, t) in self.domain.faces().iter().zip(&self.transmissibility) {
            let w = t * inv;
            m[f.lo][f.lo] -= w;
            m[f.hi][f.hi] -= w;
            m[f.lo][f.hi] += w;
            m[f.hi][f.lo] += w;
        }
        m
    }
}

/// Assembles the diffusion operator for a per-cell coefficient field.
pub fn assemble_diffusion(domain: &Domain, kappa: &[f64]) -> Result<DiffusionOperator> {
    if kappa.len() != domain.num_cells() {
        return Err(Error::Config(format!(
            "kappa field has {} entries, grid has {} cells",
            kappa.len(),
            domain.num_cells()
        )));
    }
    if let Some((c, k)) = kappa.iter().enumerate().find(|(_, k)| !(k.is_finite() && **k > 0.0)) {
        return Err(Error::Domain(format!("diffusion coefficient must be positive, cell {c} has {k}")));
    }
    let mut diagonal = vec![0.0; kappa.len()];
    let transmissibility = domain
        .faces()
        .iter()
        .map(|f| {
            let t = f.geometry * harmonic_mean(kappa[f.lo], kappa[f.hi]);
            diagonal[f.lo] += t;
            diagonal[f.hi] += t;
            t
        })
        .collect();
    Ok(DiffusionOperator {
        domain: domain.clone(),
        transmissibility,
        diagonal,
    })
}

/// Directional derivative of the transmissibilities with respect to κ in direction `dkappa`.
pub fn transmissibility_derivative(domain: &Domain, kappa: &[f64], dkappa: &[f64]) -> Vec<f64> {
    domain
        .faces()
        .iter()
        .map(|f| {
            let (da, db) = harmonic_mean_partials(kappa[f.lo], kappa[f.hi]);
            f.geometry * (da * dkappa[f.lo] + db * dkappa[f.hi])
        })
        .collect()
}
