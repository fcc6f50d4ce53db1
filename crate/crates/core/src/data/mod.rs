//! Gridded spatial datasets: per-cell locations, responses and train/test
//! status, coordinate normalization, synthetic GP sampling and masking.

mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DistanceMatrix, MaternKernel};
use crate::linalg::Cholesky;
use crate::meanmodels::{GridSpec, MeanModel};
use crate::points::Points;

pub use io::{
    load_csv, load_csv_from, read_mask, read_predictions, read_truth, write_dataset_csv, write_predictions, write_truth,
    CsvSchema, PredictionRows, TruthRow,
};

/// Cells above this count are refused by [`simulate_gp`].
pub const SIMULATION_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Train,
    Test,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lon: f64,
    pub lat: f64,
    /// Observed value for training cells; held-out truth, if known, for test cells.
    pub response: Option<f64>,
    pub status: CellStatus,
}

/// A `rows x cols` grid stored row-major; row index follows latitude and column
/// index follows longitude, both ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
    label: String,
}

impl GridDataset {
    pub fn new(rows: usize, cols: usize, cells: Vec<Cell>, label: impl Into<String>) -> Result<Self> {
        if rows == 0 || cols == 0 || cells.len() != rows * cols {
            return Err(Error::Structure(format!("{} cells for a {rows}x{cols} grid", cells.len())));
        }
        for (i, c) in cells.iter().enumerate() {
            if !c.lon.is_finite() || !c.lat.is_finite() {
                return Err(Error::Structure(format!("cell {i} has a non-finite coordinate")));
            }
            match (c.status, c.response) {
                (CellStatus::Train, Some(y)) if y.is_finite() => {}
                (CellStatus::Train, _) => {
                    return Err(Error::Structure(format!("training cell {i} lacks a finite response")))
                }
                (_, Some(y)) if !y.is_finite() => {
                    return Err(Error::Structure(format!("cell {i} has a non-finite response")))
                }
                _ => {}
            }
        }
        Ok(Self { rows, cols, cells, label: label.into() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `(train, test, missing)` counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |s| self.cells.iter().filter(|c| c.status == s).count();
        (count(CellStatus::Train), count(CellStatus::Test), count(CellStatus::Missing))
    }

    pub fn ids(&self, status: CellStatus) -> Vec<usize> {
        self.cells.iter().enumerate().filter(|(_, c)| c.status == status).map(|(i, _)| i).collect()
    }

    /// Normalized `[lon, lat]` locations of the given cells.
    pub fn locations(&self, ids: &[usize], norm: &Normalization) -> Result<Points> {
        let mut coords = Vec::with_capacity(2 * ids.len());
        for &i in ids {
            let c = &self.cells[i];
            coords.push(norm.apply(c.lon));
            coords.push(norm.apply(c.lat));
        }
        Points::new(2, coords)
    }

    /// Responses of the given cells; fails if any is unknown.
    pub fn responses(&self, ids: &[usize]) -> Result<Vec<f64>> {
        ids.iter()
            .map(|&i| {
                self.cells[i].response.ok_or_else(|| Error::InsufficientData(format!("cell {i} has no response")))
            })
            .collect()
    }

    /// Held-out truth for all test cells, if every one of them has it.
    pub fn test_truth(&self) -> Option<Vec<f64>> {
        self.responses(&self.ids(CellStatus::Test)).ok()
    }

    /// Row-major training values with every other cell unobserved.
    pub fn training_values(&self) -> Vec<Option<f64>> {
        self.cells.iter().map(|c| if c.status == CellStatus::Train { c.response } else { None }).collect()
    }

    /// The regular grid in normalized coordinates.
    pub fn grid_spec(&self, norm: &Normalization) -> Result<GridSpec> {
        let loc = |r: usize, c: usize| {
            let cell = &self.cells[r * self.cols + c];
            [norm.apply(cell.lon), norm.apply(cell.lat)]
        };
        let origin = loc(0, 0);
        let dx = if self.cols > 1 { loc(0, 1)[0] - origin[0] } else { 1.0 };
        let dy = if self.rows > 1 { loc(1, 0)[1] - origin[1] } else { 1.0 };
        let grid = GridSpec { rows: self.rows, cols: self.cols, origin, step: [dx, dy] };
        let tol = 1e-6 * dx.abs().min(dy.abs());
        for r in 0..self.rows {
            for c in 0..self.cols {
                let [x, y] = loc(r, c);
                let [gx, gy] = grid.location(r, c);
                if (x - gx).abs() > tol || (y - gy).abs() > tol {
                    return Err(Error::Structure(format!("cell ({r}, {c}) is off the regular grid")));
                }
            }
        }
        Ok(grid)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Affine coordinate map `(x + offset) / scale` applied identically to both
/// axes, so distance ratios are preserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self::identity()
    }
}

impl Normalization {
    pub fn new(offset: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(Error::Parameter(format!("normalization needs finite offset and positive scale, got {offset}, {scale}")));
        }
        Ok(Self { offset, scale })
    }

    pub fn identity() -> Self {
        Self { offset: 0.0, scale: 1.0 }
    }

    /// Constants used for the 500 x 300 satellite land-surface-temperature grid.
    pub fn satellite_preset() -> Self {
        Self { offset: 218.0, scale: 464.0 }
    }

    /// Maps the smallest coordinate over both axes to 0 and the largest to 1.
    pub fn min_max(dataset: &GridDataset) -> Self {
        let (lo, hi) = dataset
            .cells
            .iter()
            .flat_map(|c| [c.lon, c.lat])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let range = hi - lo;
        Self { offset: 0.0 - lo, scale: if range > 0.0 { range } else { 1.0 } }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x + self.offset) / self.scale
    }

    #[inline]
    pub fn invert(&self, u: f64) -> f64 {
        u * self.scale - self.offset
    }
}

/// Draw one GP realization on a `rows x cols` grid with spacing `spacing`
/// (cell `(i, j)` at `lon = j * spacing`, `lat = i * spacing`), plus the trend
/// `mean`. Every cell is a training cell.
pub fn simulate_gp(
    rows: usize,
    cols: usize,
    spacing: f64,
    kernel: &MaternKernel,
    mean: &MeanModel,
    seed: u64,
) -> Result<GridDataset> {
    let n = rows * cols;
    if n == 0 {
        return Err(Error::Parameter("simulation grid has no cells".into()));
    }
    if n > SIMULATION_CAP {
        return Err(Error::OracleCap(format!(
            "dense sampling of {n} cells exceeds the cap of {SIMULATION_CAP}"
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Parameter(format!("grid spacing {spacing} must be positive")));
    }
    let coords: Vec<f64> =
        (0..rows).flat_map(|i| (0..cols).flat_map(move |j| [j as f64 * spacing, i as f64 * spacing])).collect();
    let points = Points::new(2, coords)?;
    let chol = Cholesky::factor(&kernel.covariance_matrix(&DistanceMatrix::pairwise(&points)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let l = chol.lower();
    let cells = points
        .rows()
        .enumerate()
        .map(|(i, x)| {
            let field: f64 = l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum();
            Cell { lon: x[0], lat: x[1], response: Some(field + mean.evaluate(x)), status: CellStatus::Train }
        })
        .collect();
    let label = format!(
        "simulated {rows}x{cols} sigma_sq={} rho={} nu={} tau_sq={} seed={seed}",
        kernel.sigma_sq(),
        kernel.rho(),
        kernel.nu(),
        kernel.tau_sq()
    );
    GridDataset::new(rows, cols, cells, label)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Hold out this fraction of the observed cells, chosen uniformly.
    Fraction(f64),
    /// Row-major flags; `true` marks a test cell.
    Cells(Vec<bool>),
}

/// Reassign train/test statuses. Missing cells stay missing.
pub fn mask_split(dataset: &GridDataset, source: &MaskSource, seed: u64) -> Result<GridDataset> {
    let mut cells = dataset.cells.clone();
    let observed: Vec<usize> = dataset
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.status != CellStatus::Missing)
        .map(|(i, _)| i)
        .collect();
    let test: Vec<bool> = match source {
        MaskSource::Fraction(f) => {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Parameter(format!("test fraction {f} must lie in (0, 1)")));
            }
            let count = (f * observed.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut flags = vec![false; cells.len()];
            for j in rand::seq::index::sample(&mut rng, observed.len(), count) {
                flags[observed[j]] = true;
            }
            flags
        }
        MaskSource::Cells(flags) => {
            if flags.len() != cells.len() {
                return Err(Error::Structure(format!(
                    "mask has {} entries for a {}x{} grid",
                    flags.len(),
                    dataset.rows,
                    dataset.cols
                )));
            }
            flags.clone()
        }
    };
    for &i in &observed {
        cells[i].status = if test[i] {
            CellStatus::Test
        } else if cells[i].response.is_some() {
            CellStatus::Train
        } else {
            CellStatus::Missing
        };
    }
    GridDataset::new(dataset.rows, dataset.cols, cells, dataset.label.clone())
}
