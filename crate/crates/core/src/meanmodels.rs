//! Detrending mean functions: constant, linear with interaction, and a
//! Nadaraya-Watson kernel smoother over a regular grid.
//!
//! The GP models `y - mean(x)`; predictions get `mean(x)` added back.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, Matrix};
use crate::points::Points;

/// Regular 2D grid. Column `j` sits at `x = origin[0] + j * step[0]`, row `i`
/// at `y = origin[1] + i * step[1]`; cells are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub origin: [f64; 2],
    pub step: [f64; 2],
}

impl GridSpec {
    /// Unit-spaced grid with cell `(i, j)` at `(j, i)`.
    pub fn unit(rows: usize, cols: usize) -> Self {
        Self { rows, cols, origin: [0.0, 0.0], step: [1.0, 1.0] }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn location(&self, row: usize, col: usize) -> [f64; 2] {
        [self.origin[0] + col as f64 * self.step[0], self.origin[1] + row as f64 * self.step[1]]
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Structure("grid has no cells".into()));
        }
        if !(self.step[0] != 0.0 && self.step[1] != 0.0) || !self.step.iter().chain(&self.origin).all(|v| v.is_finite()) {
            return Err(Error::Structure(format!("degenerate grid spacing {:?}", self.step)));
        }
        Ok(())
    }
}

/// Weight profile of the smoother as a function of distance in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmootherKernel {
    /// `exp(-d / bandwidth)`.
    #[default]
    Exponential,
    /// `exp(-d^2 / bandwidth^2)`.
    Gaussian,
}

impl SmootherKernel {
    fn weight(self, d_sq: f64, bandwidth: f64) -> f64 {
        match self {
            SmootherKernel::Exponential => (-d_sq.sqrt() / bandwidth).exp(),
            SmootherKernel::Gaussian => (-d_sq / (bandwidth * bandwidth)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SmootherMethod {
    Direct,
    Fft,
    /// FFT above 4096 cells, direct below.
    #[default]
    Auto,
}

pub const DEFAULT_BANDWIDTH: f64 = 25.0;

/// A fitted kernel-smoothed field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smoother {
    pub grid: GridSpec,
    pub bandwidth: f64,
    pub kernel: SmootherKernel,
    pub field: Vec<f64>,
}

impl Smoother {
    /// Bilinear interpolation of the field, clamped to the grid extent.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let fc = ((x[0] - g.origin[0]) / g.step[0]).clamp(0.0, (g.cols - 1) as f64);
        let fr = ((x[1] - g.origin[1]) / g.step[1]).clamp(0.0, (g.rows - 1) as f64);
        let (c0, r0) = (fc.floor() as usize, fr.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(g.cols - 1), (r0 + 1).min(g.rows - 1));
        let (tc, tr) = (fc - c0 as f64, fr - r0 as f64);
        let at = |r: usize, c: usize| self.field[r * g.cols + c];
        let top = at(r0, c0) * (1.0 - tc) + at(r0, c1) * tc;
        let bottom = at(r1, c0) * (1.0 - tc) + at(r1, c1) * tc;
        if tr == 0.0 {
            top
        } else {
            top * (1.0 - tr) + bottom * tr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MeanModel {
    /// No detrending.
    Zero,
    Constant { c: f64 },
    /// `beta . [1, x1, x2, x1 * x2]`.
    Linear { beta: [f64; 4] },
    Smoother(Smoother),
}

impl MeanModel {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            MeanModel::Zero => 0.0,
            MeanModel::Constant { c } => *c,
            MeanModel::Linear { beta } => beta[0] + beta[1] * x[0] + beta[2] * x[1] + beta[3] * x[0] * x[1],
            MeanModel::Smoother(s) => s.evaluate(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeanModel::Zero => "zero",
            MeanModel::Constant { .. } => "const",
            MeanModel::Linear { .. } => "linear",
            MeanModel::Smoother(_) => "smoother",
        }
    }

    fn check_locations(&self, locations: &Points, n: usize) -> Result<()> {
        if locations.len() != n {
            return Err(Error::Shape(format!("{} locations for {n} values", locations.len())));
        }
        if matches!(self, MeanModel::Linear { .. } | MeanModel::Smoother(_)) && locations.dim() != 2 {
            return Err(Error::Shape(format!("{} mean needs 2D locations, got {}D", self.name(), locations.dim())));
        }
        Ok(())
    }

    /// Residuals `y - mean(x)`.
    pub fn detrend(&self, locations: &Points, responses: &[f64]) -> Result<Vec<f64>> {
        self.check_locations(locations, responses.len())?;
        Ok(locations.rows().zip(responses).map(|(x, y)| y - self.evaluate(x)).collect())
    }

    /// Predictions with the trend restored, `r + mean(x)`.
    pub fn retrend(&self, locations: &Points, residuals: &[f64]) -> Result<Vec<f64>> {
        self.check_locations(locations, residuals.len())?;
        Ok(locations.rows().zip(residuals).map(|(x, r)| r + self.evaluate(x)).collect())
    }
}

pub fn fit_constant(responses: &[f64]) -> Result<MeanModel> {
    if responses.is_empty() {
        return Err(Error::InsufficientData("constant mean needs at least one response".into()));
    }
    Ok(MeanModel::Constant { c: responses.iter().sum::<f64>() / responses.len() as f64 })
}

/// OLS fit on the design `[1, x1, x2, x1 * x2]`.
pub fn fit_linear(locations: &Points, responses: &[f64]) -> Result<MeanModel> {
    if locations.dim() != 2 {
        return Err(Error::Shape(format!("linear mean needs 2D locations, got {}D", locations.dim())));
    }
    if locations.len() != responses.len() {
        return Err(Error::Shape(format!("{} locations for {} responses", locations.len(), responses.len())));
    }
    if responses.len() < 4 {
        return Err(Error::InsufficientData(format!("linear mean needs at least 4 points, got {}", responses.len())));
    }
    let design = design_matrix(locations);
    let b = least_squares(&design, responses)?;
    Ok(MeanModel::Linear { beta: [b[0], b[1], b[2], b[3]] })
}

pub fn design_matrix(locations: &Points) -> Matrix {
    Matrix::from_fn(locations.len(), 4, |i, j| {
        let x = locations.row(i);
        match j {
            0 => 1.0,
            1 => x[0],
            2 => x[1],
            _ => x[0] * x[1],
        }
    })
}

/// Fit the kernel smoother from row-major cell values (`None` = unobserved).
pub fn fit_smoother(
    grid: GridSpec,
    values: &[Option<f64>],
    bandwidth: f64,
    kernel: SmootherKernel,
    method: SmootherMethod,
) -> Result<MeanModel> {
    grid.validate()?;
    if values.len() != grid.cells() {
        return Err(Error::Structure(format!("{} values for a {}x{} grid", values.len(), grid.rows, grid.cols)));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Parameter(format!("smoother bandwidth {bandwidth} must be positive")));
    }
    let observed: Vec<(usize, f64)> =
        values.iter().enumerate().filter_map(|(i, v)| v.filter(|x| x.is_finite()).map(|x| (i, x))).collect();
    if observed.is_empty() {
        return Err(Error::InsufficientData("smoother grid has no observed cells".into()));
    }
    let use_fft = match method {
        SmootherMethod::Direct => false,
        SmootherMethod::Fft => true,
        SmootherMethod::Auto => grid.cells() > 4096,
    };
    let field = if use_fft {
        smooth_fft(&grid, &observed, bandwidth, kernel)
    } else {
        (0..grid.cells()).map(|cell| smooth_direct_cell(&grid, &observed, cell, bandwidth, kernel)).collect()
    };
    Ok(MeanModel::Smoother(Smoother { grid, bandwidth, kernel, field }))
}

fn smooth_direct_cell(grid: &GridSpec, observed: &[(usize, f64)], cell: usize, bw: f64, kernel: SmootherKernel) -> f64 {
    let (r, c) = ((cell / grid.cols) as f64, (cell % grid.cols) as f64);
    let (mut num, mut den) = (0.0, 0.0);
    for &(i, v) in observed {
        let (dr, dc) = ((i / grid.cols) as f64 - r, (i % grid.cols) as f64 - c);
        let w = kernel.weight(dr * dr + dc * dc, bw);
        num += w * v;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        // Every weight underflowed: fall back to the nearest observed cell.
        let nearest = observed
            .iter()
            .min_by(|a, b| {
                let da = ((a.0 / grid.cols) as f64 - r).powi(2) + ((a.0 % grid.cols) as f64 - c).powi(2);
                let db = ((b.0 / grid.cols) as f64 - r).powi(2) + ((b.0 % grid.cols) as f64 - c).powi(2);
                da.total_cmp(&db)
            })
            .expect("observed is non-empty");
        nearest.1
    }
}

/// Linear convolution of the masked values and of the mask with the weight
/// kernel, via zero-padded 2D FFTs.
fn smooth_fft(grid: &GridSpec, observed: &[(usize, f64)], bw: f64, kernel: SmootherKernel) -> Vec<f64> {
    let (rows, cols) = (grid.rows, grid.cols);
    let (pr, pc) = (2 * rows - 1, 2 * cols - 1);
    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(pc);
    let col_fwd = planner.plan_fft_forward(pr);
    let row_inv = planner.plan_fft_inverse(pc);
    let col_inv = planner.plan_fft_inverse(pr);

    let fft2 = |buf: &mut Vec<Complex<f64>>, inverse: bool| {
        let (rf, cf) = if inverse { (&row_inv, &col_inv) } else { (&row_fwd, &col_fwd) };
        for row in buf.chunks_exact_mut(pc) {
            rf.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); pr];
        for j in 0..pc {
            for i in 0..pr {
                column[i] = buf[i * pc + j];
            }
            cf.process(&mut column);
            for i in 0..pr {
                buf[i * pc + j] = column[i];
            }
        }
    };

    let zero = Complex::new(0.0, 0.0);
    let mut weights = vec![zero; pr * pc];
    for di in -(rows as isize - 1)..rows as isize {
        for dj in -(cols as isize - 1)..cols as isize {
            let i = di.rem_euclid(pr as isize) as usize;
            let j = dj.rem_euclid(pc as isize) as usize;
            weights[i * pc + j] = Complex::new(kernel.weight((di * di + dj * dj) as f64, bw), 0.0);
        }
    }
    let mut num = vec![zero; pr * pc];
    let mut den = vec![zero; pr * pc];
    for &(cell, v) in observed {
        let (i, j) = (cell / cols, cell % cols);
        num[i * pc + j] = Complex::new(v, 0.0);
        den[i * pc + j] = Complex::new(1.0, 0.0);
    }
    fft2(&mut weights, false);
    fft2(&mut num, false);
    fft2(&mut den, false);
    for ((n, d), w) in num.iter_mut().zip(den.iter_mut()).zip(&weights) {
        *n *= w;
        *d *= w;
    }
    fft2(&mut num, true);
    fft2(&mut den, true);

    let (lo, hi) = observed.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &(_, v)| (l.min(v), h.max(v)));
    let max_den = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max(den[i * pc + j].re));
    let mut field = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let d = den[i * pc + j].re;
            // Where the total weight is tiny, transform round-off dominates.
            let v = if d > 1e-8 * max_den {
                (num[i * pc + j].re / d).clamp(lo, hi)
            } else {
                smooth_direct_cell(grid, observed, i * cols + j, bw, kernel)
            };
            field.push(v);
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_points(rows: usize, cols: usize) -> Points {
        let g = GridSpec { rows, cols, origin: [0.0, 0.0], step: [1.0 / cols as f64, 1.0 / rows as f64] };
        let coords = (0..rows).flat_map(|i| (0..cols).flat_map(move |j| g.location(i, j))).collect();
        Points::new(2, coords).unwrap()
    }

    #[test]
    fn constant_mean() {
        let MeanModel::Constant { c } = fit_constant(&[1.0, 2.0, 3.0]).unwrap() else { panic!() };
        assert_eq!(c, 2.0);
        let m = fit_constant(&[5.0; 4]).unwrap();
        let locs = Points::new(1, vec![0.0; 4]).unwrap();
        assert_eq!(m.detrend(&locs, &[5.0; 4]).unwrap(), vec![0.0; 4]);
        assert!(matches!(fit_constant(&[]), Err(Error::InsufficientData(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..30.0)).collect();
        let mut naive = 0.0;
        for v in &y {
            naive += v;
        }
        let MeanModel::Constant { c } = fit_constant(&y).unwrap() else { panic!() };
        assert!((c - naive / 1000.0).abs() < 1e-12);
        let locs = Points::new(1, vec![0.0; 1000]).unwrap();
        let r = fit_constant(&y).unwrap().detrend(&locs, &y).unwrap();
        assert!(r.iter().sum::<f64>().abs() / 1000.0 < 1e-10 * 30.0);
    }

    #[test]
    fn constant_round_trip_example() {
        let m = MeanModel::Constant { c: 2.0 };
        let locs = Points::new(1, vec![0.0, 1.0]).unwrap();
        assert_eq!(m.detrend(&locs, &[3.0, 4.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.retrend(&locs, &[1.0, 2.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(m.retrend(&locs, &[0.0, 0.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn linear_exact_recovery() {
        let locs = grid_points(5, 5);
        let y: Vec<f64> = locs.rows().map(|x| 2.0 + 3.0 * x[0] - x[1] + 0.5 * x[0] * x[1]).collect();
        let MeanModel::Linear { beta } = fit_linear(&locs, &y).unwrap() else { panic!() };
        for (b, w) in beta.iter().zip([2.0, 3.0, -1.0, 0.5]) {
            assert!((b - w).abs() < 1e-10, "{beta:?}");
        }
        let MeanModel::Linear { beta } = fit_linear(&locs, &[4.0; 25]).unwrap() else { panic!() };
        assert!((beta[0] - 4.0).abs() < 1e-12 && beta[1..].iter().all(|b| b.abs() < 1e-12));
    }

    #[test]
    fn linear_matches_normal_equations_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let locs = Points::new(2, coords).unwrap();
        let y: Vec<f64> = locs.rows().map(|x| 1.0 - 2.0 * x[0] + 0.3 * x[1] + rng.random_range(-0.1..0.1)).collect();
        let MeanModel::Linear { beta } = fit_linear(&locs, &y).unwrap() else { panic!() };

        // Normal equations Z^T Z b = Z^T y, solved by plain Gaussian elimination.
        let z = design_matrix(&locs);
        let mut a = [[0.0; 5]; 4];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] = (0..1000).map(|r| z[(r, i)] * z[(r, j)]).sum();
            }
            a[i][4] = (0..1000).map(|r| z[(r, i)] * y[r]).sum();
        }
        for c in 0..4 {
            for r in c + 1..4 {
                let f = a[r][c] / a[c][c];
                for k in c..5 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut b = [0.0; 4];
        for c in (0..4).rev() {
            b[c] = (a[c][4] - (c + 1..4).map(|k| a[c][k] * b[k]).sum::<f64>()) / a[c][c];
        }
        for (u, v) in beta.iter().zip(b) {
            assert!((u - v).abs() < 1e-8, "{beta:?} vs {b:?}");
        }
        let m = MeanModel::Linear { beta };
        let resid = m.detrend(&locs, &y).unwrap();
        for j in 0..4 {
            let ip: f64 = (0..1000).map(|r| z[(r, j)] * resid[r]).sum();
            assert!(ip.abs() < 1e-8 * 1000.0, "column {j}: {ip}");
        }
    }

    #[test]
    fn linear_rejects_degenerate_design() {
        let locs = Points::new(2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(fit_linear(&locs, &[1.0, 2.0, 3.0, 4.0, 5.0]), Err(Error::DegenerateDesign(_))));
        let few = Points::new(2, vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(fit_linear(&few, &[1.0, 2.0, 3.0]), Err(Error::InsufficientData(_))));
    }

    fn naive_smoother(rows: usize, cols: usize, values: &[Option<f64>], bw: f64, kernel: SmootherKernel) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for gi in 0..rows {
            for gj in 0..cols {
                let (mut num, mut den) = (0.0, 0.0);
                for oi in 0..rows {
                    for oj in 0..cols {
                        if let Some(v) = values[oi * cols + oj] {
                            let d = (((gi as f64 - oi as f64).powi(2)) + (gj as f64 - oj as f64).powi(2)).sqrt();
                            let w = match kernel {
                                SmootherKernel::Exponential => (-d / bw).exp(),
                                SmootherKernel::Gaussian => (-(d / bw).powi(2)).exp(),
                            };
                            num += w * v;
                            den += w;
                        }
                    }
                }
                out[gi * cols + gj] = num / den;
            }
        }
        out
    }

    #[test]
    fn smoother_constant_and_single_cell() {
        let grid = GridSpec::unit(6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<Option<f64>> = (0..54).map(|_| if rng.random::<f64>() < 0.4 { None } else { Some(7.5) }).collect();
        for method in [SmootherMethod::Direct, SmootherMethod::Fft] {
            let MeanModel::Smoother(s) = fit_smoother(grid, &vals, 3.0, SmootherKernel::Exponential, method).unwrap() else {
                panic!()
            };
            assert!(s.field.iter().all(|v| (v - 7.5).abs() < 1e-12));
        }
        let mut single = vec![None; 54];
        single[17] = Some(-3.25);
        let MeanModel::Smoother(s) =
            fit_smoother(grid, &single, 2.0, SmootherKernel::Gaussian, SmootherMethod::Direct).unwrap()
        else {
            panic!()
        };
        assert!(s.field.iter().all(|v| (v + 3.25).abs() < 1e-12));
        assert!(matches!(
            fit_smoother(grid, &vec![None; 54], 2.0, SmootherKernel::Exponential, SmootherMethod::Direct),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn smoother_matches_naive_double_loop() {
        let (rows, cols) = (30, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<Option<f64>> = (0..rows * cols)
            .map(|c| {
                let (i, j) = ((c / cols) as f64, (c % cols) as f64);
                if rng.random::<f64>() < 0.3 {
                    None
                } else {
                    Some((i / 5.0).sin() * 3.0 + (j / 7.0).cos() * 2.0 + 10.0)
                }
            })
            .collect();
        let grid = GridSpec::unit(rows, cols);
        for kernel in [SmootherKernel::Exponential, SmootherKernel::Gaussian] {
            let oracle = naive_smoother(rows, cols, &vals, 5.0, kernel);
            for method in [SmootherMethod::Direct, SmootherMethod::Fft] {
                let MeanModel::Smoother(s) = fit_smoother(grid, &vals, 5.0, kernel, method).unwrap() else { panic!() };
                for (a, b) in s.field.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-6, "{kernel:?} {method:?}: {a} vs {b}");
                }
                let (lo, hi) = vals.iter().flatten().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
                assert!(s.field.iter().all(|v| *v >= lo && *v <= hi));
            }
        }
    }

    #[test]
    fn smoother_bilinear_off_grid() {
        let grid = GridSpec { rows: 2, cols: 2, origin: [0.0, 0.0], step: [1.0, 1.0] };
        let s = Smoother { grid, bandwidth: 1.0, kernel: SmootherKernel::Exponential, field: vec![0.0, 1.0, 2.0, 3.0] };
        assert_eq!(s.evaluate(&[0.5, 0.5]), 1.5);
        assert_eq!(s.evaluate(&[1.0, 0.0]), 1.0);
        assert_eq!(s.evaluate(&[5.0, 5.0]), 3.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn detrend_retrend_round_trip(seed in 0u64..10_000, variant in 0usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (rows, cols) = (6, 8);
                let grid = GridSpec { rows, cols, origin: [0.0, 0.0], step: [0.1, 0.2] };
                let locs = Points::new(2, (0..rows).flat_map(|i| (0..cols).flat_map(move |j| grid.location(i, j))).collect()).unwrap();
                let y: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect();
                let model = match variant {
                    0 => fit_constant(&y).unwrap(),
                    1 => fit_linear(&locs, &y).unwrap(),
                    _ => fit_smoother(grid, &y.iter().map(|v| Some(*v)).collect::<Vec<_>>(), 2.0, SmootherKernel::Exponential, SmootherMethod::Direct).unwrap(),
                };
                let r = model.detrend(&locs, &y).unwrap();
                let back = model.retrend(&locs, &r).unwrap();
                for (a, b) in back.iter().zip(&y) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }
}
