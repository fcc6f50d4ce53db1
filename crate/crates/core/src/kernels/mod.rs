//! Stationary isotropic Matérn covariance.
//!
//! `phi(d) = sigma_sq * [ 2^(1-nu)/Gamma(nu) * (sqrt(2 nu) d / rho)^nu * K_nu(sqrt(2 nu) d / rho)
//!                        + tau_sq * 1{d == 0} ]`
//!
//! Orders 1/2, 3/2 and 5/2 use their closed forms, and orders above
//! [`RBF_THRESHOLD`] use the Gaussian limit `exp(-d^2 / (2 rho^2))`.

pub mod bessel;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::points::{distance, Points};

/// Smoothness above which the kernel switches to the RBF limit.
pub const RBF_THRESHOLD: f64 = 30.0;

pub const DEFAULT_TAU_SQ: f64 = 0.001;
pub const DEFAULT_RHO: f64 = 1.0;
pub const DEFAULT_NU_INIT: f64 = 1.0;
pub const DEFAULT_NU_BOUNDS: (f64, f64) = (0.1, 5.0);
pub const DEFAULT_RHO_BOUNDS: (f64, f64) = (0.01, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamStatus {
    Fixed,
    Free { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: f64,
    pub status: ParamStatus,
}

impl Param {
    pub fn fixed(value: f64) -> Self {
        Self { value, status: ParamStatus::Fixed }
    }

    pub fn free(value: f64, lo: f64, hi: f64) -> Self {
        Self { value, status: ParamStatus::Free { lo, hi } }
    }

    pub fn is_free(&self) -> bool {
        matches!(self.status, ParamStatus::Free { .. })
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.status {
            ParamStatus::Free { lo, hi } => Some((lo, hi)),
            ParamStatus::Fixed => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    SigmaSq,
    Rho,
    Nu,
    TauSq,
}

impl ParamName {
    pub const ALL: [ParamName; 4] = [ParamName::SigmaSq, ParamName::Rho, ParamName::Nu, ParamName::TauSq];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::SigmaSq => "sigma_sq",
            ParamName::Rho => "rho",
            ParamName::Nu => "nu",
            ParamName::TauSq => "tau_sq",
        }
    }
}

/// Matérn hyperparameters with per-parameter fixed/free status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma_sq: Param,
    pub rho: Param,
    pub nu: Param,
    pub tau_sq: Param,
}

impl Default for HyperParams {
    /// `sigma_sq = 1`, `rho = 1`, `tau_sq = 0.001` fixed; `nu` free on `[0.1, 5]` from 1.
    fn default() -> Self {
        let (lo, hi) = DEFAULT_NU_BOUNDS;
        Self {
            sigma_sq: Param::fixed(1.0),
            rho: Param::fixed(DEFAULT_RHO),
            nu: Param::free(DEFAULT_NU_INIT, lo, hi),
            tau_sq: Param::fixed(DEFAULT_TAU_SQ),
        }
    }
}

impl HyperParams {
    /// All four parameters fixed at the given values.
    pub fn fixed(sigma_sq: f64, rho: f64, nu: f64, tau_sq: f64) -> Self {
        Self {
            sigma_sq: Param::fixed(sigma_sq),
            rho: Param::fixed(rho),
            nu: Param::fixed(nu),
            tau_sq: Param::fixed(tau_sq),
        }
    }

    pub fn get(&self, name: ParamName) -> &Param {
        match name {
            ParamName::SigmaSq => &self.sigma_sq,
            ParamName::Rho => &self.rho,
            ParamName::Nu => &self.nu,
            ParamName::TauSq => &self.tau_sq,
        }
    }

    pub fn get_mut(&mut self, name: ParamName) -> &mut Param {
        match name {
            ParamName::SigmaSq => &mut self.sigma_sq,
            ParamName::Rho => &mut self.rho,
            ParamName::Nu => &mut self.nu,
            ParamName::TauSq => &mut self.tau_sq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (ParamName::SigmaSq, self.sigma_sq.value > 0.0),
            (ParamName::Rho, self.rho.value > 0.0),
            (ParamName::Nu, self.nu.value > 0.0),
            (ParamName::TauSq, self.tau_sq.value >= 0.0),
        ];
        for (name, ok) in checks {
            let p = self.get(name);
            if !ok || !p.value.is_finite() {
                return Err(Error::ParameterDomain(format!("{} = {} is out of range", name.as_str(), p.value)));
            }
            if let Some((lo, hi)) = p.bounds() {
                if !(lo > 0.0 && lo < hi) || !hi.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "{} bounds [{lo}, {hi}] must satisfy 0 < lo < hi",
                        name.as_str()
                    )));
                }
            }
        }
        if self.sigma_sq.is_free() {
            return Err(Error::ParameterDomain(
                "sigma_sq cannot be free: it is held at 1 during optimization and estimated afterwards".into(),
            ));
        }
        Ok(())
    }

    /// Names of the free parameters, in a fixed order.
    pub fn free_names(&self) -> Vec<ParamName> {
        ParamName::ALL.into_iter().filter(|n| self.get(*n).is_free()).collect()
    }

    pub fn with_value(mut self, name: ParamName, value: f64) -> Self {
        self.get_mut(name).value = value;
        self
    }

    pub fn kernel(&self) -> Result<MaternKernel> {
        MaternKernel::new(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Form {
    Exponential,
    Matern32,
    Matern52,
    Rbf,
    General { log_norm: f64 },
}

/// A Matérn kernel with its parameter-dependent constants precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternKernel {
    sigma_sq: f64,
    rho: f64,
    nu: f64,
    tau_sq: f64,
    form: Form,
}

impl MaternKernel {
    pub fn new(params: &HyperParams) -> Result<Self> {
        params.validate()?;
        Self::from_values(params.sigma_sq.value, params.rho.value, params.nu.value, params.tau_sq.value)
    }

    pub fn from_values(sigma_sq: f64, rho: f64, nu: f64, tau_sq: f64) -> Result<Self> {
        let ok = sigma_sq > 0.0 && rho > 0.0 && nu > 0.0 && tau_sq >= 0.0;
        if !ok || ![sigma_sq, rho, nu, tau_sq].iter().all(|v| v.is_finite()) {
            return Err(Error::ParameterDomain(format!(
                "invalid Matérn parameters sigma_sq={sigma_sq} rho={rho} nu={nu} tau_sq={tau_sq}"
            )));
        }
        let form = if nu == 0.5 {
            Form::Exponential
        } else if nu == 1.5 {
            Form::Matern32
        } else if nu == 2.5 {
            Form::Matern52
        } else if nu > RBF_THRESHOLD {
            Form::Rbf
        } else {
            Self::general_form(nu)
        };
        Ok(Self { sigma_sq, rho, nu, tau_sq, form })
    }

    fn general_form(nu: f64) -> Form {
        Form::General { log_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) }
    }

    /// Same parameters, but always evaluated through the Bessel function.
    pub fn bessel_path(&self) -> Self {
        Self { form: Self::general_form(self.nu), ..*self }
    }

    pub fn with_sigma_sq(&self, sigma_sq: f64) -> Self {
        Self { sigma_sq, ..*self }
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn tau_sq(&self) -> f64 {
        self.tau_sq
    }

    /// Prior variance at a point, `sigma_sq (1 + tau_sq)`.
    pub fn prior_variance(&self) -> f64 {
        self.sigma_sq * (1.0 + self.tau_sq)
    }

    /// The unit-scale Matérn correlation without nugget; equals 1 at `d = 0`.
    pub fn correlation(&self, d: f64) -> f64 {
        if d == 0.0 {
            return 1.0;
        }
        let r = d / self.rho;
        match self.form {
            Form::Exponential => (-r).exp(),
            Form::Matern32 => {
                let s = 3f64.sqrt() * r;
                (1.0 + s) * (-s).exp()
            }
            Form::Matern52 => {
                let s = 5f64.sqrt() * r;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            Form::Rbf => (-0.5 * r * r).exp(),
            Form::General { log_norm } => {
                let x = (2.0 * self.nu).sqrt() * r;
                if x > 1e4 {
                    return 0.0;
                }
                (log_norm + self.nu * x.ln() + bessel::ln_bessel_k_scaled(self.nu, x) - x).exp().min(1.0)
            }
        }
    }

    /// Covariance at distance `d`, including the nugget at exactly zero distance.
    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        if d == 0.0 {
            self.prior_variance()
        } else {
            self.sigma_sq * self.correlation(d)
        }
    }

    pub fn cross_covariance(&self, center: &[f64], neighbors: &Points) -> Result<Vec<f64>> {
        if neighbors.is_empty() {
            return Err(Error::Shape("cross covariance needs at least one neighbor".into()));
        }
        if center.len() != neighbors.dim() {
            return Err(Error::Shape(format!(
                "center has dimension {}, neighbors have {}",
                center.len(),
                neighbors.dim()
            )));
        }
        Ok(neighbors.rows().map(|n| self.eval(distance(center, n))).collect())
    }

    pub fn local_covariance(&self, neighbors: &Points) -> Result<Matrix> {
        if neighbors.is_empty() {
            return Err(Error::Shape("local covariance needs at least one point".into()));
        }
        Ok(self.covariance_matrix(&DistanceMatrix::pairwise(neighbors)))
    }

    /// Apply the kernel elementwise to precomputed distances.
    pub fn covariance_matrix(&self, dist: &DistanceMatrix) -> Matrix {
        let (r, c) = (dist.rows(), dist.cols());
        let mut out = Matrix::zeros(r, c);
        if dist.is_symmetric() {
            for i in 0..r {
                out[(i, i)] = self.eval(dist[(i, i)]);
                for j in 0..i {
                    let v = self.eval(dist[(i, j)]);
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
        } else {
            for i in 0..r {
                for j in 0..c {
                    out[(i, j)] = self.eval(dist[(i, j)]);
                }
            }
        }
        out
    }
}

/// Convenience scalar evaluation with argument validation.
pub fn matern(d: f64, params: &HyperParams) -> Result<f64> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::ParameterDomain(format!("distance {d} must be finite and nonnegative")));
    }
    Ok(MaternKernel::new(params)?.eval(d))
}

/// Pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    symmetric: bool,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Self-distances of a point set: symmetric with an exactly zero diagonal.
    pub fn pairwise(points: &Points) -> Self {
        let n = points.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let d = distance(points.row(i), points.row(j));
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        Self { rows: n, cols: n, symmetric: true, entries }
    }

    pub fn cross(a: &Points, b: &Points) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::Shape(format!("dimensions {} and {} differ", a.dim(), b.dim())));
        }
        let mut entries = Vec::with_capacity(a.len() * b.len());
        for x in a.rows() {
            for y in b.rows() {
                entries.push(distance(x, y));
            }
        }
        Ok(Self { rows: a.len(), cols: b.len(), symmetric: false, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}

impl std::ops::Index<(usize, usize)> for DistanceMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.cols + j]
    }
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(nu: f64, tau_sq: f64) -> HyperParams {
        HyperParams::fixed(1.0, 1.0, nu, tau_sq)
    }

    // Correlation values from an arbitrary-precision evaluation (mpmath, 40 digits)
    // of the Matérn formula with rho = 1.
    const REFERENCE: &[(f64, f64, f64)] = &[
        (0.1, 1e-6, 0.94747293182436592788),
        (0.1, 0.05, 0.54281224099202957669),
        (0.1, 1.0, 0.18549910644667603797),
        (0.1, 20.0, 0.000013183991274324364344),
        (0.3, 1e-3, 0.98702542372000531667),
        (0.3, 2.5, 0.083121579869735946068),
        (0.8, 1e-6, 0.99999999940714401571),
        (0.8, 1e-3, 0.99996446711677337273),
        (0.8, 0.05, 0.98536825064876826982),
        (0.8, 0.3, 0.83078101074969313743),
        (0.8, 0.7, 0.5731796195429948699),
        (0.8, 1.0, 0.42081906490145972221),
        (0.8, 2.5, 0.07803827412718646278),
        (0.8, 6.0, 0.0011768680370165010971),
        (0.8, 20.0, 3.3850109035246878425e-11),
        (1.2, 0.3, 0.88387448136511452873),
        (1.2, 6.0, 0.00055245203154117438261),
        (2.0, 0.7, 0.68795222307973710737),
        (2.0, 20.0, 7.054174158274095173e-16),
        (3.7, 1.0, 0.54795693911580489406),
        (3.7, 6.0, 0.00004270609192419033956),
        (4.9, 0.05, 0.9984311439160038879),
        (4.9, 2.5, 0.056106163236060368163),
        (12.0, 0.3, 0.95220847690467090128),
        (12.0, 20.0, 7.0506820268720217191e-31),
        (25.0, 1.0, 0.59743233925890572803),
        (25.0, 6.0, 4.1103489283782329253e-7),
    ];

    #[test]
    fn general_order_matches_reference() {
        for &(nu, d, want) in REFERENCE {
            let got = matern(d, &unit(nu, 0.0)).unwrap();
            assert!((got / want - 1.0).abs() < 1e-11, "nu={nu} d={d}: {got} vs {want}");
        }
        // The spot value used in the docs: d = 0.7, nu = 0.8.
        let v = matern(0.7, &unit(0.8, 0.0)).unwrap();
        assert!((v - 0.5731796195429948699).abs() < 1e-13);
    }

    #[test]
    fn zero_distance_and_closed_forms() {
        assert_eq!(matern(0.0, &unit(0.8, 0.001)).unwrap(), 1.001);
        let e = matern(1.0, &unit(0.5, 0.0)).unwrap();
        assert!((e - (-1f64).exp()).abs() < 1e-15);
        let m32 = matern(1.0, &unit(1.5, 0.0)).unwrap();
        assert!((m32 - 0.483_357_724_596_507_7).abs() < 1e-14);
        let want = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((m32 - want).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_agree_with_bessel_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &nu in &[0.5, 1.5, 2.5] {
            let k = MaternKernel::from_values(1.3, 0.7, nu, 0.0).unwrap();
            let b = k.bessel_path();
            for _ in 0..200 {
                let d = 10f64.powf(rng.random_range(-6.0..(7.0f64).log10()));
                let (u, v) = (k.eval(d), b.eval(d));
                assert!((u / v - 1.0).abs() < 1e-10, "nu={nu} d={d}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn approaches_rbf_limit() {
        // Oracle-derived envelope at nu = 50 (mpmath): max |matern - rbf| = 4.6e-3 over
        // d <= 3 rho, max relative gap 7.5e-3 over d <= rho.
        let k = MaternKernel::from_values(1.0, 1.0, 50.0, 0.0).unwrap().bessel_path();
        for i in 1..=300 {
            let d = i as f64 / 100.0;
            let rbf = (-0.5 * d * d).exp();
            let v = k.eval(d);
            assert!((v - rbf).abs() < 5e-3, "d={d}: {v} vs {rbf}");
            if d <= 1.0 {
                assert!((v / rbf - 1.0).abs() < 1e-2);
            }
        }
        let fast = MaternKernel::from_values(1.0, 2.0, 31.0, 0.0).unwrap();
        assert_eq!(fast.eval(2.0), (-0.5f64).exp());
    }

    #[test]
    fn monotone_decay() {
        for &nu in &[0.2, 0.5, 0.9, 1.5, 3.3, 40.0] {
            let k = MaternKernel::from_values(1.0, 0.5, nu, 0.0).unwrap();
            let mut prev = k.eval(0.0);
            for i in 1..400 {
                let v = k.eval(i as f64 * 0.01);
                assert!(v < prev || v == 0.0, "nu={nu} step {i}");
                prev = v;
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(matern(f64::NAN, &unit(1.0, 0.0)), Err(Error::ParameterDomain(_))));
        assert!(matches!(matern(-1.0, &unit(1.0, 0.0)), Err(Error::ParameterDomain(_))));
        assert!(matern(1.0, &unit(-1.0, 0.0)).is_err());
        let mut p = HyperParams::default();
        p.nu = Param::free(1.0, 2.0, 1.0);
        assert!(p.validate().is_err());
        p.nu = Param::free(1.0, 0.0, 1.0);
        assert!(p.validate().is_err());
        let mut p = HyperParams::default();
        p.sigma_sq = Param::free(1.0, 0.1, 2.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn cross_and_local_covariance() {
        let p = unit(0.5, 0.0);
        let k = p.kernel().unwrap();
        let same = Points::from_rows(&[[0.3, 0.4]]).unwrap();
        let k_nug = unit(0.8, 0.001).kernel().unwrap();
        assert_eq!(k_nug.cross_covariance(&[0.3, 0.4], &same).unwrap(), vec![1.001]);

        let nbrs = Points::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let row = k.cross_covariance(&[0.0, 0.0], &nbrs).unwrap();
        assert!((row[0] - (-1f64).exp()).abs() < 1e-15 && (row[1] - (-2f64).exp()).abs() < 1e-15);
        assert!(k.cross_covariance(&[0.0], &nbrs).is_err());

        let kk = unit(0.5, 0.001).kernel().unwrap();
        let two = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let m = kk.local_covariance(&two).unwrap();
        assert_eq!(m[(0, 0)], 1.001);
        assert_eq!(m[(1, 1)], 1.001);
        assert!((m[(0, 1)] - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(kk.local_covariance(&same).unwrap().as_slice(), &[1.001]);
    }

    #[test]
    fn random_neighborhoods_match_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = MaternKernel::from_values(2.0, 0.4, 0.8, 0.01).unwrap();
        let pts: Vec<[f64; 2]> = (0..6).map(|_| [rng.random(), rng.random()]).collect();
        let points = Points::from_rows(&pts).unwrap();
        let m = k.local_covariance(&points).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let d = distance(&pts[i], &pts[j]);
                assert_eq!(m[(i, j)], k.eval(d));
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        let center = [0.5, 0.5];
        let five = points.select(&[0, 1, 2, 3, 4]);
        let row = k.cross_covariance(&center, &five).unwrap();
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, k.eval(distance(&center, &pts[j])));
        }
    }

    #[test]
    fn distinct_points_give_positive_definite_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &nu in &[0.3, 0.5, 1.1, 2.5, 4.0] {
            let k = MaternKernel::from_values(1.0, 1.0, nu, 1e-6).unwrap();
            let pts: Vec<[f64; 2]> = (0..40).map(|_| [rng.random(), rng.random()]).collect();
            let m = k.local_covariance(&Points::from_rows(&pts).unwrap()).unwrap();
            assert!(Cholesky::factor_strict(&m).is_ok(), "nu={nu}");
        }
    }
}
