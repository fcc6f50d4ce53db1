//! Gaussian process regression with hyperparameters trained by nearest-neighbor
//! leave-one-out cross-validation.
//!
//! The estimator never forms a global covariance matrix. Every prediction,
//! whether a leave-one-out prediction of a training point during training or a
//! posterior prediction at a test location, is computed by kriging against the
//! `k` nearest training points only:
//!
//! 1. [`neighbors`] builds an exact or approximate k-NN index over the training
//!    locations.
//! 2. [`trainer`] samples a fixed batch of `b` training points and minimizes the
//!    mean squared leave-one-out error of their local predictions over the free
//!    Matérn hyperparameters, then estimates the variance scale in closed form.
//! 3. [`predictor`] produces local posterior means, variances and intervals.
//!
//! Cost per objective evaluation is `O(b k^3)`, independent of the training size.
//! Supporting modules cover detrending ([`meanmodels`]), scoring ([`metrics`])
//! and gridded data handling ([`data`]). With the `parallel` feature (default)
//! batch elements and test points are processed on the rayon pool; results are
//! identical to the sequential path.

pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod meanmodels;
pub mod metrics;
pub mod neighbors;
pub mod par;
pub mod points;
pub mod predictor;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
pub use kernels::{HyperParams, MaternKernel, Param, ParamStatus};
pub use par::Execution;
pub use points::Points;
