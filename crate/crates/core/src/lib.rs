//! Maximum likelihood for multivariate Gaussian data with missing values.
//!
//! The crate covers the observed-data likelihood, synthetic missingness
//! (MCAR, MAR, MNAR) with calibrated rates, EM estimation with bootstrap
//! uncertainty, bootstrap-EM multiple imputation, numerical checks of the
//! partial-likelihood convergence results, and a sweep harness that runs
//! the simulation studies built on them.

pub mod checks;
pub mod em;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod io;
pub mod mi;
pub mod missingness;
pub mod partial;
pub mod seeding;
pub mod stats;

pub use em::{em_fit, em_uncertainty, EmConfig, EmInit, EmResult, UncertaintyEstimate, UncertaintyMethod};
pub use error::{Error, Result};
pub use gaussian::{nearest_pd, GaussianParams};
pub use mi::{compare_ml_mi, mi_run, MiConfig, MiResult, MlMiComparison};
pub use missingness::{ampute, Mechanism, MechanismKind, Pattern};
pub use partial::{bootstrap_cloud, mean_loglik, record_loglik, sup_difference, ParameterCloud, PartialMatrix};
