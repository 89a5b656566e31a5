//! Distributed Gaussian-process fingerprint localization for cell-free
//! massive MIMO.
//!
//! The crate covers the full simulation chain:
//!
//! * [`geometry`] and [`channel`]: scenario layout, log-distance path loss,
//!   spatially correlated shadowing and disk-scattering channels.
//! * [`fingerprint`]: RSS and AOA fingerprint extraction, including MUSIC.
//! * [`gpr`]: squared-exponential GPR with marginal-likelihood training.
//! * [`fusion`]: UE-side fusion of per-AP Gaussian estimates.
//! * [`baselines`]: centralized GPR, KNN and linear regression.
//! * [`metrics`] and [`crb`]: localization error, 95% error ellipses and
//!   the AOA Cramér-Rao bound under disk scattering.
//! * [`harness`]: seeded Monte Carlo experiments with CSV output.

pub mod baselines;
pub mod bessel;
pub mod channel;
pub mod config;
pub mod crb;
pub mod error;
pub mod fingerprint;
pub mod fusion;
pub mod geometry;
pub mod gpr;
pub mod harness;
mod linalg;
pub mod metrics;
pub mod rng;
pub mod shadowing;

pub use config::{ArrayModel, ScenarioConfig};
pub use error::{Error, Result};

pub use fingerprint::{FingerprintDb, TestObservation};
pub use geometry::{Point2, Point3, Scenario};
pub use fusion::{FusionMethod, FusionResult};
pub use gpr::{GprModel, Hyperparams, PositionEstimate, TrainConfig};
pub use metrics::TrialRecord;

