//! Simulation and numerical analysis of exponentially discounted
//! reinforcement processes.
//!
//! * [`increments`]: finite-support increment laws `Q_w`.
//! * [`rate`]: the tilt roots `lambda_w`, the rate integral `Lambda` and `C`.
//! * [`walk`]: the one-dimensional discounted walk, its exit times, importance
//!   sampling, an exact linear-solve oracle and the discounted urn.
//! * [`triad`]: Three's Company network formation and trap detection.
//! * [`meanfield`]: exact drift, linearization spectrum and Lyapunov certificates.
//! * [`harness`]: experiment configuration, presets, rate fits and output files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod increments;
pub mod meanfield;
pub mod rate;
pub mod seeding;
pub mod triad;
pub mod walk;

pub use error::{Error, Result};
pub use increments::{Atom, AtomList, FamilyKind, IncrementFamily};
pub use rate::{build_profile, lambda_root, tilt_kernel, z_value, RateProfile, TiltedKernel};
pub use harness::{execute, fit_rate, preset, ExperimentConfig, ExperimentKind, RateFitReport};
pub use meanfield::{drift, lyapunov_certificate, spectrum, CertificateConfig, LyapunovCertificate, MeanFieldLinearization};
pub use seeding::{replica_rng, stage_seed, SimRng};
pub use triad::{NetworkState, TrioChoice, TrioRule, UpdateOrder};
pub use walk::{exact_exit_oracle, importance_exit, mc_exit, BirthDeathChain, ExitRecord, ExitTimeSummary, Walk1DConfig, Walk1DState};
