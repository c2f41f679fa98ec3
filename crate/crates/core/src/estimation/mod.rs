//! Analysis of measured or simulated counts.

pub mod calibrate;
pub mod chsh;
pub mod diagnostics;
pub mod fit;
pub mod tune;

pub use calibrate::{calibrate_sigma_s, expected_s, SigmaCalibration};
pub use chsh::{compute_e, compute_s, compute_s_with, sigma_s, sigma_s_with, ChshResult, ChshRun, CountErrorModel};
pub use diagnostics::{diagnose_records, diagnose_state, StateDiagnostics};
pub use fit::{fit_nmodel, fit_points, model_points, FitErrors, FitResult, ScanPoint};
pub use tune::{tune, NoiselessBench, SessionBench, TuneOptions, TuneOutcome, TuningBench};
