//! Monte Carlo check of the propagated `σ_S` against the spread of `S` over
//! repeated simulated runs.

use serde::{Deserialize, Serialize};

use crate::angle::ChshAngles;
use crate::apparatus::{coincidence_mean, run_protocol_with, ApparatusConfig};
use crate::error::{Error, Result};
use crate::estimation::chsh::{compute_s, ChshRun};
use crate::par;
use crate::qm::TwoPhotonState;
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaCalibration {
    pub repetitions: usize,
    /// Mean of `S` over the repetitions.
    pub mean_s: f64,
    /// Sample standard deviation of `S`.
    pub std_s: f64,
    /// Mean of the propagated `σ_S`.
    pub mean_sigma_s: f64,
    /// `S` of the expected-count grid.
    pub analytic_s: f64,
}

impl SigmaCalibration {
    pub fn standard_error(&self) -> f64 {
        self.std_s / (self.repetitions as f64).sqrt()
    }

    /// `std_s / mean_sigma_s − 1`.
    pub fn relative_gap(&self) -> f64 {
        self.std_s / self.mean_sigma_s - 1.0
    }
}

/// `S` of the noise-free coincidence means at each of the sixteen settings.
pub fn expected_s(config: &ApparatusConfig, state: &TwoPhotonState, angles: &ChshAngles, duration_t: f64) -> Result<f64> {
    let mut grid = [[0.0; 4]; 4];
    for (i, &alpha) in angles.alpha_settings().iter().enumerate() {
        for (j, &beta) in angles.beta_settings().iter().enumerate() {
            grid[i][j] = coincidence_mean(config, state, alpha, beta, duration_t)?;
        }
    }
    let run = ChshRun { angles: *angles, counts: grid, duration_s: Some(duration_t) };
    Ok(run.e(0, 0)? - run.e(0, 1)? + run.e(1, 0)? + run.e(1, 1)?)
}

/// Simulate `repetitions` sixteen-setting runs, repetition `i` on stream `i`
/// of `base_seed`, and compare the spread of `S` with the propagated `σ_S`.
pub fn calibrate_sigma_s(
    config: &ApparatusConfig,
    state: &TwoPhotonState,
    angles: &ChshAngles,
    duration_t: f64,
    repetitions: usize,
    base_seed: u64,
) -> Result<SigmaCalibration> {
    config.validate()?;
    if repetitions < 2 {
        return Err(Error::domain("calibration needs at least two repetitions"));
    }
    let settings = angles.settings();
    let runs = par::try_map_indexed(repetitions, |i| {
        let mut rng = stream_rng(base_seed, i as u64);
        let records = run_protocol_with(config, state, &settings, duration_t, &mut rng)?;
        let result = compute_s(&ChshRun::from_records(&records, *angles)?)?;
        Ok::<_, Error>((result.s_value, result.sigma_s))
    })?;
    let n = repetitions as f64;
    let mean_s = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let var = runs.iter().map(|r| (r.0 - mean_s).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_sigma_s = runs.iter().map(|r| r.1).sum::<f64>() / n;
    Ok(SigmaCalibration {
        repetitions,
        mean_s,
        std_s: var.sqrt(),
        mean_sigma_s,
        analytic_s: expected_s(config, state, angles, duration_t)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qm::{qm_s, TSIRELSON_BOUND};

    #[test]
    fn expected_s_of_pure_pairs_is_quantum_s() {
        let config = ApparatusConfig::pairs_only(1000.0, 0.0, 0);
        let s = expected_s(&config, &TwoPhotonState::epr(), &ChshAngles::canonical(), 1.0).unwrap();
        assert!((s - TSIRELSON_BOUND).abs() < 1e-12);
        let state = TwoPhotonState::epr().with_cos_phi_m(0.6).unwrap();
        let s = expected_s(&config, &state, &ChshAngles::canonical(), 1.0).unwrap();
        assert!((s - qm_s(&state, &ChshAngles::canonical())).abs() < 1e-12);
    }

    #[test]
    fn small_calibration_is_deterministic() {
        let config = ApparatusConfig::default();
        let state = TwoPhotonState::epr().with_cos_phi_m(0.8).unwrap();
        let run = || calibrate_sigma_s(&config, &state, &ChshAngles::canonical(), 15.0, 40, 3).unwrap();
        let a = run();
        assert_eq!(a, run());
        assert!(a.std_s > 0.0 && a.mean_sigma_s > 0.0);
        assert!(calibrate_sigma_s(&config, &state, &ChshAngles::canonical(), 15.0, 1, 3).is_err());
    }
}
