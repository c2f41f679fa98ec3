//! Monte Carlo model of the counting apparatus.
//!
//! One acquisition of duration `T` at analyzer settings `(α, β)` yields
//! Poisson singles at both detectors and a Poisson coincidence count whose
//! mean is the expected-count model plus the accidental rate `τ N_A N_B / T`.
//! Singles rates are taken as independent of the analyzer angles.

use std::sync::{Arc, Mutex, MutexGuard, TryLockError};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::angle::{deg, Angle};
use crate::error::{Error, Result};
use crate::qm::{prob_vv, pump_state, TwoPhotonState};
use crate::rng::{lab_rng, LabRng};

/// Largest analyzer miscalibration accepted, in degrees.
pub const MAX_BETA_OFFSET: f64 = 10.0;

/// How the interference average `cos φ_m` enters the simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseSpread {
    /// Use the state's `cos φ_m` directly in the coincidence probability.
    #[default]
    Scalar,
    /// Draw a phase for every pair, uniform within `half_width_deg` of the
    /// state's amplitude phase, and detect it with that pair's pure-state
    /// probability.
    PerPair { half_width_deg: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApparatusConfig {
    /// Downconverted pairs per second reaching the analyzers.
    pub pair_rate: f64,
    pub singles_rate_a: f64,
    pub singles_rate_b: f64,
    /// Coincidence window in seconds.
    pub coincidence_window_tau: f64,
    /// Background coincidences per second (the `C` offset).
    pub background_coinc_rate: f64,
    /// Systematic error of the idler analyzer, degrees.
    #[serde(default)]
    pub beta_offset: f64,
    #[serde(default)]
    pub phase_spread: PhaseSpread,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for ApparatusConfig {
    /// Rates on the scale of a 15 s Bell run: about 2150 pairs, 10 background
    /// coincidences and 85 000 singles per detector.
    fn default() -> Self {
        ApparatusConfig {
            pair_rate: 143.0,
            singles_rate_a: 5800.0,
            singles_rate_b: 5400.0,
            coincidence_window_tau: 25e-9,
            background_coinc_rate: 0.7,
            beta_offset: 0.0,
            phase_spread: PhaseSpread::Scalar,
            rng_seed: 0,
        }
    }
}

impl ApparatusConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("pair_rate", self.pair_rate),
            ("singles_rate_a", self.singles_rate_a),
            ("singles_rate_b", self.singles_rate_b),
            ("coincidence_window_tau", self.coincidence_window_tau),
            ("background_coinc_rate", self.background_coinc_rate),
        ];
        for (name, value) in rates {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {value}")));
            }
        }
        if !(self.beta_offset.abs() <= MAX_BETA_OFFSET) {
            return Err(Error::InvalidConfig(format!(
                "beta_offset must lie in [-{MAX_BETA_OFFSET}, {MAX_BETA_OFFSET}] degrees, got {}",
                self.beta_offset
            )));
        }
        if let PhaseSpread::PerPair { half_width_deg } = self.phase_spread {
            if !(0.0..=180.0).contains(&half_width_deg) {
                return Err(Error::InvalidConfig(format!(
                    "phase half-width must lie in [0, 180] degrees, got {half_width_deg}"
                )));
            }
        }
        Ok(())
    }

    /// A configuration that produces exactly the expected-count model:
    /// no singles, no accidentals.
    pub fn pairs_only(pair_rate: f64, background_coinc_rate: f64, rng_seed: u64) -> Self {
        ApparatusConfig {
            pair_rate,
            singles_rate_a: 0.0,
            singles_rate_b: 0.0,
            coincidence_window_tau: 0.0,
            background_coinc_rate,
            beta_offset: 0.0,
            phase_spread: PhaseSpread::Scalar,
            rng_seed,
        }
    }
}

/// One acquisition: analyzer settings, duration, singles and coincidences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRecord {
    #[serde(rename = "alpha_deg")]
    pub alpha: f64,
    #[serde(rename = "beta_deg")]
    pub beta: f64,
    #[serde(rename = "duration_s")]
    pub duration_t: f64,
    pub n_a: u64,
    pub n_b: u64,
    pub n_coinc: u64,
}

fn check_duration(duration_t: f64) -> Result<()> {
    if !(duration_t > 0.0) || !duration_t.is_finite() {
        return Err(Error::domain(format!("duration must be > 0 s, got {duration_t}")));
    }
    Ok(())
}

/// Mean number of accidental coincidences, `τ N_A N_B / T`.
pub fn accidental_mean(tau: f64, n_a: f64, n_b: f64, duration_t: f64) -> Result<f64> {
    check_duration(duration_t)?;
    Ok(tau * n_a * n_b / duration_t)
}

/// Exact Poisson draw; a zero mean gives zero.
pub fn sample_poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(mean).expect("finite positive mean");
    poisson.sample(rng) as u64
}

/// Mean coincidence count of one acquisition, accidentals included.
pub fn coincidence_mean(
    config: &ApparatusConfig,
    state: &TwoPhotonState,
    alpha: Angle,
    beta: Angle,
    duration_t: f64,
) -> Result<f64> {
    check_duration(duration_t)?;
    let beta_true = beta + deg(config.beta_offset);
    let pairs = config.pair_rate * duration_t * pair_probability(config, state, alpha, beta_true);
    let background = config.background_coinc_rate * duration_t;
    let accidentals = accidental_mean(
        config.coincidence_window_tau,
        config.singles_rate_a * duration_t,
        config.singles_rate_b * duration_t,
        duration_t,
    )?;
    Ok(pairs + background + accidentals)
}

/// Detection probability of a single pair, averaged over the phase spread.
fn pair_probability(config: &ApparatusConfig, state: &TwoPhotonState, alpha: Angle, beta: Angle) -> f64 {
    match config.phase_spread {
        PhaseSpread::Scalar => prob_vv(state, alpha, beta),
        PhaseSpread::PerPair { half_width_deg } => {
            let w = half_width_deg.to_radians();
            let sinc = if w == 0.0 { 1.0 } else { w.sin() / w };
            let averaged = state
                .with_cos_phi_m(state.phase().radians().cos() * sinc)
                .expect("|sinc| <= 1");
            prob_vv(&averaged, alpha, beta)
        }
    }
}

/// Half-width `w` of a uniform phase spread around the state's amplitude
/// phase that reproduces the state's `cos φ_m`, i.e. `cos φ · sin w / w =
/// cos φ_m`. `None` if no such width exists.
pub fn matched_half_width(state: &TwoPhotonState) -> Option<f64> {
    let center = state.phase().radians().cos();
    if center == 0.0 {
        return (state.cos_phi_m() == 0.0).then_some(0.0);
    }
    let target = state.cos_phi_m() / center;
    if !(0.0..=1.0 + 1e-15).contains(&target) {
        return None;
    }
    if target >= 1.0 {
        return Some(0.0);
    }
    // sin w / w falls monotonically from 1 to 0 on [0, π]
    let (mut lo, mut hi) = (0.0f64, std::f64::consts::PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid.sin() / mid > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).to_degrees())
}

/// One acquisition drawn from `rng`.
pub fn acquire(
    config: &ApparatusConfig,
    state: &TwoPhotonState,
    alpha: Angle,
    beta: Angle,
    duration_t: f64,
    rng: &mut impl Rng,
) -> Result<CountRecord> {
    check_duration(duration_t)?;
    let n_a = sample_poisson(rng, config.singles_rate_a * duration_t);
    let n_b = sample_poisson(rng, config.singles_rate_b * duration_t);
    let beta_true = beta + deg(config.beta_offset);
    let background = config.background_coinc_rate * duration_t
        + accidental_mean(
            config.coincidence_window_tau,
            config.singles_rate_a * duration_t,
            config.singles_rate_b * duration_t,
            duration_t,
        )?;
    let expected_pairs = config.pair_rate * duration_t;
    let n_coinc = match config.phase_spread {
        PhaseSpread::Scalar => {
            let mean = expected_pairs * prob_vv(state, alpha, beta_true) + background;
            sample_poisson(rng, mean)
        }
        PhaseSpread::PerPair { half_width_deg } => {
            let center = state.phase().radians();
            let w = half_width_deg.to_radians();
            let pairs = sample_poisson(rng, expected_pairs);
            let mut detected = 0;
            for _ in 0..pairs {
                let phi = if w > 0.0 { center + rng.random_range(-w..=w) } else { center };
                let pure = state.with_cos_phi_m(phi.cos()).expect("cosine in range");
                if rng.random::<f64>() < prob_vv(&pure, alpha, beta_true) {
                    detected += 1;
                }
            }
            detected + sample_poisson(rng, background)
        }
    };
    Ok(CountRecord {
        alpha: alpha.signed_degrees(),
        beta: beta.signed_degrees(),
        duration_t,
        n_a,
        n_b,
        n_coinc,
    })
}

/// Acquire at each setting in turn from one generator seeded with
/// `config.rng_seed`.
pub fn run_protocol(
    config: &ApparatusConfig,
    state: &TwoPhotonState,
    settings: &[(Angle, Angle)],
    duration_t: f64,
) -> Result<Vec<CountRecord>> {
    let mut rng = lab_rng(config.rng_seed);
    run_protocol_with(config, state, settings, duration_t, &mut rng)
}

pub fn run_protocol_with(
    config: &ApparatusConfig,
    state: &TwoPhotonState,
    settings: &[(Angle, Angle)],
    duration_t: f64,
    rng: &mut impl Rng,
) -> Result<Vec<CountRecord>> {
    config.validate()?;
    if settings.is_empty() {
        return Err(Error::domain("protocol needs at least one setting"));
    }
    settings
        .iter()
        .map(|&(alpha, beta)| acquire(config, state, alpha, beta, duration_t, rng))
        .collect()
}

/// Pump-side physics of the source that the dials do not control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSource {
    /// Crystal phase `Δ` in degrees.
    #[serde(default)]
    pub delta_deg: f64,
    /// Coherence factor multiplying `cos φ`; 1 for a pure state.
    #[serde(default = "one")]
    pub visibility: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PumpSource {
    fn default() -> Self {
        PumpSource { delta_deg: 0.0, visibility: 1.0 }
    }
}

impl PumpSource {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::InvalidConfig(format!(
                "visibility must lie in [0, 1], got {}",
                self.visibility
            )));
        }
        if !self.delta_deg.is_finite() {
            return Err(Error::InvalidConfig("delta_deg must be finite".into()));
        }
        Ok(())
    }

    /// State produced with the laser polarizer at `theta_l` and the quartz
    /// plate at `phi_l`.
    pub fn prepare(&self, theta_l: Angle, phi_l: Angle) -> TwoPhotonState {
        let pure = pump_state(theta_l, phi_l, deg(self.delta_deg));
        let mixed = pure.cos_phi_m() * self.visibility;
        pure.with_cos_phi_m(mixed.clamp(-1.0, 1.0)).expect("clamped")
    }
}

/// Current positions of the four dials on the bench.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dials {
    pub theta_l: Angle,
    pub phi_l: Angle,
    pub alpha: Angle,
    pub beta: Angle,
}

impl Default for Dials {
    fn default() -> Self {
        Dials { theta_l: deg(45.0), phi_l: deg(0.0), alpha: deg(0.0), beta: deg(0.0) }
    }
}

/// A running apparatus with its own generator, dial positions and
/// acquisition log. Steps are sequential by construction (`&mut self`); use
/// [`SharedSession`] to share one between threads.
#[derive(Clone, Debug)]
pub struct LiveSession {
    config: ApparatusConfig,
    source: PumpSource,
    dials: Dials,
    initial_dials: Dials,
    rng: LabRng,
    history: Vec<CountRecord>,
    expected_pairs: f64,
}

impl LiveSession {
    pub fn new(config: ApparatusConfig, source: PumpSource, dials: Dials) -> Result<Self> {
        config.validate()?;
        source.validate()?;
        Ok(LiveSession {
            rng: lab_rng(config.rng_seed),
            config,
            source,
            dials,
            initial_dials: dials,
            history: Vec::new(),
            expected_pairs: 0.0,
        })
    }

    pub fn config(&self) -> &ApparatusConfig {
        &self.config
    }

    pub fn source(&self) -> &PumpSource {
        &self.source
    }

    pub fn dials(&self) -> Dials {
        self.dials
    }

    pub fn initial_dials(&self) -> Dials {
        self.initial_dials
    }

    pub fn set_dials(&mut self, dials: Dials) {
        self.dials = dials;
    }

    pub fn set_pump(&mut self, theta_l: Angle, phi_l: Angle) {
        self.dials.theta_l = theta_l;
        self.dials.phi_l = phi_l;
    }

    /// State currently produced by the source.
    pub fn state(&self) -> TwoPhotonState {
        self.source.prepare(self.dials.theta_l, self.dials.phi_l)
    }

    /// Turn the analyzers to `(alpha, beta)` and count for `duration_t`.
    pub fn step(&mut self, alpha: Angle, beta: Angle, duration_t: f64) -> Result<CountRecord> {
        let record = acquire(&self.config, &self.state(), alpha, beta, duration_t, &mut self.rng)?;
        self.dials.alpha = alpha;
        self.dials.beta = beta;
        self.expected_pairs += self.config.pair_rate * duration_t;
        self.history.push(record);
        Ok(record)
    }

    /// Count at the current analyzer dials.
    pub fn acquire(&mut self, duration_t: f64) -> Result<CountRecord> {
        self.step(self.dials.alpha, self.dials.beta, duration_t)
    }

    /// Noise-free mean of a step at the current pump dials.
    pub fn expected_coincidences(&self, alpha: Angle, beta: Angle, duration_t: f64) -> Result<f64> {
        coincidence_mean(&self.config, &self.state(), alpha, beta, duration_t)
    }

    pub fn history(&self) -> &[CountRecord] {
        &self.history
    }

    /// Expected number of pairs produced over all steps so far.
    pub fn photon_budget(&self) -> f64 {
        self.expected_pairs
    }
}

/// A [`LiveSession`] shared between threads. A step attempted while another
/// is in progress fails with [`Error::Busy`] instead of queueing.
#[derive(Clone, Debug)]
pub struct SharedSession(Arc<Mutex<LiveSession>>);

impl SharedSession {
    pub fn new(session: LiveSession) -> Self {
        SharedSession(Arc::new(Mutex::new(session)))
    }

    /// Run `f` with exclusive access, or fail at once if the session is busy.
    pub fn try_with<R>(&self, f: impl FnOnce(&mut LiveSession) -> Result<R>) -> Result<R> {
        match self.0.try_lock() {
            Ok(mut guard) => f(&mut guard),
            Err(TryLockError::WouldBlock) => Err(Error::Busy),
            Err(TryLockError::Poisoned(p)) => f(&mut p.into_inner()),
        }
    }

    pub fn step(&self, alpha: Angle, beta: Angle, duration_t: f64) -> Result<CountRecord> {
        self.try_with(|s| s.step(alpha, beta, duration_t))
    }

    /// Blocking read access for inspection.
    pub fn lock(&self) -> MutexGuard<'_, LiveSession> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}
