//! Two-phase state-tuning controller.
//!
//! Phase 1 bisects the laser-polarizer angle until `N(0,0)` and `N(90,90)`
//! agree within counting noise. Phase 2 maximizes `N(45,45)` over the
//! quartz-plate setting: four settings a quarter turn apart give a first
//! estimate of the peak, and a golden-section search around it refines the
//! estimate until the two interior points can no longer be told apart
//! within counting noise. The result is checked with the four-count
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::angle::{deg, Angle};
use crate::apparatus::{coincidence_mean, ApparatusConfig, LiveSession, PumpSource};
use crate::error::{Error, Result};
use crate::estimation::diagnostics::{diagnose_state, StateDiagnostics};

/// Something the controller can turn the dials of and count on.
pub trait TuningBench {
    /// Set the pump dials and analyzers, acquire once, return the
    /// coincidence count.
    fn measure(&mut self, theta_l: Angle, phi_l: Angle, alpha: Angle, beta: Angle) -> Result<f64>;

    /// Pump dial positions before tuning.
    fn pump_dials(&self) -> (Angle, Angle);
}

/// Drives a [`LiveSession`] with a fixed acquisition time per step.
pub struct SessionBench<'a> {
    pub session: &'a mut LiveSession,
    pub duration_t: f64,
}

impl TuningBench for SessionBench<'_> {
    fn measure(&mut self, theta_l: Angle, phi_l: Angle, alpha: Angle, beta: Angle) -> Result<f64> {
        self.session.set_pump(theta_l, phi_l);
        Ok(self.session.step(alpha, beta, self.duration_t)?.n_coinc as f64)
    }

    fn pump_dials(&self) -> (Angle, Angle) {
        let d = self.session.dials();
        (d.theta_l, d.phi_l)
    }
}

/// Returns the mean count instead of sampling it.
pub struct NoiselessBench {
    pub config: ApparatusConfig,
    pub source: PumpSource,
    pub duration_t: f64,
    pub theta_l: Angle,
    pub phi_l: Angle,
}

impl TuningBench for NoiselessBench {
    fn measure(&mut self, theta_l: Angle, phi_l: Angle, alpha: Angle, beta: Angle) -> Result<f64> {
        self.theta_l = theta_l;
        self.phi_l = phi_l;
        let state = self.source.prepare(theta_l, phi_l);
        coincidence_mean(&self.config, &state, alpha, beta, self.duration_t)
    }

    fn pump_dials(&self) -> (Angle, Angle) {
        (self.theta_l, self.phi_l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneOptions {
    /// Stop phase 1 once `|N(0,0) − N(90,90)| ≤ k·√(N(0,0) + N(90,90))`.
    /// Zero disables the noise criterion.
    pub noise_sigmas: f64,
    /// Stop phase 1 once the pump-angle bracket is this narrow (degrees).
    pub theta_tol_deg: f64,
    /// Stop phase 2 once the phase bracket is this narrow (degrees).
    pub phi_tol_deg: f64,
    /// Acquisitions pooled into each count compared by either phase.
    pub phase_repeats: usize,
    /// Acquisitions pooled into each of the four final diagnostic counts.
    pub diagnostic_repeats: usize,
    /// Spend whatever budget is left on the final diagnostics.
    pub pool_remaining: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            noise_sigmas: 2.0,
            theta_tol_deg: 0.25,
            phi_tol_deg: 2.0,
            phase_repeats: 8,
            diagnostic_repeats: 8,
            pool_remaining: true,
        }
    }
}

impl TuneOptions {
    /// Settings for a bench without noise: converge to the solver
    /// tolerance.
    pub fn noiseless() -> Self {
        TuneOptions {
            noise_sigmas: 0.0,
            theta_tol_deg: 1e-9,
            phi_tol_deg: 1e-7,
            phase_repeats: 1,
            diagnostic_repeats: 1,
            pool_remaining: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneOutcome {
    /// Laser polarizer setting, degrees.
    pub theta_l: f64,
    /// Quartz plate setting, degrees.
    pub phi_l: f64,
    /// Diagnostics on fresh counts at the final settings, if the budget
    /// allowed taking them.
    pub diagnostics: Option<StateDiagnostics>,
    pub converged: bool,
    pub acquisitions: usize,
}

/// Internal control flow: out of budget, or a real failure.
enum Stop {
    Budget,
    Failed(Error),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Failed(e)
    }
}

struct Budgeted<'a, B: TuningBench> {
    bench: &'a mut B,
    remaining: usize,
    used: usize,
}

impl<B: TuningBench> Budgeted<'_, B> {
    fn can_afford(&self, n: usize) -> bool {
        self.remaining >= n
    }

    /// Sum of `repeats` acquisitions at one setting.
    fn pooled(&mut self, theta_l: Angle, phi_l: Angle, alpha: f64, beta: f64, repeats: usize) -> Result<f64, Stop> {
        if !self.can_afford(repeats) {
            return Err(Stop::Budget);
        }
        let mut total = 0.0;
        for _ in 0..repeats {
            total += self.bench.measure(theta_l, phi_l, deg(alpha), deg(beta))?;
            self.remaining -= 1;
            self.used += 1;
        }
        Ok(total)
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Run the controller with at most `step_budget` acquisitions.
pub fn tune<B: TuningBench>(bench: &mut B, step_budget: usize, options: &TuneOptions) -> Result<TuneOutcome> {
    let (theta0, phi0) = bench.pump_dials();
    let phase_repeats = options.phase_repeats.max(1);
    let diag_repeats = options.diagnostic_repeats.max(1);
    let reserve = 4 * diag_repeats;
    let mut b = Budgeted { bench, remaining: step_budget, used: 0 };

    let mut theta = theta0;
    let mut phi = phi0;
    let mut converged = true;

    // Phase 1. N(0,0) − N(90,90) rises monotonically with the pump angle on
    // [0°, 90°], so bisect on its sign.
    let mut lo = 0.0f64;
    let mut hi = 90.0f64;
    let phase1 = (|| -> Result<(), Stop> {
        loop {
            let mid = 0.5 * (lo + hi);
            if !b.can_afford(2 * phase_repeats + reserve) {
                return Err(Stop::Budget);
            }
            theta = deg(mid);
            let n00 = b.pooled(theta, phi, 0.0, 0.0, phase_repeats)?;
            let n9090 = b.pooled(theta, phi, 90.0, 90.0, phase_repeats)?;
            let diff = n00 - n9090;
            if options.noise_sigmas > 0.0 && diff.abs() <= options.noise_sigmas * (n00 + n9090).sqrt() {
                return Ok(());
            }
            if diff == 0.0 {
                return Ok(());
            }
            if diff > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= options.theta_tol_deg {
                theta = deg(0.5 * (lo + hi));
                return Ok(());
            }
        }
    })();
    match phase1 {
        Ok(()) => {}
        Err(Stop::Budget) => converged = false,
        Err(Stop::Failed(e)) => return Err(e),
    }

    // Phase 2, only if phase 1 finished.
    if converged {
        let phase2 = (|| -> Result<(), Stop> {
            let n45 = |b: &mut Budgeted<B>, p: f64| b.pooled(theta, deg(p), 45.0, 45.0, phase_repeats);
            // N(45,45) is a sinusoid in the plate setting; four points a
            // quarter turn apart locate its peak
            let origin = phi.degrees();
            let mut coarse = [0.0; 4];
            for (k, n) in coarse.iter_mut().enumerate() {
                if !b.can_afford(phase_repeats + reserve) {
                    return Err(Stop::Budget);
                }
                *n = n45(&mut b, origin + 90.0 * k as f64)?;
            }
            let center = origin + (coarse[1] - coarse[3]).atan2(coarse[0] - coarse[2]).to_degrees();
            phi = deg(center);

            let (mut a, mut c) = (center - 45.0, center + 45.0);
            let mut x1 = c - INV_PHI * (c - a);
            let mut x2 = a + INV_PHI * (c - a);
            if !b.can_afford(2 * phase_repeats + reserve) {
                return Err(Stop::Budget);
            }
            let mut f1 = n45(&mut b, x1)?;
            let mut f2 = n45(&mut b, x2)?;
            while c - a > options.phi_tol_deg {
                let indistinct = (f1 - f2).abs() <= options.noise_sigmas * (f1 + f2).sqrt();
                if options.noise_sigmas > 0.0 && indistinct {
                    phi = deg(0.5 * (x1 + x2));
                    return Ok(());
                }
                if !b.can_afford(phase_repeats + reserve) {
                    phi = deg(if f1 >= f2 { x1 } else { x2 });
                    return Err(Stop::Budget);
                }
                if f1 >= f2 {
                    c = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = c - INV_PHI * (c - a);
                    f1 = n45(&mut b, x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + INV_PHI * (c - a);
                    f2 = n45(&mut b, x2)?;
                }
            }
            phi = deg(0.5 * (a + c));
            Ok(())
        })();
        match phase2 {
            Ok(()) => {}
            Err(Stop::Budget) => converged = false,
            Err(Stop::Failed(e)) => return Err(e),
        }
    }

    let diag_repeats = if options.pool_remaining { diag_repeats.max(b.remaining / 4) } else { diag_repeats };
    let diagnostics = if b.can_afford(4 * diag_repeats) && step_budget > 0 {
        let n00 = pooled_or_fail(&mut b, theta, phi, 0.0, 0.0, diag_repeats)?;
        let n9090 = pooled_or_fail(&mut b, theta, phi, 90.0, 90.0, diag_repeats)?;
        let n090 = pooled_or_fail(&mut b, theta, phi, 0.0, 90.0, diag_repeats)?;
        let n4545 = pooled_or_fail(&mut b, theta, phi, 45.0, 45.0, diag_repeats)?;
        Some(diagnose_state(n00, n9090, n090, n4545)?)
    } else {
        None
    };

    Ok(TuneOutcome {
        theta_l: theta.signed_degrees(),
        phi_l: phi.signed_degrees(),
        diagnostics,
        converged,
        acquisitions: b.used,
    })
}

fn pooled_or_fail<B: TuningBench>(
    b: &mut Budgeted<'_, B>,
    theta: Angle,
    phi: Angle,
    alpha: f64,
    beta: f64,
    repeats: usize,
) -> Result<f64> {
    match b.pooled(theta, phi, alpha, beta, repeats) {
        Ok(n) => Ok(n),
        Err(Stop::Failed(e)) => Err(e),
        Err(Stop::Budget) => Err(Error::domain("tuning budget exhausted during diagnostics")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apparatus::{ApparatusConfig, Dials};

    fn noiseless(delta: f64, theta0: f64, phi0: f64) -> NoiselessBench {
        NoiselessBench {
            config: ApparatusConfig::pairs_only(300.0, 5.0, 0),
            source: PumpSource { delta_deg: delta, visibility: 0.95 },
            duration_t: 1.0,
            theta_l: deg(theta0),
            phi_l: deg(phi0),
        }
    }

    #[test]
    fn noiseless_converges_exactly() {
        for (delta, theta0, phi0) in [(0.0, 10.0, 100.0), (40.0, 80.0, -30.0), (-130.0, 45.0, 0.0)] {
            let mut bench = noiseless(delta, theta0, phi0);
            let out = tune(&mut bench, 10_000, &TuneOptions::noiseless()).unwrap();
            assert!(out.converged);
            assert!((out.theta_l - 45.0).abs() < 1e-6, "{out:?}");
            let phase_error = deg(out.phi_l + delta).signed_degrees();
            assert!(phase_error.abs() < 1e-4, "{out:?}");
            let d = out.diagnostics.unwrap();
            assert!((d.theta_l - 45.0).abs() < 1e-6);
            assert!((d.cos_phi_m - 0.95).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_budget_keeps_initial_dials() {
        let mut bench = noiseless(0.0, 12.0, 34.0);
        let out = tune(&mut bench, 0, &TuneOptions::default()).unwrap();
        assert!(!out.converged);
        assert_eq!((out.theta_l, out.phi_l), (12.0, 34.0));
        assert!(out.diagnostics.is_none());
        assert_eq!(out.acquisitions, 0);
    }

    #[test]
    fn small_budget_is_respected() {
        let mut bench = noiseless(0.0, 12.0, 34.0);
        let out = tune(&mut bench, 45, &TuneOptions::default()).unwrap();
        assert!(!out.converged);
        assert!(out.acquisitions <= 45);
        assert!(out.diagnostics.is_some());
    }

    #[test]
    fn session_tuning_is_deterministic() {
        let config = ApparatusConfig { rng_seed: 7, ..ApparatusConfig::pairs_only(300.0, 5.0, 7) };
        let source = PumpSource { delta_deg: 0.0, visibility: 0.97 };
        let dials = Dials { theta_l: deg(20.0), phi_l: deg(120.0), ..Dials::default() };
        let run = || {
            let mut session = LiveSession::new(config, source, dials).unwrap();
            let mut bench = SessionBench { session: &mut session, duration_t: 1.0 };
            tune(&mut bench, 200, &TuneOptions::default()).unwrap()
        };
        let out = run();
        assert_eq!(out, run());
        assert!(out.acquisitions <= 200);
        let d = out.diagnostics.unwrap();
        assert!((43.0..=47.0).contains(&d.theta_l), "{out:?}");
        assert!(d.cos_phi_m >= 0.85, "{out:?}");
    }
}
