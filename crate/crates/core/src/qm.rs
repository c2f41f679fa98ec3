//! Quantum model of the downconverted polarization state.
//!
//! The two-crystal source turns a pump photon polarized at `θ_l` from the
//! vertical, with relative phase `φ_l` between its components, into the pair
//! state `cos θ_l |HH⟩ + e^{iφ} sin θ_l |VV⟩` with `φ = φ_l + Δ`. Analyzers at
//! `α` (signal) and `β` (idler) project onto the rotated basis
//!
//! ```text
//! |V_α⟩ = cos α |V⟩ − sin α |H⟩
//! |H_α⟩ = sin α |V⟩ + cos α |H⟩
//! ```
//!
//! Imperfect coherence between the two crystals' emission is modelled only
//! through `cos φ_m`, the ensemble average of `cos φ` that multiplies the
//! interference term.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::angle::{deg, Angle, ChshAngles};
use crate::error::{Error, Result};

/// Laser polarizer and quartz-plate settings plus the crystal phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    pub theta_l: Angle,
    pub phi_l: Angle,
    pub delta: Angle,
}

impl PumpConfig {
    /// Total phase `φ = φ_l + Δ` between the |VV⟩ and |HH⟩ amplitudes.
    pub fn total_phase(&self) -> Angle {
        self.phi_l + self.delta
    }

    pub fn state(&self) -> TwoPhotonState {
        pump_state(self.theta_l, self.phi_l, self.delta)
    }
}

/// Pair state `amp_hh |HH⟩ + amp_vv |VV⟩` with a dephasing average.
///
/// `amp_hh` is kept real and nonnegative (the global phase is unobservable).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonState {
    amp_hh: Complex64,
    amp_vv: Complex64,
    cos_phi_m: f64,
}

const NORM_TOL: f64 = 1e-12;

impl TwoPhotonState {
    /// Build a pure state from two amplitudes. `cos_phi_m` is set from the
    /// relative phase of the amplitudes.
    pub fn new(amp_hh: Complex64, amp_vv: Complex64) -> Result<Self> {
        let norm = amp_hh.norm_sqr() + amp_vv.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::domain(format!(
                "state amplitudes must have unit norm, got {norm}"
            )));
        }
        // rotate the global phase so amp_hh is real and nonnegative
        let (hh, vv) = if amp_hh.norm() > 0.0 {
            let phase = amp_hh.conj() / amp_hh.norm();
            (Complex64::new(amp_hh.norm(), 0.0), amp_vv * phase)
        } else {
            (Complex64::new(0.0, 0.0), amp_vv)
        };
        let cos_phi_m = if hh.norm() > 0.0 && vv.norm() > 0.0 {
            vv.arg().cos()
        } else {
            1.0
        };
        Ok(TwoPhotonState {
            amp_hh: hh,
            amp_vv: vv,
            cos_phi_m,
        })
    }

    /// `cos θ_l |HH⟩ + e^{iφ} sin θ_l |VV⟩` with `cos φ_m = cos φ`.
    pub fn from_angles(theta_l: Angle, phi: Angle) -> Self {
        let (s, c) = theta_l.radians().sin_cos();
        let hh = Complex64::new(c, 0.0);
        let vv = Complex64::from_polar(s, phi.radians());
        let mut state = Self::new(hh, vv).expect("unit norm by construction");
        if s == 0.0 || c == 0.0 {
            state.cos_phi_m = phi.radians().cos();
        }
        state
    }

    /// `(|VV⟩ + |HH⟩)/√2`.
    pub fn epr() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        TwoPhotonState {
            amp_hh: Complex64::new(h, 0.0),
            amp_vv: Complex64::new(h, 0.0),
            cos_phi_m: 1.0,
        }
    }

    /// Replace the interference average, turning the pure state into the
    /// phase-averaged mixture.
    pub fn with_cos_phi_m(mut self, cos_phi_m: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&cos_phi_m) {
            return Err(Error::domain(format!(
                "cos_phi_m must lie in [-1, 1], got {cos_phi_m}"
            )));
        }
        self.cos_phi_m = cos_phi_m;
        Ok(self)
    }

    pub fn amp_hh(&self) -> Complex64 {
        self.amp_hh
    }

    pub fn amp_vv(&self) -> Complex64 {
        self.amp_vv
    }

    pub fn cos_phi_m(&self) -> f64 {
        self.cos_phi_m
    }

    /// Pump angle recovered from the amplitude magnitudes, in `[0°, 90°]`.
    pub fn theta_l(&self) -> Angle {
        Angle::from_radians(self.amp_vv.norm().atan2(self.amp_hh.norm()))
    }

    /// Relative phase `arg(amp_vv) − arg(amp_hh)` of the pure amplitudes.
    pub fn phase(&self) -> Angle {
        Angle::from_radians(self.amp_vv.arg())
    }

    fn weights(&self) -> Weights {
        let cos2 = self.amp_hh.norm_sqr();
        let sin2 = self.amp_vv.norm_sqr();
        Weights {
            cos2_theta: cos2,
            sin2_theta: sin2,
            sin_2theta: 2.0 * self.amp_hh.norm() * self.amp_vv.norm(),
            cos_phi_m: self.cos_phi_m,
        }
    }
}

/// Downconverted state for pump angle `θ_l`, quartz-plate phase `φ_l` and
/// crystal phase `Δ`.
pub fn pump_state(theta_l: Angle, phi_l: Angle, delta: Angle) -> TwoPhotonState {
    TwoPhotonState::from_angles(theta_l, phi_l + delta)
}

/// Probabilities of the four joint outcomes at one pair of analyzer angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbabilities {
    pub p_vv: f64,
    pub p_vh: f64,
    pub p_hv: f64,
    pub p_hh: f64,
}

impl OutcomeProbabilities {
    pub fn total(&self) -> f64 {
        self.p_vv + self.p_vh + self.p_hv + self.p_hh
    }

    /// `E = P_VV + P_HH − P_VH − P_HV`.
    pub fn correlation(&self) -> f64 {
        self.p_vv + self.p_hh - self.p_vh - self.p_hv
    }
}

/// Expected-count model: `A·P_VV(α, β) + C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountModelParams {
    pub a_pairs: f64,
    pub c_offset: f64,
    /// Degrees.
    pub theta_l: f64,
    pub cos_phi_m: f64,
}

impl CountModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_pairs >= 0.0) {
            return Err(Error::domain(format!("a_pairs must be >= 0, got {}", self.a_pairs)));
        }
        if !(self.c_offset >= 0.0) {
            return Err(Error::domain(format!("c_offset must be >= 0, got {}", self.c_offset)));
        }
        if !(-1.0..=1.0).contains(&self.cos_phi_m) {
            return Err(Error::domain(format!(
                "cos_phi_m must lie in [-1, 1], got {}",
                self.cos_phi_m
            )));
        }
        if !self.theta_l.is_finite() {
            return Err(Error::domain("theta_l must be finite"));
        }
        Ok(())
    }

    fn weights(&self) -> Weights {
        let (s, c) = self.theta_l.to_radians().sin_cos();
        Weights {
            cos2_theta: c * c,
            sin2_theta: s * s,
            sin_2theta: 2.0 * s * c,
            cos_phi_m: self.cos_phi_m,
        }
    }
}

struct Weights {
    cos2_theta: f64,
    sin2_theta: f64,
    sin_2theta: f64,
    cos_phi_m: f64,
}

impl Weights {
    /// `sin²α sin²β cos²θ + cos²α cos²β sin²θ + ¼ sin2α sin2β sin2θ cos φ_m`
    fn vv(&self, alpha: Angle, beta: Angle) -> f64 {
        let (sa, ca) = alpha.radians().sin_cos();
        let (sb, cb) = beta.radians().sin_cos();
        let direct = sa * sa * sb * sb * self.cos2_theta + ca * ca * cb * cb * self.sin2_theta;
        // ¼ sin2α sin2β = sinα cosα sinβ cosβ
        let interference = sa * ca * sb * cb * self.sin_2theta * self.cos_phi_m;
        direct + interference
    }
}

fn clamp_probability(p: f64) -> f64 {
    if p < 0.0 && p > -NORM_TOL {
        0.0
    } else {
        p
    }
}

/// Probability that both photons pass their analyzers (`V_α V_β`).
pub fn prob_vv(state: &TwoPhotonState, alpha: Angle, beta: Angle) -> f64 {
    clamp_probability(state.weights().vv(alpha, beta))
}

/// `½ cos²(β − α)`: coincidence probability for the maximally entangled
/// state, a function of the relative angle alone.
pub fn prob_vv_epr(alpha: Angle, beta: Angle) -> f64 {
    let c = (beta.radians() - alpha.radians()).cos();
    0.5 * c * c
}

pub fn outcome_probs(state: &TwoPhotonState, alpha: Angle, beta: Angle) -> OutcomeProbabilities {
    let w = state.weights();
    let (ap, bp) = (alpha.perpendicular(), beta.perpendicular());
    OutcomeProbabilities {
        p_vv: clamp_probability(w.vv(alpha, beta)),
        p_vh: clamp_probability(w.vv(alpha, bp)),
        p_hv: clamp_probability(w.vv(ap, beta)),
        p_hh: clamp_probability(w.vv(ap, bp)),
    }
}

/// Probability that the idler registers `V_β`, summed over both signal
/// outcomes at analyzer angle `alpha`.
pub fn marginal_idler_v(state: &TwoPhotonState, alpha: Angle, beta: Angle) -> f64 {
    let p = outcome_probs(state, alpha, beta);
    p.p_vv + p.p_hv
}

/// Idler marginal for the maximally entangled state. It is ½ whatever the
/// analyzer settings, so no message can be sent by turning the signal
/// polarizer.
pub fn marginal_prob_v(beta: Angle) -> f64 {
    marginal_idler_v(&TwoPhotonState::epr(), Angle::ZERO, beta)
}

/// Mean coincidence count `A·P_VV(α, β) + C` with the state's parameters
/// taken from `params`.
pub fn expected_counts(params: &CountModelParams, alpha: Angle, beta: Angle) -> f64 {
    params.a_pairs * params.weights().vv(alpha, beta) + params.c_offset
}

/// Polarization correlation `E(α, β)` of the state.
pub fn qm_e(state: &TwoPhotonState, alpha: Angle, beta: Angle) -> f64 {
    outcome_probs(state, alpha, beta).correlation()
}

/// `S = E(a,b) − E(a,b') + E(a',b) + E(a',b')`.
pub fn qm_s(state: &TwoPhotonState, angles: &ChshAngles) -> f64 {
    chsh_combination(|alpha, beta| qm_e(state, alpha, beta), angles)
}

/// Assemble `S` from any correlation function.
pub fn chsh_combination(mut e: impl FnMut(Angle, Angle) -> f64, angles: &ChshAngles) -> f64 {
    e(angles.a, angles.b) - e(angles.a, angles.b_prime)
        + e(angles.a_prime, angles.b)
        + e(angles.a_prime, angles.b_prime)
}

/// The quantum bound `2√2`.
pub const TSIRELSON_BOUND: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Convenience for the degree-valued pump call used throughout the tests and
/// the CLI.
pub fn pump_state_deg(theta_l: f64, phi_l: f64, delta: f64) -> TwoPhotonState {
    pump_state(deg(theta_l), deg(phi_l), deg(delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Independent route: project onto `⟨V_α|⟨V_β|` component by component.
    fn projected_vv(state: &TwoPhotonState, alpha: f64, beta: f64) -> f64 {
        let (sa, ca) = alpha.to_radians().sin_cos();
        let (sb, cb) = beta.to_radians().sin_cos();
        // ⟨V_α| = cos α ⟨V| − sin α ⟨H|, |ψ⟩ = hh |HH⟩ + vv |VV⟩
        let amp = state.amp_vv() * (ca * cb) + state.amp_hh() * ((-sa) * (-sb));
        amp.norm_sqr()
    }

    #[test]
    fn pump_state_examples() {
        let s = pump_state_deg(0.0, 123.0, 0.0);
        assert!(close(s.amp_hh().re, 1.0, 1e-15));
        assert!(s.amp_vv().norm() < 1e-15);

        let s = pump_state_deg(45.0, 0.0, 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(s.amp_hh().re, h, 1e-15));
        assert!(close(s.amp_vv().re, h, 1e-15) && s.amp_vv().im.abs() < 1e-15);

        let s = pump_state_deg(46.0, 26.0, 0.0);
        assert!(close(s.amp_hh().re, 0.69466, 5e-6));
        assert!(close(s.amp_vv().norm(), 0.71934, 5e-6));
        assert!(close(s.amp_vv().arg().to_degrees(), 26.0, 1e-12));
        assert!(close(s.cos_phi_m(), 26f64.to_radians().cos(), 1e-12));
    }

    #[test]
    fn pump_state_keeps_hh_real_nonnegative() {
        let s = pump_state_deg(135.0, 10.0, 5.0);
        assert!(s.amp_hh().re > 0.0 && s.amp_hh().im == 0.0);
        let norm = s.amp_hh().norm_sqr() + s.amp_vv().norm_sqr();
        assert!(close(norm, 1.0, 1e-12));
        // the global sign flip moves the relative phase by 180°
        assert!(close(s.cos_phi_m(), -(15f64.to_radians().cos()), 1e-12));
    }

    #[test]
    fn prob_vv_examples() {
        let epr = TwoPhotonState::epr();
        assert!(close(prob_vv(&epr, deg(0.0), deg(0.0)), 0.5, 1e-15));
        assert!(close(prob_vv(&epr, deg(0.0), deg(90.0)), 0.0, 1e-15));

        let mixed = TwoPhotonState::from_angles(deg(46.0), deg(0.0))
            .with_cos_phi_m(26f64.to_radians().cos())
            .unwrap();
        let p = prob_vv(&mixed, deg(45.0), deg(45.0));
        assert!(close(p, 0.4746, 5e-5), "{p}");
        // cross-check against the measured (N(45,45) - C) / A
        assert!(close(p, (286.0 - 22.0) / 556.0, 1e-3));
    }

    #[test]
    fn prob_vv_epr_examples() {
        assert!(close(prob_vv_epr(deg(0.0), deg(0.0)), 0.5, 1e-15));
        assert!(close(prob_vv_epr(deg(0.0), deg(30.0)), 0.375, 1e-15));
        assert!(close(prob_vv_epr(deg(0.0), deg(45.0)), 0.25, 1e-15));
    }

    #[test]
    fn outcome_probs_examples() {
        let epr = TwoPhotonState::epr();
        let p = outcome_probs(&epr, deg(0.0), deg(0.0));
        assert!(close(p.p_vv, 0.5, 1e-15) && close(p.p_hh, 0.5, 1e-15));
        assert!(p.p_vh.abs() < 1e-15 && p.p_hv.abs() < 1e-15);

        let p = outcome_probs(&epr, deg(0.0), deg(22.5));
        assert!(close(p.p_vv, 0.42678, 5e-6));
        assert!(close(p.p_vh, 0.07322, 5e-6));
        assert!(close(p.p_hv, 0.07322, 5e-6));
        assert!(close(p.p_hh, 0.42678, 5e-6));
    }

    #[test]
    fn marginal_examples() {
        for beta in [0.0, 37.0, 90.0] {
            assert!(close(marginal_prob_v(deg(beta)), 0.5, 1e-15));
        }
    }

    #[test]
    fn expected_counts_examples() {
        let c26 = 26f64.to_radians().cos();
        let p = CountModelParams { a_pairs: 556.0, c_offset: 22.0, theta_l: 46.0, cos_phi_m: c26 };
        assert!(close(expected_counts(&p, deg(0.0), deg(90.0)), 22.0, 1e-12));
        assert!(close(expected_counts(&p, deg(45.0), deg(45.0)), 285.9, 0.05));

        let p = CountModelParams { a_pairs: 539.0, c_offset: 31.0, ..p };
        let want = 31.0 + 539.0 * 46f64.to_radians().sin().powi(2);
        assert!(close(expected_counts(&p, deg(0.0), deg(0.0)), want, 1e-12));
        assert!(close(want, 309.9, 0.05));
    }

    #[test]
    fn qm_e_examples() {
        let epr = TwoPhotonState::epr();
        assert!(close(qm_e(&epr, deg(0.0), deg(0.0)), 1.0, 1e-15));
        assert!(close(qm_e(&epr, deg(0.0), deg(90.0)), -1.0, 1e-15));
        assert!(close(qm_e(&epr, deg(0.0), deg(22.5)), std::f64::consts::FRAC_1_SQRT_2, 1e-12));
    }

    #[test]
    fn qm_s_examples() {
        let epr = TwoPhotonState::epr();
        assert!(close(qm_s(&epr, &ChshAngles::canonical()), TSIRELSON_BOUND, 1e-12));
        assert!(close(qm_s(&epr, &ChshAngles::new(0.0, 0.0, 0.0, 0.0)), 2.0, 1e-12));

        // product state |HH⟩: E(α, β) = cos 2α cos 2β by direct projection
        let product = pump_state_deg(0.0, 0.0, 0.0);
        let oracle = |a: f64, b: f64| {
            let pvv = projected_vv(&product, a, b);
            let pvh = projected_vv(&product, a, b + 90.0);
            let phv = projected_vv(&product, a + 90.0, b);
            let phh = projected_vv(&product, a + 90.0, b + 90.0);
            pvv + phh - pvh - phv
        };
        let want = oracle(-45.0, -22.5) - oracle(-45.0, 22.5) + oracle(0.0, -22.5) + oracle(0.0, 22.5);
        let s = qm_s(&product, &ChshAngles::canonical());
        assert!(close(s, want, 1e-12));
        assert!(s.abs() <= 2.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(TwoPhotonState::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).is_err());
        assert!(TwoPhotonState::epr().with_cos_phi_m(1.5).is_err());
        let p = CountModelParams { a_pairs: -1.0, c_offset: 0.0, theta_l: 45.0, cos_phi_m: 1.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn normalization_over_random_states() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let state = pump_state_deg(rng.random_range(0.0..360.0), rng.random_range(0.0..360.0), 0.0)
                .with_cos_phi_m(rng.random_range(-1.0..=1.0))
                .unwrap();
            let p = outcome_probs(&state, deg(rng.random_range(-360.0..360.0)), deg(rng.random_range(-360.0..360.0)));
            assert!(close(p.total(), 1.0, 1e-12));
            for x in [p.p_vv, p.p_vh, p.p_hv, p.p_hh] {
                assert!((0.0..=1.0 + 1e-12).contains(&x));
            }
        }
    }

    #[test]
    fn epr_s_never_exceeds_tsirelson_on_grid() {
        let epr = TwoPhotonState::epr();
        let grid: Vec<f64> = (0..24).map(|i| i as f64 * 7.5).collect();
        let mut max = f64::MIN;
        for &a in &grid {
            for &ap in &grid {
                for &b in &grid {
                    for &bp in &grid {
                        let s = qm_s(&epr, &ChshAngles::new(a, ap, b, bp));
                        max = max.max(s.abs());
                    }
                }
            }
        }
        assert!(max <= TSIRELSON_BOUND + 1e-9);
        assert!(close(max, TSIRELSON_BOUND, 1e-12));
    }

    proptest! {
        #[test]
        fn basis_projection_agrees(theta in 0.0f64..360.0, phi in 0.0f64..360.0,
                                   alpha in -360.0f64..360.0, beta in -360.0f64..360.0) {
            let state = pump_state_deg(theta, phi, 0.0);
            let want = projected_vv(&state, alpha, beta);
            prop_assert!(close(prob_vv(&state, deg(alpha), deg(beta)), want, 1e-12));
        }

        #[test]
        fn relative_angle_law(alpha in -360.0f64..360.0, beta in -360.0f64..360.0, shift in -360.0f64..360.0) {
            let epr = TwoPhotonState::epr();
            let p = prob_vv(&epr, deg(alpha), deg(beta));
            prop_assert!(close(p, prob_vv(&epr, deg(alpha + shift), deg(beta + shift)), 1e-12));
            prop_assert!(close(p, prob_vv_epr(deg(alpha), deg(beta)), 1e-12));
            prop_assert!(close(qm_e(&epr, deg(alpha), deg(beta)),
                               (2.0 * (beta - alpha).to_radians()).cos(), 1e-12));
        }

        #[test]
        fn no_signaling(alpha in -360.0f64..360.0, beta in -360.0f64..360.0) {
            let p = outcome_probs(&TwoPhotonState::epr(), deg(alpha), deg(beta));
            prop_assert!(close(p.p_vv + p.p_vh, 0.5, 1e-12));
            prop_assert!(close(p.p_vv + p.p_hv, 0.5, 1e-12));
        }

        #[test]
        fn half_turn_periodicity(theta in 0.0f64..90.0, cphi in -1.0f64..=1.0,
                                 alpha in -180.0f64..180.0, beta in -180.0f64..180.0) {
            let state = pump_state_deg(theta, 0.0, 0.0).with_cos_phi_m(cphi).unwrap();
            let params = CountModelParams { a_pairs: 100.0, c_offset: 3.0, theta_l: theta, cos_phi_m: cphi };
            let (a, b) = (deg(alpha), deg(beta));
            let (a2, b2) = (deg(alpha + 180.0), deg(beta + 180.0));
            prop_assert!(close(prob_vv(&state, a, b), prob_vv(&state, a2, b), 1e-12));
            prop_assert!(close(prob_vv(&state, a, b), prob_vv(&state, a, b2), 1e-12));
            prop_assert!(close(prob_vv_epr(a, b), prob_vv_epr(a2, b2), 1e-12));
            prop_assert!(close(qm_e(&state, a, b), qm_e(&state, a2, b), 1e-12));
            prop_assert!(close(expected_counts(&params, a, b), expected_counts(&params, a2, b2), 1e-9));
            prop_assert!(close(marginal_idler_v(&state, a, b), marginal_idler_v(&state, a, b2), 1e-12));
        }
    }
}
