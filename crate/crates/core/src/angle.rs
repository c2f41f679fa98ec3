//! Polarizer angles.
//!
//! All interfaces speak degrees. An [`Angle`] is normalized to `[0°, 360°)`
//! on construction; every polarization formula in this crate is π-periodic,
//! so `θ` and `θ + 180°` describe the same polarizer setting.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A polarizer or pump angle in degrees, normalized to `[0, 360)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct Angle(f64);

/// Shorthand for [`Angle::from_degrees`].
pub fn deg(degrees: f64) -> Angle {
    Angle::from_degrees(degrees)
}

impl Angle {
    pub const ZERO: Angle = Angle(0.0);
    pub const RIGHT: Angle = Angle(90.0);

    pub fn from_degrees(degrees: f64) -> Self {
        let r = degrees.rem_euclid(360.0);
        // rem_euclid rounds tiny negatives up to exactly 360.0
        Angle(if r >= 360.0 { 0.0 } else { r })
    }

    pub fn from_radians(radians: f64) -> Self {
        Self::from_degrees(radians.to_degrees())
    }

    /// Degrees in `[0, 360)`.
    pub fn degrees(self) -> f64 {
        self.0
    }

    /// Degrees in `(-180, 180]`, the form used in count tables.
    pub fn signed_degrees(self) -> f64 {
        if self.0 > 180.0 {
            self.0 - 360.0
        } else {
            self.0
        }
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    /// The orthogonal setting `θ + 90°`.
    pub fn perpendicular(self) -> Self {
        self + Angle::RIGHT
    }

    /// Distance between two polarizer axes, folded to `[0°, 90°]`.
    ///
    /// Axes are undirected, so the distance is taken modulo 180°.
    pub fn axis_distance(self, other: Angle) -> f64 {
        let d = (self.0 - other.0).rem_euclid(180.0);
        if d > 90.0 {
            180.0 - d
        } else {
            d
        }
    }

    /// True when both angles name the same polarizer axis (equal mod 180°).
    pub fn same_axis(self, other: Angle, tol_deg: f64) -> bool {
        self.axis_distance(other) <= tol_deg
    }
}

impl From<f64> for Angle {
    fn from(degrees: f64) -> Self {
        Angle::from_degrees(degrees)
    }
}

impl From<Angle> for f64 {
    fn from(angle: Angle) -> Self {
        angle.0
    }
}

impl std::ops::Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle::from_degrees(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle::from_degrees(self.0 - rhs.0)
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.signed_degrees())
    }
}

/// The four analyzer settings `a, a'` (signal) and `b, b'` (idler) of a
/// CHSH measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshAngles {
    pub a: Angle,
    pub a_prime: Angle,
    pub b: Angle,
    pub b_prime: Angle,
}

impl ChshAngles {
    pub fn new(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Self {
        ChshAngles {
            a: deg(a),
            a_prime: deg(a_prime),
            b: deg(b),
            b_prime: deg(b_prime),
        }
    }

    /// `a = -45°, a' = 0°, b = -22.5°, b' = 22.5°`: the settings that give
    /// the quantum maximum `2√2` for the maximally entangled state.
    pub fn canonical() -> Self {
        ChshAngles::new(-45.0, 0.0, -22.5, 22.5)
    }

    /// Signal settings in table order: `a, a', a⊥, a'⊥`.
    pub fn alpha_settings(&self) -> [Angle; 4] {
        [
            self.a,
            self.a_prime,
            self.a.perpendicular(),
            self.a_prime.perpendicular(),
        ]
    }

    /// Idler settings in table order: `b, b', b⊥, b'⊥`.
    pub fn beta_settings(&self) -> [Angle; 4] {
        [
            self.b,
            self.b_prime,
            self.b.perpendicular(),
            self.b_prime.perpendicular(),
        ]
    }

    /// The sixteen `(α, β)` settings of a full run, signal-major, in the
    /// row order of a published count table.
    pub fn settings(&self) -> Vec<(Angle, Angle)> {
        let betas = self.beta_settings();
        self.alpha_settings()
            .into_iter()
            .flat_map(|alpha| betas.into_iter().map(move |beta| (alpha, beta)))
            .collect()
    }
}

impl Default for ChshAngles {
    fn default() -> Self {
        ChshAngles::canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_into_range() {
        assert_eq!(deg(-45.0).degrees(), 315.0);
        assert_eq!(deg(360.0).degrees(), 0.0);
        assert_eq!(deg(-1e-20).degrees(), 0.0);
        assert_eq!(deg(405.0).degrees(), 45.0);
        assert_eq!(deg(-45.0).signed_degrees(), -45.0);
        assert_eq!(deg(180.0).signed_degrees(), 180.0);
    }

    #[test]
    fn axis_distance_folds() {
        assert_eq!(deg(10.0).axis_distance(deg(0.0)), 10.0);
        assert_eq!(deg(170.0).axis_distance(deg(0.0)), 10.0);
        assert_eq!(deg(50.0).axis_distance(deg(0.0)), 50.0);
        assert_eq!(deg(0.0).axis_distance(deg(270.0)), 90.0);
        assert!(deg(-45.0).same_axis(deg(135.0), 1e-9));
    }

    #[test]
    fn canonical_grid_matches_table_order() {
        let s = ChshAngles::canonical().settings();
        assert_eq!(s.len(), 16);
        let signed: Vec<(f64, f64)> = s
            .iter()
            .map(|(a, b)| (a.signed_degrees(), b.signed_degrees()))
            .collect();
        assert_eq!(signed[0], (-45.0, -22.5));
        assert_eq!(signed[3], (-45.0, 112.5));
        assert_eq!(signed[4], (0.0, -22.5));
        assert_eq!(signed[15], (90.0, 112.5));
    }
}
