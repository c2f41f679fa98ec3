use serde::{Deserialize, Serialize};

use crate::angle::deg;
use crate::apparatus::CountRecord;
use crate::error::{Error, Result};

/// State parameters read off four coincidence counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDiagnostics {
    pub c_offset: f64,
    pub a_pairs: f64,
    /// Pump angle in degrees from `tan²θ_l = (N(90,90) − C)/(N(0,0) − C)`.
    pub theta_l: f64,
    /// Interference average, clamped to `[-1, 1]`.
    pub cos_phi_m: f64,
    /// `acos(cos_phi_m)` in degrees.
    pub phi_m: f64,
    /// Set when the raw interference estimate fell outside `[-1, 1]`.
    pub interference_out_of_range: bool,
}

impl StateDiagnostics {
    /// The pump angle in the convention of the count model, where
    /// `N(0,0) − C = A sin²θ_l`. The diagnostic ratio reads the complement.
    pub fn model_theta_l(&self) -> f64 {
        90.0 - self.theta_l
    }
}

/// Estimate `C`, `A`, `θ_l` and `φ_m` from `N(0,0)`, `N(90,90)`, `N(0,90)`
/// and `N(45,45)`.
pub fn diagnose_state(n00: f64, n9090: f64, n090: f64, n4545: f64) -> Result<StateDiagnostics> {
    for (name, v) in [("N(0,0)", n00), ("N(90,90)", n9090), ("N(0,90)", n090), ("N(45,45)", n4545)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("{name} must be a finite nonnegative count, got {v}")));
        }
    }
    if !(n00 > n090) {
        return Err(Error::DegenerateCounts(format!("N(0,0) > N(0,90), got {n00} <= {n090}")));
    }
    if !(n9090 > n090) {
        return Err(Error::DegenerateCounts(format!("N(90,90) > N(0,90), got {n9090} <= {n090}")));
    }
    let c = n090;
    let a = n00 + n9090 - 2.0 * c;
    let theta = ((n9090 - c) / (n00 - c)).sqrt().atan();
    let raw = (4.0 * (n4545 - c) / a - 1.0) / (2.0 * theta).sin();
    let clamped = raw.clamp(-1.0, 1.0);
    Ok(StateDiagnostics {
        c_offset: c,
        a_pairs: a,
        theta_l: theta.to_degrees(),
        cos_phi_m: clamped,
        phi_m: clamped.acos().to_degrees(),
        interference_out_of_range: raw != clamped,
    })
}

/// [`diagnose_state`] on records, summing repeated acquisitions of the same
/// setting. Settings are matched modulo 180°.
pub fn diagnose_records(records: &[CountRecord]) -> Result<StateDiagnostics> {
    let wanted = [(0.0, 0.0), (90.0, 90.0), (0.0, 90.0), (45.0, 45.0)];
    let mut sums = [0.0; 4];
    let mut seen = [false; 4];
    for r in records {
        for (k, &(a, b)) in wanted.iter().enumerate() {
            if deg(r.alpha).same_axis(deg(a), 1e-6) && deg(r.beta).same_axis(deg(b), 1e-6) {
                sums[k] += r.n_coinc as f64;
                seen[k] = true;
            }
        }
    }
    let missing: Vec<(f64, f64)> = wanted
        .iter()
        .zip(seen)
        .filter(|(_, s)| !s)
        .map(|(cell, _)| *cell)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    diagnose_state(sums[0], sums[1], sums[2], sums[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qm::{expected_counts, CountModelParams};
    use proptest::prelude::*;

    #[test]
    fn published_counts() {
        let d = diagnose_state(293.0, 307.0, 22.0, 286.0).unwrap();
        assert_eq!(d.c_offset, 22.0);
        assert_eq!(d.a_pairs, 556.0);
        assert!((d.theta_l - 45.72).abs() < 0.05, "{}", d.theta_l);
        assert!((d.phi_m - 25.89).abs() < 0.05, "{}", d.phi_m);
        assert!(!d.interference_out_of_range);
    }

    #[test]
    fn symmetric_examples() {
        let d = diagnose_state(100.0, 100.0, 0.0, 50.0).unwrap();
        assert_eq!((d.c_offset, d.a_pairs), (0.0, 200.0));
        assert!((d.theta_l - 45.0).abs() < 1e-12);
        assert!((d.phi_m - 90.0).abs() < 1e-9);

        let d = diagnose_state(100.0, 100.0, 0.0, 100.0).unwrap();
        assert!((d.theta_l - 45.0).abs() < 1e-12);
        assert!(d.phi_m.abs() < 1e-6);
    }

    #[test]
    fn degenerate_and_clamped() {
        let err = diagnose_state(20.0, 300.0, 22.0, 100.0).unwrap_err();
        assert!(err.to_string().contains("N(0,0) > N(0,90)"));
        let err = diagnose_state(300.0, 22.0, 22.0, 100.0).unwrap_err();
        assert!(err.to_string().contains("N(90,90) > N(0,90)"));
        let d = diagnose_state(100.0, 100.0, 0.0, 120.0).unwrap();
        assert!(d.interference_out_of_range);
        assert_eq!(d.cos_phi_m, 1.0);
    }

    #[test]
    fn records_are_pooled() {
        let rec = |alpha: f64, beta: f64, n| CountRecord { alpha, beta, duration_t: 1.0, n_a: 0, n_b: 0, n_coinc: n };
        let records = [
            rec(0.0, 0.0, 150),
            rec(0.0, 0.0, 143),
            rec(90.0, 90.0, 307),
            rec(180.0, 90.0, 22),
            rec(45.0, 45.0, 286),
        ];
        let d = diagnose_records(&records).unwrap();
        assert_eq!(d.a_pairs, 556.0);
        assert!(matches!(diagnose_records(&records[..3]), Err(Error::MissingCells(_))));
    }

    proptest! {
        // The diagnostic equations invert the count model, with the pump
        // angle read in the complementary convention.
        #[test]
        fn inverts_noiseless_model(a in 10.0f64..1e5, c in 0.0f64..500.0,
                                   theta in 5.0f64..85.0, phi_m in 1.0f64..179.0) {
            let params = CountModelParams { a_pairs: a, c_offset: c, theta_l: theta, cos_phi_m: phi_m.to_radians().cos() };
            let n = |x: f64, y: f64| expected_counts(&params, deg(x), deg(y));
            let d = diagnose_state(n(0.0, 0.0), n(90.0, 90.0), n(0.0, 90.0), n(45.0, 45.0)).unwrap();
            prop_assert!((d.c_offset - c).abs() <= 1e-9 * (1.0 + c));
            prop_assert!((d.a_pairs - a).abs() <= 1e-9 * a);
            prop_assert!((d.model_theta_l() - theta).abs() <= 1e-7);
            prop_assert!((d.phi_m - phi_m).abs() <= 1e-5);
        }
    }
}
