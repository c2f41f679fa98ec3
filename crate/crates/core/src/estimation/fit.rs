//! Weighted least-squares fit of the expected-count model to an angle scan.
//!
//! Minimizes `Σ (N_i − model(α_i, β_i + shift))² / max(N_i, 1)` over
//! `(A, C, θ_l, cos φ_m[, shift])` with a bound-projected
//! Levenberg–Marquardt iteration, started from several pump angles.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::angle::deg;
use crate::apparatus::CountRecord;
use crate::error::{Error, Result};
use crate::qm::{expected_counts, CountModelParams};

const MAX_ITERATIONS: usize = 500;
const GRADIENT_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-13;
/// Bound on the fitted analyzer shift, degrees.
pub const MAX_BETA_SHIFT: f64 = 20.0;
const STARTING_THETAS: [f64; 3] = [20.0, 45.0, 70.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitErrors {
    pub a_pairs: f64,
    pub c_offset: f64,
    pub theta_l: f64,
    pub cos_phi_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_shift: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitResult {
    pub a_pairs: f64,
    pub c_offset: f64,
    /// Degrees.
    pub theta_l: f64,
    pub cos_phi_m: f64,
    /// Degrees added to every β before evaluating the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_shift: Option<f64>,
    /// One-sigma errors from the curvature at the optimum; absent when the
    /// curvature matrix is singular.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<FitErrors>,
    pub chi_square: f64,
    pub dof: i64,
    pub iterations: usize,
    /// Norm of the projected gradient of `χ²/2` at the returned point.
    pub gradient_norm: f64,
}

impl FitResult {
    /// `acos(cos φ_m)` in degrees.
    pub fn phi_m(&self) -> f64 {
        self.cos_phi_m.clamp(-1.0, 1.0).acos().to_degrees()
    }

    pub fn params(&self) -> CountModelParams {
        CountModelParams {
            a_pairs: self.a_pairs,
            c_offset: self.c_offset,
            theta_l: self.theta_l,
            cos_phi_m: self.cos_phi_m,
        }
    }

    /// Model prediction for a record's settings.
    pub fn predict(&self, alpha: f64, beta: f64) -> f64 {
        let shift = self.beta_shift.unwrap_or(0.0);
        expected_counts(&self.params(), deg(alpha), deg(beta + shift))
    }
}

/// One point of an angle scan. `count` is real-valued and may hold exact
/// model means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub alpha: f64,
    pub beta: f64,
    pub count: f64,
}

impl From<&CountRecord> for ScanPoint {
    fn from(r: &CountRecord) -> Self {
        ScanPoint { alpha: r.alpha, beta: r.beta, count: r.n_coinc as f64 }
    }
}

struct Problem<'a> {
    records: &'a [ScanPoint],
    sigmas: Vec<f64>,
    with_shift: bool,
}

/// Parameter vector layout: `[A, C, θ_l (deg), cos φ_m, shift (deg)]`.
impl Problem<'_> {
    fn dim(&self) -> usize {
        if self.with_shift { 5 } else { 4 }
    }

    fn lower(&self) -> [f64; 5] {
        [0.0, 0.0, 0.0, -1.0, -MAX_BETA_SHIFT]
    }

    fn upper(&self) -> [f64; 5] {
        [f64::INFINITY, f64::INFINITY, 90.0, 1.0, MAX_BETA_SHIFT]
    }

    fn project(&self, p: &mut DVector<f64>) {
        let (lo, hi) = (self.lower(), self.upper());
        for k in 0..self.dim() {
            p[k] = p[k].clamp(lo[k], hi[k]);
        }
    }

    /// Weighted residuals `(N − f)/σ` and their Jacobian.
    fn evaluate(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.records.len();
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, self.dim());
        let (a_pairs, c, theta, cphi) = (p[0], p[1], p[2].to_radians(), p[3]);
        let shift = if self.with_shift { p[4] } else { 0.0 };
        let (s2t, c2t) = (2.0 * theta).sin_cos();
        let (st, ct) = theta.sin_cos();
        let per_degree = std::f64::consts::PI / 180.0;
        for (i, rec) in self.records.iter().enumerate() {
            let (sa, ca) = rec.alpha.to_radians().sin_cos();
            let b = (rec.beta + shift).to_radians();
            let (sb, cb) = b.sin_cos();
            let (s2b, c2b) = (2.0 * b).sin_cos();
            let cross = sa * ca * sb * cb;
            let prob = sa * sa * sb * sb * ct * ct + ca * ca * cb * cb * st * st + cross * s2t * cphi;
            let model = a_pairs * prob + c;
            let w = 1.0 / self.sigmas[i];
            r[i] = (rec.count - model) * w;

            let d_theta = (-sa * sa * sb * sb * s2t + ca * ca * cb * cb * s2t + 2.0 * cross * c2t * cphi) * per_degree;
            jac[(i, 0)] = -prob * w;
            jac[(i, 1)] = -w;
            jac[(i, 2)] = -a_pairs * d_theta * w;
            jac[(i, 3)] = -a_pairs * cross * s2t * w;
            if self.with_shift {
                let d_beta = (sa * sa * ct * ct * s2b - ca * ca * st * st * s2b + sa * ca * c2b * s2t * cphi) * per_degree;
                jac[(i, 4)] = -a_pairs * d_beta * w;
            }
        }
        (r, jac)
    }

    fn cost(&self, p: &DVector<f64>) -> f64 {
        self.evaluate(p).0.norm_squared()
    }

    /// Gradient of `χ²/2` with components that push into an active bound
    /// removed.
    fn projected_gradient(&self, p: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        let (lo, hi) = (self.lower(), self.upper());
        let mut g = grad.clone();
        for k in 0..self.dim() {
            if (p[k] <= lo[k] && g[k] > 0.0) || (p[k] >= hi[k] && g[k] < 0.0) {
                g[k] = 0.0;
            }
        }
        g
    }

    /// `A` and `C` by weighted linear least squares with the other
    /// parameters held fixed.
    fn linear_start(&self, theta: f64, cphi: f64) -> DVector<f64> {
        let mut p = DVector::zeros(self.dim());
        p[2] = theta;
        p[3] = cphi;
        let params = CountModelParams { a_pairs: 1.0, c_offset: 0.0, theta_l: theta, cos_phi_m: cphi };
        let (mut spp, mut sp1, mut s11, mut spn, mut s1n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (rec, sigma) in self.records.iter().zip(&self.sigmas) {
            let w = 1.0 / (sigma * sigma);
            let prob = expected_counts(&params, deg(rec.alpha), deg(rec.beta));
            let n = rec.count;
            spp += w * prob * prob;
            sp1 += w * prob;
            s11 += w;
            spn += w * prob * n;
            s1n += w * n;
        }
        let det = spp * s11 - sp1 * sp1;
        if det.abs() > 1e-12 {
            p[0] = (spn * s11 - sp1 * s1n) / det;
            p[1] = (spp * s1n - sp1 * spn) / det;
        } else {
            p[0] = 2.0 * s1n / s11;
        }
        self.project(&mut p);
        p
    }

    fn solve(&self, start: DVector<f64>) -> Attempt {
        let k = self.dim();
        let mut p = start;
        let (mut r, mut jac) = self.evaluate(&p);
        let mut cost = r.norm_squared();
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let grad = jac.transpose() * &r;
            if self.projected_gradient(&p, &grad).norm() < GRADIENT_TOL {
                converged = true;
                break;
            }
            let jtj = jac.transpose() * &jac;
            // parameters held at a bound by the gradient stay fixed this step
            let (lo, hi) = (self.lower(), self.upper());
            let active: Vec<bool> = (0..k)
                .map(|d| (p[d] <= lo[d] && grad[d] > 0.0) || (p[d] >= hi[d] && grad[d] < 0.0))
                .collect();
            let mut rhs = -&grad;
            let mut stepped = false;
            while lambda < 1e16 {
                let mut damped = jtj.clone();
                for d in 0..k {
                    damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                for d in (0..k).filter(|&d| active[d]) {
                    damped.row_mut(d).fill(0.0);
                    damped.column_mut(d).fill(0.0);
                    damped[(d, d)] = 1.0;
                    rhs[d] = 0.0;
                }
                let Some(delta) = damped.lu().solve(&rhs) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial = &p + &delta;
                self.project(&mut trial);
                let trial_cost = self.cost(&trial);
                if trial_cost <= cost {
                    let moved = (&trial - &p).norm();
                    let improvement = cost - trial_cost;
                    p = trial;
                    (r, jac) = self.evaluate(&p);
                    cost = trial_cost;
                    lambda = (lambda / 3.0).max(1e-12);
                    stepped = true;
                    if moved <= STEP_TOL * (1.0 + p.norm()) && improvement <= 1e-15 * (1.0 + cost) {
                        converged = true;
                    }
                    break;
                }
                lambda *= 2.0;
            }
            if !stepped {
                // no descent direction left at machine precision
                converged = true;
                break;
            }
            if converged {
                break;
            }
        }
        let grad = jac.transpose() * &r;
        let gradient_norm = self.projected_gradient(&p, &grad).norm();
        Attempt { p, cost, jac, iterations, converged, gradient_norm }
    }
}

struct Attempt {
    p: DVector<f64>,
    cost: f64,
    jac: DMatrix<f64>,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
}

fn check_span(scan: &[ScanPoint]) -> Result<()> {
    if scan.len() < 6 {
        return Err(Error::InsufficientSpan(format!("need at least 6 records, got {}", scan.len())));
    }
    // settings are compared modulo 180° at 1e-6 degree resolution
    let key = |x: f64| (x.rem_euclid(180.0) * 1e6).round() as i64 % 180_000_000;
    let alphas: BTreeSet<i64> = scan.iter().map(|r| key(r.alpha)).collect();
    let betas: BTreeSet<i64> = scan.iter().map(|r| key(r.beta)).collect();
    if alphas.len() < 2 {
        return Err(Error::InsufficientSpan(format!(
            "need at least 2 distinct alpha settings, got {}",
            alphas.len()
        )));
    }
    if betas.len() < 4 {
        return Err(Error::InsufficientSpan(format!(
            "need at least 4 distinct beta settings, got {}",
            betas.len()
        )));
    }
    Ok(())
}

/// Fit the expected-count model to `scan`, optionally with a common offset
/// on every β.
pub fn fit_nmodel(scan: &[CountRecord], fit_beta_shift: bool) -> Result<FitResult> {
    let points: Vec<ScanPoint> = scan.iter().map(ScanPoint::from).collect();
    fit_points(&points, fit_beta_shift)
}

/// [`fit_nmodel`] on real-valued counts.
pub fn fit_points(scan: &[ScanPoint], fit_beta_shift: bool) -> Result<FitResult> {
    check_span(scan)?;
    for r in scan {
        if !r.alpha.is_finite() || !r.beta.is_finite() || !(r.count >= 0.0) {
            return Err(Error::domain("scan angles must be finite and counts nonnegative"));
        }
    }
    let problem = Problem {
        records: scan,
        sigmas: scan.iter().map(|r| r.count.max(1.0).sqrt()).collect(),
        with_shift: fit_beta_shift,
    };
    let best = STARTING_THETAS
        .iter()
        .map(|&theta| problem.solve(problem.linear_start(theta, 0.5)))
        .min_by(|x, y| x.cost.total_cmp(&y.cost))
        .expect("at least one start");

    let std_errors = (best.jac.transpose() * &best.jac).try_inverse().and_then(|cov| {
        let se = |k: usize| cov[(k, k)].max(0.0).sqrt();
        let errors = FitErrors {
            a_pairs: se(0),
            c_offset: se(1),
            theta_l: se(2),
            cos_phi_m: se(3),
            beta_shift: fit_beta_shift.then(|| se(4)),
        };
        let finite = [errors.a_pairs, errors.c_offset, errors.theta_l, errors.cos_phi_m]
            .iter()
            .chain(errors.beta_shift.iter())
            .all(|v| v.is_finite());
        finite.then_some(errors)
    });
    let p = &best.p;
    let result = FitResult {
        a_pairs: p[0],
        c_offset: p[1],
        theta_l: p[2],
        cos_phi_m: p[3],
        beta_shift: fit_beta_shift.then(|| p[4]),
        std_errors,
        chi_square: best.cost,
        dof: scan.len() as i64 - problem.dim() as i64,
        iterations: best.iterations,
        gradient_norm: best.gradient_norm,
    };
    if !best.converged {
        return Err(Error::NonConvergence { iterations: best.iterations, best: Box::new(result) });
    }
    Ok(result)
}

/// Exact model values on the grid `alphas × betas`, with the model
/// evaluated at `β + beta_shift`.
pub fn model_points(params: &CountModelParams, beta_shift: f64, alphas: &[f64], betas: &[f64]) -> Vec<ScanPoint> {
    alphas
        .iter()
        .flat_map(|&alpha| betas.iter().map(move |&beta| (alpha, beta)))
        .map(|(alpha, beta)| ScanPoint {
            alpha,
            beta,
            count: expected_counts(params, deg(alpha), deg(beta + beta_shift)),
        })
        .collect()
}
