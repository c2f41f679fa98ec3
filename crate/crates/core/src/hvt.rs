//! Local realistic hidden-variable theories.
//!
//! A strategy fixes a distribution `ρ(λ)` of a shared hidden polarization
//! `λ ∈ [0°, 180°)` and two deterministic outcome rules `A(λ, α)`,
//! `B(λ, β) ∈ {+1, −1}` (`V ↦ +1`, `H ↦ −1`). Correlations are integrals over
//! `λ`:
//!
//! ```text
//! E(α, β) = ∫ A(λ, α) B(λ, β) ρ(λ) dλ
//! ```
//!
//! evaluated with a composite midpoint rule. Every integrand here is
//! piecewise constant, so the midpoint rule is exact whenever no
//! discontinuity falls strictly inside a cell.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{deg, Angle, ChshAngles};
use crate::error::{Error, Result};
use crate::par;
use crate::qm::chsh_combination;
use crate::rng::{lab_rng, stream_rng};

/// Span of the hidden variable in degrees.
pub const LAMBDA_SPAN: f64 = 180.0;

/// Default number of midpoint cells. A cell width of 0.001° puts every
/// integer, half- and eighth-degree discontinuity on a cell edge.
pub const DEFAULT_QUADRATURE_POINTS: usize = 180_000;

/// Smallest accepted quadrature size.
pub const MIN_QUADRATURE_POINTS: usize = 1000;

/// Bins in the piecewise-constant densities produced by [`random_hvt`].
pub const RANDOM_DENSITY_BINS: usize = 36;

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    /// `ρ = 1/180°`.
    Uniform,
    /// Piecewise constant over equal bins spanning `[0°, 180°)`; each value
    /// is a density per degree.
    Binned { values: Vec<f64> },
}

impl Density {
    pub fn eval(&self, lambda: Angle) -> f64 {
        match self {
            Density::Uniform => 1.0 / LAMBDA_SPAN,
            Density::Binned { values } => {
                let x = lambda.degrees().rem_euclid(LAMBDA_SPAN);
                let k = values.len();
                let idx = ((x / LAMBDA_SPAN) * k as f64) as usize;
                values[idx.min(k - 1)]
            }
        }
    }

    /// Exact integral over `[0°, 180°)`.
    pub fn integral(&self) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Binned { values } => {
                let width = LAMBDA_SPAN / values.len() as f64;
                values.iter().sum::<f64>() * width
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Density::Binned { values } = self {
            if values.is_empty() {
                return Err(Error::Normalization { integral: 0.0 });
            }
            let width = LAMBDA_SPAN / values.len() as f64;
            if let Some(i) = values.iter().position(|v| !(*v >= 0.0)) {
                return Err(Error::NegativeDensity { lambda_deg: (i as f64 + 0.5) * width });
            }
        }
        let integral = self.integral();
        if !((integral - 1.0).abs() <= NORMALIZATION_TOL) {
            return Err(Error::Normalization { integral });
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> Angle {
        match self {
            Density::Uniform => deg(rng.random_range(0.0..LAMBDA_SPAN)),
            Density::Binned { values } => {
                let width = LAMBDA_SPAN / values.len() as f64;
                let total: f64 = values.iter().sum();
                let mut u = rng.random_range(0.0..total);
                let mut idx = values.len() - 1;
                for (i, v) in values.iter().enumerate() {
                    if u < *v {
                        idx = i;
                        break;
                    }
                    u -= v;
                }
                deg((idx as f64 + rng.random::<f64>()) * width)
            }
        }
    }
}

/// A deterministic `±1` outcome as a step function of the folded distance
/// between the (offset) hidden polarization and the analyzer axis.
///
/// The outcome is `first` for distances up to the first breakpoint and flips
/// sign at each further breakpoint. A distance equal to a breakpoint stays
/// on the near side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRule {
    pub offset_deg: f64,
    pub breakpoints: Vec<f64>,
    pub first: i8,
}

impl OutcomeRule {
    /// `V` iff `λ` is closer to the analyzer axis than to its perpendicular.
    pub fn nearest_axis() -> Self {
        OutcomeRule { offset_deg: 0.0, breakpoints: vec![45.0], first: 1 }
    }

    pub fn outcome(&self, lambda: Angle, setting: Angle) -> i8 {
        let d = deg(lambda.degrees() + self.offset_deg).axis_distance(setting);
        let crossed = self.breakpoints.iter().filter(|&&b| d > b).count();
        if crossed % 2 == 0 {
            self.first
        } else {
            -self.first
        }
    }

    fn validate(&self) -> Result<()> {
        if self.first != 1 && self.first != -1 {
            return Err(Error::domain(format!("outcome sign must be +1 or -1, got {}", self.first)));
        }
        if !self.offset_deg.is_finite() || self.breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("outcome rule contains a non-finite value"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvtStrategy {
    pub density: Density,
    pub outcome_a: OutcomeRule,
    pub outcome_b: OutcomeRule,
    /// Generator seed, when the strategy came from [`random_hvt`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl HvtStrategy {
    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        self.outcome_a.validate()?;
        self.outcome_b.validate()
    }

    pub fn outcome_a(&self, lambda: Angle, alpha: Angle) -> i8 {
        self.outcome_a.outcome(lambda, alpha)
    }

    pub fn outcome_b(&self, lambda: Angle, beta: Angle) -> i8 {
        self.outcome_b.outcome(lambda, beta)
    }

    /// Draw one hidden variable from `ρ`.
    pub fn sample_lambda(&self, rng: &mut impl Rng) -> Angle {
        self.density.sample(rng)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("strategy serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Both photons carry the same polarization `λ`, uniform over `[0°, 180°)`,
/// and each registers `V` when `λ` lies within 45° of its analyzer axis.
pub fn simple_hvt() -> HvtStrategy {
    HvtStrategy {
        density: Density::Uniform,
        outcome_a: OutcomeRule::nearest_axis(),
        outcome_b: OutcomeRule::nearest_axis(),
        seed: None,
    }
}

/// Closed-form coincidence probability of [`simple_hvt`]: `½ − d/180°`,
/// `d` the folded angle between the analyzers.
pub fn hvt_prob_vv(alpha: Angle, beta: Angle) -> f64 {
    0.5 - alpha.axis_distance(beta) / LAMBDA_SPAN
}

/// Closed-form correlation of [`simple_hvt`]: `1 − 4d/180°`.
pub fn hvt_e_closed_form(alpha: Angle, beta: Angle) -> f64 {
    1.0 - 4.0 * alpha.axis_distance(beta) / LAMBDA_SPAN
}

/// Closed-form CHSH value of [`simple_hvt`].
pub fn hvt_s_closed_form(angles: &ChshAngles) -> f64 {
    chsh_combination(hvt_e_closed_form, angles)
}

fn check_points(points: usize) -> Result<()> {
    if points < MIN_QUADRATURE_POINTS {
        return Err(Error::domain(format!(
            "quadrature needs at least {MIN_QUADRATURE_POINTS} points, got {points}"
        )));
    }
    Ok(())
}

/// Midpoint rule for `∫ f(λ) ρ(λ) dλ` over `[0°, 180°)`; no validation.
fn integrate(strategy: &HvtStrategy, points: usize, mut f: impl FnMut(Angle) -> f64) -> f64 {
    let h = LAMBDA_SPAN / points as f64;
    let mut acc = 0.0;
    for i in 0..points {
        let lambda = Angle::from_degrees((i as f64 + 0.5) * h);
        acc += f(lambda) * strategy.density.eval(lambda);
    }
    acc * h
}

/// `E(α, β) = ∫ A(λ, α) B(λ, β) ρ(λ) dλ` by midpoint quadrature.
pub fn hvt_e(strategy: &HvtStrategy, alpha: Angle, beta: Angle, points: usize) -> Result<f64> {
    check_points(points)?;
    strategy.validate()?;
    Ok(integrate(strategy, points, |lambda| {
        f64::from(strategy.outcome_a(lambda, alpha) * strategy.outcome_b(lambda, beta))
    }))
}

/// `P_VV(α, β) = ∫ ¼(1 + A)(1 + B) ρ dλ` by midpoint quadrature.
pub fn hvt_prob_vv_quadrature(
    strategy: &HvtStrategy,
    alpha: Angle,
    beta: Angle,
    points: usize,
) -> Result<f64> {
    check_points(points)?;
    strategy.validate()?;
    Ok(integrate(strategy, points, |lambda| {
        let a = f64::from(strategy.outcome_a(lambda, alpha));
        let b = f64::from(strategy.outcome_b(lambda, beta));
        0.25 * (1.0 + a) * (1.0 + b)
    }))
}

/// CHSH value from four quadrature correlations at the default resolution.
pub fn hvt_s(strategy: &HvtStrategy, angles: &ChshAngles) -> Result<f64> {
    hvt_s_with(strategy, angles, DEFAULT_QUADRATURE_POINTS)
}

pub fn hvt_s_with(strategy: &HvtStrategy, angles: &ChshAngles, points: usize) -> Result<f64> {
    let mut first_err = None;
    let s = chsh_combination(
        |alpha, beta| match hvt_e(strategy, alpha, beta, points) {
            Ok(e) => e,
            Err(err) => {
                first_err.get_or_insert(err);
                f64::NAN
            }
        },
        angles,
    );
    match first_err {
        Some(err) => Err(err),
        None => Ok(s),
    }
}

/// `s(λ) = A(λ,a)[B(λ,b) − B(λ,b')] + A(λ,a')[B(λ,b) + B(λ,b')]`, which is
/// always `±2`: one bracket vanishes and the other is `±2`.
pub fn single_pair_s(strategy: &HvtStrategy, lambda: Angle, angles: &ChshAngles) -> i32 {
    let a = i32::from(strategy.outcome_a(lambda, angles.a));
    let ap = i32::from(strategy.outcome_a(lambda, angles.a_prime));
    let b = i32::from(strategy.outcome_b(lambda, angles.b));
    let bp = i32::from(strategy.outcome_b(lambda, angles.b_prime));
    a * (b - bp) + ap * (b + bp)
}

/// Points in `[0°, 180°)` where `rule` evaluated at `setting` can change
/// value: where the folded distance meets a breakpoint.
fn rule_edges(rule: &OutcomeRule, setting: Angle, out: &mut Vec<f64>) {
    for &b in &rule.breakpoints {
        for x in [setting.degrees() - rule.offset_deg + b, setting.degrees() - rule.offset_deg - b] {
            out.push(x.rem_euclid(LAMBDA_SPAN));
        }
    }
}

/// Split `[0°, 180°)` into cells on which the density and every outcome at
/// the given settings are constant. Returns `(midpoint, probability mass)`.
fn constant_cells(strategy: &HvtStrategy, alphas: &[Angle], betas: &[Angle]) -> Vec<(Angle, f64)> {
    let mut edges = vec![0.0, LAMBDA_SPAN];
    if let Density::Binned { values } = &strategy.density {
        let width = LAMBDA_SPAN / values.len() as f64;
        edges.extend((1..values.len()).map(|k| k as f64 * width));
    }
    for &alpha in alphas {
        rule_edges(&strategy.outcome_a, alpha, &mut edges);
    }
    for &beta in betas {
        rule_edges(&strategy.outcome_b, beta, &mut edges);
    }
    edges.sort_by(f64::total_cmp);
    edges
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = Angle::from_degrees(0.5 * (w[0] + w[1]));
            (mid, strategy.density.eval(mid) * (w[1] - w[0]))
        })
        .collect()
}

/// `E(α, β)` integrated exactly over the cells where the integrand is
/// constant.
pub fn hvt_e_exact(strategy: &HvtStrategy, alpha: Angle, beta: Angle) -> Result<f64> {
    strategy.validate()?;
    Ok(constant_cells(strategy, &[alpha], &[beta])
        .into_iter()
        .map(|(lambda, mass)| mass * f64::from(strategy.outcome_a(lambda, alpha) * strategy.outcome_b(lambda, beta)))
        .sum())
}

/// CHSH value integrated exactly; see [`hvt_e_exact`].
pub fn hvt_s_exact(strategy: &HvtStrategy, angles: &ChshAngles) -> Result<f64> {
    strategy.validate()?;
    let cells = constant_cells(strategy, &[angles.a, angles.a_prime], &[angles.b, angles.b_prime]);
    Ok(cells
        .into_iter()
        .map(|(lambda, mass)| mass * f64::from(single_pair_s(strategy, lambda, angles)))
        .sum())
}

fn random_rule(rng: &mut impl Rng) -> OutcomeRule {
    let n = rng.random_range(1..=3);
    let mut breakpoints: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..90.0)).collect();
    breakpoints.sort_by(f64::total_cmp);
    OutcomeRule {
        offset_deg: rng.random_range(0.0..LAMBDA_SPAN),
        breakpoints,
        first: if rng.random_bool(0.5) { 1 } else { -1 },
    }
}

/// A reproducible random strategy: a normalized piecewise-constant density
/// over [`RANDOM_DENSITY_BINS`] bins and random step-function outcome rules.
pub fn random_hvt(seed: u64) -> HvtStrategy {
    let mut rng = lab_rng(seed);
    // cubing spreads the weights so some strategies are strongly peaked
    let weights: Vec<f64> = (0..RANDOM_DENSITY_BINS)
        .map(|_| rng.random_range(0.01f64..1.0).powi(3))
        .collect();
    let width = LAMBDA_SPAN / RANDOM_DENSITY_BINS as f64;
    let total: f64 = weights.iter().sum::<f64>() * width;
    let values = weights.into_iter().map(|w| w / total).collect();
    HvtStrategy {
        density: Density::Binned { values },
        outcome_a: random_rule(&mut rng),
        outcome_b: random_rule(&mut rng),
        seed: Some(seed),
    }
}

/// Analyzer angles drawn on a 0.5° grid.
pub fn random_angles(rng: &mut impl Rng) -> ChshAngles {
    let mut draw = || rng.random_range(0..360) as f64 * 0.5;
    ChshAngles::new(draw(), draw(), draw(), draw())
}

/// Outcome of [`chsh_bound_sweep`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub evaluations: usize,
    pub max_abs_s: f64,
    pub worst_seed: u64,
    pub worst_angles: ChshAngles,
}

/// Evaluate `|S|` exactly for `strategies` random strategies (seeds
/// `base_seed..base_seed + strategies`) at `quadruples` random angle sets
/// each, and report the largest value found. Strategies are processed in
/// parallel; the result does not depend on the worker count.
pub fn chsh_bound_sweep(
    base_seed: u64,
    strategies: usize,
    quadruples: usize,
) -> Result<BoundSweep> {
    let per_strategy = par::try_map_indexed(strategies, |i| {
        let seed = base_seed.wrapping_add(i as u64);
        let strategy = random_hvt(seed);
        let mut rng = stream_rng(seed, 1);
        let mut worst = (f64::MIN, ChshAngles::canonical());
        for _ in 0..quadruples {
            let angles = random_angles(&mut rng);
            let s = hvt_s_exact(&strategy, &angles)?.abs();
            if s > worst.0 {
                worst = (s, angles);
            }
        }
        Ok::<_, Error>((seed, worst))
    })?;
    let (worst_seed, (max_abs_s, worst_angles)) = per_strategy
        .into_iter()
        .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
        .ok_or_else(|| Error::domain("bound sweep needs at least one strategy"))?;
    Ok(BoundSweep {
        evaluations: strategies * quadruples,
        max_abs_s,
        worst_seed,
        worst_angles,
    })
}
