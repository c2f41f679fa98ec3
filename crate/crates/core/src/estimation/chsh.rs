use serde::{Deserialize, Serialize};

use crate::angle::{Angle, ChshAngles};
use crate::apparatus::CountRecord;
use crate::error::{Error, Result};

/// Tolerance for matching a record's angles to a grid setting.
const ANGLE_MATCH_TOL: f64 = 1e-6;

/// Correlation from four counts:
/// `(N(α,β) + N(α⊥,β⊥) − N(α,β⊥) − N(α⊥,β)) / (sum of all four)`.
pub fn compute_e(n_ab: f64, n_apbp: f64, n_abp: f64, n_apb: f64) -> Result<f64> {
    let total = n_ab + n_apbp + n_abp + n_apb;
    if !(total > 0.0) {
        return Err(Error::UndefinedE(format!(
            "counts ({n_ab}, {n_apbp}, {n_abp}, {n_apb})"
        )));
    }
    Ok((n_ab + n_apbp - n_abp - n_apb) / total)
}

/// Sixteen coincidence counts on the grid `{a, a', a⊥, a'⊥} × {b, b', b⊥, b'⊥}`.
///
/// `counts[i][j]` holds the count at `angles.alpha_settings()[i]`,
/// `angles.beta_settings()[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshRun {
    pub angles: ChshAngles,
    pub counts: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

/// The four correlations in `S = E(a,b) − E(a,b') + E(a',b) + E(a',b')`:
/// `(signal index, idler index, sign in S)`.
const TERMS: [(usize, usize, f64); 4] = [(0, 0, 1.0), (0, 1, -1.0), (1, 0, 1.0), (1, 1, 1.0)];

fn check_distinct(settings: &[Angle; 4], side: &str) -> Result<()> {
    for i in 0..4 {
        for j in i + 1..4 {
            if settings[i].same_axis(settings[j], ANGLE_MATCH_TOL) {
                return Err(Error::domain(format!(
                    "{side} settings {} and {} coincide; the sixteen cells are not distinct",
                    settings[i], settings[j]
                )));
            }
        }
    }
    Ok(())
}

fn find(settings: &[Angle; 4], value: f64) -> Option<usize> {
    let angle = Angle::from_degrees(value);
    settings.iter().position(|s| s.same_axis(angle, ANGLE_MATCH_TOL))
}

impl ChshRun {
    /// Arrange records on the grid. Every cell must appear exactly once and
    /// all durations must agree.
    pub fn from_records(records: &[CountRecord], angles: ChshAngles) -> Result<Self> {
        let alphas = angles.alpha_settings();
        let betas = angles.beta_settings();
        check_distinct(&alphas, "signal")?;
        check_distinct(&betas, "idler")?;

        let mut cells: [[Option<f64>; 4]; 4] = [[None; 4]; 4];
        let mut duration: Option<f64> = None;
        for r in records {
            let (Some(i), Some(j)) = (find(&alphas, r.alpha), find(&betas, r.beta)) else {
                return Err(Error::UnexpectedCell(r.alpha, r.beta));
            };
            if cells[i][j].is_some() {
                return Err(Error::DuplicateCell(r.alpha, r.beta));
            }
            match duration {
                None => duration = Some(r.duration_t),
                Some(t) if (t - r.duration_t).abs() > 1e-9 * t.abs().max(1.0) => {
                    return Err(Error::UnequalDurations(t, r.duration_t));
                }
                Some(_) => {}
            }
            cells[i][j] = Some(r.n_coinc as f64);
        }

        let mut missing = Vec::new();
        let mut counts = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                match cells[i][j] {
                    Some(n) => counts[i][j] = n,
                    None => missing.push((alphas[i].signed_degrees(), betas[j].signed_degrees())),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingCells(missing));
        }
        Ok(ChshRun { angles, counts, duration_s: duration })
    }

    /// Fill the grid from a function of `(α, β)`, e.g. a probability table.
    pub fn from_fn(angles: ChshAngles, mut count: impl FnMut(Angle, Angle) -> f64) -> Self {
        let alphas = angles.alpha_settings();
        let betas = angles.beta_settings();
        let mut counts = [[0.0; 4]; 4];
        for (i, &alpha) in alphas.iter().enumerate() {
            for (j, &beta) in betas.iter().enumerate() {
                counts[i][j] = count(alpha, beta);
            }
        }
        ChshRun { angles, counts, duration_s: None }
    }

    /// Add `amount` to every cell.
    pub fn with_background(&self, amount: f64) -> Self {
        let mut run = self.clone();
        run.counts.iter_mut().flatten().for_each(|n| *n += amount);
        run
    }

    fn cell_label(&self, i: usize, j: usize) -> String {
        format!(
            "({}, {})",
            self.angles.alpha_settings()[i].signed_degrees(),
            self.angles.beta_settings()[j].signed_degrees()
        )
    }

    /// `E` for signal slot `x` (0 = a, 1 = a') and idler slot `y`
    /// (0 = b, 1 = b').
    pub fn e(&self, x: usize, y: usize) -> Result<f64> {
        let c = &self.counts;
        compute_e(c[x][y], c[x + 2][y + 2], c[x][y + 2], c[x + 2][y]).map_err(|_| {
            Error::UndefinedE(format!("E{} with all four cells zero", self.cell_label(x, y)))
        })
    }

    /// `∂S/∂N` for every cell. Each count enters one correlation, where
    /// `∂E/∂N = (±1 − E)/N_tot`.
    pub fn s_partials(&self) -> Result<[[f64; 4]; 4]> {
        let mut partials = [[0.0; 4]; 4];
        for (x, y, sign) in TERMS {
            let e = self.e(x, y)?;
            let c = &self.counts;
            let total = c[x][y] + c[x + 2][y + 2] + c[x][y + 2] + c[x + 2][y];
            partials[x][y] = sign * (1.0 - e) / total;
            partials[x + 2][y + 2] = sign * (1.0 - e) / total;
            partials[x][y + 2] = sign * (-1.0 - e) / total;
            partials[x + 2][y] = sign * (-1.0 - e) / total;
        }
        Ok(partials)
    }
}

/// How per-cell count uncertainty is modelled in `σ_S`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountErrorModel {
    /// `σ_N = √N`; a zero cell is an error.
    #[default]
    Poisson,
    /// `σ_N = √(N + 1)`, usable with empty cells.
    AddOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshResult {
    pub e_ab: f64,
    pub e_abp: f64,
    pub e_apb: f64,
    pub e_apbp: f64,
    pub s_value: f64,
    pub sigma_s: f64,
}

impl ChshResult {
    pub fn violates_bound(&self) -> bool {
        self.s_value.abs() > 2.0
    }

    /// Distance above the local bound in units of `σ_S`.
    pub fn significance(&self) -> f64 {
        (self.s_value.abs() - 2.0) / self.sigma_s
    }
}

/// `σ_S = √(Σ N_i (∂S/∂N_i)²)`.
pub fn sigma_s(run: &ChshRun) -> Result<f64> {
    sigma_s_with(run, CountErrorModel::Poisson)
}

pub fn sigma_s_with(run: &ChshRun, model: CountErrorModel) -> Result<f64> {
    let partials = run.s_partials()?;
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let n = run.counts[i][j];
            let weight = match model {
                CountErrorModel::Poisson if n <= 0.0 => {
                    return Err(Error::ZeroCount(run.cell_label(i, j)));
                }
                CountErrorModel::Poisson => n,
                CountErrorModel::AddOne => n + 1.0,
            };
            var += weight * partials[i][j] * partials[i][j];
        }
    }
    Ok(var.sqrt())
}

/// The four correlations, `S` and `σ_S` of a run.
pub fn compute_s(run: &ChshRun) -> Result<ChshResult> {
    compute_s_with(run, CountErrorModel::Poisson)
}

pub fn compute_s_with(run: &ChshRun, model: CountErrorModel) -> Result<ChshResult> {
    let e_ab = run.e(0, 0)?;
    let e_abp = run.e(0, 1)?;
    let e_apb = run.e(1, 0)?;
    let e_apbp = run.e(1, 1)?;
    Ok(ChshResult {
        e_ab,
        e_abp,
        e_apb,
        e_apbp,
        s_value: e_ab - e_abp + e_apb + e_apbp,
        sigma_s: sigma_s_with(run, model)?,
    })
}
