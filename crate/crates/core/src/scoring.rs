//! Ensemble scoring: CRPS by quantile decomposition (optionally weighted),
//! energy and variogram scores, the noon-exceedance and weekly functionals,
//! the Diebold-Mariano test and the day-streaming evaluation protocol.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsModel;
use crate::calendar::{HourlyPanel, DAYS, HOURS};
use crate::scenario::{DayRow, ScenarioSource};
use crate::special::norm_cdf;
use crate::stats::pearson;
use crate::{Error, Result};

pub const GRID_STEP: f64 = 0.001;
pub const WEEK: usize = 7;

/// `0.001, 0.002, ..., 0.999`.
pub fn tau_grid() -> Vec<f64> {
    (1..1000).map(|k| k as f64 * GRID_STEP).collect()
}

/// Linear interpolation of order statistics at level `tau`.
pub fn quantile_type7(sorted: &[f64], tau: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * tau;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weight {
    One,
    /// `(2 tau - 1)^2`
    V1,
    /// `1{tau <= 0.05}`
    V2,
    /// `1{tau >= 0.95}`
    V3,
}

impl Weight {
    pub fn at(&self, tau: f64) -> f64 {
        match self {
            Weight::One => 1.0,
            Weight::V1 => (2.0 * tau - 1.0).powi(2),
            Weight::V2 => f64::from(tau <= 0.05 + 1e-12),
            Weight::V3 => f64::from(tau >= 0.95 - 1e-12),
        }
    }
}

/// Ensemble quantiles on the scoring grid, reusable across observations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    quantiles: Vec<f64>,
}

impl QuantileForecast {
    pub fn new(members: &[f64]) -> Self {
        let mut s = members.to_vec();
        s.sort_by(f64::total_cmp);
        Self::from_sorted(&s)
    }

    pub fn from_sorted(sorted: &[f64]) -> Self {
        Self { quantiles: tau_grid().into_iter().map(|t| quantile_type7(sorted, t)).collect() }
    }

    pub fn crps(&self, x: f64) -> f64 {
        self.crps_weighted(x, Weight::One)
    }

    pub fn crps_weighted(&self, x: f64, w: Weight) -> f64 {
        self.quantiles
            .iter()
            .enumerate()
            .map(|(k, &q)| {
                let tau = (k + 1) as f64 * GRID_STEP;
                2.0 * (f64::from(x < q) - tau) * (q - x) * w.at(tau)
            })
            .sum::<f64>()
            * GRID_STEP
    }
}

pub fn crps(members: &[f64], x: f64) -> f64 {
    QuantileForecast::new(members).crps(x)
}

pub fn crps_weighted(members: &[f64], x: f64, w: Weight) -> f64 {
    QuantileForecast::new(members).crps_weighted(x, w)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims(members: &[Vec<f64>], n: usize) -> Result<()> {
    match members.iter().find(|m| m.len() != n) {
        Some(m) => Err(Error::DimensionMismatch { expected: n, got: m.len() }),
        None if members.is_empty() => Err(Error::DimensionMismatch { expected: 1, got: 0 }),
        None => Ok(()),
    }
}

/// `(1/m) sum |x_k - x| - (1/(2 m^2)) sum_{k,j} |x_k - x_j|`.
pub fn energy_score(members: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    check_dims(members, x.len())?;
    Ok(energy_accuracy(members, x) - 0.5 * energy_spread(members))
}

/// First term of the energy score.
pub fn energy_accuracy(members: &[Vec<f64>], x: &[f64]) -> f64 {
    members.iter().map(|m| dist(m, x)).sum::<f64>() / members.len() as f64
}

/// `(1/m^2) sum_{k,j} |x_k - x_j|`.
pub fn energy_spread(members: &[Vec<f64>]) -> f64 {
    let m = members.len();
    let s: f64 = (0..m).into_par_iter().map(|k| (k + 1..m).map(|j| dist(&members[k], &members[j])).sum::<f64>()).sum();
    2.0 * s / (m * m) as f64
}

/// Ensemble means `E|X_i - X_j|` for all ordered pairs.
pub fn ensemble_variogram(members: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = members[0].len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i != j {
                *cell = members.iter().map(|m| (m[i] - m[j]).abs()).sum::<f64>() / members.len() as f64;
            }
        }
    }
    v
}

/// Order-one variogram score `sum_{i != j} w_ij (|x_i - x_j| - E|X_i - X_j|)^2`.
pub fn variogram_score(members: &[Vec<f64>], x: &[f64], weights: &[Vec<f64>]) -> Result<f64> {
    check_dims(members, x.len())?;
    if weights.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: weights.len() });
    }
    Ok(variogram_from(&ensemble_variogram(members), x, weights))
}

fn variogram_from(ev: &[Vec<f64>], x: &[f64], weights: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += weights[i][j] * ((x[i] - x[j]).abs() - ev[i][j]).powi(2);
            }
        }
    }
    s
}

/// Sum over `hours` if every hour exceeds `frac` times the upper bound,
/// else zero.
pub fn kappa1(day: &[f64], upper: &[f64], hours: (usize, usize), frac: f64) -> f64 {
    let (a, b) = hours;
    if (a..=b).all(|h| day[h] > frac * upper[h]) {
        day[a..=b].iter().sum()
    } else {
        0.0
    }
}

/// Total of a block of days.
pub fn kappa2(days: &[DayRow]) -> f64 {
    days.iter().map(|d| d.iter().sum::<f64>()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Diebold-Mariano test on `loss_a - loss_b` with a Bartlett HAC variance
/// at lag `floor(n^(1/3))`; two-sided normal p-value.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64]) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::DimensionMismatch { expected: loss_a.len(), got: loss_b.len() });
    }
    let n = loss_a.len();
    if n < 30 {
        return Err(Error::SeriesTooShort { got: n, needed: 30 });
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let lag = (n as f64).cbrt().floor() as usize;
    let gamma = |k: usize| (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / n as f64;
    let mut var = gamma(0);
    for k in 1..=lag {
        var += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    if !(var > 0.0) || d.iter().all(|&x| x == 0.0) {
        return Ok(DmResult { statistic: 0.0, p_value: 1.0 });
    }
    let statistic = mean / (var / n as f64).sqrt();
    Ok(DmResult { statistic, p_value: (2.0 * (1.0 - norm_cdf(statistic.abs()))).clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    CrpsH,
    CrpsW,
    Es,
    Vs,
    CrpsU,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::CrpsH, Rule::CrpsW, Rule::Es, Rule::Vs, Rule::CrpsU];

    pub fn name(&self) -> &'static str {
        match self {
            Rule::CrpsH => "CRPS-H",
            Rule::CrpsW => "CRPS-W",
            Rule::Es => "ES",
            Rule::Vs => "VS",
            Rule::CrpsU => "CRPS-U",
        }
    }

    fn index(&self) -> usize {
        Rule::ALL.iter().position(|r| r == self).expect("listed")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Hours of the ES and VS vectors.
    pub vector_hours: (usize, usize),
    /// Hours of the exceedance functional.
    pub kappa_hours: (usize, usize),
    pub kappa_frac: f64,
    /// Members used for the energy-score spread term.
    pub spread_members: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { vector_hours: (10, 16), kappa_hours: (10, 15), kappa_frac: 0.8, spread_members: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub models: Vec<String>,
    /// `[model][rule]` mean scores.
    pub raw: Vec<Vec<f64>>,
    /// Raw scores divided by the reference model's.
    pub normalized: Vec<Vec<f64>>,
    pub reference: String,
    /// DM p-value against the best model of each rule (1 for the best).
    pub dm_vs_best_p: Vec<Vec<f64>>,
    /// Not significantly worse than the best at 5%.
    pub best: Vec<Vec<bool>>,
    /// `[model][rule]` loss series in time order.
    pub losses: Vec<Vec<Vec<f64>>>,
}

impl ScoreReport {
    fn model_index(&self, name: &str) -> Result<usize> {
        self.models.iter().position(|m| m == name).ok_or_else(|| Error::HorizonMismatch(format!("unknown model {name}")))
    }

    pub fn normalized_score(&self, model: &str, rule: Rule) -> Result<f64> {
        Ok(self.normalized[self.model_index(model)?][rule.index()])
    }

    pub fn raw_score(&self, model: &str, rule: Rule) -> Result<f64> {
        Ok(self.raw[self.model_index(model)?][rule.index()])
    }

    pub fn dm(&self, a: &str, b: &str, rule: Rule) -> Result<DmResult> {
        let (i, j) = (self.model_index(a)?, self.model_index(b)?);
        dm_test(&self.losses[i][rule.index()], &self.losses[j][rule.index()])
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "rule", "score_normalized", "dm_vs_best_p"])?;
        for (m, name) in self.models.iter().enumerate() {
            for r in Rule::ALL {
                let k = r.index();
                w.write_record([name.as_str(), r.name(), &format!("{:.6}", self.normalized[m][k]), &format!("{:.6}", self.dm_vs_best_p[m][k])])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Normalized scores, best models starred.
    pub fn table(&self) -> String {
        let mut s = format!("{:<14}", "model");
        for r in Rule::ALL {
            let _ = write!(s, "{:>10}", r.name());
        }
        s.push('\n');
        for (m, name) in self.models.iter().enumerate() {
            let _ = write!(s, "{name:<14}");
            for k in 0..Rule::ALL.len() {
                let cell = format!("{:.4}{}", self.normalized[m][k], if self.best[m][k] { "*" } else { " " });
                let _ = write!(s, "{cell:>10}");
            }
            s.push('\n');
        }
        s
    }
}

fn vector(row: &DayRow, hours: (usize, usize)) -> Vec<f64> {
    row[hours.0..=hours.1].to_vec()
}

/// Pearson correlations between the vector hours over all realized days.
pub fn correlation_weights(test: &HourlyPanel, hours: (usize, usize)) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<f64>> = (hours.0..=hours.1)
        .map(|h| (0..test.years()).flat_map(|i| (1..=DAYS).map(move |d| (i, d))).map(|(i, d)| test.ghi(i, d, h)).collect())
        .collect();
    let n = cols.len();
    (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { pearson(&cols[i], &cols[j]) }).collect()).collect()
}

struct Accumulator {
    sums: [f64; 5],
    counts: [usize; 5],
    losses: Vec<Vec<f64>>,
    daily_totals: Vec<f64>,
}

/// Scores every model against each realized year of `test`. Models are
/// consumed one day at a time; only daily totals are retained.
pub fn evaluate(models: &[(&str, &dyn ScenarioSource)], test: &HourlyPanel, bounds: &BoundsModel, cfg: &EvalConfig) -> Result<ScoreReport> {
    if models.is_empty() || test.years() == 0 {
        return Err(Error::HorizonMismatch("nothing to evaluate".into()));
    }
    let years = test.years();
    let weights = correlation_weights(test, cfg.vector_hours);
    let mut accs: Vec<Accumulator> = models
        .iter()
        .map(|(_, s)| Accumulator {
            sums: [0.0; 5],
            counts: [0; 5],
            losses: vec![vec![0.0; years * DAYS]; 3].into_iter().chain([vec![0.0; years * (DAYS - WEEK + 1)], vec![0.0; years * DAYS]]).collect(),
            daily_totals: vec![0.0; s.count() * DAYS],
        })
        .collect();
    // loss slots: 0 CRPS-H, 1 ES, 2 VS, 3 CRPS-W, 4 CRPS-U
    const SLOT: [usize; 5] = [0, 3, 1, 2, 4];

    for d in 1..=DAYS {
        let upper: DayRow = std::array::from_fn(|h| bounds.eval(d, h).1);
        let hours: Vec<usize> = (0..HOURS).filter(|&h| bounds.daylight.is_day(d, h)).collect();
        for ((_, source), acc) in models.iter().zip(accs.iter_mut()) {
            let rows = source.day(d)?;
            let m = source.count();
            if rows.len() != m || m == 0 {
                return Err(Error::HorizonMismatch(format!("{} rows for {} scenarios on day {d}", rows.len(), m)));
            }
            for (k, r) in rows.iter().enumerate() {
                acc.daily_totals[k * DAYS + d - 1] = r.iter().sum();
            }

            // CRPS-H: hourly CRPS averaged over the daylight hours of the day.
            let per_hour: Vec<Vec<f64>> = hours
                .par_iter()
                .map(|&h| {
                    let f = QuantileForecast::new(&rows.iter().map(|r| r[h]).collect::<Vec<_>>());
                    (0..years).map(|i| f.crps(test.ghi(i, d, h))).collect()
                })
                .collect();
            for i in 0..years {
                let s: f64 = per_hour.iter().map(|v| v[i]).sum();
                acc.sums[0] += s;
                acc.counts[0] += hours.len();
                acc.losses[SLOT[0]][i * DAYS + d - 1] = if hours.is_empty() { 0.0 } else { s / hours.len() as f64 };
            }

            // ES and VS on the vector hours.
            let members: Vec<Vec<f64>> = rows.iter().map(|r| vector(r, cfg.vector_hours)).collect();
            let spread = energy_spread(&members[..members.len().min(cfg.spread_members)]);
            let ev = ensemble_variogram(&members);
            // CRPS-U on the exceedance functional.
            let k1 = QuantileForecast::new(&rows.iter().map(|r| kappa1(r, &upper, cfg.kappa_hours, cfg.kappa_frac)).collect::<Vec<_>>());
            for i in 0..years {
                let obs: DayRow = std::array::from_fn(|h| test.ghi(i, d, h));
                let x = vector(&obs, cfg.vector_hours);
                let es = energy_accuracy(&members, &x) - 0.5 * spread;
                let vs = variogram_from(&ev, &x, &weights);
                let u = k1.crps(kappa1(&obs, &upper, cfg.kappa_hours, cfg.kappa_frac));
                for (rule, v) in [(Rule::Es, es), (Rule::Vs, vs), (Rule::CrpsU, u)] {
                    let k = rule.index();
                    acc.sums[k] += v;
                    acc.counts[k] += 1;
                    acc.losses[SLOT[k]][i * DAYS + d - 1] = v;
                }
            }
        }
    }

    // CRPS-W over every 7-day window inside a year.
    let test_daily = test.daily_ghi();
    for ((_, source), acc) in models.iter().zip(accs.iter_mut()) {
        let m = source.count();
        for start in 0..=DAYS - WEEK {
            let ens: Vec<f64> = (0..m).map(|k| acc.daily_totals[k * DAYS + start..k * DAYS + start + WEEK].iter().sum()).collect();
            let f = QuantileForecast::new(&ens);
            for i in 0..years {
                let obs: f64 = test_daily[i * DAYS + start..i * DAYS + start + WEEK].iter().sum();
                let v = f.crps(obs);
                let k = Rule::CrpsW.index();
                acc.sums[k] += v;
                acc.counts[k] += 1;
                acc.losses[SLOT[k]][i * (DAYS - WEEK + 1) + start] = v;
            }
        }
    }

    let names: Vec<String> = models.iter().map(|(n, _)| n.to_string()).collect();
    let raw: Vec<Vec<f64>> = accs.iter().map(|a| (0..5).map(|k| a.sums[k] / a.counts[k].max(1) as f64).collect()).collect();
    let losses: Vec<Vec<Vec<f64>>> = accs.into_iter().map(|a| (0..5).map(|k| a.losses[SLOT[k]].clone()).collect()).collect();
    let ref_idx = names.iter().position(|n| n == "HS").unwrap_or(0);
    let normalized: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().zip(&raw[ref_idx]).map(|(a, b)| a / b).collect()).collect();
    let mut dm_vs_best_p = vec![vec![1.0; 5]; names.len()];
    let mut best = vec![vec![false; 5]; names.len()];
    for k in 0..5 {
        let b = (0..names.len()).min_by(|&x, &y| raw[x][k].total_cmp(&raw[y][k])).expect("non-empty");
        for m in 0..names.len() {
            let p = if m == b { 1.0 } else { dm_test(&losses[m][k], &losses[b][k])?.p_value };
            dm_vs_best_p[m][k] = p;
            best[m][k] = p >= 0.05;
        }
    }
    Ok(ScoreReport { models: names, raw, normalized, reference: models[ref_idx].0.to_string(), dm_vs_best_p, best, losses })
}
