//! Fitting the Markov tree: one copula per consecutive daylight hour pair
//! and one linking the noon hours of consecutive days.

use serde::{Deserialize, Serialize};

use crate::bounds::Daylight;
use crate::calendar::{CELLS, DAYS, HOURS};
use crate::copula::{bb1_from_tails, fit_mpl, tail_estimates, Copula, Family, DEFAULT_TAIL_Q};
use crate::marginals::{IntensityPanel, MarginalModel};
use crate::stats::pseudo_observations;
use crate::Result;

/// Pairs below this count are modelled as independent.
pub const MIN_PAIRS: usize = 100;
/// Tail coefficients are clamped into this range before BB1 inversion.
pub const BB1_TAIL_RANGE: (f64, f64) = (0.01, 0.95);

/// PIT values `F_{d,h}(M)` of a panel, year-major; NaN at night.
#[derive(Debug, Clone, PartialEq)]
pub struct PitPanel {
    years: usize,
    values: Vec<f64>,
}

impl PitPanel {
    pub fn new(intensities: &IntensityPanel, marginals: &MarginalModel) -> Result<Self> {
        let years = intensities.years();
        let mut values = vec![f64::NAN; years * CELLS];
        for i in 0..years {
            for d in 1..=DAYS {
                for h in 0..HOURS {
                    let m = intensities.get(i, d, h);
                    if !m.is_nan() {
                        values[i * CELLS + (d - 1) * HOURS + h] = marginals.pit(m, d, h)?;
                    }
                }
            }
        }
        Ok(Self { years, values })
    }

    pub fn years(&self) -> usize {
        self.years
    }

    pub fn get(&self, i: usize, d: usize, h: usize) -> f64 {
        self.values[i * CELLS + (d - 1) * HOURS + h]
    }

    /// `(u_h, u_{h+1})` over days where both hours are daylight.
    pub fn intraday_pairs(&self, daylight: &Daylight, h: usize) -> (Vec<f64>, Vec<f64>) {
        let mut out = (Vec::new(), Vec::new());
        for i in 0..self.years {
            for d in 1..=DAYS {
                if daylight.is_day(d, h) && daylight.is_day(d, h + 1) {
                    let (a, b) = (self.get(i, d, h), self.get(i, d, h + 1));
                    if !a.is_nan() && !b.is_nan() {
                        out.0.push(a);
                        out.1.push(b);
                    }
                }
            }
        }
        out
    }

    /// `(u_{d,h}, u_{d+1,h})` over consecutive days, continuing across
    /// year boundaries.
    pub fn day_pairs(&self, h: usize) -> (Vec<f64>, Vec<f64>) {
        let series: Vec<f64> = (0..self.years).flat_map(|i| (1..=DAYS).map(move |d| (i, d))).map(|(i, d)| self.get(i, d, h)).collect();
        series.windows(2).filter(|w| !w[0].is_nan() && !w[1].is_nan()).map(|w| (w[0], w[1])).unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFit {
    pub copula: Copula,
    pub n: usize,
    pub loglik: f64,
    pub boundary: bool,
    /// Averaged-corner empirical tail estimates `(lower, upper)`; absent
    /// when the pair sample is too small to fit.
    pub tail: Option<(f64, f64)>,
}

/// Fits one copula to a pair sample after rank transformation.
pub fn fit_pair(u: &[f64], v: &[f64], family: Family) -> Result<PairFit> {
    let n = u.len();
    if n < MIN_PAIRS {
        return Ok(PairFit { copula: Copula::Independence, n, loglik: 0.0, boundary: false, tail: None });
    }
    let (pu, pv) = (pseudo_observations(u), pseudo_observations(v));
    let tail = tail_estimates(&pu, &pv, DEFAULT_TAIL_Q);
    let (copula, boundary) = match family {
        Family::Independence => (Copula::Independence, false),
        Family::Gaussian | Family::Gumbel => {
            let f = fit_mpl(&pu, &pv, family)?;
            (f.copula, f.boundary)
        }
        Family::Bb1 => {
            let (lo, hi) = BB1_TAIL_RANGE;
            let c = bb1_from_tails(tail.0.clamp(lo, hi), tail.1.clamp(lo, hi))?;
            let clamped = !(lo..=hi).contains(&tail.0) || !(lo..=hi).contains(&tail.1);
            (c, clamped)
        }
    };
    let loglik = pu.iter().zip(&pv).map(|(&a, &b)| copula.ln_pdf(a, b)).sum();
    Ok(PairFit { copula, n, loglik, boundary, tail: Some(tail) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceFit {
    pub family: Family,
    /// Entry `h` links hours `h` and `h + 1`.
    pub intraday: Vec<PairFit>,
    pub noon: PairFit,
    pub noon_hour: usize,
}

impl DependenceFit {
    pub fn intraday_copulas(&self) -> Vec<Copula> {
        self.intraday.iter().map(|p| p.copula).collect()
    }
}

pub fn fit_dependence(pits: &PitPanel, daylight: &Daylight, family: Family, noon_hour: usize) -> Result<DependenceFit> {
    let intraday = (0..HOURS - 1)
        .map(|h| {
            let (u, v) = pits.intraday_pairs(daylight, h);
            fit_pair(&u, &v, family)
        })
        .collect::<Result<Vec<_>>>()?;
    let (u, v) = pits.day_pairs(noon_hour);
    let noon = fit_pair(&u, &v, family)?;
    Ok(DependenceFit { family, intraday, noon, noon_hour })
}
