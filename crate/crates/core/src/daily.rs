//! Daily totals model `link(I_d) = Lambda_d + R_d` with ARMA(1,1) residuals
//! and skew-normal innovations, under three bound regimes: log link
//! without bound (M1), scaled logit below the TOA sum (M2) and scaled logit
//! inside the estimated daily envelope (M3).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundsModel;
use crate::calendar::{HourlyPanel, DAYS};
use crate::optim::nelder_mead;
use crate::seasonal::{fit_ols, fourier_eval, FourierModel, ANNUAL};
use crate::special::norm_cdf;
use crate::stats::{acf, ljung_box, mean, skewness, variance, LjungBox};
use crate::{Error, Result};

/// Shape parameters beyond this are capped during estimation.
pub const MAX_SKEW_SHAPE: f64 = 20.0;
/// Largest admissible AR or MA coefficient.
pub const MAX_ARMA_COEF: f64 = 0.995;
/// 99% quantile of chi-squared with 2 degrees of freedom.
const REDUNDANCY_CHI2: f64 = 9.210_340_371_976_18;
const BURN_IN: usize = DAYS;
const LJUNG_BOX_LAGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    M1,
    M2,
    M3,
}

/// Per-day open interval `(lo, hi)` of admissible totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DailyDomain {
    pub fn new(regime: Regime, toa_daily: &[f64], bounds: Option<&BoundsModel>) -> Result<Self> {
        match regime {
            // f64::MAX rather than infinity keeps the domain JSON-representable.
            Regime::M1 => Ok(Self { lo: vec![0.0; DAYS], hi: vec![f64::MAX; DAYS] }),
            Regime::M2 => Ok(Self { lo: vec![0.0; DAYS], hi: toa_daily.to_vec() }),
            Regime::M3 => {
                let b = bounds.ok_or_else(|| Error::IncompleteBundle("regime M3 needs estimated bounds".into()))?;
                let (lo, hi) = b.daily_sums();
                Ok(Self { lo, hi })
            }
        }
    }
}

pub fn link(regime: Regime, x: f64, lo: f64, hi: f64) -> f64 {
    match regime {
        Regime::M1 => x.ln(),
        _ => {
            let s = (x - lo) / (hi - lo);
            (s / (1.0 - s)).ln()
        }
    }
}

pub fn inverse_link(regime: Regime, y: f64, lo: f64, hi: f64) -> f64 {
    match regime {
        Regime::M1 => y.exp(),
        _ => lo + (hi - lo) / (1.0 + (-y).exp()),
    }
}

/// Azzalini skew-normal with location, scale and shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormal {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl SkewNormal {
    pub fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.location + self.scale * self.delta() * (2.0 / std::f64::consts::PI).sqrt()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        std::f64::consts::LN_2 - self.scale.ln() - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + norm_cdf(self.shape * z).max(1e-300).ln()
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        let d = self.delta();
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        self.location + self.scale * (d * a.abs() + (1.0 - d * d).sqrt() * b)
    }
}

/// Method-of-moments start, then maximum likelihood with `|shape| <= 20`.
pub fn fit_skew_normal(x: &[f64]) -> Result<SkewNormal> {
    if x.len() < 10 {
        return Err(Error::TooFewObservations { got: x.len(), needed: 10 });
    }
    let (m, sd) = (mean(x), variance(x).sqrt());
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let g = skewness(x).clamp(-0.99, 0.99);
    // Invert g = (4 - pi)/2 * (c d)^3 / (1 - c^2 d^2)^(3/2) for d.
    let r = (2.0 * g.abs() / (4.0 - std::f64::consts::PI)).powf(1.0 / 3.0);
    let delta = (g.signum() * r / (c * (1.0 + r * r).sqrt())).clamp(-0.99, 0.99);
    let scale = sd / (1.0 - c * c * delta * delta).sqrt();
    let start = SkewNormal { location: m - scale * delta * c, scale, shape: delta / (1.0 - delta * delta).sqrt() };
    let nll = |p: &[f64]| {
        if p[2].abs() > MAX_SKEW_SHAPE {
            return f64::INFINITY;
        }
        let sn = SkewNormal { location: p[0], scale: p[1].exp(), shape: p[2] };
        -x.iter().map(|&v| sn.ln_pdf(v)).sum::<f64>()
    };
    let s0 = [start.location, start.scale.ln(), start.shape.clamp(-MAX_SKEW_SHAPE + 1e-9, MAX_SKEW_SHAPE - 1e-9)];
    let mut best = nelder_mead(nll, &s0, 0.1, 4000, 1e-12);
    for _ in 0..3 {
        let again = nelder_mead(nll, &best.x, 0.05, 4000, 1e-12);
        if again.value >= best.value - 1e-9 {
            break;
        }
        best = again;
    }
    if !best.value.is_finite() {
        return Err(Error::NonConvergence("skew-normal likelihood".into()));
    }
    Ok(SkewNormal { location: best.x[0], scale: best.x[1].exp(), shape: best.x[2] })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arma11 {
    pub phi: f64,
    pub theta: f64,
}

impl Arma11 {
    /// Innovations `e_t = r_t - phi r_{t-1} - theta e_{t-1}` with zero
    /// pre-sample values.
    pub fn innovations(&self, r: &[f64]) -> Vec<f64> {
        let mut e = Vec::with_capacity(r.len());
        let (mut rp, mut ep) = (0.0, 0.0);
        for &x in r {
            let cur = x - self.phi * rp - self.theta * ep;
            e.push(cur);
            rp = x;
            ep = cur;
        }
        e
    }

    /// Theoretical lag-1 autocorrelation.
    pub fn acf1(&self) -> f64 {
        let (p, t) = (self.phi, self.theta);
        (1.0 + p * t) * (p + t) / (1.0 + 2.0 * p * t + t * t)
    }
}

/// Conditional least squares on `atanh` scale from several starts.
pub fn fit_arma11(r: &[f64]) -> Result<Arma11> {
    if r.len() < 30 {
        return Err(Error::SeriesTooShort { got: r.len(), needed: 30 });
    }
    let sse = |p: &[f64]| {
        let a = Arma11 { phi: p[0].tanh(), theta: p[1].tanh() };
        a.innovations(r).iter().map(|e| e * e).sum::<f64>()
    };
    let r1 = acf(r, 1)[0].clamp(-0.9, 0.9);
    let starts = [[0.0, 0.0], [r1.atanh(), 0.0], [0.0, r1.atanh()], [0.8f64.atanh(), -0.3f64.atanh()], [0.5f64.atanh(), 0.3f64.atanh()]];
    let best = starts
        .iter()
        .map(|s| nelder_mead(sse, s, 0.2, 4000, 1e-14))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("non-empty starts");
    let mut fit = Arma11 { phi: best.x[0].tanh(), theta: best.x[1].tanh() };
    // Along phi = -theta the filter is the identity and the sum of squares
    // equals the white-noise value, so an insignificant improvement only
    // picks an arbitrary ridge point.
    let white = sse(&[0.0, 0.0]);
    let lr = r.len() as f64 * (white / best.value).ln();
    if lr < REDUNDANCY_CHI2 {
        fit = Arma11 { phi: 0.0, theta: 0.0 };
    }
    if fit.phi.abs() > MAX_ARMA_COEF || fit.theta.abs() > MAX_ARMA_COEF {
        return Err(Error::NonStationaryFit { phi: fit.phi, theta: fit.theta });
    }
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyModel {
    pub regime: Regime,
    pub domain: DailyDomain,
    pub toa_daily: Vec<f64>,
    pub seasonal: FourierModel,
    pub arma: Arma11,
    pub innovation: SkewNormal,
    pub ljung_box: LjungBox,
}

impl DailyModel {
    pub fn seasonal_at(&self, d: usize) -> f64 {
        fourier_eval(&self.seasonal, d as f64, None).expect("no exogenous term")
    }

    /// Daily totals from residuals on the link scale, day `1 + t mod 365`.
    pub fn path_from_residuals(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .enumerate()
            .map(|(t, &x)| {
                let d = t % DAYS + 1;
                inverse_link(self.regime, self.seasonal_at(d) + x, self.domain.lo[d - 1], self.domain.hi[d - 1])
            })
            .collect()
    }

    /// ARMA residual path of length `n` after a burn-in.
    pub fn simulate_residuals(&self, n: usize, rng: &mut impl RngCore) -> Vec<f64> {
        let shift = self.innovation.mean();
        let (mut rp, mut ep) = (0.0, 0.0);
        let mut out = Vec::with_capacity(n);
        for t in 0..BURN_IN + n {
            let e = self.innovation.sample(rng) - shift;
            let r = self.arma.phi * rp + e + self.arma.theta * ep;
            if t >= BURN_IN {
                out.push(r);
            }
            rp = r;
            ep = e;
        }
        out
    }
}

/// Daily totals of a panel and the per-day TOA sums.
pub fn daily_series(panel: &HourlyPanel) -> (Vec<f64>, Vec<f64>) {
    let toa = panel.mean_toa();
    (panel.daily_ghi(), (1..=DAYS).map(|d| toa.day(d).iter().sum()).collect())
}

pub fn fit_daily(daily: &[f64], regime: Regime, toa_daily: &[f64], bounds: Option<&BoundsModel>) -> Result<DailyModel> {
    if daily.is_empty() || daily.len() % DAYS != 0 {
        return Err(Error::PartialYear(format!("{} daily values", daily.len())));
    }
    let domain = DailyDomain::new(regime, toa_daily, bounds)?;
    let t: Vec<f64> = (0..daily.len()).map(|i| (i % DAYS + 1) as f64).collect();
    let y = daily
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = (domain.lo[i % DAYS], domain.hi[i % DAYS]);
            if x > lo && x < hi {
                Ok(link(regime, x, lo, hi))
            } else {
                Err(Error::LinkDomain { day: i % DAYS + 1, value: x, lo, hi })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let seasonal = fit_ols(&t, &y, None, 2, 2, ANNUAL)?;
    let r: Vec<f64> = y.iter().zip(&t).map(|(v, &d)| v - fourier_eval(&seasonal, d, None).expect("no exogenous term")).collect();
    let arma = fit_arma11(&r)?;
    let e = arma.innovations(&r);
    let innovation = fit_skew_normal(&e)?;
    let lb = ljung_box(&e, LJUNG_BOX_LAGS, 2);
    Ok(DailyModel { regime, domain, toa_daily: toa_daily.to_vec(), seasonal, arma, innovation, ljung_box: lb })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPaths {
    pub years: usize,
    /// Year-major daily totals.
    pub values: Vec<f64>,
    /// Simulated totals above the daily TOA sum.
    pub toa_exceedances: usize,
    /// Simulated totals outside the regime's own closed domain.
    pub domain_violations: usize,
}

impl DailyPaths {
    pub fn year(&self, i: usize) -> &[f64] {
        &self.values[i * DAYS..(i + 1) * DAYS]
    }

    /// Totals outside `[lo_d, hi_d]`.
    pub fn count_outside(&self, lo: &[f64], hi: &[f64]) -> usize {
        self.values.iter().enumerate().filter(|(t, &x)| x < lo[t % DAYS] || x > hi[t % DAYS]).count()
    }
}

/// Independent simulated years; year `i` uses ChaCha8 stream `i`.
pub fn simulate_daily(model: &DailyModel, years: usize, seed: u64) -> DailyPaths {
    let base = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..years)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            model.path_from_residuals(&model.simulate_residuals(DAYS, &mut rng))
        })
        .collect();
    let toa_exceedances = values.iter().enumerate().filter(|(t, &x)| x > model.toa_daily[t % DAYS]).count();
    let paths = DailyPaths { years, values, toa_exceedances, domain_violations: 0 };
    let domain_violations = paths.count_outside(&model.domain.lo, &model.domain.hi);
    DailyPaths { domain_violations, ..paths }
}
