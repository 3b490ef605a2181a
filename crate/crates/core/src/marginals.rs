//! Time-dependent beta marginals for the sun intensity. The mean uses a
//! logit link and the precision a log link, both linear in the expected
//! irradiation `Lambda(d, h)` in Wh/m2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{clip_intensity, BoundsModel, Daylight, CLIP};
use crate::calendar::{Grid, HourlyPanel, CELLS, DAYS, HOURS};
use crate::optim::{bfgs, numerical_gradient, BfgsOptions};
use crate::seasonal::HourlyMeans;
use crate::special::{beta_pdf_with, digamma, inv_reg_inc_beta_with, ln_beta, ln_gamma, reg_inc_beta_with};
use crate::{Error, Result};

pub const MIN_OBSERVATIONS: usize = 100;
pub const MAX_ITERATIONS: usize = 5_000;
/// Fits abort when this fraction of intensities sits at a clip boundary.
pub const BOUNDARY_MASS_LIMIT: f64 = 0.05;

/// Beta distribution in mean/precision form: shapes `mu*phi` and
/// `(1-mu)*phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub mu: f64,
    pub phi: f64,
}

impl BetaParams {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) || !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta mu={mu} phi={phi}")));
        }
        Ok(Self { mu, phi })
    }

    pub fn shapes(&self) -> (f64, f64) {
        (self.mu * self.phi, (1.0 - self.mu) * self.phi)
    }

    pub fn variance(&self) -> f64 {
        self.mu * (1.0 - self.mu) / (1.0 + self.phi)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (a, b) = self.shapes();
        beta_pdf_with(x, a, b, ln_beta(a, b))
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (a, b) = self.shapes();
        (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
    }

    /// Probability integral transform; exact 0 and 1 are rejected.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::DomainError(x));
        }
        let (a, b) = self.shapes();
        Ok(reg_inc_beta_with(x, a, b, ln_beta(a, b)))
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::DomainError(u));
        }
        let (a, b) = self.shapes();
        Ok(inv_reg_inc_beta_with(u, a, b, ln_beta(a, b)))
    }
}

/// Link-scale coefficients of one hour: `logit(mu) = zeta[0] + zeta[1]*L`
/// and `ln(phi) = theta[0] + theta[1]*L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCoefficients {
    pub zeta: [f64; 2],
    pub theta: [f64; 2],
}

impl BetaCoefficients {
    pub fn params(&self, lambda: f64) -> BetaParams {
        let eta = self.zeta[0] + self.zeta[1] * lambda;
        let mu = (1.0 / (1.0 + (-eta).exp())).clamp(1e-12, 1.0 - 1e-12);
        let phi = (self.theta[0] + self.theta[1] * lambda).exp().clamp(1e-8, 1e12);
        BetaParams { mu, phi }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.zeta[0], self.zeta[1], self.theta[0], self.theta[1]]
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self { zeta: [c[0], c[1]], theta: [c[2], c[3]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRegressionFit {
    pub coefficients: BetaCoefficients,
    pub loglik: f64,
    /// Log-likelihood of the constant moment-matched start.
    pub start_loglik: f64,
    pub iterations: usize,
    pub n: usize,
}

/// Total beta log-likelihood of `y` under `coef` with covariate `x`.
pub fn beta_loglik(coef: &BetaCoefficients, y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(&yi, &xi)| coef.params(xi).ln_pdf(yi)).sum()
}

/// Mean negative log-likelihood and gradient in link coefficients for a
/// covariate `x` (already standardized by the caller).
fn neg_loglik_grad(c: &[f64], y: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; 4];
    for (&yi, &xi) in y.iter().zip(x) {
        let eta1 = c[0] + c[1] * xi;
        let eta2 = c[2] + c[3] * xi;
        if eta2 > 700.0 || eta2 < -700.0 {
            return (f64::INFINITY, g);
        }
        let mu = 1.0 / (1.0 + (-eta1).exp());
        let phi = eta2.exp();
        let (a, b) = (mu * phi, (1.0 - mu) * phi);
        if !(a > 0.0 && b > 0.0) {
            return (f64::INFINITY, g);
        }
        let ly = yi.ln();
        let l1y = (1.0 - yi).ln();
        f -= ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y;
        let (da, db) = (digamma(a), digamma(b));
        let dmu = phi * ((ly - l1y) - (da - db));
        let dphi = digamma(phi) - mu * da - (1.0 - mu) * db + mu * ly + (1.0 - mu) * l1y;
        let s1 = dmu * mu * (1.0 - mu);
        let s2 = dphi * phi;
        g[0] -= s1;
        g[1] -= s1 * xi;
        g[2] -= s2;
        g[3] -= s2 * xi;
    }
    if !f.is_finite() {
        return (f64::INFINITY, g);
    }
    (f / n, g.into_iter().map(|v| v / n).collect())
}

fn moment_start(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let phi = (m * (1.0 - m) / v - 1.0).max(0.05);
    (m.clamp(1e-6, 1.0 - 1e-6), phi)
}

fn boundary_fraction(y: &[f64]) -> f64 {
    let at = y.iter().filter(|&&v| v <= CLIP * (1.0 + 1e-9) || v >= 1.0 - CLIP * (1.0 + 1e-9)).count();
    at as f64 / y.len() as f64
}

/// Maximum-likelihood beta regression of intensities `m` on `lambda` for
/// hour `hour` (the hour only labels errors).
pub fn fit_beta_regression(m: &[f64], lambda: &[f64], hour: usize) -> Result<BetaRegressionFit> {
    if m.len() != lambda.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), got: lambda.len() });
    }
    if m.len() < MIN_OBSERVATIONS {
        return Err(Error::TooFewObservations { got: m.len(), needed: MIN_OBSERVATIONS });
    }
    if let Some(&bad) = m.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::DomainError(bad));
    }
    let frac = boundary_fraction(m);
    if frac >= BOUNDARY_MASS_LIMIT {
        return Err(Error::BoundaryMass { hour, frac });
    }

    let n = m.len() as f64;
    let center = lambda.iter().sum::<f64>() / n;
    let spread = (lambda.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if spread > 1e-12 { spread } else { 1.0 };
    let xs: Vec<f64> = lambda.iter().map(|v| (v - center) / scale).collect();

    let (mu0, phi0) = moment_start(m);
    let start = [(mu0 / (1.0 - mu0)).ln(), 0.0, phi0.ln(), 0.0];
    let start_coef = BetaCoefficients::from_array(start);
    let start_loglik = beta_loglik(&start_coef, m, &xs);

    let opts = BfgsOptions { max_iter: MAX_ITERATIONS, grad_tol: 1e-9, f_tol: 1e-15 };
    let mut best = bfgs(|c| neg_loglik_grad(c, m, &xs), &start, opts);
    if !best.converged {
        let f = |c: &[f64]| neg_loglik_grad(c, m, &xs).0;
        let retry = bfgs(|c| (f(c), numerical_gradient(&f, c)), &best.x, opts);
        if retry.value <= best.value {
            best = retry;
        }
    }
    if !best.converged && best.iterations >= MAX_ITERATIONS {
        return Err(Error::NonConvergence(format!("beta regression hour {hour} after {MAX_ITERATIONS} iterations")));
    }
    let c = &best.x;
    let coefficients = BetaCoefficients {
        zeta: [c[0] - c[1] * center / scale, c[1] / scale],
        theta: [c[2] - c[3] * center / scale, c[3] / scale],
    };
    let loglik = -best.value * n;
    if !(loglik >= start_loglik - 1e-9 * start_loglik.abs().max(1.0)) {
        return Err(Error::NonConvergence(format!("beta regression hour {hour} ended below its start")));
    }
    Ok(BetaRegressionFit { coefficients, loglik, start_loglik, iterations: best.iterations, n: m.len() })
}

/// Pairs-bootstrap standard errors of `[zeta0, zeta1, theta0, theta1]`.
pub fn bootstrap_se(m: &[f64], lambda: &[f64], reps: usize, rng: &mut impl Rng) -> Result<[f64; 4]> {
    let n = m.len();
    let mut draws: Vec<[f64; 4]> = Vec::with_capacity(reps);
    let (mut ym, mut yl) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..reps {
        for k in 0..n {
            let j = rng.random_range(0..n);
            ym[k] = m[j];
            yl[k] = lambda[j];
        }
        match fit_beta_regression(&ym, &yl, 0) {
            Ok(fit) => draws.push(fit.coefficients.as_array()),
            Err(Error::BoundaryMass { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if draws.len() < 2 {
        return Err(Error::TooFewObservations { got: draws.len(), needed: 2 });
    }
    let k = draws.len() as f64;
    let mut se = [0.0; 4];
    for (j, s) in se.iter_mut().enumerate() {
        let mean = draws.iter().map(|d| d[j]).sum::<f64>() / k;
        *s = (draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    }
    Ok(se)
}

/// Intensities of a panel relative to an envelope. Night cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPanel {
    years: usize,
    values: Vec<f64>,
    pub clipped_low: usize,
    pub clipped_high: usize,
}

impl IntensityPanel {
    pub fn years(&self) -> usize {
        self.years
    }

    pub fn get(&self, i: usize, d: usize, h: usize) -> f64 {
        self.values[i * CELLS + (d - 1) * HOURS + h]
    }

    pub fn year(&self, i: usize) -> &[f64] {
        &self.values[i * CELLS..(i + 1) * CELLS]
    }

    pub fn clipped(&self) -> usize {
        self.clipped_low + self.clipped_high
    }

    /// Daylight intensities of hour `h` with their day numbers, year-major.
    pub fn hour_series(&self, h: usize) -> (Vec<f64>, Vec<usize>) {
        let mut m = Vec::new();
        let mut days = Vec::new();
        for i in 0..self.years {
            for d in 1..=DAYS {
                let v = self.get(i, d, h);
                if !v.is_nan() {
                    m.push(v);
                    days.push(d);
                }
            }
        }
        (m, days)
    }
}

/// `M = (G - g_lower) / (g_upper - g_lower)` at daylight cells, clipped to
/// `[CLIP, 1 - CLIP]`.
pub fn intensity(panel: &HourlyPanel, bounds: &BoundsModel) -> IntensityPanel {
    let mut values = vec![f64::NAN; panel.years() * CELLS];
    let (mut lo, mut hi) = (0, 0);
    for i in 0..panel.years() {
        for d in 1..=DAYS {
            for h in 0..HOURS {
                if !bounds.daylight.is_day(d, h) {
                    continue;
                }
                let raw = {
                    let (l, u) = bounds.eval(d, h);
                    (panel.ghi(i, d, h) - l) / (u - l)
                };
                let (m, clipped) = clip_intensity(raw);
                if clipped {
                    if m <= 0.5 {
                        lo += 1;
                    } else {
                        hi += 1;
                    }
                }
                values[i * CELLS + (d - 1) * HOURS + h] = m;
            }
        }
    }
    IntensityPanel { years: panel.years(), values, clipped_low: lo, clipped_high: hi }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourMarginal {
    pub hour: usize,
    pub coefficients: BetaCoefficients,
    pub n_obs: usize,
    pub loglik: f64,
    /// Source hour when this hour had too few observations of its own.
    pub borrowed_from: Option<usize>,
}

/// Per-hour beta regressions plus the `Lambda` model they depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub mean_irradiation: HourlyMeans,
    pub daylight: Daylight,
    pub hours: Vec<Option<HourMarginal>>,
}

impl MarginalModel {
    /// Fits every hour with daylight observations. Hours with fewer than
    /// `MIN_OBSERVATIONS` take the coefficients of the nearest fitted hour.
    pub fn fit(intensities: &IntensityPanel, means: &HourlyMeans, daylight: &Daylight) -> Result<Self> {
        let mut hours: Vec<Option<HourMarginal>> = vec![None; HOURS];
        let mut counts = vec![0usize; HOURS];
        for (h, slot) in hours.iter_mut().enumerate() {
            let (m, days) = intensities.hour_series(h);
            counts[h] = m.len();
            if m.len() < MIN_OBSERVATIONS {
                continue;
            }
            let lambda: Vec<f64> = days.iter().map(|&d| means.eval(d, h)).collect();
            let fit = fit_beta_regression(&m, &lambda, h)?;
            *slot = Some(HourMarginal { hour: h, coefficients: fit.coefficients, n_obs: m.len(), loglik: fit.loglik, borrowed_from: None });
        }
        let fitted: Vec<usize> = (0..HOURS).filter(|&h| hours[h].is_some()).collect();
        if fitted.is_empty() {
            return Err(Error::TooFewObservations { got: counts.into_iter().max().unwrap_or(0), needed: MIN_OBSERVATIONS });
        }
        for h in 0..HOURS {
            if hours[h].is_none() && counts[h] > 0 {
                let src = *fitted.iter().min_by_key(|&&s| (s as i64 - h as i64).unsigned_abs()).unwrap();
                let base = hours[src].clone().unwrap();
                hours[h] = Some(HourMarginal { hour: h, n_obs: counts[h], borrowed_from: Some(src), ..base });
            }
        }
        Ok(Self { mean_irradiation: means.clone(), daylight: daylight.clone(), hours })
    }

    pub fn lambda(&self, d: usize, h: usize) -> f64 {
        self.mean_irradiation.eval(d, h)
    }

    /// Beta parameters at a daylight cell.
    pub fn params(&self, d: usize, h: usize) -> Result<BetaParams> {
        match (&self.hours[h], self.daylight.is_day(d, h)) {
            (Some(hm), true) => Ok(hm.coefficients.params(self.lambda(d, h))),
            _ => Err(Error::InvalidParameter(format!("no marginal at night cell d={d} h={h}"))),
        }
    }

    pub fn pit(&self, m: f64, d: usize, h: usize) -> Result<f64> {
        self.params(d, h)?.cdf(m)
    }

    pub fn pit_inverse(&self, u: f64, d: usize, h: usize) -> Result<f64> {
        self.params(d, h)?.quantile(u)
    }

    /// Per-cell shapes `(a, b, ln B(a, b))`; NaN at night.
    pub fn shape_table(&self) -> Vec<(f64, f64, f64)> {
        let mut out = vec![(f64::NAN, f64::NAN, f64::NAN); CELLS];
        for d in 1..=DAYS {
            for h in 0..HOURS {
                if let Ok(p) = self.params(d, h) {
                    let (a, b) = p.shapes();
                    out[(d - 1) * HOURS + h] = (a, b, ln_beta(a, b));
                }
            }
        }
        out
    }

    /// Mean intensity `mu(d, h)`; zero at night.
    pub fn mean_grid(&self) -> Grid {
        Grid::from_fn(|d, h| self.params(d, h).map(|p| p.mu).unwrap_or(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::Site;
    use crate::special::gauss_legendre;
    use crate::stats::{ks_test, variance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Beta, Distribution};

    fn seasonal_lambda(n: usize) -> Vec<f64> {
        (0..n).map(|i| 300.0 + 250.0 * (2.0 * std::f64::consts::PI * ((i % 365) as f64 - 171.0) / 365.0).cos()).collect()
    }

    /// Draws with an independent sampler, not the crate's inverse.
    fn simulate(coef: &BetaCoefficients, lambda: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        lambda
            .iter()
            .map(|&l| {
                let (a, b) = coef.params(l).shapes();
                let v: f64 = Beta::new(a, b).unwrap().sample(rng);
                clip_intensity(v).0
            })
            .collect()
    }

    const TRUTH: BetaCoefficients = BetaCoefficients { zeta: [0.1, 0.0006], theta: [0.0, 0.0004] };

    #[test]
    fn uniform_case_pit_is_identity() {
        let p = BetaParams::new(0.5, 2.0).unwrap();
        for x in [1e-6, 0.1, 0.37, 0.5, 0.9, 0.999] {
            assert!((p.cdf(x).unwrap() - x).abs() < 1e-13);
        }
        assert!(matches!(p.cdf(0.0), Err(Error::DomainError(_))));
        assert!(matches!(p.cdf(1.0), Err(Error::DomainError(_))));
        assert!(matches!(p.quantile(1.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn pit_matches_quadrature() {
        let p = BetaParams::new(0.3, 10.0).unwrap();
        let (x, w) = gauss_legendre(64);
        // density is smooth on [0, 0.3] since both shapes exceed 1
        let integral: f64 = x.iter().zip(&w).map(|(&t, &wt)| 0.15 * wt * p.pdf(0.15 * (t + 1.0))).sum();
        assert!((p.cdf(0.3).unwrap() - integral).abs() < 1e-7);
    }

    #[test]
    fn density_integrates_to_one_and_variance_identity() {
        let p = BetaParams::new(0.3, 10.0).unwrap();
        let (x, w) = gauss_legendre(64);
        let total: f64 = x.iter().zip(&w).map(|(&t, &wt)| 0.5 * wt * p.pdf(0.5 * (t + 1.0))).sum();
        assert!((total - 1.0).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = p.shapes();
        let dist = Beta::new(a, b).unwrap();
        let s: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        assert!((variance(&s) / p.variance() - 1.0).abs() < 0.05);
    }

    #[test]
    fn pit_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        let (mut saturated, mut coarse) = (0, 0);
        for _ in 0..10_000 {
            let mu = rng.random_range(0.02..0.98);
            let phi = (rng.random_range(-1.0..4.0f64)).exp();
            let m = rng.random_range(1e-4..1.0 - 1e-4);
            let p = BetaParams::new(mu, phi).unwrap();
            let u = p.cdf(m).unwrap();
            if !(u > 0.0 && u < 1.0) {
                saturated += 1;
                continue;
            }
            let back = p.quantile(u).unwrap();
            // the spacing of doubles near u maps to this much spacing in m
            let resolution = 4.0 * f64::EPSILON * u / p.pdf(m);
            if resolution > 1e-9 {
                coarse += 1;
                assert!((p.cdf(back).unwrap() - u).abs() <= 8.0 * f64::EPSILON * u);
                continue;
            }
            worst = worst.max((back - m).abs());
        }
        assert!(worst < 1e-8, "{worst}");
        assert!(saturated + coarse < 1_000, "{saturated} {coarse}");
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lambda = seasonal_lambda(500);
        let y = simulate(&TRUTH, &lambda, &mut rng);
        let xs: Vec<f64> = lambda.iter().map(|l| (l - 300.0) / 175.0).collect();
        let c = [0.2, 0.1, -0.1, 0.05];
        let (_, g) = neg_loglik_grad(&c, &y, &xs);
        let f = |c: &[f64]| neg_loglik_grad(c, &y, &xs).0;
        let num = numerical_gradient(&f, &c);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn fit_beats_moment_start_and_recovers_symmetric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lambda = seasonal_lambda(2555);
        let truth = BetaCoefficients { zeta: [0.0, 0.0], theta: [3.0f64.ln(), 0.0] };
        let y = simulate(&truth, &lambda, &mut rng);
        let fit = fit_beta_regression(&y, &lambda, 12).unwrap();
        assert!(fit.loglik >= fit.start_loglik);
        let mean_mu = lambda.iter().map(|&l| fit.coefficients.params(l).mu).sum::<f64>() / lambda.len() as f64;
        assert!((mean_mu - 0.5).abs() < 0.02);
        assert!((y.iter().sum::<f64>() / y.len() as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn simulate_and_recover_within_bootstrap_errors() {
        let lambda = seasonal_lambda(2555);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y0 = simulate(&TRUTH, &lambda, &mut rng);
        let se = bootstrap_se(&y0, &lambda, 60, &mut rng).unwrap();
        let truth = TRUTH.as_array();
        let mut inside = [0usize; 4];
        for rep in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + rep);
            let y = simulate(&TRUTH, &lambda, &mut r);
            let c = fit_beta_regression(&y, &lambda, 12).unwrap().coefficients.as_array();
            for j in 0..4 {
                if (c[j] - truth[j]).abs() <= 3.0 * se[j] {
                    inside[j] += 1;
                }
            }
        }
        assert!(inside.iter().all(|&k| k >= 17), "{inside:?} se={se:?}");
    }

    #[test]
    fn null_covariate_effect_is_not_significant() {
        let lambda = seasonal_lambda(2555);
        let truth = BetaCoefficients { zeta: [0.3, 0.0], theta: [0.5, 0.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = simulate(&truth, &lambda, &mut rng);
        let fit = fit_beta_regression(&y, &lambda, 12).unwrap();
        let se = bootstrap_se(&y, &lambda, 40, &mut rng).unwrap();
        assert!(fit.coefficients.zeta[1].abs() < 3.0 * se[1]);
        assert!(fit.coefficients.theta[1].abs() < 3.0 * se[3]);
    }

    #[test]
    fn boundary_mass_and_small_samples_are_rejected() {
        let lambda = seasonal_lambda(200);
        let mut y: Vec<f64> = (0..200).map(|i| 0.2 + 0.6 * (i as f64 / 200.0)).collect();
        for v in y.iter_mut().take(10) {
            *v = 1.0 - CLIP;
        }
        assert!(matches!(fit_beta_regression(&y, &lambda, 7), Err(Error::BoundaryMass { hour: 7, .. })));
        assert!(matches!(fit_beta_regression(&y[..50], &lambda[..50], 7), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn precision_never_increases_variance() {
        for mu in [0.1, 0.5, 0.8] {
            let mut last = f64::INFINITY;
            for k in 0..50 {
                let v = BetaParams::new(mu, 0.1 * 1.3f64.powi(k)).unwrap().variance();
                assert!(v <= last);
                last = v;
            }
        }
    }

    fn toy_bounds() -> (HourlyPanel, BoundsModel) {
        let site = Site::new("t", 0.0, 0.0);
        let daylight = Daylight::from_fn(|_, h| (6..=17).contains(&h));
        let up = Grid::from_fn(|d, h| if daylight.is_day(d, h) { 800.0 + d as f64 } else { 0.0 });
        let lo = Grid::from_fn(|d, h| if daylight.is_interior(d, h) { 50.0 } else { 0.0 });
        let toa = up.map(|v| v * 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Vec::new();
        let mut t = Vec::new();
        for _ in 0..2 {
            for d in 1..=DAYS {
                for h in 0..HOURS {
                    let (l, u) = (lo[(d, h)], up[(d, h)]);
                    g.push(if daylight.is_day(d, h) { l + rng.random::<f64>() * (u - l) } else { 0.0 });
                    t.push(toa[(d, h)]);
                }
            }
        }
        let panel = HourlyPanel::new(site, 2000, g, t).unwrap();
        (panel, BoundsModel::from_grids(lo, up, toa, daylight))
    }

    #[test]
    fn intensity_matches_direct_formula() {
        let (panel, b) = toy_bounds();
        let m = intensity(&panel, &b);
        for i in 0..2 {
            for d in 1..=DAYS {
                for h in 0..HOURS {
                    let v = m.get(i, d, h);
                    if b.daylight.is_day(d, h) {
                        let want = (panel.ghi(i, d, h) - b.g_lower[(d, h)]) / (b.g_upper[(d, h)] - b.g_lower[(d, h)]);
                        assert!((v - want.clamp(CLIP, 1.0 - CLIP)).abs() < 1e-15);
                    } else {
                        assert!(v.is_nan());
                    }
                }
            }
        }
        let (mid, clipped) = b.intensity(b.g_lower[(100, 12)] + 0.5 * (b.g_upper[(100, 12)] - b.g_lower[(100, 12)]), 100, 12);
        assert!((mid - 0.5).abs() < 1e-15 && !clipped);
        let (top, clipped) = b.intensity(b.g_upper[(100, 12)], 100, 12);
        assert!(clipped && top == 1.0 - CLIP);
    }

    #[test]
    fn fitted_model_pit_is_uniform_on_its_own_simulations() {
        let (panel, b) = toy_bounds();
        let means = HourlyMeans::fit(&panel, 2, 2).unwrap();
        let m = intensity(&panel, &b);
        let model = MarginalModel::fit(&m, &means, &b.daylight).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for h in [7, 12, 16] {
            let u: Vec<f64> = (0..5000)
                .map(|k| {
                    let d = k % DAYS + 1;
                    let p = model.params(d, h).unwrap();
                    let (a, bb) = p.shapes();
                    let x: f64 = Beta::new(a, bb).unwrap().sample(&mut rng);
                    p.cdf(x.clamp(1e-300, 1.0 - 1e-16)).unwrap()
                })
                .collect();
            let (_, pval) = ks_test(&u, |x| x);
            assert!(pval > 0.01, "h={h} p={pval}");
        }
        assert!(model.params(1, 3).is_err());
        assert!(model.hours[12].as_ref().unwrap().borrowed_from.is_none());
    }

    #[test]
    fn sparse_hours_borrow_nearest_fit() {
        let (panel, b) = toy_bounds();
        let means = HourlyMeans::fit(&panel, 2, 2).unwrap();
        let mut m = intensity(&panel, &b);
        // 2 * 39 observations remain for hour 6
        for i in 0..2 {
            for d in 40..=DAYS {
                m.values[i * CELLS + (d - 1) * HOURS + 6] = f64::NAN;
            }
        }
        let model = MarginalModel::fit(&m, &means, &b.daylight).unwrap();
        let h6 = model.hours[6].as_ref().unwrap();
        assert_eq!(h6.borrowed_from, Some(7));
        assert_eq!(h6.coefficients, model.hours[7].as_ref().unwrap().coefficients);
    }
}
