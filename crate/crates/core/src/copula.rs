//! Bivariate copulas used in the Markov-tree dependence model: CDF,
//! density, conditional h-functions and their inverses, sampling,
//! pseudo-likelihood and tail-inversion fitting, quantile dependence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::optim::scan_then_brent;
use crate::special::{bvn_cdf, gauss_legendre, norm_cdf, norm_ppf};
use crate::stats::kendall_tau;
use crate::{Error, Result};

/// Conditional-inverse iteration cap.
pub const MAX_ROOT_ITER: usize = 200;
const LO: f64 = 1e-12;
const HI: f64 = 1.0 - 1e-12;
pub const GUMBEL_MAX: f64 = 30.0;
/// Distance to the edge of the parameter domain reported as a boundary fit.
pub const BOUNDARY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Copula {
    Independence,
    Gaussian { rho: f64 },
    Gumbel { theta: f64 },
    Bb1 { theta: f64, delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    Gumbel,
    Bb1,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::Gumbel => "gumbel",
            Family::Bb1 => "bb1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Family::Independence, Family::Gaussian, Family::Gumbel, Family::Bb1].into_iter().find(|f| f.name().eq_ignore_ascii_case(s))
    }
}

fn in_unit(u: f64, v: f64) -> Result<()> {
    for x in [u, v] {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::DomainError(x));
        }
    }
    Ok(())
}

impl Copula {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Copula::Independence => true,
            Copula::Gaussian { rho } => rho > -1.0 && rho < 1.0,
            Copula::Gumbel { theta } => theta >= 1.0 && theta.is_finite(),
            Copula::Bb1 { theta, delta } => theta > 0.0 && delta >= 1.0 && theta.is_finite() && delta.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{self:?}")))
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Copula::Independence => Family::Independence,
            Copula::Gaussian { .. } => Family::Gaussian,
            Copula::Gumbel { .. } => Family::Gumbel,
            Copula::Bb1 { .. } => Family::Bb1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Copula::Independence => "independence",
            Copula::Gaussian { .. } => "gaussian",
            Copula::Gumbel { .. } => "gumbel",
            Copula::Bb1 { .. } => "bb1",
        }
    }

    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        in_unit(u, v)?;
        let c = match *self {
            Copula::Independence => u * v,
            Copula::Gaussian { rho } => bvn_cdf(norm_ppf(u), norm_ppf(v), rho),
            Copula::Gumbel { theta } => {
                let s = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
                (-s.powf(1.0 / theta)).exp()
            }
            Copula::Bb1 { theta, delta } => {
                let x = u.powf(-theta) - 1.0;
                let y = v.powf(-theta) - 1.0;
                let w = (x.powf(delta) + y.powf(delta)).powf(1.0 / delta);
                (1.0 + w).powf(-1.0 / theta)
            }
        };
        Ok(c.clamp((u + v - 1.0).max(0.0), u.min(v)))
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        self.ln_pdf(u, v).exp()
    }

    pub fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        match *self {
            Copula::Independence => 0.0,
            Copula::Gaussian { rho } => {
                let (a, b) = (norm_ppf(u), norm_ppf(v));
                let r2 = 1.0 - rho * rho;
                -0.5 * r2.ln() - (rho * rho * (a * a + b * b) - 2.0 * rho * a * b) / (2.0 * r2)
            }
            Copula::Gumbel { theta } => {
                let (lx, ly) = ((-u.ln()).ln(), (-v.ln()).ln());
                let s = (theta * lx).exp() + (theta * ly).exp();
                let a = s.powf(1.0 / theta);
                -a - u.ln() - v.ln() + (theta - 1.0) * (lx + ly) + (1.0 / theta - 2.0) * s.ln() + (a + theta - 1.0).ln()
            }
            Copula::Bb1 { theta, delta } => {
                let x = u.powf(-theta) - 1.0;
                let y = v.powf(-theta) - 1.0;
                let s = x.powf(delta) + y.powf(delta);
                let w = s.powf(1.0 / delta);
                (-1.0 / theta - 2.0) * (1.0 + w).ln() + (1.0 / delta - 2.0) * s.ln()
                    + (theta * (delta - 1.0) + (theta * delta + 1.0) * w).ln()
                    + (delta - 1.0) * (x.ln() + y.ln())
                    + (-theta - 1.0) * (u.ln() + v.ln())
            }
        }
    }

    /// `P(V <= v | U = u)`, the partial derivative of the CDF in `u`.
    pub fn h(&self, u: f64, v: f64) -> f64 {
        let r = match *self {
            Copula::Independence => v,
            Copula::Gaussian { rho } => norm_cdf((norm_ppf(v) - rho * norm_ppf(u)) / (1.0 - rho * rho).sqrt()),
            Copula::Gumbel { theta } => {
                let (x, y) = (-u.ln(), -v.ln());
                let s = x.powf(theta) + y.powf(theta);
                let a = s.powf(1.0 / theta);
                (-a).exp() * (a / x).powf(1.0 - theta) / u
            }
            Copula::Bb1 { theta, delta } => {
                let x = u.powf(-theta) - 1.0;
                let y = v.powf(-theta) - 1.0;
                let s = x.powf(delta) + y.powf(delta);
                let w = s.powf(1.0 / delta);
                // (x^d / s)^(1 - 1/d) = s^(1/d - 1) x^(d - 1)
                let ratio = if y == 0.0 { 1.0 } else { (1.0 + (y / x).powf(delta)).powf(1.0 / delta - 1.0) };
                (1.0 + w).powf(-1.0 / theta - 1.0) * ratio * u.powf(-theta - 1.0)
            }
        };
        r.clamp(0.0, 1.0)
    }

    /// Solves `h(u, v) = w` for `v`.
    pub fn h_inverse(&self, u: f64, w: f64) -> Result<f64> {
        match *self {
            Copula::Independence => Ok(w),
            Copula::Gaussian { rho } => Ok(norm_cdf(rho * norm_ppf(u) + (1.0 - rho * rho).sqrt() * norm_ppf(w))),
            Copula::Gumbel { theta } => {
                if theta == 1.0 {
                    return Ok(w);
                }
                match gumbel_h_inverse(theta, u, w) {
                    Some(v) if (self.h(u, v) - w).abs() < 1e-10 => Ok(v),
                    _ => self.h_inverse_bracketed(u, w),
                }
            }
            Copula::Bb1 { .. } => self.h_inverse_bracketed(u, w),
        }
    }

    /// Newton on `v` inside a shrinking bisection bracket.
    pub fn h_inverse_bracketed(&self, u: f64, w: f64) -> Result<f64> {
        let (mut lo, mut hi) = (LO, HI);
        if w <= self.h(u, lo) {
            return Ok(lo);
        }
        if w >= self.h(u, hi) {
            return Ok(hi);
        }
        let mut v = w.clamp(lo, hi);
        for _ in 0..MAX_ROOT_ITER {
            let f = self.h(u, v) - w;
            if f.abs() < 1e-13 {
                return Ok(v);
            }
            if f > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            if hi - lo < 1e-15 * hi.max(1e-300) + 1e-300 {
                return Ok(0.5 * (lo + hi));
            }
            let dens = self.pdf(u, v);
            let newton = v - f / dens;
            v = if dens.is_finite() && dens > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Err(Error::ConvergenceFailure(MAX_ROOT_ITER))
    }

    pub fn lambda_lower(&self) -> f64 {
        match *self {
            Copula::Bb1 { theta, delta } => 2f64.powf(-1.0 / (delta * theta)),
            _ => 0.0,
        }
    }

    pub fn lambda_upper(&self) -> f64 {
        match *self {
            Copula::Gumbel { theta } => 2.0 - 2f64.powf(1.0 / theta),
            Copula::Bb1 { delta, .. } => 2.0 - 2f64.powf(1.0 / delta),
            _ => 0.0,
        }
    }

    pub fn kendall_tau(&self) -> f64 {
        match *self {
            Copula::Independence => 0.0,
            Copula::Gaussian { rho } => 2.0 / std::f64::consts::PI * rho.asin(),
            Copula::Gumbel { theta } => 1.0 - 1.0 / theta,
            Copula::Bb1 { theta, delta } => 1.0 - 2.0 / (delta * (theta + 2.0)),
        }
    }

    /// Spearman's rho `12 * int C - 3` by tensor Gauss-Legendre quadrature.
    pub fn spearman_rho(&self) -> f64 {
        let (x, w) = gauss_legendre(96);
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let u = 0.5 * (xi + 1.0);
            for (j, &xj) in x.iter().enumerate() {
                let v = 0.5 * (xj + 1.0);
                s += 0.25 * w[i] * w[j] * self.cdf(u, v).unwrap_or(0.0);
            }
        }
        12.0 * s - 3.0
    }

    /// Kendall's tau `1 - 4 * int dC/du * dC/dv` by tensor Gauss-Legendre
    /// quadrature; all families here are exchangeable, so `dC/dv(u, v) = h(v, u)`.
    pub fn kendall_tau_numeric(&self) -> f64 {
        let (x, w) = gauss_legendre(96);
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let u = 0.5 * (xi + 1.0);
            for (j, &xj) in x.iter().enumerate() {
                let v = 0.5 * (xj + 1.0);
                s += 0.25 * w[i] * w[j] * self.h(u, v) * self.h(v, u);
            }
        }
        1.0 - 4.0 * s
    }

    /// Quantile dependence `lambda^q` of the copula itself.
    pub fn quantile_dependence(&self, q: f64) -> f64 {
        let c = self.cdf(q, q).unwrap_or(0.0);
        if q <= 0.5 {
            c / q
        } else {
            (1.0 - 2.0 * q + c) / (1.0 - q)
        }
    }
}

/// Gumbel conditional inverse through `z = A(u, v)`:
/// `z + (theta - 1) ln z = x + (theta - 1) ln x - ln w` with `x = -ln u`,
/// then `v = exp(-(z^theta - x^theta)^(1/theta))`.
fn gumbel_h_inverse(theta: f64, u: f64, w: f64) -> Option<f64> {
    let x = -u.ln();
    let k = theta - 1.0;
    let rhs = x + k * x.ln() - w.ln();
    let mut z = x.max(rhs - k * rhs.max(1e-300).ln()).max(x);
    for _ in 0..100 {
        let g = z + k * z.ln() - rhs;
        let step = g / (1.0 + k / z);
        let next = (z - step).max(0.5 * (z + x)).max(x);
        if (next - z).abs() <= 1e-15 * z {
            z = next;
            break;
        }
        z = next;
    }
    let y = (z.powf(theta) - x.powf(theta)).max(0.0).powf(1.0 / theta);
    let v = (-y).exp();
    v.is_finite().then_some(v.clamp(LO, HI))
}

/// Pairs `(u, v)` with `u` uniform and `v = h_inverse(u, w)`.
pub fn sample_pairs(copula: &Copula, count: usize, rng: &mut impl Rng) -> Result<Vec<(f64, f64)>> {
    (0..count)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let w: f64 = rng.random_range(f64::EPSILON..1.0);
            Ok((u, copula.h_inverse(u, w)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MplFit {
    pub copula: Copula,
    pub loglik: f64,
    /// Log-likelihood at the Kendall-tau inversion start.
    pub start_loglik: f64,
    /// Estimate within `BOUNDARY_TOL` of the edge of the parameter domain.
    pub boundary: bool,
}

pub fn pseudo_loglik(copula: &Copula, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| copula.ln_pdf(a, b)).sum()
}

/// Maximum pseudo-likelihood for the one-parameter families. The search
/// runs on `atanh(rho)` or `ln(theta - 1)`.
pub fn fit_mpl(u: &[f64], v: &[f64], family: Family) -> Result<MplFit> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if u.len() < 100 {
        return Err(Error::TooFewObservations { got: u.len(), needed: 100 });
    }
    if let Some(&bad) = u.iter().chain(v).find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::DomainError(bad));
    }
    let tau = kendall_tau(u, v);
    let (make, lo, hi, start): (fn(f64) -> Copula, f64, f64, f64) = match family {
        Family::Gaussian => {
            let lim = (1.0 - 1e-6f64).atanh();
            let s = (std::f64::consts::FRAC_PI_2 * tau).sin().clamp(-1.0 + 1e-6, 1.0 - 1e-6).atanh();
            (|t| Copula::Gaussian { rho: t.tanh() }, -lim, lim, s)
        }
        Family::Gumbel => {
            let (l, h) = (1e-6f64.ln(), (GUMBEL_MAX - 1.0).ln());
            let s = (1.0 / (1.0 - tau.clamp(0.0, 0.99)) - 1.0).max(1e-6).ln();
            (|t| Copula::Gumbel { theta: 1.0 + t.exp() }, l, h, s)
        }
        _ => return Err(Error::InvalidParameter(format!("pseudo-likelihood fit not offered for {family:?}"))),
    };
    let nll = |t: f64| {
        let l = pseudo_loglik(&make(t), u, v);
        if l.is_finite() { -l } else { f64::INFINITY }
    };
    let start_value = nll(start.clamp(lo, hi));
    let (mut t, mut val) = scan_then_brent(nll, lo, hi, 60, 1e-10);
    if start_value < val {
        t = start.clamp(lo, hi);
        val = start_value;
    }
    if !val.is_finite() {
        return Err(Error::NonConvergence(format!("{family:?} pseudo-likelihood not finite")));
    }
    let copula = make(t);
    let boundary = match copula {
        Copula::Gaussian { rho } => rho.abs() > 1.0 - BOUNDARY_TOL,
        Copula::Gumbel { theta } => theta - 1.0 < BOUNDARY_TOL || theta > GUMBEL_MAX - BOUNDARY_TOL,
        _ => false,
    };
    Ok(MplFit { copula, loglik: -val, start_loglik: -start_value, boundary })
}

/// BB1 parameters reproducing given tail dependence coefficients.
pub fn bb1_from_tails(lambda_lower: f64, lambda_upper: f64) -> Result<Copula> {
    if !(lambda_upper > 0.0 && lambda_upper < 1.0 && lambda_lower > 0.0 && lambda_lower < 1.0) {
        return Err(Error::TailOutOfRange { lambda_l: lambda_lower, lambda_u: lambda_upper });
    }
    let delta = std::f64::consts::LN_2 / (2.0 - lambda_upper).ln();
    if delta < 1.0 {
        return Err(Error::TailOutOfRange { lambda_l: lambda_lower, lambda_u: lambda_upper });
    }
    let theta = std::f64::consts::LN_2 / (-delta * lambda_lower.ln());
    Ok(Copula::Bb1 { theta, delta })
}

/// Empirical quantile dependence `lambda~^q` of pseudo-observations.
pub fn empirical_quantile_dependence(u: &[f64], v: &[f64], q: f64) -> f64 {
    let n = u.len() as f64;
    if q <= 0.5 {
        u.iter().zip(v).filter(|(&a, &b)| a <= q && b <= q).count() as f64 / (n * q)
    } else {
        u.iter().zip(v).filter(|(&a, &b)| a > q && b > q).count() as f64 / (n * (1.0 - q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileDependenceRow {
    pub q: f64,
    pub lambda: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceDiagnostics {
    pub rows: Vec<QuantileDependenceRow>,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
}

pub const DEFAULT_TAIL_Q: f64 = 0.05;
pub const BOOTSTRAP_REPS: usize = 500;

/// The plotting grid `0.025, 0.05, ..., 0.975`.
pub fn default_q_grid() -> Vec<f64> {
    (1..=39).map(|k| 0.025 * k as f64).collect()
}

fn tail_grid(from: f64, to: f64) -> Vec<f64> {
    let n = ((to - from) / 0.001).round() as usize;
    (0..=n).map(|k| from + (to - from) * k as f64 / n as f64).collect()
}

/// Averaged-corner tail estimates: the mean of `lambda~^q` over
/// `[0.01, tail_q]` (lower) and `[1 - tail_q, 0.99]` (upper).
pub fn tail_estimates(u: &[f64], v: &[f64], tail_q: f64) -> (f64, f64) {
    let avg = |qs: Vec<f64>| qs.iter().map(|&q| empirical_quantile_dependence(u, v, q)).sum::<f64>() / qs.len() as f64;
    (avg(tail_grid(0.01, tail_q)), avg(tail_grid(1.0 - tail_q, 0.99)))
}

/// Quantile dependence on `q_grid` with a percentile bootstrap band
/// (level 90%) and averaged tail estimates.
pub fn empirical_dependence(u: &[f64], v: &[f64], q_grid: &[f64], tail_q: f64, reps: usize, rng: &mut impl Rng) -> DependenceDiagnostics {
    let n = u.len();
    let point: Vec<f64> = q_grid.iter().map(|&q| empirical_quantile_dependence(u, v, q)).collect();
    let mut boot: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); q_grid.len()];
    let (mut bu, mut bv) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..reps {
        for k in 0..n {
            let j = rng.random_range(0..n);
            bu[k] = u[j];
            bv[k] = v[j];
        }
        for (slot, &q) in boot.iter_mut().zip(q_grid) {
            slot.push(empirical_quantile_dependence(&bu, &bv, q));
        }
    }
    let rows = q_grid
        .iter()
        .zip(point)
        .zip(boot.iter_mut())
        .map(|((&q, lambda), b)| {
            if b.is_empty() {
                return QuantileDependenceRow { q, lambda, band_lo: lambda, band_hi: lambda };
            }
            b.sort_by(f64::total_cmp);
            let lo = crate::stats::quantile_sorted(b, 0.05).min(lambda);
            let hi = crate::stats::quantile_sorted(b, 0.95).max(lambda);
            QuantileDependenceRow { q, lambda, band_lo: lo, band_hi: hi }
        })
        .collect();
    let (lambda_lower, lambda_upper) = tail_estimates(u, v, tail_q);
    DependenceDiagnostics { rows, lambda_lower, lambda_upper }
}
