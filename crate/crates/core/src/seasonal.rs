//! Truncated Fourier regressions: least squares, BIC order selection and
//! pinball-loss quantile regression.

use crate::calendar::{HourlyPanel, DAYS, HOURS};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const ANNUAL: f64 = 365.25;
pub const DIURNAL: f64 = 24.0;

/// `b0 + sum_i b_i cos(2 pi t i / period) + sum_j b_{p+j} sin(2 pi t j / period)
/// [+ b_{p+q+1} * exog]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierModel {
    pub period: f64,
    pub p: usize,
    pub q: usize,
    pub coeffs: Vec<f64>,
    pub exogenous: bool,
}

impl FourierModel {
    pub fn n_coeffs(p: usize, q: usize, exogenous: bool) -> usize {
        1 + p + q + usize::from(exogenous)
    }

    pub fn new(period: f64, p: usize, q: usize, coeffs: Vec<f64>, exogenous: bool) -> Result<Self> {
        let k = Self::n_coeffs(p, q, exogenous);
        if coeffs.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: coeffs.len() });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite Fourier coefficient".into()));
        }
        Ok(Self { period, p, q, coeffs, exogenous })
    }

    pub fn constant(period: f64, value: f64) -> Self {
        Self { period, p: 0, q: 0, coeffs: vec![value], exogenous: false }
    }

    /// Evaluates without the exogenous term check; `exog` is ignored for
    /// models without one.
    pub fn eval(&self, t: f64, exog: Option<f64>) -> Result<f64> {
        fourier_eval(self, t, exog)
    }
}

pub fn fourier_eval(model: &FourierModel, t: f64, exog: Option<f64>) -> Result<f64> {
    let mut v = 0.0;
    for (c, x) in model.coeffs.iter().zip(design_row(model.period, model.p, model.q, t, None)) {
        v += c * x;
    }
    if model.exogenous {
        let e = exog.ok_or(Error::ExogenousMissing)?;
        v += model.coeffs[model.p + model.q + 1] * e;
    }
    Ok(v)
}

/// Regressor values for one observation.
pub fn design_row(period: f64, p: usize, q: usize, t: f64, exog: Option<f64>) -> Vec<f64> {
    let w = 2.0 * PI * t / period;
    let mut row = Vec::with_capacity(2 + p + q);
    row.push(1.0);
    row.extend((1..=p).map(|i| (w * i as f64).cos()));
    row.extend((1..=q).map(|j| (w * j as f64).sin()));
    if let Some(e) = exog {
        row.push(e);
    }
    row
}

fn design(period: f64, p: usize, q: usize, t: &[f64], exog: Option<&[f64]>) -> Result<DMatrix<f64>> {
    if let Some(e) = exog {
        if e.len() != t.len() {
            return Err(Error::DimensionMismatch { expected: t.len(), got: e.len() });
        }
    }
    let k = FourierModel::n_coeffs(p, q, exog.is_some());
    let mut x = DMatrix::zeros(t.len(), k);
    for (r, &ti) in t.iter().enumerate() {
        for (c, v) in design_row(period, p, q, ti, exog.map(|e| e[r])).into_iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    Ok(x)
}

/// Least-squares solution via SVD; returns coefficients and RSS.
fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::TooFewObservations { got: n, needed: k + 1 });
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient);
    }
    let yv = DVector::from_column_slice(y);
    let beta = svd.solve(&yv, 0.0).map_err(|_| Error::RankDeficient)?;
    let resid = &yv - x * &beta;
    Ok((beta.iter().copied().collect(), resid.norm_squared()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub model: FourierModel,
    pub rss: f64,
    pub n: usize,
}

pub fn fit_ols(t: &[f64], y: &[f64], exog: Option<&[f64]>, p: usize, q: usize, period: f64) -> Result<FourierModel> {
    Ok(fit_ols_detailed(t, y, exog, p, q, period)?.model)
}

pub fn fit_ols_detailed(t: &[f64], y: &[f64], exog: Option<&[f64]>, p: usize, q: usize, period: f64) -> Result<OlsFit> {
    if y.len() != t.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), got: y.len() });
    }
    let x = design(period, p, q, t, exog)?;
    let (coeffs, rss) = least_squares(&x, y)?;
    Ok(OlsFit { model: FourierModel::new(period, p, q, coeffs, exog.is_some())?, rss, n: y.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicSelection {
    pub p: usize,
    pub q: usize,
    /// `(p, q, bic)` for every candidate order.
    pub table: Vec<(usize, usize, f64)>,
}

pub fn bic(n: usize, rss: f64, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).ln() + k as f64 * n.ln()
}

/// Searches `0..=max_p x 0..=max_q` for the lowest BIC. Ties go to fewer
/// coefficients, then smaller `p`.
pub fn select_order_bic(
    t: &[f64],
    y: &[f64],
    exog: Option<&[f64]>,
    max_p: usize,
    max_q: usize,
    period: f64,
) -> Result<BicSelection> {
    let mut cands: Vec<(usize, usize)> = (0..=max_p).flat_map(|p| (0..=max_q).map(move |q| (p, q))).collect();
    cands.sort_by_key(|&(p, q)| (p + q, p));
    let mut table = Vec::with_capacity(cands.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for (p, q) in cands {
        let fit = fit_ols_detailed(t, y, exog, p, q, period)?;
        let b = bic(fit.n, fit.rss, fit.model.coeffs.len());
        table.push((p, q, b));
        if best.is_none_or(|(_, _, bb)| b < bb) {
            best = Some((p, q, b));
        }
    }
    let (p, q, _) = best.expect("non-empty search space");
    Ok(BicSelection { p, q, table })
}

pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 { u * (tau - 1.0) } else { u * tau }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub model: FourierModel,
    /// Response minus fit, per observation.
    pub residuals: Vec<f64>,
    pub loss: f64,
}

impl QuantileFit {
    /// Fraction of observations strictly below the fitted curve.
    pub fn coverage(&self) -> f64 {
        self.residuals.iter().filter(|&&r| r < 0.0).count() as f64 / self.residuals.len() as f64
    }
}

const QR_MAX_ITER: usize = 10_000;

/// Pinball-loss regression on a Fourier design. Smoothed IRLS provides a
/// start, an exact basis-exchange descent then reaches a vertex optimum of
/// the linear program. Subgradient descent is the last resort.
pub fn fit_quantile(
    t: &[f64],
    y: &[f64],
    exog: Option<&[f64]>,
    p: usize,
    q: usize,
    tau: f64,
    period: f64,
) -> Result<QuantileFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level {tau}")));
    }
    if y.len() != t.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), got: y.len() });
    }
    let x = design(period, p, q, t, exog)?;
    let k = x.ncols();
    if y.len() <= k {
        return Err(Error::TooFewObservations { got: y.len(), needed: k + 1 });
    }
    let beta = quantile_regression(&x, y, tau)?;
    let model = FourierModel::new(period, p, q, beta.clone(), exog.is_some())?;
    let bv = DVector::from_vec(beta);
    let fitted = &x * &bv;
    let residuals: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let loss = residuals.iter().map(|&r| pinball(r, tau)).sum();
    Ok(QuantileFit { tau, model, residuals, loss })
}

/// Quantile regression on an explicit design matrix.
pub fn quantile_regression(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<Vec<f64>> {
    let loss_of = |b: &[f64]| -> f64 {
        let bv = DVector::from_column_slice(b);
        let f = x * bv;
        y.iter().zip(f.iter()).map(|(a, c)| pinball(a - c, tau)).sum()
    };
    let start = irls(x, y, tau);
    let seed = match &start {
        Ok(b) => b.clone(),
        Err(_) => least_squares(x, y)?.0,
    };
    let mut best: Option<(Vec<f64>, f64)> = start.as_ref().ok().map(|b| (b.clone(), loss_of(b)));
    if let Ok(b) = simplex_polish(x, y, tau, &seed) {
        let l = loss_of(&b);
        if best.as_ref().is_none_or(|(_, bl)| l <= *bl) {
            best = Some((b, l));
        }
    }
    if best.is_none() {
        let b = subgradient(x, y, tau, &seed);
        let l = loss_of(&b);
        best = Some((b, l));
    }
    match best {
        Some((b, l)) if l.is_finite() => Ok(b),
        _ => Err(start.err().unwrap_or(Error::NoConvergence(QR_MAX_ITER))),
    }
}

/// Majorize-minimize iteration: `X'WX b = X'Wy + (tau - 1/2) X'1` with
/// `W = 1 / (2 max(|r|, eps))`, tightening `eps`.
fn irls(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Result<Vec<f64>> {
    let (n, k) = x.shape();
    let scale = y.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let yv = DVector::from_column_slice(y);
    let (mut beta, _) = least_squares(x, y)?;
    let colsum: DVector<f64> = DVector::from_iterator(k, (0..k).map(|c| x.column(c).sum()));
    let mut iters = 0;
    for &eps in &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let eps = eps * scale;
        for _ in 0..200 {
            iters += 1;
            if iters > QR_MAX_ITER {
                return Err(Error::NoConvergence(QR_MAX_ITER));
            }
            let bv = DVector::from_column_slice(&beta);
            let r = &yv - x * &bv;
            let w: Vec<f64> = r.iter().map(|ri| 0.5 / ri.abs().max(eps)).collect();
            let mut xtwx = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for i in 0..n {
                let row = x.row(i);
                for a in 0..k {
                    let wa = w[i] * row[a];
                    rhs[a] += wa * y[i];
                    for b in a..k {
                        xtwx[(a, b)] += wa * row[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    xtwx[(a, b)] = xtwx[(b, a)];
                }
            }
            rhs += &colsum * (tau - 0.5);
            let sol = xtwx.cholesky().ok_or(Error::DegenerateDesign)?.solve(&rhs);
            let change = sol.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let size = beta.iter().map(|v| v.abs()).fold(1.0, f64::max);
            beta = sol.iter().copied().collect();
            if change <= 1e-10 * size {
                break;
            }
        }
    }
    Ok(beta)
}

/// Exact descent over LP vertices. A vertex interpolates `k` observations;
/// each edge relaxes one of them. Steps use an exact line search over the
/// kinks of the piecewise-linear loss.
fn simplex_polish(x: &DMatrix<f64>, y: &[f64], tau: f64, start: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = x.shape();
    let bv = DVector::from_column_slice(start);
    let r0 = DVector::from_column_slice(y) - x * bv;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r0[a].abs().total_cmp(&r0[b].abs()));

    // greedy choice of k linearly independent rows closest to the start
    let mut basis: Vec<usize> = Vec::with_capacity(k);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &i in &order {
        let mut v = x.row(i).transpose();
        let norm0 = v.norm();
        for o in &ortho {
            let proj = o.dot(&v);
            v -= o * proj;
        }
        if v.norm() > 1e-8 * norm0.max(1e-300) {
            ortho.push(v.normalize());
            basis.push(i);
            if basis.len() == k {
                break;
            }
        }
    }
    if basis.len() < k {
        return Err(Error::DegenerateDesign);
    }

    let yv = DVector::from_column_slice(y);
    let tol = 1e-12 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max));
    for _ in 0..QR_MAX_ITER {
        let xb = DMatrix::from_fn(k, k, |a, b| x[(basis[a], b)]);
        let yb = DVector::from_fn(k, |a, _| y[basis[a]]);
        let lu = xb.lu();
        let beta = lu.solve(&yb).ok_or(Error::DegenerateDesign)?;
        let inv = lu.try_inverse().ok_or(Error::DegenerateDesign)?;
        let r = &yv - x * &beta;

        // steepest edge among the 2k candidates
        let mut best: Option<(f64, DVector<f64>, usize)> = None;
        for j in 0..k {
            let col = inv.column(j).into_owned();
            let c_all = x * &col;
            for sign in [1.0, -1.0] {
                let mut deriv = 0.0;
                for i in 0..n {
                    let c = sign * c_all[i];
                    deriv += if r[i].abs() <= tol {
                        pinball(-c, tau)
                    } else if r[i] > 0.0 {
                        -tau * c
                    } else {
                        (1.0 - tau) * c
                    };
                }
                if deriv < -1e-12 * (1.0 + col.norm()) && best.as_ref().is_none_or(|b| deriv < b.0) {
                    best = Some((deriv, col.clone() * sign, j));
                }
            }
        }
        let Some((deriv, dir, leave)) = best else {
            return Ok(beta.iter().copied().collect());
        };

        // kinks at t_i = r_i / c_i > 0, each adds |c_i| to the slope
        let c_all = x * &dir;
        let mut kinks: Vec<(f64, f64, usize)> = (0..n)
            .filter(|&i| r[i].abs() > tol && c_all[i] != 0.0)
            .filter_map(|i| {
                let ti = r[i] / c_all[i];
                (ti > 0.0).then(|| (ti, c_all[i].abs(), i))
            })
            .collect();
        kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slope = deriv;
        let mut enter = None;
        for &(_, w, i) in &kinks {
            slope += w;
            if slope >= 0.0 {
                enter = Some(i);
                break;
            }
        }
        let Some(enter) = enter else {
            // loss unbounded below along an edge cannot happen for tau in (0,1)
            return Err(Error::DegenerateDesign);
        };
        basis[leave] = enter;
    }
    Err(Error::NoConvergence(QR_MAX_ITER))
}

/// Diminishing-step subgradient descent, keeping the best iterate.
fn subgradient(x: &DMatrix<f64>, y: &[f64], tau: f64, start: &[f64]) -> Vec<f64> {
    let (n, k) = x.shape();
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::from_column_slice(start);
    let loss = |b: &DVector<f64>| (&yv - x * b).iter().map(|&r| pinball(r, tau)).sum::<f64>();
    let mut best = (beta.clone(), loss(&beta));
    let scale = y.iter().map(|v| v.abs()).sum::<f64>() / n as f64 + 1e-12;
    for it in 0..QR_MAX_ITER {
        let r = &yv - x * &beta;
        let mut g = DVector::zeros(k);
        for i in 0..n {
            let s = if r[i] > 0.0 { -tau } else if r[i] < 0.0 { 1.0 - tau } else { 0.0 };
            g += x.row(i).transpose() * s;
        }
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        beta -= g * (scale / ((it + 1) as f64).sqrt() / gn);
        let l = loss(&beta);
        if l < best.1 {
            best = (beta.clone(), l);
        }
    }
    best.0.iter().copied().collect()
}

/// Per-hour seasonal mean `Lambda(d, h)` fitted by least squares on all
/// years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyMeans {
    pub per_hour: Vec<FourierModel>,
}

impl HourlyMeans {
    pub fn fit(panel: &HourlyPanel, p: usize, q: usize) -> Result<Self> {
        let n = panel.years() * DAYS;
        let t: Vec<f64> = (0..panel.years()).flat_map(|_| (1..=DAYS).map(|d| d as f64)).collect();
        let per_hour = (0..HOURS)
            .map(|h| {
                let y: Vec<f64> = (0..panel.years()).flat_map(|i| (1..=DAYS).map(move |d| (i, d))).map(|(i, d)| panel.ghi(i, d, h)).collect();
                debug_assert_eq!(y.len(), n);
                if y.iter().all(|&v| v == 0.0) {
                    Ok(FourierModel::new(ANNUAL, p, q, vec![0.0; 1 + p + q], false)?)
                } else {
                    fit_ols(&t, &y, None, p, q, ANNUAL)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_hour })
    }

    pub fn eval(&self, d: usize, h: usize) -> f64 {
        fourier_eval(&self.per_hour[h], d as f64, None).expect("no exogenous term")
    }
}
