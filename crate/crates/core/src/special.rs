//! Special functions: incomplete beta and its inverse, the normal
//! distribution, the bivariate normal CDF and Gauss-Legendre rules.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

pub use statrs::function::gamma::{digamma, ln_gamma};

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 500;

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    reg_inc_beta_with(x, a, b, ln_beta(a, b))
}

/// `I_x(a, b)` with a precomputed `ln B(a, b)`; the hot path of the
/// scenario engine evaluates the same `(a, b)` many times.
pub fn reg_inc_beta_with(x: f64, a: f64, b: f64, lnb: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (-x).ln_1p() - lnb).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Beta density with a precomputed `ln B(a, b)`.
pub fn beta_pdf_with(x: f64, a: f64, b: f64, lnb: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - lnb).exp()
}

/// Inverse of `I_x(a, b)` in `x`.
pub fn inv_reg_inc_beta(p: f64, a: f64, b: f64) -> f64 {
    inv_reg_inc_beta_with(p, a, b, ln_beta(a, b))
}

/// Safeguarded Halley iteration on `I_x(a, b) = p`, bracketed in `[0, 1]`.
pub fn inv_reg_inc_beta_with(p: f64, a: f64, b: f64, lnb: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut x = inv_beta_guess(p, a, b, lnb);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let f = reg_inc_beta_with(x, a, b, lnb) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = beta_pdf_with(x, a, b, lnb);
        let mut next = if dens > 0.0 && dens.is_finite() {
            let u = f / dens;
            let corr = (a - 1.0) / x - (b - 1.0) / (1.0 - x);
            let denom = 1.0 - 0.5 * (u * corr).clamp(-1.0, 1.0);
            x - u / denom
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-16 * hi.max(1e-300) {
            break;
        }
    }
    x
}

fn inv_beta_guess(p: f64, a: f64, b: f64, lnb: f64) -> f64 {
    let x = if a >= 1.0 && b >= 1.0 {
        let pp = if p < 0.5 { p } else { 1.0 - p };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if p < 0.5 {
            z = -z;
        }
        let al = (z * z - 3.0) / 6.0;
        let h = 2.0 / (1.0 / (2.0 * a - 1.0) + 1.0 / (2.0 * b - 1.0));
        let w = z * (al + h).sqrt() / h
            - (1.0 / (2.0 * b - 1.0) - 1.0 / (2.0 * a - 1.0)) * (al + 5.0 / 6.0 - 2.0 / (3.0 * h));
        a / (a + b * (2.0 * w).exp())
    } else {
        let lna = (a / (a + b)).ln();
        let lnb_ = (b / (a + b)).ln();
        let t = (a * lna - lnb).exp() / a;
        let u = (b * lnb_ - lnb).exp() / b;
        let w = t + u;
        if p < t / w {
            (a * w * p).powf(1.0 / a)
        } else {
            1.0 - (b * w * (1.0 - p)).powf(1.0 / b)
        }
    };
    if x.is_finite() && x > 0.0 && x < 1.0 {
        x
    } else {
        0.5
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation followed by
/// one Halley refinement step.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -norm_ppf(1.0 - p);
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl_rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL6: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL12: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL20: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        6 => GL6.get_or_init(|| gauss_legendre(6)),
        12 => GL12.get_or_init(|| gauss_legendre(12)),
        _ => GL20.get_or_init(|| gauss_legendre(20)),
    }
}

/// Bivariate standard normal CDF `P(X <= a, Y <= b)` with correlation `rho`.
///
/// Genz's Gauss-Legendre scheme: Plackett's integral over `asin(rho)` for
/// moderate correlation, and the Drezner-Wesolowsky expansion around the
/// singular point for `|rho| >= 0.925`.
pub fn bvn_cdf(a: f64, b: f64, rho: f64) -> f64 {
    bvn_upper(-a, -b, rho)
}

fn bvn_upper(dh: f64, dk: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let rule = if r.abs() < 0.3 {
        gl_rule(6)
    } else if r.abs() < 0.75 {
        gl_rule(12)
    } else {
        gl_rule(20)
    };
    let (xs, ws) = (&rule.0, &rule.1);
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r.abs() > 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = r.asin();
            for (x, w) in xs.iter().zip(ws) {
                let sn = (asr * (x + 1.0) / 2.0).sin();
                bvn += 0.5 * w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
            bvn *= asr / two_pi;
        }
        bvn += norm_cdf(-h) * norm_cdf(-k);
        return bvn.clamp(0.0, 1.0);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -(bs / as_ + hk) / 2.0;
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        }
        if -hk < 100.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (x, w) in xs.iter().zip(ws) {
            let t = a * (x + 1.0);
            let xs2 = t * t;
            let rs = (1.0 - xs2).sqrt();
            let asr = -(bs / xs2 + hk) / 2.0;
            if asr > -100.0 {
                bvn += a
                    * w
                    * asr.exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs2 * (1.0 + d * xs2)));
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn += norm_cdf(-h.max(k));
    } else {
        bvn = -bvn;
        if k > h {
            if h < 0.0 {
                bvn += norm_cdf(k) - norm_cdf(h);
            } else {
                bvn += norm_cdf(-h) - norm_cdf(-k);
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}
