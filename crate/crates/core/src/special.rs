//! Special functions: log-gamma, log-domain modified Bessel functions of the
//! first kind, the regularized incomplete gamma function and a few stable
//! log-sum-exp / sigmoid helpers.

use crate::error::{Error, Result};
use crate::scalar::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // reflection
        let pi = T::PI();
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::from_usize_lossy(i));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    half * (T::TAU()).ln() + (x + half) * t.ln() - t + acc.ln()
}

/// Orders at or above this are handled directly by the uniform asymptotic
/// expansion; smaller orders recur downward from it.
const DEBYE_MIN_ORDER: f64 = 25.0;

/// `log I_order(x)` for `order >= -1/2`, `x >= 0`.
///
/// Power series for `x < max(10, order)` (small orders only), otherwise the
/// Debye uniform expansion at an order of at least 25 followed by the stable
/// downward recurrence on the ratio `I_{v+1}/I_v`. Everything is carried in
/// the log domain, so `x` up to and beyond `1e6` is fine.
pub fn log_bessel_i<T: Real>(order: T, x: T) -> Result<T> {
    log_bessel_i_ratio(order, x).map(|(log_i, _)| log_i)
}

/// Returns `(log I_order(x), I_{order+1}(x) / I_order(x))`.
///
/// The ratio is the derivative of `log I_order(x) - order * log x`, which is
/// what the vMF normalizer gradient needs.
pub fn log_bessel_i_ratio<T: Real>(order: T, x: T) -> Result<(T, T)> {
    if !(order >= T::lit(-0.5)) {
        return Err(Error::Domain(format!("Bessel order {order} < -1/2")));
    }
    if !(x >= T::zero()) || !x.is_finite() {
        return Err(Error::Domain(format!("Bessel argument {x} must be finite and >= 0")));
    }
    if x == T::zero() {
        let log_i = if order == T::zero() {
            T::zero()
        } else if order > T::zero() {
            T::neg_infinity()
        } else {
            T::infinity()
        };
        return Ok((log_i, T::zero()));
    }
    let small_order = order < T::lit(DEBYE_MIN_ORDER);
    if small_order && x < order.max(T::lit(10.0)) {
        Ok(bessel_series(order, x))
    } else {
        Ok(bessel_debye_recurrence(order, x))
    }
}

fn bessel_series<T: Real>(nu: T, x: T) -> (T, T) {
    let q = x * x * T::lit(0.25);
    let eps = T::epsilon() * T::lit(0.5);
    let mut term = T::one();
    let mut sum = T::one();
    let mut term_up = T::one();
    let mut sum_up = T::one();
    let mut k = T::zero();
    loop {
        k += T::one();
        term = term * q / (k * (nu + k));
        term_up = term_up * q / (k * (nu + k + T::one()));
        sum += term;
        sum_up += term_up;
        if term <= eps * sum && term_up <= eps * sum_up {
            break;
        }
    }
    let half_x = x * T::lit(0.5);
    let log_i = nu * half_x.ln() - ln_gamma(nu + T::one()) + sum.ln();
    let ratio = half_x / (nu + T::one()) * (sum_up / sum);
    (log_i, ratio)
}

fn bessel_debye_recurrence<T: Real>(nu: T, x: T) -> (T, T) {
    let steps = (T::lit(DEBYE_MIN_ORDER) - nu).ceil().max(T::zero());
    let top = nu + steps;
    let log_top = debye_log_i(top, x);
    let mut ratio = (debye_log_i(top + T::one(), x) - log_top).exp();
    let mut log_i = log_top;
    let mut mu = top;
    // Product of the step ratios, folded into the log whenever it gets small.
    let mut prod = T::one();
    let floor = T::lit(1e-100);
    let n = steps.to_usize().unwrap_or(0);
    for _ in 0..n {
        ratio = T::one() / (T::lit(2.0) * mu / x + ratio);
        prod *= ratio;
        if prod < floor {
            log_i -= prod.ln();
            prod = T::one();
        }
        mu -= T::one();
    }
    log_i -= prod.ln();
    (log_i, ratio)
}

/// Debye uniform asymptotic expansion of `log I_nu(nu z)` with seven terms.
fn debye_log_i<T: Real>(nu: T, x: T) -> T {
    let z = x / nu;
    let s = (T::one() + z * z).sqrt();
    let p = T::one() / s;
    let eta = s + (z / (T::one() + s)).ln();
    let mut series = T::zero();
    let mut scale = T::one();
    for k in 0..DEBYE_U.len() {
        series += debye_u(k, p) * scale;
        scale /= nu;
    }
    nu * eta - T::lit(0.5) * (T::TAU() * nu).ln() - T::lit(0.5) * s.ln() + series.ln()
}

// Debye polynomials u_k(p): (numerator coefficients of p^k, p^{k+2}, ...; denominator).
const DEBYE_U: [(&[f64], f64); 7] = [
    (&[1.0], 1.0),
    (&[3.0, -5.0], 24.0),
    (&[81.0, -462.0, 385.0], 1152.0),
    (&[30375.0, -369603.0, 765765.0, -425425.0], 414720.0),
    (&[4465125.0, -94121676.0, 349922430.0, -446185740.0, 185910725.0], 39813120.0),
    (&[1519035525.0, -49286948607.0, 284499769554.0, -614135872350.0, 566098157625.0, -188699385875.0], 6688604160.0),
    (
        &[
            2757049477875.0,
            -127577298354750.0,
            1050760774457901.0,
            -3369032068261860.0,
            5104696716244125.0,
            -3685299006138750.0,
            1023694168371875.0,
        ],
        4815794995200.0,
    ),
];

fn debye_u<T: Real>(k: usize, p: T) -> T {
    let (coeffs, denom) = DEBYE_U[k];
    let p2 = p * p;
    // Horner in p^2, then scale by p^k.
    let mut acc = T::zero();
    for &c in coeffs.iter().rev() {
        acc = acc * p2 + T::lit(c);
    }
    acc * p.powi(k as i32) / T::lit(denom)
}

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Series below `x = a + 1`, Lentz continued fraction for the upper tail
/// above it.
pub fn reg_lower_gamma<T: Real>(a: T, x: T) -> Result<T> {
    if !(a > T::zero()) {
        return Err(Error::Domain(format!("gamma shape {a} must be > 0")));
    }
    if x.is_nan() {
        return Err(Error::Numeric("incomplete gamma argument".into()));
    }
    if x <= T::zero() {
        return Ok(T::zero());
    }
    if x == T::infinity() {
        return Ok(T::one());
    }
    let eps = T::epsilon();
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + T::one() {
        let mut ap = a;
        let mut del = T::one() / a;
        let mut sum = del;
        for _ in 0..10_000 {
            ap += T::one();
            del = del * x / ap;
            sum += del;
            if del.abs() < sum.abs() * eps {
                break;
            }
        }
        Ok((sum.ln() + log_prefix).exp().min(T::one()))
    } else {
        let tiny = T::min_positive_value() / eps;
        let mut b = x + T::one() - a;
        let mut c = T::one() / tiny;
        let mut d = T::one() / b;
        let mut h = d;
        for i in 1..10_000 {
            let fi = T::from_usize_lossy(i);
            let an = -fi * (fi - a);
            b += T::lit(2.0);
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = T::one() / d;
            let del = d * c;
            h *= del;
            if (del - T::one()).abs() < eps {
                break;
            }
        }
        let q = (log_prefix.exp() * h).max(T::zero());
        Ok(T::one() - q)
    }
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf<T: Real>(x: T, dof: usize) -> Result<T> {
    if dof == 0 {
        return Err(Error::Domain("chi-square needs at least one degree of freedom".into()));
    }
    reg_lower_gamma(T::from_usize_lossy(dof) * T::lit(0.5), x * T::lit(0.5))
}

/// Max-shifted `log(sum(exp(xs)))`. Empty input gives `-inf`.
pub fn logsumexp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() || !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Writes `softmax(xs)` into `out` and returns `logsumexp(xs)`.
pub fn softmax_into<T: Real>(xs: &[T], out: &mut [T]) -> T {
    let lse = logsumexp(xs);
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - lse).exp();
    }
    lse
}

/// `log(1 + exp(x))`.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
