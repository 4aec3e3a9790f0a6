//! Exact (log-scale) enumeration of type-I triangulations with boundaries and
//! the Boltzmann partition functions built from them.
//!
//! All counts are kept as natural logarithms: the counts themselves overflow
//! 64-bit integers almost immediately. Double factorials are split by parity,
//! `(2n)!! = 2^n n!` and `(2n-1)!! = (2n)!/(2^n n!)`, so that everything
//! reduces to log-gamma evaluations. The convention `(-1)!! = 1` is honored
//! exactly (log value 0).

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Boltzmann weight base: each internal vertex carries a factor `(12*sqrt(3))^-1`.
pub const WEIGHT_BASE: f64 = 20.784609690826528; // 12*sqrt(3)

/// `ln(12*sqrt(3))`
pub const LOG_WEIGHT_BASE: f64 = 3.0342127941220554;

const LN_2: f64 = core::f64::consts::LN_2;

/// `Z^1(0) = (24*sqrt(3))^-1`
pub const Z1_ZERO: f64 = 0.024056261216234407;

/// Natural log of `n!` via log-gamma.
#[inline]
pub fn log_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Natural log of the double factorial `n!!` for `n >= -1`.
///
/// Only `(-1)!! = 1` is defined among negative arguments; anything smaller is
/// a caller bug (formulas that would need `(-3)!!` are routed to series
/// evaluations instead).
#[inline]
pub fn log_double_factorial(n: i64) -> f64 {
    match n {
        -1 | 0 => 0.0,
        n if n > 0 => {
            if n % 2 == 0 {
                let half = (n / 2) as f64;
                half * LN_2 + ln_gamma(half + 1.0)
            } else {
                // n = 2m-1: (2m-1)!! = (2m)! / (2^m m!)
                let m = ((n + 1) / 2) as f64;
                ln_gamma(2.0 * m + 1.0) - m * LN_2 - ln_gamma(m + 1.0)
            }
        }
        _ => panic!("double factorial of {n} is not defined"),
    }
}

/// Natural log of `binomial(n, k)`.
#[inline]
pub fn log_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    log_factorial(n) - log_factorial(k) - log_factorial(n - k)
}

/// Streaming log-sum-exp accumulator; keeps a running shift so that partial
/// sums stay representable whatever the magnitude of the terms.
#[derive(Debug, Clone)]
pub struct LogSumExp {
    shift: f64,
    sum: f64,
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn add_log(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term <= self.shift {
            self.sum += (log_term - self.shift).exp();
        } else {
            self.sum = self.sum * (self.shift - log_term).exp() + 1.0;
            self.shift = log_term;
        }
    }

    /// Add a plain value expressed relative to the current shift base.
    pub fn add_scaled(&mut self, value: f64, log_scale: f64) {
        if value <= 0.0 {
            return;
        }
        self.add_log(value.ln() + log_scale);
    }

    pub fn log_total(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.shift + self.sum.ln()
        }
    }
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

/// Hurwitz zeta `sum_{j>=0} (x+j)^-s` for `s > 1`, `x >= 8`, by Euler-Maclaurin.
pub(crate) fn hurwitz_zeta(s: f64, x: f64) -> f64 {
    debug_assert!(x >= 8.0 && s > 1.0);
    let xs = x.powf(-s);
    x.powf(1.0 - s) / (s - 1.0) + 0.5 * xs + s * xs / x / 12.0
        - s * (s + 1.0) * (s + 2.0) * xs / (x * x * x) / 720.0
}

/// Result of a truncated Boltzmann series: log of the total (partial sum plus
/// power-law tail estimate) and the estimated relative error of that total.
#[derive(Debug, Clone, Copy)]
pub struct SeriesValue {
    pub log_value: f64,
    pub rel_error: f64,
    pub terms_used: u64,
}

/// Sum `sum_k exp(log_term(k))` where the terms eventually decay like
/// `c * k^(-s)` relative to the geometric weight already folded into
/// `log_term` (`s = 5/2` for the disk series, `3/2` for the annulus one).
/// The tail beyond the truncation point is estimated by fitting `c` and the
/// first correction `a/k` from two late terms and summing the fitted power
/// laws with Hurwitz zetas.
fn power_tail_series(
    log_term: impl Fn(u64) -> f64,
    k_start: u64,
    exponent: f64,
    rel_tol: f64,
    max_k: u64,
) -> Result<SeriesValue> {
    const MIN_TERMS: u64 = 64;
    let mut acc = LogSumExp::new();
    let mut k2 = k_start;
    loop {
        let t = log_term(k2);
        acc.add_log(t);
        // First plateau: the scaled term is far below the tolerance, so the
        // tail estimate (not the omitted terms) dominates the error budget.
        if k2 >= k_start + MIN_TERMS && t - acc.log_total() < (rel_tol / 64.0).ln() {
            break;
        }
        if k2 >= max_k {
            break;
        }
        k2 += 1;
    }

    // Two-point fit t(k) ~ c k^(-s) (1 + a/k), cross-validated at a third
    // abscissa. The subleading coefficient `a` grows with the boundary size,
    // so the truncation point keeps doubling until the fit demonstrably
    // explains the late terms to within the requested tolerance.
    let mut achieved;
    loop {
        let kf2 = k2 as f64;
        let k1 = (k2 - k2 / 8).max(k_start + 1);
        let k3 = (k2 - k2 / 4).max(k_start + 1);
        let (t1, t2, t3) = (log_term(k1), log_term(k2), log_term(k3));
        let kf1 = k1 as f64;
        let mut degenerate = k1 >= k2 || k3 >= k1;
        let a = if degenerate {
            0.0
        } else {
            let r = (t1 + exponent * kf1.ln() - t2 - exponent * kf2.ln()).exp();
            (r - 1.0) / (1.0 / kf1 - 1.0 / kf2)
        };
        if 1.0 + a / kf2 < 0.25 {
            degenerate = true;
        }
        let log_c = t2 + exponent * kf2.ln() - (1.0 + a / kf2).max(0.25).ln();
        let zeta0 = hurwitz_zeta(exponent, kf2 + 1.0);
        let corr = (1.0 + a * hurwitz_zeta(exponent + 1.0, kf2 + 1.0) / zeta0).clamp(0.25, 4.0);
        let tail = zeta0 * corr;
        // Cross-validation: relative misfit of the model at k3 bounds the
        // relative misfit beyond k2 (the correction terms shrink with k).
        let mis = if degenerate {
            1.0
        } else {
            let kf3 = k3 as f64;
            let model3 = log_c - exponent * kf3.ln() + (1.0 + a / kf3).max(0.25).ln();
            (t3 - model3).exp_m1().abs()
        };
        let partial = acc.log_total();
        let log_tail = log_c + tail.ln();
        let log_total = if partial >= log_tail {
            partial + (log_tail - partial).exp().ln_1p()
        } else {
            log_tail + (partial - log_tail).exp().ln_1p()
        };
        let tail_rel = (log_tail - log_total).exp();
        let round_err = 1e-15 * ((k2 - k_start) as f64).sqrt();
        achieved = tail_rel * (2.0 * mis + 16.0 / (kf2 * kf2)) + round_err;
        if achieved <= rel_tol {
            return Ok(SeriesValue {
                log_value: log_total,
                rel_error: achieved,
                terms_used: k2 - k_start + 1,
            });
        }
        if k2 >= max_k {
            break;
        }
        let next = (2 * k2).min(max_k);
        for k in k2 + 1..=next {
            acc.add_log(log_term(k));
        }
        k2 = next;
    }
    Err(Error::SeriesTolerance {
        max_k,
        rel_tol,
        achieved,
    })
}

/// Memoized log-scale enumeration tables.
///
/// Immutable after construction; cheap to share between simulation workers.
#[derive(Debug)]
pub struct EnumCache {
    max_k: u64,
    log_z1_one: OnceLock<f64>,
}

impl EnumCache {
    /// `max_k` bounds the truncation of every series evaluated through this
    /// cache (default `1e5` is enough for ~1e-7 relative tails).
    pub fn new(max_k: u64) -> Self {
        Self {
            max_k,
            log_z1_one: OnceLock::new(),
        }
    }

    pub fn max_k(&self) -> u64 {
        self.max_k
    }

    /// `ln Card T^1(L, k)`; the pair `(1, 0)` is outside the formula's domain.
    pub fn log_card_t1(&self, l: u64, k: u64) -> Result<f64> {
        if l == 0 {
            return Err(Error::Domain("log_card_t1 requires L >= 1".into()));
        }
        if (l, k) == (1, 0) {
            return Err(Error::Domain(
                "Card T1(1, 0) is excluded by the enumeration formula".into(),
            ));
        }
        let lf = l as f64;
        let kf = k as f64;
        Ok((kf - 1.0) * (4.0f64).ln()
            + log_double_factorial(2 * l as i64 + 3 * k as i64 - 5)
            - log_factorial(k)
            - log_double_factorial(2 * l as i64 + k as i64 - 1)
            + lf.ln()
            + log_binomial(2 * l, l))
    }

    /// `ln Card T^2(L, p, k)` for triangulations of the annulus.
    pub fn log_card_t2(&self, l: u64, p: u64, k: u64) -> Result<f64> {
        if l == 0 || p == 0 {
            return Err(Error::Domain("log_card_t2 requires L, p >= 1".into()));
        }
        let s = (l + p) as i64;
        Ok(k as f64 * (4.0f64).ln()
            + log_double_factorial(2 * s + 3 * k as i64 - 2)
            - log_factorial(k)
            - log_double_factorial(2 * s + k as i64)
            + (l as f64).ln()
            + log_binomial(2 * l, l)
            + (p as f64).ln()
            + log_binomial(2 * p, p))
    }

    /// `ln C^(1)(k) = ln( 3^(k-2)/(4 sqrt(2 pi)) * k * binom(2k, k) )`.
    pub fn log_c1(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("log_c1 requires k >= 1".into()));
        }
        let kf = k as f64;
        Ok((kf - 2.0) * (3.0f64).ln() - (4.0 * (2.0 * core::f64::consts::PI).sqrt()).ln()
            + kf.ln()
            + log_binomial(2 * k, k))
    }

    /// `ln Z^1(L)`. Closed form for `L >= 2`; the stated constant at `L = 0`.
    ///
    /// At `L = 1` the closed form would need `(-3)!!`, which the convention
    /// does not define, so the value is obtained from the series instead and
    /// memoized.
    pub fn log_z1(&self, l: u64) -> f64 {
        match l {
            0 => Z1_ZERO.ln(),
            1 => *self.log_z1_one.get_or_init(|| {
                self.log_z1_series(1, 1e-9)
                    .expect("Z1(1) series must converge at default truncation")
                    .log_value
            }),
            _ => {
                let lf = l as f64;
                lf * (6.0f64).ln() + log_double_factorial(2 * l as i64 - 5)
                    - (8.0 * (3.0f64).sqrt()).ln()
                    - log_factorial(l)
            }
        }
    }

    /// `Z^1(L)` in linear scale; overflows for very large `L` like the count
    /// itself does.
    pub fn z1(&self, l: u64) -> f64 {
        self.log_z1(l).exp()
    }

    /// Series evaluation of `ln Z^1(L)` with a guaranteed relative error.
    pub fn log_z1_series(&self, l: u64, rel_tol: f64) -> Result<SeriesValue> {
        if rel_tol <= 0.0 {
            return Err(Error::Domain("rel_tol must be positive".into()));
        }
        if l == 0 {
            // Single interpretation via the paper's convention.
            return Ok(SeriesValue {
                log_value: Z1_ZERO.ln(),
                rel_error: 0.0,
                terms_used: 1,
            });
        }
        let k_start = if l == 1 { 1 } else { 0 };
        power_tail_series(
            |k| match self.log_card_t1(l, k) {
                Ok(v) => v - k as f64 * LOG_WEIGHT_BASE,
                Err(_) => f64::NEG_INFINITY,
            },
            k_start,
            2.5,
            rel_tol,
            self.max_k,
        )
    }

    /// `Z^1(L)` by series, linear scale.
    pub fn z1_series(&self, l: u64, rel_tol: f64) -> Result<f64> {
        Ok(self.log_z1_series(l, rel_tol)?.log_value.exp())
    }

    /// Series evaluation of `ln Z^2(L, p)`.
    pub fn log_z2_series(&self, l: u64, p: u64, rel_tol: f64) -> Result<SeriesValue> {
        if l == 0 || p == 0 {
            return Err(Error::Domain("log_z2_series requires L, p >= 1".into()));
        }
        if rel_tol <= 0.0 {
            return Err(Error::Domain("rel_tol must be positive".into()));
        }
        power_tail_series(
            |k| match self.log_card_t2(l, p, k) {
                Ok(v) => v - k as f64 * LOG_WEIGHT_BASE,
                Err(_) => f64::NEG_INFINITY,
            },
            0,
            1.5,
            rel_tol,
            self.max_k,
        )
    }

    /// `Z^2(L, p)` by series, linear scale.
    pub fn z2_series(&self, l: u64, p: u64, rel_tol: f64) -> Result<f64> {
        Ok(self.log_z2_series(l, p, rel_tol)?.log_value.exp())
    }
}

impl Default for EnumCache {
    fn default() -> Self {
        Self::new(100_000)
    }
}
