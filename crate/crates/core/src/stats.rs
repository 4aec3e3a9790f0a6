//! Statistical comparison machinery: confidence intervals, goodness-of-fit
//! tests, tail-exponent fits, and the summary-report schema shared by every
//! experiment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quad;

/// Versioned experiment summary; serialized as the JSON contract
/// `{schema, id, config, n, estimate, ci, reference, statistic, threshold, verdict}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub schema: u32,
    pub id: String,
    pub config: serde_json::Value,
    pub n: u64,
    pub estimate: f64,
    pub ci: [f64; 2],
    pub reference: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub verdict: String,
}

impl SummaryReport {
    /// Verdict is derived from `(statistic, threshold)` alone: pass iff
    /// `statistic <= threshold`.
    pub fn new(
        id: impl Into<String>,
        config: serde_json::Value,
        n: u64,
        estimate: f64,
        ci: (f64, f64),
        reference: f64,
        statistic: f64,
        threshold: f64,
    ) -> Self {
        assert!(ci.0 <= estimate && estimate <= ci.1, "ci must bracket the estimate");
        Self {
            schema: 1,
            id: id.into(),
            config,
            n,
            estimate,
            ci: [ci.0, ci.1],
            reference,
            statistic,
            threshold,
            verdict: if statistic <= threshold { "pass" } else { "fail" }.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == "pass"
    }
}

/// Wilson score interval for a binomial proportion at the given confidence
/// level (e.g. `0.99`).
pub fn wilson_ci(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials);
    assert!((0.0..1.0).contains(&level));
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Standard error of a binomial proportion estimate.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Empirical CDF over an owned, sorted sample.
#[derive(Debug, Clone)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut sample: Vec<f64>) -> Self {
        assert!(!sample.is_empty(), "ECDF needs a nonempty sample");
        assert!(sample.iter().all(|x| x.is_finite()));
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self { sorted: sample }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Right-continuous evaluation `P(X <= x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.sorted.partition_point(|&v| v <= x);
        idx as f64 / self.sorted.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    /// Empirical survival `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        1.0 - self.eval(x)
    }
}

/// One-sample Kolmogorov-Smirnov statistic of a sorted sample against `cdf`.
pub fn ks_statistic(sample: &Ecdf, cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sample.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sample.values().iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((i as f64 / n - f).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    sup
}

/// Asymptotic critical value for the one-sample KS statistic at significance
/// `alpha`: `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Two-sample KS statistic (both samples sorted inside their `Ecdf`s).
pub fn ks_two_sample(a: &Ecdf, b: &Ecdf) -> f64 {
    let mut sup: f64 = 0.0;
    for &x in a.values() {
        sup = sup.max((a.eval(x) - b.eval(x)).abs());
    }
    for &x in b.values() {
        sup = sup.max((a.eval(x) - b.eval(x)).abs());
    }
    sup
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_two_sample_critical(alpha: f64, n: usize, m: usize) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Pearson chi-square of a sample against a (possibly unnormalized) density.
///
/// Bins are equal-width over the sample range with a final overflow bin;
/// expected masses come from adaptive quadrature of the normalized density;
/// adjacent bins with expected count `< 5` are merged. Returns the statistic
/// and the degrees of freedom (`bins_after_merge - 1`).
pub fn chisq_vs_density(
    sample: &Ecdf,
    density: impl Fn(f64) -> f64 + Copy,
    bins: usize,
) -> Result<(f64, usize)> {
    assert!(bins >= 5);
    let n = sample.len() as f64;
    let lo = sample.values()[0].min(0.0);
    let hi = *sample.values().last().unwrap();
    if !(hi > lo) {
        return Err(Error::Domain("degenerate sample for chi-square".into()));
    }
    let width = (hi - lo) / bins as f64;

    // Unnormalized bin masses, then normalize so expected counts sum to n.
    let mut masses = Vec::with_capacity(bins);
    for i in 0..bins {
        let a = lo + i as f64 * width;
        let b = a + width;
        masses.push(quad::integrate(density, a, b, 1e-10)?);
    }
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("density mass vanishes on sample range".into()));
    }

    let mut observed = vec![0.0f64; bins];
    for &x in sample.values() {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        observed[idx] += 1.0;
    }

    // Merge low-expectation bins left to right.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for i in 0..bins {
        acc.0 += observed[i];
        acc.1 += n * masses[i] / total;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    if merged.len() < 2 {
        return Err(Error::Domain("fewer than two usable chi-square bins".into()));
    }
    let stat: f64 = merged
        .iter()
        .map(|&(o, e)| (o - e) * (o - e) / e)
        .sum();
    Ok((stat, merged.len() - 1))
}

/// Upper quantile of the chi-square distribution: threshold such that
/// `P(X > threshold) = alpha` at `dof` degrees of freedom.
pub fn chisq_critical(alpha: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Result of a least-squares power-law tail fit `P(X > u) ~ C u^exponent`.
#[derive(Debug, Clone, Copy)]
pub struct TailFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// Exceedance count at the largest grid point; fits resting on fewer
    /// than 100 exceedances are flagged unreliable.
    pub min_exceedances: u64,
    pub reliable: bool,
}

/// Fit `log P(X > u) = log C + exponent * log u` over `u_grid`.
pub fn tail_coefficient(sample: &Ecdf, u_grid: &[f64]) -> TailFit {
    assert!(!u_grid.is_empty());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut min_exc = u64::MAX;
    for &u in u_grid {
        let surv = sample.survival(u);
        let exc = (surv * sample.len() as f64).round() as u64;
        min_exc = min_exc.min(exc);
        if surv > 0.0 {
            xs.push(u.ln());
            ys.push(surv.ln());
        }
    }
    let reliable = min_exc >= 100 && xs.len() == u_grid.len();
    if xs.len() < 2 {
        return TailFit {
            coefficient: f64::NAN,
            exponent: f64::NEG_INFINITY,
            min_exceedances: min_exc,
            reliable: false,
        };
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    TailFit {
        coefficient: intercept.exp(),
        exponent: slope,
        min_exceedances: min_exc,
        reliable,
    }
}

/// Sample mean and a normal-approximation confidence interval.
pub fn mean_ci(sample: &[f64], level: f64) -> (f64, f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;
    use rand::Rng;

    #[test]
    fn wilson_endpoints() {
        assert_eq!(wilson_ci(0, 50, 0.99).0, 0.0);
        assert_eq!(wilson_ci(50, 50, 0.99).1, 1.0);
        let (lo, hi) = wilson_ci(5000, 10_000, 0.99);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!((hi - lo - 0.0258).abs() < 5e-4, "width {}", hi - lo);
    }

    #[test]
    fn ecdf_is_monotone_right_continuous() {
        let e = Ecdf::new(vec![3.0, 1.0, 2.0, 2.0]);
        assert_eq!(e.eval(0.0), 0.0);
        assert_eq!(e.eval(2.0), 0.75); // right-continuous: counts both 2.0s
        assert_eq!(e.eval(1.9999), 0.25);
        assert_eq!(e.eval(3.0), 1.0);
        let mut prev = 0.0;
        for x in [-1.0, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
            let v = e.eval(x);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ks_calibrated_on_uniform() {
        // Distribution-free check: uniform sample vs identity CDF.
        let mut rejections = 0;
        for rep in 0..50u64 {
            let mut rng = replicate_rng(1234, rep);
            let sample: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            let e = Ecdf::new(sample);
            let stat = ks_statistic(&e, |x| x.clamp(0.0, 1.0));
            if stat > ks_critical(1e-3, 10_000) {
                rejections += 1;
            }
        }
        assert!(rejections <= 1, "{rejections} of 50 runs rejected at 1e-3");
    }

    #[test]
    fn ks_constant_sample() {
        let e = Ecdf::new(vec![0.25; 100]);
        let stat = ks_statistic(&e, |x| x.clamp(0.0, 1.0));
        assert!((stat - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ks_affine_invariance() {
        let mut rng = replicate_rng(5, 0);
        let raw: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let e1 = Ecdf::new(raw.clone());
        let e2 = Ecdf::new(raw.iter().map(|x| 3.0 * x + 1.0).collect());
        let s1 = ks_statistic(&e1, |x| x.clamp(0.0, 1.0));
        let s2 = ks_statistic(&e2, |x| ((x - 1.0) / 3.0).clamp(0.0, 1.0));
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn chisq_self_consistency() {
        let mut rng = replicate_rng(99, 0);
        // Sample from Exp(1), test against its own density.
        let sample: Vec<f64> = (0..100_000)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let e = Ecdf::new(sample);
        let (stat, dof) = chisq_vs_density(&e, |x: f64| (-x).exp(), 40).unwrap();
        assert!(stat <= chisq_critical(1e-3, dof), "stat {stat}, dof {dof}");
    }

    #[test]
    fn chisq_detects_gross_mismatch() {
        let e = Ecdf::new((0..1000).map(|_| 0.05f64).collect());
        let (stat, dof) = chisq_vs_density(&e, |_| 1.0, 10).unwrap_or((f64::INFINITY, 9));
        assert!(stat > chisq_critical(1e-3, dof));
    }

    #[test]
    fn chisq_merging_preserves_total() {
        let mut rng = replicate_rng(7, 0);
        let sample: Vec<f64> = (0..5000).map(|_| rng.random::<f64>().powi(4)).collect();
        let e = Ecdf::new(sample);
        // Sample mass sits near 0 while the reference density puts almost
        // nothing there, so the left bins all fall below the merge floor;
        // the call must still succeed.
        let (stat, dof) = chisq_vs_density(&e, |x: f64| 4.0 * x * x * x, 40).unwrap();
        assert!(stat.is_finite() && dof >= 1);
    }

    #[test]
    fn tail_fit_recovers_pareto() {
        let mut rng = replicate_rng(31, 0);
        let sample: Vec<f64> = (0..1_000_000)
            .map(|_| (1.0 - rng.random::<f64>()).powf(-0.5))
            .collect();
        let e = Ecdf::new(sample);
        let grid = [3.0, 5.0, 8.0, 12.0, 20.0];
        let fit = tail_coefficient(&e, &grid);
        assert!(fit.reliable);
        assert!((fit.exponent + 2.0).abs() < 0.1, "slope {}", fit.exponent);
    }

    #[test]
    fn tail_fit_flags_light_tails() {
        let mut rng = replicate_rng(32, 0);
        let sample: Vec<f64> = (0..100_000)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let e = Ecdf::new(sample);
        let fit = tail_coefficient(&e, &[5.0, 10.0, 20.0, 30.0]);
        assert!(!fit.reliable);
    }

    #[test]
    fn report_verdict_follows_threshold() {
        let r = SummaryReport::new("t", serde_json::json!({}), 10, 0.5, (0.4, 0.6), 0.5, 1.0, 2.0);
        assert!(r.passed());
        let r = SummaryReport::new("t", serde_json::json!({}), 10, 0.5, (0.4, 0.6), 0.5, 3.0, 2.0);
        assert!(!r.passed());
    }
}
