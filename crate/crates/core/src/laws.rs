//! Closed-form registry: every analytic law verified by the Monte Carlo
//! experiments, plus the exact scalar identities used as oracles.
//!
//! All functions are pure and panic-free on their stated domains.

use core::f64::consts::PI;

use crate::error::Result;
use crate::quad;

/// Scaling constants attached to a boundary-size parameter `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusParams {
    /// Outer perimeter (continuum units).
    pub a: f64,
    /// Inner (target) perimeter.
    pub b: f64,
    /// Hull radius.
    pub r: f64,
}

impl AnnulusParams {
    pub fn new(a: f64, b: f64, r: f64) -> Self {
        assert!(a > 0.0 && b > 0.0 && r > 0.0);
        Self { a, b, r }
    }

    /// Height rescaling `c_L = sqrt(3/2) L^(-1/2)`.
    pub fn height_scale(l: u64) -> f64 {
        (1.5f64).sqrt() / (l as f64).sqrt()
    }

    /// Volume rescaling `(3/4) L^-2`.
    pub fn volume_scale(l: u64) -> f64 {
        0.75 / (l as f64 * l as f64)
    }
}

/// Probability that the exploration started from outer perimeter `a` reaches
/// inner perimeter `b` before swallowing the whole surface: `a/(a+b)`.
pub fn hit_prob(a: f64, b: f64) -> f64 {
    a / (a + b)
}

/// Quadrature check of the identity behind [`hit_prob`]:
/// `(3/2) a^(3/2) int_0^b (a+z)^(-5/2) sqrt((b-z)/b) dz = b/(a+b)`.
/// Returns the absolute deviation.
pub fn hit_prob_integral_check(a: f64, b: f64) -> Result<f64> {
    // z = b - t^2 removes the sqrt endpoint kink.
    let integrand = move |t: f64| {
        let z = b - t * t;
        1.5 * a.powf(1.5) * (a + z).powf(-2.5) * (t / b.sqrt()) * 2.0 * t
    };
    let q = quad::integrate(integrand, 0.0, b.sqrt(), 1e-11)?;
    Ok((q - b / (a + b)).abs())
}

/// Density of the hull perimeter at radius `r` (restricted to `{r < r_*}`),
/// with respect to Lebesgue measure on `(0, inf)`:
/// `3 sqrt(3/(2 pi)) r^-3 (a/(a+y)) sqrt(y) exp(-3y/(2 r^2))`.
pub fn perimeter_hull_density(r: f64, a: f64, y: f64) -> f64 {
    3.0 * (3.0 / (2.0 * PI)).sqrt() * r.powi(-3) * (a / (a + y)) * y.sqrt()
        * (-1.5 * y / (r * r)).exp()
}

/// Total mass of [`perimeter_hull_density`] over `y`, i.e. `P(r < r_*)`.
pub fn perimeter_hull_mass(r: f64, a: f64) -> Result<f64> {
    // y = t^2 removes the sqrt(y) kink at 0.
    let f = move |t: f64| perimeter_hull_density(r, a, t * t) * 2.0 * t;
    let split = 4.0 * r;
    quad::integrate_halfline(f, split, 1e-11)
}

/// First moment of the annulus length:
/// `sqrt(3 pi / 2) (a+b) (sqrt(1/a) + sqrt(1/b) - sqrt(1/a + 1/b))`.
pub fn expected_length(a: f64, b: f64) -> f64 {
    (1.5 * PI).sqrt() * (a + b) * ((1.0 / a).sqrt() + (1.0 / b).sqrt() - (1.0 / a + 1.0 / b).sqrt())
}

/// Asymptotic tail of the annulus length: `P(L > u) ~ 3 (a+b) u^-2`.
pub fn tail_asymptote(a: f64, b: f64, u: f64) -> f64 {
    3.0 * (a + b) / (u * u)
}

/// CSBP extinction CDF: `P_x(Z_t = 0) = exp(-3x/(2 t^2))`.
pub fn extinction_cdf(x: f64, t: f64) -> f64 {
    (-1.5 * x / (t * t)).exp()
}

/// Probability that the spectrally positive Levy path started at `z < b`
/// never hits `b`: `sqrt((b - z)+ / b)`.
pub fn levy_never_hits(z: f64, b: f64) -> f64 {
    ((b - z).max(0.0) / b).sqrt()
}

/// Scale function of the dual (spectrally negative) Levy process,
/// `W(u) = sqrt(3 u / (2 pi))`; the grouping is pinned by the Laplace
/// identity `int e^{-lambda u} W(u) du = 1/psi(lambda)`.
pub fn scale_w(u: f64) -> f64 {
    (1.5 * u / PI).sqrt()
}

/// Scale function of the `psi~(lambda) = 3^(-1/2) lambda^(3/2)` process,
/// `W~(x) = (2 sqrt(3)/sqrt(pi)) sqrt(x)`.
pub fn scale_wtilde(x: f64) -> f64 {
    2.0 * (3.0f64).sqrt() / PI.sqrt() * x.sqrt()
}

/// Quadrature check of `int_0^inf e^{-lambda u} W(u) du = 1/psi(lambda)`.
/// Returns the absolute deviation.
pub fn scale_w_laplace_check(lambda: f64) -> Result<f64> {
    let f = move |t: f64| (-lambda * t * t).exp() * scale_w(t * t) * 2.0 * t;
    let q = quad::integrate_halfline(f, (4.0 / lambda).sqrt(), 1e-11)?;
    Ok((q - 1.0 / crate::csbp::psi(lambda)).abs())
}

/// Quadrature check of `int_0^inf e^{-lambda x} W~(x) dx = sqrt(3) lambda^(-3/2)`.
pub fn scale_wtilde_laplace_check(lambda: f64) -> Result<f64> {
    let f = move |t: f64| (-lambda * t * t).exp() * scale_wtilde(t * t) * 2.0 * t;
    let q = quad::integrate_halfline(f, (4.0 / lambda).sqrt(), 1e-11)?;
    Ok((q - (3.0f64).sqrt() * lambda.powf(-1.5)).abs())
}

/// Expected occupation density of the CSBP started from the `a = 1` initial
/// law: `E int f(Z_t) dt = sqrt(3/(2 pi)) int f(y) / (sqrt(y) (1+y)) dy`.
pub fn occupation_density(y: f64) -> f64 {
    (1.5 / PI).sqrt() / (y.sqrt() * (1.0 + y))
}

/// Quadrature of `sqrt(3/(2 pi)) int f(y)/(sqrt(y)(1+y)) dy` for an `f` with
/// `f(0) = 0` and enough decay at infinity.
pub fn occupation_integral_reference(f: impl Fn(f64) -> f64 + Copy) -> Result<f64> {
    let g = move |t: f64| {
        let y = t * t;
        // sqrt(y) cancels against the substitution jacobian 2t.
        2.0 * (1.5 / PI).sqrt() * f(y) / (1.0 + y)
    };
    quad::integrate_halfline(g, 4.0, 1e-11)
}

/// Exit-measure Laplace functional:
/// `N_0(1 - exp(-mu Z_s)) = (mu^(-1/2) + sqrt(2/3) |s|)^(-2)`.
pub fn exit_laplace(mu: f64, s: f64) -> f64 {
    let base = mu.powf(-0.5) + (2.0f64 / 3.0).sqrt() * s.abs();
    base.powi(-2)
}

/// Quadrature check of the convolution identity
/// `int_0^y (a+z)^(-3/2) (y-z)^(-1/2) dz = 2 sqrt(y) / (sqrt(a) (a+y))`.
/// Returns the absolute deviation.
pub fn convolution_identity_check(a: f64, y: f64) -> Result<f64> {
    // z = y - t^2 removes the inverse-sqrt endpoint singularity.
    let f = move |t: f64| 2.0 * (a + y - t * t).powf(-1.5);
    let q = quad::integrate(f, 0.0, y.sqrt(), 1e-11)?;
    Ok((q - 2.0 * y.sqrt() / (a.sqrt() * (a + y))).abs())
}

/// Quadrature check that the limiting death-time density integrates to one:
/// `(sqrt(3 pi)/4) (2 sqrt(3)/sqrt(pi)) int_0^inf (1+x)^(-5/2) dx = 1`.
pub fn normalization_identity_check() -> Result<f64> {
    let prefactor = (3.0 * PI).sqrt() / 4.0 * 2.0 * (3.0f64).sqrt() / PI.sqrt();
    // Map [0, inf) to [0, 1).
    let f = move |t: f64| {
        let om = 1.0 - t;
        (1.0 + t / om).powf(-2.5) / (om * om)
    };
    let q = quad::integrate(f, 0.0, 1.0 - 1e-12, 1e-12)?;
    Ok((prefactor * q - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_prob_values() {
        assert_eq!(hit_prob(1.0, 1.0), 0.5);
        assert_eq!(hit_prob(1.0, 3.0), 0.25);
        assert!((hit_prob(1.0, 1e-12) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn hit_prob_integral_identity() {
        assert!(hit_prob_integral_check(1.0, 1.0).unwrap() <= 1e-8);
        assert!(hit_prob_integral_check(2.0, 5.0).unwrap() <= 1e-8);
        assert!(hit_prob_integral_check(1.0, 1e-4).unwrap() <= 1e-8);
    }

    #[test]
    fn hull_density_values() {
        assert_eq!(perimeter_hull_density(1.0, 1.0, 0.0), 0.0);
        let v = perimeter_hull_density(1.0, 1.0, 1.0);
        let expect = 3.0 * (1.5 / PI).sqrt() * 0.5 * (-1.5f64).exp();
        assert!((v - expect).abs() < 1e-12);
        assert!((expect - 0.2312).abs() < 1e-4);
        let mass = perimeter_hull_mass(1.0, 1.0).unwrap();
        assert!(mass > 0.0 && mass < 1.0);
        // Frozen from an independent high-precision quadrature.
        assert!((mass - 0.5697916494).abs() < 1e-8, "mass = {mass}");
    }

    #[test]
    fn expected_length_values() {
        let v = expected_length(1.0, 1.0);
        assert!((v - (1.5 * PI).sqrt() * 2.0 * (2.0 - (2.0f64).sqrt())).abs() < 1e-12);
        assert!((v - 2.5433).abs() < 1e-4);
    }

    #[test]
    fn expected_length_symmetry_and_scaling() {
        let grid = [0.3, 0.7, 1.0, 2.5, 10.0];
        for &a in &grid {
            for &b in &grid {
                let v = expected_length(a, b);
                assert!((v - expected_length(b, a)).abs() < 1e-12 * v);
                for &c in &[0.25, 4.0, 9.0] {
                    let scaled = expected_length(c * a, c * b);
                    assert!(
                        (scaled - c.sqrt() * v).abs() < 1e-12 * scaled,
                        "a={a} b={b} c={c}"
                    );
                }
            }
        }
    }

    #[test]
    fn tail_asymptote_values() {
        assert!((tail_asymptote(1.0, 1.0, 10.0) - 0.06).abs() < 1e-15);
        assert!((tail_asymptote(1.0, 1.0, 20.0) - 0.015).abs() < 1e-15);
        let c10 = tail_asymptote(1.0, 2.0, 10.0) * 100.0;
        let c20 = tail_asymptote(1.0, 2.0, 20.0) * 400.0;
        assert!((c10 - c20).abs() < 1e-12);
    }

    #[test]
    fn extinction_cdf_values() {
        assert_eq!(extinction_cdf(0.0, 1.0), 1.0);
        assert!((extinction_cdf(2.0 / 3.0, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((extinction_cdf(1.0, 1e6) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn levy_never_hits_values() {
        assert_eq!(levy_never_hits(1.0, 1.0), 0.0);
        assert_eq!(levy_never_hits(2.0, 1.0), 0.0);
        assert!((levy_never_hits(0.36, 1.0) - 0.8).abs() < 1e-12);
        assert_eq!(levy_never_hits(0.0, 5.0), 1.0);
    }

    #[test]
    fn scale_functions() {
        assert_eq!(scale_w(0.0), 0.0);
        assert_eq!(scale_wtilde(0.0), 0.0);
        assert!((scale_w(2.0 * PI / 3.0) - 1.0).abs() < 1e-12);
        assert!(scale_w_laplace_check(1.0).unwrap() <= 1e-8);
        assert!(scale_wtilde_laplace_check(1.0).unwrap() <= 1e-8);
        // 1/psi(1) = sqrt(3/8)
        let q = quad::integrate_halfline(
            |t: f64| (-t * t).exp() * scale_w(t * t) * 2.0 * t,
            2.0,
            1e-11,
        )
        .unwrap();
        assert!((q - (3.0f64 / 8.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn occupation_density_values() {
        let v = occupation_density(1.0);
        assert!((v - (1.5 / PI).sqrt() / 2.0).abs() < 1e-12);
        assert!((v - 0.3455).abs() < 1e-4);
        // y^{-3/2} decay
        let r = occupation_density(1e6) / occupation_density(4e6);
        assert!((r - 8.0).abs() < 0.01);
    }

    #[test]
    fn occupation_reference_value() {
        let v = occupation_integral_reference(|y| y * (-y).exp()).unwrap();
        // Frozen from an independent high-precision quadrature.
        assert!((v - 0.2965448350).abs() < 1e-8, "got {v}");
    }

    #[test]
    fn exit_laplace_values() {
        assert!((exit_laplace(1.0, 0.0) - 1.0).abs() < 1e-12);
        assert!((exit_laplace(4.0, 0.0) - 4.0).abs() < 1e-12);
        let v = exit_laplace(1.0, 1.0);
        assert!((v - (1.0 + (2.0f64 / 3.0).sqrt()).powi(-2)).abs() < 1e-12);
        assert!((v - 0.30306).abs() < 1e-4);
        assert!(exit_laplace(1.0, 2.0) < exit_laplace(1.0, 1.0));
    }

    #[test]
    fn convolution_identity() {
        assert!(convolution_identity_check(1.0, 1.0).unwrap() <= 1e-8);
        assert!(convolution_identity_check(4.0, 1.0).unwrap() <= 1e-8);
        assert!(convolution_identity_check(1.0, 1e-6).unwrap() <= 1e-8);
    }

    #[test]
    fn normalization_identity() {
        assert!(normalization_identity_check().unwrap() <= 1e-10);
    }
}
