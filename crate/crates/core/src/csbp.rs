//! The continuum side: a continuous-state branching process with branching
//! mechanism `psi(l) = sqrt(8/3) l^(3/2)`, simulated as a Lamperti time change
//! of a centered spectrally positive 3/2-stable Levy process.
//!
//! Stable-law parameter conventions are a classic silent-bug source, so the
//! (skew, scale) mapping is derived here once and pinned by Laplace-oracle
//! tests rather than copied from a formula table. In the Samorodnitsky-Taqqu
//! 1-parameterization `S_a(sigma, beta, mu)` with `1 < a < 2`, `beta = 1`,
//! `mu = 0`, the Laplace transform is
//! `E[exp(-l X)] = exp(-sigma^a sec(pi a / 2) l^a)`, and `sec(3 pi / 4) =
//! -sqrt(2)`, so matching `exp(dt psi(l))` forces
//! `sigma(dt) = (2 dt / sqrt(3))^(2/3)`; `mu = 0` already gives mean zero.

use rand::Rng;

use crate::error::{Error, Result};

/// Branching mechanism `sqrt(8/3) * lambda^(3/2)`.
pub fn psi(lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "psi requires lambda >= 0, got {lambda}");
    (8.0f64 / 3.0).sqrt() * lambda.powf(1.5)
}

/// Values below this floor are treated as extinct; the Lamperti time change
/// degenerates at 0 and the extinction-law tests bound the induced bias.
pub const EXTINCTION_FLOOR: f64 = 1e-8;

/// Chambers-Mallows-Stuck sampler for the standardized totally skewed
/// 3/2-stable law, scaled so increments match the Laplace exponent `psi`.
#[derive(Debug, Clone, Copy)]
pub struct StableSampler {
    alpha: f64,
    shift_b: f64,
    scale_s: f64,
}

impl StableSampler {
    pub fn new() -> Self {
        let alpha = 1.5;
        // beta = 1: B = atan(beta tan(pi alpha/2)) / alpha = -pi/6,
        //           S = (1 + beta^2 tan^2(pi alpha/2))^(1/(2 alpha)) = 2^(1/3).
        Self {
            alpha,
            shift_b: -core::f64::consts::FRAC_PI_6,
            scale_s: 2.0f64.powf(1.0 / 3.0),
        }
    }

    /// One draw from `S_{3/2}(1, 1, 0)` in the 1-parameterization.
    pub fn standard(&self, rng: &mut impl Rng) -> f64 {
        let a = self.alpha;
        let u = core::f64::consts::PI * (rng.random::<f64>() - 0.5);
        let w: f64 = -(1.0 - rng.random::<f64>()).ln();
        self.scale_s * (a * (u + self.shift_b)).sin() / u.cos().powf(1.0 / a)
            * ((u - a * (u + self.shift_b)).cos() / w).powf((1.0 - a) / a)
    }

    /// Scale carried by an increment over Levy time `dt`.
    pub fn sigma(&self, dt: f64) -> f64 {
        (2.0 * dt / 3.0f64.sqrt()).powf(2.0 / 3.0)
    }

    /// Centered Levy increment over `dt`: `E[exp(-l inc)] = exp(dt psi(l))`.
    pub fn increment(&self, dt: f64, rng: &mut impl Rng) -> f64 {
        assert!(dt > 0.0);
        self.sigma(dt) * self.standard(rng)
    }
}

impl Default for StableSampler {
    fn default() -> Self {
        Self::new()
    }
}

/// Free-function form of [`StableSampler::increment`].
pub fn sample_stable_increment(dt: f64, rng: &mut impl Rng) -> f64 {
    StableSampler::new().increment(dt, rng)
}

/// Quantile of the initial-perimeter law with density
/// `(3/2) a^(3/2) (a+z)^(-5/2)`: `z = a ((1-u)^(-2/3) - 1)`.
pub fn initial_perimeter_quantile(a: f64, u: f64) -> f64 {
    assert!(a > 0.0 && (0.0..1.0).contains(&u));
    a * ((1.0 - u).powf(-2.0 / 3.0) - 1.0)
}

/// Draw the starting perimeter for hull radius `a` by inverse CDF.
pub fn sample_initial_perimeter(a: f64, rng: &mut impl Rng) -> f64 {
    initial_perimeter_quantile(a, rng.random())
}

/// Discretized trajectory on the grid `0, dt, 2 dt, ...`.
#[derive(Debug, Clone)]
pub struct CsbpPath {
    pub dt: f64,
    pub z0: f64,
    pub values: Vec<f64>,
    /// First grid time at which the path is 0; `None` when the horizon was
    /// exhausted first.
    pub extinction_time: Option<f64>,
    pub running_max: f64,
}

impl CsbpPath {
    pub fn extinct(&self) -> bool {
        self.extinction_time.is_some()
    }

    /// Last grid time, extinct or not.
    pub fn final_time(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// True iff the running maximum reaches `b`. The Levy driver has no
    /// negative jumps, so the continuum path crosses every level below its
    /// maximum continuously; on the grid this undercounts by at most the
    /// within-step overshoot.
    pub fn visits_level(&self, b: f64) -> bool {
        assert!(b > 0.0);
        self.running_max >= b
    }

    /// Last down-crossing time of level `b`, linearly interpolated between
    /// the bracketing grid points. `None` when the level is never reached or
    /// the path still sits above `b` at the horizon.
    pub fn last_passage(&self, b: f64) -> Option<f64> {
        if !self.visits_level(b) {
            return None;
        }
        for i in (0..self.values.len() - 1).rev() {
            let (hi, lo) = (self.values[i], self.values[i + 1]);
            if hi >= b && lo < b {
                let frac = (hi - b) / (hi - lo);
                return Some(self.dt * (i as f64 + frac));
            }
        }
        // z0 < b with an upcrossing can only happen jointly with a later
        // down-crossing, so reaching here means the path started at or above
        // b and never came down within the horizon.
        None
    }

    /// Value at time `extinction_time - r` (linear interpolation); `None`
    /// unless the path went extinct strictly later than `r`.
    pub fn perimeter_at_radius(&self, r: f64) -> Option<f64> {
        assert!(r > 0.0);
        let t0 = self.extinction_time?;
        if t0 <= r {
            return None;
        }
        let pos = (t0 - r) / self.dt;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let v = if i + 1 < self.values.len() {
            self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
        } else {
            self.values[i]
        };
        Some(v)
    }

    /// Riemann sum of `f` along the path over its lifetime. Caller must
    /// supply `f` with `f(0) = 0` and enough decay for the occupation
    /// integral to converge; both are asserted where cheap.
    pub fn occupation_integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        debug_assert!(f(0.0) == 0.0, "occupation functional must vanish at 0");
        self.values.iter().map(|&z| f(z)).sum::<f64>() * self.dt
    }
}

/// Euler-Lamperti scheme: each CSBP step of length `dt` consumes Levy time
/// `dt * z` at current state `z`; the path is absorbed at the first crossing
/// of the extinction floor.
pub fn simulate_csbp(
    z0: f64,
    dt: f64,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<CsbpPath> {
    if !(dt > 0.0) || !(horizon > 0.0) || !(z0 >= 0.0) {
        return Err(Error::Domain(format!(
            "simulate_csbp needs z0 >= 0, dt > 0, horizon > 0 (got {z0}, {dt}, {horizon})"
        )));
    }
    let sampler = StableSampler::new();
    let steps = (horizon / dt).ceil() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut z = z0;
    let mut running_max = z0;
    let mut extinction_time = None;
    values.push(z);
    if z <= EXTINCTION_FLOOR {
        return Ok(CsbpPath {
            dt,
            z0,
            values: vec![0.0],
            extinction_time: Some(0.0),
            running_max: z0,
        });
    }
    for step in 1..=steps {
        z += sampler.increment(dt * z, rng);
        if z <= EXTINCTION_FLOOR {
            extinction_time = Some(step as f64 * dt);
            values.push(0.0);
            break;
        }
        running_max = running_max.max(z);
        values.push(z);
    }
    Ok(CsbpPath {
        dt,
        z0,
        values,
        extinction_time,
        running_max,
    })
}
