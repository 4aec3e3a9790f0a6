//! Adaptive quadrature used by the closed-form law checks.
//!
//! Plain adaptive Simpson with error sharing; callers are expected to
//! substitute away endpoint singularities (all the identities checked here
//! have at worst `sqrt` singularities, removed by `u = sqrt(x - a)` type
//! changes of variable) before integrating.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 48;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 {
        return None;
    }
    if delta.abs() <= 15.0 * tol {
        return Some(left + right + delta / 15.0);
    }
    let l = adapt(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let r = adapt(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Some(l + r)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || tol <= 0.0 {
        return Err(Error::Quadrature { a, b, tol });
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    adapt(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH).ok_or(Error::Quadrature { a, b, tol })
}

/// Integrate `f` over `[0, inf)` for integrands with (at least) exponential
/// decay: the domain is split at `split` and the tail is mapped to `[0, 1)`
/// via `x = split + t/(1-t)`.
pub fn integrate_halfline(f: impl Fn(f64) -> f64 + Copy, split: f64, tol: f64) -> Result<f64> {
    let head = integrate(f, 0.0, split, tol / 2.0)?;
    let tail = integrate(
        move |t: f64| {
            let om = 1.0 - t;
            f(split + t / om) / (om * om)
        },
        0.0,
        1.0 - 1e-12,
        tol / 2.0,
    )?;
    Ok(head + tail)
}
