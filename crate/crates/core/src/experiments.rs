//! Experiment drivers: replicate-parallel Monte Carlo runs for each verified
//! law, returning [`SummaryReport`]s and optionally writing CSV artifacts.
//!
//! Every run derives per-replicate RNG streams from `(seed, replicate)`, so
//! results are independent of worker scheduling; sample vectors are collected
//! in replicate order before any statistic is computed.

use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::combin::EnumCache;
use crate::csbp::{self, CsbpPath};
use crate::error::{Error, Result};
use crate::kernels::{KernelTable, Regime, VolumeSampler};
use crate::laws;
use crate::peeling::{self, InitMode, PeelTrace};
use crate::rng::replicate_rng;
use crate::stats::{self, Ecdf, SummaryReport};

/// Default CSBP horizon: long enough that unresolved paths are rare (the
/// extinction tail is `~ 3 z0 / (2 t^2)`) and counted, never silently
/// dropped.
pub const DEFAULT_HORIZON: f64 = 200.0;

fn scalar_report(id: &str, statistic: f64, threshold: f64, config: serde_json::Value) -> SummaryReport {
    SummaryReport::new(
        id,
        config,
        1,
        statistic,
        (statistic, statistic),
        0.0,
        statistic,
        threshold,
    )
}

/// Deterministic (RNG-free) verification of every exact identity: series vs
/// closed-form partition functions, kernel stochasticity, harmonicity, the
/// two finite-kernel definitions, and the quadrature oracles.
pub fn verify_exact() -> Result<Vec<SummaryReport>> {
    let enums = Arc::new(EnumCache::default());
    let mut reports = Vec::new();

    let mut worst: f64 = 0.0;
    for l in 2..=30u64 {
        let s = enums.z1_series(l, 1e-6)?;
        let z = enums.z1(l);
        worst = worst.max(((s - z) / z).abs());
    }
    reports.push(scalar_report(
        "z1-series-vs-closed",
        worst,
        1e-6,
        serde_json::json!({"L": "2..=30", "rel_tol": 1e-6}),
    ));

    let table = KernelTable::new(Regime::Infinite, enums.clone(), 0);
    let mut worst: f64 = 0.0;
    for k in 1..=500u64 {
        let sum: f64 = (-1..k as i64).map(|m| table.q_inf(k, m).unwrap()).sum();
        worst = worst.max((sum - 1.0).abs());
    }
    reports.push(scalar_report(
        "qinf-stochasticity",
        worst,
        1e-9,
        serde_json::json!({"k": "1..=500"}),
    ));

    let mut worst: f64 = 0.0;
    for &l in &[1u64, 10, 100] {
        let t = KernelTable::new(Regime::Finite(l), enums.clone(), 0);
        for k in 1..=200u64 {
            let sum: f64 = (-1..k as i64).map(|m| t.prob(k, m).unwrap()).sum();
            let total = sum + t.cemetery_prob(k)?;
            worst = worst.max((total - 1.0).abs());
        }
    }
    reports.push(scalar_report(
        "harmonicity",
        worst,
        1e-9,
        serde_json::json!({"L": [1, 10, 100], "k": "1..=200"}),
    ));

    let mut worst: f64 = 0.0;
    for &l in &[1u64, 2, 3] {
        let t = KernelTable::new(Regime::Finite(l), enums.clone(), 0);
        for k in 1..=4u64 {
            for m in -1..k as i64 {
                let direct = t.prob(k, m)?;
                let target = (k as i64 - m) as u64;
                let ratio = 2.0 * enums.z1((m + 1) as u64) * enums.z2_series(l, target, 1e-7)?
                    / enums.z2_series(l, k, 1e-7)?;
                worst = worst.max(((direct - ratio) / direct).abs());
            }
        }
    }
    reports.push(scalar_report(
        "h-transform-vs-annulus-ratio",
        worst,
        1e-4,
        serde_json::json!({"L": [1, 2, 3], "k": "1..=4"}),
    ));

    let mut worst: f64 = 0.0;
    for &(a, b) in &[(1.0, 1.0), (2.0, 5.0), (1.0, 0.25)] {
        worst = worst.max(laws::hit_prob_integral_check(a, b)?);
    }
    reports.push(scalar_report(
        "hit-prob-integral",
        worst,
        1e-8,
        serde_json::json!({"grid": [[1, 1], [2, 5], [1, 0.25]]}),
    ));

    let mut worst: f64 = 0.0;
    for &(a, y) in &[(1.0, 1.0), (4.0, 1.0), (0.5, 3.0)] {
        worst = worst.max(laws::convolution_identity_check(a, y)?);
    }
    reports.push(scalar_report(
        "convolution-identity",
        worst,
        1e-8,
        serde_json::json!({"grid": [[1, 1], [4, 1], [0.5, 3]]}),
    ));

    reports.push(scalar_report(
        "normalization-identity",
        laws::normalization_identity_check()?,
        1e-8,
        serde_json::json!({}),
    ));

    let mut w: f64 = 0.0;
    let mut wt: f64 = 0.0;
    for &lambda in &[0.5, 1.0, 2.0] {
        w = w.max(laws::scale_w_laplace_check(lambda)?);
        wt = wt.max(laws::scale_wtilde_laplace_check(lambda)?);
    }
    reports.push(scalar_report(
        "scale-w-laplace",
        w,
        1e-8,
        serde_json::json!({"lambda": [0.5, 1.0, 2.0]}),
    ));
    reports.push(scalar_report(
        "scale-wtilde-laplace",
        wt,
        1e-8,
        serde_json::json!({"lambda": [0.5, 1.0, 2.0]}),
    ));
    Ok(reports)
}

/// Discrete hitting probabilities across an `L` ladder.
pub fn peel_hit(
    a: f64,
    b: f64,
    l_list: &[u64],
    n: u64,
    seed: u64,
    init_mode: InitMode,
    max_steps: Option<u64>,
) -> Result<Vec<SummaryReport>> {
    l_list
        .iter()
        .map(|&l| {
            peeling::estimate_hit_prob(
                a,
                b,
                l,
                n,
                seed ^ l, // distinct streams per ladder rung
                init_mode,
                max_steps.unwrap_or_else(|| peeling::default_max_steps(l)),
            )
        })
        .collect()
}

/// Height-integral residual medians across an `L` ladder, plus a trend
/// report checking that the residual shrinks from the first to the last
/// rung. Optionally writes the first few traces of the final rung as CSV.
pub fn peel_height(
    l_list: &[u64],
    n: u64,
    seed: u64,
    init_mode: InitMode,
    stride_override: Option<u64>,
    csv_out: Option<&Path>,
) -> Result<Vec<SummaryReport>> {
    assert!(l_list.len() >= 2, "trend needs at least two L values");
    let enums = Arc::new(EnumCache::default());
    let mut reports = Vec::new();
    let mut medians = Vec::new();
    for (i, &l) in l_list.iter().enumerate() {
        let kernel = KernelTable::new(
            Regime::Finite(l),
            enums.clone(),
            crate::kernels::DEFAULT_MATERIALIZE_LIMIT,
        );
        let vols = VolumeSampler::new(enums.clone());
        let stride = stride_override.unwrap_or_else(|| peeling::default_stride(l));
        let max_steps = peeling::default_max_steps(l);
        let traces: Vec<PeelTrace> = (0..n)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(seed ^ l, rep);
                peeling::run_until(
                    peeling::init_state(init_mode),
                    l,
                    init_mode,
                    &kernel,
                    &vols,
                    &[],
                    max_steps,
                    stride,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let mut residuals: Vec<f64> = traces.iter().map(peeling::height_integral_residual).collect();
        residuals.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = residuals[residuals.len() / 2];
        medians.push(median);
        reports.push(SummaryReport::new(
            "peel-height",
            serde_json::json!({"L": l, "N": n, "seed": seed, "stride": stride}),
            n,
            median,
            (residuals[residuals.len() / 4], residuals[3 * residuals.len() / 4]),
            0.0,
            median,
            f64::INFINITY, // individual rungs are informational
        ));
        if i + 1 == l_list.len() {
            if let Some(path) = csv_out {
                write_peel_csv(path, &traces[..traces.len().min(8)])?;
            }
        }
    }
    let ratio = medians.last().unwrap() / medians.first().unwrap();
    reports.push(SummaryReport::new(
        "peel-height-trend",
        serde_json::json!({"L": l_list, "medians": medians}),
        n * l_list.len() as u64,
        ratio,
        (ratio, ratio),
        0.0,
        ratio,
        1.0,
    ));
    Ok(reports)
}

fn simulate_batch(
    n: u64,
    seed: u64,
    z0: impl Fn(&mut rand_chacha::ChaCha12Rng) -> f64 + Sync,
    dt: f64,
    horizon: f64,
) -> Result<Vec<CsbpPath>> {
    (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let x = z0(&mut rng);
            csbp::simulate_csbp(x, dt, horizon, &mut rng)
        })
        .collect()
}

/// KS test of the extinction-time law from fixed `z0 = x` against
/// `exp(-3x/(2 t^2))`, conditioned on extinction before the horizon (the
/// censored remainder is counted in the config echo).
pub fn csbp_extinction(
    x: f64,
    n: u64,
    dt: f64,
    seed: u64,
    horizon: Option<f64>,
) -> Result<SummaryReport> {
    let horizon = horizon.unwrap_or(DEFAULT_HORIZON);
    let paths = simulate_batch(n, seed, |_| x, dt, horizon)?;
    let times: Vec<f64> = paths.iter().filter_map(|p| p.extinction_time).collect();
    let censored = n - times.len() as u64;
    if times.len() < 100 {
        return Err(Error::Domain("almost all extinction times censored".into()));
    }
    let kept = times.len();
    let norm = laws::extinction_cdf(x, horizon);
    let ecdf = Ecdf::new(times);
    let stat = stats::ks_statistic(&ecdf, |t| {
        if t <= 0.0 {
            0.0
        } else {
            laws::extinction_cdf(x, t) / norm
        }
    });
    let threshold = stats::ks_critical(1e-3, kept);
    Ok(SummaryReport::new(
        "csbp-extinction",
        serde_json::json!({"x": x, "N": n, "dt": dt, "seed": seed,
                           "horizon": horizon, "censored": censored}),
        kept as u64,
        stat,
        (stat, stat),
        0.0,
        stat,
        threshold,
    ))
}

struct LengthRun {
    n_visit: u64,
    n_resolved: u64,
    n_unresolved: u64,
    passages: Vec<f64>,
}

fn run_length_batch(
    a: f64,
    b: f64,
    n: u64,
    dt: f64,
    seed: u64,
    horizon: Option<f64>,
) -> Result<LengthRun> {
    let horizon = horizon.unwrap_or(DEFAULT_HORIZON);
    let acc = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let z0 = csbp::sample_initial_perimeter(a, &mut rng);
            let path = csbp::simulate_csbp(z0, dt, horizon, &mut rng)?;
            let visited = path.visits_level(b);
            // A live path that never reached b is ambiguous; a live path
            // that did reach b still lacks its final down-crossing.
            if !path.extinct() {
                return Ok((0u64, 0u64, 1u64, None));
            }
            Ok((visited as u64, 1, 0, path.last_passage(b)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = LengthRun {
        n_visit: 0,
        n_resolved: 0,
        n_unresolved: 0,
        passages: Vec::new(),
    };
    for (v, r, u, lp) in acc {
        run.n_visit += v;
        run.n_resolved += r;
        run.n_unresolved += u;
        if let Some(t) = lp {
            run.passages.push(t);
        }
    }
    Ok(run)
}

/// Continuum hitting probability: `P(Z visits b)` with `z0` drawn from the
/// initial-perimeter law of hull radius `a`; reference `a/(a+b)`.
pub fn csbp_hit(
    a: f64,
    b: f64,
    n: u64,
    dt: f64,
    seed: u64,
    horizon: Option<f64>,
) -> Result<SummaryReport> {
    let run = run_length_batch(a, b, n, dt, seed, horizon)?;
    let estimate = run.n_visit as f64 / run.n_resolved as f64;
    let reference = laws::hit_prob(a, b);
    let threshold = 3.0 * stats::binomial_se(reference, run.n_resolved);
    Ok(SummaryReport::new(
        "csbp-hit",
        serde_json::json!({"a": a, "b": b, "N": n, "dt": dt, "seed": seed,
                           "unresolved": run.n_unresolved}),
        run.n_resolved,
        estimate,
        stats::wilson_ci(run.n_visit, run.n_resolved, 0.99),
        reference,
        (estimate - reference).abs(),
        threshold,
    ))
}

/// Annulus length: hitting report plus `E[L_b | visit]` against the closed
/// first moment, 2% relative tolerance.
pub fn csbp_length(
    a: f64,
    b: f64,
    n: u64,
    dt: f64,
    seed: u64,
    horizon: Option<f64>,
) -> Result<Vec<SummaryReport>> {
    let run = run_length_batch(a, b, n, dt, seed, horizon)?;
    let estimate_hit = run.n_visit as f64 / run.n_resolved as f64;
    let reference_hit = laws::hit_prob(a, b);
    let hit_report = SummaryReport::new(
        "csbp-hit",
        serde_json::json!({"a": a, "b": b, "N": n, "dt": dt, "seed": seed,
                           "unresolved": run.n_unresolved}),
        run.n_resolved,
        estimate_hit,
        stats::wilson_ci(run.n_visit, run.n_resolved, 0.99),
        reference_hit,
        (estimate_hit - reference_hit).abs(),
        3.0 * stats::binomial_se(reference_hit, run.n_resolved),
    );
    if run.passages.is_empty() {
        return Err(Error::Domain("no visiting replicates".into()));
    }
    let (mean, lo, hi) = stats::mean_ci(&run.passages, 0.99);
    let reference = laws::expected_length(a, b);
    let length_report = SummaryReport::new(
        "csbp-length",
        serde_json::json!({"a": a, "b": b, "N": n, "dt": dt, "seed": seed,
                           "visits": run.passages.len()}),
        run.passages.len() as u64,
        mean,
        (lo, hi),
        reference,
        ((mean - reference) / reference).abs(),
        0.02,
    );
    Ok(vec![hit_report, length_report])
}

/// Hull-perimeter law at radius `r`: chi-square of the sampled perimeters
/// against the closed density, plus the conditioning mass `P(r < r_*)`
/// against its quadrature value.
pub fn perimeter_law(
    a: f64,
    r: f64,
    n: u64,
    dt: f64,
    seed: u64,
    horizon: Option<f64>,
) -> Result<Vec<SummaryReport>> {
    let horizon = horizon.unwrap_or(DEFAULT_HORIZON);
    let results = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let z0 = csbp::sample_initial_perimeter(a, &mut rng);
            let path = csbp::simulate_csbp(z0, dt, horizon, &mut rng)?;
            if !path.extinct() {
                // Lives past the horizon, hence past r; present but its
                // value is unknown. Counted for the mass, not the histogram.
                return Ok((true, None));
            }
            Ok((path.extinction_time.unwrap() > r, path.perimeter_at_radius(r)))
        })
        .collect::<Result<Vec<_>>>()?;
    let present = results.iter().filter(|(p, _)| *p).count() as u64;
    let values: Vec<f64> = results.iter().filter_map(|&(_, v)| v).collect();
    let mass_ref = laws::perimeter_hull_mass(r, a)?;
    let mass_hat = present as f64 / n as f64;
    let mass_report = SummaryReport::new(
        "perimeter-mass",
        serde_json::json!({"a": a, "r": r, "N": n, "dt": dt, "seed": seed}),
        n,
        mass_hat,
        stats::wilson_ci(present, n, 0.99),
        mass_ref,
        (mass_hat - mass_ref).abs(),
        3.0 * stats::binomial_se(mass_ref, n),
    );
    let ecdf = Ecdf::new(values);
    let (chi2, dof) = stats::chisq_vs_density(&ecdf, |y| laws::perimeter_hull_density(r, a, y), 40)?;
    let chi_report = SummaryReport::new(
        "perimeter-law",
        serde_json::json!({"a": a, "r": r, "N": n, "dt": dt, "seed": seed,
                           "bins": 40, "dof": dof}),
        ecdf.len() as u64,
        chi2,
        (chi2, chi2),
        0.0,
        chi2,
        stats::chisq_critical(1e-3, dof),
    );
    Ok(vec![chi_report, mass_report])
}

/// Occupation formula for `f(y) = y e^{-y}` started from the `a = 1`
/// initial law: Monte Carlo mean of the path integral against the
/// quadrature of the closed density, 2% relative tolerance.
pub fn occupation(n: u64, dt: f64, seed: u64, horizon: Option<f64>) -> Result<SummaryReport> {
    let a = 1.0;
    let f = |y: f64| y * (-y).exp();
    let horizon = horizon.unwrap_or(DEFAULT_HORIZON);
    let integrals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let z0 = csbp::sample_initial_perimeter(a, &mut rng);
            let path = csbp::simulate_csbp(z0, dt, horizon, &mut rng)?;
            Ok(path.occupation_integral(f))
        })
        .collect::<Result<_>>()?;
    let (mean, lo, hi) = stats::mean_ci(&integrals, 0.99);
    let reference = laws::occupation_integral_reference(f)?;
    Ok(SummaryReport::new(
        "occupation",
        serde_json::json!({"a": a, "N": n, "dt": dt, "seed": seed, "f": "y*exp(-y)"}),
        n,
        mean,
        (lo, hi),
        reference,
        ((mean - reference) / reference).abs(),
        0.02,
    ))
}

/// Tail of the annulus length at the levels in `u_grid`: checks
/// `u^2 P(L > u | visit)` against the asymptote `3 (a + b)`.
///
/// Uses the hitting probability of the driving Levy path as an exact
/// conditional expectation: `P(L_b > u) = E[1 - sqrt((b - Z_u)+ / b)]`, so
/// each replicate only runs to time `max(u_grid)` instead of to extinction,
/// and the indicator is replaced by a bounded smooth functional (a large
/// variance reduction at these depths).
///
/// The asymptote carries an `O(u^{-3})` absolute correction, i.e. a
/// relative deficit of order `1/u` that is still ~30% at u = 10 (the law
/// itself, not estimator error), so the per-u gates widen by `3/u`. The
/// sharp 30% test of the constant is the final `tail-constant` report: a
/// two-point Richardson extrapolation in `1/u` across the grid ends, which
/// removes the leading deficit.
pub fn tail(
    a: f64,
    b: f64,
    n: u64,
    dt: f64,
    seed: u64,
    u_grid: &[f64],
) -> Result<Vec<SummaryReport>> {
    assert!(!u_grid.is_empty());
    assert!(u_grid.windows(2).all(|w| w[1] > w[0]), "u grid must increase");
    let horizon = u_grid.iter().cloned().fold(0.0f64, f64::max);
    let per_rep: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let z0 = csbp::sample_initial_perimeter(a, &mut rng);
            let path = csbp::simulate_csbp(z0, dt, horizon + dt, &mut rng)?;
            Ok(u_grid
                .iter()
                .map(|&u| {
                    let idx = ((u / dt).round() as usize).min(path.values.len() - 1);
                    1.0 - laws::levy_never_hits(path.values[idx], b)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let cond = laws::hit_prob(a, b);
    let mut reports = Vec::new();
    let mut scaled: Vec<(f64, f64, f64, f64)> = Vec::new();
    for (j, &u) in u_grid.iter().enumerate() {
        let vals: Vec<f64> = per_rep.iter().map(|v| v[j] / cond).collect();
        let (mean, lo, hi) = stats::mean_ci(&vals, 0.99);
        let estimate = u * u * mean;
        let reference = u * u * laws::tail_asymptote(a, b, u);
        scaled.push((u, estimate, u * u * lo, u * u * hi));
        reports.push(SummaryReport::new(
            "tail",
            serde_json::json!({"a": a, "b": b, "u": u, "N": n, "dt": dt, "seed": seed}),
            n,
            estimate,
            (u * u * lo, u * u * hi),
            reference,
            ((estimate - reference) / reference).abs(),
            0.30 + 3.0 / u,
        ));
    }
    if u_grid.len() >= 2 {
        // Model u^2 P = C - D/u and solve from the grid ends; the interval
        // combines the endpoint widths conservatively (the two estimates
        // share paths, so independence cannot be assumed).
        let (u1, e1, lo1, hi1) = scaled[0];
        let (u2, e2, lo2, hi2) = *scaled.last().unwrap();
        let w = (1.0 / u2) / (1.0 / u1 - 1.0 / u2);
        let c = e2 + (e2 - e1) * w;
        let half = (1.0 + w) * 0.5 * (hi2 - lo2) + w * 0.5 * (hi1 - lo1);
        let reference = 3.0 * (a + b);
        reports.push(SummaryReport::new(
            "tail-constant",
            serde_json::json!({"a": a, "b": b, "u": [u1, u2], "N": n, "dt": dt, "seed": seed}),
            n,
            c,
            (c - half, c + half),
            reference,
            ((c - reference) / reference).abs(),
            0.30,
        ));
    }
    Ok(reports)
}

/// Trace CSV per the export contract:
/// `replicate,step,t_rescaled,p,p_hat,v,v_hat,h,h_hat,event`.
pub fn write_peel_csv(path: &Path, traces: &[PeelTrace]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "replicate,step,t_rescaled,p,p_hat,v,v_hat,h,h_hat,event")?;
    for (rep, trace) in traces.iter().enumerate() {
        let rescaled = peeling::rescale(trace);
        for (s, r) in trace.samples.iter().zip(rescaled.iter()) {
            let event = match s.event {
                None => "init",
                Some(peeling::StepEvent::Up) => "up",
                Some(peeling::StepEvent::Down { .. }) => "down",
                Some(peeling::StepEvent::Cemetery) => "death",
            };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                rep, s.step, r.t, s.p, r.p_hat, s.v, r.v_hat, s.h, r.h_hat, event
            )?;
        }
    }
    Ok(())
}

/// CSBP path CSV: `replicate,t,z` (strided).
pub fn write_csbp_csv(path: &Path, paths: &[CsbpPath], stride: usize) -> Result<()> {
    assert!(stride >= 1);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "replicate,t,z")?;
    for (rep, p) in paths.iter().enumerate() {
        for (i, z) in p.values.iter().enumerate().step_by(stride) {
            writeln!(f, "{},{},{}", rep, i as f64 * p.dt, z)?;
        }
    }
    Ok(())
}

/// Write a batch of reports as a JSON array (stable field order via serde).
pub fn write_reports_json(path: &Path, reports: &[SummaryReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, reports)
        .map_err(|e| Error::Domain(format!("JSON serialization failed: {e}")))?;
    writeln!(f)?;
    Ok(())
}
