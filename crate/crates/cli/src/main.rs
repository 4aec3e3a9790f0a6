//! Reproducible experiment driver: parses a config (flags over an optional
//! JSON file), dispatches one experiment across a worker pool, writes CSV and
//! SummaryReport JSON artifacts, and exits 0 iff every verdict passes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Deserialize;

use annulus_core::experiments;
use annulus_core::peeling::InitMode;
use annulus_core::stats::SummaryReport;

const EXPERIMENTS: &[&str] = &[
    "verify-exact",
    "peel-hit",
    "peel-height",
    "csbp-extinction",
    "csbp-length",
    "perimeter-law",
    "occupation",
    "tail",
];

#[derive(Parser, Debug)]
#[command(
    name = "annulus",
    about = "Peeling / CSBP simulation experiments with closed-form verification"
)]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One of: verify-exact, peel-hit, peel-height, csbp-extinction,
    /// csbp-length, perimeter-law, occupation, tail.
    #[arg(long)]
    experiment: Option<String>,
    /// Outer boundary parameter (also the extinction start for
    /// csbp-extinction).
    #[arg(long)]
    a: Option<f64>,
    /// Inner boundary parameter (the hull radius for perimeter-law).
    #[arg(long)]
    b: Option<f64>,
    /// Comma-separated boundary sizes for the discrete experiments.
    #[arg(long = "L", value_delimiter = ',')]
    l_list: Option<Vec<u64>>,
    /// Number of Monte Carlo replicates.
    #[arg(long = "N")]
    n: Option<u64>,
    /// CSBP grid step.
    #[arg(long)]
    dt: Option<f64>,
    /// Master seed; replicate streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Peeling step budget override.
    #[arg(long)]
    max_steps: Option<u64>,
    /// CSBP horizon override; paths unresolved at the horizon are counted,
    /// never dropped.
    #[arg(long)]
    horizon: Option<f64>,
    /// Output directory; defaults to $ANNULUS_OUT, then the current dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace sampling stride override.
    #[arg(long)]
    stride: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Start peeling from the self-loop state instead of the simple edge.
    #[arg(long)]
    loop_init: bool,
}

/// File form of the config; unknown keys are rejected by name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<String>,
    a: Option<f64>,
    b: Option<f64>,
    #[serde(rename = "L")]
    l_list: Option<Vec<u64>>,
    #[serde(rename = "N")]
    n: Option<u64>,
    dt: Option<f64>,
    seed: Option<u64>,
    max_steps: Option<u64>,
    horizon: Option<f64>,
    out: Option<PathBuf>,
    stride: Option<u64>,
    workers: Option<usize>,
    loop_init: Option<bool>,
}

#[derive(Debug)]
struct Config {
    experiment: String,
    a: f64,
    b: f64,
    l_list: Vec<u64>,
    n: u64,
    dt: f64,
    seed: u64,
    out: PathBuf,
    workers: Option<usize>,
    init_mode: InitMode,
    max_steps: Option<u64>,
    horizon: Option<f64>,
    stride: Option<u64>,
}

fn resolve(cli: Cli) -> Result<Config, String> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("bad config file: {e}"))?
        }
        None => FileConfig::default(),
    };
    let experiment = cli
        .experiment
        .or(file.experiment)
        .ok_or("missing required --experiment")?;
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        return Err(format!(
            "unknown experiment '{experiment}'; expected one of {EXPERIMENTS:?}"
        ));
    }
    let a = cli.a.or(file.a).unwrap_or(1.0);
    let b = cli.b.or(file.b).unwrap_or(1.0);
    let l_list = cli.l_list.or(file.l_list).unwrap_or_else(|| vec![100]);
    let n = cli.n.or(file.n).unwrap_or(10_000);
    let dt = cli.dt.or(file.dt).unwrap_or(1e-3);
    let seed = cli.seed.or(file.seed).unwrap_or(42);
    if !(a > 0.0) {
        return Err("field a must be strictly positive".into());
    }
    if !(b > 0.0) {
        return Err("field b must be strictly positive".into());
    }
    if !(dt > 0.0) {
        return Err("field dt must be strictly positive".into());
    }
    if n == 0 {
        return Err("field N must be strictly positive".into());
    }
    if l_list.is_empty() {
        return Err("field L must be a nonempty list".into());
    }
    for &l in &l_list {
        if (a * l as f64).floor() < 1.0 || (b * l as f64).floor() < 1.0 {
            return Err(format!(
                "field L: floor(a*L) and floor(b*L) must be >= 1 (L = {l})"
            ));
        }
    }
    let out = cli
        .out
        .or(file.out)
        .or_else(|| std::env::var_os("ANNULUS_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let loop_init = cli.loop_init || file.loop_init.unwrap_or(false);
    Ok(Config {
        experiment,
        a,
        b,
        l_list,
        n,
        dt,
        seed,
        out,
        workers: cli.workers.or(file.workers),
        max_steps: cli.max_steps.or(file.max_steps),
        horizon: cli.horizon.or(file.horizon),
        stride: cli.stride.or(file.stride),
        init_mode: if loop_init {
            InitMode::Loop
        } else {
            InitMode::SimpleEdge
        },
    })
}

fn run(cfg: &Config) -> annulus_core::error::Result<Vec<SummaryReport>> {
    let (a, b, n, dt, seed) = (cfg.a, cfg.b, cfg.n, cfg.dt, cfg.seed);
    match cfg.experiment.as_str() {
        "verify-exact" => experiments::verify_exact(),
        "peel-hit" => {
            experiments::peel_hit(a, b, &cfg.l_list, n, seed, cfg.init_mode, cfg.max_steps)
        }
        "peel-height" => {
            let csv = cfg.out.join("peel-height-traces.csv");
            let ls = if cfg.l_list.len() >= 2 {
                cfg.l_list.clone()
            } else {
                vec![100, 10_000]
            };
            experiments::peel_height(&ls, n, seed, cfg.init_mode, cfg.stride, Some(&csv))
        }
        "csbp-extinction" => Ok(vec![experiments::csbp_extinction(
            a,
            n,
            dt,
            seed,
            cfg.horizon,
        )?]),
        "csbp-length" => experiments::csbp_length(a, b, n, dt, seed, cfg.horizon),
        "perimeter-law" => experiments::perimeter_law(a, b, n, dt, seed, cfg.horizon),
        "occupation" => Ok(vec![experiments::occupation(n, dt, seed, cfg.horizon)?]),
        "tail" => experiments::tail(a, b, n, dt, seed, &[10.0, 20.0]),
        other => unreachable!("validated experiment {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(workers) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cfg.out) {
        eprintln!("error: cannot create {}: {e}", cfg.out.display());
        return ExitCode::from(2);
    }
    let reports = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let json_path = cfg.out.join(format!("{}-reports.json", cfg.experiment));
    if let Err(e) = experiments::write_reports_json(&json_path, &reports) {
        eprintln!("error: writing {}: {e}", json_path.display());
        return ExitCode::from(1);
    }
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{:<32} estimate={:<12.6} reference={:<12.6} statistic={:.3e} threshold={:.3e} {}",
            r.id, r.estimate, r.reference, r.statistic, r.threshold, r.verdict
        );
        all_pass &= r.passed();
    }
    println!("reports written to {}", json_path.display());
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
