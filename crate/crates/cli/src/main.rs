//! `minimax`: estimation runs, risk curves, and experiment tables from
//! JSON configs, with deterministic seeded output.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{
    canonical_config_bytes, directions_from_value, matrix_from_rows, perturbations_from_value,
    RunConfig,
};
use minimax_core::equivariant::GHatEstimator;
use minimax_core::error::Error as CoreError;
use minimax_core::estimator::{estimate_from_data, EstimateReport};
use minimax_core::experiments::{
    discontinuity_csv, discontinuity_sweep, robustified_risk, worst_case_risk, EstimatorKind,
    LocalRiskSpec, RobustSweepSpec,
};
use minimax_core::gaussian::GaussianLimit;
use minimax_core::risk::{oracle_curve, select_c_hat, GFn};

#[derive(Parser)]
#[command(
    name = "minimax",
    about = "Bias-adjusted estimation of nondifferentiable parameters f(g(beta)) \
             with simulated worst-case risk curves",
    version
)]
struct Cli {
    /// Worker threads (default: all cores; env MINIMAX_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate theta from a data CSV (one observation per row).
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Skip the first CSV line.
        #[arg(long)]
        has_header: bool,
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Also write the risk curve CSV here.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Simulate the risk curve B(c) and the selected adjustment.
    RiskCurve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "curve.csv")]
        out: PathBuf,
        /// JSON sidecar path (default: output with .json extension).
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Worst-case local risk table for an estimator.
    WorstCase {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "table.csv")]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Locally robustified risk sweep over an eps_n-ball of centers.
    RobustSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Minimax risk along a path of centers (discontinuity curve).
    Discontinuity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "discontinuity.csv")]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("MINIMAX_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for configuration problems, 3 for numeric or resource failures.
fn exit_code_for(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Resource(_) | CoreError::Numeric(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Estimate { data, has_header, config, seed, out, curve_out } => {
            cmd_estimate(&data, has_header, &config, seed, &out, curve_out.as_deref())
        }
        Cmd::RiskCurve { config, seed, out, sidecar } => {
            cmd_risk_curve(&config, seed, &out, sidecar.as_deref())
        }
        Cmd::WorstCase { config, seed, out, manifest } => {
            cmd_worst_case(&config, seed, &out, manifest.as_deref())
        }
        Cmd::RobustSweep { config, seed, out, manifest } => {
            cmd_robust_sweep(&config, seed, &out, manifest.as_deref())
        }
        Cmd::Discontinuity { config, seed, out, manifest } => {
            cmd_discontinuity(&config, seed, &out, manifest.as_deref())
        }
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.or(cfg.seed).unwrap_or(0)
}

fn config_hash(raw: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(canonical_config_bytes(raw));
    hex::encode(h.finalize())
}

/// Writes via a temp file in the same directory plus an atomic rename,
/// so no output is ever left partially written.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temp file next to {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot finalize {}: {}", path.display(), e.error))?;
    Ok(())
}

fn read_data_csv(path: &Path, has_header: bool) -> Result<minimax_core::nalgebra::DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read data file {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && has_header {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().with_context(|| {
                    format!("{}:{}: '{}' is not a number", path.display(), lineno + 1, tok)
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "{}:{}: row has {} fields, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("data file {} has no observations", path.display());
    }
    let (n, d) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(minimax_core::nalgebra::DMatrix::from_row_slice(n, d, &flat))
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ReportEnvelope {
    config_hash: String,
    config_echo: serde_json::Value,
    seed: u64,
    report: EstimateReport,
}

fn cmd_estimate(
    data_path: &Path,
    has_header: bool,
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    curve_out: Option<&Path>,
) -> Result<()> {
    let (cfg, raw) = RunConfig::load(config_path)?;
    let seed = resolve_seed(seed, &cfg);
    let map = cfg.map()?;
    let f = cfg.transform()?;
    let loss = cfg.loss()?;
    let risk_cfg = cfg.risk_config(map.dim(), seed)?;
    let data = read_data_csv(data_path, has_header)?;
    if data.ncols() != map.dim() {
        bail!(
            "data has {} columns but the map 'g' has dimension {}",
            data.ncols(),
            map.dim()
        );
    }
    let report = estimate_from_data(&data, &map, &f, &loss, &risk_cfg, cfg.eps_rule())?;
    if let Some(curve_path) = curve_out {
        write_atomic(curve_path, report.risk_curve.to_csv().as_bytes())?;
    }
    let envelope = ReportEnvelope {
        config_hash: config_hash(&raw),
        config_echo: raw,
        seed,
        report,
    };
    let body = serde_json::to_vec_pretty(&envelope)?;
    write_atomic(out, &body)?;
    println!(
        "theta_mx={} (plugin={}, c_hat={}) -> {}",
        envelope.report.theta_mx,
        envelope.report.theta_plugin,
        envelope.report.c_hat,
        out.display()
    );
    Ok(())
}

fn cmd_risk_curve(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    sidecar: Option<&Path>,
) -> Result<()> {
    let (cfg, raw) = RunConfig::load(config_path)?;
    let seed = resolve_seed(seed, &cfg);
    let map = cfg.map()?;
    let f = cfg.transform()?;
    let loss = cfg.loss()?;
    let risk_cfg = cfg.risk_config(map.dim(), seed)?;
    let payload = cfg
        .curve
        .as_ref()
        .ok_or_else(|| anyhow!("config key 'curve' is required for risk-curve"))?;
    let sigma_rows = cfg
        .sigma
        .as_ref()
        .ok_or_else(|| anyhow!("config key 'sigma' is required for risk-curve"))?;
    let limit = GaussianLimit::from_covariance(matrix_from_rows("sigma", sigma_rows)?)?;
    let curve = match payload.mode.as_str() {
        "ghat" => {
            let eps = payload
                .eps
                .ok_or_else(|| anyhow!("config key 'curve.eps' is required in ghat mode"))?;
            let ghat = GHatEstimator::new(map.clone(), payload.beta.clone(), eps)?;
            let a = f.a_hat(map.eval(&payload.beta)?, eps)?.value;
            select_c_hat(&GFn::from_ghat(&ghat), a, &limit, &loss, &risk_cfg)?
        }
        "oracle" => oracle_curve(&payload.beta, &map, &f, &limit, &loss, &risk_cfg)?,
        other => bail!("config key 'curve.mode' must be 'ghat' or 'oracle', got '{other}'"),
    };
    write_atomic(out, curve.to_csv().as_bytes())?;
    let sidecar_path = sidecar
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("json"));
    let side = serde_json::json!({
        "config_hash": config_hash(&raw),
        "config_echo": raw,
        "seed": seed,
        "curve": curve.sidecar_json(),
    });
    write_atomic(&sidecar_path, &serde_json::to_vec_pretty(&side)?)?;
    println!("c_hat={} min_B={} -> {}", curve.c_hat, curve.min_b, out.display());
    Ok(())
}

fn experiment_pieces(
    cfg: &RunConfig,
    seed: u64,
) -> Result<(LocalRiskSpec, EstimatorKind)> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| anyhow!("config key 'experiment' is required"))?;
    let map = cfg.map()?;
    let d = map.dim();
    let spec = LocalRiskSpec {
        beta0: exp.beta0.clone(),
        sigma: matrix_from_rows("experiment.sigma", &exp.sigma)?,
        b_grid: exp.b_grid.clone(),
        n: exp.n,
        reps: exp.reps,
        directions: directions_from_value(&exp.directions, d)?,
        loss: cfg.loss()?,
        seed,
    };
    let estimator = match exp.estimator.as_str() {
        "plugin" => EstimatorKind::Plugin,
        "minimax" => EstimatorKind::Minimax {
            cfg: cfg.risk_config(d, seed)?,
            eps_rule: cfg.eps_rule(),
        },
        other => bail!("config key 'experiment.estimator' must be 'minimax' or 'plugin', got '{other}'"),
    };
    Ok((spec, estimator))
}

fn cmd_worst_case(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    manifest: Option<&Path>,
) -> Result<()> {
    let (cfg, raw) = RunConfig::load(config_path)?;
    let seed = resolve_seed(seed, &cfg);
    let map = cfg.map()?;
    let f = cfg.transform()?;
    let (spec, estimator) = experiment_pieces(&cfg, seed)?;
    let table = worst_case_risk(&spec, &map, &f, &estimator)?;
    write_atomic(out, table.to_csv().as_bytes())?;
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("json"));
    let m = serde_json::json!({
        "config_hash": config_hash(&raw),
        "config_echo": raw,
        "seed": seed,
        "per_b_sup": table.per_b_sup,
    });
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&m)?)?;
    println!("sup_risk={} -> {}", table.sup().risk, out.display());
    Ok(())
}

fn cmd_robust_sweep(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    manifest: Option<&Path>,
) -> Result<()> {
    let (cfg, raw) = RunConfig::load(config_path)?;
    let seed = resolve_seed(seed, &cfg);
    let map = cfg.map()?;
    let f = cfg.transform()?;
    let (base, estimator) = experiment_pieces(&cfg, seed)?;
    let d = map.dim();
    let sweep = RobustSweepSpec {
        base,
        eps_rule: cfg.eps_rule(),
        perturbations: perturbations_from_value(&cfg.perturbations)?,
        oracle_cfg: cfg.risk_config(d, seed)?,
    };
    let report = robustified_risk(&sweep, &map, &f, &estimator)?;
    let mut csv = String::from("perturbation_id,b,direction_id,risk,stderr,sup_flag\n");
    for (k, center) in report.per_center.iter().enumerate() {
        for r in &center.table.rows {
            csv.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                r.b,
                r.direction_id,
                r.risk,
                r.stderr,
                u8::from(r.sup_flag)
            ));
        }
    }
    write_atomic(out, csv.as_bytes())?;
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("json"));
    let m = serde_json::json!({
        "config_hash": config_hash(&raw),
        "config_echo": raw,
        "seed": seed,
        "eps_n": report.eps_n,
        "overall_sup": report.overall_sup,
        "bound": report.bound,
        "gap": report.gap,
    });
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&m)?)?;
    println!(
        "overall_sup={} bound={} gap={} -> {}",
        report.overall_sup,
        report.bound,
        report.gap,
        out.display()
    );
    Ok(())
}

fn cmd_discontinuity(
    config_path: &Path,
    seed: Option<u64>,
    out: &Path,
    manifest: Option<&Path>,
) -> Result<()> {
    let (cfg, raw) = RunConfig::load(config_path)?;
    let seed = resolve_seed(seed, &cfg);
    let map = cfg.map()?;
    let f = cfg.transform()?;
    let loss = cfg.loss()?;
    let risk_cfg = cfg.risk_config(map.dim(), seed)?;
    let path = cfg
        .path
        .as_ref()
        .ok_or_else(|| anyhow!("config key 'path' is required for discontinuity"))?;
    if path.steps < 2 {
        bail!("config key 'path.steps' must be at least 2");
    }
    if path.anchor.len() != map.dim() || path.direction.len() != map.dim() {
        bail!("config keys 'path.anchor'/'path.direction' must match the map dimension");
    }
    let sigma_rows = cfg
        .sigma
        .as_ref()
        .ok_or_else(|| anyhow!("config key 'sigma' is required for discontinuity"))?;
    let limit = GaussianLimit::from_covariance(matrix_from_rows("sigma", sigma_rows)?)?;
    let ts: Vec<f64> = (0..path.steps)
        .map(|i| {
            path.t_min + (path.t_max - path.t_min) * i as f64 / (path.steps - 1) as f64
        })
        .collect();
    let anchor = path.anchor.clone();
    let direction = path.direction.clone();
    let rows = discontinuity_sweep(
        &ts,
        move |t| anchor.iter().zip(direction.iter()).map(|(a, u)| a + t * u).collect(),
        &map,
        &f,
        &limit,
        &loss,
        &risk_cfg,
    )?;
    write_atomic(out, discontinuity_csv(&rows).as_bytes())?;
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("json"));
    let m = serde_json::json!({
        "config_hash": config_hash(&raw),
        "config_echo": raw,
        "seed": seed,
        "points": rows.len(),
    });
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&m)?)?;
    println!("{} path points -> {}", rows.len(), out.display());
    Ok(())
}
