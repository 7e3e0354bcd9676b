//! Batch CLI around the estimation library. Every run writes its outputs
//! plus a manifest holding the fully resolved configuration; feeding that
//! manifest back through `--config` reproduces the run byte for byte.
//!
//! Exit codes: 0 success, 2 validation/usage error, 3 runtime estimation
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mulreg::bayes::{IntegratorCfg, IntegratorMethod};
use mulreg::experiments;
use mulreg::io;
use mulreg::lepski::{self, SelectionMode};
use mulreg::model::{self, NoiseMode};
use mulreg::poly;

#[derive(Parser)]
#[command(
    name = "mulreg",
    version,
    about = "Frontier regression under multiplicative uniform noise: simulation, estimation, adaptive bandwidth selection, and Monte Carlo experiments"
)]
struct Cli {
    /// Directory for outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for replications (env MULREG_WORKERS overrides the
    /// default; results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// JSON configuration file (or a previous run's manifest); explicit
    /// flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one sample and write it as CSV with a JSON sidecar.
    Simulate(Flags),
    /// Posterior-median estimate at a point with known constants, at a fixed
    /// bandwidth (--h) or the minimax one (--beta, --lipschitz).
    Estimate(Flags),
    /// Fully data-driven estimate; writes the selection trace as JSON.
    Adapt(Flags),
    /// Monte Carlo search for the risk-minimizing bandwidth.
    Oracle(Flags),
    /// Oracle-versus-adaptive risk table over test functions and sizes.
    ReplicateTable(Flags),
    /// Locally parametric comparison on the piecewise-linear function,
    /// n = 1000, y = 1/2.
    ReplicateF4(Flags),
    /// Risk-versus-n slopes for the posterior-median and least-squares
    /// oracles.
    Rate(Flags),
    /// Empirical tail probabilities of the scaled deviation at fixed h.
    Tail(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Estimate(_) => "estimate",
            Command::Adapt(_) => "adapt",
            Command::Oracle(_) => "oracle",
            Command::ReplicateTable(_) => "replicate-table",
            Command::ReplicateF4(_) => "replicate-f4",
            Command::Rate(_) => "rate",
            Command::Tail(_) => "tail",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Simulate(f)
            | Command::Estimate(f)
            | Command::Adapt(f)
            | Command::Oracle(f)
            | Command::ReplicateTable(f)
            | Command::ReplicateF4(f)
            | Command::Rate(f)
            | Command::Tail(f) => f,
        }
    }
}

#[derive(Args, Default, Clone)]
struct Flags {
    /// Test function id: f1 | f2 | f3 | f4 | constant:<c>.
    #[arg(long = "fn")]
    function_id: Option<String>,
    /// Read the sample from this CSV (with its JSON sidecar) instead of
    /// simulating.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Polynomial degree bound.
    #[arg(long)]
    b: Option<usize>,
    /// Loss exponent entering the theory threshold constant.
    #[arg(long)]
    q: Option<f64>,
    /// Evaluation point (one-dimensional commands).
    #[arg(long)]
    y: Option<f64>,
    /// Fixed bandwidth.
    #[arg(long)]
    h: Option<f64>,
    /// Smoothness for the minimax bandwidth.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Known lower level bound A.
    #[arg(long)]
    a_low: Option<f64>,
    /// Known upper bound M.
    #[arg(long)]
    m_up: Option<f64>,
    /// Selection mode: theory | practical.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    c_thr: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long = "seed")]
    master_seed: Option<u64>,
    /// Evaluation points per table cell.
    #[arg(long)]
    points: Option<usize>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Candidate bandwidths, comma separated.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<f64>>,
    #[arg(long)]
    eps_max: Option<f64>,
    #[arg(long)]
    eps_count: Option<usize>,
    /// Degree bound of the adaptive pipeline in the f4 comparison.
    #[arg(long)]
    b_adaptive: Option<usize>,
    /// Degree bound of the fixed-window parametric fit.
    #[arg(long)]
    b_parametric: Option<usize>,
    /// Integrator method: auto | grid | sample.
    #[arg(long)]
    integrator_method: Option<String>,
    #[arg(long)]
    nodes_per_axis: Option<usize>,
    #[arg(long)]
    proposal_count: Option<usize>,
    #[arg(long)]
    integrator_seed: Option<u64>,
    /// Debug switch: noise U = 1, so Y = f(X) exactly.
    #[arg(long)]
    zero_noise: Option<bool>,
    /// Primary output file name (relative to --out-dir).
    #[arg(long)]
    out: Option<String>,
}

/// Flat configuration shared by the config file, the flags, and the
/// manifest. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    function_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    a_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_thr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ns: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fns: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_adaptive: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_parametric: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrator_method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes_per_axis: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proposal_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrator_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_noise: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
}

enum AppError {
    Validation(String),
    Runtime(String),
}

impl From<mulreg::Error> for AppError {
    fn from(e: mulreg::Error) -> Self {
        if e.is_validation() {
            AppError::Validation(e.to_string())
        } else {
            AppError::Runtime(e.to_string())
        }
    }
}

type AppResult<T> = Result<T, AppError>;

fn validation(msg: impl Into<String>) -> AppError {
    AppError::Validation(msg.into())
}

impl RunConfig {
    fn from_file(path: &Path) -> AppResult<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        // A manifest embeds the configuration under "config".
        let cfg_value = if value.get("rng_scheme").is_some() && value.get("config").is_some() {
            value["config"].clone()
        } else {
            value
        };
        serde_json::from_value(cfg_value)
            .map_err(|e| validation(format!("{}: {e}", path.display())))
    }

    /// Overlay explicit flags on top of file values.
    fn merged(file: RunConfig, flags: &Flags) -> RunConfig {
        macro_rules! pick {
            ($field:ident) => {
                flags.$field.clone().or(file.$field)
            };
        }
        RunConfig {
            function_id: pick!(function_id),
            data: pick!(data),
            n: pick!(n),
            d: pick!(d),
            b: pick!(b),
            q: pick!(q),
            y: pick!(y),
            h: pick!(h),
            beta: pick!(beta),
            lipschitz: pick!(lipschitz),
            a_low: pick!(a_low),
            m_up: pick!(m_up),
            mode: pick!(mode),
            c_thr: pick!(c_thr),
            reps: pick!(reps),
            master_seed: pick!(master_seed),
            points: pick!(points),
            ns: pick!(ns),
            fns: file.fns,
            candidates: pick!(candidates),
            eps_max: pick!(eps_max),
            eps_count: pick!(eps_count),
            b_adaptive: pick!(b_adaptive),
            b_parametric: pick!(b_parametric),
            integrator_method: pick!(integrator_method),
            nodes_per_axis: pick!(nodes_per_axis),
            proposal_count: pick!(proposal_count),
            integrator_seed: pick!(integrator_seed),
            zero_noise: pick!(zero_noise),
            out: pick!(out),
        }
    }

    fn integrator(&self, experiment_default_nodes: usize) -> AppResult<IntegratorCfg> {
        let method = match self.integrator_method.as_deref() {
            None | Some("auto") => IntegratorMethod::Auto,
            Some("grid") => IntegratorMethod::Grid,
            Some("sample") => IntegratorMethod::Sample,
            Some(other) => {
                return Err(validation(format!(
                    "unknown integrator method `{other}` (expected auto|grid|sample)"
                )))
            }
        };
        Ok(IntegratorCfg {
            method,
            nodes_per_axis: self.nodes_per_axis.unwrap_or(experiment_default_nodes),
            proposal_count: self.proposal_count.unwrap_or(200_000),
            seed: self.integrator_seed.unwrap_or(0),
        })
    }

    fn selection_mode(&self) -> AppResult<SelectionMode> {
        match self.mode.as_deref() {
            None | Some("practical") => Ok(SelectionMode::Practical),
            Some("theory") => Ok(SelectionMode::Theory),
            Some(other) => Err(validation(format!(
                "unknown mode `{other}` (expected theory|practical)"
            ))),
        }
    }

    fn noise(&self) -> NoiseMode {
        if self.zero_noise.unwrap_or(false) {
            NoiseMode::Off
        } else {
            NoiseMode::Uniform
        }
    }

    fn require_fn(&self) -> AppResult<String> {
        self.function_id
            .clone()
            .ok_or_else(|| validation("missing --fn <id>"))
    }

    fn require_y(&self) -> AppResult<f64> {
        let y = self.y.ok_or_else(|| validation("missing --y <point>"))?;
        if !(0.0..=1.0).contains(&y) {
            return Err(validation(format!("evaluation point {y} outside [0,1]")));
        }
        Ok(y)
    }

    /// Obtain the working sample: from --data, or simulated from --fn/--n.
    fn load_sample(&self) -> AppResult<model::Sample> {
        if let Some(path) = &self.data {
            return Ok(io::read_sample_csv(Path::new(path))?);
        }
        let fid = self.require_fn()?;
        let f = model::test_function(&fid)?;
        let n = self.n.ok_or_else(|| validation("missing --n <size>"))?;
        let d = self.d.unwrap_or(1);
        let grid = model::DesignGrid::make(d, n)?;
        Ok(model::simulate_with(
            &f,
            &grid,
            self.master_seed.unwrap_or(0),
            self.noise(),
        ))
    }
}

fn warn_outside_validity(h: f64, n: usize, b: usize, d: usize) -> Option<String> {
    let (lo, hi) = poly::bandwidth_validity_range(n, b, d);
    if h < lo || h > hi {
        let msg = format!(
            "bandwidth {h:.5} outside the well-conditioned range [{lo:.5}, {hi:.5}] for n={n}, b={b}; estimates may be unstable"
        );
        eprintln!("warning: {msg}");
        Some(msg)
    } else {
        None
    }
}

fn out_path(dir: &Path, cfg: &RunConfig, default: &str) -> PathBuf {
    dir.join(cfg.out.as_deref().unwrap_or(default))
}

fn run_simulate(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let fid = cfg.require_fn()?;
    let f = model::test_function(&fid)?;
    let n = cfg.n.ok_or_else(|| validation("missing --n <size>"))?;
    let d = cfg.d.unwrap_or(1);
    let seed = cfg.master_seed.unwrap_or(0);
    let grid = model::DesignGrid::make(d, n)?;
    let sample = model::simulate_with(&f, &grid, seed, cfg.noise());
    let csv = out_path(dir, cfg, "sample.csv");
    let sidecar = io::write_sample_csv(&csv, &sample)?;
    let resolved = RunConfig {
        function_id: Some(fid),
        n: Some(n),
        d: Some(d),
        master_seed: Some(seed),
        zero_noise: Some(cfg.zero_noise.unwrap_or(false)),
        out: Some(csv.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![csv, sidecar], resolved))
}

fn run_estimate(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let sample = cfg.load_sample()?;
    let n = sample.len();
    let d = sample.grid.dimension();
    if d != 1 {
        return Err(validation("estimate currently drives d = 1 runs"));
    }
    let y = [cfg.require_y()?];
    let b = cfg.b.unwrap_or(2);
    let icfg = cfg.integrator(64)?;

    let f = model::test_function(&sample.function_id.to_string()).ok();
    let a_low = cfg
        .a_low
        .or(f.as_ref().map(|f| f.meta.lower_envelope))
        .ok_or_else(|| validation("missing --a-low (no function metadata available)"))?;
    let m_up = cfg
        .m_up
        .or(f.as_ref().map(|f| f.meta.deriv_sum_bound))
        .ok_or_else(|| validation("missing --m-up (no function metadata available)"))?;

    let (h, est) = match (cfg.h, cfg.beta, cfg.lipschitz) {
        (Some(h), _, _) => {
            let idxset = poly::MultiIndexSet::new(d, b);
            let set = mulreg::ParamSet::new(a_low, m_up, idxset.clone())?;
            let win = poly::window(&sample, &y, h, &idxset)?;
            (h, mulreg::bayes_estimate(&win, &set, &icfg)?)
        }
        (None, Some(beta), lip) => {
            let lipschitz = lip.unwrap_or(1.0);
            let (est, h) = mulreg::minimax_estimate(
                &sample, &y, beta, lipschitz, a_low, m_up, b, &icfg,
            )?;
            (h, est)
        }
        _ => return Err(validation("need --h or --beta [--lipschitz]")),
    };
    let warning = warn_outside_validity(h, n, b, d);

    let out = out_path(dir, cfg, "estimate.json");
    io::write_json(
        &out,
        &json!({
            "f_hat": est.f_hat_y,
            "h": h,
            "y": y[0],
            "theta_hat": est.theta_hat.values,
            "integrator_report": est.integrator_report,
            "warnings": warning.into_iter().collect::<Vec<_>>(),
        }),
    )?;
    let resolved = RunConfig {
        function_id: cfg.function_id.clone(),
        data: cfg.data.clone(),
        n: Some(n),
        d: Some(d),
        b: Some(b),
        y: Some(y[0]),
        h: cfg.h,
        beta: cfg.beta,
        lipschitz: cfg.lipschitz,
        a_low: Some(a_low),
        m_up: Some(m_up),
        master_seed: Some(cfg.master_seed.unwrap_or(0)),
        integrator_method: cfg.integrator_method.clone(),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        out: Some(out.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![out], resolved))
}

fn run_adapt(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let sample = cfg.load_sample()?;
    let n = sample.len();
    let d = sample.grid.dimension();
    if d != 1 {
        return Err(validation("adapt currently drives d = 1 runs"));
    }
    let y = [cfg.require_y()?];
    let b = cfg.b.unwrap_or(2);
    let q = cfg.q.unwrap_or(1.0);
    let mode = cfg.selection_mode()?;
    let c_thr = cfg.c_thr.unwrap_or(2.0);
    let icfg = cfg.integrator(64)?;

    let ladder = lepski::bandwidth_grid(n, b, d)?;
    let warning = warn_outside_validity(ladder.h_max, n, b, d);
    let (f_star, trace) = lepski::adaptive_estimate(&sample, &y, b, q, &icfg, mode, c_thr)?;

    let out = out_path(dir, cfg, "trace.json");
    io::write_json(
        &out,
        &json!({
            "f_hat_star": f_star,
            "y": y[0],
            "trace": trace,
            "warnings": warning.into_iter().collect::<Vec<_>>(),
        }),
    )?;
    let resolved = RunConfig {
        function_id: cfg.function_id.clone(),
        data: cfg.data.clone(),
        n: Some(n),
        d: Some(d),
        b: Some(b),
        q: Some(q),
        y: Some(y[0]),
        mode: Some(match mode {
            SelectionMode::Theory => "theory".into(),
            SelectionMode::Practical => "practical".into(),
        }),
        c_thr: Some(c_thr),
        master_seed: Some(cfg.master_seed.unwrap_or(0)),
        integrator_method: cfg.integrator_method.clone(),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        out: Some(out.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![out], resolved))
}

fn run_oracle(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let fid = cfg.require_fn()?;
    let f = model::test_function(&fid)?;
    let n = cfg.n.ok_or_else(|| validation("missing --n <size>"))?;
    let y = [cfg.require_y()?];
    let b = cfg.b.unwrap_or(2);
    let reps = cfg.reps.unwrap_or(1000);
    let seed = cfg.master_seed.unwrap_or(0);
    let icfg = cfg.integrator(24)?;
    let candidates = match &cfg.candidates {
        Some(c) => c.clone(),
        None => experiments::dyadic_candidates(n, 1, b, &y),
    };
    let report =
        experiments::oracle_bandwidth(&f, &y, n, &candidates, reps, seed, &icfg, b)?;

    let csv = out_path(dir, cfg, "oracle.csv");
    io::write_oracle_csv(&csv, &report)?;
    let json_path = csv.with_extension("json");
    io::write_json(&json_path, &report)?;
    let resolved = RunConfig {
        function_id: Some(fid),
        n: Some(n),
        b: Some(b),
        y: Some(y[0]),
        reps: Some(reps),
        master_seed: Some(seed),
        candidates: Some(candidates),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        integrator_method: cfg.integrator_method.clone(),
        out: Some(csv.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![csv, json_path], resolved))
}

fn run_table(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let fns = cfg
        .fns
        .clone()
        .or_else(|| cfg.function_id.clone().map(|f| vec![f]))
        .unwrap_or_else(|| vec!["f1".into(), "f2".into(), "f3".into()]);
    let ns = cfg.ns.clone().unwrap_or_else(|| vec![100, 1000]);
    let points = cfg.points.unwrap_or(100);
    let reps = cfg.reps.unwrap_or(1000);
    let mode = cfg.selection_mode()?;
    let c_thr = cfg.c_thr.unwrap_or(2.0);
    let seed = cfg.master_seed.unwrap_or(0);
    let b = cfg.b.unwrap_or(2);
    let q = cfg.q.unwrap_or(1.0);
    let icfg = cfg.integrator(24)?;

    let table = experiments::replicate_risk_table(
        &fns, &ns, points, reps, mode, c_thr, seed, &icfg, b, q,
    )?;
    let csv = out_path(dir, cfg, "risk_table.csv");
    io::write_table_csv(&csv, &table)?;
    let json_path = csv.with_extension("json");
    io::write_json(&json_path, &table)?;
    let resolved = RunConfig {
        fns: Some(fns),
        ns: Some(ns),
        points: Some(points),
        reps: Some(reps),
        mode: Some(match mode {
            SelectionMode::Theory => "theory".into(),
            SelectionMode::Practical => "practical".into(),
        }),
        c_thr: Some(c_thr),
        master_seed: Some(seed),
        b: Some(b),
        q: Some(q),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        integrator_method: cfg.integrator_method.clone(),
        out: Some(csv.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![csv, json_path], resolved))
}

fn run_f4(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let reps = cfg.reps.unwrap_or(1000);
    let seed = cfg.master_seed.unwrap_or(0);
    let b_adaptive = cfg.b_adaptive.unwrap_or(3);
    let b_parametric = cfg.b_parametric.unwrap_or(1);
    let q = cfg.q.unwrap_or(1.0);
    let mode = cfg.selection_mode()?;
    let c_thr = cfg.c_thr.unwrap_or(2.0);
    let icfg = cfg.integrator(24)?;

    let report = experiments::replicate_f4(
        reps,
        seed,
        &icfg,
        b_adaptive,
        b_parametric,
        q,
        mode,
        c_thr,
    )?;
    let out = out_path(dir, cfg, "f4_report.json");
    io::write_json(&out, &report)?;
    let resolved = RunConfig {
        reps: Some(reps),
        master_seed: Some(seed),
        b_adaptive: Some(b_adaptive),
        b_parametric: Some(b_parametric),
        q: Some(q),
        c_thr: Some(c_thr),
        mode: Some(match mode {
            SelectionMode::Theory => "theory".into(),
            SelectionMode::Practical => "practical".into(),
        }),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        integrator_method: cfg.integrator_method.clone(),
        out: Some(out.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![out], resolved))
}

fn run_rate(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let fid = cfg.require_fn()?;
    let f = model::test_function(&fid)?;
    let ns = cfg.ns.clone().unwrap_or_else(|| vec![100, 400, 1600]);
    let y = [cfg.y.unwrap_or(0.5)];
    let reps = cfg.reps.unwrap_or(500);
    let seed = cfg.master_seed.unwrap_or(0);
    let b = cfg.b.unwrap_or(2);
    let beta = cfg.beta.unwrap_or(f.meta.beta_nominal);
    let icfg = cfg.integrator(24)?;

    let fit = experiments::rate_slope(&f, beta, &ns, &y, reps, seed, &icfg, b)?;
    let csv = out_path(dir, cfg, "rate.csv");
    io::write_rate_csv(&csv, &fit)?;
    let json_path = csv.with_extension("json");
    io::write_json(&json_path, &fit)?;
    let resolved = RunConfig {
        function_id: Some(fid),
        ns: Some(ns),
        y: Some(y[0]),
        reps: Some(reps),
        master_seed: Some(seed),
        b: Some(b),
        beta: Some(beta),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        integrator_method: cfg.integrator_method.clone(),
        out: Some(csv.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![csv, json_path], resolved))
}

fn run_tail(cfg: &RunConfig, dir: &Path) -> AppResult<(Vec<PathBuf>, RunConfig)> {
    let fid = cfg.function_id.clone().unwrap_or_else(|| "constant:2".into());
    let f = model::test_function(&fid)?;
    let n = cfg.n.unwrap_or(400);
    let h = cfg.h.unwrap_or(0.25);
    let y = [cfg.y.unwrap_or(0.5)];
    let reps = cfg.reps.unwrap_or(5000);
    let seed = cfg.master_seed.unwrap_or(0);
    let b = cfg.b.unwrap_or(2);
    let eps_max = cfg.eps_max.unwrap_or(15.0);
    let eps_count = cfg.eps_count.unwrap_or(30);
    let icfg = cfg.integrator(24)?;
    let eps_grid: Vec<f64> = (1..=eps_count)
        .map(|i| eps_max * i as f64 / eps_count as f64)
        .collect();

    let curve =
        experiments::tail_decay_check(&f, n, h, &eps_grid, &y, reps, seed, &icfg, b)?;
    let csv = out_path(dir, cfg, "tail.csv");
    io::write_tail_csv(&csv, &curve)?;
    let json_path = csv.with_extension("json");
    io::write_json(&json_path, &curve)?;
    let resolved = RunConfig {
        function_id: Some(fid),
        n: Some(n),
        h: Some(h),
        y: Some(y[0]),
        reps: Some(reps),
        master_seed: Some(seed),
        b: Some(b),
        eps_max: Some(eps_max),
        eps_count: Some(eps_count),
        nodes_per_axis: Some(icfg.nodes_per_axis),
        proposal_count: Some(icfg.proposal_count),
        integrator_seed: Some(icfg.seed),
        integrator_method: cfg.integrator_method.clone(),
        out: Some(csv.file_name().unwrap().to_string_lossy().into_owned()),
        ..Default::default()
    };
    Ok((vec![csv, json_path], resolved))
}

fn run(cli: Cli) -> AppResult<()> {
    let workers = cli
        .workers
        .or_else(|| {
            std::env::var("MULREG_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .ok();
    }

    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| validation(format!("{}: {e}", cli.out_dir.display())))?;

    let file_cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cfg = RunConfig::merged(file_cfg, cli.command.flags());

    let (outputs, resolved) = match &cli.command {
        Command::Simulate(_) => run_simulate(&cfg, &cli.out_dir)?,
        Command::Estimate(_) => run_estimate(&cfg, &cli.out_dir)?,
        Command::Adapt(_) => run_adapt(&cfg, &cli.out_dir)?,
        Command::Oracle(_) => run_oracle(&cfg, &cli.out_dir)?,
        Command::ReplicateTable(_) => run_table(&cfg, &cli.out_dir)?,
        Command::ReplicateF4(_) => run_f4(&cfg, &cli.out_dir)?,
        Command::Rate(_) => run_rate(&cfg, &cli.out_dir)?,
        Command::Tail(_) => run_tail(&cfg, &cli.out_dir)?,
    };

    let manifest_path = cli
        .out_dir
        .join(format!("{}_manifest.json", cli.command.name().replace('-', "_")));
    let config_value =
        serde_json::to_value(&resolved).map_err(|e| AppError::Runtime(e.to_string()))?;
    io::write_manifest(&manifest_path, cli.command.name(), config_value, &outputs)?;
    for p in &outputs {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
