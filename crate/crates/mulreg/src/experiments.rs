//! Monte Carlo risk engine: seeded replications, oracle bandwidth search,
//! risk tables, the locally-parametric comparison, rate-slope fits, and an
//! empirical tail-decay diagnostic.
//!
//! Replications derive their seeds from (master seed, tags, rep index), so
//! every report is reproducible bit for bit and invariant to the worker
//! count; reductions are indexed folds over the completed replication list.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bayes::{bayes_estimate, IntegratorCfg};
use crate::error::{Error, Result};
use crate::lepski::{adaptive_estimate, bandwidth_grid, random_param_set, SelectionMode};
use crate::model::{simulate_with, DesignGrid, FunctionSpec, NoiseMode};
use crate::poly::{local_lse, plug_in_bounds, window, MultiIndexSet};
use crate::rng::{derive_u64, tag};

/// Which estimator a Monte Carlo run measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EstimatorSpec {
    /// Posterior-median family on the plug-in set; risk minimized over the
    /// candidate bandwidths with knowledge of the truth.
    Oracle { b: usize, candidates: Vec<f64> },
    /// The full data-driven pipeline.
    Adaptive {
        b: usize,
        q: f64,
        mode: SelectionMode,
        c_thr: f64,
    },
    /// Known-constants posterior median at the minimax bandwidth.
    Minimax {
        b: usize,
        beta: f64,
        lipschitz: f64,
        a_low: f64,
        m_up: f64,
    },
    /// Local least squares with its own oracle bandwidth; the linear
    /// comparator for the rate experiment.
    LseBaseline { b: usize, candidates: Vec<f64> },
    /// Posterior median at the fixed window h = 1/8 (the locally parametric
    /// estimator of the piecewise-linear experiment).
    ParametricF4 { b: usize },
}

impl EstimatorSpec {
    fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Oracle { .. } => "oracle",
            EstimatorSpec::Adaptive { .. } => "adaptive",
            EstimatorSpec::Minimax { .. } => "minimax",
            EstimatorSpec::LseBaseline { .. } => "lse_baseline",
            EstimatorSpec::ParametricF4 { .. } => "parametric_f4",
        }
    }
}

/// Mean absolute error of an estimator at a point, with its Monte Carlo
/// standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub function_id: String,
    pub n: usize,
    pub y: Vec<f64>,
    pub reps: usize,
    pub estimator: String,
    pub risk: f64,
    pub std_error: f64,
    pub failed: usize,
    pub extra: serde_json::Value,
}

fn mean_and_se(errs: &[f64]) -> (f64, f64) {
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    if errs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_failures(reps: usize, failures: &[String]) -> Result<()> {
    if failures.len() * 10 > reps {
        return Err(Error::ExcessiveFailures {
            failed: failures.len(),
            reps,
            first: failures[0].clone(),
        });
    }
    Ok(())
}

/// Absolute errors of the ladder estimates at every candidate bandwidth for
/// one replication, using the data-driven coefficient set fitted at h_max.
fn candidate_errors(
    sample: &crate::model::Sample,
    y: &[f64],
    b: usize,
    candidates: &[f64],
    cfg: &IntegratorCfg,
    f_true: f64,
) -> Result<Vec<f64>> {
    let d = sample.grid.dimension();
    let idxset = MultiIndexSet::new(d, b);
    let h_max = (sample.len() as f64).powf(-1.0 / (b + d) as f64);
    let win_max = window(sample, y, h_max, &idxset)?;
    let (_, delta) = local_lse(&win_max)?;
    let (a_hat, m_hat) = plug_in_bounds(&delta)?;
    let set = random_param_set(a_hat, m_hat, idxset.clone())?;
    candidates
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let win = window(sample, y, h, &idxset)?;
            let est = bayes_estimate(&win, &set, &cfg.salted(&[k as u64]))?;
            Ok((est.f_hat_y - f_true).abs())
        })
        .collect()
}

fn lse_candidate_errors(
    sample: &crate::model::Sample,
    y: &[f64],
    b: usize,
    candidates: &[f64],
    f_true: f64,
) -> Result<Vec<f64>> {
    let d = sample.grid.dimension();
    let idxset = MultiIndexSet::new(d, b);
    candidates
        .iter()
        .map(|&h| {
            let win = window(sample, y, h, &idxset)?;
            let (theta, _) = local_lse(&win)?;
            Ok((theta.values[0] - f_true).abs())
        })
        .collect()
}

/// Risk-minimizing candidate index with ties resolved toward the larger
/// bandwidth (candidates are scanned in the given order; pass them
/// descending).
fn argmin_risk(risks: &[f64]) -> usize {
    let mut best = 0;
    for (k, &r) in risks.iter().enumerate() {
        if r < risks[best] {
            best = k;
        }
    }
    best
}

/// Monte Carlo risk of an estimator at a point. Failed replications are
/// skipped and counted; more than 10% of them is an error.
#[allow(clippy::too_many_arguments)]
pub fn mc_risk(
    spec: &EstimatorSpec,
    f: &FunctionSpec,
    y: &[f64],
    n: usize,
    reps: usize,
    master_seed: u64,
    cfg: &IntegratorCfg,
    noise: NoiseMode,
) -> Result<RiskReport> {
    if reps < 2 {
        return Err(Error::InvalidArgument("need reps >= 2".into()));
    }
    let d = y.len();
    let grid = DesignGrid::make(d, n)?;
    let f_true = f.eval(y);

    // Per-replication payload: either scalar error or per-candidate errors.
    enum Payload {
        Scalar(f64),
        PerCandidate(Vec<f64>),
        Selected { err: f64, h: f64 },
    }

    let outcomes: Vec<std::result::Result<Payload, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_u64(master_seed, &[tag::REPLICATION, rep]);
            let sample = simulate_with(f, &grid, seed, noise);
            let rep_cfg = cfg.salted(&[tag::REPLICATION, rep]);
            let run = || -> Result<Payload> {
                match spec {
                    EstimatorSpec::Oracle { b, candidates } => Ok(Payload::PerCandidate(
                        candidate_errors(&sample, y, *b, candidates, &rep_cfg, f_true)?,
                    )),
                    EstimatorSpec::LseBaseline { b, candidates } => Ok(Payload::PerCandidate(
                        lse_candidate_errors(&sample, y, *b, candidates, f_true)?,
                    )),
                    EstimatorSpec::Adaptive { b, q, mode, c_thr } => {
                        let (f_star, trace) =
                            adaptive_estimate(&sample, y, *b, *q, &rep_cfg, *mode, *c_thr)?;
                        Ok(Payload::Selected {
                            err: (f_star - f_true).abs(),
                            h: trace.estimates[trace.k_hat].h,
                        })
                    }
                    EstimatorSpec::Minimax {
                        b,
                        beta,
                        lipschitz,
                        a_low,
                        m_up,
                    } => {
                        let (est, _) = crate::bayes::minimax_estimate(
                            &sample, y, *beta, *lipschitz, *a_low, *m_up, *b, &rep_cfg,
                        )?;
                        Ok(Payload::Scalar((est.f_hat_y - f_true).abs()))
                    }
                    EstimatorSpec::ParametricF4 { b } => {
                        let idxset = MultiIndexSet::new(d, *b);
                        let win = window(&sample, y, 0.125, &idxset)?;
                        let (_, delta) = local_lse(&win)?;
                        let (a_hat, m_hat) = plug_in_bounds(&delta)?;
                        let set = random_param_set(a_hat, m_hat, idxset)?;
                        let est = bayes_estimate(&win, &set, &rep_cfg)?;
                        Ok(Payload::Scalar((est.f_hat_y - f_true).abs()))
                    }
                }
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut failures = Vec::new();
    let mut scalar_errs = Vec::new();
    let mut per_candidate: Vec<Vec<f64>> = Vec::new();
    let mut selected_h = Vec::new();
    for o in outcomes {
        match o {
            Ok(Payload::Scalar(e)) => scalar_errs.push(e),
            Ok(Payload::Selected { err, h }) => {
                scalar_errs.push(err);
                selected_h.push(h);
            }
            Ok(Payload::PerCandidate(v)) => per_candidate.push(v),
            Err(msg) => failures.push(msg),
        }
    }
    check_failures(reps, &failures)?;

    let (risk, std_error, extra) = match spec {
        EstimatorSpec::Oracle { candidates, .. } | EstimatorSpec::LseBaseline { candidates, .. } => {
            let m = candidates.len();
            let cols: Vec<Vec<f64>> = (0..m)
                .map(|k| per_candidate.iter().map(|v| v[k]).collect())
                .collect();
            let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_and_se(c)).collect();
            let risks: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let ses: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let best = argmin_risk(&risks);
            let extra = json!({
                "h_tilde": candidates[best],
                "candidates": candidates,
                "candidate_risks": risks,
                "candidate_ses": ses,
            });
            (stats[best].0, stats[best].1, extra)
        }
        EstimatorSpec::Adaptive { .. } => {
            let (risk, se) = mean_and_se(&scalar_errs);
            let mean_h = selected_h.iter().sum::<f64>() / selected_h.len().max(1) as f64;
            (risk, se, json!({ "mean_selected_h": mean_h }))
        }
        _ => {
            let (risk, se) = mean_and_se(&scalar_errs);
            (risk, se, json!(null))
        }
    };

    Ok(RiskReport {
        function_id: f.id.to_string(),
        n,
        y: y.to_vec(),
        reps,
        estimator: spec.name().to_string(),
        risk,
        std_error,
        failed: failures.len(),
        extra,
    })
}

/// Oracle bandwidth search: per-candidate Monte Carlo risks and the
/// minimizer, ties resolved toward the larger (smoother) bandwidth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub function_id: String,
    pub n: usize,
    pub y: Vec<f64>,
    pub reps: usize,
    pub h_tilde: f64,
    /// (candidate, risk, standard error), in the candidate order given.
    pub risks: Vec<(f64, f64, f64)>,
}

#[allow(clippy::too_many_arguments)]
pub fn oracle_bandwidth(
    f: &FunctionSpec,
    y: &[f64],
    n: usize,
    candidates: &[f64],
    reps: usize,
    master_seed: u64,
    cfg: &IntegratorCfg,
    b: usize,
) -> Result<OracleReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate bandwidths".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let spec = EstimatorSpec::Oracle {
        b,
        candidates: sorted.clone(),
    };
    let report = mc_risk(&spec, f, y, n, reps, master_seed, cfg, NoiseMode::Uniform)?;
    let as_vec = |key: &str| -> Vec<f64> {
        report.extra[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect()
    };
    let risks = as_vec("candidate_risks");
    let ses = as_vec("candidate_ses");
    let best = argmin_risk(&risks);
    Ok(OracleReport {
        function_id: f.id.to_string(),
        n,
        y: y.to_vec(),
        reps,
        h_tilde: sorted[best],
        risks: sorted
            .iter()
            .zip(risks.iter().zip(&ses))
            .map(|(&h, (&r, &s))| (h, r, s))
            .collect(),
    })
}

/// Dyadic candidate bandwidths 2^-1, 2^-2, ... that keep the window inside
/// the unit cube at y and leave at least D_b + 2 expected observations.
pub fn dyadic_candidates(n: usize, d: usize, b: usize, y: &[f64]) -> Vec<f64> {
    let d_b = MultiIndexSet::new(d, b).len();
    let mut out = Vec::new();
    let mut h: f64 = 0.5;
    while n as f64 * h.powi(d as i32) >= (d_b + 2) as f64 {
        let fits = y
            .iter()
            .all(|&yj| yj - h / 2.0 >= -1e-12 && yj + h / 2.0 <= 1.0 + 1e-12);
        if fits {
            out.push(h);
        }
        h /= 2.0;
    }
    out
}

/// One cell of the oracle-versus-adaptive risk table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub function_id: String,
    pub n: usize,
    pub points_used: usize,
    pub reps: usize,
    pub adaptive_risk: f64,
    pub adaptive_se: f64,
    pub oracle_risk: f64,
    /// Mean over evaluation points of the per-point oracle/adaptive ratio.
    pub ratio: f64,
    pub mean_selected_h: f64,
    pub fallback_fraction: f64,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTable {
    pub reps: usize,
    pub mode: SelectionMode,
    pub c_thr: f64,
    pub rows: Vec<TableRow>,
}

/// Evaluation points: `points` equispaced interior points j/(points+1),
/// keeping only those whose h_max window stays inside [0,1].
fn interior_points(points: usize, h_max: f64) -> Vec<f64> {
    (1..=points)
        .map(|j| j as f64 / (points + 1) as f64)
        .filter(|&y| y - h_max / 2.0 >= 0.0 && y + h_max / 2.0 <= 1.0)
        .collect()
}

/// Oracle-versus-adaptive risk table over test functions and sample sizes.
/// The oracle is the per-point risk minimizer over the same dyadic ladder
/// the adaptive rule selects from, evaluated on the same replications.
#[allow(clippy::too_many_arguments)]
pub fn replicate_risk_table(
    function_ids: &[String],
    ns: &[usize],
    points: usize,
    reps: usize,
    mode: SelectionMode,
    c_thr: f64,
    master_seed: u64,
    cfg: &IntegratorCfg,
    b: usize,
    q: f64,
) -> Result<RiskTable> {
    let mut rows = Vec::new();
    for (fi, fid) in function_ids.iter().enumerate() {
        let f = crate::model::test_function(fid)?;
        for (ni, &n) in ns.iter().enumerate() {
            let cell = (fi * ns.len() + ni) as u64;
            let ladder = bandwidth_grid(n, b, 1)?;
            let ys = interior_points(points, ladder.h_max);
            let grid = DesignGrid::make(1, n)?;
            // The oracle searches beyond the ladder: dyadic bandwidths valid
            // at each point, evaluated with the same plug-in set.
            let idxset = MultiIndexSet::new(1, b);
            let extras: Vec<Vec<f64>> = ys
                .iter()
                .map(|&y| {
                    dyadic_candidates(n, 1, b, &[y])
                        .into_iter()
                        .filter(|h| *h > ladder.h_max)
                        .collect()
                })
                .collect();
            let jobs: Vec<(usize, u64)> = ys
                .iter()
                .enumerate()
                .flat_map(|(pi, _)| (0..reps as u64).map(move |r| (pi, r)))
                .collect();

            struct Outcome {
                point: usize,
                err_star: f64,
                scale_errs: Vec<f64>,
                extra_errs: Vec<f64>,
                h_sel: f64,
                fallback: bool,
            }

            let results: Vec<std::result::Result<Outcome, String>> = jobs
                .par_iter()
                .map(|&(pi, rep)| {
                    let y = [ys[pi]];
                    let f_true = f.eval(&y);
                    let seed =
                        derive_u64(master_seed, &[tag::REPLICATION, cell, pi as u64, rep]);
                    let sample = simulate_with(&f, &grid, seed, NoiseMode::Uniform);
                    let rep_cfg = cfg.salted(&[cell, pi as u64, rep]);
                    let run = || -> Result<Outcome> {
                        let (f_star, trace) =
                            adaptive_estimate(&sample, &y, b, q, &rep_cfg, mode, c_thr)?;
                        let set = random_param_set(
                            trace.bounds.a_hat,
                            trace.bounds.m_hat,
                            idxset.clone(),
                        )?;
                        let extra_errs = extras[pi]
                            .iter()
                            .enumerate()
                            .map(|(j, &h)| {
                                let win = window(&sample, &y, h, &idxset)?;
                                let est = bayes_estimate(
                                    &win,
                                    &set,
                                    &rep_cfg.salted(&[100 + j as u64]),
                                )?;
                                Ok((est.f_hat_y - f_true).abs())
                            })
                            .collect::<Result<Vec<f64>>>()?;
                        Ok(Outcome {
                            point: pi,
                            err_star: (f_star - f_true).abs(),
                            scale_errs: trace
                                .estimates
                                .iter()
                                .map(|e| (e.f_hat - f_true).abs())
                                .collect(),
                            extra_errs,
                            h_sel: trace.estimates[trace.k_hat].h,
                            fallback: trace.estimates.iter().any(|e| e.fallback),
                        })
                    };
                    run().map_err(|e| e.to_string())
                })
                .collect();

            let mut failures = Vec::new();
            let mut per_point: Vec<Vec<&Outcome>> = vec![Vec::new(); ys.len()];
            for r in &results {
                match r {
                    Ok(o) => per_point[o.point].push(o),
                    Err(msg) => failures.push(msg.clone()),
                }
            }
            check_failures(jobs.len(), &failures)?;

            let k_count = ladder.scales.len();
            let mut adaptive_risks = Vec::new();
            let mut adaptive_vars = Vec::new();
            let mut ratios = Vec::new();
            let mut mean_h = 0.0;
            let mut fallbacks = 0usize;
            let mut used = 0usize;
            let mut used_outcomes = 0usize;
            for (pi, outs) in per_point.iter().enumerate() {
                if outs.len() < 2 {
                    continue;
                }
                used += 1;
                used_outcomes += outs.len();
                let errs: Vec<f64> = outs.iter().map(|o| o.err_star).collect();
                let (risk, se) = mean_and_se(&errs);
                adaptive_risks.push(risk);
                adaptive_vars.push(se * se);
                let ladder_oracle = (0..k_count)
                    .map(|k| {
                        outs.iter().map(|o| o.scale_errs[k]).sum::<f64>() / outs.len() as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                let extra_oracle = (0..extras[pi].len())
                    .map(|j| {
                        outs.iter().map(|o| o.extra_errs[j]).sum::<f64>() / outs.len() as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                let oracle = ladder_oracle.min(extra_oracle);
                ratios.push(oracle / risk);
                mean_h += outs.iter().map(|o| o.h_sel).sum::<f64>();
                fallbacks += outs.iter().filter(|o| o.fallback).count();
            }
            if used == 0 {
                return Err(Error::InvalidArgument(format!(
                    "no evaluation point of ({fid}, n={n}) kept its h_max window inside [0,1]"
                )));
            }
            let total_outcomes = used_outcomes;
            let adaptive_risk = adaptive_risks.iter().sum::<f64>() / used as f64;
            let adaptive_se =
                adaptive_vars.iter().sum::<f64>().sqrt() / used as f64;
            let ratio = ratios.iter().sum::<f64>() / used as f64;
            let oracle_risk = adaptive_risks
                .iter()
                .zip(&ratios)
                .map(|(a, r)| a * r)
                .sum::<f64>()
                / used as f64;
            rows.push(TableRow {
                function_id: fid.clone(),
                n,
                points_used: used,
                reps,
                adaptive_risk,
                adaptive_se,
                oracle_risk,
                ratio,
                mean_selected_h: mean_h / total_outcomes as f64,
                fallback_fraction: fallbacks as f64 / total_outcomes as f64,
                failed: failures.len(),
            });
        }
    }
    Ok(RiskTable {
        reps,
        mode,
        c_thr,
        rows,
    })
}

/// Report of the locally parametric comparison at y = 1/2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F4Report {
    pub n: usize,
    pub reps: usize,
    pub parametric_risk: f64,
    pub parametric_se: f64,
    pub adaptive_risk: f64,
    pub adaptive_se: f64,
    /// adaptive / parametric.
    pub risk_ratio: f64,
    pub mean_selected_h: f64,
    pub b_adaptive: usize,
    pub b_parametric: usize,
    pub failed: usize,
}

/// The piecewise-linear experiment: posterior median on the fixed window
/// h = 1/8 around 1/2 (where the truth is exactly linear) against the full
/// adaptive pipeline, n = 1000.
#[allow(clippy::too_many_arguments)]
pub fn replicate_f4(
    reps: usize,
    master_seed: u64,
    cfg: &IntegratorCfg,
    b_adaptive: usize,
    b_parametric: usize,
    q: f64,
    mode: SelectionMode,
    c_thr: f64,
) -> Result<F4Report> {
    let n = 1000;
    let y = [0.5];
    let f = crate::model::test_function("f4")?;
    let f_true = f.eval(&y);
    let grid = DesignGrid::make(1, n)?;
    let idx_param = MultiIndexSet::new(1, b_parametric);

    let outcomes: Vec<std::result::Result<(f64, f64, f64), String>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_u64(master_seed, &[tag::REPLICATION, rep]);
            let sample = simulate_with(&f, &grid, seed, NoiseMode::Uniform);
            let rep_cfg = cfg.salted(&[tag::REPLICATION, rep]);
            let run = || -> Result<(f64, f64, f64)> {
                let win = window(&sample, &y, 0.125, &idx_param)?;
                let (_, delta) = local_lse(&win)?;
                let (a_hat, m_hat) = plug_in_bounds(&delta)?;
                let set = random_param_set(a_hat, m_hat, idx_param.clone())?;
                let param = bayes_estimate(&win, &set, &rep_cfg)?;
                let (f_star, trace) =
                    adaptive_estimate(&sample, &y, b_adaptive, q, &rep_cfg, mode, c_thr)?;
                Ok((
                    (param.f_hat_y - f_true).abs(),
                    (f_star - f_true).abs(),
                    trace.estimates[trace.k_hat].h,
                ))
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut failures = Vec::new();
    let mut param_errs = Vec::new();
    let mut adapt_errs = Vec::new();
    let mut h_sel = Vec::new();
    for o in outcomes {
        match o {
            Ok((pe, ae, h)) => {
                param_errs.push(pe);
                adapt_errs.push(ae);
                h_sel.push(h);
            }
            Err(msg) => failures.push(msg),
        }
    }
    check_failures(reps, &failures)?;

    let (parametric_risk, parametric_se) = mean_and_se(&param_errs);
    let (adaptive_risk, adaptive_se) = mean_and_se(&adapt_errs);
    Ok(F4Report {
        n,
        reps,
        parametric_risk,
        parametric_se,
        adaptive_risk,
        adaptive_se,
        risk_ratio: adaptive_risk / parametric_risk,
        mean_selected_h: h_sel.iter().sum::<f64>() / h_sel.len() as f64,
        b_adaptive,
        b_parametric,
        failed: failures.len(),
    })
}

/// Least-squares slope of log risk against log n for the posterior-median
/// oracle and the least-squares oracle baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub function_id: String,
    pub beta_nominal: f64,
    pub ns: Vec<usize>,
    pub risks: Vec<f64>,
    pub slope: f64,
    /// -beta/(beta+d).
    pub target: f64,
    pub baseline_risks: Vec<f64>,
    pub baseline_slope: f64,
    /// -beta/(2 beta + d).
    pub baseline_target: f64,
    /// n^{-beta/(beta+d)} per sample size, for normalized reporting.
    pub minimax_rates: Vec<f64>,
    /// (rho_n(beta)/n)^{beta/(beta+d)} per sample size, the adaptive
    /// normalization with its logarithmic adaptation price.
    pub adaptive_rates: Vec<f64>,
}

fn log_slope(ns: &[usize], risks: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = risks.iter().map(|r| r.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Oracle-bandwidth risks across sample sizes, fitting both convergence
/// slopes.
#[allow(clippy::too_many_arguments)]
pub fn rate_slope(
    f: &FunctionSpec,
    beta_nominal: f64,
    ns: &[usize],
    y: &[f64],
    reps: usize,
    master_seed: u64,
    cfg: &IntegratorCfg,
    b: usize,
) -> Result<RateFit> {
    if ns.len() < 3 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least 3 sample sizes".into(),
        ));
    }
    let d = y.len();
    let mut risks = Vec::new();
    let mut baseline_risks = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let candidates = dyadic_candidates(n, d, b, y);
        if candidates.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no valid candidate bandwidth at n = {n}"
            )));
        }
        let seed_b = derive_u64(master_seed, &[tag::FIXTURE, i as u64, 0]);
        let bayes = mc_risk(
            &EstimatorSpec::Oracle {
                b,
                candidates: candidates.clone(),
            },
            f,
            y,
            n,
            reps,
            seed_b,
            cfg,
            NoiseMode::Uniform,
        )?;
        risks.push(bayes.risk);
        let seed_l = derive_u64(master_seed, &[tag::FIXTURE, i as u64, 1]);
        let lse = mc_risk(
            &EstimatorSpec::LseBaseline { b, candidates },
            f,
            y,
            n,
            reps,
            seed_l,
            cfg,
            NoiseMode::Uniform,
        )?;
        baseline_risks.push(lse.risk);
    }
    let beta = beta_nominal;
    Ok(RateFit {
        function_id: f.id.to_string(),
        beta_nominal,
        ns: ns.to_vec(),
        slope: log_slope(ns, &risks),
        target: -beta / (beta + d as f64),
        baseline_slope: log_slope(ns, &baseline_risks),
        baseline_target: -beta / (2.0 * beta + d as f64),
        minimax_rates: ns
            .iter()
            .map(|&n| crate::lepski::minimax_rate(beta, n, d))
            .collect(),
        adaptive_rates: ns
            .iter()
            .map(|&n| crate::lepski::adaptive_rate(beta.min(b as f64), b, n, d).1)
            .collect(),
        risks,
        baseline_risks,
    })
}

/// Empirical tail curve of the scaled deviation `n h^d |f_hat - f(y)|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailCurve {
    pub eps: Vec<f64>,
    pub prob: Vec<f64>,
    /// Linear-fit slope of ln P against eps over the mid-range.
    pub slope: f64,
    pub r_squared: f64,
    /// Indices of the points used for the fit.
    pub fit_indices: Vec<usize>,
}

/// Estimate tail probabilities P(n h^d |f_hat^h(y) - f(y)| >= eps) on an
/// increasing eps grid and fit the log-linear decay over the mid-range
/// (tail points with at least 5 hits, head points below 0.75).
#[allow(clippy::too_many_arguments)]
pub fn tail_decay_check(
    f: &FunctionSpec,
    n: usize,
    h: f64,
    eps_grid: &[f64],
    y: &[f64],
    reps: usize,
    master_seed: u64,
    cfg: &IntegratorCfg,
    b: usize,
) -> Result<TailCurve> {
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("eps grid must increase".into()));
    }
    let d = y.len();
    let grid = DesignGrid::make(d, n)?;
    let f_true = f.eval(y);
    let idxset = MultiIndexSet::new(d, b);
    let h_max = (n as f64).powf(-1.0 / (b + d) as f64);

    let outcomes: Vec<std::result::Result<f64, String>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_u64(master_seed, &[tag::REPLICATION, rep]);
            let sample = simulate_with(f, &grid, seed, NoiseMode::Uniform);
            let rep_cfg = cfg.salted(&[tag::REPLICATION, rep]);
            let run = || -> Result<f64> {
                let win_max = window(&sample, y, h_max, &idxset)?;
                let (_, delta) = local_lse(&win_max)?;
                let (a_hat, m_hat) = plug_in_bounds(&delta)?;
                let set = random_param_set(a_hat, m_hat, idxset.clone())?;
                let win = window(&sample, y, h, &idxset)?;
                let est = bayes_estimate(&win, &set, &rep_cfg)?;
                Ok(n as f64 * h.powi(d as i32) * (est.f_hat_y - f_true).abs())
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut failures = Vec::new();
    let mut devs = Vec::new();
    for o in outcomes {
        match o {
            Ok(v) => devs.push(v),
            Err(msg) => failures.push(msg),
        }
    }
    check_failures(reps, &failures)?;

    let m = devs.len() as f64;
    let prob: Vec<f64> = eps_grid
        .iter()
        .map(|&e| devs.iter().filter(|&&v| v >= e).count() as f64 / m)
        .collect();

    let lo_p = (5.0 / m).max(1e-4);
    let mut fit_indices: Vec<usize> = prob
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= lo_p && p <= 0.75)
        .map(|(i, _)| i)
        .collect();
    if fit_indices.len() < 3 {
        fit_indices = prob
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0 && p < 1.0)
            .map(|(i, _)| i)
            .collect();
    }
    let (slope, r_squared) = if fit_indices.len() >= 2 {
        let xs: Vec<f64> = fit_indices.iter().map(|&i| eps_grid[i]).collect();
        let ys: Vec<f64> = fit_indices.iter().map(|&i| prob[i].ln()).collect();
        linear_fit(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN)
    };

    Ok(TailCurve {
        eps: eps_grid.to_vec(),
        prob,
        slope,
        r_squared,
        fit_indices,
    })
}

/// Slope and R^2 of an ordinary least squares line.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var_x: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let var_y: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = cov / var_x;
    let r2 = if var_y > 0.0 {
        (cov * cov) / (var_x * var_y)
    } else {
        f64::NAN
    };
    (slope, r2)
}
