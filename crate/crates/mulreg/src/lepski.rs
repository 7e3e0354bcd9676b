//! Fully data-driven estimation: dyadic bandwidth ladder, plug-in random
//! coefficient set, per-scale thresholds, and the pairwise-comparison
//! selection rule (Lepski's method).

use serde::{Deserialize, Serialize};

use crate::bayes::{bayes_estimate, IntegratorCfg, ParamSet};
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::poly::{design_matrix, local_lse, plug_in_bounds, window, MultiIndexSet};

/// Dyadic bandwidth ladder `h_k = 2^-k h_max` with
/// `h_max = n^{-1/(b+d)}` and every scale at or above
/// `h_min = (ln n)^{b/(d(b+d))} n^{-1/d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthGrid {
    pub h_max: f64,
    pub h_min: f64,
    pub scales: Vec<f64>,
}

impl BandwidthGrid {
    /// Largest usable index k_n.
    pub fn k_n(&self) -> usize {
        self.scales.len() - 1
    }
}

/// Build the ladder. `DegenerateGrid` when fewer than two scales survive.
pub fn bandwidth_grid(n: usize, b: usize, d: usize) -> Result<BandwidthGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2".into()));
    }
    let nf = n as f64;
    let h_max = nf.powf(-1.0 / (b + d) as f64);
    let h_min = nf.ln().powf(b as f64 / (d * (b + d)) as f64) * nf.powf(-1.0 / d as f64);
    let mut scales = Vec::new();
    let mut h = h_max;
    // Keep the largest k with h_k >= h_min (a hair of slack absorbs the
    // rounding in repeated halving).
    while h >= h_min * (1.0 - 1e-12) {
        scales.push(h);
        h /= 2.0;
    }
    if scales.len() < 2 {
        return Err(Error::DegenerateGrid { n, h_max, h_min });
    }
    Ok(BandwidthGrid {
        h_max,
        h_min,
        scales,
    })
}

/// Which threshold constant the selection rule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// The proof constant `432 D_b^3 (32 q d + 16)`. Asymptotic; at desk
    /// sample sizes it always selects the coarsest scale.
    Theory,
    /// User constant `C_thr` (default 2.0) in place of the proof constant.
    #[default]
    Practical,
}

/// Per-scale comparison threshold
/// `S_n(l) = C * lambda_n^{-1}(h_l) * (1 + l ln 2) / (n h_l^d)`,
/// where C is the theory constant or `C_thr`.
#[allow(clippy::too_many_arguments)]
pub fn threshold(
    l: usize,
    n: usize,
    d: usize,
    q: f64,
    d_b: usize,
    lambda_l: f64,
    mode: SelectionMode,
    c_thr: f64,
    h_l: f64,
) -> f64 {
    let constant = match mode {
        SelectionMode::Theory => theory_threshold_constant(d_b, q, d),
        SelectionMode::Practical => c_thr,
    };
    constant * (1.0 + l as f64 * std::f64::consts::LN_2)
        / (n as f64 * h_l.powi(d as i32) * lambda_l)
}

/// The proof constant `432 D_b^3 (32 q d + 16)`.
pub fn theory_threshold_constant(d_b: usize, q: f64, d: usize) -> f64 {
    432.0 * (d_b as f64).powi(3) * (32.0 * q * d as f64 + 16.0)
}

/// Pointwise minimax rate `n^{-beta/(beta+d)}`.
pub fn minimax_rate(beta: f64, n: usize, d: usize) -> f64 {
    (n as f64).powf(-beta / (beta + d as f64))
}

/// Adaptive normalization `(rho_n(beta)/n)^{beta/(beta+d)}` with the
/// adaptation price `rho_n(beta) = 1 + ln(phi_n(beta)/phi_n(b))`; used to
/// normalize risks in reports. Equals the minimax rate at `beta = b` and
/// grows by a log factor below it.
pub fn adaptive_rate(beta: f64, b: usize, n: usize, d: usize) -> (f64, f64) {
    let nf = n as f64;
    let rho = 1.0 + (minimax_rate(beta, n, d) / minimax_rate(b as f64, n, d)).ln();
    let phi = (rho / nf).powf(beta / (beta + d as f64));
    (rho, phi)
}

/// Plug-in random coefficient set `Theta(A/2, 4M)` from the preliminary
/// least-squares bounds.
pub fn random_param_set(
    a_hat: f64,
    m_hat: f64,
    idxset: std::sync::Arc<MultiIndexSet>,
) -> Result<ParamSet> {
    if a_hat <= 0.0 {
        return Err(Error::InvalidBounds {
            a_low: a_hat,
            m_up: m_hat,
        });
    }
    ParamSet::new(a_hat / 2.0, 4.0 * m_hat, idxset)
}

/// One ladder rung of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimate {
    pub k: usize,
    pub h: f64,
    pub f_hat: f64,
    /// Smallest moment-matrix eigenvalue at this scale.
    pub lambda: f64,
    /// Threshold sequence value S_n(k).
    pub s_n: f64,
    /// True when the posterior support was empty at this scale and the
    /// boundary estimate max Y replaced it.
    pub fallback: bool,
}

/// One pairwise test of the selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub k: usize,
    pub l: usize,
    pub diff: f64,
    /// M_hat * S_n(l).
    pub threshold: f64,
    pub pass: bool,
}

/// Everything a selection run decided and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub estimates: Vec<ScaleEstimate>,
    pub comparisons: Vec<Comparison>,
    pub k_hat: usize,
    pub bounds: PlugInBounds,
    pub mode: SelectionMode,
    pub c_thr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlugInBounds {
    pub a_hat: f64,
    pub m_hat: f64,
}

/// The selection rule: the smallest k whose estimate is within
/// `m_hat * S_n(l)` of every finer-scale estimate; the finest scale when no
/// k passes.
pub fn select(estimates: &[f64], s_n: &[f64], m_hat: f64) -> (usize, Vec<Comparison>) {
    assert_eq!(estimates.len(), s_n.len());
    let k_n = estimates.len() - 1;
    let mut comparisons = Vec::new();
    let mut k_hat = k_n;
    let mut found = false;
    for k in 0..=k_n {
        let mut all_pass = true;
        for l in (k + 1)..=k_n {
            let diff = (estimates[k] - estimates[l]).abs();
            let thr = m_hat * s_n[l];
            let pass = diff <= thr;
            comparisons.push(Comparison {
                k,
                l,
                diff,
                threshold: thr,
                pass,
            });
            all_pass &= pass;
        }
        if all_pass && !found {
            k_hat = k;
            found = true;
        }
    }
    (k_hat, comparisons)
}

/// The full data-driven pipeline at a point: preliminary least squares at
/// h_max, plug-in set, posterior-median estimates along the ladder, and the
/// pairwise selection. Returns the selected estimate with its trace.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_estimate(
    sample: &Sample,
    y: &[f64],
    b: usize,
    q: f64,
    cfg: &IntegratorCfg,
    mode: SelectionMode,
    c_thr: f64,
) -> Result<(f64, SelectionTrace)> {
    let d = sample.grid.dimension();
    let n = sample.len();
    let grid = bandwidth_grid(n, b, d)?;
    let idxset = MultiIndexSet::new(d, b);

    let win_max = window(sample, y, grid.h_max, &idxset)?;
    let (_, delta) = local_lse(&win_max)?;
    let (a_hat, m_hat) = plug_in_bounds(&delta)?;
    let set = random_param_set(a_hat, m_hat, idxset.clone())?;

    let d_b = idxset.len();
    let mut estimates = Vec::with_capacity(grid.scales.len());
    for (k, &h_k) in grid.scales.iter().enumerate() {
        let win_k = window(sample, y, h_k, &idxset)?;
        let lambda = design_matrix(&win_k).lambda_min;
        let scale_cfg = cfg.salted(&[k as u64]);
        let (f_hat, fallback) = match bayes_estimate(&win_k, &set, &scale_cfg) {
            Ok(est) => (est.f_hat_y, false),
            Err(Error::EmptyPosteriorSupport) => (win_k.max_y(), true),
            Err(e) => return Err(e),
        };
        let s_n = threshold(k, n, d, q, d_b, lambda, mode, c_thr, h_k);
        estimates.push(ScaleEstimate {
            k,
            h: h_k,
            f_hat,
            lambda,
            s_n,
            fallback,
        });
    }

    let values: Vec<f64> = estimates.iter().map(|e| e.f_hat).collect();
    let s_n: Vec<f64> = estimates.iter().map(|e| e.s_n).collect();
    let (k_hat, comparisons) = select(&values, &s_n, m_hat);
    let f_star = values[k_hat];
    Ok((
        f_star,
        SelectionTrace {
            estimates,
            comparisons,
            k_hat,
            bounds: PlugInBounds { a_hat, m_hat },
            mode,
            c_thr,
        },
    ))
}

/// Replay a trace's comparisons against its selection rule; true when the
/// recorded k_hat is exactly what the rule implies.
pub fn trace_is_consistent(trace: &SelectionTrace) -> bool {
    let k_n = trace.estimates.len() - 1;
    let passes = |k: usize| -> Option<bool> {
        let mut all = true;
        for l in (k + 1)..=k_n {
            let c = trace
                .comparisons
                .iter()
                .find(|c| c.k == k && c.l == l)?;
            if c.pass != (c.diff <= c.threshold) {
                return None;
            }
            all &= c.pass;
        }
        Some(all)
    };
    let mut implied = k_n;
    for k in 0..=k_n {
        match passes(k) {
            Some(true) => {
                implied = k;
                break;
            }
            Some(false) => continue,
            None => return false,
        }
    }
    implied == trace.k_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, test_function, DesignGrid};

    #[test]
    fn ladder_n100() {
        let g = bandwidth_grid(100, 2, 1).unwrap();
        assert!((g.h_max - 0.2154).abs() < 1e-3);
        assert!((g.h_min - 0.0277).abs() < 1e-4);
        assert_eq!(g.scales.len(), 3);
        assert!((g.scales[2] - 0.0539).abs() < 1e-4);
    }

    #[test]
    fn ladder_n1000() {
        let g = bandwidth_grid(1000, 2, 1).unwrap();
        assert!((g.h_max - 0.1).abs() < 1e-12);
        assert!((g.h_min - 0.00363).abs() < 2e-5);
        assert_eq!(g.k_n(), 4);
    }

    #[test]
    fn ladder_degenerate() {
        // n = 3, b = 2: h_1 = 0.3467 already sits below h_min = 0.3549.
        assert!(matches!(
            bandwidth_grid(3, 2, 1),
            Err(Error::DegenerateGrid { .. })
        ));
    }

    #[test]
    fn ladder_decreasing_and_bounded() {
        let g = bandwidth_grid(5000, 3, 1).unwrap();
        for w in g.scales.windows(2) {
            assert!((w[1] - w[0] / 2.0).abs() < 1e-15);
        }
        assert!(*g.scales.last().unwrap() >= g.h_min * (1.0 - 1e-12));
        assert_eq!(g.scales[0], g.h_max);
    }

    #[test]
    fn theory_constant_matches_formula() {
        assert_eq!(theory_threshold_constant(3, 1.0, 1), 432.0 * 27.0 * 48.0);
        assert_eq!(theory_threshold_constant(3, 1.0, 1), 559_872.0);
    }

    #[test]
    fn threshold_practical_example() {
        let h1 = 0.1077;
        let s = threshold(1, 100, 1, 1.0, 3, 0.005, SelectionMode::Practical, 2.0, h1);
        assert!((s - 62.9).abs() < 0.05, "got {s}");
    }

    #[test]
    fn threshold_increasing_in_l() {
        let g = bandwidth_grid(1000, 2, 1).unwrap();
        let mut prev = 0.0;
        for (l, &h) in g.scales.iter().enumerate() {
            // Constant lambda isolates the (1 + l ln 2)/(n h^d) factor.
            let s = threshold(l, 1000, 1, 1.0, 3, 0.005, SelectionMode::Practical, 2.0, h);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn random_set_examples() {
        let idx = MultiIndexSet::new(1, 2);
        let s = random_param_set(2.0, 2.0, idx.clone()).unwrap();
        assert_eq!((s.a_low, s.m_up), (1.0, 8.0));
        let s2 = random_param_set(1.5, 2.0, idx.clone()).unwrap();
        assert_eq!((s2.a_low, s2.m_up), (0.75, 8.0));
        assert!(matches!(
            random_param_set(-0.1, 2.0, idx),
            Err(Error::InvalidBounds { .. })
        ));
    }

    #[test]
    fn select_identical_estimates() {
        let (k, _) = select(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 1.0);
        assert_eq!(k, 0);
    }

    #[test]
    fn select_no_pass_falls_to_finest() {
        let (k, comps) = select(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 1.0);
        assert_eq!(k, 2);
        assert!(comps.iter().all(|c| !c.pass));
    }

    #[test]
    fn select_rule_example() {
        let (k, _) = select(&[1.0, 1.01, 2.0], &[0.05, 0.05, 0.05], 1.0);
        assert_eq!(k, 2);
    }

    #[test]
    fn select_monotone_under_threshold_scaling() {
        let est = [1.0, 1.3, 0.9, 1.05];
        let s = [0.1, 0.2, 0.3, 0.4];
        let (k1, _) = select(&est, &s, 1.0);
        for rho in [1.0, 1.5, 2.0, 10.0, 100.0] {
            let scaled: Vec<f64> = s.iter().map(|v| v * rho).collect();
            let (k2, _) = select(&est, &scaled, 1.0);
            assert!(k2 <= k1, "rho {rho} raised k from {k1} to {k2}");
        }
    }

    #[test]
    fn adaptive_deterministic_and_consistent() {
        let f = test_function("f1").unwrap();
        let grid = DesignGrid::make(1, 100).unwrap();
        let s = simulate(&f, &grid, 77);
        let cfg = IntegratorCfg {
            nodes_per_axis: 24,
            ..Default::default()
        };
        let (fa, ta) =
            adaptive_estimate(&s, &[0.5], 2, 1.0, &cfg, SelectionMode::Practical, 2.0).unwrap();
        let (fb, tb) =
            adaptive_estimate(&s, &[0.5], 2, 1.0, &cfg, SelectionMode::Practical, 2.0).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(ta, tb);
        assert!(ta.k_hat < ta.estimates.len());
        assert!(trace_is_consistent(&ta));
        assert!(fa.is_finite());
    }

    #[test]
    fn rate_normalizations() {
        // At beta = b the adaptation price is 1 and the normalization is
        // the minimax rate itself.
        let (rho, phi) = adaptive_rate(2.0, 2, 1000, 1);
        assert!((rho - 1.0).abs() < 1e-12);
        assert!((phi - minimax_rate(2.0, 1000, 1)).abs() < 1e-12);
        // Below b the price is logarithmic and the normalization is slower
        // than minimax.
        let (rho1, phi1) = adaptive_rate(1.0, 2, 1000, 1);
        assert!(rho1 > 1.0 && rho1 < 1.0 + 1000f64.ln());
        assert!(phi1 > minimax_rate(1.0, 1000, 1));
        // Decreasing in n.
        assert!(adaptive_rate(1.0, 2, 10_000, 1).1 < phi1);
    }

    #[test]
    fn theory_mode_picks_coarsest_on_f1() {
        let f = test_function("f1").unwrap();
        let cfg = IntegratorCfg {
            nodes_per_axis: 24,
            ..Default::default()
        };
        for (n, seeds) in [(100usize, 5u64), (1000, 2)] {
            let grid = DesignGrid::make(1, n).unwrap();
            for seed in 0..seeds {
                let s = simulate(&f, &grid, seed);
                let (_, trace) =
                    adaptive_estimate(&s, &[0.5], 2, 1.0, &cfg, SelectionMode::Theory, 2.0)
                        .unwrap();
                assert_eq!(trace.k_hat, 0, "theory constants are asymptotic");
            }
        }
    }
}
