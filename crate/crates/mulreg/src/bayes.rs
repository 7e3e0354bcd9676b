//! The locally Bayesian estimator.
//!
//! Over a window V_h(y), the pseudo-likelihood of a coefficient vector t is
//! `prod_i [f_t(X_i)]^{-1} 1{Y_i <= f_t(X_i)}`. The estimator minimizes the
//! posterior-weighted L1 distance over the coefficient set Theta(A, M); since
//! the L1 distance separates across coordinates, the unconstrained minimizer
//! is the vector of coordinate-wise posterior medians, and a projected
//! subgradient descent finishes the job when that vector leaves the set.
//!
//! Two integration backends estimate the posterior: tensor-grid quadrature
//! (used up to 3 coefficients) and self-normalized uniform sampling (above).
//! Both first bracket the posterior mass with coarse passes so the final
//! pass spends its nodes where the likelihood actually lives; the bracketing
//! works on log-likelihood differences and therefore commutes with scaling.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::poly::{window, MultiIndexSet, PolyCoeffs, WindowData};
use crate::rng::{self, tag};

/// Coefficient set Theta(A, M): all t with `2 t_0 - ||t||_1 >= A` and
/// `||t||_1 <= M`. Membership guarantees `A <= f_t(x) <= M` on the window.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub a_low: f64,
    pub m_up: f64,
    pub idxset: Arc<MultiIndexSet>,
}

impl ParamSet {
    pub fn new(a_low: f64, m_up: f64, idxset: Arc<MultiIndexSet>) -> Result<Self> {
        if !(a_low.is_finite() && m_up.is_finite() && 0.0 < a_low && a_low < m_up) {
            return Err(Error::InvalidBounds { a_low, m_up });
        }
        Ok(ParamSet {
            a_low,
            m_up,
            idxset,
        })
    }

    /// Exact membership predicate.
    pub fn contains(&self, t: &[f64]) -> bool {
        let l1: f64 = t.iter().map(|v| v.abs()).sum();
        2.0 * t[0] - l1 >= self.a_low && l1 <= self.m_up
    }

    /// Largest constraint violation (0 inside the set).
    pub fn violation(&self, t: &[f64]) -> f64 {
        let l1: f64 = t.iter().map(|v| v.abs()).sum();
        (self.a_low - (2.0 * t[0] - l1)).max(l1 - self.m_up).max(0.0)
    }

    /// Bounding box: `t_0 in [A, M]`, `|t_p| <= (M - A)/2` otherwise, padded
    /// by a tiny non-dyadic factor. Without the pad, quadrature nodes (dyadic
    /// combinations of A and M) can land exactly on the set boundary, and
    /// their membership would then hang on the last bit of rounding.
    pub fn box_hull(&self) -> Vec<(f64, f64)> {
        let pad = 3.1e-8 * (self.m_up - self.a_low);
        let half = (self.m_up - self.a_low) / 2.0 + pad;
        (0..self.idxset.len())
            .map(|k| {
                if k == 0 {
                    (self.a_low - pad, self.m_up + pad)
                } else {
                    (-half, half)
                }
            })
            .collect()
    }

    /// Euclidean projection onto the set (Dykstra between the shifted
    /// l1-cone `t_0 - A >= ||rest||_1` and the l1 ball of radius M), with an
    /// alternating-projection polish so the result is feasible to 1e-12.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        if self.contains(x) {
            return x.to_vec();
        }
        let scale = self.m_up;
        let mut t = x.to_vec();
        let mut p = vec![0.0; x.len()];
        let mut q = vec![0.0; x.len()];
        let mut prev = t.clone();
        for iter in 0..500 {
            let z: Vec<f64> = t.iter().zip(&p).map(|(a, b)| a + b).collect();
            let y1 = project_shifted_l1_cone(&z, self.a_low);
            for (pi, (zi, yi)) in p.iter_mut().zip(z.iter().zip(&y1)) {
                *pi = zi - yi;
            }
            let w: Vec<f64> = y1.iter().zip(&q).map(|(a, b)| a + b).collect();
            let y2 = project_l1_ball(&w, self.m_up);
            for (qi, (wi, yi)) in q.iter_mut().zip(w.iter().zip(&y2)) {
                *qi = wi - yi;
            }
            let moved: f64 = y2.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum();
            prev.clone_from(&y2);
            t = y2;
            if iter > 2 && moved < 1e-15 * scale && self.violation(&t) <= 1e-13 * scale {
                break;
            }
        }
        // Polish: alternate exact projections until feasible.
        for _ in 0..100 {
            if self.violation(&t) <= 1e-13 * scale {
                break;
            }
            t = project_l1_ball(&project_shifted_l1_cone(&t, self.a_low), self.m_up);
        }
        t
    }
}

/// Project onto `{t : t_0 - a >= ||t_rest||_1}` (every member of Theta has
/// t_0 > 0, so the set equals the first Theta constraint).
fn project_shifted_l1_cone(x: &[f64], a: f64) -> Vec<f64> {
    let s = x[0] - a;
    let rest = &x[1..];
    let norm: f64 = rest.iter().map(|v| v.abs()).sum();
    if s >= norm {
        return x.to_vec();
    }
    // Find mu >= 0 with sum_j max(|r_j| - mu, 0) = s + mu.
    let mut mags: Vec<f64> = rest.iter().map(|v| v.abs()).collect();
    mags.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let mut mu = -s; // solution when every coordinate is thresholded away
    let mut running = 0.0;
    for k in 0..mags.len() {
        running += mags[k];
        let candidate = (running - s) / (k as f64 + 2.0);
        let upper = mags[k];
        let lower = if k + 1 < mags.len() { mags[k + 1] } else { 0.0 };
        if candidate <= upper && candidate >= lower {
            mu = candidate;
            break;
        }
    }
    if mu < 0.0 {
        // Inside after all (numerical slack).
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(x.len());
    out.push(a + s + mu);
    for v in rest {
        out.push(v.signum() * (v.abs() - mu).max(0.0));
    }
    out
}

/// Project onto the l1 ball of radius m.
fn project_l1_ball(x: &[f64], m: f64) -> Vec<f64> {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if norm <= m {
        return x.to_vec();
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let mut running = 0.0;
    let mut mu = 0.0;
    for k in 0..mags.len() {
        running += mags[k];
        let candidate = (running - m) / (k as f64 + 1.0);
        let lower = if k + 1 < mags.len() { mags[k + 1] } else { 0.0 };
        if candidate >= lower && candidate <= mags[k] {
            mu = candidate;
            break;
        }
    }
    x.iter()
        .map(|v| v.signum() * (v.abs() - mu).max(0.0))
        .collect()
}

/// Log pseudo-likelihood value; `MinusInfinity` encodes a violated frontier
/// constraint (including `f_t = 0` at a node, even when Y = 0 there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLikelihood {
    Finite(f64),
    MinusInfinity,
}

impl LogLikelihood {
    pub fn is_finite(&self) -> bool {
        matches!(self, LogLikelihood::Finite(_))
    }
}

/// Log of `prod_{i in window} [f_t(X_i)]^{-1} 1{Y_i <= f_t(X_i)}`.
// `!(fi > 0)` instead of `fi <= 0`: NaN must count as infeasible.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn log_pseudo_likelihood(t: &PolyCoeffs, win: &WindowData) -> LogLikelihood {
    let dim = win.idxset.len();
    debug_assert_eq!(t.values.len(), dim);
    let mut sum = 0.0;
    for i in 0..win.len() {
        let fi: f64 = win
            .basis_row(i)
            .iter()
            .zip(&t.values)
            .map(|(k, v)| k * v)
            .sum();
        if !(fi > 0.0) || win.ys[i] > fi {
            return LogLikelihood::MinusInfinity;
        }
        sum -= fi.ln();
    }
    LogLikelihood::Finite(sum)
}

/// Integration backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorMethod {
    /// Grid quadrature up to 3 coefficients, sampling above.
    #[default]
    Auto,
    Grid,
    Sample,
}

/// Posterior integration configuration, exposed on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorCfg {
    pub method: IntegratorMethod,
    pub nodes_per_axis: usize,
    pub proposal_count: usize,
    pub seed: u64,
}

impl Default for IntegratorCfg {
    fn default() -> Self {
        IntegratorCfg {
            method: IntegratorMethod::Auto,
            nodes_per_axis: 64,
            proposal_count: 200_000,
            seed: 0,
        }
    }
}

impl IntegratorCfg {
    fn resolve(&self, dim: usize) -> IntegratorMethod {
        match self.method {
            IntegratorMethod::Auto => {
                if dim <= 3 {
                    IntegratorMethod::Grid
                } else {
                    IntegratorMethod::Sample
                }
            }
            m => m,
        }
    }

    /// Derive a configuration whose sampling stream is salted with `tags`.
    pub fn salted(&self, tags: &[u64]) -> Self {
        IntegratorCfg {
            seed: rng::derive_u64(self.seed, tags),
            ..*self
        }
    }
}

/// What the integrator actually did, attached to every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorReport {
    pub method: String,
    pub points: usize,
    /// Coarsest axis spacing of the final quadrature grid, when gridded.
    pub grid_spacing: Option<f64>,
    /// Effective sample size of the importance weights, when sampled.
    pub effective_sample_size: Option<f64>,
    /// Fraction of final nodes/proposals with positive likelihood.
    pub support_fraction: f64,
}

/// A constrained posterior-median estimate.
#[derive(Debug, Clone)]
pub struct PosteriorEstimate {
    pub theta_hat: PolyCoeffs,
    pub f_hat_y: f64,
    pub integrator_report: IntegratorReport,
}

/// Log-likelihood window kept when bracketing posterior mass: nodes below
/// `max - CUT` carry e^-25 of the peak density and cannot move a median at
/// the resolutions used here.
const TIGHTEN_CUT: f64 = 25.0;

/// Zoom passes used to bracket the posterior before the final scan. The
/// plug-in set can be orders of magnitude wider than the posterior core, so
/// bracketing iterates until the box stops shrinking.
const MAX_TIGHTEN_ROUNDS: usize = 12;

/// A pass that keeps every axis above this width ratio counts as stalled.
/// Grid-pass ratios are quantized to k/m for coarse node counts m <= 16, so
/// the threshold must not be representable that way or exact ties (resolved
/// by float noise) would make the zoom depth input-scale dependent.
const SHRINK_STALL: f64 = 0.71;

const LN_1E300: f64 = 690.7755278982137; // ln(1e300)

/// One coordinate axis of a quadrature grid (cell midpoints).
#[derive(Debug, Clone)]
struct AxisGrid {
    lo: f64,
    step: f64,
    count: usize,
}

impl AxisGrid {
    fn mid(&self, j: usize) -> f64 {
        self.lo + (j as f64 + 0.5) * self.step
    }
}

struct GridScan {
    axes: Vec<AxisGrid>,
    loglik: Vec<f64>,
    max_ll: f64,
    feasible: usize,
}

/// Evaluate the log pseudo-likelihood on a tensor grid of cell midpoints,
/// masking nodes outside Theta. Observations are visited in decreasing-Y
/// order so infeasible nodes exit early.
fn scan_grid(win: &WindowData, set: &ParamSet, bounds: &[(f64, f64)], nodes: usize) -> GridScan {
    let dim = set.idxset.len();
    let axes: Vec<AxisGrid> = bounds
        .iter()
        .map(|&(lo, hi)| AxisGrid {
            lo,
            step: (hi - lo) / nodes as f64,
            count: nodes,
        })
        .collect();
    let total: usize = axes.iter().map(|a| a.count).product();
    let mut scan = GridScan {
        axes,
        loglik: vec![f64::NEG_INFINITY; total],
        max_ll: f64::NEG_INFINITY,
        feasible: 0,
    };
    let n_obs = win.len();
    let mut partial = vec![vec![0.0f64; n_obs]; dim];
    let mut u = vec![0.0f64; dim];
    scan_rec(win, set, &mut partial, &mut u, 0, 0, &mut scan);
    scan
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn scan_rec(
    win: &WindowData,
    set: &ParamSet,
    partial: &mut Vec<Vec<f64>>,
    u: &mut Vec<f64>,
    depth: usize,
    flat_base: usize,
    scan: &mut GridScan,
) {
    let dim = set.idxset.len();
    let axis = scan.axes[depth].clone();
    if depth + 1 == dim {
        let col = &win.scan_cols[depth];
        let ys = &win.scan_ys;
        let src_owned;
        let src: &[f64] = if depth == 0 {
            src_owned = vec![0.0; win.len()];
            &src_owned
        } else {
            &partial[depth - 1]
        };
        for j in 0..axis.count {
            let v = axis.mid(j);
            u[depth] = v;
            if !set.contains(u) {
                continue;
            }
            let mut prod = 1.0f64;
            let mut ex: i32 = 0;
            let mut ok = true;
            for i in 0..win.len() {
                let fi = src[i] + v * col[i];
                if !(fi > 0.0) || ys[i] > fi {
                    ok = false;
                    break;
                }
                prod *= fi;
                if prod > 1e150 {
                    prod *= 1e-300;
                    ex += 1;
                } else if prod < 1e-150 {
                    prod *= 1e300;
                    ex -= 1;
                }
            }
            if ok {
                let ll = -(prod.ln() + ex as f64 * LN_1E300);
                scan.loglik[flat_base + j] = ll;
                scan.feasible += 1;
                if ll > scan.max_ll {
                    scan.max_ll = ll;
                }
            }
        }
    } else {
        let stride: usize = scan.axes[depth + 1..].iter().map(|a| a.count).product();
        for j in 0..axis.count {
            let v = axis.mid(j);
            u[depth] = v;
            {
                let (head, tail) = partial.split_at_mut(depth.max(1));
                let col = &win.scan_cols[depth];
                if depth == 0 {
                    let dst = &mut head[0];
                    for i in 0..win.len() {
                        dst[i] = v * col[i];
                    }
                } else {
                    let src = &head[depth - 1];
                    let dst = &mut tail[0];
                    for i in 0..win.len() {
                        dst[i] = src[i] + v * col[i];
                    }
                }
            }
            scan_rec(win, set, partial, u, depth + 1, flat_base + j * stride, scan);
        }
    }
}

/// A point guaranteed to lie in the set and on the likelihood support when
/// one of this form exists: `(max(A, max Y), 0, ..., 0)`. The zoom passes
/// must never discard its neighborhood, or they can lose the posterior core
/// to coarse sampling.
fn support_anchor(win: &WindowData, set: &ParamSet) -> Option<(Vec<f64>, f64)> {
    let u0 = set.a_low.max(win.max_y());
    if u0 > set.m_up {
        return None;
    }
    let mut u = vec![0.0; set.idxset.len()];
    u[0] = u0;
    let ll = node_loglik(win, &u);
    if ll > f64::NEG_INFINITY {
        Some((u, ll))
    } else {
        None
    }
}

/// Bounding box of the nodes within `TIGHTEN_CUT` of the peak (peak taken
/// over the scan and the anchor), padded by one cell per side, clipped to
/// the scanned box, and widened to keep the anchor inside.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn tightened_bounds(scan: &GridScan, anchor: Option<&(Vec<f64>, f64)>) -> Option<Vec<(f64, f64)>> {
    if scan.feasible == 0 && anchor.is_none() {
        return None;
    }
    let dim = scan.axes.len();
    let peak = anchor
        .map(|a| a.1)
        .unwrap_or(f64::NEG_INFINITY)
        .max(scan.max_ll);
    let threshold = peak - TIGHTEN_CUT;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut strides = vec![1usize; dim];
    for k in (0..dim.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * scan.axes[k + 1].count;
    }
    for (idx, &ll) in scan.loglik.iter().enumerate() {
        if ll < threshold {
            continue;
        }
        let mut rem = idx;
        for k in 0..dim {
            let j = rem / strides[k];
            rem %= strides[k];
            let a = &scan.axes[k];
            lo[k] = lo[k].min(a.lo + j.saturating_sub(1) as f64 * a.step);
            hi[k] = hi[k].max(a.lo + ((j + 2).min(a.count)) as f64 * a.step);
        }
    }
    for k in 0..dim {
        let a = &scan.axes[k];
        if let Some((u, _)) = anchor {
            lo[k] = lo[k].min((u[k] - a.step).max(a.lo));
            hi[k] = hi[k].max((u[k] + a.step).min(a.lo + a.count as f64 * a.step));
        }
        if !(lo[k] < hi[k]) {
            lo[k] = a.lo;
            hi[k] = a.lo + a.count as f64 * a.step;
        }
    }
    Some(lo.into_iter().zip(hi).collect())
}

/// Per-axis marginal masses of a quadrature scan.
struct GridMarginals {
    axes: Vec<AxisGrid>,
    masses: Vec<Vec<f64>>,
    total: f64,
}

fn grid_marginals(scan: &GridScan) -> GridMarginals {
    let dim = scan.axes.len();
    let mut strides = vec![1usize; dim];
    for k in (0..dim.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * scan.axes[k + 1].count;
    }
    let mut masses: Vec<Vec<f64>> = scan.axes.iter().map(|a| vec![0.0; a.count]).collect();
    let mut total = 0.0;
    for (idx, &ll) in scan.loglik.iter().enumerate() {
        if ll == f64::NEG_INFINITY {
            continue;
        }
        let w = (ll - scan.max_ll).exp();
        total += w;
        let mut rem = idx;
        for k in 0..dim {
            let j = rem / strides[k];
            rem %= strides[k];
            masses[k][j] += w;
        }
    }
    GridMarginals {
        axes: scan.axes.clone(),
        masses,
        total,
    }
}

/// Weighted proposals from the sampling backend, sorted per axis.
struct SampleMarginals {
    /// Per axis: values ascending with their weights and weight prefix sums.
    values: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    prefix: Vec<Vec<f64>>,
    total: f64,
}

/// Marginal view of the estimated posterior, enough for medians, CDF
/// evaluations, and mean absolute deviations.
enum Marginals {
    Grid(GridMarginals),
    Sample(SampleMarginals),
}

impl Marginals {
    fn dim(&self) -> usize {
        match self {
            Marginals::Grid(g) => g.axes.len(),
            Marginals::Sample(s) => s.values.len(),
        }
    }

    /// Coordinate-wise posterior median; mass is spread uniformly within a
    /// grid cell, and flat stretches resolve to the lower median.
    fn median(&self, axis: usize) -> f64 {
        match self {
            Marginals::Grid(g) => {
                let a = &g.axes[axis];
                let half = g.total / 2.0;
                let mut cum = 0.0;
                for (j, &m) in g.masses[axis].iter().enumerate() {
                    if m <= 0.0 {
                        continue;
                    }
                    if cum + m >= half {
                        if cum == half {
                            return a.lo + j as f64 * a.step;
                        }
                        let frac = (half - cum) / m;
                        return a.lo + (j as f64 + frac) * a.step;
                    }
                    cum += m;
                }
                a.lo + a.count as f64 * a.step
            }
            Marginals::Sample(s) => {
                let half = s.total / 2.0;
                let pref = &s.prefix[axis];
                match pref.iter().position(|&c| c >= half) {
                    Some(k) => s.values[axis][k],
                    None => *s.values[axis].last().unwrap(),
                }
            }
        }
    }

    /// Subgradient component `P(u < x) - P(u > x)` of the mean absolute
    /// deviation along an axis.
    fn grad(&self, axis: usize, x: f64) -> f64 {
        match self {
            Marginals::Grid(g) => 2.0 * grid_cdf(g, axis, x) - 1.0,
            Marginals::Sample(s) => {
                let vals = &s.values[axis];
                let pref = &s.prefix[axis];
                let below = match vals.partition_point(|&v| v < x) {
                    0 => 0.0,
                    k => pref[k - 1],
                };
                let up_to = match vals.partition_point(|&v| v <= x) {
                    0 => 0.0,
                    k => pref[k - 1],
                };
                (below - (s.total - up_to)) / s.total
            }
        }
    }

    /// Mean absolute deviation `E |x - U_axis|` (normalized).
    fn mad(&self, axis: usize, x: f64) -> f64 {
        match self {
            Marginals::Grid(g) => {
                let a = &g.axes[axis];
                let mut acc = 0.0;
                for (j, &m) in g.masses[axis].iter().enumerate() {
                    if m <= 0.0 {
                        continue;
                    }
                    let lo = a.lo + j as f64 * a.step;
                    let hi = lo + a.step;
                    let part = if x <= lo {
                        (lo + hi) / 2.0 - x
                    } else if x >= hi {
                        x - (lo + hi) / 2.0
                    } else {
                        ((x - lo).powi(2) + (hi - x).powi(2)) / (2.0 * a.step)
                    };
                    acc += m * part;
                }
                acc / g.total
            }
            Marginals::Sample(s) => {
                let vals = &s.values[axis];
                let pref = &s.prefix[axis];
                let wv: f64 = vals
                    .iter()
                    .zip(&s.weights[axis])
                    .map(|(v, w)| v * w)
                    .sum();
                let k = vals.partition_point(|&v| v <= x);
                let w_left = if k == 0 { 0.0 } else { pref[k - 1] };
                let wv_left: f64 = vals[..k]
                    .iter()
                    .zip(&s.weights[axis][..k])
                    .map(|(v, w)| v * w)
                    .sum();
                let left = x * w_left - wv_left;
                let right = (wv - wv_left) - x * (s.total - w_left);
                (left + right) / s.total
            }
        }
    }

    fn objective(&self, t: &[f64]) -> f64 {
        (0..self.dim()).map(|k| self.mad(k, t[k])).sum()
    }

    fn medians(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.median(k)).collect()
    }
}

fn grid_cdf(g: &GridMarginals, axis: usize, x: f64) -> f64 {
    let a = &g.axes[axis];
    if x <= a.lo {
        return 0.0;
    }
    let pos = (x - a.lo) / a.step;
    let cell = (pos.floor() as usize).min(a.count - 1);
    let cum: f64 = g.masses[axis][..cell].iter().sum();
    let frac = (pos - cell as f64).clamp(0.0, 1.0);
    ((cum + g.masses[axis][cell] * frac) / g.total).min(1.0)
}

/// Build the posterior marginals, the report, or nothing when the posterior
/// support is empty at the configured resolution.
fn build_marginals(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
) -> Option<(Marginals, IntegratorReport)> {
    let dim = set.idxset.len();
    match cfg.resolve(dim) {
        IntegratorMethod::Grid => build_grid_marginals(win, set, cfg),
        IntegratorMethod::Sample => build_sample_marginals(win, set, cfg),
        IntegratorMethod::Auto => unreachable!(),
    }
}

fn build_grid_marginals(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
) -> Option<(Marginals, IntegratorReport)> {
    let hull = set.box_hull();
    let coarse = cfg.nodes_per_axis.clamp(4, 16);
    let anchor = support_anchor(win, set);
    let mut bounds = hull.clone();
    for _ in 0..MAX_TIGHTEN_ROUNDS {
        let scan = scan_grid(win, set, &bounds, coarse);
        let nb = match tightened_bounds(&scan, anchor.as_ref()) {
            Some(nb) => nb,
            None => break,
        };
        // Stop once a pass shrinks no axis meaningfully.
        let shrink = nb
            .iter()
            .zip(&bounds)
            .map(|(n, b)| (n.1 - n.0) / (b.1 - b.0))
            .fold(f64::INFINITY, f64::min);
        bounds = nb;
        if shrink > SHRINK_STALL {
            break;
        }
    }
    let mut scan = scan_grid(win, set, &bounds, cfg.nodes_per_axis);
    if scan.feasible == 0 {
        scan = scan_grid(win, set, &hull, cfg.nodes_per_axis);
    }
    if scan.feasible == 0 {
        return None;
    }
    let points = scan.loglik.len();
    let support_fraction = scan.feasible as f64 / points as f64;
    let spacing = scan
        .axes
        .iter()
        .map(|a| a.step)
        .fold(0.0f64, f64::max);
    let marg = grid_marginals(&scan);
    let report = IntegratorReport {
        method: "grid".into(),
        points,
        grid_spacing: Some(spacing),
        effective_sample_size: None,
        support_fraction,
    };
    Some((Marginals::Grid(marg), report))
}

fn build_sample_marginals(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
) -> Option<(Marginals, IntegratorReport)> {
    let dim = set.idxset.len();
    let hull = set.box_hull();
    let mut stream = rng::stream(cfg.seed, &[tag::INTEGRATOR]);
    let stage_count = (cfg.proposal_count / 10).clamp(2_000, 20_000);

    let anchor = support_anchor(win, set);
    let mut bounds = hull.clone();
    for _ in 0..MAX_TIGHTEN_ROUNDS {
        let pass = sample_pass(win, set, &bounds, stage_count, &mut stream);
        if pass.feasible == 0 && anchor.is_none() {
            break;
        }
        let peak = anchor
            .as_ref()
            .map(|a| a.1)
            .unwrap_or(f64::NEG_INFINITY)
            .max(pass.max_ll);
        let threshold = peak - TIGHTEN_CUT;
        let mut nb = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
        for (u, ll) in pass.points.iter().zip(&pass.loglik) {
            if *ll < threshold {
                continue;
            }
            for k in 0..dim {
                nb[k].0 = nb[k].0.min(u[k]);
                nb[k].1 = nb[k].1.max(u[k]);
            }
        }
        let spread = (stage_count as f64).powf(1.0 / dim as f64);
        let mut shrink = f64::INFINITY;
        for k in 0..dim {
            let margin = 2.0 * (bounds[k].1 - bounds[k].0) / spread;
            if let Some((u, _)) = &anchor {
                nb[k].0 = nb[k].0.min(u[k]);
                nb[k].1 = nb[k].1.max(u[k]);
            }
            nb[k].0 = (nb[k].0 - margin).max(bounds[k].0);
            nb[k].1 = (nb[k].1 + margin).min(bounds[k].1);
            if nb[k].1 <= nb[k].0 {
                nb[k] = bounds[k];
            }
            shrink = shrink.min((nb[k].1 - nb[k].0) / (bounds[k].1 - bounds[k].0));
        }
        bounds = nb;
        if shrink > SHRINK_STALL {
            break;
        }
    }

    let mut pass = sample_pass(win, set, &bounds, cfg.proposal_count, &mut stream);
    if pass.feasible == 0 {
        pass = sample_pass(win, set, &hull, cfg.proposal_count, &mut stream);
    }
    if pass.feasible == 0 {
        return None;
    }

    let mut values = vec![Vec::with_capacity(pass.feasible); dim];
    let mut weights = vec![Vec::with_capacity(pass.feasible); dim];
    let mut order: Vec<usize> = Vec::with_capacity(pass.feasible);
    for (i, &ll) in pass.loglik.iter().enumerate() {
        if ll > f64::NEG_INFINITY {
            order.push(i);
        }
    }
    let mut total = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..dim {
        let mut pairs: Vec<(f64, f64)> = order
            .iter()
            .map(|&i| (pass.points[i][k], (pass.loglik[i] - pass.max_ll).exp()))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if k == 0 {
            total = pairs.iter().map(|p| p.1).sum();
            sum_sq = pairs.iter().map(|p| p.1 * p.1).sum();
        }
        values[k] = pairs.iter().map(|p| p.0).collect();
        weights[k] = pairs.iter().map(|p| p.1).collect();
    }
    let prefix: Vec<Vec<f64>> = weights
        .iter()
        .map(|ws| {
            let mut acc = 0.0;
            ws.iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect()
        })
        .collect();
    let ess = if sum_sq > 0.0 { total * total / sum_sq } else { 0.0 };
    let report = IntegratorReport {
        method: "sample".into(),
        points: cfg.proposal_count,
        grid_spacing: None,
        effective_sample_size: Some(ess),
        support_fraction: pass.feasible as f64 / cfg.proposal_count as f64,
    };
    Some((
        Marginals::Sample(SampleMarginals {
            values,
            weights,
            prefix,
            total,
        }),
        report,
    ))
}

struct SamplePass {
    points: Vec<Vec<f64>>,
    loglik: Vec<f64>,
    max_ll: f64,
    feasible: usize,
}

fn sample_pass(
    win: &WindowData,
    set: &ParamSet,
    bounds: &[(f64, f64)],
    count: usize,
    stream: &mut rand_chacha::ChaCha12Rng,
) -> SamplePass {
    let dim = set.idxset.len();
    let mut points = Vec::with_capacity(count);
    let mut loglik = Vec::with_capacity(count);
    let mut max_ll = f64::NEG_INFINITY;
    let mut feasible = 0usize;
    let mut u = vec![0.0; dim];
    for _ in 0..count {
        for k in 0..dim {
            let x: f64 = stream.random();
            u[k] = bounds[k].0 + x * (bounds[k].1 - bounds[k].0);
        }
        let ll = if set.contains(&u) {
            node_loglik(win, &u)
        } else {
            f64::NEG_INFINITY
        };
        if ll > f64::NEG_INFINITY {
            feasible += 1;
            if ll > max_ll {
                max_ll = ll;
            }
        }
        points.push(u.clone());
        loglik.push(ll);
    }
    SamplePass {
        points,
        loglik,
        max_ll,
        feasible,
    }
}

/// Log pseudo-likelihood of an arbitrary coefficient point, in scan order.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn node_loglik(win: &WindowData, u: &[f64]) -> f64 {
    let mut prod = 1.0f64;
    let mut ex: i32 = 0;
    for i in 0..win.len() {
        let mut fi = 0.0;
        for (k, &uk) in u.iter().enumerate() {
            fi += uk * win.scan_cols[k][i];
        }
        if !(fi > 0.0) || win.scan_ys[i] > fi {
            return f64::NEG_INFINITY;
        }
        prod *= fi;
        if prod > 1e150 {
            prod *= 1e-300;
            ex += 1;
        } else if prod < 1e-150 {
            prod *= 1e300;
            ex -= 1;
        }
    }
    -(prod.ln() + ex as f64 * LN_1E300)
}

/// Estimate of the separable L1 criterion `sum_p E |t_p - u_p|` under the
/// normalized posterior on Theta, using the same integration backend as the
/// estimators. This is the objective `bayes_estimate` minimizes; it is
/// convex in t.
pub fn posterior_l1_criterion(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
    t: &[f64],
) -> Result<f64> {
    let (marg, _) = build_marginals(win, set, cfg).ok_or(Error::EmptyPosteriorSupport)?;
    Ok(marg.objective(t))
}

/// Coordinate-wise medians of the posterior on Theta: the unconstrained
/// minimizer of the separable L1 criterion and the starting point of
/// `bayes_estimate`.
pub fn posterior_medians(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
) -> Result<PolyCoeffs> {
    let (marg, _) = build_marginals(win, set, cfg).ok_or(Error::EmptyPosteriorSupport)?;
    Ok(PolyCoeffs::new(set.idxset.clone(), marg.medians()))
}

/// Projected subgradient descent of the separable criterion over Theta,
/// starting from the (projected) coordinate-median vector. Steps use
/// backtracking on the estimated objective; stops when a step moves less
/// than 1e-8 relative to the set scale or after 10^4 iterations.
fn constrained_descent(marg: &Marginals, set: &ParamSet, start: &[f64]) -> Result<Vec<f64>> {
    let scale = set.m_up;
    let stop_tol = 1e-8 * scale;
    let fail_tol = 1e-6 * scale;
    let mut t = set.project(start);
    let mut fval = marg.objective(&t);
    let mut alpha = 0.25 * (set.m_up - set.a_low);
    let mut last_step = 0.0;
    for _iter in 0..10_000 {
        let g: Vec<f64> = (0..marg.dim()).map(|k| marg.grad(k, t[k])).collect();
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = t
                .iter()
                .zip(&g)
                .map(|(ti, gi)| ti - alpha * gi)
                .collect();
            let cand = set.project(&cand);
            let fc = marg.objective(&cand);
            if fc <= fval {
                last_step = cand
                    .iter()
                    .zip(&t)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                t = cand;
                fval = fc;
                alpha = (alpha * 1.5).min(scale);
                accepted = true;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-18 * scale {
                break;
            }
        }
        if !accepted {
            last_step = 0.0;
            break;
        }
        if last_step < stop_tol {
            break;
        }
    }
    if last_step > fail_tol {
        return Err(Error::NonConvergence { last_step });
    }
    Ok(t)
}

/// The locally Bayesian estimate on a window: the minimizer over Theta of
/// the posterior-weighted L1 criterion, returned with its first coefficient
/// as the function estimate at the window center.
pub fn bayes_estimate(
    win: &WindowData,
    set: &ParamSet,
    cfg: &IntegratorCfg,
) -> Result<PosteriorEstimate> {
    debug_assert_eq!(win.idxset.len(), set.idxset.len());
    let (marg, report) = build_marginals(win, set, cfg).ok_or(Error::EmptyPosteriorSupport)?;
    let medians = marg.medians();
    let theta = if set.contains(&medians) {
        medians
    } else {
        constrained_descent(&marg, set, &medians)?
    };
    let f_hat_y = theta[0];
    Ok(PosteriorEstimate {
        theta_hat: PolyCoeffs::new(set.idxset.clone(), theta),
        f_hat_y,
        integrator_report: report,
    })
}

/// Risk-optimal bandwidth for known smoothness beta and Lipschitz constant L:
/// `(L n)^{-1/(beta + d)}`, balancing `L d h^beta` against `1/(n h^d)`.
pub fn minimax_bandwidth(beta: f64, lipschitz: f64, n: usize, d: usize) -> Result<f64> {
    if !(beta > 0.0 && lipschitz > 0.0) {
        return Err(Error::InvalidArgument(
            "minimax bandwidth needs beta > 0 and L > 0".into(),
        ));
    }
    Ok((lipschitz * n as f64).powf(-1.0 / (beta + d as f64)))
}

/// Known-constants estimator: window at the minimax bandwidth, posterior
/// median over the fixed set Theta(A, M).
#[allow(clippy::too_many_arguments)]
pub fn minimax_estimate(
    sample: &Sample,
    y: &[f64],
    beta: f64,
    lipschitz: f64,
    a_low: f64,
    m_up: f64,
    b: usize,
    cfg: &IntegratorCfg,
) -> Result<(PosteriorEstimate, f64)> {
    let d = sample.grid.dimension();
    let h = minimax_bandwidth(beta, lipschitz, sample.len(), d)?;
    let idxset = MultiIndexSet::new(d, b);
    let set = ParamSet::new(a_low, m_up, idxset.clone())?;
    let win = window(sample, y, h, &idxset)?;
    let est = bayes_estimate(&win, &set, cfg)?;
    Ok((est, h))
}
