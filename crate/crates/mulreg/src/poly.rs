//! Local polynomial machinery: multi-index bookkeeping, window extraction
//! with cached basis rows, the normalized moment matrix with its smallest
//! eigenvalue, and the local least-squares preliminary fit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Sample;

/// All multi-indices p = (p_1, ..., p_d) with |p| <= b, in graded
/// lexicographic order. The cardinality is
/// `D_b = sum_{m=0}^{b} C(m+d-1, d-1)` and the first index is (0, ..., 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    d: usize,
    b: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn new(d: usize, b: usize) -> Arc<Self> {
        assert!(d >= 1, "dimension must be >= 1");
        let mut indices = Vec::new();
        for degree in 0..=b {
            let mut buf = vec![0usize; d];
            push_compositions(degree, 0, &mut buf, &mut indices);
        }
        Arc::new(MultiIndexSet { d, b, indices })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn degree_bound(&self) -> usize {
        self.b
    }

    /// Number of coefficients D_b.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn multi_index(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.indices.iter()
    }

    /// Monomial vector K(z) = (z^p : p), written into `out`.
    pub fn basis_row(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.d);
        debug_assert_eq!(out.len(), self.len());
        for (slot, p) in out.iter_mut().zip(&self.indices) {
            let mut v = 1.0;
            for (zi, &pi) in z.iter().zip(p) {
                v *= zi.powi(pi as i32);
            }
            *slot = v;
        }
    }

    /// p_1! * ... * p_d! for the k-th index.
    pub fn factorial(&self, k: usize) -> f64 {
        self.indices[k]
            .iter()
            .map(|&p| (1..=p).map(|v| v as f64).product::<f64>())
            .product()
    }

    /// Total degree |p| of the k-th index.
    pub fn total_degree(&self, k: usize) -> usize {
        self.indices[k].iter().sum()
    }
}

/// Enumerate compositions of `remaining` over axes `axis..d` in
/// lexicographic order (first axis largest first).
fn push_compositions(
    remaining: usize,
    axis: usize,
    buf: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    let d = buf.len();
    if axis == d - 1 {
        buf[axis] = remaining;
        out.push(buf.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        buf[axis] = v;
        push_compositions(remaining - v, axis + 1, buf, out);
    }
}

/// Coefficient vector over a multi-index set; evaluates the local polynomial
/// f_t(x) = sum_p t_p ((x-y)/h)^p on the window cube.
#[derive(Debug, Clone)]
pub struct PolyCoeffs {
    pub idxset: Arc<MultiIndexSet>,
    pub values: Vec<f64>,
}

impl PolyCoeffs {
    pub fn new(idxset: Arc<MultiIndexSet>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), idxset.len(), "coefficient length mismatch");
        PolyCoeffs { idxset, values }
    }

    /// Evaluate at the normalized coordinate z = (x - y)/h.
    pub fn eval_scaled(&self, z: &[f64]) -> f64 {
        let mut row = vec![0.0; self.idxset.len()];
        self.idxset.basis_row(z, &mut row);
        row.iter().zip(&self.values).map(|(k, t)| k * t).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

/// Observations restricted to the cube V_h(y), with cached monomial rows
/// K((X_i - y)/h) and the bookkeeping the estimators need.
#[derive(Debug, Clone)]
pub struct WindowData {
    pub center: Vec<f64>,
    pub h: f64,
    pub idxset: Arc<MultiIndexSet>,
    /// Total sample size n (not the window count).
    pub n_total: usize,
    /// Window design points, flattened row-major.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Cached basis rows, N x D_b row-major.
    pub basis: Vec<f64>,
    /// Basis values transposed (per-coefficient columns) in an order sorted
    /// by decreasing Y, which lets likelihood scans reject nodes early.
    pub scan_cols: Vec<Vec<f64>>,
    pub scan_ys: Vec<f64>,
}

impl WindowData {
    /// Window count N.
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let w = self.idxset.len();
        &self.basis[i * w..(i + 1) * w]
    }

    /// Largest observation in the window (0 when the window is empty).
    pub fn max_y(&self) -> f64 {
        self.ys.iter().cloned().fold(0.0, f64::max)
    }

    /// Construct directly from window contents. Used by tests and by callers
    /// that assemble synthetic windows; `window()` is the checked entry point.
    pub fn from_parts(
        center: Vec<f64>,
        h: f64,
        idxset: Arc<MultiIndexSet>,
        n_total: usize,
        xs: Vec<f64>,
        ys: Vec<f64>,
    ) -> Self {
        let d = idxset.dimension();
        let width = idxset.len();
        let count = ys.len();
        debug_assert_eq!(xs.len(), count * d);
        let mut basis = vec![0.0; count * width];
        let mut z = vec![0.0; d];
        for i in 0..count {
            for j in 0..d {
                z[j] = (xs[i * d + j] - center[j]) / h;
            }
            idxset.basis_row(&z, &mut basis[i * width..(i + 1) * width]);
        }
        let mut order: Vec<usize> = (0..count).collect();
        order.sort_by(|&a, &b| ys[b].partial_cmp(&ys[a]).unwrap());
        let scan_ys: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
        let scan_cols: Vec<Vec<f64>> = (0..width)
            .map(|p| order.iter().map(|&i| basis[i * width + p]).collect())
            .collect();
        WindowData {
            center,
            h,
            idxset,
            n_total,
            xs,
            ys,
            basis,
            scan_cols,
            scan_ys,
        }
    }
}

/// Extract the observations with X_i in the closed cube
/// V_h(y) = prod_j [y_j - h/2, y_j + h/2].
pub fn window(
    sample: &Sample,
    y: &[f64],
    h: f64,
    idxset: &Arc<MultiIndexSet>,
) -> Result<WindowData> {
    let d = sample.grid.dimension();
    if y.len() != d || idxset.dimension() != d {
        return Err(Error::InvalidArgument(
            "window center dimension mismatch".into(),
        ));
    }
    if !(h > 0.0 && h < 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {h} outside (0, 1]"
        )));
    }
    let half = h / 2.0;
    for &yj in y {
        if yj - half < -1e-12 || yj + half > 1.0 + 1e-12 {
            return Err(Error::WindowOutOfDomain {
                y: y.to_vec(),
                h,
            });
        }
    }
    // Closed cube boundaries; the h-relative slack keeps points that sit
    // exactly on the edge from dropping out to float rounding.
    let reach = half * (1.0 + 1e-9);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, &yv) in sample.grid.iter_points().zip(&sample.y_values) {
        if x.iter().zip(y).all(|(&xi, &yi)| (xi - yi).abs() <= reach) {
            xs.extend_from_slice(x);
            ys.push(yv);
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyWindow {
            y: y.to_vec(),
            h,
        });
    }
    Ok(WindowData::from_parts(
        y.to_vec(),
        h,
        idxset.clone(),
        sample.len(),
        xs,
        ys,
    ))
}

/// Normalized moment matrix of the window design,
/// `(1/(n h^d)) sum_i K_i^T K_i`, with its smallest eigenvalue.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentMatrix {
    pub dim: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    pub lambda_min: f64,
}

impl MomentMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }
}

/// Build the moment matrix for a window within a sample of total size n.
pub fn design_matrix(win: &WindowData) -> MomentMatrix {
    let dim = win.idxset.len();
    let scale = 1.0 / (win.n_total as f64 * win.h.powi(win.idxset.dimension() as i32));
    let mut entries = vec![0.0; dim * dim];
    for i in 0..win.len() {
        let row = win.basis_row(i);
        for r in 0..dim {
            for c in r..dim {
                entries[r * dim + c] += row[r] * row[c];
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            entries[r * dim + c] = entries[c * dim + r];
        }
    }
    for e in entries.iter_mut() {
        *e *= scale;
    }
    let lambda_min = linalg::smallest_eigenvalue(&entries, dim).max(0.0);
    MomentMatrix {
        dim,
        entries,
        lambda_min,
    }
}

/// Analytic limit of the moment matrix: entries
/// `prod_j int_{-1/2}^{1/2} z_j^{p_j + q_j} dz_j`.
pub fn limit_moment_matrix(idxset: &MultiIndexSet) -> MomentMatrix {
    let dim = idxset.len();
    let mut entries = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            let mut v = 1.0;
            for j in 0..idxset.dimension() {
                let k = idxset.multi_index(r)[j] + idxset.multi_index(c)[j];
                // int_{-1/2}^{1/2} z^k dz
                v *= if k % 2 == 1 {
                    0.0
                } else {
                    1.0 / ((k + 1) as f64 * 2f64.powi(k as i32))
                };
            }
            entries[r * dim + c] = v;
        }
    }
    let lambda_min = linalg::smallest_eigenvalue(&entries, dim).max(0.0);
    MomentMatrix {
        dim,
        entries,
        lambda_min,
    }
}

/// Tolerance below which the moment matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Local least squares of the doubled observations 2Y_i on the monomial
/// basis. Returns the raw coefficients and their factorial/bandwidth rescale
/// `delta_p = p_1! ... p_d! h^{-|p|} theta_p`, which estimates the partial
/// derivatives of f at the window center.
pub fn local_lse(win: &WindowData) -> Result<(PolyCoeffs, PolyCoeffs)> {
    let dim = win.idxset.len();
    let mm = design_matrix(win);
    if mm.lambda_min <= SINGULAR_TOL {
        return Err(Error::SingularDesign {
            lambda_min: mm.lambda_min,
        });
    }
    let scale = 1.0 / (win.n_total as f64 * win.h.powi(win.idxset.dimension() as i32));
    let mut rhs = vec![0.0; dim];
    for i in 0..win.len() {
        let row = win.basis_row(i);
        let target = 2.0 * win.ys[i];
        for (slot, k) in rhs.iter_mut().zip(row) {
            *slot += k * target;
        }
    }
    for v in rhs.iter_mut() {
        *v *= scale;
    }
    let theta = linalg::cholesky_solve(&mm.entries, &rhs, dim).ok_or(Error::SingularDesign {
        lambda_min: mm.lambda_min,
    })?;
    let delta: Vec<f64> = theta
        .iter()
        .enumerate()
        .map(|(k, &t)| win.idxset.factorial(k) * win.h.powi(-(win.idxset.total_degree(k) as i32)) * t)
        .collect();
    Ok((
        PolyCoeffs::new(win.idxset.clone(), theta),
        PolyCoeffs::new(win.idxset.clone(), delta),
    ))
}

/// Plug-in level and derivative-sum estimates from the rescaled fit:
/// A = delta_{0...0}, M = ||delta||_1. Fails when A <= 0, which would make
/// the downstream random coefficient set empty.
pub fn plug_in_bounds(delta: &PolyCoeffs) -> Result<(f64, f64)> {
    let a_hat = delta.values[0];
    if a_hat <= 0.0 {
        return Err(Error::NonPositiveAhat(a_hat));
    }
    Ok((a_hat, delta.l1_norm()))
}

/// Bandwidth interval on which the moment matrix is provably well
/// conditioned:
/// `[ max(b+1, (ln n)^{1/(d+d^2)}) / n^{1/d}, (1/ln n)^{1/(b+d)} ]`.
/// Values outside only warrant a warning, not an error.
pub fn bandwidth_validity_range(n: usize, b: usize, d: usize) -> (f64, f64) {
    let nf = n as f64;
    let ln_n = nf.ln();
    let lo = ((b as f64 + 1.0).max(ln_n.powf(1.0 / (d as f64 + (d * d) as f64))))
        / nf.powf(1.0 / d as f64);
    let hi = (1.0 / ln_n).powf(1.0 / (b + d) as f64);
    (lo, hi)
}
