//! Eigenvalue paths of the sequential sample covariance
//! `S_{n,t} = (1/n) Σ_{i ≤ ⌊nt⌋} x_i x_iᵀ` and exact suprema of centered paths.
//!
//! `S_{n,t}` is a step function of `t` with jumps at multiples of `1/n`, so a path
//! is stored once per jump index `m = ⌊nt⌋`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp;

/// Eigenvalues below this are reported as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Largest dimension handled by a dense eigensolver at every jump under [`Solver::Auto`].
pub const DENSE_MAX_DIM: usize = 64;

/// `n` observations of dimension `d = M + p`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() < 2 || rows.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "data matrix must have n >= 2 and d >= 2 (got {} x {})",
                rows.nrows(),
                rows.ncols()
            )));
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            let (r, c) = (i % rows.nrows(), i / rows.nrows());
            return Err(Error::Domain(format!("non-finite entry at row {}, column {}", r + 1, c + 1)));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Dimension(format!("row {} has {} entries, expected {d}", i + 1, rows[i].len())));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.rows
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }

    /// The data with every entry negated.
    pub fn negated(&self) -> Self {
        Self { rows: -&self.rows }
    }
}

/// First jump index `⌊n·t0⌋` covered by a path on `[t0, 1]`.
pub fn first_jump_index(n: usize, t0: f64) -> usize {
    (n as f64 * t0 + 1e-9).floor() as usize
}

/// Top-`K` eigenvalues of `S_{n,m/n}` for each jump index `m = first..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPath {
    n: usize,
    first: usize,
    k: usize,
    /// Row-major: `values[(m − first)·K + j]`.
    values: Vec<f64>,
}

impl EigenPath {
    /// Builds a path from per-jump value lists, sorting each list in descending order.
    pub fn from_values(n: usize, first: usize, k: usize, per_jump: Vec<Vec<f64>>) -> Result<Self> {
        if k == 0 || first > n || per_jump.len() != n - first + 1 {
            return Err(Error::Dimension(format!(
                "path over jumps {first}..={n} needs {} entries (got {})",
                n.saturating_sub(first) + 1,
                per_jump.len()
            )));
        }
        let mut values = Vec::with_capacity(per_jump.len() * k);
        for mut v in per_jump {
            if v.len() != k {
                return Err(Error::Dimension(format!("each jump needs {k} eigenvalues (got {})", v.len())));
            }
            v.sort_by(|a, b| b.total_cmp(a));
            values.extend(v);
        }
        Ok(Self { n, first, k, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn first_index(&self) -> usize {
        self.first
    }

    pub fn jump_indices(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.n
    }

    /// The `K` values at jump index `m`, largest first.
    pub fn at(&self, m: usize) -> &[f64] {
        assert!(m >= self.first && m <= self.n, "jump index {m} outside {}..={}", self.first, self.n);
        let o = (m - self.first) * self.k;
        &self.values[o..o + self.k]
    }

    /// `λ_{n,j+1,t}` for 0-based `j`, using `m = ⌊nt⌋`.
    pub fn value_at_time(&self, t: f64, j: usize) -> f64 {
        let m = ((self.n as f64 * t + 1e-9).floor() as usize).clamp(self.first, self.n);
        self.at(m)[j]
    }

    /// Restriction to the leading `k` eigenvalues.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k {
            return Err(Error::Dimension(format!("cannot keep {k} of {} tracked eigenvalues", self.k)));
        }
        let values = self.values.chunks(self.k).flat_map(|c| c[..k].iter().copied()).collect();
        Ok(Self { n: self.n, first: self.first, k, values })
    }
}

/// Eigensolver selection for [`eigen_path_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    /// Dense when `d ≤ DENSE_MAX_DIM`, warm-started iterative otherwise.
    Auto,
    Dense,
    Iterative,
}

/// Eigenvalue path on `[t0, 1]` with the default solver.
pub fn eigen_path(data: &DataMatrix, t0: f64, k: usize) -> Result<EigenPath> {
    eigen_path_with(data, t0, k, Solver::Auto)
}

pub fn eigen_path_with(data: &DataMatrix, t0: f64, k: usize, solver: Solver) -> Result<EigenPath> {
    let (n, d) = (data.n(), data.d());
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(Error::Domain(format!("t0 = {t0} must lie in (0, 1]")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Dimension(format!("K = {k} must lie in 1..={}", n.min(d))));
    }
    let first = first_jump_index(n, t0);
    if first < k {
        return Err(Error::Dimension(format!(
            "only {first} observations before t0 = {t0}; at least K = {k} are needed"
        )));
    }
    let dense = match solver {
        Solver::Dense => true,
        Solver::Iterative => false,
        Solver::Auto => d <= DENSE_MAX_DIM,
    };
    let per_jump = if dense {
        dense_path(data, first, k)
    } else {
        TopKTracker::run(data, first, k)
    };
    EigenPath::from_values(n, first, k, per_jump)
}

fn clamp_floor(v: f64) -> f64 {
    if v < EIGEN_FLOOR {
        0.0
    } else {
        v
    }
}

fn top_k_sorted(mut ev: Vec<f64>, k: usize) -> Vec<f64> {
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.resize(k.max(ev.len()), 0.0);
    ev.truncate(k);
    ev.into_iter().map(clamp_floor).collect()
}

/// Top-`k` eigenvalues of `(1/n) Σ_{i<m} x_i x_iᵀ`, via the `m × m` Gram matrix when `m < d`.
fn dense_top_k(x: &DMatrix<f64>, m: usize, k: usize) -> Vec<f64> {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let rows = x.rows(0, m);
    let a = if m < d { &rows * rows.transpose() } else { rows.transpose() * rows } / n;
    top_k_sorted(a.symmetric_eigenvalues().iter().copied().collect(), k)
}

fn dense_path(data: &DataMatrix, first: usize, k: usize) -> Vec<Vec<f64>> {
    let x = data.matrix();
    let (n, d) = (data.n(), data.d());
    let mut s = DMatrix::<f64>::zeros(d, d);
    let mut out = Vec::with_capacity(n - first + 1);
    for m in 1..=n {
        let xi = x.row(m - 1).transpose();
        s.ger(1.0 / n as f64, &xi, &xi, 1.0);
        if m < first {
            continue;
        }
        if m < d {
            out.push(dense_top_k(x, m, k));
        } else {
            out.push(top_k_sorted(s.symmetric_eigenvalues().iter().copied().collect(), k));
        }
    }
    out
}

const GUARD_VECTORS: usize = 2;
const RESIDUAL_FLOOR: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-10;
const MAX_BASIS: usize = 32;
const MAX_ITERATIONS: usize = 60;
const REORTHO_EVERY: usize = 32;

/// Warm-started block Krylov tracking of the leading eigenpairs under rank-one updates.
///
/// Each jump adds `z zᵀ` with `z = x_m/√n`. The previous Ritz vectors together with `z`
/// span a good starting space; residual directions are appended until each tracked Ritz
/// value is within about `EIGEN_TOL · θ₁` of its eigenvalue (`‖r‖²/gap`). A jump that fails to converge, or whose
/// Ritz values violate Cauchy interlacing with the previous jump, is redone densely.
struct TopKTracker<'a> {
    x: &'a DMatrix<f64>,
    s: DMatrix<f64>,
    k: usize,
    r: usize,
    v: DMatrix<f64>,
    sv: DMatrix<f64>,
    theta: Vec<f64>,
}

impl<'a> TopKTracker<'a> {
    fn run(data: &'a DataMatrix, first: usize, k: usize) -> Vec<Vec<f64>> {
        let x = data.matrix();
        let (n, d) = (data.n(), data.d());
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let mut tr = TopKTracker {
            x,
            s: DMatrix::zeros(d, d),
            k,
            r: (k + GUARD_VECTORS).min(d),
            v: DMatrix::zeros(d, 0),
            sv: DMatrix::zeros(d, 0),
            theta: Vec::new(),
        };
        let mut out = Vec::with_capacity(n - first + 1);
        for m in 1..=n {
            let z = x.row(m - 1).transpose() * inv_sqrt_n;
            tr.s.ger(1.0, &z, &z, 1.0);
            if m < first {
                continue;
            }
            if tr.v.ncols() < tr.r {
                tr.restart_dense(m);
            } else {
                let prev: Vec<f64> = tr.theta[..k].to_vec();
                let ok = tr.update(&z) && tr.interlaces(&prev);
                if !ok {
                    tr.restart_dense(m);
                } else if (m - first) % REORTHO_EVERY == 0 {
                    tr.reorthonormalize();
                }
            }
            out.push(tr.theta[..k].iter().map(|&v| clamp_floor(v)).collect());
        }
        out
    }

    /// Full eigendecomposition of the current matrix; reseeds the Ritz vectors.
    fn restart_dense(&mut self, m: usize) {
        let d = self.s.nrows();
        let (vals, vecs) = if m < d {
            let n = self.x.nrows() as f64;
            let rows = self.x.rows(0, m);
            let g = (&rows * rows.transpose()) / n;
            let eig = SymmetricEigen::new(g);
            let order = descending(eig.eigenvalues.as_slice());
            let mut vals = Vec::new();
            let mut cols = Vec::new();
            for &i in &order {
                let mu = eig.eigenvalues[i];
                if mu <= EIGEN_FLOOR || cols.len() == self.r {
                    break;
                }
                let u = eig.eigenvectors.column(i);
                let w = rows.transpose() * u / (n * mu).sqrt();
                vals.push(mu);
                cols.push(w);
            }
            (vals, cols)
        } else {
            let eig = SymmetricEigen::new(self.s.clone());
            let order = descending(eig.eigenvalues.as_slice());
            let take = order.iter().take(self.r);
            let vals = take.clone().map(|&i| eig.eigenvalues[i]).collect();
            let cols = take.map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
            (vals, cols)
        };
        self.theta = vals;
        self.theta.resize(self.k.max(self.theta.len()), 0.0);
        if vecs.is_empty() {
            self.v = DMatrix::zeros(d, 0);
        } else {
            self.v = DMatrix::from_columns(&vecs);
        }
        self.sv = &self.s * &self.v;
    }

    fn reorthonormalize(&mut self) {
        let q = orthonormal_extension(&DMatrix::zeros(self.s.nrows(), 0), &self.v);
        if q.ncols() == self.v.ncols() {
            self.v = q;
            self.sv = &self.s * &self.v;
        }
    }

    fn interlaces(&self, prev: &[f64]) -> bool {
        let tol = 1e-9 * self.theta[0].abs().max(1.0);
        self.theta.iter().zip(prev).all(|(new, old)| *new >= old - tol)
    }

    /// Rayleigh–Ritz on a space seeded by the previous Ritz vectors and `z`, grown one
    /// residual direction at a time.
    fn update(&mut self, z: &DVector<f64>) -> bool {
        // S' V = S V + z (zᵀ V)
        let ztv = z.transpose() * &self.v;
        self.sv += z * ztv;
        let mut q = self.v.clone();
        let mut sq = self.sv.clone();
        let mut h = q.transpose() * &sq;
        if let Some(w) = orthonormal_direction(&q, z.clone()) {
            let sw = &self.s * &w;
            append(&mut q, &mut sq, &mut h, w, sw);
        }
        for _ in 0..MAX_ITERATIONS {
            let hs = (&h + h.transpose()) * 0.5;
            let eig = SymmetricEigen::new(hs);
            let order = descending(eig.eigenvalues.as_slice());
            let keep = self.r.min(order.len());
            if keep < self.k {
                return false;
            }
            let y = DMatrix::from_columns(&order[..keep].iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
            let theta: Vec<f64> = order[..keep].iter().map(|&i| eig.eigenvalues[i]).collect();
            let scale = theta[0].abs().max(EIGEN_FLOOR);
            let mut worst = (0.0, None);
            for j in 0..self.k {
                let yj = y.column(j);
                let mut rj = &sq * yj;
                rj.gemv(-theta[j], &q, &yj, 1.0);
                let nr = rj.norm();
                // |θ − λ| ≲ ‖r‖²/gap
                let gap = [j.checked_sub(1).map(|i| theta[i] - theta[j]), theta.get(j + 1).map(|t| theta[j] - t)]
                    .into_iter()
                    .flatten()
                    .fold(f64::INFINITY, f64::min)
                    .min(scale);
                let done = nr <= RESIDUAL_FLOOR * scale || nr * nr <= EIGEN_TOL * scale * gap;
                if !done && nr > worst.0 {
                    worst = (nr, Some(rj));
                }
            }
            let Some(resid) = worst.1 else {
                self.v = &q * &y;
                self.sv = &sq * &y;
                self.theta = theta;
                return true;
            };
            if q.ncols() >= MAX_BASIS {
                q = &q * &y;
                sq = &sq * &y;
                h = q.transpose() * &sq;
            }
            let Some(w) = orthonormal_direction(&q, resid) else {
                return false;
            };
            let sw = &self.s * &w;
            append(&mut q, &mut sq, &mut h, w, sw);
        }
        false
    }
}

/// Appends column `w` (with `S w`) to the basis and borders the projected matrix.
fn append(q: &mut DMatrix<f64>, sq: &mut DMatrix<f64>, h: &mut DMatrix<f64>, w: DVector<f64>, sw: DVector<f64>) {
    let b = q.ncols();
    let col = q.transpose() * &sw;
    let row = sq.transpose() * &w;
    let corner = w.dot(&sw);
    let mut nh = DMatrix::zeros(b + 1, b + 1);
    nh.view_mut((0, 0), (b, b)).copy_from(h);
    nh.view_mut((0, b), (b, 1)).copy_from(&col);
    nh.view_mut((b, 0), (1, b)).copy_from(&row.transpose());
    nh[(b, b)] = corner;
    *h = nh;
    *q = q.clone().insert_column(b, 0.0);
    q.set_column(b, &w);
    *sq = sq.clone().insert_column(b, 0.0);
    sq.set_column(b, &sw);
}

/// `w` with the span of the orthonormal columns of `q` removed, normalized; `None` when
/// nothing meaningful is left.
fn orthonormal_direction(q: &DMatrix<f64>, mut w: DVector<f64>) -> Option<DVector<f64>> {
    let orig = w.norm();
    if orig == 0.0 {
        return None;
    }
    for _ in 0..2 {
        if q.ncols() > 0 {
            let coef = q.transpose() * &w;
            w.gemv(-1.0, q, &coef, 1.0);
        }
    }
    let nrm = w.norm();
    (nrm > 1e-10 * orig).then(|| w / nrm)
}

fn descending(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    idx
}

/// Orthonormal basis for the part of `span(c)` orthogonal to the orthonormal columns of `q`.
/// Two Gram–Schmidt passes; directions that nearly vanish are dropped.
fn orthonormal_extension(q: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(c.ncols());
    for j in 0..c.ncols() {
        let mut w = c.column(j).into_owned();
        let orig = w.norm();
        if orig == 0.0 {
            continue;
        }
        for _ in 0..2 {
            if q.ncols() > 0 {
                let coef = q.transpose() * &w;
                w -= q * coef;
            }
            for u in &cols {
                let a = u.dot(&w);
                w.axpy(-a, u, 1.0);
            }
        }
        let nrm = w.norm();
        if nrm > 1e-10 * orig {
            cols.push(w / nrm);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(q.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Supremum of one centered path together with its smallest maximizing time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupPoint {
    pub value: f64,
    pub t: f64,
}

impl SupPoint {
    fn offer(&mut self, value: f64, t: f64) {
        if value > self.value || (value == self.value && t < self.t) {
            self.value = value;
            self.t = t;
        }
    }
}

/// Suprema of squared centered eigenvalue paths over `[t0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupSummary {
    /// `sup_t n(λ_{n,k,t} − c_{k,t})²` for each tracked spike.
    pub per_spike: Vec<SupPoint>,
    /// Maximum over spikes of `per_spike`; the max-type statistic.
    pub max: SupPoint,
    /// 0-based spike attaining `max`.
    pub argmax_spike: usize,
    /// `sup_t Σ_k n(λ_{n,k,t} − c_{k,t})²`; the sum-type statistic.
    pub sum: SupPoint,
}

fn summarize(per_spike: Vec<SupPoint>, sum: SupPoint) -> SupSummary {
    let mut argmax_spike = 0;
    for (j, p) in per_spike.iter().enumerate() {
        let best = &per_spike[argmax_spike];
        if p.value > best.value || (p.value == best.value && p.t < best.t) {
            argmax_spike = j;
        }
    }
    SupSummary { max: per_spike[argmax_spike], per_spike, argmax_spike, sum }
}

/// Exact suprema of `n(λ_{n,k,t} − φ_{n,t}(α_k))²` over `t ∈ [t0, 1]`.
///
/// On each `[m/n, (m+1)/n)` the path is constant while `φ_{n,t}` is affine in `t`,
/// so the convex square (and the per-`t` sum of such squares) peaks at an end of the
/// interval. The right end enters as a left limit, so the result is a supremum.
pub fn centered_sup(path: &EigenPath, alphas: &[f64], y_n: f64, t0: f64) -> Result<SupSummary> {
    if alphas.is_empty() || alphas.len() != path.k() {
        return Err(Error::Dimension(format!(
            "{} spikes given for a path tracking {} eigenvalues",
            alphas.len(),
            path.k()
        )));
    }
    if first_jump_index(path.n(), t0) != path.first_index() {
        return Err(Error::Dimension(format!("path does not start at t0 = {t0}")));
    }
    let n = path.n() as f64;
    let mut per = vec![SupPoint { value: f64::NEG_INFINITY, t: f64::INFINITY }; alphas.len()];
    let mut sum = SupPoint { value: f64::NEG_INFINITY, t: f64::INFINITY };
    let eval = |m: usize, t: f64, per: &mut [SupPoint], sum: &mut SupPoint| -> Result<()> {
        let lam = path.at(m);
        let mut total = 0.0;
        for (j, &a) in alphas.iter().enumerate() {
            let dev = lam[j] - mp::phi_n(a, y_n, t)?;
            let v = n * dev * dev;
            per[j].offer(v, t);
            total += v;
        }
        sum.offer(total, t);
        Ok(())
    };
    for m in path.jump_indices() {
        let left = (m as f64 / n).max(t0);
        eval(m, left, &mut per, &mut sum)?;
        if m < path.n() {
            let right = (m + 1) as f64 / n;
            eval(m, right, &mut per, &mut sum)?;
        }
    }
    Ok(summarize(per, sum))
}

/// Suprema of `n(λ_{n,k,t} − λ⁰_{k,t})²` between two eigenvalue paths over `[t0, 1]`.
///
/// Both paths are step functions; the supremum is taken over every piece of their
/// common refinement, which is exact for any pair of sample sizes.
pub fn path_difference_sup(path: &EigenPath, reference: &EigenPath, t0: f64) -> Result<SupSummary> {
    if path.k() != reference.k() {
        return Err(Error::Dimension(format!(
            "paths track {} and {} eigenvalues",
            path.k(),
            reference.k()
        )));
    }
    let (n, n0) = (path.n(), reference.n());
    if first_jump_index(n, t0) != path.first_index() || first_jump_index(n0, t0) != reference.first_index() {
        return Err(Error::Dimension(format!("paths do not start at t0 = {t0}")));
    }
    let scale = n as f64;
    let mut per = vec![SupPoint { value: f64::NEG_INFINITY, t: f64::INFINITY }; path.k()];
    let mut sum = SupPoint { value: f64::NEG_INFINITY, t: f64::INFINITY };
    let (mut i, mut j) = (path.first_index(), reference.first_index());
    let mut t = t0;
    loop {
        let (a, b) = (path.at(i), reference.at(j));
        let mut total = 0.0;
        for q in 0..path.k() {
            let v = scale * (a[q] - b[q]).powi(2);
            per[q].offer(v, t);
            total += v;
        }
        sum.offer(total, t);
        if i == n && j == n0 {
            break;
        }
        // next breakpoint of either path, compared exactly as (i+1)/n vs (j+1)/n0
        let next_i = if i < n { Some((i + 1) * n0) } else { None };
        let next_j = if j < n0 { Some((j + 1) * n) } else { None };
        let step = match (next_i, next_j) {
            (Some(x), Some(y)) => x.min(y),
            (Some(x), None) => x,
            (None, Some(y)) => y,
            (None, None) => unreachable!(),
        };
        if next_i == Some(step) {
            i += 1;
        }
        if next_j == Some(step) {
            j += 1;
        }
        t = step as f64 / (n * n0) as f64;
    }
    Ok(summarize(per, sum))
}
