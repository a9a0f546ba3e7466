//! Sparse spatial weight matrices: construction (random k-nearest,
//! lattice contiguity, adjacency scaled by population), row normalization,
//! admissible parameter intervals, and the sparse/dense products the moment
//! machinery consumes.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Compressed sparse row matrix over f64. Column indices are sorted within
/// each row and duplicate positions are rejected at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite weight at ({r}, {c})"
                )));
            }
            entries.push((r, c, v));
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::InvalidArgument(format!(
                    "duplicate entry at ({}, {})",
                    pair[0].0, pair[0].1
                )));
            }
        }
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (_, c, v) in self.entries() {
            out[c] += v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut row_ptr = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            row_ptr[c + 1] += 1;
        }
        for i in 0..self.cols {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut cursor = row_ptr.clone();
        for (r, c, v) in self.entries() {
            let pos = cursor[c];
            col_idx[pos] = r;
            values[pos] = v;
            cursor[c] += 1;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-sparse product via a dense accumulator row.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut workspace = vec![0.0f64; other.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&mid, &v) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(mid);
                for (&c, &ov) in ocols.iter().zip(ovals) {
                    if workspace[c] == 0.0 && !touched.contains(&c) {
                        touched.push(c);
                    }
                    workspace[c] += v * ov;
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                triplets.push((r, c, workspace[c]));
                workspace[c] = 0.0;
            }
            touched.clear();
        }
        Self::from_triplets(self.rows, other.cols, &triplets)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        let mut out = DVector::zeros(self.rows);
        for (r, c, w) in self.entries() {
            out[r] += w * v[c];
        }
        Ok(out)
    }

    /// Dense product `A * G`.
    pub fn mul_dense(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: g.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.rows, g.ncols());
        for (r, c, v) in self.entries() {
            for j in 0..g.ncols() {
                out[(r, j)] += v * g[(c, j)];
            }
        }
        Ok(out)
    }

    /// `tr(A G)` for dense `G`.
    pub fn trace_product(&self, g: &DMatrix<f64>) -> Result<f64> {
        if g.nrows() != self.cols || g.ncols() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: g.nrows(),
            });
        }
        let mut acc = 0.0;
        for (r, c, v) in self.entries() {
            acc += v * g[(c, r)];
        }
        Ok(acc)
    }

    /// `tr(A B)` for sparse `B`.
    pub fn trace_product_sparse(&self, b: &Self) -> Result<f64> {
        if b.rows != self.cols || b.cols != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: b.rows,
            });
        }
        let mut acc = 0.0;
        for (r, c, v) in self.entries() {
            acc += v * b.get(c, r);
        }
        Ok(acc)
    }

    /// Entrywise sum, merging coincident positions.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        let mut triplets: Vec<(usize, usize, f64)> =
            Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            let (ac, av) = self.row(r);
            let (bc, bv) = other.row(r);
            let (mut i, mut j) = (0usize, 0usize);
            while i < ac.len() || j < bc.len() {
                if j == bc.len() || (i < ac.len() && ac[i] < bc[j]) {
                    triplets.push((r, ac[i], av[i]));
                    i += 1;
                } else if i == ac.len() || bc[j] < ac[i] {
                    triplets.push((r, bc[j], bv[j]));
                    j += 1;
                } else {
                    triplets.push((r, ac[i], av[i] + bv[j]));
                    i += 1;
                    j += 1;
                }
            }
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn diag_sum_of_squares(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| {
                let d = self.get(i, i);
                d * d
            })
            .sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.entries() {
            out[(r, c)] = v;
        }
        out
    }
}

/// Whether a row carries normalized weights or is an island (no neighbours).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Normalized,
    Empty,
}

/// A row-normalized spatial weight matrix: square, zero diagonal, nonnegative
/// entries, every row sum exactly 1 (up to 1e-9) or exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    mat: SparseMatrix,
    row_kind: Vec<RowKind>,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl SpatialWeights {
    /// Validates an already-normalized matrix.
    pub fn new(mat: SparseMatrix) -> Result<Self> {
        Self::build(mat, false)
    }

    /// Divides every nonempty row by its sum.
    pub fn new_normalized(mat: SparseMatrix) -> Result<Self> {
        Self::build(mat, true)
    }

    fn build(mat: SparseMatrix, normalize: bool) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::InvalidArgument(format!(
                "weight matrix must be square, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let n = mat.rows();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mat.nnz());
        let mut row_kind = vec![RowKind::Empty; n];
        for r in 0..n {
            let (cols, vals) = mat.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if c == r && v != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "nonzero diagonal weight at site {r}"
                    )));
                }
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative weight at ({r}, {c})"
                    )));
                }
            }
            let sum: f64 = vals.iter().sum();
            if sum <= 0.0 {
                continue; // island row
            }
            if normalize {
                for (&c, &v) in cols.iter().zip(vals) {
                    if v > 0.0 && c != r {
                        triplets.push((r, c, v / sum));
                    }
                }
            } else {
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "row {r} sums to {sum}, expected 1 or 0 (pass through normalization instead)"
                    )));
                }
                for (&c, &v) in cols.iter().zip(vals) {
                    if v > 0.0 && c != r {
                        triplets.push((r, c, v));
                    }
                }
            }
            row_kind[r] = RowKind::Normalized;
        }
        let mat = SparseMatrix::from_triplets(n, n, &triplets)?;
        Ok(Self { mat, row_kind })
    }

    pub fn n(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.mat
    }

    pub fn row_kind(&self, i: usize) -> RowKind {
        self.row_kind[i]
    }

    pub fn island_count(&self) -> usize {
        self.row_kind
            .iter()
            .filter(|k| **k == RowKind::Empty)
            .count()
    }

    /// Row sum, which is 1 for normalized rows and 0 for islands.
    pub fn row_sum(&self, i: usize) -> f64 {
        match self.row_kind[i] {
            RowKind::Normalized => 1.0,
            RowKind::Empty => 0.0,
        }
    }

    /// `X - rho * W X` for a dense matrix of stacked columns.
    pub fn s_action(&self, rho: f64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let wx = self.mat.mul_dense(x)?;
        Ok(x - wx * rho)
    }

    /// Solves `(I - rho W) X = B` by dense LU.
    pub fn solve_s(&self, rho: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.n();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.nrows(),
            });
        }
        let mut s = DMatrix::identity(n, n);
        for (r, c, v) in self.mat.entries() {
            s[(r, c)] -= rho * v;
        }
        s.lu()
            .solve(b)
            .ok_or_else(|| Error::Singular(format!("I - {rho} W is singular")))
    }

    /// Dense inverse of `I - rho W`.
    pub fn s_inverse(&self, rho: f64) -> Result<DMatrix<f64>> {
        let n = self.n();
        self.solve_s(rho, &DMatrix::identity(n, n))
    }

    /// Keeps the listed sites (re-indexed in order) and re-normalizes the
    /// surviving rows. Rows that lose all their neighbours become islands.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let n = self.n();
        let mut position = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            if old >= n {
                return Err(Error::InvalidArgument(format!(
                    "site index {old} out of range"
                )));
            }
            if position[old] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "site index {old} listed twice"
                )));
            }
            position[old] = new;
        }
        let mut triplets = Vec::new();
        for (new_r, &old_r) in keep.iter().enumerate() {
            let (cols, vals) = self.mat.row(old_r);
            for (&c, &v) in cols.iter().zip(vals) {
                if position[c] != usize::MAX {
                    triplets.push((new_r, position[c], v));
                }
            }
        }
        let mat = SparseMatrix::from_triplets(keep.len(), keep.len(), &triplets)?;
        Self::new_normalized(mat)
    }
}

/// The open-by-margin interval of spatial parameters for which `I - rho W`
/// stays invertible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoInterval {
    pub lo: f64,
    pub hi: f64,
}

impl RhoInterval {
    pub fn contains(&self, rho: f64) -> bool {
        self.lo <= rho && rho <= self.hi
    }

    pub fn clamp(&self, rho: f64) -> f64 {
        rho.clamp(self.lo, self.hi)
    }
}

pub const DEFAULT_RHO_MARGIN: f64 = 0.005;

/// Default admissible interval `(-1 + margin, 1 - margin)`. Row sums bounded
/// by 1 keep every eigenvalue of `W` inside the unit disc, so the interval is
/// always safe; [`tightened_rho_interval`] can widen it when the spectral
/// radius is genuinely smaller.
pub fn admissible_rho_interval(_w: &SpatialWeights, margin: f64) -> RhoInterval {
    RhoInterval {
        lo: -1.0 + margin,
        hi: 1.0 - margin,
    }
}

/// Power-iteration estimate of the spectral radius, used to widen the
/// interval for matrices with many islands (radius below 1). Heuristic: the
/// iteration tracks the dominant eigenvalue magnitude of the (generally
/// nonsymmetric) matrix.
pub fn tightened_rho_interval(w: &SpatialWeights, margin: f64, iterations: usize) -> RhoInterval {
    let n = w.n();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5243_4d49);
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    let mut radius = 0.0f64;
    for _ in 0..iterations {
        let next = w.matrix().mul_vec(&v).expect("square matrix");
        let norm = next.norm();
        if norm < 1e-300 {
            radius = 0.0;
            break;
        }
        radius = norm / v.norm();
        v = next / norm;
    }
    if radius < 1e-12 {
        // No spatial feedback at all; any rho keeps the system invertible.
        // Return a wide but finite interval.
        return RhoInterval { lo: -1e6, hi: 1e6 };
    }
    let bound = (1.0 - margin) / radius.min(1.0);
    RhoInterval {
        lo: -bound,
        hi: bound,
    }
}

/// Quadratic expansion of `rho -> tr(S(rho)^T P S(rho) G)` as `a + b rho + c rho^2`.
pub fn quadratic_trace_coeffs(
    w: &SpatialWeights,
    p: &SparseMatrix,
    g: &DMatrix<f64>,
) -> Result<(f64, f64, f64)> {
    let wt = w.matrix().transpose();
    let wtp = wt.matmul(p)?;
    let pw = p.matmul(w.matrix())?;
    let wtpw = wt.matmul(&pw)?;
    let a = p.trace_product(g)?;
    let b = -(wtp.trace_product(g)? + pw.trace_product(g)?);
    let c = wtpw.trace_product(g)?;
    Ok((a, b, c))
}

/// Random k-neighbour weights: every site receives `k` distinct neighbours
/// chosen uniformly among the other sites, with independent U(0,1) weights,
/// row-normalized. Fixed seeds reproduce the matrix bit for bit.
pub fn knn_random_weights(n: usize, k: usize, seed: u64) -> Result<SpatialWeights> {
    if n < 2 || k == 0 || k > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= n - 1, got n = {n}, k = {k}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut chosen: Vec<usize> = sample(&mut rng, n - 1, k)
            .into_iter()
            .map(|v| if v >= i { v + 1 } else { v })
            .collect();
        chosen.sort_unstable();
        for &j in &chosen {
            triplets.push((i, j, rng.gen_range(0.0..1.0)));
        }
    }
    let mat = SparseMatrix::from_triplets(n, n, &triplets)?;
    SpatialWeights::new_normalized(mat)
}

/// First-order lattice contiguity: the (up to) eight lattice cells touching a
/// site are its neighbours, equally weighted. Sites with no neighbours become
/// island rows.
pub fn grid_first_order_weights(coords: &[(i64, i64)]) -> Result<SpatialWeights> {
    let n = coords.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut lookup: HashMap<(i64, i64), usize> = HashMap::with_capacity(n);
    for (idx, &xy) in coords.iter().enumerate() {
        if lookup.insert(xy, idx).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate lattice coordinate {xy:?}"
            )));
        }
    }
    let offsets: [(i64, i64); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let mut triplets = Vec::new();
    for (i, &(x, y)) in coords.iter().enumerate() {
        let neighbours: Vec<usize> = offsets
            .iter()
            .filter_map(|&(dx, dy)| lookup.get(&(x + dx, y + dy)).copied())
            .collect();
        if neighbours.is_empty() {
            continue;
        }
        let w = 1.0 / neighbours.len() as f64;
        for j in neighbours {
            triplets.push((i, j, w));
        }
    }
    let mat = SparseMatrix::from_triplets(n, n, &triplets)?;
    SpatialWeights::new(mat)
}

/// Adjacency-based weights scaled by the square root of the neighbour's
/// population, then row-normalized. Edges are undirected pairs listed once.
pub fn adjacency_population_weights(
    edges: &[(usize, usize)],
    populations: &[f64],
) -> Result<SpatialWeights> {
    let n = populations.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    for (i, &p) in populations.iter().enumerate() {
        if !(p.is_finite() && p >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "population of site {i} must be finite and nonnegative, got {p}"
            )));
        }
    }
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) references a site outside 0..{n}"
            )));
        }
        if i == j {
            return Err(Error::InvalidArgument(format!("self-loop at site {i}")));
        }
        triplets.push((i, j, populations[j].sqrt()));
        triplets.push((j, i, populations[i].sqrt()));
    }
    let mat = SparseMatrix::from_triplets(n, n, &triplets)?;
    SpatialWeights::new_normalized(mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triplet_construction_sorts_and_rejects_duplicates() {
        let m = SparseMatrix::from_triplets(2, 2, &[(1, 0, 2.0), (0, 1, 1.0)]).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert!(SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0)]).is_err());
    }

    #[test]
    fn transpose_and_matmul_match_dense_algebra() {
        let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 2.0), (1, 2, -1.0), (2, 0, 0.5)]).unwrap();
        let b = SparseMatrix::from_triplets(3, 3, &[(0, 0, 1.5), (1, 0, -2.0), (2, 1, 3.0)]).unwrap();
        let prod = a.matmul(&b).unwrap().to_dense();
        let expected = a.to_dense() * b.to_dense();
        assert_relative_eq!((prod - expected).norm(), 0.0, epsilon = 1e-14);
        let t = a.transpose().to_dense();
        assert_relative_eq!((t - a.to_dense().transpose()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn entrywise_add_merges_positions() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0)]).unwrap();
        let b = SparseMatrix::from_triplets(2, 2, &[(0, 1, 3.0), (1, 0, 4.0)]).unwrap();
        let s = a.add(&b).unwrap();
        let expected = a.to_dense() + b.to_dense();
        assert_relative_eq!((s.to_dense() - expected).norm(), 0.0, epsilon = 1e-14);
        assert_eq!(s.nnz(), 3);
    }

    #[test]
    fn trace_products_match_dense_oracle() {
        let a = SparseMatrix::from_triplets(
            4,
            4,
            &[(0, 1, 0.7), (1, 3, -0.2), (2, 0, 1.1), (3, 2, 0.4)],
        )
        .unwrap();
        let g = DMatrix::from_fn(4, 4, |i, j| (i as f64 - 1.3) * (j as f64 + 0.4));
        let direct = a.trace_product(&g).unwrap();
        let oracle = (a.to_dense() * &g).trace();
        assert_relative_eq!(direct, oracle, epsilon = 1e-12);
    }

    #[test]
    fn knn_weights_are_reproducible_and_normalized() {
        let w1 = knn_random_weights(30, 5, 42).unwrap();
        let w2 = knn_random_weights(30, 5, 42).unwrap();
        assert_eq!(w1, w2);
        let w3 = knn_random_weights(30, 5, 43).unwrap();
        assert_ne!(w1, w3);
        for i in 0..30 {
            let (cols, vals) = w1.matrix().row(i);
            assert_eq!(cols.len(), 5);
            assert!(!cols.contains(&i));
            assert_relative_eq!(vals.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_weights_count_interior_corner_and_island_neighbours() {
        // 3x3 block plus one far-away site.
        let mut coords: Vec<(i64, i64)> = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                coords.push((x, y));
            }
        }
        coords.push((100, 100));
        let w = grid_first_order_weights(&coords).unwrap();
        let center = coords.iter().position(|&c| c == (1, 1)).unwrap();
        assert_eq!(w.matrix().row(center).0.len(), 8);
        let corner = coords.iter().position(|&c| c == (0, 0)).unwrap();
        assert_eq!(w.matrix().row(corner).0.len(), 3);
        assert_eq!(w.row_kind(9), RowKind::Empty);
        assert_eq!(w.island_count(), 1);
        // Brute-force neighbour check.
        for (i, &(xi, yi)) in coords.iter().enumerate() {
            for (j, &(xj, yj)) in coords.iter().enumerate() {
                let adjacent =
                    i != j && (xi - xj).abs() <= 1 && (yi - yj).abs() <= 1;
                assert_eq!(w.matrix().get(i, j) > 0.0, adjacent);
            }
        }
    }

    #[test]
    fn adjacency_population_weights_row_normalize_sqrt_scaled_entries() {
        let pops = vec![4.0, 9.0, 16.0];
        let w = adjacency_population_weights(&[(0, 1), (0, 2)], &pops).unwrap();
        // Site 0 neighbours 1 and 2 with raw weights 3 and 4.
        assert_relative_eq!(w.matrix().get(0, 1), 3.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(w.matrix().get(0, 2), 4.0 / 7.0, epsilon = 1e-12);
        // Sites 1 and 2 each only neighbour site 0.
        assert_relative_eq!(w.matrix().get(1, 0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(w.matrix().get(2, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_self_loops_and_negative_weights() {
        let loop_mat = SparseMatrix::from_triplets(2, 2, &[(0, 0, 0.5), (0, 1, 0.5)]).unwrap();
        assert!(SpatialWeights::new(loop_mat).is_err());
        let neg = SparseMatrix::from_triplets(2, 2, &[(0, 1, -0.5)]).unwrap();
        assert!(SpatialWeights::new_normalized(neg).is_err());
        let unnormalized = SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.7)]).unwrap();
        assert!(SpatialWeights::new(unnormalized).is_err());
        assert!(SpatialWeights::new_normalized(unnormalized2()).is_ok());
    }

    fn unnormalized2() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, &[(0, 1, 0.7), (1, 0, 2.0)]).unwrap()
    }

    #[test]
    fn two_cycle_has_default_interval() {
        let mat = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let w = SpatialWeights::new(mat).unwrap();
        let iv = admissible_rho_interval(&w, DEFAULT_RHO_MARGIN);
        assert_relative_eq!(iv.lo, -0.995, epsilon = 1e-12);
        assert_relative_eq!(iv.hi, 0.995, epsilon = 1e-12);
        // Power iteration finds radius 1 here, so tightening changes nothing.
        let tight = tightened_rho_interval(&w, DEFAULT_RHO_MARGIN, 200);
        assert_relative_eq!(tight.hi, 0.995, epsilon = 1e-6);
    }

    #[test]
    fn s_solve_inverts_the_action() {
        let w = knn_random_weights(25, 4, 7).unwrap();
        let x = DMatrix::from_fn(25, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let b = w.s_action(0.6, &x).unwrap();
        let back = w.solve_s(0.6, &b).unwrap();
        assert_relative_eq!((back - x).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn quadratic_coeffs_match_direct_evaluation() {
        let w = knn_random_weights(6, 2, 3).unwrap();
        let p = w.matrix().clone();
        let g = DMatrix::from_fn(6, 6, |i, j| ((i + 2 * j) as f64 * 0.21).cos());
        let (a, b, c) = quadratic_trace_coeffs(&w, &p, &g).unwrap();
        for &rho in &[-0.8, -0.1, 0.0, 0.3, 0.9] {
            let s = DMatrix::identity(6, 6) - w.matrix().to_dense() * rho;
            let direct = (s.transpose() * p.to_dense() * &s * &g).trace();
            assert_relative_eq!(a + b * rho + c * rho * rho, direct, epsilon = 1e-10);
        }
        // rho = 0 reduces to tr(P G).
        assert_relative_eq!(a, p.trace_product(&g).unwrap(), epsilon = 1e-12);
        // Zero data Gram zeroes every coefficient.
        let zero = DMatrix::zeros(6, 6);
        let (a0, b0, c0) = quadratic_trace_coeffs(&w, &p, &zero).unwrap();
        assert_eq!((a0, b0, c0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn restriction_renormalizes_surviving_rows() {
        let w = knn_random_weights(12, 3, 11).unwrap();
        let keep: Vec<usize> = (0..10).collect();
        let r = w.restrict(&keep).unwrap();
        assert_eq!(r.n(), 10);
        for i in 0..10 {
            let (_, vals) = r.matrix().row(i);
            let sum: f64 = vals.iter().sum();
            assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9);
        }
    }
}
