//! Sparse symmetric linear algebra: pattern bookkeeping and a simplicial
//! Cholesky factorization with a minimum-degree ordering.
//!
//! The factorization is split into a symbolic phase (ordering, elimination
//! tree, structure of `L`) and a numeric phase. Hyperparameter searches
//! refactor matrices whose sparsity pattern never changes, so the symbolic
//! analysis is computed once and shared through an [`Arc`].

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Sparse matrix-vector product for either storage order.
pub fn matvec(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols(), x.len(), "matvec dimension mismatch");
    let mut out = vec![0.0; m.rows()];
    if m.is_csr() {
        for (r, row) in m.outer_iterator().enumerate() {
            out[r] = row.iter().map(|(c, v)| v * x[c]).sum();
        }
    } else {
        for (c, col) in m.outer_iterator().enumerate() {
            let xc = x[c];
            if xc != 0.0 {
                for (r, v) in col.iter() {
                    out[r] += v * xc;
                }
            }
        }
    }
    out
}

/// `Aᵀ x` for a matrix in either storage order.
pub fn matvec_transposed(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    matvec(&m.transpose_view().to_owned(), x)
}

/// Builds a matrix from triplets, summing duplicates, in CSC order.
pub fn csc_from_triplets(shape: (usize, usize), triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> CsMat<f64> {
    let mut tri = TriMat::new(shape);
    for (r, c, v) in triplets {
        tri.add_triplet(r, c, v);
    }
    tri.to_csc()
}

/// `Aᵀ diag(w) A` as a CSC matrix. `w` has one weight per row of `A`.
pub fn weighted_gram(a: &CsMat<f64>, w: &[f64]) -> CsMat<f64> {
    assert_eq!(a.rows(), w.len());
    let a_csr = if a.is_csr() { a.clone() } else { a.to_csr() };
    let mut trip = Vec::new();
    for (r, row) in a_csr.outer_iterator().enumerate() {
        let wr = w[r];
        if wr == 0.0 {
            continue;
        }
        for (i, vi) in row.iter() {
            for (j, vj) in row.iter() {
                trip.push((i, j, wr * vi * vj));
            }
        }
    }
    csc_from_triplets((a.cols(), a.cols()), trip)
}

/// Kronecker product of a small dense matrix with a sparse one.
pub fn kron_dense_sparse(left: &[Vec<f64>], right: &CsMat<f64>) -> CsMat<f64> {
    let (rn, rm) = (right.rows(), right.cols());
    let t = left.len();
    let mut trip = Vec::new();
    for (a, row) in left.iter().enumerate() {
        for (b, &lv) in row.iter().enumerate() {
            if lv == 0.0 {
                continue;
            }
            for (v, (i, j)) in right.iter() {
                trip.push((a * rn + i, b * rm + j, lv * v));
            }
        }
    }
    csc_from_triplets((t * rn, t * rm), trip)
}

/// Places square blocks along the diagonal.
pub fn block_diag(blocks: &[&CsMat<f64>]) -> CsMat<f64> {
    let n: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut trip = Vec::new();
    let mut off = 0;
    for b in blocks {
        for (v, (i, j)) in b.iter() {
            trip.push((off + i, off + j, *v));
        }
        off += b.rows();
    }
    csc_from_triplets((n, n), trip)
}

/// Union of the sparsity patterns of same-shaped matrices, with zero values,
/// in CSC order with sorted row indices.
pub fn pattern_union(mats: &[&CsMat<f64>]) -> CsMat<f64> {
    let shape = mats[0].shape();
    let mut cols: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); shape.1];
    for m in mats {
        assert_eq!(m.shape(), shape, "pattern_union shape mismatch");
        for (_, (i, j)) in m.iter() {
            cols[j].insert(i);
        }
    }
    let mut indptr = Vec::with_capacity(shape.1 + 1);
    let mut indices = Vec::new();
    indptr.push(0);
    for c in &cols {
        indices.extend(c.iter().copied());
        indptr.push(indices.len());
    }
    let data = vec![0.0; indices.len()];
    CsMat::new_csc(shape, indptr, indices, data)
}

/// A sparse matrix expressed as contributions to the data array of a
/// larger, fixed pattern.
#[derive(Debug, Clone)]
pub struct AlignedTerm {
    slots: Vec<usize>,
    values: Vec<f64>,
}

impl AlignedTerm {
    /// Aligns `m` to `pattern` (a CSC matrix with sorted row indices).
    pub fn new(pattern: &CsMat<f64>, m: &CsMat<f64>) -> Result<Self> {
        assert!(pattern.is_csc());
        let indptr = pattern.indptr();
        let indptr = indptr.raw_storage();
        let indices = pattern.indices();
        let mut slots = Vec::with_capacity(m.nnz());
        let mut values = Vec::with_capacity(m.nnz());
        for (v, (i, j)) in m.iter() {
            let col = &indices[indptr[j]..indptr[j + 1]];
            let pos = col
                .binary_search(&i)
                .map_err(|_| Error::Numerical(format!("entry ({i}, {j}) is outside the target pattern")))?;
            slots.push(indptr[j] + pos);
            values.push(*v);
        }
        Ok(Self { slots, values })
    }

    pub fn accumulate(&self, coef: f64, out: &mut [f64]) {
        if coef == 0.0 {
            return;
        }
        for (&s, &v) in self.slots.iter().zip(&self.values) {
            out[s] += coef * v;
        }
    }
}

/// Minimum-degree ordering of a symmetric pattern (exact degrees, explicit
/// elimination graph). Ties go to the lowest index, so the result is
/// deterministic.
pub fn minimum_degree_order(pattern: &CsMat<f64>) -> Vec<usize> {
    let n = pattern.rows();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (_, (i, j)) in pattern.iter() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
        }
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}

/// Structure of a Cholesky factor `P Q Pᵀ = L Lᵀ` for a fixed pattern of `Q`.
#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    /// Column pointers of `L`; the diagonal sits first in each column.
    lp: Vec<usize>,
    li: Vec<usize>,
    /// Per permuted column `k`: sources of the upper-triangular entries.
    upper_ptr: Vec<usize>,
    upper_src: Vec<usize>,
    upper_row: Vec<usize>,
    /// Per row `k` of `L`: off-diagonal columns in topological order and the
    /// slot in `L` each entry occupies.
    reach_ptr: Vec<usize>,
    reach_col: Vec<usize>,
    reach_slot: Vec<usize>,
    pattern_nnz: usize,
}

impl SymbolicCholesky {
    /// Analyzes a square CSC matrix holding the full symmetric pattern.
    pub fn analyze(pattern: &CsMat<f64>) -> Result<Self> {
        let order = minimum_degree_order(pattern);
        Self::with_order(pattern, order)
    }

    pub fn with_order(pattern: &CsMat<f64>, perm: Vec<usize>) -> Result<Self> {
        if !pattern.is_csc() || pattern.rows() != pattern.cols() {
            return Err(Error::invalid("Cholesky needs a square CSC matrix"));
        }
        let n = pattern.rows();
        let mut iperm = vec![0; n];
        for (k, &o) in perm.iter().enumerate() {
            iperm[o] = k;
        }

        // Upper triangle (row <= col) of the permuted matrix, per column.
        let indptr = pattern.indptr();
        let indptr = indptr.raw_storage();
        let indices = pattern.indices();
        let mut per_col: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for j in 0..n {
            let pj = iperm[j];
            for s in indptr[j]..indptr[j + 1] {
                let pi = iperm[indices[s]];
                if pi <= pj {
                    per_col[pj].push((pi, s));
                }
            }
        }
        let mut upper_ptr = Vec::with_capacity(n + 1);
        let mut upper_src = Vec::new();
        let mut upper_row = Vec::new();
        upper_ptr.push(0);
        for col in &mut per_col {
            col.sort_unstable();
            for &(r, s) in col.iter() {
                upper_row.push(r);
                upper_src.push(s);
            }
            upper_ptr.push(upper_row.len());
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &r in &upper_row[upper_ptr[k]..upper_ptr[k + 1]] {
                let mut i = r;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Row patterns of L via elimination-tree reaches.
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut path = vec![0usize; n];
        let mut reach_ptr = Vec::with_capacity(n + 1);
        let mut reach_col = Vec::new();
        let mut counts = vec![1usize; n];
        reach_ptr.push(0);
        for k in 0..n {
            mark[k] = k;
            let mut top = n;
            for &r in &upper_row[upper_ptr[k]..upper_ptr[k + 1]] {
                let mut i = r;
                let mut len = 0;
                while mark[i] != k {
                    path[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                    if i == NONE {
                        break;
                    }
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            for &i in &stack[top..n] {
                reach_col.push(i);
                counts[i] += 1;
            }
            reach_ptr.push(reach_col.len());
        }

        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for &c in &counts {
            lp.push(lp.last().unwrap() + c);
        }
        let nnz = *lp.last().unwrap();
        let mut li = vec![0usize; nnz];
        let mut reach_slot = vec![0usize; reach_col.len()];
        for k in 0..n {
            li[lp[k]] = k;
        }
        // Off-diagonals are appended in increasing row order, matching the
        // up-looking numeric sweep.
        let mut fill = lp[..n].iter().map(|&p| p + 1).collect::<Vec<_>>();
        for k in 0..n {
            for idx in reach_ptr[k]..reach_ptr[k + 1] {
                let i = reach_col[idx];
                li[fill[i]] = k;
                reach_slot[idx] = fill[i];
                fill[i] += 1;
            }
        }

        Ok(Self {
            n,
            perm,
            lp,
            li,
            upper_ptr,
            upper_src,
            upper_row,
            reach_ptr,
            reach_col,
            reach_slot,
            pattern_nnz: pattern.nnz(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.li.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Numeric factorization. `values` is aligned with the data array of the
    /// pattern passed to [`SymbolicCholesky::analyze`].
    pub fn factor(self: &Arc<Self>, values: &[f64]) -> Result<CholeskyFactor> {
        if values.len() != self.pattern_nnz {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                self.pattern_nnz,
                values.len()
            )));
        }
        let n = self.n;
        let mut lx = vec![0.0; self.li.len()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for s in self.upper_ptr[k]..self.upper_ptr[k + 1] {
                x[self.upper_row[s]] += values[self.upper_src[s]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for idx in self.reach_ptr[k]..self.reach_ptr[k + 1] {
                let i = self.reach_col[idx];
                let slot = self.reach_slot[idx];
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in self.lp[i] + 1..slot {
                    x[self.li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                lx[slot] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[k],
                    value: d,
                });
            }
            lx[self.lp[k]] = d.sqrt();
        }
        Ok(CholeskyFactor {
            sym: Arc::clone(self),
            lx,
        })
    }
}

/// Numeric Cholesky factor of a symmetric positive-definite matrix `Q`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    sym: Arc<SymbolicCholesky>,
    lx: Vec<f64>,
}

impl CholeskyFactor {
    /// Analyzes and factors in one go.
    pub fn new(q: &CsMat<f64>) -> Result<Self> {
        let q = if q.is_csc() { q.clone() } else { q.to_csc() };
        let sym = Arc::new(SymbolicCholesky::analyze(&q)?);
        sym.factor(q.data())
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.sym
    }

    pub fn dim(&self) -> usize {
        self.sym.n
    }

    /// `log |Q|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.sym.n).map(|k| self.lx[self.sym.lp[k]].ln()).sum::<f64>()
    }

    fn lower_solve_in_place(&self, w: &mut [f64]) {
        let s = &self.sym;
        let start = w.iter().position(|v| *v != 0.0).unwrap_or(s.n);
        for j in start..s.n {
            if w[j] == 0.0 {
                continue;
            }
            let p0 = s.lp[j];
            w[j] /= self.lx[p0];
            let wj = w[j];
            for p in p0 + 1..s.lp[j + 1] {
                w[s.li[p]] -= self.lx[p] * wj;
            }
        }
    }

    fn upper_solve_in_place(&self, w: &mut [f64]) {
        let s = &self.sym;
        for j in (0..s.n).rev() {
            let p0 = s.lp[j];
            let mut acc = w[j];
            for p in p0 + 1..s.lp[j + 1] {
                acc -= self.lx[p] * w[s.li[p]];
            }
            w[j] = acc / self.lx[p0];
        }
    }

    /// Solves `Q x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.sym;
        let mut w: Vec<f64> = s.perm.iter().map(|&o| b[o]).collect();
        self.lower_solve_in_place(&mut w);
        self.upper_solve_in_place(&mut w);
        let mut x = vec![0.0; s.n];
        for (k, &o) in s.perm.iter().enumerate() {
            x[o] = w[k];
        }
        x
    }

    /// `cᵀ Q⁻¹ c` for a sparse vector given as `(index, value)` pairs.
    pub fn inverse_quadratic_form(&self, c: &[(usize, f64)]) -> f64 {
        self.combination_variances(std::slice::from_ref(&c.to_vec()))[0]
    }

    /// Marginal variances `(Q⁻¹)_ii` for the requested coordinates.
    pub fn marginal_variances(&self, coords: &[usize]) -> Vec<f64> {
        let iperm = self.inverse_perm();
        coords
            .iter()
            .map(|&i| {
                let mut w = vec![0.0; self.sym.n];
                w[iperm[i]] = 1.0;
                self.lower_solve_in_place(&mut w);
                w.iter().map(|v| v * v).sum()
            })
            .collect()
    }

    /// Variances of many sparse linear combinations, reusing one inverse
    /// permutation.
    pub fn combination_variances(&self, combos: &[Vec<(usize, f64)>]) -> Vec<f64> {
        let iperm = self.inverse_perm();
        let mut w = vec![0.0; self.sym.n];
        combos
            .iter()
            .map(|c| {
                w.iter_mut().for_each(|v| *v = 0.0);
                for &(i, v) in c {
                    w[iperm[i]] += v;
                }
                self.lower_solve_in_place(&mut w);
                w.iter().map(|v| v * v).sum()
            })
            .collect()
    }

    /// Maps white noise `z ~ N(0, I)` to a draw from `N(0, Q⁻¹)`.
    pub fn sample_from_white(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.sym;
        let mut w = z.to_vec();
        self.upper_solve_in_place(&mut w);
        let mut x = vec![0.0; s.n];
        for (k, &o) in s.perm.iter().enumerate() {
            x[o] = w[k];
        }
        x
    }

    fn inverse_perm(&self) -> Vec<usize> {
        let mut iperm = vec![0; self.sym.n];
        for (k, &o) in self.sym.perm.iter().enumerate() {
            iperm[o] = k;
        }
        iperm
    }
}
