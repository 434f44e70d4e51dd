//! Block structure of flattened superoperators.
//!
//! Phase-covariant superoperators only couple entries `(m, n)` with the same
//! charge `n − m`, so their sparsity graph splits into small connected
//! components. This module finds those components and uses them for exact
//! restrictions of Krylov methods, block-dense LU solves and block-dense
//! exponentials.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::krylov::{expm_action, ExpmOptions, LinearOperator};
use crate::superop::FlatSuperoperator;

/// Connected components of the (undirected) sparsity graph, each sorted.
#[derive(Debug, Clone)]
pub struct Components {
    label: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Components {
    pub fn of(op: &FlatSuperoperator) -> Self {
        let n = op.size();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (r, c, _) in op.entries() {
            let (a, b) = (find(&mut parent, r), find(&mut parent, c));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut root_label = vec![usize::MAX; n];
        for i in 0..n {
            let r = find(&mut parent, i);
            if root_label[r] == usize::MAX {
                root_label[r] = members.len();
                members.push(Vec::new());
            }
            label[i] = root_label[r];
            members[root_label[r]].push(i);
        }
        Components { label, members }
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.label[i]
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    /// Components holding at least one nonzero of `v`.
    pub fn touched(&self, v: &[f64]) -> Vec<usize> {
        let mut seen = vec![false; self.count()];
        let mut out = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            if x != 0.0 && !seen[self.label[i]] {
                seen[self.label[i]] = true;
                out.push(self.label[i]);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn largest(&self) -> usize {
        self.members.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Indices reachable from `seeds` along directed edges `c → r` of `op`
/// (the support of every Krylov vector started on `seeds`).
pub fn forward_closure(op: &FlatSuperoperator, seeds: &[usize]) -> Vec<usize> {
    let n = op.size();
    // column-wise adjacency
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in op.entries() {
        out_edges[c].push(r);
    }
    let mut mark = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    for &s in seeds {
        if !mark[s] {
            mark[s] = true;
            stack.push(s);
        }
    }
    while let Some(c) = stack.pop() {
        for &r in &out_edges[c] {
            if !mark[r] {
                mark[r] = true;
                stack.push(r);
            }
        }
    }
    (0..n).filter(|&i| mark[i]).collect()
}

/// Nonzero positions of `v`.
pub fn support(v: &[f64]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect()
}

/// Compressed-row principal submatrix on an index set.
#[derive(Debug, Clone)]
pub struct SubMatrix {
    indices: Vec<usize>,
    indptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    norm: f64,
}

impl SubMatrix {
    pub fn extract(op: &FlatSuperoperator, indices: &[usize]) -> Self {
        let mut local = vec![usize::MAX; op.size()];
        for (k, &i) in indices.iter().enumerate() {
            local[i] = k;
        }
        let mut indptr = Vec::with_capacity(indices.len() + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut norm: f64 = 0.0;
        for &r in indices {
            let (ci, vi) = op.row(r);
            let mut row_sum = 0.0;
            for (&c, &v) in ci.iter().zip(vi) {
                if local[c] != usize::MAX {
                    cols.push(local[c]);
                    values.push(v);
                    row_sum += v.abs();
                }
            }
            norm = norm.max(row_sum);
            indptr.push(cols.len());
        }
        SubMatrix {
            indices: indices.to_vec(),
            indptr,
            cols,
            values,
            norm,
        }
    }

    /// Global indices of the local coordinates.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| global[i]).collect()
    }

    pub fn scatter(&self, local: &[f64], global_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; global_len];
        for (&i, &x) in self.indices.iter().zip(local) {
            out[i] = x;
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.indices.len())
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.values[k])
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.indices.len();
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.cols[k])] += self.values[k];
            }
        }
        m
    }
}

impl LinearOperator for SubMatrix {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    fn norm_estimate(&self) -> f64 {
        self.norm
    }
}

/// `x = (A + shift·I)⁻¹ b`, factorizing only the components `b` touches.
pub fn block_lu_solve(op: &FlatSuperoperator, comps: &Components, b: &[f64], shift: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    for c in comps.touched(b) {
        let idx = comps.members(c);
        let sub = SubMatrix::extract(op, idx);
        let mut a = sub.to_dense();
        for i in 0..idx.len() {
            a[(i, i)] += shift;
        }
        let rhs = DVector::from_vec(sub.gather(b));
        let sol = a.lu().solve(&rhs).ok_or_else(|| {
            Error::numerical(format!("singular block of size {} in LU fallback", idx.len()), f64::INFINITY)
        })?;
        for (&i, &v) in idx.iter().zip(sol.iter()) {
            x[i] = v;
        }
    }
    Ok(x)
}

/// `e^{tA} v` by dense exponentials of the touched components.
pub fn block_expm_action(op: &FlatSuperoperator, comps: &Components, v: &[f64], t: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for c in comps.touched(v) {
        let idx = comps.members(c);
        let sub = SubMatrix::extract(op, idx);
        let e = (sub.to_dense() * t).exp();
        let w = e * DVector::from_vec(sub.gather(v));
        for (&i, &x) in idx.iter().zip(w.iter()) {
            out[i] = x;
        }
    }
    out
}

/// Anything that can evaluate `e^{tA} v` for the operator it wraps.
pub trait Propagator {
    fn len(&self) -> usize;

    fn propagate(&self, v: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Krylov propagation restricted to the forward closure of each input.
pub struct KrylovEngine<'a> {
    op: &'a FlatSuperoperator,
    pub tol: f64,
    pub options: ExpmOptions,
}

impl<'a> KrylovEngine<'a> {
    pub fn new(op: &'a FlatSuperoperator, tol: f64) -> Self {
        KrylovEngine {
            op,
            tol,
            options: ExpmOptions::default(),
        }
    }
}

impl Propagator for KrylovEngine<'_> {
    fn len(&self) -> usize {
        self.op.size()
    }

    fn propagate(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        let idx = forward_closure(self.op, &support(v));
        if idx.is_empty() {
            return Ok(vec![0.0; v.len()]);
        }
        let sub = SubMatrix::extract(self.op, &idx);
        let w = expm_action(&sub, &sub.gather(v), t, self.tol, self.options)?;
        Ok(sub.scatter(&w, v.len()))
    }
}

/// Dense exponentials per component; the small-dimension oracle.
pub struct DenseBlockEngine<'a> {
    op: &'a FlatSuperoperator,
    comps: Components,
}

impl<'a> DenseBlockEngine<'a> {
    pub fn new(op: &'a FlatSuperoperator) -> Self {
        DenseBlockEngine {
            op,
            comps: Components::of(op),
        }
    }
}

impl Propagator for DenseBlockEngine<'_> {
    fn len(&self) -> usize {
        self.op.size()
    }

    fn propagate(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::validation(format!("propagation time must be nonnegative, got {t}")));
        }
        Ok(block_expm_action(self.op, &self.comps, v, t))
    }
}

/// Spectral data of one component: `A_c = S⁻¹ V Λ Vᵀ S` with `S` diagonal.
struct BlockSpectrum {
    scale: Vec<f64>,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

/// Eigen-propagation on components that are diagonally similar to a
/// symmetric matrix.
///
/// A component qualifies when every coupled pair satisfies
/// `A_ij A_ji > 0` and the induced scaling is consistent around every
/// cycle. Components that do not qualify are exponentiated densely.
/// Spectra are computed lazily and cached, so one instance serves many
/// propagations at `O(n_c²)` each.
pub struct SectorPropagator<'a> {
    op: &'a FlatSuperoperator,
    comps: Components,
    cache: Vec<OnceLock<Option<BlockSpectrum>>>,
}

impl<'a> SectorPropagator<'a> {
    pub fn new(op: &'a FlatSuperoperator) -> Self {
        let comps = Components::of(op);
        let cache = (0..comps.count()).map(|_| OnceLock::new()).collect();
        SectorPropagator { op, comps, cache }
    }

    pub fn components(&self) -> &Components {
        &self.comps
    }

    fn spectrum(&self, c: usize) -> Option<&BlockSpectrum> {
        self.cache[c]
            .get_or_init(|| symmetrize(&SubMatrix::extract(self.op, self.comps.members(c)).to_dense()))
            .as_ref()
    }
}

fn symmetrize(a: &DMatrix<f64>) -> Option<BlockSpectrum> {
    let n = a.nrows();
    let mut scale = vec![0.0; n];
    let mut done = vec![false; n];
    let mut stack = Vec::new();
    for root in 0..n {
        if done[root] {
            continue;
        }
        scale[root] = 1.0;
        done[root] = true;
        stack.push(root);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (aij, aji) = (a[(i, j)], a[(j, i)]);
                if aij == 0.0 && aji == 0.0 {
                    continue;
                }
                if aij * aji <= 0.0 {
                    return None;
                }
                // s_j / s_i = sqrt(a_ij / a_ji) makes s_i a_ij / s_j symmetric
                let sj = scale[i] * (aij / aji).sqrt();
                if done[j] {
                    if ((scale[j] - sj) / sj).abs() > 1e-10 {
                        return None;
                    }
                } else {
                    scale[j] = sj;
                    done[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    let mut s = DMatrix::from_fn(n, n, |i, j| scale[i] * a[(i, j)] / scale[j]);
    // remove rounding asymmetry
    let st = s.transpose();
    s = (s + st) * 0.5;
    let eig = SymmetricEigen::new(s);
    Some(BlockSpectrum {
        scale,
        vectors: eig.eigenvectors,
        values: eig.eigenvalues,
    })
}

impl Propagator for SectorPropagator<'_> {
    fn len(&self) -> usize {
        self.op.size()
    }

    fn propagate(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::validation(format!("propagation time must be nonnegative, got {t}")));
        }
        let mut out = vec![0.0; v.len()];
        for c in self.comps.touched(v) {
            let idx = self.comps.members(c);
            match self.spectrum(c) {
                Some(sp) => {
                    let y = DVector::from_iterator(idx.len(), idx.iter().zip(&sp.scale).map(|(&i, s)| s * v[i]));
                    let mut coeff = sp.vectors.tr_mul(&y);
                    for (k, x) in coeff.iter_mut().enumerate() {
                        *x *= (sp.values[k] * t).exp();
                    }
                    let w = &sp.vectors * coeff;
                    for ((&i, s), x) in idx.iter().zip(&sp.scale).zip(w.iter()) {
                        out[i] = x / s;
                    }
                }
                None => {
                    let sub = SubMatrix::extract(self.op, idx);
                    let w = (sub.to_dense() * t).exp() * DVector::from_vec(sub.gather(v));
                    for (&i, &x) in idx.iter().zip(w.iter()) {
                        out[i] = x;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::superop::{build_liouvillian, index, max_abs};

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = max_abs(b).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn liouvillian_components_are_charge_sectors() {
        let d = 7;
        let l = build_liouvillian(&build_model(d).unwrap());
        let comps = Components::of(&l);
        assert_eq!(comps.count(), 2 * d - 1);
        assert_eq!(comps.largest(), d);
        for m in 0..d {
            for n in 0..d {
                let same = comps.label(index(d, m, n)) == comps.label(index(d, 0, n.abs_diff(m)))
                    || comps.label(index(d, m, n)) == comps.label(index(d, m.abs_diff(n), 0));
                assert!(same);
            }
        }
    }

    #[test]
    fn engines_agree_with_full_dense_exponential() {
        let d = 6;
        let l = build_liouvillian(&build_model(d).unwrap());
        let dense = l.to_dense();
        let v: Vec<f64> = (0..d * d).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.4).collect();
        let t = 0.3;
        let exact = (&dense * t).exp() * DVector::from_column_slice(&v);
        let kry = KrylovEngine::new(&l, 1e-12).propagate(&v, t).unwrap();
        let blk = DenseBlockEngine::new(&l).propagate(&v, t).unwrap();
        let sec = SectorPropagator::new(&l).propagate(&v, t).unwrap();
        assert!(rel_err(&kry, exact.as_slice()) < 1e-10);
        assert!(rel_err(&blk, exact.as_slice()) < 1e-12);
        assert!(rel_err(&sec, exact.as_slice()) < 1e-11);
    }

    #[test]
    fn block_lu_matches_dense_solve() {
        let d = 5;
        let l = build_liouvillian(&build_model(d).unwrap());
        let comps = Components::of(&l);
        let shift = -0.7;
        let b: Vec<f64> = (0..d * d).map(|i| (i as f64 * 0.3).cos()).collect();
        let x = block_lu_solve(&l, &comps, &b, shift).unwrap();
        let mut a = l.to_dense();
        for i in 0..d * d {
            a[(i, i)] += shift;
        }
        let exact = a.lu().solve(&DVector::from_vec(b)).unwrap();
        assert!(rel_err(&x, exact.as_slice()) < 1e-12);
    }

    #[test]
    fn closure_of_single_sector_stays_in_sector() {
        let d = 9;
        let l = build_liouvillian(&build_model(d).unwrap());
        let idx = forward_closure(&l, &[index(d, 0, 1)]);
        assert_eq!(idx.len(), d - 1);
        assert!(idx.iter().all(|&i| i / d == i % d + 1));
    }

    #[test]
    fn nonsymmetrizable_block_falls_back() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]);
        assert!(symmetrize(&a).is_none());
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, 4.0, 1.0, -2.0]);
        let sp = symmetrize(&b).unwrap();
        assert!((sp.values.sum() - (-3.0)).abs() < 1e-14);
    }
}
