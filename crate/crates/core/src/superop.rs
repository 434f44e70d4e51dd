//! Flattened-space algebra.
//!
//! A `D×D` operator `X` is stored as the length-`D²` column-stacked vector
//! `vec(X)[m + D·n] = X[m, n]`: the row index of `X` is the fast index.
//! With this convention `vec(A X B) = (Bᵀ ⊗ A) vec(X)`, so left
//! multiplication by `A` is `I ⊗ A` and right multiplication by `Bᵀ` is
//! `B ⊗ I`. All models here are real, so conjugation is trivial.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;

use crate::krylov::LinearOperator;
use crate::model::LaserModel;

/// A `D×D` operator in flattened form.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatVector {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FlatVector {
    pub fn zeros(dim: usize) -> Self {
        FlatVector {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_data(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "flat vector length must be dim²");
        FlatVector { dim, data }
    }

    /// `vec(X)`.
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        assert!(x.is_square(), "only square operators can be flattened");
        // nalgebra storage is column-major, which is exactly column stacking
        FlatVector {
            dim: x.nrows(),
            data: x.as_slice().to_vec(),
        }
    }

    /// Inverse of [`FlatVector::from_matrix`].
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.data)
    }

    /// Diagonal operator `diag(d)`.
    pub fn from_diagonal(d: &[f64]) -> Self {
        let dim = d.len();
        let mut v = FlatVector::zeros(dim);
        for (i, &x) in d.iter().enumerate() {
            v.data[index(dim, i, i)] = x;
        }
        v
    }

    /// `(1|v) = Tr X`.
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[index(self.dim, i, i)]).sum()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn dot(&self, other: &FlatVector) -> f64 {
        dot(&self.data, &other.data)
    }
}

/// Flat index of matrix element `(m, n)`.
#[inline]
pub fn index(dim: usize, m: usize, n: usize) -> usize {
    m + dim * n
}

/// Which object a superoperator represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperopKind {
    Liouvillian,
    Transfer,
    Projected,
    Jump,
    Generic,
}

/// Sparse real `D²×D²` matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatSuperoperator {
    pub dim: usize,
    pub kind: SuperopKind,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl FlatSuperoperator {
    /// Assemble from `(row, col, value)` triplets. Duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(dim: usize, kind: SuperopKind, mut trip: Vec<(usize, usize, f64)>) -> Self {
        let n = dim * dim;
        trip.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut values: Vec<f64> = Vec::with_capacity(trip.len());
        let mut rows = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            assert!(r < n && c < n, "triplet ({r},{c}) outside {n}×{n}");
            if let (Some(&lr), Some(&lc)) = (rows.last(), indices.last()) {
                if lr == r && lc == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            indices.push(c);
            values.push(v);
        }
        let keep: Vec<bool> = values.iter().map(|&v| v != 0.0).collect();
        let mut k_rows = Vec::new();
        let mut k_idx = Vec::new();
        let mut k_val = Vec::new();
        for i in 0..values.len() {
            if keep[i] {
                k_rows.push(rows[i]);
                k_idx.push(indices[i]);
                k_val.push(values[i]);
            }
        }
        for &r in &k_rows {
            indptr[r + 1] += 1;
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        FlatSuperoperator {
            dim,
            kind,
            indptr,
            indices: k_idx,
            values: k_val,
        }
    }

    /// Triplets of `A ⊗ B` for dense `D×D` factors, skipping zeros.
    pub fn kron_triplets(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> Vec<(usize, usize, f64)> {
        let d = a.nrows();
        let mut out = Vec::new();
        for ar in 0..d {
            for ac in 0..d {
                let av = a[(ar, ac)];
                if av == 0.0 {
                    continue;
                }
                for br in 0..d {
                    for bc in 0..d {
                        let bv = b[(br, bc)];
                        if bv != 0.0 {
                            out.push((ar * d + br, ac * d + bc, scale * av * bv));
                        }
                    }
                }
            }
        }
        out
    }

    /// `I ⊗ A` (left multiplication by `A`).
    pub fn left_multiplication(a: &DMatrix<f64>) -> Self {
        let d = a.nrows();
        let id = DMatrix::identity(d, d);
        Self::from_triplets(d, SuperopKind::Jump, Self::kron_triplets(&id, a, 1.0))
    }

    /// `B ⊗ I` (right multiplication by `Bᵀ`).
    pub fn right_multiplication_transpose(b: &DMatrix<f64>) -> Self {
        let d = b.nrows();
        let id = DMatrix::identity(d, d);
        Self::from_triplets(d, SuperopKind::Jump, Self::kron_triplets(b, &id, 1.0))
    }

    pub fn size(&self) -> usize {
        self.dim * self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate over stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.size()).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.indptr[r];
        let e = self.indptr[r + 1];
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    /// Row-sum infinity norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.size())
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size())
            .map(|r| {
                let (idx, val) = self.row(r);
                idx.iter()
                    .position(|&c| c == r)
                    .map_or(0.0, |p| val[p])
            })
            .collect()
    }

    /// `y = A x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *yr = acc;
        }
    }

    pub fn apply(&self, v: &FlatVector) -> FlatVector {
        let mut out = FlatVector::zeros(self.dim);
        self.matvec_into(&v.data, &mut out.data);
        out
    }

    /// Row vector times matrix, `(u| A`.
    pub fn apply_left(&self, u: &FlatVector) -> FlatVector {
        let mut out = FlatVector::zeros(self.dim);
        for r in 0..self.size() {
            let ur = u.data[r];
            if ur == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.data[self.indices[k]] += ur * self.values[k];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in self.entries() {
            m[(r, c)] += v;
        }
        m
    }

    /// `A + shift·I`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut trip: Vec<_> = self.entries().collect();
        trip.extend((0..self.size()).map(|i| (i, i, shift)));
        Self::from_triplets(self.dim, self.kind, trip)
    }

    /// `‖𝒰_ζ A 𝒰_{−ζ} − A‖_max` for the phase superoperator
    /// `𝒰_ζ = diag_{(m,n)} e^{iζ(n−m)}`.
    pub fn phase_invariance_residual(&self, zeta: f64) -> f64 {
        let d = self.dim;
        let charge = |i: usize| (i / d) as f64 - (i % d) as f64;
        self.entries()
            .map(|(r, c, v)| {
                let phase = zeta * (charge(r) - charge(c));
                // |e^{iφ} − 1| = 2|sin(φ/2)|
                v.abs() * 2.0 * (0.5 * phase).sin().abs()
            })
            .fold(0.0, f64::max)
    }

    /// Matrix Market coordinate text (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let n = self.size();
        let mut s = String::new();
        let _ = writeln!(s, "%%MatrixMarket matrix coordinate real general");
        let _ = writeln!(s, "% {:?} superoperator, cavity dimension {}", self.kind, self.dim);
        let _ = writeln!(s, "{n} {n} {}", self.nnz());
        for (r, c, v) in self.entries() {
            let _ = writeln!(s, "{} {} {:.17e}", r + 1, c + 1, v);
        }
        s
    }

    pub fn write_matrix_market(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_matrix_market())
    }
}

impl LinearOperator for FlatSuperoperator {
    fn len(&self) -> usize {
        self.size()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }

    fn norm_estimate(&self) -> f64 {
        self.norm_inf()
    }
}

/// `𝓛 = Ĝ⊗Ĝ + L̂⊗L̂ − ½(I⊗L₀ + L₀⊗I)`.
pub fn build_liouvillian(model: &LaserModel) -> FlatSuperoperator {
    let g = model.gain_matrix();
    let l = model.loss_matrix();
    let d = model.dim;
    let l0 = model.l0_diagonal();
    let mut trip = FlatSuperoperator::kron_triplets(&g, &g, 1.0);
    trip.extend(FlatSuperoperator::kron_triplets(&l, &l, 1.0));
    for n in 0..d {
        for m in 0..d {
            trip.push((index(d, m, n), index(d, m, n), -0.5 * (l0[m] + l0[n])));
        }
    }
    FlatSuperoperator::from_triplets(d, SuperopKind::Liouvillian, trip)
}

/// The oblique projector `Q = I − |1)(1|` with `|1) = vec(ρss)` and
/// `(1| = vec(I)ᵀ`. Stored as the rank-one pair, never densified.
#[derive(Debug, Clone)]
pub struct Projector {
    steady: FlatVector,
}

impl Projector {
    pub fn new(model: &LaserModel) -> Self {
        Projector {
            steady: FlatVector::from_diagonal(&model.steady),
        }
    }

    pub fn from_steady(steady: FlatVector) -> Self {
        Projector { steady }
    }

    /// `|1)`.
    pub fn steady(&self) -> &FlatVector {
        &self.steady
    }

    /// `Q v` in place.
    pub fn project(&self, v: &mut [f64]) {
        let d = self.steady.dim;
        let tr: f64 = (0..d).map(|i| v[index(d, i, i)]).sum();
        if tr != 0.0 {
            for i in 0..d {
                v[index(d, i, i)] -= tr * self.steady.data[index(d, i, i)];
            }
            // |1) is diagonal, so only diagonal entries change
        }
    }

    pub fn apply(&self, v: &FlatVector) -> FlatVector {
        let mut out = v.clone();
        self.project(&mut out.data);
        out
    }

    /// `(u| Q = (u| − (u|1)(1|`.
    pub fn apply_left(&self, u: &FlatVector) -> FlatVector {
        let d = self.steady.dim;
        let overlap = u.dot(&self.steady);
        let mut out = u.clone();
        for i in 0..d {
            out.data[index(d, i, i)] -= overlap;
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
