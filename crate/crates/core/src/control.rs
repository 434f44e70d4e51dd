//! Control synthesis: the gain and loss generators as linear combinations
//! of `(a†a)^m a† σ⁻ − a(a†a)^m σ⁺`, with coefficients from a generalized
//! Vandermonde system `F v = rhs`, `F_{nm} = n^{m+1/2}`.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LaserModel;

/// Arithmetic used by the Vandermonde solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Extended,
}

impl Precision {
    /// Double for `dim ≤ 12`, extended above.
    pub fn default_for(dim: usize) -> Self {
        if dim <= 12 {
            Precision::Double
        } else {
            Precision::Extended
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Extended => "extended",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            other => Err(Error::validation(format!("unknown precision '{other}' (double|extended)"))),
        }
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    /// One Newton step on the double square root.
    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::ZERO;
        }
        let x = self.hi.sqrt();
        let (p, e) = two_prod(x, x);
        let r = ((self.hi - p) - e + self.lo) / (2.0 * x);
        let (hi, lo) = quick_two_sum(x, r);
        DoubleDouble { hi, lo }
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        DoubleDouble::new(x)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}", self.to_f64())
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        DoubleDouble { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DoubleDouble { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self - o * DoubleDouble::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DoubleDouble::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DoubleDouble { hi, lo } + DoubleDouble::new(q3)
    }
}

/// Field operations shared by `f64` and [`DoubleDouble`].
pub trait Scalar:
    Copy
    + PartialOrd
    + From<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for DoubleDouble {
    fn sqrt(self) -> Self {
        DoubleDouble::sqrt(self)
    }
    fn abs(self) -> Self {
        DoubleDouble::abs(self)
    }
    fn to_f64(self) -> f64 {
        DoubleDouble::to_f64(self)
    }
}

fn s<S: Scalar>(x: f64) -> S {
    S::from(x)
}

/// `F_{nm} = n^{m+1/2}`, `n, m = 1..dim−1`.
fn f_matrix<S: Scalar>(dim: usize) -> Vec<Vec<S>> {
    (1..dim)
        .map(|n| {
            let x: S = s(n as f64);
            let mut p = x * x.sqrt();
            (1..dim)
                .map(|_| {
                    let v = p;
                    p = p * x;
                    v
                })
                .collect()
        })
        .collect()
}

/// Solves `Σ_k c_k x_i^k = b_i` (monomial interpolation) by the
/// Björck–Pereyra recurrences.
pub fn bjorck_pereyra<S: Scalar>(x: &[S], b: &[S]) -> Vec<S> {
    let n = x.len();
    let mut c = b.to_vec();
    for k in 0..n.saturating_sub(1) {
        for i in (k + 1..n).rev() {
            c[i] = (c[i] - c[i - 1]) / (x[i] - x[i - k - 1]);
        }
    }
    for k in (0..n.saturating_sub(1)).rev() {
        for i in k..n - 1 {
            c[i] = c[i] - x[k] * c[i + 1];
        }
    }
    c
}

/// A solved `F v = rhs`.
#[derive(Debug, Clone, Serialize)]
pub struct VandermondeSystem {
    pub dim: usize,
    pub rhs: Vec<f64>,
    pub solution: Vec<f64>,
    pub precision: Precision,
    /// `‖Fv − rhs‖_∞` evaluated in the working precision.
    pub residual: f64,
    /// `‖v‖_∞`.
    pub solution_norm: f64,
}

fn solve_generic<S: Scalar>(dim: usize, rhs: &[f64]) -> (Vec<S>, f64) {
    let nodes: Vec<S> = (1..dim).map(|n| s(n as f64)).collect();
    // F = diag(n^{3/2}) V₀
    let scaled: Vec<S> = nodes
        .iter()
        .zip(rhs)
        .map(|(&x, &r)| s::<S>(r) / (x * x.sqrt()))
        .collect();
    let v = bjorck_pereyra(&nodes, &scaled);
    let f = f_matrix::<S>(dim);
    let residual = f
        .iter()
        .zip(rhs)
        .map(|(row, &r)| {
            let acc = row.iter().zip(&v).fold(s::<S>(0.0), |a, (&fij, &vj)| a + fij * vj);
            (acc - s(r)).abs().to_f64()
        })
        .fold(0.0, f64::max);
    (v, residual)
}

/// Solves `F v = rhs`; `precision = None` picks by dimension.
pub fn solve_vandermonde(dim: usize, rhs: &[f64], precision: Option<Precision>) -> Result<VandermondeSystem> {
    if dim < 2 {
        return Err(Error::validation(format!("dimension must be at least 2, got {dim}")));
    }
    if rhs.len() != dim - 1 {
        return Err(Error::validation(format!(
            "right-hand side must have length {} for dimension {dim}, got {}",
            dim - 1,
            rhs.len()
        )));
    }
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("right-hand side must be finite"));
    }
    let precision = precision.unwrap_or_else(|| Precision::default_for(dim));
    let (solution, residual) = match precision {
        Precision::Double => solve_generic::<f64>(dim, rhs),
        Precision::Extended => {
            let (v, r) = solve_generic::<DoubleDouble>(dim, rhs);
            (v.into_iter().map(|x| x.to_f64()).collect(), r)
        }
    };
    let rhs_norm = rhs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !(residual <= 1e-6 * rhs_norm.max(f64::MIN_POSITIVE)) {
        return Err(Error::numerical(
            format!(
                "Vandermonde residual {residual:.3e} too large at dim {dim} in {} precision; use extended precision",
                precision.as_str()
            ),
            residual,
        ));
    }
    let solution_norm = solution.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    Ok(VandermondeSystem {
        dim,
        rhs: rhs.to_vec(),
        solution,
        precision,
        residual,
        solution_norm,
    })
}

/// Sign of `det F` from partially pivoted elimination.
fn det_sign_generic<S: Scalar>(dim: usize) -> i32 {
    let mut a = f_matrix::<S>(dim);
    let n = a.len();
    let mut sign = 1;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).expect("finite entries"))
            .expect("non-empty column");
        if a[p][k].to_f64() == 0.0 {
            return 0;
        }
        if p != k {
            a.swap(p, k);
            sign = -sign;
        }
        if a[k][k].to_f64() < 0.0 {
            sign = -sign;
        }
        for i in k + 1..n {
            let factor = a[i][k] / a[k][k];
            for j in k..n {
                let t = a[k][j];
                a[i][j] = a[i][j] - factor * t;
            }
        }
    }
    sign
}

/// Sign of `det F`; a non-positive result is reported as a numerical
/// failure since it can only come from precision loss.
pub fn det_positive(dim: usize, precision: Option<Precision>) -> Result<i32> {
    if dim < 2 {
        return Err(Error::validation(format!("dimension must be at least 2, got {dim}")));
    }
    let precision = precision.unwrap_or(if dim <= 14 { Precision::Double } else { Precision::Extended });
    let sign = match precision {
        Precision::Double => det_sign_generic::<f64>(dim),
        Precision::Extended => det_sign_generic::<DoubleDouble>(dim),
    };
    if sign != 1 {
        return Err(Error::numerical(
            format!("det F has sign {sign} at dim {dim} in {} precision", precision.as_str()),
            sign as f64,
        ));
    }
    Ok(sign)
}

/// Which generator to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Gain,
    Loss,
}

impl Which {
    pub fn as_str(&self) -> &'static str {
        match self {
            Which::Gain => "gain",
            Which::Loss => "loss",
        }
    }
}

impl std::str::FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gain" => Ok(Which::Gain),
            "loss" => Ok(Which::Loss),
            other => Err(Error::validation(format!("unknown generator '{other}' (gain|loss)"))),
        }
    }
}

/// `G_n` or `L_n`, `n = 1..D−1`.
pub fn generator_rhs(model: &LaserModel, which: Which) -> Vec<f64> {
    (1..model.dim)
        .map(|n| match which {
            Which::Gain => model.g(n),
            Which::Loss => model.l(n),
        })
        .collect()
}

/// Dense matrix over a [`Scalar`] on cavity⊗qubit, index `2c + q`.
struct Mat<S> {
    n: usize,
    a: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    fn zeros(n: usize) -> Self {
        Mat { n, a: vec![s(0.0); n * n] }
    }

    fn get(&self, r: usize, c: usize) -> S {
        self.a[r * self.n + c]
    }

    fn add_scaled(&mut self, o: &Mat<S>, k: S) {
        for (x, &y) in self.a.iter_mut().zip(&o.a) {
            *x = *x + k * y;
        }
    }

    fn mul(&self, o: &Mat<S>) -> Mat<S> {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.get(i, k);
                if aik.to_f64() == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] = out.a[i * n + j] + aik * o.get(k, j);
                }
            }
        }
        out
    }

    fn transpose(&self) -> Mat<S> {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[j * n + i] = self.get(i, j);
            }
        }
        out
    }

    fn from_fn(n: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.a[i * n + j] = f(i, j);
            }
        }
        m
    }
}

/// `Σ_m v_m B_m` with `B_m = (a†a)^m a† σ⁻ − a(a†a)^m σ⁺` for gain and
/// `B_m = a(a†a)^m σ⁺ − (a†a)^m a† σ⁻` for loss, `m = 1..D−1`.
fn synthesize<S: Scalar>(dim: usize, v: &[S], which: Which) -> Mat<S> {
    let n = 2 * dim;
    // a† ⊗ σ⁻: |c+1, 0⟩⟨c, 1| with weight √(c+1)
    let raise = Mat::from_fn(n, |r, c| {
        let (cr, qr, cc, qc) = (r / 2, r % 2, c / 2, c % 2);
        if cr == cc + 1 && qr == 0 && qc == 1 {
            s::<S>(cr as f64).sqrt()
        } else {
            s(0.0)
        }
    });
    let number = Mat::from_fn(n, |r, c| if r == c { s((r / 2) as f64) } else { s(0.0) });
    let mut power = number.mul(&raise);
    let mut out = Mat::zeros(n);
    for &vm in v {
        let b = power.transpose();
        let sign: S = s(if which == Which::Gain { 1.0 } else { -1.0 });
        out.add_scaled(&power, vm * sign);
        out.add_scaled(&b, -vm * sign);
        power = number.mul(&power);
    }
    out
}

/// Target `Ĝσ⁻ − Ĝ†σ⁺` or `L̂σ⁺ − L̂†σ⁻` on cavity⊗qubit.
pub fn target_generator(model: &LaserModel, which: Which) -> DMatrix<f64> {
    let sm = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    match which {
        Which::Gain => {
            let g = model.gain_matrix();
            g.kronecker(&sm) - g.transpose().kronecker(&sm.transpose())
        }
        Which::Loss => {
            let l = model.loss_matrix();
            l.kronecker(&sm.transpose()) - l.transpose().kronecker(&sm)
        }
    }
}

/// Reconstruction of one generator and how well it matches.
#[derive(Debug, Clone, Serialize)]
pub struct Reconstruction {
    pub dim: usize,
    pub which: Which,
    pub precision: Precision,
    pub coefficients: Vec<f64>,
    /// `‖Σ v_m B_m − target‖_max` in the working precision.
    pub residual: f64,
    pub solve_residual: f64,
    pub solution_norm: f64,
}

/// CSV header of the control subcommand.
pub const CONTROL_CSV_HEADER: &str = "dim,which,residual,precision";

impl Reconstruction {
    pub fn csv_line(&self) -> String {
        format!("{},{},{:e},{}", self.dim, self.which.as_str(), self.residual, self.precision.as_str())
    }
}

fn reconstruct_generic<S: Scalar>(model: &LaserModel, which: Which) -> (Vec<S>, f64) {
    let dim = model.dim;
    let rhs = generator_rhs(model, which);
    let nodes: Vec<S> = (1..dim).map(|n| s(n as f64)).collect();
    let scaled: Vec<S> = nodes
        .iter()
        .zip(&rhs)
        .map(|(&x, &r)| s::<S>(r) / (x * x.sqrt()))
        .collect();
    let v = bjorck_pereyra(&nodes, &scaled);
    let built = synthesize(dim, &v, which);
    let target = target_generator(model, which);
    let mut residual = 0.0f64;
    for i in 0..2 * dim {
        for j in 0..2 * dim {
            residual = residual.max((built.get(i, j) - s(target[(i, j)])).abs().to_f64());
        }
    }
    (v, residual)
}

/// Builds the generator from solved coefficients and compares it with the
/// target on the `2D`-dimensional cavity⊗qubit space.
pub fn reconstruct_generator(model: &LaserModel, which: Which, precision: Option<Precision>) -> Result<Reconstruction> {
    let dim = model.dim;
    let precision = precision.unwrap_or_else(|| Precision::default_for(dim));
    let sys = solve_vandermonde(dim, &generator_rhs(model, which), Some(precision))?;
    let residual = match precision {
        Precision::Double => reconstruct_generic::<f64>(model, which).1,
        Precision::Extended => reconstruct_generic::<DoubleDouble>(model, which).1,
    };
    Ok(Reconstruction {
        dim,
        which,
        precision,
        coefficients: sys.solution,
        residual,
        solve_residual: sys.residual,
        solution_norm: sys.solution_norm,
    })
}

/// The synthesized generator as an `f64` matrix (rounded from the working
/// precision).
pub fn reconstructed_generator(model: &LaserModel, which: Which, precision: Option<Precision>) -> DMatrix<f64> {
    let dim = model.dim;
    let precision = precision.unwrap_or_else(|| Precision::default_for(dim));
    let to_dm = |get: &dyn Fn(usize, usize) -> f64| DMatrix::from_fn(2 * dim, 2 * dim, |i, j| get(i, j));
    match precision {
        Precision::Double => {
            let (v, _) = reconstruct_generic::<f64>(model, which);
            let m = synthesize(dim, &v, which);
            to_dm(&|i, j| m.get(i, j))
        }
        Precision::Extended => {
            let (v, _) = reconstruct_generic::<DoubleDouble>(model, which);
            let m = synthesize(dim, &v, which);
            to_dm(&|i, j| m.get(i, j).to_f64())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_double_arithmetic() {
        let third = DoubleDouble::new(1.0) / DoubleDouble::new(3.0);
        let back = third * DoubleDouble::new(3.0) - DoubleDouble::new(1.0);
        assert!(back.to_f64().abs() < 1e-31);
        let r2 = DoubleDouble::new(2.0).sqrt();
        assert!((r2 * r2 - DoubleDouble::new(2.0)).to_f64().abs() < 1e-31);
        // 1 + 1e-20 survives in the low word
        let x = DoubleDouble::new(1.0) + DoubleDouble::new(1e-20);
        assert_eq!(x.hi, 1.0);
        assert!((x.lo - 1e-20).abs() < 1e-36);
    }

    #[test]
    fn bjorck_pereyra_interpolates() {
        let x = [1.0, 2.0, 4.0];
        // p(t) = 1 − 2t + 3t²
        let b: Vec<f64> = x.iter().map(|t| 1.0 - 2.0 * t + 3.0 * t * t).collect();
        let c = bjorck_pereyra(&x, &b);
        for (got, want) in c.iter().zip([1.0, -2.0, 3.0]) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    #[test]
    fn small_systems() {
        let v = solve_vandermonde(2, &[1.0], None).unwrap();
        assert!((v.solution[0] - 1.0).abs() < 1e-15);
        let v = solve_vandermonde(3, &[1.0, 1.0], None).unwrap();
        assert!((v.solution[0] - 1.6464).abs() < 1e-4 && (v.solution[1] + 0.6464).abs() < 1e-4);
        assert!(solve_vandermonde(3, &[1.0], None).unwrap_err().is_validation());
    }

    #[test]
    fn precision_parses() {
        assert_eq!("extended".parse::<Precision>().unwrap(), Precision::Extended);
        assert!("quad".parse::<Precision>().is_err());
    }
}
