//! Matrix-free Krylov methods: exponential action and GMRES.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::superop::{dot, norm2};

/// A square real operator known only through its action.
pub trait LinearOperator {
    fn len(&self) -> usize;

    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// Any upper estimate of a matrix norm; sets step-size scales.
    fn norm_estimate(&self) -> f64;
}

/// Knobs of [`expm_action`].
#[derive(Debug, Clone, Copy)]
pub struct ExpmOptions {
    /// Starting Krylov dimension.
    pub krylov_dim: usize,
    /// The Krylov dimension doubles up to this cap when stepping stagnates.
    pub max_krylov_dim: usize,
    /// Hard cap on accepted substeps.
    pub max_steps: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        ExpmOptions {
            krylov_dim: 30,
            max_krylov_dim: 256,
            max_steps: 20_000,
        }
    }
}

/// Orthonormal Krylov basis with its Hessenberg projection.
struct Arnoldi {
    basis: Vec<Vec<f64>>,
    hess: DMatrix<f64>,
    /// Dimension actually built.
    size: usize,
    /// `h_{m+1,m}`; zero (up to tolerance) on happy breakdown.
    tail: f64,
    breakdown: bool,
}

fn arnoldi<A: LinearOperator + ?Sized>(op: &A, start: &[f64], beta: f64, m: usize, btol: f64) -> Arnoldi {
    let n = op.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(start.iter().map(|x| x / beta).collect());
    let mut hess = DMatrix::zeros(m + 1, m);
    let mut w = vec![0.0; n];
    for j in 0..m {
        op.apply_into(&basis[j], &mut w);
        // modified Gram-Schmidt with one reorthogonalization pass
        for _pass in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let h = dot(&w, b);
                hess[(i, j)] += h;
                for (wk, bk) in w.iter_mut().zip(b) {
                    *wk -= h * bk;
                }
            }
        }
        let h = norm2(&w);
        hess[(j + 1, j)] = h;
        if h <= btol {
            let size = j + 1;
            return Arnoldi {
                basis,
                hess: hess.view((0, 0), (size, size)).into_owned(),
                size,
                tail: h,
                breakdown: true,
            };
        }
        basis.push(w.iter().map(|x| x / h).collect());
    }
    let tail = hess[(m, m - 1)];
    Arnoldi {
        hess: hess.view((0, 0), (m, m)).into_owned(),
        basis,
        size: m,
        tail,
        breakdown: false,
    }
}

fn combine(basis: &[Vec<f64>], coeffs: &[f64], scale: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (b, &c) in basis.iter().zip(coeffs) {
        let c = c * scale;
        if c == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(b) {
            *o += c * x;
        }
    }
    out
}

/// `e^{tA} v` to relative accuracy `tol`.
///
/// Arnoldi projection with Expokit-style local error control. When the
/// Krylov space becomes invariant the projected exponential is exact and
/// the remaining time is covered in one step.
pub fn expm_action<A: LinearOperator + ?Sized>(
    op: &A,
    v: &[f64],
    t: f64,
    tol: f64,
    opts: ExpmOptions,
) -> Result<Vec<f64>> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::validation(format!("propagation time must be finite and nonnegative, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tolerance must be positive"));
    }
    let n = op.len();
    let mut w = v.to_vec();
    if t == 0.0 {
        return Ok(w);
    }
    let anorm = op.norm_estimate().max(f64::MIN_POSITIVE);
    let btol = 1e-12 * anorm;
    let mut m = opts.krylov_dim.min(n).max(1);
    let max_m = opts.max_krylov_dim.min(n).max(m);
    let gamma = 0.9;
    let delta = 1.2;

    let mut t_now = 0.0;
    let mut beta = norm2(&w);
    if beta == 0.0 {
        return Ok(w);
    }
    let xm = 1.0 / m as f64;
    let fact = ((m as f64 + 1.0) / std::f64::consts::E).powf(m as f64 + 1.0)
        * (2.0 * std::f64::consts::PI * (m as f64 + 1.0)).sqrt();
    let mut t_step = ((1.0 / anorm) * ((fact * tol) / (4.0 * anorm)).powf(xm)).min(t);
    if !t_step.is_finite() || t_step <= 0.0 {
        t_step = t;
    }
    let mut steps = 0usize;
    let mut since_growth = 0usize;
    let mut last_err = 0.0;

    while t_now < t {
        steps += 1;
        since_growth += 1;
        if steps > opts.max_steps {
            return Err(Error::numerical(
                format!("Krylov exponential exceeded {} substeps at t = {t_now:.3e} of {t:.3e}", opts.max_steps),
                last_err,
            ));
        }
        // stagnation: many small steps relative to the horizon, so widen the space
        if since_growth > 40 && m < max_m && (t - t_now) > 40.0 * t_step {
            m = (2 * m).min(max_m);
            since_growth = 0;
        }
        let kr = arnoldi(op, &w, beta, m, btol);
        let mut tau = (t - t_now).min(t_step);
        if kr.breakdown {
            tau = t - t_now;
        }
        let size = kr.size;
        let avnorm = if kr.breakdown {
            0.0
        } else {
            let mut av = vec![0.0; n];
            op.apply_into(&kr.basis[size], &mut av);
            norm2(&av)
        };
        let mut rejections = 0;
        let (coeffs, err_loc) = loop {
            // augmented Hessenberg for the error estimate
            let aug = size + 2;
            let mut hbar = DMatrix::zeros(aug, aug);
            hbar.view_mut((0, 0), (size, size)).copy_from(&kr.hess);
            if !kr.breakdown {
                hbar[(size, size - 1)] = kr.tail;
                hbar[(size + 1, size)] = 1.0;
            }
            let f = (hbar * tau).exp();
            let coeffs: Vec<f64> = if kr.breakdown {
                (0..size).map(|i| f[(i, 0)]).collect()
            } else {
                (0..=size).map(|i| f[(i, 0)]).collect()
            };
            let err = if kr.breakdown {
                0.0
            } else {
                let p1 = (f[(size, 0)] * beta).abs();
                let p2 = (f[(size + 1, 0)] * beta * avnorm).abs();
                if p1 > 10.0 * p2 {
                    p2
                } else if p1 > p2 {
                    p1 * p2 / (p1 - p2)
                } else {
                    p1
                }
            };
            let budget = delta * (tau / t) * tol * beta;
            if err <= budget || rejections >= 12 {
                if err > budget {
                    // stagnation on a single step: try a larger space once more
                    if m < max_m {
                        m = (2 * m).min(max_m);
                        since_growth = 0;
                    } else {
                        return Err(Error::numerical(
                            "Krylov exponential step rejected repeatedly",
                            err / beta,
                        ));
                    }
                    break (None, err);
                }
                break (Some(coeffs), err);
            }
            tau = gamma * tau * (tau * tol * beta / err).powf(xm);
            let s = 10f64.powf(tau.log10().floor() - 1.0);
            tau = (tau / s).ceil() * s;
            rejections += 1;
        };
        last_err = err_loc / beta;
        let Some(coeffs) = coeffs else {
            continue;
        };
        w = combine(&kr.basis, &coeffs, beta, n);
        t_now += tau;
        beta = norm2(&w);
        if beta == 0.0 {
            break;
        }
        if kr.breakdown {
            break;
        }
        let err_safe = err_loc.max(f64::MIN_POSITIVE);
        t_step = gamma * tau * (tau * tol * beta / err_safe).powf(xm);
        let s = 10f64.powf(t_step.log10().floor() - 1.0);
        t_step = (t_step / s).ceil() * s;
        if !t_step.is_finite() {
            t_step = t - t_now;
        }
    }
    Ok(w)
}

/// Repeated propagation of one starting vector to many times.
///
/// When the Krylov space of the start vector closes (happy breakdown within
/// `max_dim`) the projection is exact for every `t` and each evaluation costs
/// only a small dense exponential. Otherwise it falls back to
/// [`expm_action`] per call.
pub struct KrylovPropagator<'a, A: LinearOperator + ?Sized> {
    op: &'a A,
    start: Vec<f64>,
    beta: f64,
    exact: Option<(Vec<Vec<f64>>, DMatrix<f64>)>,
    tol: f64,
    opts: ExpmOptions,
}

impl<'a, A: LinearOperator + ?Sized> KrylovPropagator<'a, A> {
    pub fn new(op: &'a A, start: &[f64], tol: f64, max_dim: usize) -> Self {
        let beta = norm2(start);
        let mut exact = None;
        if beta > 0.0 {
            let m = max_dim.min(op.len()).max(1);
            let kr = arnoldi(op, start, beta, m, 1e-12 * op.norm_estimate().max(f64::MIN_POSITIVE));
            if kr.breakdown || kr.size == op.len() {
                let mut basis = kr.basis;
                basis.truncate(kr.size);
                exact = Some((basis, kr.hess));
            }
        }
        KrylovPropagator {
            op,
            start: start.to_vec(),
            beta,
            exact,
            tol,
            opts: ExpmOptions::default(),
        }
    }

    /// Whether the Krylov space closed and evaluations are exact.
    pub fn is_exact(&self) -> bool {
        self.exact.is_some() || self.beta == 0.0
    }

    /// `e^{tA} v`.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        if self.beta == 0.0 {
            return Ok(self.start.clone());
        }
        match &self.exact {
            Some((basis, h)) => {
                let e = (h * t).exp();
                let coeffs: Vec<f64> = e.column(0).iter().copied().collect();
                Ok(combine(basis, &coeffs, self.beta, self.op.len()))
            }
            None => expm_action(self.op, &self.start, t, self.tol, self.opts),
        }
    }

    /// `⟨c, e^{tA} v⟩` without forming the full vector when exact.
    pub fn functional(&self, c: &[f64], t: f64) -> Result<f64> {
        if self.beta == 0.0 {
            return Ok(0.0);
        }
        match &self.exact {
            Some((basis, h)) => {
                let e = (h * t).exp();
                Ok(basis
                    .iter()
                    .enumerate()
                    .map(|(i, b)| e[(i, 0)] * dot(c, b))
                    .sum::<f64>()
                    * self.beta)
            }
            None => Ok(dot(c, &self.at(t)?)),
        }
    }

    /// Projections `⟨c, V_i⟩` for repeated cheap functionals.
    pub fn projected_functional(&self, c: &[f64]) -> Option<ProjectedFunctional> {
        let (basis, h) = self.exact.as_ref()?;
        Some(ProjectedFunctional {
            weights: DVector::from_iterator(basis.len(), basis.iter().map(|b| dot(c, b) * self.beta)),
            hess: h.clone(),
        })
    }
}

/// `t ↦ ⟨c, e^{tA} v⟩` restricted to an exact Krylov space.
pub struct ProjectedFunctional {
    weights: DVector<f64>,
    hess: DMatrix<f64>,
}

impl ProjectedFunctional {
    /// The projected operator (exactly similar to the restricted one).
    pub fn hessenberg(&self) -> &DMatrix<f64> {
        &self.hess
    }

    pub fn at(&self, t: f64) -> f64 {
        let e = (&self.hess * t).exp();
        self.weights.dot(&e.column(0))
    }

    /// Values at ascending `times`, stepping the small state forward so
    /// that long horizons never need one huge exponential.
    pub fn sample_ascending(&self, times: &[f64]) -> Vec<f64> {
        let k = self.weights.len();
        let mut state = DVector::zeros(k);
        state[0] = 1.0;
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            assert!(t >= now, "sample times must be ascending");
            if t > now {
                state = (&self.hess * (t - now)).exp() * state;
                now = t;
            }
            out.push(self.weights.dot(&state));
        }
        out
    }
}

/// Knobs of [`gmres`].
#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_restarts: usize,
    /// Relative residual target `‖b − Ax‖ ≤ tol ‖b‖`.
    pub tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            restart: 320,
            max_restarts: 20,
            tol: 1e-10,
        }
    }
}

/// Outcome of a converged [`gmres`] run.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Restarted GMRES with optional right (Jacobi) preconditioning by
/// `inv_diag`.
pub fn gmres<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    inv_diag: Option<&[f64]>,
    opts: GmresOptions,
) -> Result<GmresOutcome> {
    let n = op.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let precond = |v: &[f64]| -> Vec<f64> {
        match inv_diag {
            Some(d) => v.iter().zip(d).map(|(a, b)| a * b).collect(),
            None => v.to_vec(),
        }
    };
    let m = opts.restart.min(n).max(1);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut iterations = 0;
    let mut tmp = vec![0.0; n];
    let mut rel = 1.0;
    let mut previous = f64::INFINITY;
    for _cycle in 0..=opts.max_restarts {
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= opts.tol {
            return Ok(GmresOutcome {
                x,
                iterations,
                relative_residual: rel,
            });
        }
        // a cycle that does not halve the residual has hit the rounding floor
        if rel > 0.5 * previous {
            break;
        }
        previous = rel;
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for j in 0..m {
            iterations += 1;
            let z = precond(&basis[j]);
            op.apply_into(&z, &mut tmp);
            let mut w = tmp.clone();
            for _pass in 0..2 {
                for (i, bv) in basis.iter().enumerate() {
                    let hij = dot(&w, bv);
                    h[(i, j)] += hij;
                    for (wk, bk) in w.iter_mut().zip(bv) {
                        *wk -= hij * bk;
                    }
                }
            }
            let hn = norm2(&w);
            h[(j + 1, j)] = hn;
            for i in 0..j {
                let a = h[(i, j)];
                let c = h[(i + 1, j)];
                h[(i, j)] = cs[i] * a + sn[i] * c;
                h[(i + 1, j)] = -sn[i] * a + cs[i] * c;
            }
            let a = h[(j, j)];
            let c = h[(j + 1, j)];
            let denom = a.hypot(c);
            cs[j] = if denom == 0.0 { 1.0 } else { a / denom };
            sn[j] = if denom == 0.0 { 0.0 } else { c / denom };
            h[(j, j)] = denom;
            h[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k_used = j + 1;
            let est = g[j + 1].abs() / bnorm;
            if est <= 0.1 * opts.tol || hn <= 1e-14 * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution for the k_used-dimensional least squares
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for k in i + 1..k_used {
                s -= h[(i, k)] * y[k];
            }
            y[i] = if h[(i, i)] != 0.0 { s / h[(i, i)] } else { 0.0 };
        }
        let update = combine(&basis, &y, 1.0, n);
        let dz = precond(&update);
        for (xi, d) in x.iter_mut().zip(&dz) {
            *xi += d;
        }
        op.apply_into(&x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
    }
    let beta = norm2(&r);
    rel = rel.min(beta / bnorm);
    if rel <= opts.tol {
        return Ok(GmresOutcome {
            x,
            iterations,
            relative_residual: rel,
        });
    }
    Err(Error::numerical(
        format!("GMRES did not converge in {iterations} iterations"),
        rel,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    struct Dense(DMatrix<f64>);

    impl LinearOperator for Dense {
        fn len(&self) -> usize {
            self.0.nrows()
        }
        fn apply_into(&self, x: &[f64], y: &mut [f64]) {
            let v = &self.0 * DVector::from_column_slice(x);
            y.copy_from_slice(v.as_slice());
        }
        fn norm_estimate(&self) -> f64 {
            self.0.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        }
    }

    fn test_matrix(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                -2.0 - (r as f64) * 0.3
            } else {
                ((r * 31 + c * 17) % 13) as f64 / 40.0 - 0.15
            }
        })
    }

    #[test]
    fn zero_time_is_identity() {
        let a = Dense(test_matrix(6));
        let v: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        assert_eq!(expm_action(&a, &v, 0.0, 1e-10, ExpmOptions::default()).unwrap(), v);
    }

    #[test]
    fn matches_dense_exponential_small_dim() {
        let a = Dense(test_matrix(40));
        let v: Vec<f64> = (0..40).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let opts = ExpmOptions { krylov_dim: 8, max_krylov_dim: 16, max_steps: 10_000 };
        for t in [0.01, 0.7, 3.0] {
            let w = expm_action(&a, &v, t, 1e-11, opts).unwrap();
            let exact = (&a.0 * t).exp() * DVector::from_column_slice(&v);
            let err = w.iter().zip(exact.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9 * exact.amax().max(1e-300), "t={t} err={err}");
        }
    }

    #[test]
    fn rejects_negative_time() {
        let a = Dense(test_matrix(3));
        assert!(expm_action(&a, &[1.0, 0.0, 0.0], -1.0, 1e-8, ExpmOptions::default()).is_err());
    }

    #[test]
    fn gmres_solves_nonsymmetric() {
        let a = Dense(test_matrix(50));
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; 50];
        a.apply_into(&xs, &mut b);
        let out = gmres(&a, &b, None, GmresOptions { restart: 10, max_restarts: 200, tol: 1e-12 }).unwrap();
        let err = out.x.iter().zip(&xs).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "err={err}");
    }

    #[test]
    fn propagator_exact_on_small_space() {
        let a = Dense(test_matrix(12));
        let v: Vec<f64> = (0..12).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let p = KrylovPropagator::new(&a, &v, 1e-12, 12);
        assert!(p.is_exact());
        let w = p.at(2.5).unwrap();
        let exact = (&a.0 * 2.5).exp() * DVector::from_column_slice(&v);
        for (p, q) in w.iter().zip(exact.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
