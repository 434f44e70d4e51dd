//! Projected linear solves `(Q𝓛Q) x = b` with `(1|x) = 0`.

use serde::Serialize;

use crate::blocks::{block_lu_solve, forward_closure, support, Components, SubMatrix};
use crate::error::{Error, Result};
use crate::krylov::{gmres, GmresOptions, LinearOperator};
use crate::model::LaserModel;
use crate::superop::{build_liouvillian, dot, norm2, FlatSuperoperator, FlatVector, Projector};

/// Which route produced a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Jacobi-preconditioned GMRES on `Q𝓛Q`.
    Gmres,
    /// Dense LU of the touched blocks of `𝓛 + εI`, then projection.
    BlockLu,
}

/// Solution together with how it was obtained.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: FlatVector,
    pub method: SolveMethod,
    /// `‖Q𝓛Qx − Qb‖₂ / ‖Qb‖₂`, evaluated on the full space.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the right-hand side had a noticeable `(1|b)` component.
    pub warning: Option<String>,
}

/// `Q𝓛Q` restricted to an index set closed under it.
struct RestrictedProjected {
    sub: SubMatrix,
    steady: Vec<f64>,
    trace: Vec<f64>,
    touches_diagonal: bool,
}

impl RestrictedProjected {
    fn project(&self, v: &mut [f64]) {
        if !self.touches_diagonal {
            return;
        }
        let tr = dot(&self.trace, v);
        if tr != 0.0 {
            for (x, s) in v.iter_mut().zip(&self.steady) {
                *x -= tr * s;
            }
        }
    }
}

impl LinearOperator for RestrictedProjected {
    fn len(&self) -> usize {
        self.sub.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let mut z = x.to_vec();
        self.project(&mut z);
        self.sub.apply_into(&z, y);
        self.project(y);
    }

    fn norm_estimate(&self) -> f64 {
        self.sub.norm_estimate()
    }
}

/// Smallest index set containing `supp(b)` that is invariant under `Q𝓛Q`.
fn projected_closure(l: &FlatSuperoperator, proj: &Projector, b: &[f64]) -> (Vec<usize>, bool) {
    let d = l.dim;
    let is_diag = |i: usize| i % d == i / d;
    let idx = forward_closure(l, &support(b));
    if !idx.iter().any(|&i| is_diag(i)) {
        return (idx, false);
    }
    let mut seeds = idx;
    seeds.extend(support(&proj.steady().data));
    seeds.sort_unstable();
    seeds.dedup();
    (forward_closure(l, &seeds), true)
}

fn full_residual(l: &FlatSuperoperator, proj: &Projector, x: &[f64], b: &[f64]) -> f64 {
    let mut z = x.to_vec();
    proj.project(&mut z);
    let mut y = vec![0.0; z.len()];
    l.matvec_into(&z, &mut y);
    proj.project(&mut y);
    let r: Vec<f64> = y.iter().zip(b).map(|(p, q)| p - q).collect();
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Solves `(Q𝓛Q) x = rhs` for the model's Liouvillian.
///
/// GMRES is tried first and the block-LU route is used if it fails.
pub fn solve_projected(model: &LaserModel, rhs: &FlatVector, tol: f64) -> Result<SolveReport> {
    let l = build_liouvillian(model);
    let proj = Projector::new(model);
    solve_projected_with(&l, &proj, rhs, tol, None)
}

/// [`solve_projected`] on a prebuilt operator; `method = None` means GMRES
/// with LU fallback.
pub fn solve_projected_with(
    l: &FlatSuperoperator,
    proj: &Projector,
    rhs: &FlatVector,
    tol: f64,
    method: Option<SolveMethod>,
) -> Result<SolveReport> {
    if !(tol > 0.0) {
        return Err(Error::validation("solver tolerance must be positive"));
    }
    if rhs.dim != l.dim {
        return Err(Error::validation(format!(
            "right-hand side has dimension {} but the operator has {}",
            rhs.dim, l.dim
        )));
    }
    let overlap = rhs.trace();
    let warning = (overlap.abs() > tol)
        .then(|| format!("right-hand side has (1|rhs) = {overlap:.3e}; projected before solving"));
    let mut b = rhs.data.clone();
    proj.project(&mut b);
    if b.iter().all(|&x| x == 0.0) {
        return Ok(SolveReport {
            x: FlatVector::zeros(l.dim),
            method: method.unwrap_or(SolveMethod::Gmres),
            residual: 0.0,
            iterations: 0,
            warning,
        });
    }
    let run = |m: SolveMethod| -> Result<SolveReport> {
        let (x, iterations) = match m {
            SolveMethod::Gmres => gmres_route(l, proj, &b, tol)?,
            SolveMethod::BlockLu => (lu_route(l, proj, &b)?, 0),
        };
        let residual = full_residual(l, proj, &x, &b);
        Ok(SolveReport {
            x: FlatVector::from_data(l.dim, x),
            method: m,
            residual,
            iterations,
            warning: warning.clone(),
        })
    };
    match method {
        Some(m) => run(m),
        None => match run(SolveMethod::Gmres) {
            Ok(rep) => Ok(rep),
            Err(e) if !e.is_validation() => run(SolveMethod::BlockLu),
            Err(e) => Err(e),
        },
    }
}

fn gmres_route(l: &FlatSuperoperator, proj: &Projector, b: &[f64], tol: f64) -> Result<(Vec<f64>, usize)> {
    let (idx, touches_diagonal) = projected_closure(l, proj, b);
    let sub = SubMatrix::extract(l, &idx);
    let d = l.dim;
    let trace: Vec<f64> = idx.iter().map(|&i| if i % d == i / d { 1.0 } else { 0.0 }).collect();
    let op = RestrictedProjected {
        steady: sub.gather(&proj.steady().data),
        trace,
        touches_diagonal,
        sub,
    };
    let inv_diag: Vec<f64> = op
        .sub
        .diagonal()
        .iter()
        .map(|&x| if x != 0.0 { 1.0 / x } else { 1.0 })
        .collect();
    let local_b = op.sub.gather(b);
    let n = op.len();
    let opts = GmresOptions {
        restart: n.min(400),
        max_restarts: 30,
        tol,
    };
    let out = gmres(&op, &local_b, Some(&inv_diag), opts)?;
    let mut x = out.x;
    op.project(&mut x);
    Ok((op.sub.scatter(&x, b.len()), out.iterations))
}

fn lu_route(l: &FlatSuperoperator, proj: &Projector, b: &[f64]) -> Result<Vec<f64>> {
    let eps = 1e-12 * l.max_abs();
    let comps = Components::of(l);
    let mut x = block_lu_solve(l, &comps, b, eps)?;
    proj.project(&mut x);
    // the shift perturbs slow modes by eps/|λ|; refine against the unshifted
    // operator, each sweep shrinking the error by that same factor
    let bn = norm2(b);
    for _ in 0..LU_REFINEMENT_SWEEPS {
        let mut y = vec![0.0; x.len()];
        l.matvec_into(&x, &mut y);
        proj.project(&mut y);
        let r: Vec<f64> = b.iter().zip(&y).map(|(p, q)| p - q).collect();
        if norm2(&r) <= 1e-15 * bn {
            break;
        }
        let mut dx = block_lu_solve(l, &comps, &r, eps)?;
        proj.project(&mut dx);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
    }
    Ok(x)
}

const LU_REFINEMENT_SWEEPS: usize = 4;
