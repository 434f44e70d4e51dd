//! Beam coherence `𝔠`, its quadrature cross-check, D-sweeps and the
//! direct maximization over loss profiles.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{forward_closure, support, SubMatrix};
use crate::error::{Error, Result};
use crate::krylov::KrylovPropagator;
use crate::model::{build_model, custom_model, LaserModel};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::solve::{solve_projected_with, SolveMethod};
use crate::superop::{build_liouvillian, dot, index, FlatSuperoperator, FlatVector, Projector};

/// Default relative tolerance of the projected solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// `vec(L̂ ρss) = (I⊗L̂)|1)`.
pub fn jump_steady(model: &LaserModel) -> FlatVector {
    let d = model.dim;
    let mut v = FlatVector::zeros(d);
    for m in 1..d {
        v.data[index(d, m - 1, m)] = model.l(m) * model.steady[m];
    }
    v
}

/// `(1|(L̂⊗I) x = Tr(L̂† X)`.
pub fn loss_trace(model: &LaserModel, x: &[f64]) -> f64 {
    let d = model.dim;
    (1..d).map(|m| model.l(m) * x[index(d, m - 1, m)]).sum()
}

/// Coherence with solver diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct CoherenceReport {
    pub dim: usize,
    pub coherence: f64,
    pub method: SolveMethod,
    pub residual: f64,
    pub iterations: usize,
}

/// `𝔠 = −2 (1|(L̂⊗I) (Q𝓛Q)⁺ (I⊗L̂)|1)`; stores `ℓ = 4N/𝔠` in the model.
pub fn coherence(model: &mut LaserModel) -> Result<f64> {
    let rep = coherence_report(model, None, SOLVE_TOL)?;
    model.linewidth = Some(4.0 * model.flux / rep.coherence);
    Ok(rep.coherence)
}

/// [`coherence`] with an explicit route and tolerance.
pub fn coherence_report(model: &LaserModel, method: Option<SolveMethod>, tol: f64) -> Result<CoherenceReport> {
    let l = build_liouvillian(model);
    coherence_with(model, &l, method, tol)
}

pub(crate) fn coherence_with(
    model: &LaserModel,
    l: &FlatSuperoperator,
    method: Option<SolveMethod>,
    tol: f64,
) -> Result<CoherenceReport> {
    let proj = Projector::new(model);
    let rhs = jump_steady(model);
    let sol = solve_projected_with(l, &proj, &rhs, tol, method)?;
    let c = -2.0 * loss_trace(model, &sol.x.data);
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::numerical(
            format!("coherence came out nonpositive ({c:.6e}); solver breakdown"),
            sol.residual,
        ));
    }
    Ok(CoherenceReport {
        dim: model.dim,
        coherence: c,
        method: sol.method,
        residual: sol.residual,
        iterations: sol.iterations,
    })
}

/// `G¹(s) = Tr[L̂† e^{𝓛s}(L̂ρss)]` as an exact Krylov functional.
///
/// The Krylov space of `(I⊗L̂)|1)` is the charge-one sector, so the
/// projection closes after at most `D−1` steps.
pub struct FirstOrderCorrelator {
    functional: crate::krylov::ProjectedFunctional,
    flux: f64,
}

impl FirstOrderCorrelator {
    pub fn new(model: &LaserModel, l: &FlatSuperoperator) -> Result<Self> {
        let start = jump_steady(model);
        let idx = forward_closure(l, &support(&start.data));
        let sub = SubMatrix::extract(l, &idx);
        let mut probe = vec![0.0; start.data.len()];
        let d = model.dim;
        for m in 1..d {
            probe[index(d, m - 1, m)] = model.l(m);
        }
        let prop = KrylovPropagator::new(&sub, &sub.gather(&start.data), 1e-13, idx.len());
        let functional = prop.projected_functional(&sub.gather(&probe)).ok_or_else(|| {
            Error::numerical("Krylov space of the first-order correlator did not close", f64::NAN)
        })?;
        Ok(FirstOrderCorrelator {
            functional,
            flux: model.flux,
        })
    }

    /// Unnormalized `G¹` at ascending times.
    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        self.functional.sample_ascending(times)
    }

    /// `g¹ = G¹/N` at ascending times.
    pub fn sample_normalized(&self, times: &[f64]) -> Vec<f64> {
        self.sample(times).into_iter().map(|g| g / self.flux).collect()
    }
}

/// Outcome of the time-integral oracle.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureReport {
    pub coherence: f64,
    /// `2∫₀^T G¹`.
    pub integral: f64,
    /// `2∫_T^∞` of the fitted exponential.
    pub tail: f64,
    /// Fitted decay rate of the tail (ideal value `ℓ/2`).
    pub tail_rate: f64,
    /// Relative rms misfit of the single-exponential tail model.
    pub tail_fit_residual: f64,
    /// Linewidth used to set the horizon.
    pub linewidth: f64,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Slowest decay rate of `G¹`, from the spectrum of the charge-one sector.
pub fn estimate_linewidth(model: &LaserModel) -> Result<f64> {
    let l = build_liouvillian(model);
    let corr = FirstOrderCorrelator::new(model, &l)?;
    let eig = corr.functional.hessenberg().clone().complex_eigenvalues();
    let slowest = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !(slowest < 0.0) {
        return Err(Error::numerical("charge-one sector has no decaying mode", slowest));
    }
    Ok(-2.0 * slowest)
}

/// `𝔠 = 2∫₀^∞ G¹(s) ds` by panelled Gauss–Legendre up to `T = horizon/ℓ`
/// plus an exponential tail fitted on the last tenth of the horizon.
pub fn coherence_quadrature(model: &LaserModel, horizon: f64) -> Result<QuadratureReport> {
    if !(horizon >= 1.0) || !horizon.is_finite() {
        return Err(Error::validation(format!("horizon must be at least 1 linewidth time, got {horizon}")));
    }
    let linewidth = match model.linewidth {
        Some(lw) => lw,
        None => estimate_linewidth(model)?,
    };
    let l = build_liouvillian(model);
    let corr = FirstOrderCorrelator::new(model, &l)?;
    let t_end = horizon / linewidth;
    let (gx, gw) = gauss_legendre(16);

    // geometric panels resolve the O(1) transient and the slow decay alike
    let mut edges = vec![0.0];
    let mut h = 1e-2f64.min(t_end);
    let max_width = 0.5 / linewidth;
    while *edges.last().unwrap() < t_end {
        let a = *edges.last().unwrap();
        let b = (a + h).min(t_end);
        edges.push(b);
        h = (h * 1.3).min(max_width);
    }
    let mut nodes = Vec::with_capacity(16 * edges.len());
    let mut weights = Vec::with_capacity(16 * edges.len());
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(a + half * (x + 1.0));
            weights.push(half * w);
        }
    }
    let values = corr.sample(&nodes);
    let integral = 2.0 * dot(&values, &weights);

    // tail fit on [0.9 T, T]
    let fit_times: Vec<f64> = (0..=20).map(|k| t_end * (0.9 + 0.1 * k as f64 / 20.0)).collect();
    let fit_vals = corr.sample(&fit_times);
    if fit_vals.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::numerical("first-order correlator not positive on the tail window", f64::NAN));
    }
    let logs: Vec<f64> = fit_vals.iter().map(|g| g.ln()).collect();
    let (slope, intercept) = linear_fit(&fit_times, &logs);
    let rate = -slope;
    let misfit = (fit_times
        .iter()
        .zip(&fit_vals)
        .map(|(t, g)| {
            let pred = (intercept + slope * t).exp();
            ((pred - g) / g).powi(2)
        })
        .sum::<f64>()
        / fit_times.len() as f64)
        .sqrt();
    if !(rate > 0.0) || misfit > 0.01 {
        return Err(Error::numerical(
            format!("tail fit failed (rate {rate:.3e}, relative misfit {misfit:.3e})"),
            misfit,
        ));
    }
    let tail = 2.0 * (intercept + slope * t_end).exp() / rate;
    Ok(QuadratureReport {
        coherence: integral + tail,
        integral,
        tail,
        tail_rate: rate,
        tail_fit_residual: misfit,
        linewidth,
    })
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Abscissa of the log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitAxis {
    /// `ln 𝔠` against `ln D`.
    Dim,
    /// `ln 𝔠` against `ln μ`.
    Mu,
}

/// Power-law fit `𝔠 ≈ coefficient · x^exponent` with `x` the chosen axis.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub rms_log_residual: f64,
    /// `[μ_min, μ_max]`; `null` marks an open end.
    pub window: (Option<f64>, Option<f64>),
    pub axis: FitAxis,
    /// Exponent of the same points regressed on the other axis.
    pub other_axis_exponent: Option<f64>,
    /// `exp(mean(ln 𝔠 − 4 ln μ))`, the prefactor at fixed exponent four.
    pub mu4_coefficient: Option<f64>,
    /// `(μ, 𝔠)` pairs used.
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serialization cannot fail")
    }
}

fn regress(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) = linear_fit(&lx, &ly);
    let rms = (lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / lx.len() as f64)
        .sqrt();
    (slope, intercept.exp(), rms)
}

fn open_end(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Log-log least squares on raw `(x, y)` points with `x` inside the window.
pub fn fit_power_law(points: &[(f64, f64)], window: (f64, f64)) -> Result<ScalingFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(x, y)| x >= window.0 && x <= window.1 && x > 0.0 && y > 0.0)
        .collect();
    if used.len() < 2 {
        return Err(Error::validation(format!(
            "power-law fit needs at least 2 points in the window, found {}",
            used.len()
        )));
    }
    let (exponent, coefficient, rms_log_residual) = regress(&used);
    Ok(ScalingFit {
        exponent,
        coefficient,
        rms_log_residual,
        window: (open_end(window.0), open_end(window.1)),
        axis: FitAxis::Mu,
        other_axis_exponent: None,
        mu4_coefficient: None,
        points: used,
    })
}

/// Scaling fit of sweep rows whose `μ` lies inside `window`.
pub fn fit_scaling(rows: &[SweepRow], window: (f64, f64), axis: FitAxis) -> Result<ScalingFit> {
    let used: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.mu >= window.0 && r.mu <= window.1 && r.coherence > 0.0)
        .collect();
    if used.len() < 2 {
        return Err(Error::validation(format!(
            "scaling fit needs at least 2 points in the window, found {}",
            used.len()
        )));
    }
    let by_dim: Vec<(f64, f64)> = used.iter().map(|r| (r.dim as f64, r.coherence)).collect();
    let by_mu: Vec<(f64, f64)> = used.iter().map(|r| (r.mu, r.coherence)).collect();
    let (main, other) = match axis {
        FitAxis::Dim => (regress(&by_dim), regress(&by_mu)),
        FitAxis::Mu => (regress(&by_mu), regress(&by_dim)),
    };
    let mean_log = by_mu.iter().map(|(mu, c)| c.ln() - 4.0 * mu.ln()).sum::<f64>() / by_mu.len() as f64;
    Ok(ScalingFit {
        exponent: main.0,
        coefficient: main.1,
        rms_log_residual: main.2,
        window: (open_end(window.0), open_end(window.1)),
        axis,
        other_axis_exponent: Some(other.0),
        mu4_coefficient: Some(mean_log.exp()),
        points: by_mu,
    })
}

/// One row of a D-sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub dim: usize,
    pub mu: f64,
    pub coherence: f64,
    pub flux: f64,
    pub linewidth: f64,
    pub seconds: f64,
}

pub const SWEEP_CSV_HEADER: &str = "dim,mu,coherence,flux,linewidth,seconds";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.12e},{:.15},{:.12e},{:.3}",
            self.dim, self.mu, self.coherence, self.flux, self.linewidth, self.seconds
        )
    }
}

/// Coherence of the sin⁴ family for each `D`, computed in parallel.
pub fn sweep(dims: &[usize]) -> Result<Vec<SweepRow>> {
    dims.par_iter()
        .map(|&d| {
            let start = Instant::now();
            let mut m = build_model(d)?;
            let c = coherence(&mut m)?;
            Ok(SweepRow {
                dim: d,
                mu: m.mu,
                coherence: c,
                flux: m.flux,
                linewidth: m.linewidth.unwrap_or(f64::NAN),
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Sweep then fit on the points with `μ` inside `window`; at least four
/// points must fall inside.
pub fn sweep_and_fit(dims: &[usize], window: (f64, f64), axis: FitAxis) -> Result<(Vec<SweepRow>, ScalingFit)> {
    let inside = dims
        .iter()
        .filter(|&&d| {
            let mu = (d as f64 - 1.0) / 2.0;
            d >= 2 && mu >= window.0 && mu <= window.1
        })
        .count();
    if inside < 4 {
        return Err(Error::validation(format!(
            "need at least 4 dimensions with mu inside the fit window, got {inside}"
        )));
    }
    let rows = sweep(dims)?;
    let fit = fit_scaling(&rows, window, axis)?;
    Ok((rows, fit))
}

/// Result of [`optimize_loss_profile`].
#[derive(Debug, Clone, Serialize)]
pub struct OptimizedProfile {
    pub model: LaserModel,
    pub coherence: f64,
    /// `(Σ√ρ√ρ_ansatz)²` against the sin⁴ family.
    pub fidelity: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// `(Σ√p√q)²` for two probability vectors.
pub fn fidelity(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    s * s
}

/// Largest `D` accepted by [`optimize_loss_profile`].
pub const OPTIMIZE_MAX_DIM: usize = 60;

/// Maximizes `𝔠` over positive loss profiles with unit gain.
///
/// Nelder–Mead on `ln L_n`, minimizing `−ln 𝔠`. `initial` defaults to the
/// uniform profile `L_n = 1`.
pub fn optimize_loss_profile(
    dim: usize,
    budget: usize,
    initial: Option<&[f64]>,
    seed: u64,
) -> Result<OptimizedProfile> {
    if dim < 2 || dim > OPTIMIZE_MAX_DIM {
        return Err(Error::validation(format!(
            "profile optimization supports 2 <= dim <= {OPTIMIZE_MAX_DIM}, got {dim}"
        )));
    }
    if budget == 0 {
        return Err(Error::validation("optimization budget must be at least 1"));
    }
    let x0: Vec<f64> = match initial {
        Some(l) if l.len() == dim - 1 => {
            custom_model(l)?;
            l.iter().map(|v| v.ln()).collect()
        }
        Some(l) => {
            return Err(Error::validation(format!(
                "initial loss profile has length {}, expected {}",
                l.len(),
                dim - 1
            )))
        }
        None => vec![0.0; dim - 1],
    };
    let objective = |x: &[f64]| -> f64 {
        let loss: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        match custom_model(&loss).and_then(|m| coherence_report(&m, Some(SolveMethod::BlockLu), SOLVE_TOL)) {
            Ok(r) => -r.coherence.ln(),
            Err(_) => f64::INFINITY,
        }
    };
    let lo = vec![-12.0; dim - 1];
    let hi = vec![12.0; dim - 1];
    let opts = NelderMeadOptions {
        max_evals: budget,
        f_tol: 1e-13,
        x_tol: 1e-9,
        step: 0.25,
        restarts: 3,
        seed,
    };
    let res = nelder_mead(objective, &x0, &lo, &hi, &opts);
    let loss: Vec<f64> = res.x.iter().map(|v| v.exp()).collect();
    let mut model = custom_model(&loss)?;
    let c = coherence(&mut model)?;
    let ansatz = build_model(dim)?;
    Ok(OptimizedProfile {
        fidelity: fidelity(&model.steady, &ansatz.steady),
        model,
        coherence: c,
        evaluations: res.evals,
        converged: res.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
        let (x1, w1) = gauss_legendre(1);
        assert_eq!((x1[0], w1[0]), (0.0, 2.0));
    }

    #[test]
    fn synthetic_power_law() {
        let fit = fit_power_law(&[(4.0, 16.0), (8.0, 256.0)], (0.0, f64::INFINITY)).unwrap();
        assert!((fit.exponent - 4.0).abs() < 1e-12);
        assert!((fit.coefficient - 1.0 / 16.0).abs() < 1e-12);
        assert!(fit.rms_log_residual < 1e-12);
    }

    #[test]
    fn sweep_needs_four_points() {
        assert!(sweep_and_fit(&[101, 151, 201], (50.0, f64::INFINITY), FitAxis::Dim)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn coherence_sets_linewidth() {
        let mut m = build_model(5).unwrap();
        let c = coherence(&mut m).unwrap();
        assert!((m.linewidth.unwrap() - 4.0 * m.flux / c).abs() < 1e-15);
    }

    #[test]
    fn fit_json_keys() {
        let fit = fit_power_law(&[(4.0, 16.0), (8.0, 256.0)], (1.0, f64::INFINITY)).unwrap();
        let js = fit.to_json();
        for k in ["exponent", "coefficient", "rms_log_residual", "window"] {
            assert!(js.contains(&format!("\"{k}\"")));
        }
        assert!(js.contains("null"));
    }
}
