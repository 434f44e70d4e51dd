//! Continuum-limit laser models.
//!
//! A model is a `D`-level cavity with a single-step gain operator
//! `Ĝ = Σ G_n |n⟩⟨n−1|` and loss operator `L̂ = Σ L_n |n−1⟩⟨n|`. The
//! steady state is diagonal and fixed by detailed balance,
//! `ρ_n = (G_n / L_n)² ρ_{n−1}`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cavity model together with its steady state and beam statistics.
///
/// `gain[n-1]` and `loss[n-1]` hold `G_n` and `L_n` for `n = 1..D-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserModel {
    pub dim: usize,
    pub gain: Vec<f64>,
    pub loss: Vec<f64>,
    pub steady: Vec<f64>,
    pub flux: f64,
    pub mu: f64,
    /// `4 N / C`, unknown until the coherence has been computed.
    pub linewidth: Option<f64>,
}

/// The sin⁴ model family: `ρ_n ∝ sin⁴(π(n+1)/(D+1))` with unit gain.
pub fn build_model(dim: usize) -> Result<LaserModel> {
    if dim < 2 {
        return Err(Error::validation(format!(
            "cavity dimension must be at least 2, got {dim}"
        )));
    }
    let w = PI / (dim as f64 + 1.0);
    let loss: Vec<f64> = (1..dim)
        .map(|n| {
            let num = (w * n as f64).sin();
            let den = (w * (n + 1) as f64).sin();
            (num * num) / (den * den)
        })
        .collect();
    let log_weights: Vec<f64> = (0..dim)
        .map(|n| 4.0 * (w * (n + 1) as f64).sin().ln())
        .collect();
    let steady = normalize_log(&log_weights);
    Ok(LaserModel::assemble(vec![1.0; dim - 1], loss, steady))
}

/// Unit-gain model with an arbitrary positive loss profile.
pub fn custom_model(loss: &[f64]) -> Result<LaserModel> {
    if loss.is_empty() {
        return Err(Error::validation("loss vector must have at least one entry"));
    }
    if let Some((i, &l)) = loss
        .iter()
        .enumerate()
        .find(|(_, &l)| !(l > 0.0 && l.is_finite()))
    {
        return Err(Error::validation(format!(
            "loss entry L_{} = {l} must be strictly positive and finite",
            i + 1
        )));
    }
    let gain = vec![1.0; loss.len()];
    let steady = steady_from_recurrence(&gain, loss);
    Ok(LaserModel::assemble(gain, loss.to_vec(), steady))
}

/// Steady state from `ρ_n = (G_n/L_n)² ρ_{n−1}`, accumulated in log space.
pub(crate) fn steady_from_recurrence(gain: &[f64], loss: &[f64]) -> Vec<f64> {
    let mut logs = Vec::with_capacity(gain.len() + 1);
    let mut acc = 0.0;
    logs.push(acc);
    for (g, l) in gain.iter().zip(loss) {
        acc += 2.0 * (g.ln() - l.ln());
        logs.push(acc);
    }
    normalize_log(&logs)
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|x| x / total).collect()
}

impl LaserModel {
    fn assemble(gain: Vec<f64>, loss: Vec<f64>, steady: Vec<f64>) -> Self {
        let dim = steady.len();
        let flux = loss
            .iter()
            .zip(&steady[1..])
            .map(|(l, r)| l * l * r)
            .sum();
        let mu = steady.iter().enumerate().map(|(n, r)| n as f64 * r).sum();
        LaserModel {
            dim,
            gain,
            loss,
            steady,
            flux,
            mu,
            linewidth: None,
        }
    }

    /// `G_n` with the convention `G_0 = G_D = 0`.
    #[inline]
    pub fn g(&self, n: usize) -> f64 {
        if n == 0 || n >= self.dim {
            0.0
        } else {
            self.gain[n - 1]
        }
    }

    /// `L_n` with the convention `L_0 = L_D = 0`.
    #[inline]
    pub fn l(&self, n: usize) -> f64 {
        if n == 0 || n >= self.dim {
            0.0
        } else {
            self.loss[n - 1]
        }
    }

    /// Diagonal of `L₀ = Ĝ†Ĝ + L̂†L̂`.
    pub fn l0_diagonal(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|m| {
                let g = self.g(m + 1);
                let l = self.l(m);
                g * g + l * l
            })
            .collect()
    }

    /// Dense gain matrix `Ĝ` (subdiagonal).
    pub fn gain_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| {
            if r == c + 1 {
                self.g(r)
            } else {
                0.0
            }
        })
    }

    /// Dense loss matrix `L̂` (superdiagonal).
    pub fn loss_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| {
            if c == r + 1 {
                self.l(c)
            } else {
                0.0
            }
        })
    }

    /// Max-abs residual of the diagonal balance equations
    /// `G_n²ρ_{n−1} + L_{n+1}²ρ_{n+1} − (G_{n+1}² + L_n²)ρ_n`.
    pub fn fixed_point_residual(&self) -> f64 {
        let rho = |n: isize| {
            if n < 0 || n as usize >= self.dim {
                0.0
            } else {
                self.steady[n as usize]
            }
        };
        (0..self.dim)
            .map(|n| {
                let gn = self.g(n);
                let ln1 = self.l(n + 1);
                let gn1 = self.g(n + 1);
                let ln = self.l(n);
                let i = n as isize;
                (gn * gn * rho(i - 1) + ln1 * ln1 * rho(i + 1) - (gn1 * gn1 + ln * ln) * rho(i))
                    .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative violation of `ρ_n = (G_n/L_n)² ρ_{n−1}`.
    pub fn recurrence_residual(&self) -> f64 {
        (1..self.dim)
            .map(|n| {
                let ratio = self.g(n) / self.l(n);
                let expect = ratio * ratio * self.steady[n - 1];
                ((self.steady[n] - expect) / self.steady[n]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Records `ℓ = 4N/C` once the coherence is known.
    pub fn with_coherence(mut self, coherence: f64) -> Self {
        self.linewidth = Some(4.0 * self.flux / coherence);
        self
    }

    /// Same model with all rates scaled so that the flux equals `flux`.
    ///
    /// This only changes the time unit: the steady state and the coherence
    /// are unchanged, the linewidth scales with the rates.
    pub fn with_flux(&self, flux: f64) -> Result<Self> {
        if !(flux > 0.0 && flux.is_finite()) {
            return Err(Error::validation(format!("flux must be positive and finite, got {flux}")));
        }
        let ratio = flux / self.flux;
        let k = ratio.sqrt();
        Ok(LaserModel {
            dim: self.dim,
            gain: self.gain.iter().map(|g| g * k).collect(),
            loss: self.loss.iter().map(|l| l * k).collect(),
            steady: self.steady.clone(),
            flux,
            mu: self.mu,
            linewidth: self.linewidth.map(|lw| lw * ratio),
        })
    }

    /// Deterministic JSON with keys in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }
}

/// Max deviation from exact U(1) covariance of `L̂` and `Ĝ` under
/// `U^ζ = diag(e^{iζn})`.
pub fn phase_covariance_check(model: &LaserModel, zeta: f64) -> f64 {
    let d = model.dim;
    // (U^{-ζ} A U^{ζ})_{rc} = e^{iζ(c-r)} A_{rc}
    let conj = |m: &DMatrix<f64>, factor: Complex<f64>| {
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let a = Complex::new(m[(r, c)], 0.0);
                let lhs = Complex::from_polar(1.0, zeta * (c as f64 - r as f64)) * a;
                worst = worst.max((lhs - factor * a).norm());
            }
        }
        worst
    };
    let l = conj(&model.loss_matrix(), Complex::from_polar(1.0, zeta));
    let g = conj(&model.gain_matrix(), Complex::from_polar(1.0, -zeta));
    l.max(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dim3_family_values() {
        let m = build_model(3).unwrap();
        assert_relative_eq!(m.steady[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(m.steady[1], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.steady[2], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(m.loss[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.loss[1], 2.0, epsilon = 1e-14);
        assert_relative_eq!(m.mu, 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.flux, 5.0 / 6.0, epsilon = 1e-15);
        assert!(m.linewidth.is_none());
    }

    #[test]
    fn dim2_is_uniform() {
        let m = build_model(2).unwrap();
        assert_relative_eq!(m.steady[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.steady[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m.loss[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(m.mu, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dim_guard() {
        assert!(build_model(1).unwrap_err().is_validation());
        assert!(build_model(0).is_err());
    }

    #[test]
    fn rescaling_keeps_steady_state() {
        let m = build_model(5).unwrap();
        let r = m.with_flux(1.0).unwrap();
        assert_relative_eq!(r.flux, 1.0, epsilon = 1e-15);
        assert_eq!(r.steady, m.steady);
        assert!(r.fixed_point_residual() < 1e-15);
        let recomputed = LaserModel::assemble(r.gain.clone(), r.loss.clone(), r.steady.clone());
        assert_relative_eq!(recomputed.flux, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn custom_reproduces_family() {
        let c = custom_model(&[0.5, 2.0]).unwrap();
        let f = build_model(3).unwrap();
        for (a, b) in c.steady.iter().zip(&f.steady) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let u = custom_model(&[1.0]).unwrap();
        assert_eq!(u.steady, vec![0.5, 0.5]);
    }

    #[test]
    fn custom_rejects_nonpositive_loss() {
        assert!(custom_model(&[1.0, 0.0]).unwrap_err().is_validation());
        assert!(custom_model(&[-1.0]).is_err());
        assert!(custom_model(&[]).is_err());
    }

    #[test]
    fn identities_hold_over_range() {
        for d in (2..=1000).step_by(7).chain([1000]) {
            let m = build_model(d).unwrap();
            let sum: f64 = m.steady.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(m.steady.iter().all(|&r| r > 0.0));
            assert!((m.flux - (1.0 - m.steady[d - 1])).abs() < 1e-12, "flux at D={d}");
            assert!((m.mu - (d as f64 - 1.0) / 2.0).abs() < 1e-12 * d as f64, "mu at D={d}");
            assert!(m.fixed_point_residual() < 1e-12, "balance at D={d}");
            assert!(m.recurrence_residual() < 1e-12, "recurrence at D={d}");
        }
    }

    #[test]
    fn l0_dim3() {
        let m = build_model(3).unwrap();
        let l0 = m.l0_diagonal();
        assert_relative_eq!(l0[0], 1.0);
        assert_relative_eq!(l0[1], 1.25);
        assert_relative_eq!(l0[2], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn covariance_examples() {
        let m3 = build_model(3).unwrap();
        assert_eq!(phase_covariance_check(&m3, 0.0), 0.0);
        assert!(phase_covariance_check(&m3, PI) <= 1e-15);
        let m50 = build_model(50).unwrap();
        assert!(phase_covariance_check(&m50, 0.7) <= 1e-15);
    }

    #[test]
    fn json_keys_in_order() {
        let js = build_model(2).unwrap().to_json();
        let keys = ["\"dim\"", "\"gain\"", "\"loss\"", "\"steady\"", "\"flux\"", "\"mu\"", "\"linewidth\""];
        let pos: Vec<usize> = keys.iter().map(|k| js.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(js.contains("\"linewidth\": null"));
    }
}
