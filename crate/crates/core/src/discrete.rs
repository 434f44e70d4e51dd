//! Finite time-step picture: A-matrices, transfer matrix and discrete
//! coherence, with checks against the continuum limit.
//!
//! The output index is `j = 2·beam + sink`, so `A0` (gain) leaves the beam
//! empty and flips the sink, `A1` is the no-event branch, `A3` emits into
//! the beam and `A2` is fixed to zero.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::blocks::{forward_closure, support, SubMatrix};
use crate::error::{Error, Result};
use crate::model::LaserModel;
use crate::superop::{build_liouvillian, index, FlatSuperoperator, FlatVector, SuperopKind};

/// Margin in the guard `γ² max L₀ < 1 − margin`.
pub const GAMMA_GUARD_MARGIN: f64 = 1e-9;

/// The four Kraus-like matrices of one time step.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub dim: usize,
    pub gamma: f64,
    pub a: [DMatrix<f64>; 4],
    /// `L₀` diagonal of the underlying continuum model.
    l0: Vec<f64>,
}

/// `A0 = γĜ`, `A3 = γL̂`, `A1 = √(I − γ²L₀)`, `A2 = 0`.
pub fn build_discrete(model: &LaserModel, gamma: f64) -> Result<DiscreteModel> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::validation(format!("gamma must be positive and finite, got {gamma}")));
    }
    let l0 = model.l0_diagonal();
    let g2 = gamma * gamma;
    if let Some((m, &x)) = l0
        .iter()
        .enumerate()
        .find(|(_, &x)| g2 * x >= 1.0 - GAMMA_GUARD_MARGIN)
    {
        return Err(Error::validation(format!(
            "gamma = {gamma} too large: gamma^2 * L0[{m}] = {:.6} must stay below 1",
            g2 * x
        )));
    }
    let d = model.dim;
    let a0 = model.gain_matrix() * gamma;
    let a3 = model.loss_matrix() * gamma;
    let a1 = DMatrix::from_diagonal(&DVector::from_iterator(d, l0.iter().map(|x| (1.0 - g2 * x).sqrt())));
    Ok(DiscreteModel {
        dim: d,
        gamma,
        a: [a0, a1, DMatrix::zeros(d, d), a3],
        l0,
    })
}

impl DiscreteModel {
    /// `‖Σ_j A_jᵀA_j − I‖_max`.
    pub fn isometry_residual(&self) -> f64 {
        let mut s = DMatrix::<f64>::zeros(self.dim, self.dim);
        for a in &self.a {
            s += a.transpose() * a;
        }
        (s - DMatrix::identity(self.dim, self.dim)).amax()
    }

    /// `‖Σ_j A_j ρss A_jᵀ − ρss‖_max`.
    pub fn fixed_point_residual(&self, steady: &[f64]) -> f64 {
        let rho = DMatrix::from_diagonal(&DVector::from_column_slice(steady));
        let mut out = -rho.clone();
        for a in &self.a {
            out += a * &rho * a.transpose();
        }
        out.amax()
    }

    /// Diagonal of `I − A1⊗A1` evaluated without cancellation:
    /// `1 − a_m a_n = γ²(L₀m + L₀n − γ²L₀m L₀n)/(1 + a_m a_n)`.
    fn defect_diagonal(&self, m: usize, n: usize) -> f64 {
        let g2 = self.gamma * self.gamma;
        let (x, y) = (self.l0[m], self.l0[n]);
        let am = (1.0 - g2 * x).sqrt();
        let an = (1.0 - g2 * y).sqrt();
        g2 * (x + y - g2 * x * y) / (1.0 + am * an)
    }
}

/// `𝒯 = Σ_j A_j ⊗ A_j` (conjugation is trivial for real matrices).
pub fn transfer_matrix(dm: &DiscreteModel) -> FlatSuperoperator {
    let mut trip = Vec::new();
    for a in &dm.a {
        trip.extend(FlatSuperoperator::kron_triplets(a, a, 1.0));
    }
    FlatSuperoperator::from_triplets(dm.dim, SuperopKind::Transfer, trip)
}

/// `(I − 𝒯)/γ²` assembled entrywise without forming `I − A1⊗A1` by
/// subtraction.
fn scaled_defect(dm: &DiscreteModel) -> FlatSuperoperator {
    let d = dm.dim;
    let g2 = dm.gamma * dm.gamma;
    let mut trip = FlatSuperoperator::kron_triplets(&dm.a[0], &dm.a[0], -1.0 / g2);
    trip.extend(FlatSuperoperator::kron_triplets(&dm.a[3], &dm.a[3], -1.0 / g2));
    for n in 0..d {
        for m in 0..d {
            trip.push((index(d, m, n), index(d, m, n), dm.defect_diagonal(m, n) / g2));
        }
    }
    FlatSuperoperator::from_triplets(d, SuperopKind::Generic, trip)
}

/// `r(γ) = ‖(𝒯 − I)/γ² − 𝓛‖_max`.
pub fn liouvillian_residual(dm: &DiscreteModel, model: &LaserModel) -> f64 {
    let defect = scaled_defect(dm);
    let l = build_liouvillian(model);
    let mut trip: Vec<(usize, usize, f64)> = defect.entries().map(|(r, c, v)| (r, c, -v)).collect();
    trip.extend(l.entries().map(|(r, c, v)| (r, c, -v)));
    FlatSuperoperator::from_triplets(dm.dim, SuperopKind::Generic, trip).max_abs()
}

/// Discrete coherence and its companions.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteCoherence {
    /// `2(σ⁺| (I − Q𝒯Q)⁻¹ |σ⁻)`.
    pub coherence: f64,
    /// The one-site term `(σ⁺|σ⁻)_{same site} = γ²N`, excluded above.
    pub one_site_term: f64,
}

/// `𝔠 = 2(σ⁺| (I − Q𝒯Q)⁻¹ |σ⁻)` with `|σ⁻) = vec(A3 ρss A1ᵀ)` and
/// `(σ⁺|X) = Tr(A3ᵀ A1 X)`.
///
/// Both vectors carry one factor of `γ` and the inverse carries `γ⁻²`, so
/// the result is already in photon units.
pub fn discrete_coherence(dm: &DiscreteModel, model: &LaserModel) -> Result<DiscreteCoherence> {
    let d = dm.dim;
    let rho = DMatrix::from_diagonal(&DVector::from_column_slice(&model.steady));
    let sigma_minus = FlatVector::from_matrix(&(&dm.a[3] * &rho * dm.a[1].transpose()));
    let weight = dm.a[3].transpose() * &dm.a[1];
    // (σ⁺|x) = Σ_{mn} weight[n, m] x[m, n]
    let sigma_plus = FlatVector::from_matrix(&weight.transpose());

    let defect = scaled_defect(dm);
    let idx = forward_closure(&defect, &support(&sigma_minus.data));
    if idx.iter().any(|&i| i % d == i / d) {
        return Err(Error::numerical(
            "emission vector reached the stationary sector; projected inverse not implemented there",
            f64::NAN,
        ));
    }
    // Q acts as the identity off the population sector
    let sub = SubMatrix::extract(&defect, &idx);
    let a = sub.to_dense();
    let b = DVector::from_vec(sub.gather(&sigma_minus.data));
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::numerical("singular transfer defect in the emission sector", f64::INFINITY))?;
    let x = x / (dm.gamma * dm.gamma);
    let c = 2.0 * sub.gather(&sigma_plus.data).iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>();
    let one_site = dm.gamma * dm.gamma * model.flux;
    Ok(DiscreteCoherence {
        coherence: c,
        one_site_term: one_site,
    })
}

/// Residual summary in the documented JSON layout.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteReport {
    pub dim: usize,
    pub gamma: f64,
    pub isometry_residual: f64,
    pub fixed_point_residual: f64,
    pub liouvillian_residual: f64,
    pub discrete_coherence: f64,
    pub one_site_term: f64,
}

impl DiscreteReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

pub fn discrete_report(model: &LaserModel, gamma: f64) -> Result<DiscreteReport> {
    let dm = build_discrete(model, gamma)?;
    let t = transfer_matrix(&dm);
    let steady = FlatVector::from_diagonal(&model.steady);
    let fixed = t.apply(&steady);
    let fixed_point_residual = fixed
        .data
        .iter()
        .zip(&steady.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dc = discrete_coherence(&dm, model)?;
    Ok(DiscreteReport {
        dim: dm.dim,
        gamma,
        isometry_residual: dm.isometry_residual(),
        fixed_point_residual,
        liouvillian_residual: liouvillian_residual(&dm, model),
        discrete_coherence: dc.coherence,
        one_site_term: dc.one_site_term,
    })
}

/// `σ⁻ = |0⟩⟨1|`.
fn sigma_minus() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
}

/// `U_cl = exp(√dt (Ĝσ⁻_l − Ĝ†σ⁺_l))` on cavity⊗left qubit.
pub fn gain_unitary(model: &LaserModel, dt: f64) -> DMatrix<f64> {
    let g = model.gain_matrix();
    let sm = sigma_minus();
    let gen = g.kronecker(&sm) - g.transpose().kronecker(&sm.transpose());
    (gen * dt.sqrt()).exp()
}

/// `U_cr = exp(√dt (L̂σ⁺_r − L̂†σ⁻_r))` on cavity⊗right qubit.
pub fn loss_unitary(model: &LaserModel, dt: f64) -> DMatrix<f64> {
    let l = model.loss_matrix();
    let sm = sigma_minus();
    let gen = l.kronecker(&sm.transpose()) - l.transpose().kronecker(&sm);
    (gen * dt.sqrt()).exp()
}

/// Choi matrix `Σ_k vec(K_k) vec(K_k)ᵀ` of a channel given by Kraus maps.
fn choi(kraus: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = kraus[0].len();
    let mut c = DMatrix::zeros(n, n);
    for k in kraus {
        let v = DVector::from_column_slice(k.as_slice());
        c += &v * v.transpose();
    }
    c
}

/// Kraus maps `cavity → cavity⊗beam` from the unitary construction: inputs
/// `|1⟩_l|0⟩_r`, gain then loss, left qubit traced out.
pub fn unitary_kraus(model: &LaserModel, dt: f64) -> Vec<DMatrix<f64>> {
    let d = model.dim;
    let i2 = DMatrix::<f64>::identity(2, 2);
    // ordering (cavity, left, right): index = 4c + 2l + r
    let ucl = gain_unitary(model, dt).kronecker(&i2);
    let ucr = loss_unitary(model, dt);
    // lift U_cr from (cavity, right) to (cavity, left, right)
    let mut ucr_full = DMatrix::zeros(4 * d, 4 * d);
    for c1 in 0..d {
        for r1 in 0..2 {
            for c2 in 0..d {
                for r2 in 0..2 {
                    let v = ucr[(2 * c1 + r1, 2 * c2 + r2)];
                    if v != 0.0 {
                        for l in 0..2 {
                            ucr_full[(4 * c1 + 2 * l + r1, 4 * c2 + 2 * l + r2)] = v;
                        }
                    }
                }
            }
        }
    }
    let u = ucr_full * ucl;
    (0..2)
        .map(|left| {
            DMatrix::from_fn(2 * d, d, |row, col| {
                let (c, r) = (row / 2, row % 2);
                u[(4 * c + 2 * left + r, 4 * col + 2)]
            })
        })
        .collect()
}

/// Kraus maps `cavity → cavity⊗beam` of the A-matrix step, sink traced out.
pub fn discrete_kraus(dm: &DiscreteModel) -> Vec<DMatrix<f64>> {
    let d = dm.dim;
    (0..2)
        .map(|sink| {
            DMatrix::from_fn(2 * d, d, |row, col| {
                let (c, beam) = (row / 2, row % 2);
                dm.a[2 * beam + sink][(c, col)]
            })
        })
        .collect()
}

/// Max-abs distance between the Choi matrices of the unitary construction
/// and of the A-matrix step at `γ = √dt`.
pub fn channel_equivalence(model: &LaserModel, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::validation(format!("dt must be positive, got {dt}")));
    }
    let dm = build_discrete(model, dt.sqrt())?;
    let cu = choi(&unitary_kraus(model, dt));
    let ca = choi(&discrete_kraus(&dm));
    Ok((cu - ca).amax())
}
