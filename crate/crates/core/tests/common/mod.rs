//! Dense reference implementations used as independent oracles.
#![allow(dead_code)]

use laser_coherence::LaserModel;
use nalgebra::{DMatrix, DVector};

/// `vec(AXB) = (Bᵀ ⊗ A) vec(X)` with column stacking.
pub fn dense_liouvillian(model: &LaserModel) -> DMatrix<f64> {
    let d = model.dim;
    let i = DMatrix::<f64>::identity(d, d);
    let g = model.gain_matrix();
    let l = model.loss_matrix();
    let k = g.transpose() * &g + l.transpose() * &l;
    g.kronecker(&g) + l.kronecker(&l) - (i.kronecker(&k) + k.transpose().kronecker(&i)) * 0.5
}

pub fn vec_of(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn mat_of(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

/// Null vector of the dense Liouvillian, normalized to unit trace.
pub fn dense_steady(model: &LaserModel) -> DMatrix<f64> {
    let d = model.dim;
    let svd = dense_liouvillian(model).svd(true, true);
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let v = svd.v_t.unwrap().row(k).transpose();
    let rho = mat_of(&v, d);
    let tr = rho.trace();
    rho / tr
}

/// `𝔠 = −2 Tr(L̂ᵀ X)` with `X = Q 𝓛⁺ vec(L̂ρ)`.
pub fn dense_coherence(model: &LaserModel) -> f64 {
    let d = model.dim;
    let lv = dense_liouvillian(model);
    let rho = dense_steady(model);
    let l = model.loss_matrix();
    let b = vec_of(&(&l * &rho));
    let pinv = lv.pseudo_inverse(1e-12).unwrap();
    let mut x = mat_of(&(pinv * b), d);
    let tr = x.trace();
    x -= &rho * tr;
    -2.0 * (l.transpose() * x).trace()
}

/// `⟨b†(s)b†(s′)b(t′)b(t)⟩/N²` by quantum regression on dense matrices.
pub fn dense_g2(model: &LaserModel, times: [f64; 4]) -> f64 {
    let d = model.dim;
    let lv = dense_liouvillian(model);
    let l = model.loss_matrix();
    // (time, true = creation acting on the right)
    let mut ev = vec![(times[0], true), (times[1], true), (times[2], false), (times[3], false)];
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rho = DMatrix::from_diagonal(&DVector::from_column_slice(&model.steady));
    let mut now = ev[0].0;
    for (t, create) in ev {
        if t > now {
            let prop = (&lv * (t - now)).exp();
            rho = mat_of(&(prop * vec_of(&rho)), d);
            now = t;
        }
        rho = if create { &rho * l.transpose() } else { &l * &rho };
    }
    rho.trace() / (model.flux * model.flux)
}

/// `Tr(L̂ᵀ e^{𝓛s}(L̂ρ))/N`.
pub fn dense_g1(model: &LaserModel, s: f64) -> f64 {
    let d = model.dim;
    let lv = dense_liouvillian(model);
    let l = model.loss_matrix();
    let rho = DMatrix::from_diagonal(&DVector::from_column_slice(&model.steady));
    let v = (lv * s.abs()).exp() * vec_of(&(&l * rho));
    (l.transpose() * mat_of(&v, d)).trace() / model.flux
}
