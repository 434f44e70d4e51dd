//! First- and second-order Glauber functions of the model beam and of the
//! ideal phase-diffusing coherent beam.

use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{Propagator, SectorPropagator};
use crate::coherence::{coherence, FirstOrderCorrelator};
use crate::error::{Error, Result};
use crate::model::LaserModel;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::superop::{build_liouvillian, index, FlatSuperoperator};

/// Phase-diffusing coherent beam with linewidth `ℓ` and flux `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdealBeam {
    pub linewidth: f64,
    pub flux: f64,
}

impl IdealBeam {
    pub fn new(linewidth: f64, flux: f64) -> Result<Self> {
        if !(linewidth > 0.0 && flux > 0.0) {
            return Err(Error::validation(format!(
                "ideal beam needs positive linewidth and flux, got {linewidth} and {flux}"
            )));
        }
        Ok(IdealBeam { linewidth, flux })
    }

    /// Beam matched to a model whose coherence is already known.
    pub fn matching(model: &LaserModel) -> Result<Self> {
        let lw = model
            .linewidth
            .ok_or_else(|| Error::validation("model linewidth unknown; compute the coherence first"))?;
        IdealBeam::new(lw, model.flux)
    }
}

/// The four arguments of `G²(s, s′, t′, t) = ⟨b†(s) b†(s′) b(t′) b(t)⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FourTimes {
    pub s: f64,
    pub s_prime: f64,
    pub t_prime: f64,
    pub t: f64,
}

impl FourTimes {
    pub fn new(s: f64, s_prime: f64, t_prime: f64, t: f64) -> Self {
        FourTimes { s, s_prime, t_prime, t }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s, self.s_prime, self.t_prime, self.t]
    }
}

/// `exp(−ℓ|s−t|/2)`.
pub fn ideal_g1(beam: &IdealBeam, s: f64, t: f64) -> f64 {
    (-0.5 * beam.linewidth * (s - t).abs()).exp()
}

/// Normalized ideal `g²` of the phase-diffusing beam.
pub fn ideal_g2(beam: &IdealBeam, x: &FourTimes) -> f64 {
    let FourTimes { s, s_prime: sp, t_prime: tp, t } = *x;
    let e = (s - t).abs() + (sp - tp).abs() + (s - tp).abs() + (t - sp).abs() - (s - sp).abs() - (t - tp).abs();
    (-0.5 * beam.linewidth * e).exp()
}

/// Normalized `g¹(s) = Tr[L̂† e^{𝓛|s|}(L̂ρss)]/N`.
pub fn model_g1(model: &LaserModel, s: f64) -> Result<f64> {
    let l = build_liouvillian(model);
    let corr = FirstOrderCorrelator::new(model, &l)?;
    Ok(corr.sample_normalized(&[s.abs()])[0])
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Jump {
    /// `b`, acting as `L̂·` on the left.
    Annihilate,
    /// `b†`, acting as `·L̂†` on the right.
    Create,
}

fn left_loss(model: &LaserModel, x: &[f64]) -> Vec<f64> {
    let d = model.dim;
    let mut y = vec![0.0; x.len()];
    for n in 0..d {
        for m in 0..d - 1 {
            y[index(d, m, n)] = model.l(m + 1) * x[index(d, m + 1, n)];
        }
    }
    y
}

fn right_loss_dagger(model: &LaserModel, x: &[f64]) -> Vec<f64> {
    let d = model.dim;
    let mut y = vec![0.0; x.len()];
    for n in 0..d - 1 {
        for m in 0..d {
            y[index(d, m, n)] = model.l(n + 1) * x[index(d, m, n + 1)];
        }
    }
    y
}

/// `G²/N²` by quantum regression with any propagator for `e^{𝓛t}`.
///
/// Times are sorted ascending. Starting from `vec(ρss)`, each time applies
/// `L̂` from the left (for `t`, `t′`) or `L̂†` from the right (for `s`,
/// `s′`) and the gaps are bridged by the propagator. Coincident times get
/// zero propagation; the left and right actions commute, so normal order
/// is automatic. The trace closes the chain.
pub fn model_g2_with<P: Propagator + ?Sized>(model: &LaserModel, prop: &P, x: &FourTimes) -> Result<f64> {
    let mut events = [
        (x.s, Jump::Create),
        (x.s_prime, Jump::Create),
        (x.t_prime, Jump::Annihilate),
        (x.t, Jump::Annihilate),
    ];
    if events.iter().any(|e| !e.0.is_finite()) {
        return Err(Error::validation("correlation times must be finite"));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let d = model.dim;
    let mut state = vec![0.0; d * d];
    for (m, &p) in model.steady.iter().enumerate() {
        state[index(d, m, m)] = p;
    }
    let mut now = events[0].0;
    for &(time, jump) in &events {
        if time > now {
            state = prop.propagate(&state, time - now)?;
            now = time;
        }
        state = match jump {
            Jump::Annihilate => left_loss(model, &state),
            Jump::Create => right_loss_dagger(model, &state),
        };
    }
    let tr: f64 = (0..d).map(|m| state[index(d, m, m)]).sum();
    Ok(tr / (model.flux * model.flux))
}

/// [`model_g2_with`] using sector eigen-propagation.
pub fn model_g2(model: &LaserModel, x: &FourTimes) -> Result<f64> {
    let l = build_liouvillian(model);
    let prop = SectorPropagator::new(&l);
    model_g2_with(model, &prop, x)
}

/// Result of the search for the largest g² deviation over the window box.
#[derive(Debug, Clone, Serialize)]
pub struct MaxDeltaG2 {
    pub dim: usize,
    pub tau: f64,
    pub argmax: [f64; 4],
    pub delta: f64,
    pub corner_delta: f64,
    pub coherence: f64,
}

impl MaxDeltaG2 {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// `ε` of the corner candidate `(−τ, −(1−ε)τ, (1−ε)τ, τ)`.
pub const CORNER_EPSILON: f64 = 1e-3;

/// `τ = √(3𝔠/(8N²))`, i.e. `√(3/(2Nℓ))` with `ℓ = 4N/𝔠`.
pub fn window_tau(coherence: f64, flux: f64) -> f64 {
    (3.0 * coherence / (8.0 * flux * flux)).sqrt()
}

/// Owns the Liouvillian so that a sector propagator can borrow it.
pub struct G2Evaluator {
    model: LaserModel,
    beam: IdealBeam,
    liouvillian: FlatSuperoperator,
}

impl G2Evaluator {
    /// Computes the coherence if the model does not carry a linewidth yet.
    pub fn new(model: &LaserModel) -> Result<Self> {
        let mut model = model.clone();
        if model.linewidth.is_none() {
            coherence(&mut model)?;
        }
        let beam = IdealBeam::matching(&model)?;
        let liouvillian = build_liouvillian(&model);
        Ok(G2Evaluator { model, beam, liouvillian })
    }

    pub fn model(&self) -> &LaserModel {
        &self.model
    }

    pub fn beam(&self) -> IdealBeam {
        self.beam
    }

    pub fn coherence(&self) -> f64 {
        4.0 * self.model.flux / self.beam.linewidth
    }

    pub fn tau(&self) -> f64 {
        window_tau(self.coherence(), self.model.flux)
    }

    pub fn propagator(&self) -> SectorPropagator<'_> {
        SectorPropagator::new(&self.liouvillian)
    }

    pub fn liouvillian(&self) -> &FlatSuperoperator {
        &self.liouvillian
    }

    /// `|g²_model − g²_ideal|`.
    pub fn delta<P: Propagator + ?Sized>(&self, prop: &P, x: &FourTimes) -> Result<f64> {
        Ok((model_g2_with(&self.model, prop, x)? - ideal_g2(&self.beam, x)).abs())
    }

    /// Lattice search with `s = −τ` fixed, optional Nelder–Mead refinement,
    /// and the corner candidate.
    pub fn max_delta_g2(&self, grid: usize, refine: bool) -> Result<MaxDeltaG2> {
        if grid < 5 || grid % 2 == 0 {
            return Err(Error::validation(format!("grid must be an odd integer >= 5, got {grid}")));
        }
        let tau = self.tau();
        let prop = self.propagator();
        let axis: Vec<f64> = (0..grid)
            .map(|i| -tau + 2.0 * tau * i as f64 / (grid - 1) as f64)
            .collect();
        let lattice: Vec<[f64; 3]> = (0..grid * grid * grid)
            .map(|k| [axis[k / (grid * grid)], axis[(k / grid) % grid], axis[k % grid]])
            .collect();
        let values: Vec<f64> = lattice
            .par_iter()
            .map(|p| self.delta(&prop, &FourTimes::new(-tau, p[0], p[1], p[2])))
            .collect::<Result<_>>()?;
        // first maximal index keeps the result order independent
        let (mut best_k, mut best) = (0, values[0]);
        for (k, &v) in values.iter().enumerate() {
            if v > best {
                best = v;
                best_k = k;
            }
        }
        let mut arg = lattice[best_k];
        if refine {
            let res = nelder_mead(
                |p: &[f64]| {
                    self.delta(&prop, &FourTimes::new(-tau, p[0], p[1], p[2]))
                        .map_or(f64::INFINITY, |v| -v)
                },
                &arg,
                &[-tau; 3],
                &[tau; 3],
                &NelderMeadOptions {
                    max_evals: 600,
                    f_tol: 1e-14,
                    x_tol: 1e-9 * tau,
                    step: 0.5 / (grid - 1) as f64,
                    restarts: 1,
                    seed: 0,
                },
            );
            if -res.f > best {
                best = -res.f;
                arg = [res.x[0], res.x[1], res.x[2]];
            }
        }
        let e = CORNER_EPSILON;
        let corner = FourTimes::new(-tau, -(1.0 - e) * tau, (1.0 - e) * tau, tau);
        let corner_delta = self.delta(&prop, &corner)?;
        let (delta, argmax) = if corner_delta > best {
            (corner_delta, corner.as_array())
        } else {
            (best, [-tau, arg[0], arg[1], arg[2]])
        };
        Ok(MaxDeltaG2 {
            dim: self.model.dim,
            tau,
            argmax,
            delta,
            corner_delta,
            coherence: self.coherence(),
        })
    }
}

/// Convenience wrapper around [`G2Evaluator::max_delta_g2`].
pub fn max_delta_g2(model: &LaserModel, grid: usize, refine: bool) -> Result<MaxDeltaG2> {
    G2Evaluator::new(model)?.max_delta_g2(grid, refine)
}

/// One sample of the first-order deviation curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct G1Sample {
    pub s: f64,
    pub g1_model: f64,
    pub g1_ideal: f64,
    pub delta: f64,
}

pub const G1_CSV_HEADER: &str = "s,g1_model,g1_ideal,delta";

impl G1Sample {
    pub fn csv_line(&self) -> String {
        format!("{:.12e},{:.15e},{:.15e},{:.6e}", self.s, self.g1_model, self.g1_ideal, self.delta)
    }
}

/// `|g¹_model(s) − e^{−ℓs/2}|` on `points` evenly spaced times in
/// `[0, s_max/ℓ]`.
#[derive(Debug, Clone, Serialize)]
pub struct G1Profile {
    pub samples: Vec<G1Sample>,
    pub max_delta: f64,
    pub linewidth: f64,
}

pub fn delta_g1_profile(model: &LaserModel, s_max: f64, points: usize) -> Result<G1Profile> {
    if !(s_max > 0.0) || points < 2 {
        return Err(Error::validation("profile needs s_max > 0 and at least 2 points"));
    }
    let mut model = model.clone();
    if model.linewidth.is_none() {
        coherence(&mut model)?;
    }
    let beam = IdealBeam::matching(&model)?;
    let l = build_liouvillian(&model);
    let corr = FirstOrderCorrelator::new(&model, &l)?;
    let times: Vec<f64> = (0..points)
        .map(|i| s_max / beam.linewidth * i as f64 / (points - 1) as f64)
        .collect();
    let g = corr.sample_normalized(&times);
    let samples: Vec<G1Sample> = times
        .iter()
        .zip(&g)
        .map(|(&s, &gm)| {
            let gi = ideal_g1(&beam, s, 0.0);
            G1Sample {
                s,
                g1_model: gm,
                g1_ideal: gi,
                delta: (gm - gi).abs(),
            }
        })
        .collect();
    let max_delta = samples.iter().map(|x| x.delta).fold(0.0, f64::max);
    Ok(G1Profile {
        samples,
        max_delta,
        linewidth: beam.linewidth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn ideal_g1_values() {
        let b = IdealBeam::new(2.0, 1.0).unwrap();
        assert_eq!(ideal_g1(&b, 0.3, 0.3), 1.0);
        assert!((ideal_g1(&b, 1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(ideal_g1(&b, 0.2, 1.7), ideal_g1(&b, 1.7, 0.2));
    }

    #[test]
    fn ideal_g2_reductions() {
        let b = IdealBeam::new(0.7, 1.0).unwrap();
        assert_eq!(ideal_g2(&b, &FourTimes::new(0.4, 0.4, 0.4, 0.4)), 1.0);
        let x = FourTimes::new(0.1, 0.1, 1.3, 1.3);
        assert!((ideal_g2(&b, &x) - (-2.0 * 0.7 * 1.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn equal_time_g2_dim3() {
        let m = build_model(3).unwrap();
        let g = model_g2(&m, &FourTimes::new(0.2, 0.2, 0.2, 0.2)).unwrap();
        assert!((g - 0.24).abs() < 1e-14, "{g}");
    }

    #[test]
    fn g1_starts_at_one() {
        let m = build_model(6).unwrap();
        assert!((model_g1(&m, 0.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn grid_must_be_odd() {
        let m = build_model(4).unwrap();
        assert!(max_delta_g2(&m, 4, false).unwrap_err().is_validation());
        assert!(max_delta_g2(&m, 3, false).is_err());
    }
}
