//! Closed-form analytics: coherence bounds, the heterodyne
//! filtering/retrofiltering MSE and the G-asymmetry of a diffusing beam.

use rayon::prelude::*;
use serde::Serialize;

use crate::coherence::gauss_legendre;
use crate::error::{Error, Result};

/// `1/(3^{2/3} Γ(2/3))`.
const AIRY_C1: f64 = 0.355_028_053_887_817_2;
/// `1/(3^{1/3} Γ(1/3))`.
const AIRY_C2: f64 = 0.258_819_403_792_806_8;

/// `Ai(z)` from its Maclaurin series; only used for `|z| ≤ 4`.
pub fn airy_ai(z: f64) -> f64 {
    assert!(z.abs() <= 4.0, "Maclaurin evaluation of Ai is limited to |z| <= 4");
    let z3 = z * z * z;
    let (mut f, mut g) = (1.0, z);
    let (mut tf, mut tg) = (1.0, z);
    for k in 1..200 {
        let k3 = 3.0 * k as f64;
        tf *= z3 / ((k3 - 1.0) * k3);
        tg *= z3 / (k3 * (k3 + 1.0));
        f += tf;
        g += tg;
        if tf.abs() < 1e-18 * f.abs().max(1.0) && tg.abs() < 1e-18 * g.abs().max(1.0) {
            break;
        }
    }
    AIRY_C1 * f - AIRY_C2 * g
}

/// First zero of `Ai`, by bisection on `[−2.5, −2.2]`.
pub fn airy_zero() -> f64 {
    let (mut lo, mut hi) = (-2.5, -2.2);
    let flo = airy_ai(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (airy_ai(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `4|z_A/3|³`, the MSE constant of an optimal cavity phase measurement.
pub fn cavity_mse_constant() -> f64 {
    4.0 * (airy_zero() / 3.0).abs().powi(3)
}

/// `(2/3)|3/z_A|⁶`.
pub fn heisenberg_coefficient() -> f64 {
    2.0 / 3.0 * (3.0 / airy_zero()).abs().powi(6)
}

/// Upper bound on the coherence: `(2/3)|3/z_A|⁶ μ⁴`.
pub fn heisenberg_bound(mu: f64) -> f64 {
    heisenberg_coefficient() * mu.powi(4)
}

/// Ideal standard-quantum-limit coherence `16μ²`.
pub fn sql_bound(mu: f64) -> f64 {
    16.0 * mu * mu
}

/// Filtering/retrofiltering windows of length `τ` on a beam with flux `N`
/// and linewidth `ℓ`; `σ = τ√(Nℓ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeterodyneSetup {
    pub flux: f64,
    pub linewidth: f64,
    pub tau: f64,
    pub sigma: f64,
}

impl HeterodyneSetup {
    pub fn new(flux: f64, linewidth: f64, tau: f64) -> Result<Self> {
        if !(flux > 0.0 && linewidth > 0.0 && tau > 0.0) || !(flux * linewidth * tau).is_finite() {
            return Err(Error::validation(format!(
                "heterodyne setup needs positive finite flux, linewidth and tau; got {flux}, {linewidth}, {tau}"
            )));
        }
        Ok(HeterodyneSetup {
            flux,
            linewidth,
            tau,
            sigma: tau * (flux * linewidth).sqrt(),
        })
    }

    pub fn from_sigma(flux: f64, linewidth: f64, sigma: f64) -> Result<Self> {
        if !(flux > 0.0 && linewidth > 0.0 && sigma > 0.0) {
            return Err(Error::validation("flux, linewidth and sigma must be positive"));
        }
        HeterodyneSetup::new(flux, linewidth, sigma / (flux * linewidth).sqrt())
    }

    /// Window `τ = √(3/(2Nℓ))` that minimizes the leading-order MSE.
    pub fn optimal(flux: f64, linewidth: f64) -> Result<Self> {
        HeterodyneSetup::from_sigma(flux, linewidth, 1.5f64.sqrt())
    }

    /// `ℓτ`.
    pub fn x(&self) -> f64 {
        self.linewidth * self.tau
    }
}

/// The evaluated moments and the MSE built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsseParts {
    /// `⟨S†S⟩`.
    pub s_dag_s: f64,
    /// `⟨S²⟩`.
    pub s_squared: f64,
    /// `(⟨S†S⟩ − ⟨S²⟩)/(2N²τ²)`.
    pub msse: f64,
}

/// Below this `ℓτ` the closed forms are replaced by their Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-2;

/// Series of `8(x + 2e^{−x/2} − 2)/x²`.
const W_SERIES: [f64; 10] = [
    2.0,
    -1.0 / 3.0,
    1.0 / 24.0,
    -1.0 / 240.0,
    1.0 / 2880.0,
    -1.0 / 40320.0,
    1.0 / 645120.0,
    -1.0 / 11612160.0,
    1.0 / 232243200.0,
    -1.0 / 5109350400.0,
];

/// Series of `P(x) − Q(x)` (both defined in [`msse_parts`]).
const PQ_SERIES: [f64; 10] = [
    0.0,
    4.0 / 3.0,
    -3.0 / 2.0,
    193.0 / 180.0,
    -869.0 / 1440.0,
    181.0 / 630.0,
    -289867.0 / 2419200.0,
    649007.0 / 14515200.0,
    -31409.0 / 2073600.0,
    18041927.0 / 3832012800.0,
];

/// Series of `P(x)`.
const P_SERIES: [f64; 10] = [
    1.0,
    -1.0 / 3.0,
    5.0 / 72.0,
    -1.0 / 90.0,
    17.0 / 11520.0,
    -41.0 / 241920.0,
    167.0 / 9676800.0,
    -23.0 / 14515200.0,
    37.0 / 278691840.0,
    -157.0 / 15328051200.0,
];

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Closed-form moments with `x = ℓτ`:
/// `⟨S†S⟩ = 1 + NτW(x) + N²τ²P(x)`, `⟨S²⟩ = N²τ²Q(x)`, where
/// `W = 8(x + 2e^{−x/2} − 2)/x²`,
/// `P = 16e^{−x}(e^{x/2}(x − 2) + 2)²/x⁴` and
/// `Q = 4e^{−4x}(e^{x/2} − 1)⁴(2e^{x/2} + 3eˣ + 1)²/(9x⁴)`.
pub fn msse_parts(setup: &HeterodyneSetup) -> MsseParts {
    let x = setup.x();
    let nt = setup.flux * setup.tau;
    let (w, p, p_minus_q) = if x < SERIES_THRESHOLD {
        (horner(&W_SERIES, x), horner(&P_SERIES, x), horner(&PQ_SERIES, x))
    } else {
        let h = (x / 2.0).exp_m1();
        let w = 8.0 * (x + 2.0 * (-x / 2.0).exp_m1()) / (x * x);
        let inner = (x / 2.0).exp() * (x - 2.0) + 2.0;
        let p = 16.0 * (-x).exp() * inner * inner / x.powi(4);
        let tail = 2.0 * (x / 2.0).exp() + 3.0 * x.exp() + 1.0;
        let q = 4.0 * (-4.0 * x).exp() * h.powi(4) * tail * tail / (9.0 * x.powi(4));
        (w, p, p - q)
    };
    let s_dag_s = 1.0 + nt * w + nt * nt * p;
    let s_squared = nt * nt * (p - p_minus_q);
    let msse = 1.0 / (2.0 * nt * nt) + w / (2.0 * nt) + p_minus_q / 2.0;
    MsseParts {
        s_dag_s,
        s_squared,
        msse,
    }
}

/// `1 − ⟨cos(φ_R − φ_F)⟩²` to second order in the fluctuations of `S`.
pub fn msse_exact(setup: &HeterodyneSetup) -> f64 {
    msse_parts(setup).msse
}

/// Leading form `(1/σ + 2σ/3)√(ℓ/N)`.
pub fn msse_leading(setup: &HeterodyneSetup) -> f64 {
    (1.0 / setup.sigma + 2.0 * setup.sigma / 3.0) * (setup.linewidth / setup.flux).sqrt()
}

/// σ minimizing [`msse_exact`] over `[lo, hi]` by golden-section search.
pub fn optimal_sigma(flux: f64, linewidth: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::validation("sigma bracket must satisfy 0 < lo < hi"));
    }
    let f = |s: f64| HeterodyneSetup::from_sigma(flux, linewidth, s).map(|h| msse_exact(&h));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-10 * (1.0 + a.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Gauss–Legendre nodes covering `[lo, hi]²`, split along the diagonal so
/// that integrands with a `|a − b|` kink are smooth on each piece.
fn square_rule(lo: f64, hi: f64, order: usize) -> Vec<(f64, f64, f64)> {
    let (z, w) = gauss_legendre(order);
    let h = hi - lo;
    let mut out = Vec::with_capacity(2 * order * order);
    for (zi, wi) in z.iter().zip(&w) {
        let u = 0.5 * (zi + 1.0);
        let a = lo + h * u;
        for (zj, wj) in z.iter().zip(&w) {
            let v = 0.5 * (zj + 1.0);
            let b = lo + (a - lo) * v;
            let weight = 0.25 * wi * wj * h * (a - lo);
            out.push((a, b, weight));
            out.push((b, a, weight));
        }
    }
    out
}

/// Exponent of the ideal `g²(s, s′, t′, t)`.
fn ideal_g2(ell: f64, s: f64, sp: f64, tp: f64, t: f64) -> f64 {
    (-0.5
        * ell
        * ((s - t).abs() + (sp - tp).abs() + (s - tp).abs() + (t - sp).abs() - (s - sp).abs() - (t - tp).abs()))
        .exp()
}

fn quadrature_parts(setup: &HeterodyneSetup, order: usize) -> MsseParts {
    let (n, ell, tau) = (setup.flux, setup.linewidth, setup.tau);
    let pos = square_rule(0.0, tau, order);
    let neg = square_rule(-tau, 0.0, order);
    let g1: f64 = pos.iter().map(|&(s, t, w)| w * (-0.5 * ell * (s - t).abs()).exp()).sum();
    // ⟨S†S⟩: kinks at s = t′ and s′ = t
    let cross: f64 = pos
        .par_iter()
        .map(|&(s, tp, w1)| {
            neg.iter()
                .map(|&(sp, t, w2)| w2 * ideal_g2(ell, s, sp, tp, t))
                .sum::<f64>()
                * w1
        })
        .sum();
    // ⟨S²⟩: kinks at s = s′ and t′ = t
    let same: f64 = pos
        .par_iter()
        .map(|&(s, sp, w1)| {
            neg.iter()
                .map(|&(tp, t, w2)| w2 * ideal_g2(ell, s, sp, tp, t))
                .sum::<f64>()
                * w1
        })
        .sum();
    let s_dag_s = 1.0 + 2.0 * n / tau * g1 + n * n / (tau * tau) * cross;
    let s_squared = n * n / (tau * tau) * same;
    MsseParts {
        s_dag_s,
        s_squared,
        msse: (s_dag_s - s_squared) / (2.0 * n * n * tau * tau),
    }
}

/// Minimum Gauss–Legendre order per axis for the quadrature oracle.
pub const MIN_QUADRATURE_ORDER: usize = 24;

/// Quadrature result with its order-doubling error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureMsse {
    pub parts: MsseParts,
    pub order: usize,
    /// `|msse(2·order) − msse(order)| / msse(2·order)`.
    pub doubling_change: f64,
}

/// Direct 4-D quadrature of the ideal Glauber functions; reports the
/// doubled-order value.
pub fn msse_quadrature_with(setup: &HeterodyneSetup, order: usize, tol: f64) -> Result<QuadratureMsse> {
    if order < MIN_QUADRATURE_ORDER {
        return Err(Error::validation(format!(
            "quadrature order must be at least {MIN_QUADRATURE_ORDER}, got {order}"
        )));
    }
    let coarse = quadrature_parts(setup, order);
    let fine = quadrature_parts(setup, 2 * order);
    let change = ((fine.msse - coarse.msse) / fine.msse).abs();
    if !(change <= tol) {
        return Err(Error::numerical(
            format!("quadrature order {order} insufficient: doubling changed the MSE by {change:.3e}"),
            change,
        ));
    }
    Ok(QuadratureMsse {
        parts: fine,
        order: 2 * order,
        doubling_change: change,
    })
}

pub fn msse_quadrature(setup: &HeterodyneSetup) -> Result<f64> {
    msse_quadrature_with(setup, MIN_QUADRATURE_ORDER, 1e-8).map(|q| q.parts.msse)
}

/// Both sides of `2√(2ℓ/3N) ≥ 4|z_A/3|³/μ²` at `ℓ = 4N/𝔠`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundChain {
    pub mu: f64,
    pub coherence: f64,
    /// Asymptotic retrofiltering MSE.
    pub lhs: f64,
    /// Optimal cavity-measurement MSE.
    pub rhs: f64,
    /// `heisenberg_bound(μ) / 𝔠`, i.e. `(lhs/rhs)²`.
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundChain {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Relative tolerance at the saturation point.
pub const CHAIN_TOL: f64 = 1e-10;

pub fn bound_chain(mu: f64, coherence: f64) -> Result<BoundChain> {
    if !(mu > 0.0 && coherence > 0.0) {
        return Err(Error::validation(format!(
            "bound chain needs positive mu and coherence, got {mu} and {coherence}"
        )));
    }
    let flux = 1.0;
    let ell = 4.0 * flux / coherence;
    let lhs = 2.0 * (2.0 * ell / (3.0 * flux)).sqrt();
    let rhs = cavity_mse_constant() / (mu * mu);
    Ok(BoundChain {
        mu,
        coherence,
        lhs,
        rhs,
        slack: heisenberg_bound(mu) / coherence,
        satisfied: lhs >= rhs * (1.0 - CHAIN_TOL),
    })
}

/// `H(Binomial(j, ½))` in nats.
pub fn binomial_entropy(j: u64) -> f64 {
    if j < ASYMPTOTIC_FROM {
        // walk k = 0..=j with log p_{k+1} = log p_k + ln((j − k)/(k + 1))
        let mut lp = -(j as f64) * std::f64::consts::LN_2;
        let mut h = 0.0;
        for k in 0..=j {
            if lp > -745.0 {
                h -= lp.exp() * lp;
            }
            if k < j {
                lp += ((j - k) as f64 / (k + 1) as f64).ln();
            }
        }
        h
    } else {
        let n = j as f64;
        0.5 * (std::f64::consts::PI * std::f64::consts::E * n / 2.0).ln() - 1.0 / (12.0 * n * n)
    }
}

/// Beyond this `j` the entropy uses `½ln(πej/2) − 1/(12j²)`, whose
/// truncation error is below 1e-11 there.
pub const ASYMPTOTIC_FROM: u64 = 2000;

/// Value of the asymmetry sum and the bound on what the cutoff dropped.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Asymmetry {
    pub nbar: f64,
    pub cutoff: u64,
    pub value: f64,
    pub tail_bound: f64,
}

/// Largest tail bound accepted by [`g_asymmetry`].
pub const ASYMMETRY_TAIL_TOL: f64 = 1e-6;

/// `Σ_j ℘_j H(Binomial(j, ½))` with geometric `℘_j` of mean `nbar`.
pub fn g_asymmetry(nbar: f64, cutoff: u64) -> Result<Asymmetry> {
    if !(nbar > 0.0 && nbar.is_finite()) {
        return Err(Error::validation(format!("nbar must be positive, got {nbar}")));
    }
    if (cutoff as f64) < 50.0 * nbar {
        return Err(Error::validation(format!(
            "cutoff {cutoff} below 50 * nbar = {}",
            50.0 * nbar
        )));
    }
    let lq = (nbar / (1.0 + nbar)).ln();
    let lp0 = -(1.0 + nbar).ln();
    let value: f64 = (1..=cutoff)
        .into_par_iter()
        .map(|j| (lp0 + j as f64 * lq).exp() * binomial_entropy(j))
        .sum();
    // ln(j+1) ≤ ln(K+1) + (j−K)/(K+1) bounds H_j; beyond K the excess j−K
    // is geometric with mean nbar + 1
    let k = cutoff as f64;
    let tail_bound = ((k + 1.0) * lq).exp() * ((k + 1.0).ln() + (nbar + 1.0) / (k + 1.0));
    if tail_bound > ASYMMETRY_TAIL_TOL {
        return Err(Error::validation(format!(
            "cutoff {cutoff} leaves a tail bound {tail_bound:.3e} above {ASYMMETRY_TAIL_TOL:e}"
        )));
    }
    Ok(Asymmetry {
        nbar,
        cutoff,
        value,
        tail_bound,
    })
}

/// Default cutoff `⌈50·nbar⌉` (at least 50).
pub fn default_cutoff(nbar: f64) -> u64 {
    (50.0 * nbar).ceil().max(50.0) as u64
}
