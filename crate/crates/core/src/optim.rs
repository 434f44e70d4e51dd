//! Box-constrained Nelder–Mead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Settings for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the simplex spread in `f` falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial edge length (per coordinate, before clamping).
    pub step: f64,
    /// Number of restarts from the incumbent with a fresh simplex.
    pub restarts: usize,
    /// Seed for the orientation of restart simplices.
    pub seed: u64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 2000,
            f_tol: 1e-12,
            x_tol: 1e-10,
            step: 0.1,
            restarts: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Minimizes `f` over the box `[lo, hi]`; trial points are clamped into the
/// box. Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_x = x0.to_vec();
    clamp(&mut best_x, lo, hi);
    let mut best_f = eval(&best_x, &mut evals);
    let mut converged = false;

    for round in 0..=opts.restarts {
        if evals >= opts.max_evals {
            break;
        }
        let mut simplex: Vec<Vec<f64>> = vec![best_x.clone()];
        for i in 0..n {
            let mut p = best_x.clone();
            let sign = if round == 0 || rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let width = (hi[i] - lo[i]).min(1e300);
            let mut h = sign * opts.step * best_x[i].abs().max(1.0);
            if width.is_finite() {
                h = h.clamp(-0.5 * width, 0.5 * width);
            }
            p[i] += h;
            if p[i] > hi[i] || p[i] < lo[i] {
                p[i] = best_x[i] - h;
            }
            clamp(&mut p, lo, hi);
            simplex.push(p);
        }
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        values.push(best_f);
        for p in &simplex[1..] {
            values.push(eval(p, &mut evals));
        }
        converged = false;
        while evals < opts.max_evals {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();
            let spread = (values[n] - values[0]).abs();
            let diam = simplex[1..]
                .iter()
                .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if spread <= opts.f_tol * (1.0 + values[0].abs()) && diam <= opts.x_tol.max(1e-6 * opts.step)
                || diam <= opts.x_tol
            {
                converged = true;
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (w - c))
                    .collect();
                clamp(&mut p, lo, hi);
                p
            };
            let xr = along(-1.0);
            let fr = eval(&xr, &mut evals);
            if fr < values[0] {
                let xe = along(-2.0);
                let fe = eval(&xe, &mut evals);
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let (xc, fc) = if fr < values[n] {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    for i in 1..=n {
                        let mut p: Vec<f64> = simplex[0]
                            .iter()
                            .zip(&simplex[i])
                            .map(|(b, x)| b + 0.5 * (x - b))
                            .collect();
                        clamp(&mut p, lo, hi);
                        values[i] = eval(&p, &mut evals);
                        simplex[i] = p;
                    }
                }
            }
        }
        let (ib, fb) = values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        if fb < best_f {
            best_f = fb;
            best_x = simplex[ib].clone();
        }
    }
    NelderMeadResult {
        x: best_x,
        f: best_f,
        evals,
        converged,
    }
}
