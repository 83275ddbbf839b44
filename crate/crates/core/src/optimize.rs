//! Local optimizers used by the estimators: Nelder–Mead for maximization
//! and damped Newton for root finding.

use nalgebra::{DMatrix, DVector};

use crate::linalg::norm;
use crate::model::ParamBox;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values is below `ftol·(1+|f|)`...
    pub ftol: f64,
    /// ...and the simplex diameter is below `xtol·(1+‖x‖)`.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            ftol: 1e-13,
            xtol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Maximizes `f` from `x0` with an initial simplex spanned by `steps`.
///
/// `f` may return `−∞` (or NaN, treated as `−∞`) at infeasible points; the
/// simplex then contracts away from them.
pub fn nelder_mead_max<F>(f: F, x0: &[f64], steps: &[f64], options: &NelderMeadOptions) -> NelderMeadOutcome
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    // Internally minimize g = −f.
    let g = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for j in 0..n {
        let mut p = x0.to_vec();
        p[j] += steps[j];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| g(p)).collect();
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(pts[a].partial_cmp(&pts[b]).unwrap()));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let best = vals[0];
        if best.is_finite() {
            let spread = vals[n] - best;
            let diam = pts[1..]
                .iter()
                .map(|p| norm(&p.iter().zip(&pts[0]).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .fold(0.0, f64::max);
            if spread <= options.ftol * (1.0 + best.abs()) && diam <= options.xtol * (1.0 + norm(&pts[0])) {
                converged = true;
                break;
            }
        } else {
            // every vertex is infeasible
            break;
        }
        if evals.get() >= options.max_evals {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = g(&xr);
        if fr < vals[0] {
            let xe = along(2.0);
            let fe = g(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(0.5);
            let fc = g(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = g(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            vals[i] = g(&p);
            pts[i] = p;
        }
    }
    NelderMeadOutcome {
        x: pts[0].clone(),
        value: -vals[0],
        evaluations: evals.get(),
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct RootOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped Newton for `F(x) = 0` with iterates clamped to `bounds`.
///
/// `eval` returns `F(x)` and its jacobian, or `None` where `F` cannot be
/// evaluated. Returns the last accepted iterate (even when not below `tol`),
/// or `None` if `x0` itself cannot be evaluated.
pub fn newton_root<F>(eval: F, x0: &[f64], bounds: Option<&ParamBox>, tol: f64, max_iter: usize) -> Option<RootOutcome>
where
    F: Fn(&[f64]) -> Option<(Vec<f64>, DMatrix<f64>)>,
{
    let mut x = x0.to_vec();
    if let Some(b) = bounds {
        b.clamp(&mut x);
    }
    let (mut fx, mut jx) = eval(&x)?;
    let mut r = norm(&fx);
    let mut iterations = 0;
    while r > tol && iterations < max_iter {
        iterations += 1;
        let Some(step) = jx.clone().lu().solve(&DVector::from_column_slice(&fx)) else {
            break;
        };
        if step.iter().any(|s| !s.is_finite()) {
            break;
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            if let Some(b) = bounds {
                b.clamp(&mut trial);
            }
            if let Some((ft, jt)) = eval(&trial) {
                let rt = norm(&ft);
                if rt < (1.0 - 1e-4 * alpha) * r || (rt < r && alpha < 1e-6) {
                    x = trial;
                    fx = ft;
                    jx = jt;
                    r = rt;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Some(RootOutcome {
        x,
        residual: r,
        iterations,
    })
}
