//! The exponential-tilting inner problem.
//!
//! For fixed θ, τ_T(θ) minimizes the strictly convex dual
//! `K(τ) = (1/T)·Σ_t exp(τ'ψ_t(θ))`. Its first-order condition is the tilting
//! equation `Σ_t exp(τ'ψ_t)·ψ_t = 0`, and the tilted weights are
//! `w_t ∝ exp(τ'ψ_t)`.
//!
//! All sums are taken with the exponent shifted by its maximum, so the solver
//! works with `ln K` and the normalized gradient `ḡ = Σ w_t ψ_t` and never
//! overflows.

use nalgebra::{DMatrix, DVector};

use crate::error::{EspError, Result};
use crate::linalg::{norm, spd_solve};
use crate::model::{Dataset, MomentModel, MomentValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiltStatus {
    Converged,
    /// Zero is not in the interior of the convex hull of `{ψ_t(θ)}`.
    NoInteriorSolution,
    MaxIterations,
}

impl TiltStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TiltStatus::Converged => "converged",
            TiltStatus::NoInteriorSolution => "no-interior-solution",
            TiltStatus::MaxIterations => "max-iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TiltOptions {
    /// Convergence tolerance on the gradient norm; `None` uses
    /// `1e-10·(1 + mean|ψ|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub tau_init: Option<Vec<f64>>,
}

impl Default for TiltOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 200,
            tau_init: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TiltingSolution {
    pub tau: Vec<f64>,
    pub weights: Vec<f64>,
    pub k_value: f64,
    pub log_k: f64,
    /// `‖(1/T)·Σ exp(τ'ψ_t)·ψ_t‖` at the returned τ.
    pub residual_norm: f64,
    pub iterations: usize,
    pub status: TiltStatus,
}

impl TiltingSolution {
    pub fn converged(&self) -> bool {
        self.status == TiltStatus::Converged
    }
}

/// Quantities of the dual at one τ, all in normalized (weight) form.
struct DualPoint {
    log_k: f64,
    weights: Vec<f64>,
    grad: Vec<f64>,
}

fn dual_point(values: &MomentValues, tau: &[f64]) -> DualPoint {
    let n = values.n_rows();
    let m = values.dim();
    let mut weights: Vec<f64> = values
        .psi_rows()
        .map(|p| p.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let smax = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in weights.iter_mut() {
        *s = (*s - smax).exp();
        sum += *s;
    }
    let inv = 1.0 / sum;
    let mut grad = vec![0.0; m];
    for (w, p) in weights.iter_mut().zip(values.psi_rows()) {
        *w *= inv;
        for (g, v) in grad.iter_mut().zip(p) {
            *g += *w * v;
        }
    }
    DualPoint {
        log_k: smax + sum.ln() - (n as f64).ln(),
        weights,
        grad,
    }
}

fn tilted_second_moment(values: &MomentValues, weights: &[f64]) -> DMatrix<f64> {
    values.weighted_outer(Some(weights))
}

/// Solves the tilting equation at `theta`.
pub fn solve_tilt(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    options: &TiltOptions,
) -> Result<TiltingSolution> {
    model.validate_data(data)?;
    let values = MomentValues::compute(model, data, theta, false)?;
    solve_tilt_values(&values, options)
}

/// Solves the tilting equation for precomputed moment rows.
pub fn solve_tilt_values(values: &MomentValues, options: &TiltOptions) -> Result<TiltingSolution> {
    let m = values.dim();
    let n = values.n_rows() as f64;
    let scale = values.mean_abs_psi();
    let tol = options.tol.unwrap_or(1e-10 * (1.0 + scale));
    let tau_bound = 1e4 * (1.0 + 1.0 / scale.max(f64::MIN_POSITIVE));
    let floor = -n.ln() - 1e-12;

    let mut tau = match &options.tau_init {
        Some(t) if t.len() == m => t.clone(),
        Some(t) => {
            return Err(EspError::InvalidInput(format!(
                "tau_init has length {}, expected {m}",
                t.len()
            )))
        }
        None => vec![0.0; m],
    };
    let mut point = dual_point(values, &tau);
    let mut iterations = 0;

    let finish = |tau: Vec<f64>, point: DualPoint, iterations, status| {
        let k_value = point.log_k.exp();
        TiltingSolution {
            residual_norm: k_value * norm(&point.grad),
            k_value,
            log_k: point.log_k,
            weights: point.weights,
            tau,
            iterations,
            status,
        }
    };

    loop {
        let gnorm = norm(&point.grad);
        if gnorm <= tol {
            return Ok(finish(tau, point, iterations, TiltStatus::Converged));
        }
        if point.log_k < floor || norm(&tau) > tau_bound {
            return Ok(finish(tau, point, iterations, TiltStatus::NoInteriorSolution));
        }
        if iterations >= options.max_iter {
            return Ok(finish(tau, point, iterations, TiltStatus::MaxIterations));
        }
        let h = tilted_second_moment(values, &point.weights);
        let g = DVector::from_column_slice(&point.grad);
        let Some(step) = spd_solve(&h, &g) else {
            return Ok(finish(tau, point, iterations, TiltStatus::NoInteriorSolution));
        };
        let dir: Vec<f64> = step.iter().map(|v| -v).collect();
        let slope: f64 = point.grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) || dir.iter().any(|v| !v.is_finite()) {
            return Ok(finish(tau, point, iterations, TiltStatus::NoInteriorSolution));
        }

        let slack = 4.0 * f64::EPSILON * point.log_k.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = tau.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            let next = dual_point(values, &trial);
            let dl = next.log_k - point.log_k;
            let armijo = dl.exp() <= 1.0 + 1e-4 * alpha * slope;
            let monotone = dl <= slack;
            if next.log_k.is_finite() && monotone && (armijo || norm(&next.grad) < gnorm) {
                accepted = Some((trial, next));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((t, p)) => {
                tau = t;
                point = p;
            }
            None => return Ok(finish(tau, point, iterations, TiltStatus::MaxIterations)),
        }
    }
}

/// `Σ_t w_t·ln(T·w_t)`, the divergence of `weights` from the empirical
/// distribution.
pub fn kl_divergence(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(EspError::InvalidInput("empty weight vector".into()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(EspError::InvalidInput("weights must be strictly positive".into()));
    }
    let n = weights.len() as f64;
    Ok(weights.iter().map(|w| w * (n * w).ln()).sum())
}

/// Implicit-function derivative `∂τ_T/∂θ'`:
/// `−[Σ w ψψ']⁻¹·[Σ w (∂ψ/∂θ' + ψ·τ'∂ψ/∂θ')]`.
pub fn tau_jacobian(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    solution: &TiltingSolution,
) -> Result<DMatrix<f64>> {
    model.validate_data(data)?;
    let values = MomentValues::compute(model, data, theta, true)?;
    tau_jacobian_values(&values, solution)
}

pub fn tau_jacobian_values(values: &MomentValues, solution: &TiltingSolution) -> Result<DMatrix<f64>> {
    if !solution.converged() {
        return Err(EspError::InvalidInput(format!(
            "tilting status is {}, not converged",
            solution.status.as_str()
        )));
    }
    let m = values.dim();
    let w = &solution.weights;
    let tau = &solution.tau;
    let v = values.weighted_outer(Some(w));
    let mut b = DMatrix::<f64>::zeros(m, m);
    let mut td = vec![0.0; m];
    for (t, wt) in w.iter().enumerate() {
        let d = values.jacobian(t);
        let p = values.psi(t);
        for (k, tdk) in td.iter_mut().enumerate() {
            *tdk = (0..m).map(|i| tau[i] * d[i * m + k]).sum();
        }
        for i in 0..m {
            for k in 0..m {
                b[(i, k)] += wt * (d[i * m + k] + p[i] * td[k]);
            }
        }
    }
    let chol = v
        .cholesky()
        .ok_or_else(|| EspError::SingularMatrix("tilted second-moment matrix".into()))?;
    let out = -chol.solve(&b);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(EspError::SingularMatrix("tilted second-moment matrix".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_hall_horowitz, HH_THETA0};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn values(psi: &[f64]) -> MomentValues {
        MomentValues::from_psi(psi.to_vec(), 1).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_point_tilt_matches_bisection() {
        let sol = solve_tilt_values(&values(&[-1.0, 2.0, -1.0, 2.0]), &TiltOptions::default()).unwrap();
        assert!(sol.converged());
        let oracle = bisect(|t| -(-t).exp() + 2.0 * (2.0 * t).exp(), -5.0, 5.0);
        assert!((sol.tau[0] - oracle).abs() < 1e-10);
        assert!((oracle + 2f64.ln() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn same_sign_has_no_interior_solution() {
        let sol = solve_tilt_values(&values(&[0.5; 6]), &TiltOptions::default()).unwrap();
        assert_eq!(sol.status, TiltStatus::NoInteriorSolution);
    }

    #[test]
    fn exact_root_needs_no_tilt() {
        let sol = solve_tilt_values(&values(&[-1.0, 0.5, 0.5]), &TiltOptions::default()).unwrap();
        assert!(sol.converged());
        assert_eq!(sol.tau, vec![0.0]);
        assert_eq!(sol.log_k, 0.0);
        assert!(sol.weights.iter().all(|w| *w == 1.0 / 3.0));
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn kl_limits() {
        assert_eq!(kl_divergence(&[0.25; 4]).unwrap(), 0.0);
        let near = kl_divergence(&[1.0 - 1e-12, 1e-12]).unwrap();
        assert!((near - 2f64.ln()).abs() < 1e-9);
        assert!(kl_divergence(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn kl_equals_minus_log_k_at_solution() {
        let sol = solve_tilt_values(&values(&[-0.3, 1.7, 0.2, -0.9, 0.4]), &TiltOptions::default()).unwrap();
        let kl = kl_divergence(&sol.weights).unwrap();
        assert!((kl + sol.log_k).abs() < 1e-12);
        assert!(sol.log_k <= 0.0);
    }

    #[test]
    fn large_moments_do_not_overflow() {
        let sol = solve_tilt_values(&values(&[-1e3, 5e3, 2e3, -4e3, 1e4]), &TiltOptions::default()).unwrap();
        assert!(sol.converged());
        assert!(sol.weights.iter().all(|w| w.is_finite() && *w > 0.0));
    }

    #[test]
    fn tau_jacobian_matches_differences() {
        let hh = builtin_hall_horowitz();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let nd = Normal::new(0.0, 0.4).unwrap();
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![nd.sample(&mut rng), nd.sample(&mut rng)])
            .collect();
        let data = Dataset::from_rows(rows).unwrap();
        let theta = [HH_THETA0[0] + 0.1, HH_THETA0[1] + 0.1];
        let opts = TiltOptions::default();
        let sol = solve_tilt(&hh, &data, &theta, &opts).unwrap();
        let an = tau_jacobian(&hh, &data, &theta, &sol).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += h;
            tm[k] -= h;
            let sp = solve_tilt(&hh, &data, &tp, &opts).unwrap();
            let sm = solve_tilt(&hh, &data, &tm, &opts).unwrap();
            for i in 0..2 {
                let fd = (sp.tau[i] - sm.tau[i]) / (2.0 * h);
                let a = an[(i, k)];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(1e-2), "({i},{k}) {a} vs {fd}");
            }
        }
    }
}
