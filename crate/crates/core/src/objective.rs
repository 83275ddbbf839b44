//! The log empirical saddlepoint (ESP) objective.
//!
//! At each θ the tilting problem is solved, then
//!
//! * `J = Σ w ∂ψ/∂θ'`, `V = Σ w ψψ'` (tilted weights),
//! * `Σ_T = J⁻¹ V J⁻ᵀ`,
//! * objective `ln K − (1/2T)·ln|Σ_T|`,
//!
//! which splits into
//! `M1 = (1 − m/2T)·ln K`,
//! `M2 = (1/T)·ln|det((1/T)Σ e^{τ'ψ} ∂ψ/∂θ')|`,
//! `M3 = −(1/2T)·ln det((1/T)Σ e^{τ'ψ} ψψ')`.
//!
//! θ where no tilt exists or `Σ_T` is not positive definite is outside the
//! support; its objective and densities are `−∞`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{EspError, Result};
use crate::linalg::{log_abs_det, sandwich, spd_log_det};
use crate::model::{Dataset, MomentModel, MomentValues};
use crate::parallel::{map_indexed, Execution};
use crate::tilting::{solve_tilt_values, tau_jacobian_values, TiltOptions, TiltingSolution};

#[derive(Debug, Clone)]
pub struct EspEvaluation {
    pub theta: Vec<f64>,
    pub tilting: TiltingSolution,
    /// `Σ_T(θ)`; all NaN outside the support.
    pub sigma_t: DMatrix<f64>,
    pub log_det_sigma: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub log_esp_objective: f64,
    pub log_esp_density: f64,
    pub log_et_density: f64,
    pub in_support: bool,
}

fn check_sample_size(model: &dyn MomentModel, data: &Dataset) -> Result<()> {
    model.validate_data(data)?;
    if data.n_rows() <= model.param_dim() {
        return Err(EspError::InvalidInput(format!(
            "need more than {} observations, got {}",
            model.param_dim(),
            data.n_rows()
        )));
    }
    Ok(())
}

fn density_offset(m: usize, n: f64) -> f64 {
    0.5 * m as f64 * (n / (2.0 * PI)).ln()
}

/// `Σ_T(θ)` for a converged tilt.
pub fn sigma_tilted(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    tilting: &TiltingSolution,
) -> Result<DMatrix<f64>> {
    model.validate_data(data)?;
    if !tilting.converged() {
        return Err(EspError::InvalidInput(format!(
            "tilting status is {}, θ is outside the support",
            tilting.status.as_str()
        )));
    }
    let values = MomentValues::compute(model, data, theta, true)?;
    let j = values.weighted_jacobian(Some(&tilting.weights));
    let v = values.weighted_outer(Some(&tilting.weights));
    sandwich(&j, &v)
        .ok_or_else(|| EspError::SingularMatrix("support boundary: tilted sandwich is not positive definite".into()))
}

/// Evaluates the objective and its decomposition at `theta`.
pub fn evaluate(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<EspEvaluation> {
    evaluate_with(model, data, theta, &TiltOptions::default())
}

pub fn evaluate_with(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    options: &TiltOptions,
) -> Result<EspEvaluation> {
    check_sample_size(model, data)?;
    let values = MomentValues::compute(model, data, theta, true)?;
    let tilting = solve_tilt_values(&values, options)?;
    Ok(evaluate_values(&values, theta, tilting))
}

fn outside(theta: &[f64], m: usize, n: f64, tilting: TiltingSolution) -> EspEvaluation {
    let log_et_density = if tilting.converged() {
        n * tilting.log_k + density_offset(m, n)
    } else {
        f64::NEG_INFINITY
    };
    EspEvaluation {
        theta: theta.to_vec(),
        tilting,
        sigma_t: DMatrix::from_element(m, m, f64::NAN),
        log_det_sigma: f64::NAN,
        m1: f64::NAN,
        m2: f64::NAN,
        m3: f64::NAN,
        log_esp_objective: f64::NEG_INFINITY,
        log_esp_density: f64::NEG_INFINITY,
        log_et_density,
        in_support: false,
    }
}

fn evaluate_values(values: &MomentValues, theta: &[f64], tilting: TiltingSolution) -> EspEvaluation {
    let m = values.dim();
    let n = values.n_rows() as f64;
    if !tilting.converged() {
        return outside(theta, m, n, tilting);
    }
    let j = values.weighted_jacobian(Some(&tilting.weights));
    let v = values.weighted_outer(Some(&tilting.weights));
    let (Some(ld_v), Some((ld_j, _)), Some(sigma)) = (spd_log_det(&v), log_abs_det(&j), sandwich(&j, &v)) else {
        return outside(theta, m, n, tilting);
    };
    let log_k = tilting.log_k;
    let log_det_sigma = ld_v - 2.0 * ld_j;
    let objective = log_k - log_det_sigma / (2.0 * n);

    let m1 = (1.0 - m as f64 / (2.0 * n)) * log_k;
    let (m2, m3) = raw_terms(values, &tilting.tau)
        .unwrap_or_else(|| ((m as f64 * log_k + ld_j) / n, -(m as f64 * log_k + ld_v) / (2.0 * n)));

    let offset = density_offset(m, n);
    EspEvaluation {
        theta: theta.to_vec(),
        sigma_t: sigma,
        log_det_sigma,
        m1,
        m2,
        m3,
        log_esp_objective: objective,
        log_esp_density: n * objective + offset,
        log_et_density: n * log_k + offset,
        in_support: true,
        tilting,
    }
}

/// `M2` and `M3` from the unnormalized tilted sums; `None` if they overflow.
fn raw_terms(values: &MomentValues, tau: &[f64]) -> Option<(f64, f64)> {
    let n = values.n_rows() as f64;
    let e: Vec<f64> = values
        .psi_rows()
        .map(|p| p.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>().exp() / n)
        .collect();
    if e.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let a = values.weighted_jacobian(Some(&e));
    let b = values.weighted_outer(Some(&e));
    let (ld_a, _) = log_abs_det(&a)?;
    let ld_b = spd_log_det(&b)?;
    Some((ld_a / n, -ld_b / (2.0 * n)))
}

/// Objective value only (no decomposition or sandwich); `−∞` outside the support.
pub fn objective_value(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<f64> {
    check_sample_size(model, data)?;
    let values = MomentValues::compute(model, data, theta, true)?;
    let tilt = solve_tilt_values(&values, &TiltOptions::default())?;
    if !tilt.converged() {
        return Ok(f64::NEG_INFINITY);
    }
    let j = values.weighted_jacobian(Some(&tilt.weights));
    let v = values.weighted_outer(Some(&tilt.weights));
    match (spd_log_det(&v), log_abs_det(&j)) {
        (Some(ld_v), Some((ld_j, _))) => Ok(tilt.log_k - (ld_v - 2.0 * ld_j) / (2.0 * values.n_rows() as f64)),
        _ => Ok(f64::NEG_INFINITY),
    }
}

/// `ln K(θ)` alone (the exponential-tilting criterion); `−∞` where no tilt exists.
pub fn log_k_value(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<f64> {
    model.validate_data(data)?;
    let values = MomentValues::compute(model, data, theta, false)?;
    let tilt = solve_tilt_values(&values, &TiltOptions::default())?;
    Ok(if tilt.converged() {
        tilt.log_k
    } else {
        f64::NEG_INFINITY
    })
}

/// Analytic total derivative of the objective with respect to θ.
///
/// Requires second derivatives of ψ from the model.
pub fn gradient_objective(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    check_sample_size(model, data)?;
    let m = model.param_dim();
    let mut hess = vec![0.0; m * m * m];
    if !model.psi_hessian(data.row(0), theta, &mut hess) {
        return Err(EspError::Unsupported(
            "model has no analytic second derivatives; use finite differences".into(),
        ));
    }
    let values = MomentValues::compute(model, data, theta, true)?;
    let tilt = solve_tilt_values(&values, &TiltOptions::default())?;
    if !tilt.converged() {
        return Err(EspError::InvalidInput("θ is outside the ESP support".into()));
    }
    let n = values.n_rows() as f64;
    let w = &tilt.weights;
    let tau = &tilt.tau;
    let j = values.weighted_jacobian(Some(w));
    let v = values.weighted_outer(Some(w));
    let (Some(j_inv), Some(v_inv)) = (crate::linalg::inverse(&j), v.clone().cholesky().map(|c| c.inverse())) else {
        return Err(EspError::SingularMatrix("support boundary at θ".into()));
    };
    let c1 = 1.0 - m as f64 / (2.0 * n);

    // partial derivatives at fixed τ
    let mut d_theta = vec![0.0; m];
    let mut d_tau = vec![0.0; m];
    let mut a2 = vec![DMatrix::<f64>::zeros(m, m); m];
    let mut a3 = vec![DMatrix::<f64>::zeros(m, m); m];
    let mut b2 = vec![DMatrix::<f64>::zeros(m, m); m];
    let mut b3 = vec![DMatrix::<f64>::zeros(m, m); m];
    let mut tdj = vec![0.0; m];
    for (t, row) in data.rows().enumerate() {
        let wt = w[t];
        let d = values.jacobian(t);
        let p = values.psi(t);
        model.psi_hessian(row, theta, &mut hess);
        for (jj, x) in tdj.iter_mut().enumerate() {
            *x = (0..m).map(|i| tau[i] * d[i * m + jj]).sum();
        }
        for jj in 0..m {
            d_theta[jj] += c1 * wt * tdj[jj];
            for i in 0..m {
                for k in 0..m {
                    a2[jj][(i, k)] += wt * (hess[(jj * m + i) * m + k] + tdj[jj] * d[i * m + k]);
                    a3[jj][(i, k)] += wt * (d[i * m + jj] * p[k] + p[i] * d[k * m + jj] + tdj[jj] * p[i] * p[k]);
                }
            }
        }
        for kk in 0..m {
            d_tau[kk] += c1 * wt * p[kk];
            for i in 0..m {
                for k in 0..m {
                    b2[kk][(i, k)] += wt * p[kk] * d[i * m + k];
                    b3[kk][(i, k)] += wt * p[kk] * p[i] * p[k];
                }
            }
        }
    }
    for jj in 0..m {
        d_theta[jj] += (&j_inv * &a2[jj]).trace() / n - (&v_inv * &a3[jj]).trace() / (2.0 * n);
        d_tau[jj] += (&j_inv * &b2[jj]).trace() / n - (&v_inv * &b3[jj]).trace() / (2.0 * n);
    }
    let dtau_dtheta = tau_jacobian_values(&values, &tilt)?;
    Ok((0..m)
        .map(|jj| d_theta[jj] + (0..m).map(|k| d_tau[k] * dtau_dtheta[(k, jj)]).sum::<f64>())
        .collect())
}

/// Partial derivative of `M1` with respect to τ at the solved tilt.
pub fn d_m1_d_tau(tilting: &TiltingSolution, values: &MomentValues) -> Vec<f64> {
    let m = values.dim();
    let c1 = 1.0 - m as f64 / (2.0 * values.n_rows() as f64);
    let mut out = vec![0.0; m];
    for (w, p) in tilting.weights.iter().zip(values.psi_rows()) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += c1 * w * v;
        }
    }
    out
}

/// One grid point of a profile.
#[derive(Debug, Clone)]
pub struct ProfileRow {
    pub theta: Vec<f64>,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub log_esp_objective: f64,
    pub log_esp_density: f64,
    pub log_et_density: f64,
    /// Normalized densities (m = 1 only; 0 outside the support, NaN for m > 1).
    pub norm_esp: f64,
    pub norm_et: f64,
    pub in_support: bool,
}

/// Evaluates the objective on `grid`. For one-parameter models the ESP and
/// ET densities are also normalized to integrate to one under the trapezoid
/// rule on the grid, which must then be ascending.
pub fn profile(model: &dyn MomentModel, data: &Dataset, grid: &[Vec<f64>], exec: Execution) -> Result<Vec<ProfileRow>> {
    if grid.is_empty() {
        return Err(EspError::InvalidInput("profile grid is empty".into()));
    }
    check_sample_size(model, data)?;
    let m = model.param_dim();
    if m == 1 && grid.windows(2).any(|w| w[1][0] <= w[0][0]) {
        return Err(EspError::InvalidInput("profile grid must be strictly ascending".into()));
    }
    let evals = map_indexed(grid.len(), exec, |i| evaluate(model, data, &grid[i]));
    let mut rows = Vec::with_capacity(grid.len());
    for e in evals {
        let e = e?;
        rows.push(ProfileRow {
            theta: e.theta,
            m1: e.m1,
            m2: e.m2,
            m3: e.m3,
            log_esp_objective: e.log_esp_objective,
            log_esp_density: e.log_esp_density,
            log_et_density: e.log_et_density,
            norm_esp: f64::NAN,
            norm_et: f64::NAN,
            in_support: e.in_support,
        });
    }
    if m == 1 {
        let xs: Vec<f64> = rows.iter().map(|r| r.theta[0]).collect();
        let esp = normalize(&xs, &rows.iter().map(|r| r.log_esp_density).collect::<Vec<_>>());
        let et = normalize(&xs, &rows.iter().map(|r| r.log_et_density).collect::<Vec<_>>());
        for ((r, a), b) in rows.iter_mut().zip(esp).zip(et) {
            r.norm_esp = a;
            r.norm_et = b;
        }
    }
    Ok(rows)
}

/// `exp(l − max l)` scaled so its trapezoid integral over `xs` is one.
fn normalize(xs: &[f64], logs: &[f64]) -> Vec<f64> {
    let top = logs
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return vec![0.0; logs.len()];
    }
    let vals: Vec<f64> = logs
        .iter()
        .map(|l| if l.is_finite() { (l - top).exp() } else { 0.0 })
        .collect();
    let area = trapezoid(xs, &vals);
    if !(area > 0.0) {
        return vec![0.0; logs.len()];
    }
    vals.into_iter().map(|v| v / area).collect()
}

pub(crate) fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_hall_horowitz, ParamBox, HH_THETA0};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    struct Location(ParamBox);
    impl MomentModel for Location {
        fn param_dim(&self) -> usize {
            1
        }
        fn data_dim(&self) -> usize {
            1
        }
        fn param_box(&self) -> &ParamBox {
            &self.0
        }
        fn psi(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
            out[0] = theta[0] - row[0];
        }
    }

    fn loc() -> Location {
        Location(ParamBox::new(vec![-10.0], vec![10.0]).unwrap())
    }

    fn hh_sample(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 0.4).unwrap();
        Dataset::from_rows((0..n).map(|_| vec![nd.sample(&mut rng), nd.sample(&mut rng)]).collect()).unwrap()
    }

    #[test]
    fn location_sigma_is_sample_variance() {
        let xs = [0.5, 1.5, -0.25, 2.0, 1.0];
        let d = Dataset::from_rows(xs.iter().map(|x| vec![*x]).collect()).unwrap();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        let e = evaluate(&loc(), &d, &[mean]).unwrap();
        assert!(e.in_support);
        // finite-difference jacobian of a linear map
        assert!((e.sigma_t[(0, 0)] - var).abs() < 1e-9);
        assert!(e.m1.abs() < 1e-15);
        assert!((e.log_esp_objective + var.ln() / 10.0).abs() < 1e-9);
    }

    #[test]
    fn decomposition_identity_holds() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(5, 60);
        for (b, mu) in [(3.0, -0.72), (2.0, -0.5), (4.0, -0.9), (3.3, -0.6)] {
            let e = evaluate(&hh, &d, &[b, mu]).unwrap();
            assert!(e.in_support);
            assert!((e.m1 + e.m2 + e.m3 - e.log_esp_objective).abs() < 1e-10);
            let n = 60.0;
            assert!((e.log_esp_density - n * e.log_esp_objective - (n / (2.0 * PI)).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn outside_support_is_sentinel() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let e = evaluate(&loc(), &d, &[5.0]).unwrap();
        assert!(!e.in_support);
        assert_eq!(e.log_esp_objective, f64::NEG_INFINITY);
        assert!(e.m1.is_nan());
    }

    #[test]
    fn rejects_tiny_samples() {
        let hh = builtin_hall_horowitz();
        let d = Dataset::from_rows(vec![vec![0.1, 0.2], vec![0.3, -0.1]]).unwrap();
        assert!(matches!(evaluate(&hh, &d, &HH_THETA0), Err(EspError::InvalidInput(_))));
    }

    #[test]
    fn gradient_matches_differences() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(9, 50);
        let g = gradient_objective(&hh, &d, &HH_THETA0).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let mut tp = HH_THETA0;
            let mut tm = HH_THETA0;
            tp[k] += h;
            tm[k] -= h;
            let fd = (objective_value(&hh, &d, &tp).unwrap() - objective_value(&hh, &d, &tm).unwrap()) / (2.0 * h);
            assert!(
                (g[k] - fd).abs() <= 1e-4 * g[k].abs().max(1e-3),
                "{k}: {} vs {fd}",
                g[k]
            );
        }
    }

    #[test]
    fn gradient_needs_hessian() {
        let d = Dataset::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(matches!(
            gradient_objective(&loc(), &d, &[2.1]),
            Err(EspError::Unsupported(_))
        ));
    }

    #[test]
    fn profile_normalizes_to_one() {
        let xs = [0.5, 1.5, -0.25, 2.0, 1.0, 0.3];
        let d = Dataset::from_rows(xs.iter().map(|x| vec![*x]).collect()).unwrap();
        let grid: Vec<Vec<f64>> = (0..201).map(|i| vec![-1.0 + 0.0175 * i as f64]).collect();
        let rows = profile(&loc(), &d, &grid, Execution::Sequential).unwrap();
        let gx: Vec<f64> = grid.iter().map(|g| g[0]).collect();
        let a = trapezoid(&gx, &rows.iter().map(|r| r.norm_esp).collect::<Vec<_>>());
        let b = trapezoid(&gx, &rows.iter().map(|r| r.norm_et).collect::<Vec<_>>());
        assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        assert!(rows.iter().filter(|r| !r.in_support).all(|r| r.norm_esp == 0.0));
    }
}
