//! Just-identified moment-condition models.
//!
//! A model maps one observation row `x` and a parameter vector `θ` (length m)
//! to the moment vector `ψ(x, θ)` (also length m). Analytic first and second
//! derivatives are optional; without an analytic jacobian, central finite
//! differences are used.

mod crra;
mod data;
mod hall_horowitz;

use nalgebra::DMatrix;

pub use crra::{builtin_crra, CrraColumns, CrraModel};
pub use data::Dataset;
pub use hall_horowitz::{builtin_hall_horowitz, HallHorowitz, HH_THETA0};

use crate::error::{EspError, Result};

/// Componentwise bounds describing the compact parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(EspError::InvalidInput("box bounds have mismatched lengths".into()));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(EspError::InvalidInput(
                "box requires finite lower < upper in every coordinate".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }

    /// Cell-centred grid with `per_dim` points per coordinate, in
    /// lexicographic order (last coordinate fastest).
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let m = self.dim();
        let axes: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let w = (self.upper[j] - self.lower[j]) / per_dim as f64;
                (0..per_dim).map(|i| self.lower[j] + (i as f64 + 0.5) * w).collect()
            })
            .collect();
        let total = per_dim.pow(m as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; m];
                for j in (0..m).rev() {
                    p[j] = axes[j][idx % per_dim];
                    idx /= per_dim;
                }
                p
            })
            .collect()
    }
}

/// The moment function of a just-identified model.
///
/// Implementations must be pure: the same inputs always give the same
/// outputs, and evaluation may happen concurrently from several threads.
/// User-defined models plug into every estimator through this trait.
pub trait MomentModel: Send + Sync {
    /// Number of parameters m (equal to the number of moments).
    fn param_dim(&self) -> usize;

    /// Number of data columns p the model reads.
    fn data_dim(&self) -> usize;

    fn param_box(&self) -> &ParamBox;

    fn param_names(&self) -> Vec<String> {
        (0..self.param_dim()).map(|i| format!("theta{i}")).collect()
    }

    /// Writes ψ(row, θ) into `out` (length m).
    fn psi(&self, row: &[f64], theta: &[f64], out: &mut [f64]);

    /// Whether [`MomentModel::psi_jacobian`] is analytic.
    fn has_analytic_jacobian(&self) -> bool {
        false
    }

    /// Writes ∂ψ/∂θ' row-major into `out` (length m²): `out[i*m + k] = ∂ψ_i/∂θ_k`.
    ///
    /// The default uses central differences with step
    /// `cbrt(ε)·max(1, |θ_k|)`.
    fn psi_jacobian(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        central_difference_jacobian(|th, o| self.psi(row, th, o), theta, out);
    }

    /// Writes second derivatives into `out` (length m³):
    /// `out[(j*m + i)*m + k] = ∂²ψ_i/∂θ_j∂θ_k`. Returns `false` when the
    /// model supplies no analytic second derivatives.
    fn psi_hessian(&self, _row: &[f64], _theta: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Checks that `data` can be fed to this model.
    fn validate_data(&self, data: &Dataset) -> Result<()> {
        if data.n_cols() != self.data_dim() {
            return Err(EspError::InvalidInput(format!(
                "model expects {} data columns, dataset has {}",
                self.data_dim(),
                data.n_cols()
            )));
        }
        Ok(())
    }
}

/// Central-difference jacobian of `f: R^m → R^m` at `theta`.
pub fn central_difference_jacobian<F>(f: F, theta: &[f64], out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = theta.len();
    let mut tp = theta.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    let base = f64::EPSILON.cbrt();
    for k in 0..m {
        let h = base * theta[k].abs().max(1.0);
        tp[k] = theta[k] + h;
        let hp = tp[k] - theta[k];
        f(&tp, &mut fp);
        tp[k] = theta[k] - h;
        let hm = theta[k] - tp[k];
        f(&tp, &mut fm);
        tp[k] = theta[k];
        for i in 0..m {
            out[i * m + k] = (fp[i] - fm[i]) / (hp + hm);
        }
    }
}

fn check_theta(model: &dyn MomentModel, theta: &[f64]) -> Result<()> {
    if theta.len() != model.param_dim() {
        return Err(EspError::InvalidInput(format!(
            "theta has length {}, model expects {}",
            theta.len(),
            model.param_dim()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(EspError::InvalidInput("theta has non-finite entries".into()));
    }
    Ok(())
}

/// Per-row moment values (and optionally jacobians) at one θ.
#[derive(Debug, Clone)]
pub struct MomentValues {
    m: usize,
    n_rows: usize,
    psi: Vec<f64>,
    jac: Option<Vec<f64>>,
}

impl MomentValues {
    pub fn compute(model: &dyn MomentModel, data: &Dataset, theta: &[f64], with_jacobian: bool) -> Result<Self> {
        check_theta(model, theta)?;
        let m = model.param_dim();
        let n_rows = data.n_rows();
        let mut psi = vec![0.0; n_rows * m];
        for (t, (row, out)) in data.rows().zip(psi.chunks_exact_mut(m)).enumerate() {
            model.psi(row, theta, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(EspError::NumericDomain {
                    row: t,
                    message: "moment function is not finite".into(),
                });
            }
        }
        let jac = if with_jacobian {
            let mut jac = vec![0.0; n_rows * m * m];
            for (t, (row, out)) in data.rows().zip(jac.chunks_exact_mut(m * m)).enumerate() {
                model.psi_jacobian(row, theta, out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(EspError::NumericDomain {
                        row: t,
                        message: "moment jacobian is not finite".into(),
                    });
                }
            }
            Some(jac)
        } else {
            None
        };
        Ok(Self { m, n_rows, psi, jac })
    }

    /// Wraps precomputed moment rows (row-major, T×m) without jacobians.
    pub fn from_psi(psi: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || !psi.len().is_multiple_of(m) || psi.is_empty() {
            return Err(EspError::InvalidInput("moment buffer is not T×m".into()));
        }
        if let Some(pos) = psi.iter().position(|v| !v.is_finite()) {
            return Err(EspError::NumericDomain {
                row: pos / m,
                message: "moment value is not finite".into(),
            });
        }
        Ok(Self {
            m,
            n_rows: psi.len() / m,
            psi,
            jac: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn psi(&self, t: usize) -> &[f64] {
        &self.psi[t * self.m..(t + 1) * self.m]
    }

    pub fn psi_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.psi.chunks_exact(self.m)
    }

    /// Row-major m×m jacobian of row `t`. Panics if computed without jacobians.
    pub fn jacobian(&self, t: usize) -> &[f64] {
        let mm = self.m * self.m;
        &self.jac.as_ref().expect("jacobians were not computed")[t * mm..(t + 1) * mm]
    }

    pub fn has_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn mean_abs_psi(&self) -> f64 {
        self.psi.iter().map(|v| v.abs()).sum::<f64>() / self.psi.len() as f64
    }

    pub fn mean_psi(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.m];
        for r in self.psi_rows() {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = self.n_rows as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// `Σ_t w_t ∂ψ_t/∂θ'` (uniform `1/T` weights when `weights` is `None`).
    pub fn weighted_jacobian(&self, weights: Option<&[f64]>) -> DMatrix<f64> {
        let m = self.m;
        let mut acc = DMatrix::zeros(m, m);
        let uniform = 1.0 / self.n_rows as f64;
        for t in 0..self.n_rows {
            let w = weights.map_or(uniform, |w| w[t]);
            let j = self.jacobian(t);
            for i in 0..m {
                for k in 0..m {
                    acc[(i, k)] += w * j[i * m + k];
                }
            }
        }
        acc
    }

    /// `Σ_t w_t ψ_t ψ_t'` (uniform weights when `weights` is `None`).
    pub fn weighted_outer(&self, weights: Option<&[f64]>) -> DMatrix<f64> {
        let m = self.m;
        let mut acc = DMatrix::zeros(m, m);
        let uniform = 1.0 / self.n_rows as f64;
        for (t, p) in self.psi_rows().enumerate() {
            let w = weights.map_or(uniform, |w| w[t]);
            for i in 0..m {
                for k in 0..=i {
                    acc[(i, k)] += w * p[i] * p[k];
                }
            }
        }
        for i in 0..m {
            for k in 0..i {
                acc[(k, i)] = acc[(i, k)];
            }
        }
        acc
    }
}

/// `(1/T)·Σ_t ψ(X_t, θ)`.
pub fn eval_psi_bar(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    model.validate_data(data)?;
    Ok(MomentValues::compute(model, data, theta, false)?.mean_psi())
}

/// `Σ_t w_t ∂ψ(X_t,θ)/∂θ'`, with uniform weights `1/T` when none are given.
pub fn jacobian_bar(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    weights: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    model.validate_data(data)?;
    if let Some(w) = weights {
        if w.len() != data.n_rows() {
            return Err(EspError::InvalidInput(format!(
                "{} weights for {} rows",
                w.len(),
                data.n_rows()
            )));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(EspError::InvalidInput("weights must be nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(EspError::InvalidInput(format!("weights sum to {s}, not 1")));
        }
    }
    let values = MomentValues::compute(model, data, theta, true)?;
    Ok(values.weighted_jacobian(weights))
}
