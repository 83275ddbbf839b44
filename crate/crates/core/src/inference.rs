//! Wald, Lagrange-multiplier, analogue likelihood-ratio and ET statistics for
//! restrictions `r(θ) = 0`, and confidence sets by inverting the ALR test.

use nalgebra::{DMatrix, DVector};

use crate::chi2::{chi2_quantile, chi2_sf};
use crate::error::{EspError, Result};
use crate::estimation::{
    covariance_at, estimate_esp_with, estimate_et_restricted, mid_point, objective_gradient, EspOptions,
    EstimationResult, MmOptions, RestrictionSpec,
};
use crate::model::{Dataset, MomentModel, MomentValues};
use crate::objective::{log_k_value, objective_value, EspEvaluation};
use crate::parallel::{map_indexed, Execution};
use crate::tilting::{solve_tilt_values, TiltOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Wald,
    Lm,
    Alr,
    Et,
}

impl TestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Wald => "wald",
            TestKind::Lm => "lm",
            TestKind::Alr => "alr",
            TestKind::Et => "et",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub theta_unconstrained: Option<Vec<f64>>,
    pub theta_constrained: Option<Vec<f64>>,
    /// LM only: the gradient form `T²·g'Σ̂⁻¹g`, reported alongside.
    pub lm_gradient_form: Option<f64>,
}

fn p_value(statistic: f64, dof: usize) -> Result<f64> {
    if statistic == f64::INFINITY {
        return Ok(0.0);
    }
    if statistic.is_nan() {
        return Err(EspError::InvalidInput("statistic is NaN".into()));
    }
    chi2_sf(statistic.max(0.0), dof)
}

fn quadratic_inverse(a: &DMatrix<f64>, v: &DVector<f64>, what: &str) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| EspError::SingularMatrix(what.into()))?;
    let x = chol.solve(v);
    Ok(v.dot(&x))
}

fn check_cov(c: &DMatrix<f64>) -> Result<()> {
    if c.iter().any(|v| !v.is_finite()) {
        Err(EspError::SingularMatrix("plug-in covariance".into()))
    } else {
        Ok(())
    }
}

/// `T·r(θ̂)'[R Σ̂ R']⁻¹ r(θ̂)` with `Σ̂ = T·covariance`.
pub fn wald_test(
    model: &dyn MomentModel,
    _data: &Dataset,
    esp_result: &EstimationResult,
    restriction: &RestrictionSpec,
) -> Result<TestResult> {
    let m = model.param_dim();
    restriction.validate(m)?;
    check_cov(&esp_result.covariance)?;
    let r = restriction.jacobian(m);
    // T·r'[R (T·cov) R']⁻¹ r = r'[R cov R']⁻¹ r
    let middle = &r * &esp_result.covariance * r.transpose();
    let res = DVector::from_vec(restriction.residual(&esp_result.theta_hat));
    let statistic = quadratic_inverse(&middle, &res, "R Σ R'")?;
    let dof = restriction.dof();
    Ok(TestResult {
        kind: TestKind::Wald,
        statistic,
        dof,
        p_value: p_value(statistic, dof)?,
        theta_unconstrained: Some(esp_result.theta_hat.clone()),
        theta_constrained: None,
        lm_gradient_form: None,
    })
}

/// `T·γ̌'[R Σ̂ R']γ̌` with `Σ̂` the uniform-weight sandwich at θ̌.
pub fn lm_test(
    model: &dyn MomentModel,
    data: &Dataset,
    constrained: &EstimationResult,
    restriction: &RestrictionSpec,
) -> Result<TestResult> {
    let m = model.param_dim();
    restriction.validate(m)?;
    let gamma = constrained
        .lagrange_multiplier
        .as_ref()
        .ok_or_else(|| EspError::InvalidInput("constrained result carries no Lagrange multiplier".into()))?;
    let n = data.n_rows() as f64;
    let sigma = covariance_at(model, data, &constrained.theta_hat, None)? * n;
    let r = restriction.jacobian(m);
    let g = DVector::from_column_slice(gamma);
    let statistic = n * g.dot(&(&r * &sigma * r.transpose() * &g));
    let grad = DVector::from_vec(objective_gradient(model, data, &constrained.theta_hat)?);
    let alt = n * n * quadratic_inverse(&sigma, &grad, "Σ")?;
    let dof = restriction.dof();
    Ok(TestResult {
        kind: TestKind::Lm,
        statistic,
        dof,
        p_value: p_value(statistic, dof)?,
        theta_unconstrained: None,
        theta_constrained: Some(constrained.theta_hat.clone()),
        lm_gradient_form: Some(alt),
    })
}

/// `2·(ln f̂(θ̂) − ln f̂(θ̌))`; `+∞` when θ̌ is outside the support.
pub fn alr_test(unconstrained: &EspEvaluation, constrained: &EspEvaluation, dof: usize) -> Result<TestResult> {
    if !unconstrained.in_support {
        return Err(EspError::InvalidInput(
            "unconstrained point is outside the support".into(),
        ));
    }
    let statistic = if constrained.in_support {
        2.0 * (unconstrained.log_esp_density - constrained.log_esp_density)
    } else {
        f64::INFINITY
    };
    Ok(TestResult {
        kind: TestKind::Alr,
        statistic,
        dof,
        p_value: p_value(statistic, dof)?,
        theta_unconstrained: Some(unconstrained.theta.clone()),
        theta_constrained: Some(constrained.theta.clone()),
        lm_gradient_form: None,
    })
}

/// `T·τ(θ̌)' V̂ τ(θ̌)` with `V̂ = (1/T)Σψψ'` at θ̌; `+∞` when no tilt exists.
pub fn et_test(
    model: &dyn MomentModel,
    data: &Dataset,
    constrained: &EstimationResult,
    restriction: &RestrictionSpec,
) -> Result<TestResult> {
    restriction.validate(model.param_dim())?;
    model.validate_data(data)?;
    let values = MomentValues::compute(model, data, &constrained.theta_hat, false)?;
    let tilt = solve_tilt_values(&values, &TiltOptions::default())?;
    let statistic = if tilt.converged() {
        let v = values.weighted_outer(None);
        let t = DVector::from_column_slice(&tilt.tau);
        data.n_rows() as f64 * t.dot(&(&v * &t))
    } else {
        f64::INFINITY
    };
    let dof = restriction.dof();
    Ok(TestResult {
        kind: TestKind::Et,
        statistic,
        dof,
        p_value: p_value(statistic, dof)?,
        theta_unconstrained: None,
        theta_constrained: Some(constrained.theta_hat.clone()),
        lm_gradient_form: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// `2T·(objective(θ̂) − objective(θ₀))`.
    Alr,
    /// `2T·(max ln K − ln K(θ₀))`.
    AlrEt,
}

impl RegionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionKind::Alr => "alr",
            RegionKind::AlrEt => "alr-et",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConfidenceRegion {
    pub kind: RegionKind,
    pub level: f64,
    pub critical_value: f64,
    /// The optimum the statistics are measured against.
    pub theta_hat: f64,
    pub grid: Vec<f64>,
    pub statistics: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Maximal runs of accepted grid points, as `(first, last)`.
    pub accepted_intervals: Vec<(f64, f64)>,
}

impl ConfidenceRegion {
    pub fn total_length(&self) -> f64 {
        self.accepted_intervals.iter().map(|(a, b)| b - a).sum()
    }
}

/// Inverts the ALR (or its ET analogue) test over a one-parameter grid.
pub fn invert_confidence_region(
    model: &dyn MomentModel,
    data: &Dataset,
    kind: RegionKind,
    level: f64,
    grid: &[f64],
    starts: &[Vec<f64>],
    exec: Execution,
) -> Result<ConfidenceRegion> {
    if model.param_dim() != 1 {
        return Err(EspError::InvalidInput(
            "region inversion needs a one-parameter model".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EspError::InvalidInput(format!("level {level} must lie in (0, 1)")));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EspError::InvalidInput(
            "grid must hold at least two ascending points".into(),
        ));
    }
    let critical_value = chi2_quantile(level, 1)?;
    let n = data.n_rows() as f64;
    let starts = if starts.is_empty() {
        vec![mid_point(model.param_box())]
    } else {
        starts.to_vec()
    };

    let crit = |th: &[f64]| match kind {
        RegionKind::Alr => objective_value(model, data, th),
        RegionKind::AlrEt => log_k_value(model, data, th),
    };
    let values = map_indexed(grid.len(), exec, |i| crit(&[grid[i]]));
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;

    let (theta_hat, top) = match kind {
        RegionKind::Alr => {
            let opts = EspOptions {
                exec,
                ..EspOptions::default()
            };
            let r = estimate_esp_with(model, data, &starts, &opts)?;
            (r.theta_hat[0], r.objective_value)
        }
        RegionKind::AlrEt => {
            let opts = MmOptions {
                exec,
                ..MmOptions::default()
            };
            let r = estimate_et_restricted(model, data, &starts, &opts)?;
            (r.theta_hat[0], log_k_value(model, data, &r.theta_hat)?)
        }
    };
    // a grid point may beat the local search by rounding
    let top = values.iter().copied().fold(top, f64::max);

    let statistics: Vec<f64> = values
        .iter()
        .map(|v| {
            if v.is_finite() {
                2.0 * n * (top - v)
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let accepted: Vec<bool> = statistics.iter().map(|s| *s <= critical_value).collect();
    let mut accepted_intervals = Vec::new();
    let mut run: Option<usize> = None;
    for i in 0..=grid.len() {
        let on = i < grid.len() && accepted[i];
        match (on, run) {
            (true, None) => run = Some(i),
            (false, Some(s)) => {
                accepted_intervals.push((grid[s], grid[i - 1]));
                run = None;
            }
            _ => {}
        }
    }
    Ok(ConfidenceRegion {
        kind,
        level,
        critical_value,
        theta_hat,
        grid: grid.to_vec(),
        statistics,
        accepted,
        accepted_intervals,
    })
}
