//! Point estimators: the method-of-moments / exponential-tilting root, the
//! ESP maximizer, and the ESP maximizer under linear restrictions.

use nalgebra::{DMatrix, DVector};

use crate::error::{EspError, Result};
use crate::linalg::{norm, sandwich};
use crate::model::{Dataset, MomentModel, MomentValues, ParamBox};
use crate::objective::{gradient_objective, log_k_value, objective_value};
use crate::optimize::{nelder_mead_max, newton_root, NelderMeadOptions};
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MmEt,
    Esp,
    EspConstrained,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::MmEt => "mm-et",
            Method::Esp => "esp",
            Method::EspConstrained => "esp-constrained",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTrace {
    /// Newton iterations (MM) or objective evaluations (ESP), summed over starts.
    pub iterations: usize,
    /// Number of local searches run.
    pub restarts: usize,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub method: Method,
    pub theta_hat: Vec<f64>,
    /// Log-ESP objective for ESP methods, `‖ψ̄(θ̂)‖` for MM/ET.
    pub objective_value: f64,
    /// Plug-in `Σ̂/T` with uniform weights at θ̂ (NaN if the sandwich is singular).
    pub covariance: DMatrix<f64>,
    pub lagrange_multiplier: Option<Vec<f64>>,
    pub trace: OptimizerTrace,
}

impl EstimationResult {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|i| self.covariance[(i, i)].sqrt())
            .collect()
    }
}

/// `J⁻¹ V J⁻ᵀ / T` at θ, with uniform weights or the given (tilted) weights.
pub fn covariance_at(
    model: &dyn MomentModel,
    data: &Dataset,
    theta: &[f64],
    weights: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let values = MomentValues::compute(model, data, theta, true)?;
    let j = values.weighted_jacobian(weights);
    let v = values.weighted_outer(weights);
    let s = sandwich(&j, &v).ok_or_else(|| EspError::SingularMatrix("plug-in sandwich".into()))?;
    Ok(s / data.n_rows() as f64)
}

fn covariance_or_nan(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> DMatrix<f64> {
    let m = theta.len();
    covariance_at(model, data, theta, None).unwrap_or_else(|_| DMatrix::from_element(m, m, f64::NAN))
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Less)
}

fn check_starts(model: &dyn MomentModel, starts: &[Vec<f64>]) -> Result<()> {
    for s in starts {
        if s.len() != model.param_dim() || s.iter().any(|v| !v.is_finite()) {
            return Err(EspError::InvalidInput(format!(
                "start point {s:?} is not a finite vector of length {}",
                model.param_dim()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MmOptions {
    pub grid_per_dim: usize,
    /// Search region; the model's box when `None`.
    pub bounds: Option<ParamBox>,
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self {
            grid_per_dim: 8,
            bounds: None,
            max_iter: 100,
            exec: Execution::default(),
        }
    }
}

/// Root of the empirical moment conditions (the MM estimator, which equals
/// the ET estimator for just-identified models).
pub fn estimate_mm_et(model: &dyn MomentModel, data: &Dataset, starts: &[Vec<f64>]) -> Result<EstimationResult> {
    estimate_mm_et_with(model, data, starts, &MmOptions::default())
}

pub fn estimate_mm_et_with(
    model: &dyn MomentModel,
    data: &Dataset,
    starts: &[Vec<f64>],
    options: &MmOptions,
) -> Result<EstimationResult> {
    model.validate_data(data)?;
    if starts.is_empty() {
        return Err(EspError::InvalidInput("at least one start point is required".into()));
    }
    check_starts(model, starts)?;
    let bounds = options.bounds.as_ref().unwrap_or(model.param_box());
    let mut all = starts.to_vec();
    all.extend(bounds.grid(options.grid_per_dim));

    let eval = |x: &[f64]| {
        let v = MomentValues::compute(model, data, x, true).ok()?;
        Some((v.mean_psi(), v.weighted_jacobian(None)))
    };
    let outcomes = map_indexed(all.len(), options.exec, |i| {
        let mut x0 = all[i].clone();
        bounds.clamp(&mut x0);
        let scale = MomentValues::compute(model, data, &x0, false)
            .map(|v| v.mean_abs_psi())
            .unwrap_or(1.0);
        newton_root(eval, &x0, Some(bounds), 1e-14 * (1.0 + scale), options.max_iter)
    });

    let mut iterations = 0;
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for out in outcomes.into_iter().flatten() {
        iterations += out.iterations;
        let Ok(v) = MomentValues::compute(model, data, &out.x, false) else {
            continue;
        };
        let tol = 1e-8 * (1.0 + v.mean_abs_psi());
        let better = match &best {
            None => true,
            Some((bx, br, _)) => out.residual < *br || (out.residual == *br && lex_less(&out.x, bx)),
        };
        if better {
            best = Some((out.x, out.residual, tol));
        }
    }
    match best {
        Some((x, r, tol)) if r <= tol => Ok(EstimationResult {
            method: Method::MmEt,
            covariance: covariance_or_nan(model, data, &x),
            theta_hat: x,
            objective_value: r,
            lagrange_multiplier: None,
            trace: OptimizerTrace {
                iterations,
                restarts: all.len(),
                status: "converged".into(),
            },
        }),
        Some((_, r, _)) => Err(EspError::NoRootFound { best_residual: r }),
        None => Err(EspError::NoRootFound {
            best_residual: f64::INFINITY,
        }),
    }
}

/// Maximizer of `ln K(θ)` over `bounds`: the ET estimator on a restricted
/// parameter space. Uses the moment root when one exists inside `bounds`,
/// otherwise maximizes `ln K` directly.
pub fn estimate_et_restricted(
    model: &dyn MomentModel,
    data: &Dataset,
    starts: &[Vec<f64>],
    options: &MmOptions,
) -> Result<EstimationResult> {
    match estimate_mm_et_with(model, data, starts, options) {
        Ok(r) => Ok(r),
        Err(EspError::NoRootFound { .. }) => {
            let bounds = options.bounds.as_ref().unwrap_or(model.param_box());
            let f = |x: &[f64]| {
                if !bounds.contains(x) {
                    return f64::NEG_INFINITY;
                }
                log_k_value(model, data, x).unwrap_or(f64::NEG_INFINITY)
            };
            let (theta, value, evals, restarts) = multi_start_max(&f, starts, bounds, 8, 4, options.exec)?;
            Ok(EstimationResult {
                method: Method::MmEt,
                covariance: covariance_or_nan(model, data, &theta),
                objective_value: norm(&MomentValues::compute(model, data, &theta, false)?.mean_psi()),
                theta_hat: theta,
                lagrange_multiplier: None,
                trace: OptimizerTrace {
                    iterations: evals,
                    restarts,
                    status: format!("no root in region; max ln K = {value:e}"),
                },
            })
        }
        Err(e) => Err(e),
    }
}

fn simplex_steps(bounds: &ParamBox) -> Vec<f64> {
    bounds
        .lower()
        .iter()
        .zip(bounds.upper())
        .map(|(l, u)| 0.05 * (u - l))
        .collect()
}

/// Multi-start Nelder–Mead on `f` from `starts` plus the best `top` points of
/// a `per_dim`-grid over `bounds`. Returns `(x, f(x), evaluations, restarts)`.
fn multi_start_max<F>(
    f: &F,
    starts: &[Vec<f64>],
    bounds: &ParamBox,
    per_dim: usize,
    top: usize,
    exec: Execution,
) -> Result<(Vec<f64>, f64, usize, usize)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut all = starts.to_vec();
    all.extend(screen_grid(f, &bounds.grid(per_dim), top, exec));
    let steps = simplex_steps(bounds);
    let nm = NelderMeadOptions::default();
    let runs = map_indexed(all.len(), exec, |i| nelder_mead_max(f, &all[i], &steps, &nm));
    let evals = runs.iter().map(|r| r.evaluations).sum();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in runs {
        if better(r.value, &r.x, best.as_ref()) {
            best = Some((r.x, r.value));
        }
    }
    match best {
        Some((x, v)) if v.is_finite() => Ok((x, v, evals, all.len())),
        _ => Err(EspError::EmptySupport),
    }
}

fn better(value: f64, x: &[f64], best: Option<&(Vec<f64>, f64)>) -> bool {
    if !value.is_finite() {
        return best.is_none();
    }
    match best {
        None => true,
        Some((bx, bv)) => value > *bv || (value == *bv && lex_less(x, bx)) || !bv.is_finite(),
    }
}

/// The `top` grid points with the largest finite objective.
fn screen_grid<F>(f: &F, grid: &[Vec<f64>], top: usize, exec: Execution) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let vals = map_indexed(grid.len(), exec, |i| f(&grid[i]));
    let mut idx: Vec<usize> = (0..grid.len()).filter(|&i| vals[i].is_finite()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.into_iter().take(top).map(|i| grid[i].clone()).collect()
}

#[derive(Debug, Clone)]
pub struct EspOptions {
    pub grid_per_dim: usize,
    /// Number of best grid points used as extra starts.
    pub screen_top: usize,
    /// Restrict the search to the model's box; when false the box only
    /// places the start grid.
    pub bounded: bool,
    /// Add the MM root to the starts when it exists.
    pub mm_start: bool,
    pub nelder_mead: NelderMeadOptions,
    pub exec: Execution,
}

impl Default for EspOptions {
    fn default() -> Self {
        Self {
            grid_per_dim: 8,
            screen_top: 4,
            bounded: true,
            mm_start: true,
            nelder_mead: NelderMeadOptions::default(),
            exec: Execution::default(),
        }
    }
}

/// Gradient of the objective: analytic when the model has second
/// derivatives, central differences otherwise.
pub fn objective_gradient(model: &dyn MomentModel, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    match gradient_objective(model, data, theta) {
        Err(EspError::Unsupported(_)) => {
            let m = theta.len();
            let mut g = vec![0.0; m];
            let mut tp = theta.to_vec();
            for k in 0..m {
                let h = 1e-6 * theta[k].abs().max(1.0);
                tp[k] = theta[k] + h;
                let fp = objective_value(model, data, &tp)?;
                tp[k] = theta[k] - h;
                let fm = objective_value(model, data, &tp)?;
                tp[k] = theta[k];
                g[k] = (fp - fm) / (2.0 * h);
            }
            if g.iter().all(|v| v.is_finite()) {
                Ok(g)
            } else {
                Err(EspError::InvalidInput("θ is at the support boundary".into()))
            }
        }
        other => other,
    }
}

/// Affine parametrization `θ = base + N·z` of the feasible set.
struct Affine {
    base: Vec<f64>,
    basis: DMatrix<f64>,
}

impl Affine {
    fn identity(m: usize) -> Self {
        Self {
            base: vec![0.0; m],
            basis: DMatrix::identity(m, m),
        }
    }

    fn theta(&self, z: &[f64]) -> Vec<f64> {
        let mut th = self.base.clone();
        for (i, t) in th.iter_mut().enumerate() {
            for (k, zk) in z.iter().enumerate() {
                *t += self.basis[(i, k)] * zk;
            }
        }
        th
    }

    fn project(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.basis.ncols())
            .map(|k| {
                (0..theta.len())
                    .map(|i| self.basis[(i, k)] * (theta[i] - self.base[i]))
                    .sum()
            })
            .collect()
    }

    fn reduce(&self, g: &[f64]) -> Vec<f64> {
        (0..self.basis.ncols())
            .map(|k| (0..g.len()).map(|i| self.basis[(i, k)] * g[i]).sum())
            .collect()
    }
}

/// Newton polish of a local maximum in reduced coordinates, with a
/// finite-difference Hessian of the gradient and a gradient-step fallback.
fn polish<F, G>(f: &F, grad: &G, z0: Vec<f64>, f0: f64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = z0.len();
    let (mut z, mut fz) = (z0, f0);
    for _ in 0..8 {
        let Some(g) = grad(&z) else { break };
        if norm(&g) <= 1e-11 * (1.0 + fz.abs()) {
            break;
        }
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut ok = true;
        for k in 0..n {
            let step = 1e-5 * z[k].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += step;
            zm[k] -= step;
            match (grad(&zp), grad(&zm)) {
                (Some(gp), Some(gm)) => {
                    for i in 0..n {
                        h[(i, k)] = (gp[i] - gm[i]) / (2.0 * step);
                    }
                }
                _ => ok = false,
            }
        }
        let gv = DVector::from_column_slice(&g);
        let newton = if ok {
            let sym = (&h + h.transpose()) * -0.5;
            sym.cholesky().map(|c| c.solve(&gv))
        } else {
            None
        };
        let dir: Vec<f64> = match newton {
            Some(d) => d.iter().copied().collect(),
            None => g.iter().map(|v| v * 1e-3 / (1.0 + norm(&g))).collect(),
        };
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let ft = f(&trial);
            if ft > fz {
                z = trial;
                fz = ft;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (z, fz)
}

fn search_affine(
    model: &dyn MomentModel,
    data: &Dataset,
    affine: &Affine,
    starts: &[Vec<f64>],
    options: &EspOptions,
) -> Result<(Vec<f64>, f64, usize, usize)> {
    let bounds = model.param_box();
    let f = |z: &[f64]| {
        let th = affine.theta(z);
        if options.bounded && !bounds.contains(&th) {
            return f64::NEG_INFINITY;
        }
        objective_value(model, data, &th).unwrap_or(f64::NEG_INFINITY)
    };
    let grad = |z: &[f64]| {
        let th = affine.theta(z);
        let g = objective_gradient(model, data, &th).ok()?;
        Some(affine.reduce(&g))
    };

    let mut cands: Vec<Vec<f64>> = starts.iter().map(|s| affine.project(s)).collect();
    let mut grid: Vec<Vec<f64>> = Vec::new();
    for p in bounds.grid(options.grid_per_dim) {
        let z = affine.project(&p);
        if !grid.contains(&z) {
            grid.push(z);
        }
    }
    cands.extend(screen_grid(&f, &grid, options.screen_top, options.exec));

    let steps = affine
        .reduce(&simplex_steps(bounds))
        .iter()
        .map(|s| s.abs().max(1e-3))
        .collect::<Vec<_>>();
    let runs = map_indexed(cands.len(), options.exec, |i| {
        let r = nelder_mead_max(f, &cands[i], &steps, &options.nelder_mead);
        let (z, v) = if r.value.is_finite() {
            polish(&f, &grad, r.x, r.value)
        } else {
            (r.x, r.value)
        };
        (z, v, r.evaluations)
    });
    let evals = runs.iter().map(|r| r.2).sum();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (z, v, _) in runs {
        let th = affine.theta(&z);
        if better(v, &th, best.as_ref()) {
            best = Some((th, v));
        }
    }
    match best {
        Some((th, v)) if v.is_finite() => Ok((th, v, evals, cands.len())),
        _ => Err(EspError::EmptySupport),
    }
}

/// Maximizer of the log-ESP objective.
pub fn estimate_esp(model: &dyn MomentModel, data: &Dataset, starts: &[Vec<f64>]) -> Result<EstimationResult> {
    estimate_esp_with(model, data, starts, &EspOptions::default())
}

pub fn estimate_esp_with(
    model: &dyn MomentModel,
    data: &Dataset,
    starts: &[Vec<f64>],
    options: &EspOptions,
) -> Result<EstimationResult> {
    model.validate_data(data)?;
    check_starts(model, starts)?;
    let mut all = starts.to_vec();
    if options.mm_start {
        let seed = if starts.is_empty() {
            vec![mid_point(model.param_box())]
        } else {
            starts.to_vec()
        };
        let mm = MmOptions {
            exec: options.exec,
            grid_per_dim: options.grid_per_dim,
            ..MmOptions::default()
        };
        if let Ok(r) = estimate_mm_et_with(model, data, &seed, &mm) {
            all.push(r.theta_hat);
        }
    }
    let affine = Affine::identity(model.param_dim());
    let (theta, value, evals, restarts) = search_affine(model, data, &affine, &all, options)?;
    Ok(EstimationResult {
        method: Method::Esp,
        covariance: covariance_or_nan(model, data, &theta),
        theta_hat: theta,
        objective_value: value,
        lagrange_multiplier: None,
        trace: OptimizerTrace {
            iterations: evals,
            restarts,
            status: "converged".into(),
        },
    })
}

pub(crate) fn mid_point(b: &ParamBox) -> Vec<f64> {
    b.lower().iter().zip(b.upper()).map(|(l, u)| 0.5 * (l + u)).collect()
}

/// Restriction `r(θ) = 0` on the parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum RestrictionSpec {
    /// Pins `θ[index] = value` for each pair.
    FixComponents(Vec<(usize, f64)>),
    /// `A·θ = b` with `A` of full row rank.
    Linear { a: DMatrix<f64>, b: Vec<f64> },
}

impl RestrictionSpec {
    /// Checks the restriction against an m-parameter model.
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            RestrictionSpec::FixComponents(fixed) => {
                if fixed.is_empty() || fixed.len() > m {
                    return Err(EspError::InvalidRestriction(format!(
                        "between 1 and {m} components may be fixed"
                    )));
                }
                let mut seen = vec![false; m];
                for &(i, v) in fixed {
                    if i >= m || std::mem::replace(&mut seen[i], true) || !v.is_finite() {
                        return Err(EspError::InvalidRestriction(format!(
                            "bad or repeated component {i} for a {m}-parameter model"
                        )));
                    }
                }
                Ok(())
            }
            RestrictionSpec::Linear { a, b } => {
                if a.ncols() != m || a.nrows() != b.len() || a.nrows() == 0 || a.nrows() > m {
                    return Err(EspError::InvalidRestriction(format!(
                        "A must be q×{m} with 1 ≤ q ≤ {m} and b of length q"
                    )));
                }
                let sv = a.clone().svd(false, false).singular_values;
                let top = sv.max();
                if !(top > 0.0) || sv.iter().any(|s| *s <= 1e-12 * top) {
                    return Err(EspError::InvalidRestriction("A is rank deficient".into()));
                }
                Ok(())
            }
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            RestrictionSpec::FixComponents(f) => f.len(),
            RestrictionSpec::Linear { a, .. } => a.nrows(),
        }
    }

    /// Restriction jacobian `R = ∂r/∂θ'` (q×m).
    pub fn jacobian(&self, m: usize) -> DMatrix<f64> {
        match self {
            RestrictionSpec::FixComponents(f) => {
                let mut r = DMatrix::zeros(f.len(), m);
                for (row, &(i, _)) in f.iter().enumerate() {
                    r[(row, i)] = 1.0;
                }
                r
            }
            RestrictionSpec::Linear { a, .. } => a.clone(),
        }
    }

    /// `r(θ)`.
    pub fn residual(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            RestrictionSpec::FixComponents(f) => f.iter().map(|&(i, v)| theta[i] - v).collect(),
            RestrictionSpec::Linear { a, b } => (0..a.nrows())
                .map(|r| (0..a.ncols()).map(|c| a[(r, c)] * theta[c]).sum::<f64>() - b[r])
                .collect(),
        }
    }

    fn affine(&self, m: usize) -> Affine {
        match self {
            RestrictionSpec::FixComponents(f) => {
                let mut base = vec![0.0; m];
                let mut fixed = vec![false; m];
                for &(i, v) in f {
                    base[i] = v;
                    fixed[i] = true;
                }
                let free: Vec<usize> = (0..m).filter(|i| !fixed[*i]).collect();
                let mut basis = DMatrix::zeros(m, free.len());
                for (k, &i) in free.iter().enumerate() {
                    basis[(i, k)] = 1.0;
                }
                Affine { base, basis }
            }
            RestrictionSpec::Linear { a, b } => {
                let aat = a * a.transpose();
                let aat_inv = aat.try_inverse().expect("validated full row rank");
                let base: Vec<f64> = (a.transpose() * &aat_inv * DVector::from_column_slice(b))
                    .iter()
                    .copied()
                    .collect();
                let proj = DMatrix::<f64>::identity(m, m) - a.transpose() * aat_inv * a;
                let mut basis: Vec<DVector<f64>> = Vec::new();
                for c in 0..m {
                    let mut v = proj.column(c).into_owned();
                    for u in &basis {
                        let d = u.dot(&v);
                        v -= u * d;
                    }
                    let nv = v.norm();
                    if nv > 1e-8 && basis.len() < m - a.nrows() {
                        basis.push(v / nv);
                    }
                }
                let basis = if basis.is_empty() {
                    DMatrix::zeros(m, 0)
                } else {
                    DMatrix::from_columns(&basis)
                };
                Affine { base, basis }
            }
        }
    }
}

/// Least-squares Lagrange multiplier solving `g + R'γ = 0`, where `g` is the
/// objective gradient at `theta`.
pub fn lagrange_multiplier(
    model: &dyn MomentModel,
    data: &Dataset,
    restriction: &RestrictionSpec,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let g = objective_gradient(model, data, theta)?;
    let r = restriction.jacobian(theta.len());
    let rrt = &r * r.transpose();
    let rhs = -(&r * DVector::from_column_slice(&g));
    let gamma = rrt
        .cholesky()
        .ok_or_else(|| EspError::SingularMatrix("R R'".into()))?
        .solve(&rhs);
    Ok(gamma.iter().copied().collect())
}

/// Maximizer of the log-ESP objective subject to `restriction`, with the
/// Lagrange multiplier of the restriction.
pub fn estimate_constrained(
    model: &dyn MomentModel,
    data: &Dataset,
    restriction: &RestrictionSpec,
    starts: &[Vec<f64>],
) -> Result<EstimationResult> {
    estimate_constrained_with(model, data, restriction, starts, &EspOptions::default())
}

pub fn estimate_constrained_with(
    model: &dyn MomentModel,
    data: &Dataset,
    restriction: &RestrictionSpec,
    starts: &[Vec<f64>],
    options: &EspOptions,
) -> Result<EstimationResult> {
    model.validate_data(data)?;
    check_starts(model, starts)?;
    let m = model.param_dim();
    restriction.validate(m)?;
    let affine = restriction.affine(m);
    let (theta, value, evals, restarts) = if affine.basis.ncols() == 0 {
        let th = affine.base.clone();
        let v = objective_value(model, data, &th)?;
        (th, v, 1, 0)
    } else {
        search_affine(model, data, &affine, starts, options)?
    };
    let gamma = if value.is_finite() {
        Some(lagrange_multiplier(model, data, restriction, &theta)?)
    } else {
        None
    };
    Ok(EstimationResult {
        method: Method::EspConstrained,
        covariance: covariance_or_nan(model, data, &theta),
        theta_hat: theta,
        objective_value: value,
        lagrange_multiplier: gamma,
        trace: OptimizerTrace {
            iterations: evals,
            restarts,
            status: if value.is_finite() {
                "converged"
            } else {
                "outside-support"
            }
            .into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_hall_horowitz, HH_THETA0};
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

    fn hh_sample(seed: u64, n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 0.4).unwrap();
        Dataset::from_rows((0..n).map(|_| vec![nd.sample(&mut rng), nd.sample(&mut rng)]).collect()).unwrap()
    }

    #[test]
    fn location_root_is_sample_mean() {
        let xs = [0.3, 1.9, -0.7, 2.2, 0.8];
        let d = Dataset::from_rows(xs.iter().map(|x| vec![*x]).collect()).unwrap();
        let model = Location(ParamBox::new(vec![-10.0], vec![10.0]).unwrap());
        let r = estimate_mm_et(&model, &d, &[vec![0.0]]).unwrap();
        assert!((r.theta_hat[0] - xs.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        let e = estimate_esp(&model, &d, &[vec![0.0]]).unwrap();
        let at_mm = objective_value(&model, &d, &r.theta_hat).unwrap();
        assert!(e.objective_value >= at_mm - 1e-12);
    }

    #[test]
    fn hh_root_and_esp() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(21, 200);
        let mm = estimate_mm_et(&hh, &d, &[HH_THETA0.to_vec()]).unwrap();
        assert!(mm.objective_value <= 1e-8);
        let esp = estimate_esp(&hh, &d, &[HH_THETA0.to_vec()]).unwrap();
        let g = gradient_objective(&hh, &d, &esp.theta_hat).unwrap();
        assert!(norm(&g) <= 1e-6 * (1.0 + esp.objective_value.abs()), "{g:?}");
        assert!(esp.objective_value >= objective_value(&hh, &d, &mm.theta_hat).unwrap());
        let c = &esp.covariance;
        assert_eq!(c[(0, 1)], c[(1, 0)]);
        assert!(c.clone().cholesky().is_some());
    }

    #[test]
    fn constrained_foc_residual_is_small() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(4, 200);
        let spec = RestrictionSpec::FixComponents(vec![(1, HH_THETA0[1])]);
        let r = estimate_constrained(&hh, &d, &spec, &[HH_THETA0.to_vec()]).unwrap();
        assert_eq!(r.theta_hat[1], HH_THETA0[1]);
        let g = gradient_objective(&hh, &d, &r.theta_hat).unwrap();
        let gamma = r.lagrange_multiplier.unwrap();
        let res = [g[0], g[1] + gamma[0]];
        assert!(norm(&res) <= 1e-6, "{res:?}");
    }

    #[test]
    fn full_pinning_skips_optimization() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(4, 100);
        let spec = RestrictionSpec::Linear {
            a: DMatrix::identity(2, 2),
            b: HH_THETA0.to_vec(),
        };
        let r = estimate_constrained(&hh, &d, &spec, &[]).unwrap();
        assert!((r.theta_hat[0] - 3.0).abs() < 1e-15 && (r.theta_hat[1] + 0.72).abs() < 1e-15);
        let g = gradient_objective(&hh, &d, &HH_THETA0).unwrap();
        let gamma = r.lagrange_multiplier.unwrap();
        assert!((gamma[0] + g[0]).abs() < 1e-12 && (gamma[1] + g[1]).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_restriction_rejected() {
        let spec = RestrictionSpec::Linear {
            a: DMatrix::zeros(1, 2),
            b: vec![0.0],
        };
        assert!(matches!(spec.validate(2), Err(EspError::InvalidRestriction(_))));
        let dup = RestrictionSpec::FixComponents(vec![(0, 1.0), (0, 2.0)]);
        assert!(dup.validate(2).is_err());
    }

    #[test]
    fn linear_restriction_stays_on_plane() {
        let hh = builtin_hall_horowitz();
        let d = hh_sample(8, 150);
        // β + μ = 2.28
        let spec = RestrictionSpec::Linear {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: vec![2.28],
        };
        let r = estimate_constrained(&hh, &d, &spec, &[HH_THETA0.to_vec()]).unwrap();
        assert!(spec.residual(&r.theta_hat)[0].abs() < 1e-12);
        let g = gradient_objective(&hh, &d, &r.theta_hat).unwrap();
        let gamma = r.lagrange_multiplier.unwrap()[0];
        assert!((g[0] + gamma).abs() < 1e-6 && (g[1] + gamma).abs() < 1e-6);
    }
}
