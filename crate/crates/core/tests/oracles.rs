//! Independent recomputations of library quantities.
#![allow(clippy::needless_range_loop)]

use esp_core::simulation::replication_rng;
use esp_core::*;

/// Neumaier-compensated sum.
fn csum(it: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

fn hh_psi(row: &[f64], th: &[f64]) -> [f64; 2] {
    let p = (th[1] - th[0] * (row[0] + row[1]) + 3.0 * row[1]).exp() - 1.0;
    [p, row[1] * p]
}

fn hh_dpsi(row: &[f64], th: &[f64]) -> [[f64; 2]; 2] {
    let e = (th[1] - th[0] * (row[0] + row[1]) + 3.0 * row[1]).exp();
    let s = row[0] + row[1];
    [[-s * e, e], [-row[1] * s * e, row[1] * e]]
}

fn inv2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let d = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]]
}

fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn t2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

#[test]
fn hh_sigma_matches_compensated_recomputation() {
    let data = simulate_hh_sample(&mut replication_rng(2024, 0), 200, 0.4).unwrap();
    let th = HH_THETA0;
    let psi: Vec<[f64; 2]> = data.rows().map(|r| hh_psi(r, &th)).collect();

    // Newton on Σ exp(τ'ψ)ψ = 0, all sums compensated.
    let mut tau = [0.0f64; 2];
    for _ in 0..60 {
        let e: Vec<f64> = psi.iter().map(|p| (tau[0] * p[0] + tau[1] * p[1]).exp()).collect();
        let g = [0, 1].map(|i| csum(psi.iter().zip(&e).map(|(p, w)| w * p[i])));
        let h = [0, 1].map(|i| [0, 1].map(|j| csum(psi.iter().zip(&e).map(|(p, w)| w * p[i] * p[j]))));
        let hi = inv2(h);
        tau[0] -= hi[0][0] * g[0] + hi[0][1] * g[1];
        tau[1] -= hi[1][0] * g[0] + hi[1][1] * g[1];
    }
    let e: Vec<f64> = psi.iter().map(|p| (tau[0] * p[0] + tau[1] * p[1]).exp()).collect();
    let total = csum(e.iter().copied());
    let w: Vec<f64> = e.iter().map(|x| x / total).collect();

    let jac: Vec<[[f64; 2]; 2]> = data.rows().map(|r| hh_dpsi(r, &th)).collect();
    let j = [0, 1].map(|i| [0, 1].map(|k| csum(jac.iter().zip(&w).map(|(d, wt)| wt * d[i][k]))));
    let v = [0, 1].map(|i| [0, 1].map(|k| csum(psi.iter().zip(&w).map(|(p, wt)| wt * p[i] * p[k]))));
    let ji = inv2(j);
    let sigma = mul2(mul2(ji, v), t2(ji));

    let ev = evaluate(&builtin_hall_horowitz(), &data, &th).unwrap();
    assert!(ev.in_support);
    for i in 0..2 {
        assert!((ev.tilting.tau[i] - tau[i]).abs() <= 1e-9 * (1.0 + tau[i].abs()));
        for k in 0..2 {
            let rel = (ev.sigma_t[(i, k)] - sigma[i][k]).abs() / sigma[i][k].abs();
            assert!(rel <= 1e-10, "Σ[{i}{k}] rel err {rel:e}");
        }
    }
}

struct Location;

impl MomentModel for Location {
    fn param_dim(&self) -> usize {
        1
    }
    fn data_dim(&self) -> usize {
        1
    }
    fn param_box(&self) -> &ParamBox {
        static B: std::sync::OnceLock<ParamBox> = std::sync::OnceLock::new();
        B.get_or_init(|| ParamBox::new(vec![-10.0], vec![10.0]).unwrap())
    }
    fn psi(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = theta[0] - row[0];
    }
    fn has_analytic_jacobian(&self) -> bool {
        true
    }
    fn psi_jacobian(&self, _row: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
}

fn location_data() -> Dataset {
    Dataset::from_rows([0.3, -1.2, 0.8, 2.1, -0.4, 1.5, 0.0].iter().map(|x| vec![*x]).collect()).unwrap()
}

#[test]
fn location_tau_derivative_closed_form() {
    // With ∂ψ/∂θ = 1: dτ/dθ = −(1 + τ Σwψ)/Σwψ² = −1/Σwψ² since Σwψ = 0.
    let d = location_data();
    for th in [-0.5, 0.1, 0.4, 1.3] {
        let s = solve_tilt(&Location, &d, &[th], &TiltOptions::default()).unwrap();
        let m2 = csum(d.rows().zip(&s.weights).map(|(r, w)| w * (th - r[0]).powi(2)));
        let jt = tau_jacobian(&Location, &d, &[th], &s).unwrap();
        assert!((jt[(0, 0)] + 1.0 / m2).abs() <= 1e-10 * (1.0 / m2));
    }
}

#[test]
fn et_statistic_scalar_recomputation() {
    let d = location_data();
    let th = 0.9;
    let restriction = RestrictionSpec::FixComponents(vec![(0, th)]);
    let fixed = estimate_constrained(&Location, &d, &restriction, &[vec![th]]).unwrap();
    assert_eq!(fixed.theta_hat, vec![th]);
    let r = et_test(&Location, &d, &fixed, &restriction).unwrap();
    let s = solve_tilt(&Location, &d, &[th], &TiltOptions::default()).unwrap();
    let n = d.n_rows() as f64;
    let second = csum(d.rows().map(|x| (th - x[0]).powi(2))) / n;
    let direct = n * s.tau[0] * s.tau[0] * second;
    assert!((r.statistic - direct).abs() <= 1e-12 * direct);
    assert_eq!(r.dof, 1);
}

#[test]
fn wald_scalar_is_squared_t_ratio() {
    let d = location_data();
    let est = estimate_esp(&Location, &d, &[vec![0.0]]).unwrap();
    let theta0 = 0.2;
    let w = wald_test(&Location, &d, &est, &RestrictionSpec::FixComponents(vec![(0, theta0)])).unwrap();
    let t = (est.theta_hat[0] - theta0) / est.std_errors()[0];
    assert!((w.statistic - t * t).abs() <= 1e-10 * t * t);
    let at_hat = wald_test(
        &Location,
        &d,
        &est,
        &RestrictionSpec::FixComponents(vec![(0, est.theta_hat[0])]),
    )
    .unwrap();
    assert_eq!(at_hat.statistic, 0.0);
    assert_eq!(at_hat.p_value, 1.0);
}

#[test]
fn alr_is_twice_t_times_objective_gap() {
    let d = location_data();
    let a = evaluate(&Location, &d, &[0.45]).unwrap();
    let b = evaluate(&Location, &d, &[0.9]).unwrap();
    let r = alr_test(&a, &b, 1).unwrap();
    let n = d.n_rows() as f64;
    let gap = 2.0 * n * (a.log_esp_objective - b.log_esp_objective);
    assert!((r.statistic - gap).abs() <= 1e-10 * (1.0 + gap.abs()));
    let same = alr_test(&a, &a, 1).unwrap();
    assert_eq!(same.statistic, 0.0);
    let out = evaluate(&Location, &d, &[5.0]).unwrap();
    assert!(!out.in_support);
    let inf = alr_test(&a, &out, 1).unwrap();
    assert!(inf.statistic.is_infinite() && inf.p_value == 0.0);
}

#[test]
fn full_pinning_at_optimum_gives_tiny_lm() {
    let d = simulate_hh_sample(&mut replication_rng(3, 0), 80, 0.4).unwrap();
    let hh = builtin_hall_horowitz();
    let opts = EspOptions {
        bounded: false,
        ..EspOptions::default()
    };
    let unc = estimate_esp_with(&hh, &d, &[HH_THETA0.to_vec()], &opts).unwrap();
    let pin = RestrictionSpec::FixComponents(vec![(0, unc.theta_hat[0]), (1, unc.theta_hat[1])]);
    let con = estimate_constrained_with(&hh, &d, &pin, std::slice::from_ref(&unc.theta_hat), &opts).unwrap();
    let lm = lm_test(&hh, &d, &con, &pin).unwrap();
    assert!(lm.statistic <= 1e-8, "LM {}", lm.statistic);
}

#[test]
fn mm_root_is_the_log_k_maximizer() {
    use esp_core::optimize::{nelder_mead_max, NelderMeadOptions};
    let hh = builtin_hall_horowitz();
    let d = simulate_hh_sample(&mut replication_rng(200, 0), 200, 0.4).unwrap();
    let mm = estimate_mm_et(&hh, &d, &[HH_THETA0.to_vec()]).unwrap();
    let psi_bar = eval_psi_bar(&hh, &d, &mm.theta_hat).unwrap();
    assert!(psi_bar.iter().all(|p| p.abs() <= 1e-8));
    let opts = NelderMeadOptions {
        max_evals: 20_000,
        ftol: 1e-18,
        xtol: 1e-12,
    };
    let out = nelder_mead_max(
        |t| log_k_value(&hh, &d, t).unwrap_or(f64::NEG_INFINITY),
        &HH_THETA0,
        &[0.2, 0.2],
        &opts,
    );
    for (a, b) in out.x.iter().zip(&mm.theta_hat) {
        assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", out.x, mm.theta_hat);
    }
}

#[test]
fn no_feasible_perturbation_lowers_kl() {
    // Random directions projected onto {δ : Σδ = 0, Σδψ = 0}.
    let hh = builtin_hall_horowitz();
    let d = simulate_hh_sample(&mut replication_rng(5, 0), 40, 0.4).unwrap();
    let th = [2.6, -0.5];
    let s = solve_tilt(&hh, &d, &th, &TiltOptions::default()).unwrap();
    assert!(s.converged());
    let n = d.n_rows();
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let psi: Vec<Vec<f64>> = d
        .rows()
        .map(|r| {
            let mut out = [0.0; 2];
            hh.psi(r, &th, &mut out);
            out.to_vec()
        })
        .collect();
    for k in 0..2 {
        rows.push(psi.iter().map(|p| p[k]).collect());
    }
    // Orthonormal basis of the constraint rows (Gram-Schmidt).
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut r in rows {
        for b in &basis {
            let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let nr = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(r.iter().map(|x| x / nr).collect());
    }
    let base = kl_divergence(&s.weights).unwrap();
    let wmin = s.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut uniform = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut worst = f64::INFINITY;
    for _ in 0..10_000 {
        let mut delta: Vec<f64> = (0..n).map(|_| uniform()).collect();
        for b in &basis {
            let dot: f64 = delta.iter().zip(b).map(|(x, y)| x * y).sum();
            delta.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let dn = delta.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let w: Vec<f64> = s
            .weights
            .iter()
            .zip(&delta)
            .map(|(w, x)| w + 0.1 * wmin * x / dn)
            .collect();
        worst = worst.min(kl_divergence(&w).unwrap() - base);
    }
    assert!(worst >= -1e-8, "KL improved by {}", -worst);
}
