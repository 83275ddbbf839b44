use super::{MomentModel, ParamBox};

/// Two-parameter benchmark model with data rows `(X, Y)` and
///
/// ψ₁ = exp{μ − β(X+Y) + 3Y} − 1,  ψ₂ = Y·ψ₁,
///
/// parameters ordered `(β, μ)`.
#[derive(Debug, Clone)]
pub struct HallHorowitz {
    bounds: ParamBox,
}

/// True parameter of the benchmark design, `(β₀, μ₀)`.
pub const HH_THETA0: [f64; 2] = [3.0, -0.72];

pub fn builtin_hall_horowitz() -> HallHorowitz {
    HallHorowitz::with_box(ParamBox::new(vec![-5.0, -5.0], vec![15.0, 5.0]).expect("static box"))
}

impl HallHorowitz {
    pub fn with_box(bounds: ParamBox) -> Self {
        assert_eq!(bounds.dim(), 2, "Hall-Horowitz has two parameters");
        Self { bounds }
    }

    #[inline]
    fn exponent(row: &[f64], theta: &[f64]) -> f64 {
        let (x, y) = (row[0], row[1]);
        theta[1] - theta[0] * (x + y) + 3.0 * y
    }
}

impl MomentModel for HallHorowitz {
    fn param_dim(&self) -> usize {
        2
    }

    fn data_dim(&self) -> usize {
        2
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn param_names(&self) -> Vec<String> {
        vec!["beta".into(), "mu".into()]
    }

    fn psi(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        let p1 = Self::exponent(row, theta).exp_m1();
        out[0] = p1;
        out[1] = row[1] * p1;
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn psi_jacobian(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        let e = Self::exponent(row, theta).exp();
        let s = row[0] + row[1];
        let y = row[1];
        out[0] = -s * e;
        out[1] = e;
        out[2] = y * out[0];
        out[3] = y * out[1];
    }

    fn psi_hessian(&self, row: &[f64], theta: &[f64], out: &mut [f64]) -> bool {
        let e = Self::exponent(row, theta).exp();
        let a = [-(row[0] + row[1]), 1.0];
        let y = row[1];
        for j in 0..2 {
            for k in 0..2 {
                let h = e * a[j] * a[k];
                out[j * 4 + k] = h;
                out[(j * 2 + 1) * 2 + k] = y * h;
            }
        }
        true
    }
}
