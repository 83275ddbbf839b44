use super::{Dataset, MomentModel, ParamBox};
use crate::error::{EspError, Result};

/// Names of the three input columns of the consumption-based asset pricing
/// model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrraColumns {
    /// Gross consumption growth `C_t / C_{t-1}`.
    pub c_ratio: String,
    /// Gross market return.
    pub r_m: String,
    /// Gross risk-free return.
    pub r_f: String,
}

impl Default for CrraColumns {
    fn default() -> Self {
        Self {
            c_ratio: "c_ratio".into(),
            r_m: "r_m".into(),
            r_f: "r_f".into(),
        }
    }
}

/// ψ = (C_t/C_{t-1})^{−θ}·(R_m − R_f), one parameter θ (relative risk aversion).
#[derive(Debug, Clone)]
pub struct CrraModel {
    columns: CrraColumns,
    indices: [usize; 3],
    bounds: ParamBox,
}

pub fn builtin_crra(columns: CrraColumns) -> CrraModel {
    CrraModel {
        columns,
        indices: [0, 1, 2],
        bounds: ParamBox::new(vec![-300.0], vec![900.0]).expect("static box"),
    }
}

impl CrraModel {
    pub fn with_box(mut self, bounds: ParamBox) -> Self {
        assert_eq!(bounds.dim(), 1, "CRRA has one parameter");
        self.bounds = bounds;
        self
    }

    pub fn columns(&self) -> &CrraColumns {
        &self.columns
    }

    /// Resolves the configured column names against `data`. Datasets without
    /// a header are read positionally as `(c_ratio, r_m, r_f)`.
    pub fn bind(&self, data: &Dataset) -> Result<Self> {
        let indices = match data.column_names() {
            None => [0, 1, 2],
            Some(_) => {
                let find = |name: &str| {
                    data.column_index(name)
                        .ok_or_else(|| EspError::InvalidInput(format!("column {name:?} not found in dataset")))
                };
                [
                    find(&self.columns.c_ratio)?,
                    find(&self.columns.r_m)?,
                    find(&self.columns.r_f)?,
                ]
            }
        };
        let bound = Self {
            indices,
            ..self.clone()
        };
        bound.validate_data(data)?;
        Ok(bound)
    }

    #[inline]
    fn parts(&self, row: &[f64]) -> (f64, f64) {
        let [c, m, f] = self.indices;
        (row[c].ln(), row[m] - row[f])
    }
}

impl MomentModel for CrraModel {
    fn param_dim(&self) -> usize {
        1
    }

    fn data_dim(&self) -> usize {
        3
    }

    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }

    fn param_names(&self) -> Vec<String> {
        vec!["theta".into()]
    }

    fn psi(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        let (lg, ex) = self.parts(row);
        out[0] = (-theta[0] * lg).exp() * ex;
    }

    fn has_analytic_jacobian(&self) -> bool {
        true
    }

    fn psi_jacobian(&self, row: &[f64], theta: &[f64], out: &mut [f64]) {
        let (lg, ex) = self.parts(row);
        out[0] = -lg * (-theta[0] * lg).exp() * ex;
    }

    fn psi_hessian(&self, row: &[f64], theta: &[f64], out: &mut [f64]) -> bool {
        let (lg, ex) = self.parts(row);
        out[0] = lg * lg * (-theta[0] * lg).exp() * ex;
        true
    }

    fn validate_data(&self, data: &Dataset) -> Result<()> {
        let need = self.indices.iter().max().copied().unwrap_or(0) + 1;
        if data.n_cols() < need {
            return Err(EspError::InvalidInput(format!(
                "CRRA model needs {need} columns, dataset has {}",
                data.n_cols()
            )));
        }
        for (t, row) in data.rows().enumerate() {
            if !(row[self.indices[0]] > 0.0) {
                return Err(EspError::NumericDomain {
                    row: t,
                    message: "consumption ratio must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{central_difference_jacobian, eval_psi_bar};
    use super::*;

    fn toy() -> Dataset {
        Dataset::from_rows(vec![
            vec![1.02, 1.10, 1.03],
            vec![0.99, 0.92, 1.02],
            vec![1.03, 1.15, 1.01],
        ])
        .unwrap()
    }

    #[test]
    fn theta_zero_gives_excess_return() {
        let m = builtin_crra(CrraColumns::default());
        let bar = eval_psi_bar(&m, &toy(), &[0.0]).unwrap();
        let want = ((1.10 - 1.03) + (0.92 - 1.02) + (1.15 - 1.01)) / 3.0;
        assert!((bar[0] - want).abs() < 1e-15);
    }

    #[test]
    fn unit_growth_makes_psi_flat() {
        let m = builtin_crra(CrraColumns::default());
        let d = Dataset::from_rows(vec![vec![1.0, 1.1, 1.0], vec![1.0, 0.9, 1.0]]).unwrap();
        let a = eval_psi_bar(&m, &d, &[-120.0]).unwrap();
        let b = eval_psi_bar(&m, &d, &[430.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derivative_matches_differences() {
        let m = builtin_crra(CrraColumns::default());
        let d = toy();
        for row in d.rows() {
            let (mut an, mut fd) = ([0.0], [0.0]);
            m.psi_jacobian(row, &[50.0], &mut an);
            central_difference_jacobian(|t, o| m.psi(row, t, o), &[50.0], &mut fd);
            assert!((an[0] - fd[0]).abs() <= 1e-6 * an[0].abs(), "{} vs {}", an[0], fd[0]);
        }
    }

    #[test]
    fn binds_columns_by_name() {
        let src = "r_f,c_ratio,r_m\n1.03,1.02,1.10\n1.02,0.99,0.92\n";
        let d = Dataset::from_csv_reader(src.as_bytes()).unwrap();
        let m = builtin_crra(CrraColumns::default()).bind(&d).unwrap();
        let bar = eval_psi_bar(&m, &d, &[0.0]).unwrap();
        assert!((bar[0] - ((0.07 - 0.10) / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_ratio_is_domain_error() {
        let m = builtin_crra(CrraColumns::default());
        let d = Dataset::from_rows(vec![vec![1.0, 1.1, 1.0], vec![0.0, 0.9, 1.0]]).unwrap();
        assert!(matches!(
            eval_psi_bar(&m, &d, &[1.0]),
            Err(EspError::NumericDomain { row: 1, .. })
        ));
    }
}
