//! CSV and JSON serialization of results. Numbers are written with 17
//! significant digits in locale-independent scientific notation; non-finite
//! values become `inf`, `-inf` or `nan` (quoted strings in JSON).

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::estimation::EstimationResult;
use crate::inference::{ConfidenceRegion, TestResult};
use crate::objective::ProfileRow;
use crate::simulation::McSummary;

pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

/// A float that serializes to JSON with 17 significant digits.
#[derive(Debug, Clone, Copy)]
pub struct Sig17(pub f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_str(&fmt17(self.0))
        }
    }
}

fn sig(v: &[f64]) -> Vec<Sig17> {
    v.iter().map(|x| Sig17(*x)).collect()
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let m = rows.first().map_or(1, |r| r.theta.len());
    let theta_cols = if m == 1 {
        "theta".to_string()
    } else {
        (1..=m).map(|i| format!("theta_{i}")).collect::<Vec<_>>().join(",")
    };
    let mut out =
        format!("{theta_cols},m1,m2,m3,log_esp_objective,log_esp_density,log_et_density,norm_esp,norm_et,in_support\n");
    for r in rows {
        let mut fields: Vec<String> = r.theta.iter().map(|t| fmt17(*t)).collect();
        for v in [
            r.m1,
            r.m2,
            r.m3,
            r.log_esp_objective,
            r.log_esp_density,
            r.log_et_density,
            r.norm_esp,
            r.norm_et,
        ] {
            fields.push(fmt17(v));
        }
        fields.push(r.in_support.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn region_csv(region: &ConfidenceRegion) -> String {
    let mut out = String::from("theta,statistic,accepted\n");
    for ((t, s), a) in region.grid.iter().zip(&region.statistics).zip(&region.accepted) {
        out.push_str(&format!("{},{},{}\n", fmt17(*t), fmt17(*s), a));
    }
    out
}

pub fn mc_csv(summaries: &[McSummary]) -> String {
    let mut out = String::from("T,estimator,param,mse,bias,variance,failures\n");
    for s in summaries {
        for c in &s.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.sample_size,
                c.estimator.as_str(),
                c.param,
                fmt17(c.mse),
                fmt17(c.bias),
                fmt17(c.variance),
                c.failures
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct TestJson<'a> {
    kind: &'a str,
    statistic: Sig17,
    dof: usize,
    p_value: Sig17,
    #[serde(skip_serializing_if = "Option::is_none")]
    lm_gradient_form: Option<Sig17>,
}

pub fn test_json(results: &[TestResult]) -> String {
    let items: Vec<TestJson> = results
        .iter()
        .map(|r| TestJson {
            kind: r.kind.as_str(),
            statistic: Sig17(r.statistic),
            dof: r.dof,
            p_value: Sig17(r.p_value),
            lm_gradient_form: r.lm_gradient_form.map(Sig17),
        })
        .collect();
    let text = if items.len() == 1 {
        serde_json::to_string_pretty(&items[0])
    } else {
        serde_json::to_string_pretty(&items)
    };
    text.expect("plain data serializes") + "\n"
}

#[derive(Serialize)]
struct TraceJson<'a> {
    iterations: usize,
    restarts: usize,
    status: &'a str,
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    method: &'a str,
    param_names: &'a [String],
    theta_hat: Vec<Sig17>,
    std_errors: Vec<Sig17>,
    objective: Sig17,
    covariance: Vec<Vec<Sig17>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lagrange_multiplier: Option<Vec<Sig17>>,
    trace: TraceJson<'a>,
}

pub fn estimate_json(result: &EstimationResult, param_names: &[String]) -> String {
    let m = result.theta_hat.len();
    let cov = (0..m)
        .map(|i| (0..m).map(|j| Sig17(result.covariance[(i, j)])).collect())
        .collect();
    let j = EstimateJson {
        method: result.method.as_str(),
        param_names,
        theta_hat: sig(&result.theta_hat),
        std_errors: sig(&result.std_errors()),
        objective: Sig17(result.objective_value),
        covariance: cov,
        lagrange_multiplier: result.lagrange_multiplier.as_deref().map(sig),
        trace: TraceJson {
            iterations: result.trace.iterations,
            restarts: result.trace.restarts,
            status: &result.trace.status,
        },
    };
    serde_json::to_string_pretty(&j).expect("plain data serializes") + "\n"
}
