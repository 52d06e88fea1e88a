use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::logit::LogitFit;
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile used for the confidence bounds.
pub const Z_95: f64 = 1.96;

/// Overflow-safe logistic function.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Log-odds of `p`.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn predict_prob(beta: &[f64], x: &[f64]) -> Result<f64> {
    if beta.len() != x.len() {
        return Err(Error::Dimension {
            expected: beta.len(),
            actual: x.len(),
        });
    }
    Ok(sigmoid(beta.iter().zip(x).map(|(b, v)| b * v).sum()))
}

pub fn odds_ratio(beta: f64) -> f64 {
    beta.exp()
}

/// Two-sided p-value of a standard-normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldStats {
    pub std_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

pub fn wald_from_se(beta: &[f64], std_errors: &[f64]) -> WaldStats {
    let z_scores: Vec<f64> = beta.iter().zip(std_errors).map(|(b, s)| b / s).collect();
    WaldStats {
        p_values: z_scores.iter().map(|z| two_sided_p(*z)).collect(),
        ci_low: beta.iter().zip(std_errors).map(|(b, s)| b - Z_95 * s).collect(),
        ci_high: beta.iter().zip(std_errors).map(|(b, s)| b + Z_95 * s).collect(),
        std_errors: std_errors.to_vec(),
        z_scores,
    }
}

/// Standard errors from the covariance diagonal, then z, p and CI.
pub fn wald_inference(fit: &LogitFit) -> Result<WaldStats> {
    if !fit.converged {
        return Err(Error::NotConverged(format!(
            "gradient max-norm {:.3e} after {} iterations",
            fit.gradient_max_norm, fit.n_iterations
        )));
    }
    let se: Vec<f64> = (0..fit.beta.len())
        .map(|i| fit.covariance[i][i].max(0.0).sqrt())
        .collect();
    Ok(wald_from_se(&fit.beta, &se))
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub name: String,
    pub beta: f64,
    pub stars: String,
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

pub fn effect_table(fit: &LogitFit) -> Result<Vec<EffectRow>> {
    let wald = wald_inference(fit)?;
    Ok(fit
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| EffectRow {
            name: name.clone(),
            beta: fit.beta[i],
            stars: significance_stars(wald.p_values[i]).to_owned(),
            odds_ratio: odds_ratio(fit.beta[i]),
            ci_low: wald.ci_low[i],
            ci_high: wald.ci_high[i],
            p_value: wald.p_values[i],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub condition: String,
    pub x: Vec<f64>,
    pub probability: f64,
    /// Difference to the baseline probability; `None` for the baseline row.
    pub change: Option<f64>,
}

fn condition_label(name: &str) -> String {
    match name {
        "Time-to-collision" => "Time-to-collision increased (normalized = 1)".to_owned(),
        "Vehicle behind" => "Vehicle behind present (B = 1)".to_owned(),
        "Passenger urgency" => "Passenger urgency present (U = 1)".to_owned(),
        "Following time" => "Following time increased (normalized = 1)".to_owned(),
        "Explanation length" => "Explanation length limited (L = 1)".to_owned(),
        other => format!("{other} = 1"),
    }
}

/// Probability at the all-zero baseline and with each predictor set to 1
/// in turn, the others held at 0. Column 0 must be the intercept.
pub fn probability_table(beta: &[f64], names: &[String]) -> Result<Vec<ProbabilityRow>> {
    if beta.len() != names.len() {
        return Err(Error::Dimension {
            expected: names.len(),
            actual: beta.len(),
        });
    }
    if beta.is_empty() {
        return Ok(Vec::new());
    }
    let mut x = vec![0.0; beta.len()];
    x[0] = 1.0;
    let base = predict_prob(beta, &x)?;
    let mut rows = vec![ProbabilityRow {
        condition: "Baseline (all predictors = 0)".to_owned(),
        x: x.clone(),
        probability: base,
        change: None,
    }];
    for (j, name) in names.iter().enumerate().skip(1) {
        let mut xj = x.clone();
        xj[j] = 1.0;
        let p = predict_prob(beta, &xj)?;
        rows.push(ProbabilityRow {
            condition: condition_label(name),
            x: xj,
            probability: p,
            change: Some(p - base),
        });
    }
    Ok(rows)
}
