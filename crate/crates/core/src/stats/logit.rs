//! Maximum-likelihood binary logit via Newton-Raphson (IRLS) with
//! step-halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{DesignRow, PREDICTORS};
use super::inference::{odds_ratio, sigmoid, wald_from_se};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Convergence threshold on the max-norm of the (penalized) gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// L2 penalty on all non-intercept coefficients; 0 disables it.
    pub ridge: f64,
    /// |beta| (or its standard error) beyond this signals separation.
    pub separation_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-8,
            max_iter: 100,
            ridge: 0.0,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Inverse of the information matrix at the final iterate.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub odds_ratios: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted step, starting at the initial point.
    pub log_likelihood_trace: Vec<f64>,
    pub gradient_max_norm: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub n_obs: usize,
    pub ridge: f64,
}

struct Problem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    ridge: f64,
}

impl Problem {
    fn new(rows: &[DesignRow], ridge: f64) -> Result<Self> {
        let k = rows.first().map_or(0, |r| r.x.len());
        if k == 0 {
            return Err(Error::Validation("design has no rows or no columns".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.x.len() != k) {
            return Err(Error::Dimension {
                expected: k,
                actual: bad.x.len(),
            });
        }
        let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].x[j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
        Ok(Problem { x, y, ridge })
    }

    fn penalty_mask(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.ridge
        }
    }

    /// Penalized log-likelihood, evaluated as sum(y*eta - softplus(eta)).
    fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.x * beta;
        let ll: f64 = eta
            .iter()
            .zip(self.y.iter())
            .map(|(e, y)| y * e - softplus(*e))
            .sum();
        let penalty: f64 = beta
            .iter()
            .enumerate()
            .map(|(j, b)| 0.5 * self.penalty_mask(j) * b * b)
            .sum();
        ll - penalty
    }

    fn probabilities(&self, beta: &DVector<f64>) -> DVector<f64> {
        (&self.x * beta).map(sigmoid)
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let p = self.probabilities(beta);
        let mut g = self.x.tr_mul(&(&self.y - p));
        for j in 0..g.len() {
            g[j] -= self.penalty_mask(j) * beta[j];
        }
        g
    }

    /// Observed information X'WX (+ ridge), which equals the expected
    /// information for the canonical logit link.
    fn information(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.probabilities(beta);
        let mut weighted = self.x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= p[i] * (1.0 - p[i]);
        }
        let mut info = self.x.tr_mul(&weighted);
        for j in 0..info.ncols() {
            info[(j, j)] += self.penalty_mask(j);
        }
        info
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Log-likelihood of `beta` on `rows` (ridge 0).
pub fn log_likelihood(rows: &[DesignRow], beta: &[f64]) -> Result<f64> {
    let problem = Problem::new(rows, 0.0)?;
    check_len(&problem, beta)?;
    Ok(problem.log_likelihood(&DVector::from_column_slice(beta)))
}

/// Analytic gradient X'(y - p) of the log-likelihood (ridge 0).
pub fn gradient(rows: &[DesignRow], beta: &[f64]) -> Result<Vec<f64>> {
    let problem = Problem::new(rows, 0.0)?;
    check_len(&problem, beta)?;
    Ok(problem
        .gradient(&DVector::from_column_slice(beta))
        .iter()
        .copied()
        .collect())
}

fn check_len(problem: &Problem, beta: &[f64]) -> Result<()> {
    if beta.len() != problem.x.ncols() {
        return Err(Error::Dimension {
            expected: problem.x.ncols(),
            actual: beta.len(),
        });
    }
    Ok(())
}

fn default_names(k: usize) -> Vec<String> {
    if k == PREDICTORS.len() {
        PREDICTORS.iter().map(|s| (*s).to_owned()).collect()
    } else {
        (0..k)
            .map(|j| if j == 0 { "Intercept".to_owned() } else { format!("x{j}") })
            .collect()
    }
}

pub fn fit_logit(rows: &[DesignRow], options: &FitOptions) -> Result<LogitFit> {
    let k = rows.first().map_or(0, |r| r.x.len());
    fit_logit_named(rows, &default_names(k), options)
}

pub fn fit_logit_named(rows: &[DesignRow], names: &[String], options: &FitOptions) -> Result<LogitFit> {
    if options.ridge < 0.0 || !options.ridge.is_finite() {
        return Err(Error::Config("ridge penalty must be finite and >= 0".into()));
    }
    let problem = Problem::new(rows, options.ridge)?;
    let k = problem.x.ncols();
    if names.len() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: names.len(),
        });
    }
    if let Some(bad) = problem.y.iter().find(|y| **y != 0.0 && **y != 1.0) {
        return Err(Error::Validation(format!("outcome {bad} is not binary")));
    }
    let successes = problem.y.sum();
    if successes == 0.0 || successes == problem.y.len() as f64 {
        return Err(Error::Degenerate(format!(
            "all {} outcomes are {}; both classes are required",
            problem.y.len(),
            successes.min(1.0)
        )));
    }
    check_rank(&problem.x, names)?;

    let separation = |beta: &DVector<f64>| -> Result<()> {
        if options.ridge > 0.0 {
            return Ok(());
        }
        let (j, magnitude) = beta
            .iter()
            .enumerate()
            .map(|(j, b)| (j, b.abs()))
            .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if magnitude > options.separation_bound {
            return Err(Error::Separation {
                predictor: names[j].clone(),
                magnitude,
            });
        }
        Ok(())
    };

    let mut beta = DVector::zeros(k);
    let mut ll = problem.log_likelihood(&beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = problem.gradient(&beta);

    loop {
        if max_abs(&grad) < options.tol {
            converged = true;
            break;
        }
        if iterations == options.max_iter {
            break;
        }
        let info = problem.information(&beta);
        let step = match info.cholesky() {
            Some(chol) => chol.solve(&grad),
            None => {
                separation(&beta)?;
                return Err(Error::RankDeficient(
                    "information matrix is not positive definite".into(),
                ));
            }
        };

        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut candidate_ll = problem.log_likelihood(&candidate);
        let slack = 1e-12 * (1.0 + ll.abs());
        let mut halvings = 0;
        while (candidate_ll.is_nan() || candidate_ll < ll - slack) && halvings < 60 {
            t *= 0.5;
            candidate = &beta + &step * t;
            candidate_ll = problem.log_likelihood(&candidate);
            halvings += 1;
        }
        if candidate_ll.is_nan() || candidate_ll < ll - slack {
            // no ascent direction left; report what we have
            log::warn!("step-halving exhausted at iteration {iterations}");
            break;
        }
        beta = candidate;
        ll = candidate_ll;
        trace.push(ll);
        iterations += 1;
        separation(&beta)?;
        grad = problem.gradient(&beta);
    }

    let info = problem.information(&beta);
    let covariance = match info.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => {
            separation(&beta)?;
            return Err(Error::RankDeficient(
                "information matrix is singular at the solution".into(),
            ));
        }
    };
    // symmetrize away rounding noise
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    let std_errors: Vec<f64> = (0..k).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();

    // A coefficient that converged only because its gradient vanished in
    // the tail has an essentially unbounded standard error.
    if options.ridge == 0.0 {
        if let Some((j, se)) = std_errors
            .iter()
            .enumerate()
            .find(|(_, se)| **se > options.separation_bound)
        {
            return Err(Error::Separation {
                predictor: names[j].clone(),
                magnitude: beta[j].abs().max(*se),
            });
        }
    }

    let beta_vec: Vec<f64> = beta.iter().copied().collect();
    let wald = wald_from_se(&beta_vec, &std_errors);
    Ok(LogitFit {
        names: names.to_vec(),
        odds_ratios: beta_vec.iter().map(|b| odds_ratio(*b)).collect(),
        covariance: (0..k)
            .map(|i| (0..k).map(|j| covariance[(i, j)]).collect())
            .collect(),
        std_errors,
        z_scores: wald.z_scores,
        p_values: wald.p_values,
        ci_low: wald.ci_low,
        ci_high: wald.ci_high,
        beta: beta_vec,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        gradient_max_norm: max_abs(&grad),
        n_iterations: iterations,
        converged,
        n_obs: rows.len(),
        ridge: options.ridge,
    })
}

fn check_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    for (column, name) in x.column_iter().zip(names) {
        if column.iter().all(|v| *v == 0.0) {
            return Err(Error::RankDeficient(format!("column '{name}' is all zeros")));
        }
    }
    let singular = x.clone().svd(false, false).singular_values;
    let max = singular.max();
    let min = singular.min();
    if min.is_nan() || min <= 1e-10 * max {
        return Err(Error::RankDeficient(format!(
            "columns {} are linearly dependent (condition {:.1e})",
            names.join(", "),
            max / min
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(k: usize, n: usize) -> Vec<DesignRow> {
        (0..n)
            .map(|i| DesignRow { y: if i < k { 1.0 } else { 0.0 }, x: vec![1.0] })
            .collect()
    }

    #[test]
    fn intercept_only_is_sample_log_odds() {
        for (k, n) in [(1usize, 2usize), (7, 30), (28, 30), (3, 1000)] {
            let fit = fit_logit(&intercept_only(k, n), &FitOptions::default()).unwrap();
            let expected = (k as f64 / (n - k) as f64).ln();
            assert!(fit.converged);
            assert!((fit.beta[0] - expected).abs() < 1e-9, "{k}/{n}");
            assert!((sigmoid(fit.beta[0]) - k as f64 / n as f64).abs() < 1e-9);
            // se of the log-odds is 1/sqrt(n p (1-p))
            let p = k as f64 / n as f64;
            let se = 1.0 / (n as f64 * p * (1.0 - p)).sqrt();
            assert!((fit.std_errors[0] - se).abs() < 1e-9);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let rows = intercept_only(0, 50);
        assert!(matches!(fit_logit(&rows, &FitOptions::default()), Err(Error::Degenerate(_))));
        let rows = intercept_only(50, 50);
        assert!(matches!(fit_logit(&rows, &FitOptions::default()), Err(Error::Degenerate(_))));
    }

    fn separated() -> Vec<DesignRow> {
        // y = 1 exactly when x1 = 1
        (0..40)
            .map(|i| {
                let x1 = f64::from(u8::from(i % 2 == 0));
                let x2 = f64::from((i / 2) % 3) / 2.0;
                DesignRow { y: x1, x: vec![1.0, x1, x2] }
            })
            .collect()
    }

    #[test]
    fn complete_separation_detected() {
        match fit_logit(&separated(), &FitOptions::default()) {
            Err(Error::Separation { predictor, .. }) => assert!(predictor == "x1" || predictor == "Intercept"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn ridge_fits_separated_data() {
        let fit = fit_logit(&separated(), &FitOptions { ridge: 1.0, ..FitOptions::default() }).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[1] > 0.0);
    }

    #[test]
    fn quasi_separation_detected() {
        // outcome is always 0 when x1 = 1, mixed otherwise
        let rows: Vec<DesignRow> = (0..60)
            .map(|i| {
                let x1 = f64::from(u8::from(i < 30));
                let y = if x1 == 1.0 { 0.0 } else { f64::from(u8::from(i % 3 == 0)) };
                DesignRow { y, x: vec![1.0, x1] }
            })
            .collect();
        assert!(matches!(fit_logit(&rows, &FitOptions::default()), Err(Error::Separation { .. })));
    }

    #[test]
    fn rank_deficiency_detected() {
        let rows: Vec<DesignRow> = (0..20)
            .map(|i| {
                let v = f64::from(i % 4) / 3.0;
                DesignRow { y: f64::from(u8::from(i % 3 == 0)), x: vec![1.0, v, 2.0 * v] }
            })
            .collect();
        assert!(matches!(fit_logit(&rows, &FitOptions::default()), Err(Error::RankDeficient(_))));
        let zero_col: Vec<DesignRow> = (0..20)
            .map(|i| DesignRow { y: f64::from(u8::from(i % 3 == 0)), x: vec![1.0, 0.0] })
            .collect();
        assert!(matches!(fit_logit(&zero_col, &FitOptions::default()), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn max_iter_zero_reports_not_converged() {
        let fit = fit_logit(&intercept_only(7, 30), &FitOptions { max_iter: 0, ..FitOptions::default() }).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.n_iterations, 0);
    }

    #[test]
    fn dimension_checks() {
        let rows = vec![DesignRow { y: 1.0, x: vec![1.0, 0.0] }, DesignRow { y: 0.0, x: vec![1.0] }];
        assert!(matches!(fit_logit(&rows, &FitOptions::default()), Err(Error::Dimension { .. })));
        assert!(log_likelihood(&intercept_only(1, 2), &[0.0, 1.0]).is_err());
    }
}
