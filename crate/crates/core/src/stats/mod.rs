//! Binary logit fitting and Wald inference for the full-factorial data.

mod design;
mod inference;
mod logit;

pub use design::{build_design, design_row, DesignRow, Normalization, Stage2Row, PREDICTORS};
pub use inference::{
    effect_table, logit, odds_ratio, predict_prob, probability_table, sigmoid, significance_stars,
    two_sided_p, wald_from_se, wald_inference, EffectRow, ProbabilityRow, WaldStats, Z_95,
};
pub use logit::{fit_logit, fit_logit_named, gradient, log_likelihood, FitOptions, LogitFit};

/// Coefficients reported for the calibrated configuration, in
/// [`PREDICTORS`] order.
pub const REFERENCE_BETA: [f64; 6] = [-1.953, 3.015, 1.330, -0.872, -0.049, -4.184];
