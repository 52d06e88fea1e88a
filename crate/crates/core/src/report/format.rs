//! Render-time rounding. Values are kept unrounded everywhere else.

/// Rounds half away from zero at `dp` decimals. Products that land within
/// floating-point noise of a half are treated as exact halves, so 0.0745
/// at three decimals gives 0.075.
pub fn round_half_away(x: f64, dp: u32) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(dp as i32);
    let y = x.abs() * scale;
    let floor = y.floor();
    let frac = y - floor;
    let tol = 1e-9 * y.max(1.0);
    let r = if frac >= 0.5 - tol { floor + 1.0 } else { floor };
    (r / scale).copysign(x)
}

/// Fixed-point rendering without negative zero; NaN renders empty.
pub fn fixed(x: f64, dp: u32) -> String {
    if x.is_nan() {
        return String::new();
    }
    let r = round_half_away(x, dp);
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{:.*}", dp as usize, r)
}

/// Like [`fixed`] with an explicit `+` on positive values.
pub fn signed(x: f64, dp: u32) -> String {
    let s = fixed(x, dp);
    if s.is_empty() || s.starts_with('-') || s.trim_start_matches(['0', '.']).is_empty() {
        s
    } else {
        format!("+{s}")
    }
}

/// Fraction rendered as a percentage.
pub fn percent(fraction: f64, dp: u32) -> String {
    fixed(fraction * 100.0, dp)
}

pub fn p_value(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_owned()
    } else {
        fixed(p, 3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_round_away_from_zero() {
        assert_eq!(fixed(0.0745, 3), "0.075");
        assert_eq!(fixed(-0.0745, 3), "-0.075");
        assert_eq!(fixed(2.5, 0), "3");
        assert_eq!(fixed(-2.5, 0), "-3");
        assert_eq!(fixed(1.0049, 2), "1.00");
        assert_eq!(percent(0.93333333, 2), "93.33");
    }

    #[test]
    fn no_negative_zero() {
        assert_eq!(fixed(-0.0004, 3), "0.000");
        assert_eq!(signed(-0.0004, 1), "0.0");
        assert_eq!(signed(0.619, 1), "+0.6");
        assert_eq!(signed(-0.068, 2), "-0.07");
    }

    #[test]
    fn p_values() {
        assert_eq!(p_value(1e-12), "<0.001");
        assert_eq!(p_value(0.7021), "0.702");
        assert_eq!(p_value(0.001), "0.001");
    }

    #[test]
    fn nan_is_blank() {
        assert_eq!(fixed(f64::NAN, 2), "");
    }
}
