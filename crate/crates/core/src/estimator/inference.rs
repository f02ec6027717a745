//! z statistics, normal-reference p-values and significance codes.

use libm::erfc;

/// Legend printed under every estimate table.
pub const SIGNIF_LEGEND: &str = "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05";

/// `(z, two-sided p)` for an estimate and its standard error, or `None`
/// when the standard error is not a positive finite number.
pub fn z_and_p(estimate: f64, std_err: f64) -> Option<(f64, f64)> {
    if !std_err.is_finite() || std_err <= 0.0 || !estimate.is_finite() {
        return None;
    }
    let z = estimate / std_err;
    Some((z, two_sided_p(z)))
}

/// `2 (1 - Φ(|z|))`, computed through `erfc` so the far tail keeps its
/// relative precision.
pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Stars by inclusive thresholds 0.001, 0.01 and 0.05.
pub fn significance_code(p: f64) -> &'static str {
    if p <= 0.001 {
        "***"
    } else if p <= 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        ""
    }
}
