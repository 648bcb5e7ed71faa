use crate::error::SpeedupError;

/// Range of mean per-trial cost fractions observed for early-terminating
/// samplers; values outside it are flagged, not rejected.
pub const EMPIRICAL_COST_FRACTION: (f64, f64) = (0.05, 0.3);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedupEstimate {
    pub speedup: f64,
    /// `f` lies outside [`EMPIRICAL_COST_FRACTION`].
    pub outside_empirical_range: bool,
}

/// Expected wall-clock gain of `trials` guided trials, each costing on average
/// a fraction `cost_fraction` of a full run, over exhaustively evaluating
/// `configurations`: `N / (T · f)`.
pub fn estimate_speedup(configurations: u64, trials: u64, cost_fraction: f64) -> Result<SpeedupEstimate, SpeedupError> {
    if configurations == 0 || trials == 0 {
        return Err(SpeedupError::Domain("N and T must be at least 1"));
    }
    if !(cost_fraction > 0.0 && cost_fraction <= 1.0) {
        return Err(SpeedupError::Domain("f must lie in (0, 1]"));
    }
    let (lo, hi) = EMPIRICAL_COST_FRACTION;
    Ok(SpeedupEstimate {
        speedup: configurations as f64 / (trials as f64 * cost_fraction),
        outside_empirical_range: !(lo..=hi).contains(&cost_fraction),
    })
}
