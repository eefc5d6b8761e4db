use crate::error::{NmaError, Result};

use super::EffectMeasure;

/// Continuity correction added to every cell of a table containing a zero.
pub const DEFAULT_CORRECTION: f64 = 0.5;

/// Log odds ratio or log risk ratio of arm `b` against arm `a`, with its
/// inverse-variance standard error.
pub fn derive_contrast_binary(
    events_a: u64,
    total_a: u64,
    events_b: u64,
    total_b: u64,
    measure: EffectMeasure,
    correction: f64,
) -> Result<(f64, f64)> {
    if total_a == 0 || total_b == 0 {
        return Err(NmaError::InvalidArms("arm total must be at least 1".into()));
    }
    if events_a > total_a || events_b > total_b {
        return Err(NmaError::InvalidArms("events exceed arm total".into()));
    }
    if !(correction >= 0.0) || !correction.is_finite() {
        return Err(NmaError::InvalidArgument(format!("invalid continuity correction {correction}")));
    }
    if (events_a == 0 && events_b == 0) || (events_a == total_a && events_b == total_b) {
        return Err(NmaError::DegenerateTable);
    }

    let cells = [events_a, total_a - events_a, events_b, total_b - events_b];
    let c = if cells.contains(&0) { correction } else { 0.0 };
    let [ae, an, be, bn] = cells.map(|v| v as f64 + c);
    let (na, nb) = (ae + an, be + bn);

    let (effect, var) = match measure {
        EffectMeasure::LogOr => ((be * an / (ae * bn)).ln(), 1.0 / ae + 1.0 / an + 1.0 / be + 1.0 / bn),
        EffectMeasure::LogRr => ((be / nb / (ae / na)).ln(), 1.0 / be - 1.0 / nb + 1.0 / ae - 1.0 / na),
        EffectMeasure::Md => {
            return Err(NmaError::InvalidArgument("binary arms need logOR or logRR".into()));
        }
    };
    if !effect.is_finite() || !(var > 0.0) || !var.is_finite() {
        return Err(NmaError::DegenerateTable);
    }
    Ok((effect, var.sqrt()))
}

/// Mean difference `b - a`; the standard errors combine as
/// `sqrt(se_a² + se_b²)` and are never divided by arm sizes.
pub fn derive_contrast_continuous(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> Result<(f64, f64)> {
    if !(se_a > 0.0) || !(se_b > 0.0) || !se_a.is_finite() || !se_b.is_finite() {
        return Err(NmaError::InvalidArms("arm standard errors must be positive".into()));
    }
    if !mean_a.is_finite() || !mean_b.is_finite() {
        return Err(NmaError::InvalidArms("arm means must be finite".into()));
    }
    Ok((mean_b - mean_a, se_a.hypot(se_b)))
}
