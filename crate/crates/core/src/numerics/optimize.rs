use crate::error::{NmaError, Result};

/// Number of intervals in the coarse scan preceding golden-section refinement.
pub const GRID_INTERVALS: usize = 128;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimises `f` on `[lo, hi]`.
///
/// A uniform scan over `GRID_INTERVALS + 1` points picks the best cell; a
/// golden-section search then refines inside the two cells adjacent to it
/// until the bracket is narrower than `tol`.
pub fn minimize_scalar<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(NmaError::InvalidArgument(format!("invalid search interval [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(NmaError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NmaError::NonFinite(x))
        }
    };

    let step = (hi - lo) / GRID_INTERVALS as f64;
    let grid_point = |k: usize| if k == GRID_INTERVALS { hi } else { lo + step * k as f64 };
    let mut best_k = 0;
    let mut best_v = f64::INFINITY;
    for k in 0..=GRID_INTERVALS {
        let v = eval(grid_point(k))?;
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    let mut a = grid_point(best_k.saturating_sub(1));
    let mut b = grid_point((best_k + 1).min(GRID_INTERVALS));
    let best_x = grid_point(best_k);

    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while (b - a).abs() > tol {
        if fc == fd {
            // flat to rounding: the minimum lies between the probes
            a = c;
            b = d;
            c = b - INV_PHI * (b - a);
            d = a + INV_PHI * (b - a);
            fc = eval(c)?;
            fd = eval(d)?;
        } else if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
        if b - a <= f64::EPSILON * (a.abs() + b.abs()) {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = eval(mid)?;
    // The bracket ends may hold the optimum when it sits on the boundary.
    let candidates = [(mid, fm), (best_x, best_v), (a, eval(a)?), (b, eval(b)?)];
    let (x, _) = candidates
        .into_iter()
        .fold((mid, fm), |acc, c| if c.1 < acc.1 { c } else { acc });
    Ok(x)
}
