//! Scalar root finding shared by the steady-state and rate-estimation solvers.

use crate::error::{Error, Result};

pub const BISECTION_TOL: f64 = 1e-9;
pub const BISECTION_MAX_ITER: usize = 200;

/// Solves `f(v) = target` for a nondecreasing `f` on `[lo, hi]`.
///
/// Iterates until the residual drops below [`BISECTION_TOL`] (scaled by the
/// target magnitude) *and* the bracket has shrunk to a few ulps, or until the
/// iteration cap is hit. Returns the midpoint of the final bracket.
pub fn bisect_increasing<F>(f: F, target: f64, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo <= hi) {
        return Err(Error::domain(format!("empty bracket [{lo}, {hi}]")));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo > target || f_hi < target {
        return Err(Error::domain(format!(
            "target {target} not bracketed: f({lo})={f_lo}, f({hi})={f_hi}"
        )));
    }
    let scale = target.abs().max(1.0);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    let residual = (f(root) - target).abs();
    if residual > BISECTION_TOL * scale && (hi - lo) > 1e-12 * hi.abs().max(1.0) {
        return Err(Error::domain(format!("bisection stalled with residual {residual:e}")));
    }
    Ok(root)
}

/// Grows `hi` geometrically from `start` until `f(hi) >= target`.
pub fn expand_upper<F>(f: &F, target: f64, start: f64) -> Option<f64>
where
    F: Fn(f64) -> f64,
{
    let mut hi = start.max(f64::MIN_POSITIVE);
    for _ in 0..2100 {
        if !hi.is_finite() {
            return None;
        }
        if f(hi) >= target {
            return Some(hi);
        }
        hi *= 2.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_square_root() {
        let r = bisect_increasing(|x| x * x, 2.0, 0.0, 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_unbracketed_target() {
        assert!(bisect_increasing(|x| x, 5.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn expansion_reaches_target() {
        let hi = expand_upper(&|x: f64| x.ln(), 10.0, 1.0).unwrap();
        assert!(hi.ln() >= 10.0);
        assert!(expand_upper(&|_x: f64| 0.0, 1.0, 1.0).is_none());
    }
}
