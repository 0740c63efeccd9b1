//! Small scalar solvers shared by the models.

use crate::error::Result;

const MAX_BISECTIONS: usize = 200;

/// Bisection on `f` over `[lo, hi]`, which must bracket a sign change.
/// Stops when |f| < `ftol` or the bracket collapses to machine precision,
/// returning the best point seen.
pub(crate) fn bisect(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    ftol: f64,
) -> Result<f64> {
    let mut f_lo = f(lo)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let mut best = (f_lo.abs(), lo);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid)?;
        if f_mid.abs() < best.0 {
            best = (f_mid.abs(), mid);
        }
        if f_mid.abs() < ftol || (hi - lo) <= 4.0 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE) {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(best.1)
}

/// Minimises `f` on `[lo, hi]`: dense scan, then golden-section refinement
/// around the best grid point.
pub(crate) fn scan_then_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, grid: usize) -> f64 {
    let step = (hi - lo) / grid as f64;
    let (mut best_i, mut best_v) = (0usize, f64::INFINITY);
    for i in 0..=grid {
        let v = f(lo + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = (lo + step * (best_i as f64 - 1.0)).max(lo);
    let mut b = (lo + step * (best_i as f64 + 1.0)).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let grid_x = lo + step * best_i as f64;
    if f(x) <= best_v {
        x
    } else {
        grid_x
    }
}
