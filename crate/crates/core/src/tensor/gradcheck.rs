//! Central finite-difference gradient checks.

use super::Real;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates the objective declined to evaluate (kinks).
    pub skipped: usize,
}

/// Compares `analytic` against `(f(x + ε) − f(x − ε)) / 2ε` per coordinate.
/// The relative error is normalized by `max(|analytic|, |numeric|, ε)`.
pub fn finite_diff_check<T: Real>(mut f: impl FnMut(&[T]) -> T, point: &[T], analytic: &[T], eps: f64) -> GradCheck {
    finite_diff_check_with(|x| Some(f(x)), point, analytic, eps)
}

/// Like [`finite_diff_check`], but `f` may return `None` for a perturbed point
/// (for instance when a ReLU or max-pool decision flips), which skips that
/// coordinate.
pub fn finite_diff_check_with<T: Real>(
    mut f: impl FnMut(&[T]) -> Option<T>,
    point: &[T],
    analytic: &[T],
    eps: f64,
) -> GradCheck {
    assert_eq!(point.len(), analytic.len(), "gradient length must match the point");
    let mut x = point.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst_index: None, checked: 0, skipped: 0 };
    let e = T::of(eps);
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + e;
        let plus = f(&x);
        x[i] = orig - e;
        let minus = f(&x);
        x[i] = orig;
        let (Some(plus), Some(minus)) = (plus, minus) else {
            report.skipped += 1;
            continue;
        };
        // The realized step may differ from ε after rounding.
        let step = (orig + e).as_f64() - (orig - e).as_f64();
        let numeric = (plus.as_f64() - minus.as_f64()) / step;
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(eps);
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_derivative() {
        let r = finite_diff_check(|x: &[f64]| x[0], &[0.7], &[1.0], 1e-5);
        assert!(r.max_rel_error < 1e-10);
        let r = finite_diff_check(|x: &[f64]| x[0], &[3.0], &[2.0], 1e-5);
        assert!((r.max_rel_error - 0.5).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let f = |x: &[f64]| x.iter().map(|v| v.sin()).sum::<f64>();
        let p = [0.1f64, 0.5, -2.0];
        let g: Vec<f64> = p.iter().map(|v| v.cos()).collect();
        assert_eq!(finite_diff_check(f, &p, &g, 1e-5), finite_diff_check(f, &p, &g, 1e-5));
        assert!(finite_diff_check(f, &p, &g, 1e-5).max_rel_error < 1e-9);
    }

    #[test]
    fn skipped_coordinates_counted() {
        let r = finite_diff_check_with(|x: &[f64]| if x[1] != 0.0 { None } else { Some(x[0]) }, &[1.0, 0.0], &[1.0, 0.0], 1e-5);
        assert_eq!((r.checked, r.skipped), (1, 1));
    }
}
