use crate::Real;

/// Central finite-difference gradient checker.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)` where `a`
/// is the analytic and `n` the numerical derivative.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub step: Real,
    pub tolerance: Real,
    pub floor: Real,
}

impl Default for GradientCheck {
    fn default() -> Self {
        GradientCheck { step: 1e-5, tolerance: 1e-4, floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    /// Relative error per coordinate; `None` for excluded coordinates.
    pub per_coordinate: Vec<Option<Real>>,
    pub max_rel_error: Real,
    pub max_abs_error: Real,
    pub worst_index: Option<usize>,
    pub skipped: usize,
    pub tolerance: Real,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl GradientCheck {
    pub fn with_tolerance(tolerance: Real) -> Self {
        GradientCheck { tolerance, ..Default::default() }
    }

    pub fn run<F>(&self, f: F, point: &[Real], analytic: &[Real]) -> GradientReport
    where
        F: FnMut(&[Real]) -> Real,
    {
        self.run_excluding(f, point, analytic, |_| false)
    }

    /// Like [`run`](Self::run) but skips coordinates for which `exclude`
    /// returns true (non-differentiable points).
    pub fn run_excluding<F, X>(&self, mut f: F, point: &[Real], analytic: &[Real], exclude: X) -> GradientReport
    where
        F: FnMut(&[Real]) -> Real,
        X: Fn(usize) -> bool,
    {
        assert_eq!(point.len(), analytic.len(), "gradient length must match point");
        let mut x = point.to_vec();
        let mut per_coordinate = Vec::with_capacity(x.len());
        let mut max_rel: Real = 0.0;
        let mut max_abs: Real = 0.0;
        let mut worst = None;
        let mut skipped = 0;
        for i in 0..x.len() {
            if exclude(i) {
                per_coordinate.push(None);
                skipped += 1;
                continue;
            }
            let orig = x[i];
            x[i] = orig + self.step;
            let plus = f(&x);
            x[i] = orig - self.step;
            let minus = f(&x);
            x[i] = orig;
            let numeric = (plus - minus) / (2.0 * self.step);
            let abs = (analytic[i] - numeric).abs();
            let rel = abs / analytic[i].abs().max(numeric.abs()).max(self.floor);
            if worst.is_none() || rel > max_rel {
                max_rel = rel;
                worst = Some(i);
            }
            max_abs = max_abs.max(abs);
            per_coordinate.push(Some(rel));
        }
        GradientReport {
            per_coordinate,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            worst_index: worst,
            skipped,
            tolerance: self.tolerance,
        }
    }
}
