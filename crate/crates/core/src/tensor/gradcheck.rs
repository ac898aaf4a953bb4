//! Central finite-difference verification of analytic gradients.

use super::Tensor;
use crate::error::Result;

/// Settings for [`finite_diff_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradient entries
    /// that are zero up to round-off are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
    /// Set when the function produced a non-finite value.
    pub failure: Option<String>,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.failure {
            Some(msg) => write!(f, "FAILED: {msg}"),
            None => write!(
                f,
                "max rel err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e}) -> {}",
                self.max_rel_error,
                self.worst_index,
                self.analytic,
                self.numeric,
                if self.passed { "pass" } else { "fail" }
            ),
        }
    }
}

/// Compares the analytic gradient returned by `f` at `params` against
/// central differences of its scalar value, one coordinate at a time.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<F>(mut f: F, params: &Tensor, cfg: GradCheck) -> Result<CheckReport>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    let (value, analytic) = f(params)?;
    if !value.is_finite() || !analytic.is_finite() {
        return Ok(failure("non-finite value or gradient at the base point".into()));
    }
    if analytic.shape() != params.shape() {
        return Ok(failure(format!(
            "gradient shape {:?} differs from parameter shape {:?}",
            analytic.shape(),
            params.shape()
        )));
    }
    let mut probe = params.clone();
    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
        failure: None,
    };
    for i in 0..params.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + cfg.step;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - cfg.step;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Ok(failure(format!("non-finite value when perturbing coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(cfg.floor);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

fn failure(msg: String) -> CheckReport {
    CheckReport {
        max_rel_error: f64::INFINITY,
        worst_index: 0,
        analytic: f64::NAN,
        numeric: f64::NAN,
        passed: false,
        failure: Some(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let report = finite_diff_check(
            |p| Ok((p.sq_norm(), p.scale(2.0))),
            &x,
            GradCheck {
                tolerance: 1e-8,
                ..GradCheck::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{report}");
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(&[3], vec![-4.0, 0.5, 9.0]).unwrap();
        let report = finite_diff_check(
            |p| Ok((p.sum(), Tensor::full(p.shape(), 1.0))),
            &x,
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.passed);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let report = finite_diff_check(|p| Ok((p.sq_norm(), p.clone())), &x, GradCheck::default()).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn non_finite_is_reported_with_location() {
        let x = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let report = finite_diff_check(
            |p| {
                let v = p.data()[1];
                let val = if v < 0.0 { f64::NAN } else { v };
                Ok((val, Tensor::new(&[2], vec![0.0, 1.0])?))
            },
            &x,
            GradCheck::default(),
        )
        .unwrap();
        assert!(!report.passed);
        assert!(report.failure.unwrap().contains("coordinate 1"));
    }
}
