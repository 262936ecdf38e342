use super::{KernelError, Tensor2};

/// Differences at or below this are treated as agreement regardless of the
/// gradient's magnitude.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    /// Largest raw `|analytic − numeric|`, floor or not.
    pub max_abs_difference: f64,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Compares the analytic gradient of `f` at `params` against central
/// differences, coordinate by coordinate.
///
/// `f` returns the scalar value and its gradient with respect to every
/// tensor in `params`. Only the value is used for the probes.
pub fn grad_check<F>(f: F, params: &[Tensor2], step: f64) -> Result<GradCheckReport, KernelError>
where
    F: Fn(&[Tensor2]) -> (f64, Vec<Tensor2>),
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(KernelError::Precondition(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient count mismatch");

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        max_abs_difference: 0.0,
        coordinates_checked: 0,
    };
    for t in 0..params.len() {
        assert_eq!(analytic[t].shape(), params[t].shape());
        for c in 0..params[t].len() {
            let orig = params[t].data()[c];
            probe[t].data_mut()[c] = orig + step;
            let (plus, _) = f(&probe);
            probe[t].data_mut()[c] = orig - step;
            let (minus, _) = f(&probe);
            probe[t].data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(KernelError::NonFiniteProbe {
                    tensor: t,
                    coordinate: c,
                });
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t].data()[c];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            report.max_abs_difference = report.max_abs_difference.max((a - numeric).abs());
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((t, c));
            }
        }
    }
    Ok(report)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}
