use super::NumError;

/// Checks an analytic gradient against central finite differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - central| / max(|analytic|, |central|, 1e-8)`.
/// `loss` must be deterministic for fixed parameters; a non-finite loss value
/// aborts the check with an error identifying the perturbed coordinate.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(NumError::InvalidArgument {
            op: "grad_check",
            message: format!("eps must be positive, got {eps}"),
        });
    }
    if analytic.len() != params.len() {
        return Err(NumError::LengthMismatch {
            op: "grad_check: analytic",
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..params.len() {
        work[i] = params[i] + eps;
        let up = loss(&work);
        if !up.is_finite() {
            return Err(NumError::NonFinite {
                context: format!("grad_check: loss at +eps perturbation of coordinate {i}"),
                index: i,
            });
        }
        work[i] = params[i] - eps;
        let down = loss(&work);
        if !down.is_finite() {
            return Err(NumError::NonFinite {
                context: format!("grad_check: loss at -eps perturbation of coordinate {i}"),
                index: i,
            });
        }
        work[i] = params[i];
        let central = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(central.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - central).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_error_against_zero_gradient() {
        let params = [0.3, -1.2, 4.0];
        let analytic = [0.0; 3];
        let err = grad_check(|_| 42.0, &params, &analytic, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn quadratic_gradient_is_verified() {
        let params = [1.0, -2.0, 0.5];
        let analytic: Vec<f64> = params.iter().map(|v| 2.0 * v).collect();
        let err = grad_check(
            |p| p.iter().map(|v| v * v).sum::<f64>(),
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "error {err}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let params = [1.0, 2.0];
        let analytic = [2.0, 3.0]; // second entry should be 4.0
        let err = grad_check(
            |p| p.iter().map(|v| v * v).sum::<f64>(),
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err > 0.2, "error {err}");
    }

    #[test]
    fn non_finite_loss_names_the_coordinate() {
        let params = [0.5, 1.0];
        let analytic = [0.0, 0.0];
        let err = grad_check(
            |p| if p[1] > 1.0 { f64::NAN } else { 0.0 },
            &params,
            &analytic,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, NumError::NonFinite { index: 1, .. }));
    }

    #[test]
    fn non_positive_eps_is_rejected() {
        let err = grad_check(|_| 0.0, &[1.0], &[0.0], 0.0).unwrap_err();
        assert!(matches!(err, NumError::InvalidArgument { .. }));
    }
}
