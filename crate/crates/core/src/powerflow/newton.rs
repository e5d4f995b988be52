use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{OperatingPoint, PowerFlowModel};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Converged once the mismatch ∞-norm drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra iterations after convergence, kept only while they reduce the mismatch.
    pub polish: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-10,
            max_iterations: 50,
            polish: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub point: OperatingPoint,
    /// Iterations needed to reach the tolerance, not counting polishing.
    pub iterations: usize,
    pub mismatch: f64,
    /// Mismatch ∞-norm after each accepted iterate, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Solves `r(x) = target` for the reduced state, holding PV and slack voltages
/// and the slack angle at the values in `init`.
pub fn newton_solve(
    model: &PowerFlowModel,
    target: &DVector<f64>,
    init: &OperatingPoint,
    config: &NewtonConfig,
) -> Result<NewtonReport> {
    let n = model.dim();
    if target.len() != n {
        return Err(Error::Dimension(format!(
            "target has {} entries, expected {n}",
            target.len()
        )));
    }
    model.check_state(&init.angle, &init.voltage)?;

    let mut x = model.reduced_state(init);
    let mut point = model.point_from_reduced(init, &x);
    let mut f = model.reduced_injection(&point) - target;
    let mut norm = linalg::inf_norm(&f);
    let mut history = vec![norm];
    let mut iterations = 0;

    while !(norm <= config.tolerance) {
        if iterations == config.max_iterations || !norm.is_finite() || norm > 1e8 {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: norm,
            });
        }
        let jac = model.reduced_jacobian(&point.angle, &point.voltage);
        let step = linalg::solve(&jac, &f).ok_or_else(|| Error::SingularJacobian {
            sigma_min: linalg::sigma_min(&jac),
        })?;
        x -= step;
        iterations += 1;
        let (angle, voltage) = model.expand_state(init, &x);
        if voltage.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NonConvergence {
                iterations,
                mismatch: f64::INFINITY,
            });
        }
        point = model.point(angle, voltage);
        f = model.reduced_injection(&point) - target;
        norm = linalg::inf_norm(&f);
        history.push(norm);
    }

    for _ in 0..config.polish {
        let jac = model.reduced_jacobian(&point.angle, &point.voltage);
        let Some(step) = linalg::solve(&jac, &f) else {
            break;
        };
        let trial_x = &x - step;
        let trial = model.point_from_reduced(init, &trial_x);
        let trial_f = model.reduced_injection(&trial) - target;
        let trial_norm = linalg::inf_norm(&trial_f);
        if !(trial_norm < norm) {
            break;
        }
        x = trial_x;
        point = trial;
        f = trial_f;
        norm = trial_norm;
        history.push(norm);
    }

    Ok(NewtonReport {
        point,
        iterations,
        mismatch: norm,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    fn two_bus() -> (PowerFlowModel, OperatingPoint) {
        let model = PowerFlowModel::new(cases::two_bus()).unwrap();
        let base = model.solve_base().unwrap();
        (model, base)
    }

    #[test]
    fn fixed_point_needs_no_iteration() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let base = model.solve_base().unwrap();
        let target = model.reduced_injection(&base);
        let report = newton_solve(&model, &target, &base, &NewtonConfig::default()).unwrap();
        assert!(report.iterations <= 1);
        assert!(report.mismatch <= 1e-10);
    }

    #[test]
    fn two_bus_high_voltage_root() {
        let (model, base) = two_bus();
        let target = DVector::from_vec(vec![-0.49, 0.0]);
        let report = newton_solve(&model, &target, &base, &NewtonConfig::default()).unwrap();
        // lossless line, x = 1, Q = 0: V^4 - V^2 + P^2 = 0, high root V^2 = (1 + sqrt(1 - 4P^2)) / 2
        let p: f64 = 0.49;
        let v = ((1.0 + (1.0 - 4.0 * p * p).sqrt()) / 2.0).sqrt();
        assert!((report.point.voltage[0] - v).abs() < 1e-8);
    }

    #[test]
    fn two_bus_beyond_nose_fails() {
        let (model, base) = two_bus();
        let target = DVector::from_vec(vec![-0.6, 0.0]);
        let err = newton_solve(&model, &target, &base, &NewtonConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::NonConvergence { .. } | Error::SingularJacobian { .. }
        ));
    }

    #[test]
    fn final_iterations_decrease_monotonically() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let report = newton_solve(
            &model,
            &model.scheduled_injection(),
            &model.initial_point(),
            &NewtonConfig::default(),
        )
        .unwrap();
        let h = &report.history;
        assert!(h.len() >= 4);
        let tail = &h[h.len() - 4..];
        assert!(tail.windows(2).all(|w| w[1] < w[0]), "{h:?}");
    }

    #[test]
    fn wrong_target_length() {
        let (model, base) = two_bus();
        let target = DVector::from_vec(vec![0.0]);
        assert!(matches!(
            newton_solve(&model, &target, &base, &NewtonConfig::default()),
            Err(Error::Dimension(_))
        ));
    }
}
