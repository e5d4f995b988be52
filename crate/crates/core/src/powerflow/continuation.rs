//! Natural-parameter continuation along injection rays `y_0 + λ u`.
//!
//! Steps use a tangent predictor and a Newton corrector. A step is accepted
//! only when the corrector converges on the same branch (unchanged sign of the
//! Jacobian determinant) with the smallest singular value above tolerance.
//! Failed steps are halved until the bracket is narrower than the configured
//! width; the last accepted point is then polished onto the fold itself.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{newton_solve, NewtonConfig, OperatingPoint, PowerFlowModel};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub initial_step: f64,
    pub max_step: f64,
    /// Step multiplier after an accepted step.
    pub growth: f64,
    /// Bisection stops once the failing step is below this width, p.u.
    pub bracket_width: f64,
    /// Smallest singular value treated as singular.
    pub sigma_tol: f64,
    /// Largest λ searched before giving up.
    pub horizon: f64,
    /// Angles must stay within this distance of their base values.
    pub angle_half_width: f64,
    pub corrector: NewtonConfig,
    /// Polish the bracketed fold with a point-of-collapse Newton solve.
    pub refine: bool,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            initial_step: 0.05,
            max_step: 0.25,
            growth: 1.5,
            bracket_width: 1e-6,
            sigma_tol: 1e-6,
            horizon: 100.0,
            angle_half_width: PI * (1.0 - 1e-9),
            corrector: NewtonConfig {
                tolerance: 1e-10,
                max_iterations: 15,
                polish: 2,
            },
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub lambda: f64,
    pub state: DVector<f64>,
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub direction: DVector<f64>,
    pub base_injection: DVector<f64>,
    /// Accepted points, starting with the base at λ = 0.
    pub samples: Vec<TraceSample>,
    pub boundary_lambda: f64,
    pub boundary_state: DVector<f64>,
    pub boundary_sigma: f64,
    /// Whether the fold was polished; otherwise the boundary is the bracket's feasible end.
    pub refined: bool,
}

impl ContinuationTrace {
    /// Whether σ_min strictly decreases over samples with λ ≥ (1 − fraction)·λ*.
    pub fn sigma_decreasing_tail(&self, fraction: f64) -> bool {
        let start = (1.0 - fraction) * self.boundary_lambda;
        let tail: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.lambda >= start)
            .map(|s| s.sigma_min)
            .chain(std::iter::once(self.boundary_sigma))
            .collect();
        tail.windows(2).all(|w| w[1] < w[0])
    }
}

struct Stepper<'a> {
    model: &'a PowerFlowModel,
    base: &'a OperatingPoint,
    u: &'a DVector<f64>,
    y0: DVector<f64>,
    det_sign: f64,
    config: &'a ContinuationConfig,
}

impl Stepper<'_> {
    fn new<'a>(
        model: &'a PowerFlowModel,
        base: &'a OperatingPoint,
        u: &'a DVector<f64>,
        config: &'a ContinuationConfig,
    ) -> Result<Stepper<'a>> {
        let n = model.dim();
        if u.len() != n {
            return Err(Error::Dimension(format!(
                "direction has {} entries, expected {n}",
                u.len()
            )));
        }
        let norm = u.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "direction must be a unit vector, norm is {norm}"
            )));
        }
        let jac = model.reduced_jacobian(&base.angle, &base.voltage);
        let sigma = linalg::sigma_min(&jac);
        if sigma < config.sigma_tol {
            return Err(Error::StepUnderflow { step: 0.0 });
        }
        Ok(Stepper {
            model,
            base,
            u,
            y0: model.reduced_injection(base),
            det_sign: linalg::det_sign(&jac),
            config,
        })
    }

    /// Corrected state at `to`, starting from the accepted state `x` at `from`.
    fn advance(&self, x: &DVector<f64>, from: f64, to: f64) -> Option<(DVector<f64>, f64)> {
        let model = self.model;
        let (angle, voltage) = model.expand_state(self.base, x);
        let jac = model.reduced_jacobian(&angle, &voltage);
        let tangent = linalg::solve(&jac, self.u)?;
        let predicted = x + tangent * (to - from);
        let init = model.point_from_reduced(self.base, &predicted);
        let target = &self.y0 + self.u * to;
        let report = newton_solve(model, &target, &init, &self.config.corrector).ok()?;
        let point = report.point;
        if !point.within_windows(&self.base.angle, self.config.angle_half_width) {
            return None;
        }
        let jac = model.reduced_jacobian(&point.angle, &point.voltage);
        if linalg::det_sign(&jac) != self.det_sign {
            return None;
        }
        let sigma = linalg::sigma_min(&jac);
        if !(sigma >= self.config.sigma_tol) {
            return None;
        }
        Some((model.reduced_state(&point), sigma))
    }

    /// Newton solve of `r(x) = y_0 + λu`, `J(x) v = 0`, `c·v = 1` started at a point near the fold.
    fn polish(&self, x: &DVector<f64>, lambda: f64) -> Option<(f64, DVector<f64>, f64)> {
        let model = self.model;
        let n = model.dim();
        let jac_at = |x: &DVector<f64>| {
            let (angle, voltage) = model.expand_state(self.base, x);
            model.reduced_jacobian(&angle, &voltage)
        };
        let (_, v0) = linalg::weakest_direction(&jac_at(x));
        let c = v0.clone();
        let mut z = DVector::zeros(2 * n + 1);
        z.rows_mut(0, n).copy_from(x);
        z[n] = lambda;
        z.rows_mut(n + 1, n).copy_from(&v0);

        let residual = |z: &DVector<f64>| {
            let x = z.rows(0, n).into_owned();
            let v = z.rows(n + 1, n).into_owned();
            let point = model.point_from_reduced(self.base, &x);
            let mut f = DVector::zeros(2 * n + 1);
            f.rows_mut(0, n)
                .copy_from(&(model.reduced_injection(&point) - &self.y0 - self.u * z[n]));
            f.rows_mut(n, n).copy_from(&(jac_at(&x) * &v));
            f[2 * n] = c.dot(&v) - 1.0;
            f
        };

        let h = 1e-6;
        let mut f = residual(&z);
        for _ in 0..30 {
            if linalg::inf_norm(&f) <= 1e-11 {
                break;
            }
            let x = z.rows(0, n).into_owned();
            let v = z.rows(n + 1, n).into_owned();
            let jac = jac_at(&x);
            let mut m = DMatrix::zeros(2 * n + 1, 2 * n + 1);
            m.view_mut((0, 0), (n, n)).copy_from(&jac);
            m.view_mut((0, n), (n, 1)).copy_from(&(-self.u));
            m.view_mut((n, n + 1), (n, n)).copy_from(&jac);
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let col = (jac_at(&xp) - jac_at(&xm)) * &v / (2.0 * h);
                m.view_mut((n, k), (n, 1)).copy_from(&col);
            }
            for k in 0..n {
                m[(2 * n, n + 1 + k)] = c[k];
            }
            let step = linalg::solve(&m, &f)?;
            z -= step;
            f = residual(&z);
            if !f.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        if linalg::inf_norm(&f) > 1e-9 {
            return None;
        }
        let x_fold = z.rows(0, n).into_owned();
        let sigma = linalg::sigma_min(&jac_at(&x_fold));
        let lambda_fold = z[n];
        let plausible = (x_fold.clone() - x).amax() <= 0.2
            && lambda_fold >= lambda - 1e-6
            && lambda_fold <= lambda + 0.05 * lambda.max(1.0)
            && sigma <= self.config.sigma_tol;
        plausible.then_some((lambda_fold, x_fold, sigma))
    }
}

/// Traces `r(x) = y_0 + λu` from the base point until the Jacobian turns singular.
pub fn continuation_trace(
    model: &PowerFlowModel,
    base: &OperatingPoint,
    u: &DVector<f64>,
    config: &ContinuationConfig,
) -> Result<ContinuationTrace> {
    let stepper = Stepper::new(model, base, u, config)?;
    let x0 = model.reduced_state(base);
    let sigma0 = linalg::sigma_min(&model.reduced_jacobian(&base.angle, &base.voltage));
    let mut samples = vec![TraceSample {
        lambda: 0.0,
        state: x0.clone(),
        sigma_min: sigma0,
    }];
    let (mut lambda, mut x, mut sigma) = (0.0, x0, sigma0);
    let mut step = config.initial_step;
    let mut attempts = 0usize;

    while step >= config.bracket_width {
        attempts += 1;
        if attempts > 100_000 || lambda >= config.horizon {
            return Err(Error::BoundaryNotFound {
                horizon: config.horizon,
            });
        }
        let to = (lambda + step).min(config.horizon);
        match stepper.advance(&x, lambda, to) {
            Some((next, s)) => {
                lambda = to;
                x = next;
                sigma = s;
                samples.push(TraceSample {
                    lambda,
                    state: x.clone(),
                    sigma_min: sigma,
                });
                step = (step * config.growth).min(config.max_step);
            }
            None => step /= 2.0,
        }
    }
    if samples.len() == 1 {
        return Err(Error::StepUnderflow { step });
    }

    let polished = if config.refine {
        stepper.polish(&x, lambda)
    } else {
        None
    };
    let (boundary_lambda, boundary_state, boundary_sigma, refined) = match polished {
        Some((l, xs, s)) => (l, xs, s, true),
        None => (lambda, x, sigma, false),
    };
    if refined && samples.last().is_some_and(|s| s.lambda >= boundary_lambda) {
        samples.pop();
    }

    Ok(ContinuationTrace {
        direction: u.clone(),
        base_injection: stepper.y0.clone(),
        samples,
        boundary_lambda,
        boundary_state,
        boundary_sigma,
        refined,
    })
}

/// States on the ray at each requested λ (ascending, non-negative), reached by continuation.
pub fn solve_ray(
    model: &PowerFlowModel,
    base: &OperatingPoint,
    u: &DVector<f64>,
    lambdas: &[f64],
    config: &ContinuationConfig,
) -> Result<Vec<DVector<f64>>> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) || lambdas.first().is_some_and(|l| *l < 0.0) {
        return Err(Error::Config(
            "ray parameters must be non-negative and ascending".into(),
        ));
    }
    let stepper = Stepper::new(model, base, u, config)?;
    let (mut lambda, mut x) = (0.0, model.reduced_state(base));
    let mut step = config.initial_step;
    let mut out = Vec::with_capacity(lambdas.len());
    for &target in lambdas {
        while lambda < target {
            let to = (lambda + step).min(target);
            match stepper.advance(&x, lambda, to) {
                Some((next, _)) => {
                    lambda = to;
                    x = next;
                    step = (step * config.growth).min(config.max_step);
                }
                None => {
                    step /= 2.0;
                    if step < 1e-3 * config.bracket_width {
                        return Err(Error::NonConvergence {
                            iterations: config.corrector.max_iterations,
                            mismatch: f64::INFINITY,
                        });
                    }
                }
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Writes `lambda, <reduced coordinates>, sigma_min`, one row per sample plus the boundary.
pub fn write_trace_csv<W: Write>(
    model: &PowerFlowModel,
    trace: &ContinuationTrace,
    out: W,
) -> Result<()> {
    let case = model.case();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lambda".to_string()];
    header.extend((0..model.dim()).map(|c| case.coord_label(c)));
    header.push("sigma_min".into());
    w.write_record(&header)?;
    let rows = trace
        .samples
        .iter()
        .map(|s| (s.lambda, &s.state, s.sigma_min))
        .chain(std::iter::once((
            trace.boundary_lambda,
            &trace.boundary_state,
            trace.boundary_sigma,
        )));
    for (lambda, state, sigma) in rows {
        let mut rec = vec![lambda.to_string()];
        rec.extend(state.iter().map(|v| v.to_string()));
        rec.push(sigma.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
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
    fn two_bus_nose() {
        let (model, base) = two_bus();
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let trace = continuation_trace(&model, &base, &u, &ContinuationConfig::default()).unwrap();
        assert!(
            (trace.boundary_lambda - 0.5).abs() <= 1e-4,
            "{}",
            trace.boundary_lambda
        );
        assert!((trace.boundary_state[1] - 0.5f64.sqrt()).abs() <= 1e-3);
        assert!(trace.boundary_sigma <= 1e-6);
        assert!(trace.refined);
        assert!(trace.samples.windows(2).all(|w| w[1].lambda > w[0].lambda));
        assert!(trace.samples.iter().all(|s| s.sigma_min > 0.0));
        assert!(trace.sigma_decreasing_tail(0.1));
    }

    #[test]
    fn accepted_samples_satisfy_the_ray() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let base = model.solve_base().unwrap();
        let mut u = DVector::zeros(14);
        u[model.case().index_of(5).unwrap()] = -0.6;
        u[model.case().index_of(7).unwrap()] = -0.8;
        let trace = continuation_trace(&model, &base, &u, &ContinuationConfig::default()).unwrap();
        for s in &trace.samples {
            let point = model.point_from_reduced(&base, &s.state);
            let r = model.reduced_injection(&point) - &trace.base_injection - &u * s.lambda;
            assert!(r.amax() <= 1e-8);
        }
        assert!(trace.boundary_sigma <= 1e-6);
        assert!(trace.boundary_lambda > 1.0 && trace.boundary_lambda < 10.0);
    }

    #[test]
    fn opposite_directions_give_distinct_folds() {
        let (model, base) = two_bus();
        // start from an interior point with some load
        let target = DVector::from_vec(vec![-0.2, 0.0]);
        let interior = newton_solve(&model, &target, &base, &NewtonConfig::default())
            .unwrap()
            .point;
        let u = DVector::from_vec(vec![0.6, 0.8]);
        let config = ContinuationConfig::default();
        let a = continuation_trace(&model, &interior, &u, &config).unwrap();
        let b = continuation_trace(&model, &interior, &(-&u), &config).unwrap();
        assert!(a.boundary_sigma <= config.sigma_tol && b.boundary_sigma <= config.sigma_tol);
        assert!((a.boundary_state.clone() - &b.boundary_state).amax() > 1e-3);
    }

    #[test]
    fn singular_base_underflows() {
        let (model, base) = two_bus();
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let trace = continuation_trace(&model, &base, &u, &ContinuationConfig::default()).unwrap();
        let nose = model.point_from_reduced(&base, &trace.boundary_state);
        let err =
            continuation_trace(&model, &nose, &u, &ContinuationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. }));
    }

    #[test]
    fn ray_states_match_closed_form() {
        let (model, base) = two_bus();
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let lambdas = [0.1, 0.25, 0.45];
        let states =
            solve_ray(&model, &base, &u, &lambdas, &ContinuationConfig::default()).unwrap();
        for (l, x) in lambdas.iter().zip(&states) {
            // δ = -asin(2P)/2, V = cos δ
            let delta = -(2.0 * l).asin() / 2.0;
            assert!((x[0] - delta).abs() < 1e-9);
            assert!((x[1] - delta.cos()).abs() < 1e-9);
        }
        assert!(solve_ray(&model, &base, &u, &[0.6], &ContinuationConfig::default()).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let (model, base) = two_bus();
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let trace = continuation_trace(&model, &base, &u, &ContinuationConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&model, &trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("lambda,delta_2,v_2,sigma_min"));
        assert_eq!(lines.count(), trace.samples.len() + 1);
    }
}
