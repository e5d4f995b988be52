//! Power-flow equations, the analytic Jacobian, Newton solves and continuation.
//!
//! The analytic Jacobian here is the ground-truth model. The data-driven
//! pipeline never sees it unless a run explicitly asks for model provenance.

mod continuation;
mod newton;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{build_admittance, AdmittanceMatrices, BusType, Layout, NetworkCase};

pub use continuation::{
    continuation_trace, solve_ray, write_trace_csv, ContinuationConfig, ContinuationTrace,
    TraceSample,
};
pub use newton::{newton_solve, NewtonConfig, NewtonReport};

/// Full state and injections at one point, indexed by canonical bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub angle: Vec<f64>,
    pub voltage: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl OperatingPoint {
    /// True when every angle lies within `half_width` of the matching `centre`.
    pub fn within_windows(&self, centre: &[f64], half_width: f64) -> bool {
        self.angle
            .iter()
            .zip(centre)
            .all(|(a, c)| (a - c).abs() < half_width)
    }
}

/// A network case bundled with its admittance matrices.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    case: NetworkCase,
    y: AdmittanceMatrices,
}

impl PowerFlowModel {
    pub fn new(case: NetworkCase) -> Result<Self> {
        let y = build_admittance(&case)?;
        Ok(PowerFlowModel { case, y })
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn admittance(&self) -> &AdmittanceMatrices {
        &self.y
    }

    pub fn layout(&self) -> Layout {
        self.case.layout()
    }

    pub fn dim(&self) -> usize {
        self.case.dim()
    }

    /// Active and reactive injections at every bus.
    pub fn injections(&self, angle: &[f64], voltage: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.case.bus_count();
        assert_eq!(angle.len(), n, "angle vector length");
        assert_eq!(voltage.len(), n, "voltage vector length");
        let (g, b) = (&self.y.g, &self.y.b);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            let (mut pi, mut qi) = (0.0, 0.0);
            for j in 0..n {
                let (gij, bij) = (g[(i, j)], b[(i, j)]);
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (angle[i] - angle[j]).sin_cos();
                pi += voltage[j] * (gij * c + bij * s);
                qi += voltage[j] * (gij * s - bij * c);
            }
            p[i] = voltage[i] * pi;
            q[i] = voltage[i] * qi;
        }
        (p, q)
    }

    /// Operating point whose injections are evaluated from the given state.
    pub fn point(&self, angle: Vec<f64>, voltage: Vec<f64>) -> OperatingPoint {
        let (p, q) = self.injections(&angle, &voltage);
        OperatingPoint {
            angle,
            voltage,
            p,
            q,
        }
    }

    /// Largest deviation between stored and evaluated injections.
    pub fn consistency_residual(&self, op: &OperatingPoint) -> f64 {
        let (p, q) = self.injections(&op.angle, &op.voltage);
        p.iter()
            .zip(&op.p)
            .chain(q.iter().zip(&op.q))
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Full Jacobian: rows `(P_1..P_{N-1}, Q_1..Q_{N-1})`, columns `(δ_1..δ_{N-1}, V_1..V_{N_l})`.
    pub fn jacobian(&self, angle: &[f64], voltage: &[f64]) -> DMatrix<f64> {
        let layout = self.layout();
        let m = layout.angle_count();
        let (p, q) = self.injections(angle, voltage);
        let (g, b) = (&self.y.g, &self.y.b);
        let mut jac = DMatrix::zeros(layout.full_rows(), layout.dim());
        for i in 0..m {
            let (pr, qr) = (layout.p_row(i), layout.q_row(i));
            let vi = voltage[i];
            for j in 0..m {
                let (gij, bij) = (g[(i, j)], b[(i, j)]);
                if i == j {
                    jac[(pr, j)] = -q[i] - bij * vi * vi;
                    jac[(qr, j)] = p[i] - gij * vi * vi;
                    if let Some(c) = layout.voltage_coord(i) {
                        jac[(pr, c)] = p[i] / vi + gij * vi;
                        jac[(qr, c)] = q[i] / vi - bij * vi;
                    }
                    continue;
                }
                if gij == 0.0 && bij == 0.0 {
                    continue;
                }
                let (s, c) = (angle[i] - angle[j]).sin_cos();
                let vv = vi * voltage[j];
                jac[(pr, j)] = vv * (gij * s - bij * c);
                jac[(qr, j)] = -vv * (gij * c + bij * s);
                if let Some(col) = layout.voltage_coord(j) {
                    jac[(pr, col)] = vi * (gij * c + bij * s);
                    jac[(qr, col)] = vi * (gij * s - bij * c);
                }
            }
        }
        jac
    }

    /// Square Jacobian of the reduced map (first `n` rows of the full one).
    pub fn reduced_jacobian(&self, angle: &[f64], voltage: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        self.jacobian(angle, voltage).rows(0, n).into_owned()
    }

    /// Reduced state `(δ_1..δ_{N-1}, V_1..V_{N_l})`.
    pub fn reduced_state(&self, op: &OperatingPoint) -> DVector<f64> {
        let layout = self.layout();
        let m = layout.angle_count();
        DVector::from_iterator(
            layout.dim(),
            op.angle[..m]
                .iter()
                .chain(&op.voltage[..layout.pq])
                .copied(),
        )
    }

    /// Full state obtained by overwriting the reduced coordinates of `template`.
    pub fn expand_state(
        &self,
        template: &OperatingPoint,
        x: &DVector<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let layout = self.layout();
        let m = layout.angle_count();
        let mut angle = template.angle.clone();
        let mut voltage = template.voltage.clone();
        angle[..m].copy_from_slice(&x.as_slice()[..m]);
        voltage[..layout.pq].copy_from_slice(&x.as_slice()[m..]);
        (angle, voltage)
    }

    pub fn point_from_reduced(
        &self,
        template: &OperatingPoint,
        x: &DVector<f64>,
    ) -> OperatingPoint {
        let (angle, voltage) = self.expand_state(template, x);
        self.point(angle, voltage)
    }

    /// Full injection vector `(P_1..P_{N-1}, Q_1..Q_{N-1})`.
    pub fn full_injection(&self, op: &OperatingPoint) -> DVector<f64> {
        let m = self.layout().angle_count();
        DVector::from_iterator(2 * m, op.p[..m].iter().chain(&op.q[..m]).copied())
    }

    /// Reduced injection vector `(P_1..P_{N-1}, Q_1..Q_{N_l})`.
    pub fn reduced_injection(&self, op: &OperatingPoint) -> DVector<f64> {
        let layout = self.layout();
        let m = layout.angle_count();
        DVector::from_iterator(
            layout.dim(),
            op.p[..m].iter().chain(&op.q[..layout.pq]).copied(),
        )
    }

    /// Reduced injections scheduled by the case file.
    pub fn scheduled_injection(&self) -> DVector<f64> {
        let layout = self.layout();
        let buses = &self.case.buses;
        let m = layout.angle_count();
        DVector::from_iterator(
            layout.dim(),
            buses[..m]
                .iter()
                .map(|b| b.p_inj)
                .chain(buses[..layout.pq].iter().map(|b| b.q_inj)),
        )
    }

    /// Starting guess from the case: stored angles, set-points at PV/slack buses.
    pub fn initial_point(&self) -> OperatingPoint {
        let angle = self.case.buses.iter().map(|b| b.angle).collect();
        let voltage = self
            .case
            .buses
            .iter()
            .map(|b| match b.kind {
                BusType::Pq if !(b.v_set > 0.0) => 1.0,
                _ => b.v_set,
            })
            .collect();
        self.point(angle, voltage)
    }

    /// Solves the scheduled case, giving the base operating point.
    pub fn solve_base(&self) -> Result<OperatingPoint> {
        let init = self.initial_point();
        let report = newton_solve(
            self,
            &self.scheduled_injection(),
            &init,
            &NewtonConfig::default(),
        )?;
        Ok(report.point)
    }

    /// Checks that a state has one entry per bus.
    pub fn check_state(&self, angle: &[f64], voltage: &[f64]) -> Result<()> {
        let n = self.case.bus_count();
        if angle.len() != n || voltage.len() != n {
            return Err(Error::Dimension(format!(
                "state has {} angles and {} voltages, case has {n} buses",
                angle.len(),
                voltage.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn flat_start_without_shunts_has_no_injection() {
        let mut case = cases::wscc9();
        for br in &mut case.branches {
            br.b_charging = 0.0;
        }
        let model = PowerFlowModel::new(case).unwrap();
        let (p, q) = model.injections(&[0.0; 9], &[1.0; 9]);
        assert!(p.iter().chain(&q).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn two_bus_closed_form_point() {
        let model = PowerFlowModel::new(cases::two_bus()).unwrap();
        // canonical order puts the PQ bus first
        let (p, q) = model.injections(&[-FRAC_PI_4, 0.0], &[std::f64::consts::FRAC_1_SQRT_2, 1.0]);
        assert!((p[0] + 0.5).abs() < 1e-12);
        assert!(q[0].abs() < 1e-12);
    }

    #[test]
    fn two_bus_flat_start_jacobian() {
        let model = PowerFlowModel::new(cases::two_bus()).unwrap();
        let j = model.jacobian(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(j.shape(), (2, 2));
        assert!((j[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((j[(1, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uncoupled_pair_has_zero_entry() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let base = model.solve_base().unwrap();
        let j = model.jacobian(&base.angle, &base.voltage);
        let case = model.case();
        // buses 5 and 9 share no branch
        let (i, k) = (case.index_of(5).unwrap(), case.index_of(9).unwrap());
        assert_eq!(j[(i, k)], 0.0);
    }

    #[test]
    fn nine_bus_base_matches_schedule() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let base = model.solve_base().unwrap();
        let r = model.reduced_injection(&base) - model.scheduled_injection();
        assert!(r.amax() <= 1e-8);
        assert!(model.consistency_residual(&base) == 0.0);
    }

    fn fd_jacobian(model: &PowerFlowModel, op: &OperatingPoint, h: f64) -> DMatrix<f64> {
        let n = model.dim();
        let x0 = model.reduced_state(op);
        let mut fd = DMatrix::zeros(model.layout().full_rows(), n);
        for c in 0..n {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[c] += h;
            xm[c] -= h;
            let fp = model.full_injection(&model.point_from_reduced(op, &xp));
            let fm = model.full_injection(&model.point_from_reduced(op, &xm));
            fd.set_column(c, &((fp - fm) / (2.0 * h)));
        }
        fd
    }

    #[test]
    fn jacobian_matches_central_differences() {
        for case in [cases::wscc9(), cases::four_bus(), cases::two_bus()] {
            let model = PowerFlowModel::new(case).unwrap();
            let base = model.solve_base().unwrap();
            let mut x = model.reduced_state(&base);
            for (k, v) in x.iter_mut().enumerate() {
                *v += 0.03 * ((k as f64) * 1.7).sin();
            }
            let op = model.point_from_reduced(&base, &x);
            let analytic = model.jacobian(&op.angle, &op.voltage);
            let fd = fd_jacobian(&model, &op, 1e-6);
            let scale = analytic.amax();
            assert!((analytic - fd).amax() <= 1e-6 * scale);
        }
    }

    #[test]
    fn reduced_state_round_trip() {
        let model = PowerFlowModel::new(cases::wscc9()).unwrap();
        let base = model.solve_base().unwrap();
        let x = model.reduced_state(&base);
        assert_eq!(x.len(), 14);
        let back = model.point_from_reduced(&base, &x);
        assert_eq!(back, base);
    }
}
