//! Higher-order derivatives of the full power-flow map from first-order data.
//!
//! Every injection is a sum of per-pair flow terms
//! `C_ij = V_i V_j conj(Y_ij) e^{j(δ_i - δ_j)} = H_ij + j K_ij`, with `P_i = Σ_j Re C_ij`
//! and `Q_i = Σ_j Im C_ij`. An angle derivative multiplies a term by
//! `j([m = i] - [m = j])`; a voltage derivative lowers the power of `V_m`
//! (at most two for the diagonal term, one otherwise). All `C_ij` can be read
//! off the first-order Jacobian together with the base `(P, Q, V)`, so every
//! derivative of every order follows from first-order data.

mod compose;
mod tensor;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimator::{JacobianEstimate, Provenance};
use crate::network::Layout;
use crate::powerflow::{OperatingPoint, PowerFlowModel};

pub use compose::{PairSeries, Series};
pub use tensor::{tensor_debug_json, DerivativeStack, DerivativeTensor, DEFAULT_MAX_ORDER};

/// Flow terms `C_ij` for row buses `i < N-1` and all partners `j`, plus the base values they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTermSet {
    pub layout: Layout,
    /// Real parts `H_ij`, `(N-1) × N`.
    pub h: DMatrix<f64>,
    /// Imaginary parts `K_ij`, `(N-1) × N`.
    pub k: DMatrix<f64>,
    /// Voltage magnitudes at every bus.
    pub voltage: Vec<f64>,
    /// Active injections at buses `1..N-1`.
    pub p: Vec<f64>,
    /// Reactive injections at buses `1..N-1`.
    pub q: Vec<f64>,
    pub provenance: Provenance,
}

impl FlowTermSet {
    pub fn term(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.h[(i, j)], self.k[(i, j)])
    }

    /// Terms evaluated directly from the admittance matrices (independent of any Jacobian).
    pub fn from_model(model: &PowerFlowModel, op: &OperatingPoint) -> Self {
        let layout = model.layout();
        let y = model.admittance();
        let (rows, n) = (layout.angle_count(), layout.buses);
        let mut h = DMatrix::zeros(rows, n);
        let mut k = DMatrix::zeros(rows, n);
        for i in 0..rows {
            for j in 0..n {
                let c = op.voltage[i]
                    * op.voltage[j]
                    * y.entry(i, j).conj()
                    * Complex64::from_polar(1.0, op.angle[i] - op.angle[j]);
                h[(i, j)] = c.re;
                k[(i, j)] = c.im;
            }
        }
        FlowTermSet {
            layout,
            h,
            k,
            voltage: op.voltage.clone(),
            p: op.p[..rows].to_vec(),
            q: op.q[..rows].to_vec(),
            provenance: Provenance::Model,
        }
    }

    /// Largest deviation of the row sums from the stored `(P, Q)`.
    pub fn row_sum_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.layout.angle_count() {
            let p: f64 = self.h.row(i).sum();
            let q: f64 = self.k.row(i).sum();
            worst = worst.max((p - self.p[i]).abs()).max((q - self.q[i]).abs());
        }
        worst
    }
}

/// Reads the flow terms off a full Jacobian and the base `(P, Q, V)`.
///
/// `p` and `q` need entries for buses `1..N-1` (longer vectors are truncated);
/// `voltage` needs every bus.
pub fn recover_flow_terms(
    estimate: &JacobianEstimate,
    layout: Layout,
    p: &[f64],
    q: &[f64],
    voltage: &[f64],
) -> Result<FlowTermSet> {
    let rows = layout.angle_count();
    let n = layout.buses;
    let jac = &estimate.jacobian;
    if jac.shape() != (layout.full_rows(), layout.dim()) {
        return Err(Error::Dimension(format!(
            "jacobian is {}x{}, expected {}x{}",
            jac.nrows(),
            jac.ncols(),
            layout.full_rows(),
            layout.dim()
        )));
    }
    if p.len() < rows || q.len() < rows || voltage.len() != n {
        return Err(Error::Dimension(
            "base injections or voltages do not match the case".into(),
        ));
    }
    if voltage.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Config("voltage magnitudes must be positive".into()));
    }

    let mut h = DMatrix::zeros(rows, n);
    let mut k = DMatrix::zeros(rows, n);
    for i in 0..rows {
        let (pr, qr) = (layout.p_row(i), layout.q_row(i));
        for j in 0..rows {
            if j == i {
                k[(i, i)] = q[i] + jac[(pr, i)];
                h[(i, i)] = p[i] - jac[(qr, i)];
            } else {
                k[(i, j)] = jac[(pr, j)];
                h[(i, j)] = -jac[(qr, j)];
            }
        }
        let slack = layout.slack();
        h[(i, slack)] = p[i] - h.row(i).columns(0, rows).sum();
        k[(i, slack)] = q[i] - k.row(i).columns(0, rows).sum();
    }

    Ok(FlowTermSet {
        layout,
        h,
        k,
        voltage: voltage.to_vec(),
        p: p[..rows].to_vec(),
        q: q[..rows].to_vec(),
        provenance: estimate.provenance,
    })
}

/// Relative mismatch between the voltage columns of the estimate and their
/// reconstruction from the flow terms (which only use the angle columns).
pub fn consistency_score(estimate: &JacobianEstimate, stack: &DerivativeStack) -> f64 {
    let layout = stack.layout();
    let m = layout.angle_count();
    let rebuilt = stack.jacobian();
    let cols = layout.pq;
    let given = estimate.jacobian.columns(m, cols);
    let diff = (given - rebuilt.columns(m, cols)).norm();
    let scale = given.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}
