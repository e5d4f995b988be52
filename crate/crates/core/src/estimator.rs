//! First-order Jacobian of the full power-flow map estimated from increments.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::powerflow::{OperatingPoint, PowerFlowModel};

/// Smallest accepted ratio of extreme singular values of `ΔX`.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Estimated from measurement increments.
    Data,
    /// Taken from the analytic model.
    Model,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Data => "data",
            Provenance::Model => "model",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data" => Ok(Provenance::Data),
            "model" => Ok(Provenance::Model),
            other => Err(Error::Config(format!(
                "unknown provenance '{other}' (expected data or model)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    /// Rows `(P_1..P_{N-1}, Q_1..Q_{N-1})`, columns `(δ_1..δ_{N-1}, V_1..V_{N_l})`.
    pub jacobian: DMatrix<f64>,
    /// Condition number of `ΔX`; absent for model provenance.
    pub condition: Option<f64>,
    /// Euclidean norm of the fit residual per row.
    pub row_residuals: Vec<f64>,
    pub samples: usize,
    pub provenance: Provenance,
}

impl JacobianEstimate {
    /// Square Jacobian of the reduced map.
    pub fn reduced(&self) -> DMatrix<f64> {
        let n = self.jacobian.ncols();
        self.jacobian.rows(0, n).into_owned()
    }

    pub fn residual(&self) -> f64 {
        self.row_residuals.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// The analytic Jacobian at `op`, tagged as model provenance.
    pub fn from_model(model: &PowerFlowModel, op: &OperatingPoint) -> Self {
        let jacobian = model.jacobian(&op.angle, &op.voltage);
        JacobianEstimate {
            row_residuals: vec![0.0; jacobian.nrows()],
            jacobian,
            condition: None,
            samples: 0,
            provenance: Provenance::Model,
        }
    }
}

/// Sorts sample columns by their bit patterns so the fit does not depend on sample order.
fn canonical_columns(dx: &DMatrix<f64>, dy: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let key = |k: usize| -> Vec<u64> {
        dx.column(k)
            .iter()
            .chain(dy.column(k).iter())
            .map(|v| v.to_bits())
            .collect()
    };
    let mut order: Vec<usize> = (0..dx.ncols()).collect();
    order.sort_by_cached_key(|&k| key(k));
    let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, order[c])]);
    (pick(dx), pick(dy))
}

/// Fits `ΔY ≈ Ĵ ΔX`: exact inverse for `n` samples, least squares for more.
pub fn estimate_jacobian(dx: &DMatrix<f64>, dy: &DMatrix<f64>) -> Result<JacobianEstimate> {
    let (n, m) = dx.shape();
    if dy.ncols() != m {
        return Err(Error::Dimension(format!(
            "ΔX has {m} columns, ΔY has {}",
            dy.ncols()
        )));
    }
    if m < n {
        return Err(Error::TooFewSamples { have: m, need: n });
    }
    let (dx, dy) = canonical_columns(dx, dy);

    let sv = linalg::singular_values(&dx);
    let (lo, hi) = (sv.min(), sv.max());
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio >= RANK_TOLERANCE) {
        let (_, direction) = linalg::weakest_left_direction(&dx);
        return Err(Error::RankDeficient {
            ratio,
            direction: direction.iter().copied().collect(),
        });
    }

    let dxt = dx.transpose();
    let dyt = dy.transpose();
    let jt = if m == n {
        dxt.lu().solve(&dyt)
    } else {
        dxt.try_svd(true, true, f64::EPSILON, 10_000)
            .and_then(|svd| svd.solve(&dyt, 0.0).ok())
    }
    .ok_or(Error::RankDeficient {
        ratio,
        direction: Vec::new(),
    })?;
    let jacobian = jt.transpose();
    let residual = &dy - &jacobian * &dx;
    let row_residuals = residual.row_iter().map(|r| r.norm()).collect();

    Ok(JacobianEstimate {
        jacobian,
        condition: Some(hi / lo),
        row_residuals,
        samples: m,
        provenance: Provenance::Data,
    })
}

/// Labelled CSV: one row per injection, one column per reduced coordinate.
pub fn write_jacobian_csv<W: Write>(
    model: &PowerFlowModel,
    estimate: &JacobianEstimate,
    out: W,
) -> Result<()> {
    let case = model.case();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row".to_string()];
    header.extend((0..estimate.jacobian.ncols()).map(|c| case.coord_label(c)));
    header.push("residual".into());
    w.write_record(&header)?;
    for r in 0..estimate.jacobian.nrows() {
        let mut rec = vec![case.row_label(r)];
        rec.extend(estimate.jacobian.row(r).iter().map(|v| v.to_string()));
        rec.push(estimate.row_residuals[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        // small deterministic pseudo-random fill
        let mut state = seed;
        DMatrix::from_fn(rows, cols, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn exact_linear_map_is_recovered() {
        let a = matrix(6, 4, 1);
        let dx = matrix(4, 4, 2);
        let dy = &a * &dx;
        let est = estimate_jacobian(&dx, &dy).unwrap();
        assert!((est.jacobian - &a).amax() < 1e-13);
        assert_eq!(est.provenance, Provenance::Data);
        let dx = matrix(4, 9, 3);
        let dy = &a * &dx;
        let est = estimate_jacobian(&dx, &dy).unwrap();
        assert!((&est.jacobian - &a).amax() < 1e-13);
        assert!(est.residual() < 1e-13);
    }

    #[test]
    fn proportional_columns_are_rank_deficient() {
        let mut dx = matrix(4, 4, 5);
        let col = dx.column(1) * 2.0;
        dx.set_column(3, &col);
        let dy = matrix(6, 4, 6);
        match estimate_jacobian(&dx, &dy) {
            Err(Error::RankDeficient { ratio, direction }) => {
                assert!(ratio < 1e-10);
                // the named direction annihilates the samples
                let w = nalgebra::DVector::from_vec(direction);
                assert!((w.transpose() * &dx).amax() < 1e-12);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn too_few_samples() {
        let dx = matrix(4, 3, 1);
        let dy = matrix(6, 3, 2);
        assert!(matches!(
            estimate_jacobian(&dx, &dy),
            Err(Error::TooFewSamples { have: 3, need: 4 })
        ));
    }

    #[test]
    fn sample_order_does_not_matter() {
        let dx = matrix(5, 8, 9);
        let dy = matrix(7, 8, 10);
        let a = estimate_jacobian(&dx, &dy).unwrap();
        let perm = [3, 0, 7, 1, 6, 2, 5, 4];
        let px = DMatrix::from_fn(5, 8, |r, c| dx[(r, perm[c])]);
        let py = DMatrix::from_fn(7, 8, |r, c| dy[(r, perm[c])]);
        let b = estimate_jacobian(&px, &py).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_parses() {
        assert_eq!("model".parse::<Provenance>().unwrap(), Provenance::Model);
        assert!("truth".parse::<Provenance>().is_err());
        assert_eq!(Provenance::Data.to_string(), "data");
    }
}
