use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};

use super::FlowTermSet;
use crate::error::{Error, Result};
use crate::estimator::Provenance;
use crate::linalg::KahanSum;
use crate::network::{Layout, NetworkCase};

/// Highest derivative order built unless a caller raises the limit.
pub const DEFAULT_MAX_ORDER: usize = 8;

/// Symmetric derivative tensor of one order, stored sparsely by sorted index multiset.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTensor {
    order: usize,
    rows: usize,
    dim: usize,
    entries: BTreeMap<(usize, Vec<u16>), f64>,
}

impl DerivativeTensor {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entry for a row and any ordering of the lower indices.
    pub fn get(&self, row: usize, indices: &[usize]) -> f64 {
        assert_eq!(
            indices.len(),
            self.order,
            "index count must match tensor order"
        );
        let mut key: Vec<u16> = indices.iter().map(|&i| i as u16).collect();
        key.sort_unstable();
        self.entries.get(&(row, key)).copied().unwrap_or(0.0)
    }

    /// Stored entries as `(row, sorted indices, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[u16], f64)> + '_ {
        self.entries
            .iter()
            .map(|((r, idx), v)| (*r, idx.as_slice(), *v))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Base injections and derivative tensors of orders `1..=K` for the full map.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    layout: Layout,
    /// Full injection vector at the base point, `(P_1..P_{N-1}, Q_1..Q_{N-1})`.
    base: Vec<f64>,
    tensors: Vec<DerivativeTensor>,
    provenance: Provenance,
}

const ROTATION: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

/// `d^c/dV^c V^deg / V^deg`, i.e. the falling factorial over `V^c`.
fn voltage_factor(degree: usize, count: usize, v: f64) -> f64 {
    if count > degree {
        return 0.0;
    }
    let falling: f64 = (0..count).map(|t| (degree - t) as f64).product();
    falling / v.powi(count as i32)
}

impl DerivativeStack {
    /// Builds orders `1..=order` with the default order limit.
    pub fn build(terms: &FlowTermSet, order: usize) -> Result<Self> {
        Self::build_with_limit(terms, order, DEFAULT_MAX_ORDER)
    }

    pub fn build_with_limit(terms: &FlowTermSet, order: usize, limit: usize) -> Result<Self> {
        if order > limit {
            return Err(Error::OrderTooHigh {
                requested: order,
                max: limit,
            });
        }
        if order == 0 {
            return Err(Error::Config("derivative order must be at least 1".into()));
        }
        let layout = terms.layout;
        let mut base = terms.p.clone();
        base.extend_from_slice(&terms.q);
        let tensors = (1..=order)
            .map(|k| Self::tensor_of_order(terms, k))
            .collect();
        Ok(DerivativeStack {
            layout,
            base,
            tensors,
            provenance: terms.provenance,
        })
    }

    fn tensor_of_order(terms: &FlowTermSet, k: usize) -> DerivativeTensor {
        let layout = terms.layout;
        let rows = layout.angle_count();
        let v = &terms.voltage;
        let mut acc: BTreeMap<(usize, Vec<u16>), KahanSum> = BTreeMap::new();

        for i in 0..rows {
            let di = layout.angle_coord(i).expect("row buses carry an angle");
            let vi = layout.voltage_coord(i);
            for j in 0..layout.buses {
                let c = terms.term(i, j);
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                let diag = i == j;
                let (dj, vj) = if diag {
                    (None, None)
                } else {
                    (layout.angle_coord(j), layout.voltage_coord(j))
                };
                // counts of δ_i, V_i, δ_j, V_j in the multiset
                for a in 0..=k {
                    for cv_i in 0..=(k - a) {
                        for b in 0..=(k - a - cv_i) {
                            let cv_j = k - a - cv_i - b;
                            if (cv_i > 0 && vi.is_none())
                                || (b > 0 && dj.is_none())
                                || (cv_j > 0 && vj.is_none())
                            {
                                continue;
                            }
                            if diag && a > 0 {
                                continue;
                            }
                            let vf = if diag {
                                voltage_factor(2, cv_i, v[i])
                            } else {
                                voltage_factor(1, cv_i, v[i]) * voltage_factor(1, cv_j, v[j])
                            };
                            if vf == 0.0 {
                                continue;
                            }
                            let turn = (a as i64 - b as i64).rem_euclid(4) as usize;
                            let value = c * ROTATION[turn] * vf;
                            let mut key: Vec<u16> = Vec::with_capacity(k);
                            key.extend(std::iter::repeat_n(di as u16, a));
                            if let Some(x) = vi {
                                key.extend(std::iter::repeat_n(x as u16, cv_i));
                            }
                            if let Some(x) = dj {
                                key.extend(std::iter::repeat_n(x as u16, b));
                            }
                            if let Some(x) = vj {
                                key.extend(std::iter::repeat_n(x as u16, cv_j));
                            }
                            key.sort_unstable();
                            acc.entry((layout.p_row(i), key.clone()))
                                .or_default()
                                .add(value.re);
                            acc.entry((layout.q_row(i), key)).or_default().add(value.im);
                        }
                    }
                }
            }
        }

        DerivativeTensor {
            order: k,
            rows: layout.full_rows(),
            dim: layout.dim(),
            entries: acc.into_iter().map(|(key, s)| (key, s.value())).collect(),
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Highest order held.
    pub fn order(&self) -> usize {
        self.tensors.len()
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Tensor of order `k >= 1`.
    pub fn tensor(&self, k: usize) -> &DerivativeTensor {
        &self.tensors[k - 1]
    }

    pub fn tensors(&self) -> &[DerivativeTensor] {
        &self.tensors
    }

    /// Order-1 tensor as a full Jacobian matrix.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let t = self.tensor(1);
        let mut m = DMatrix::zeros(t.rows, t.dim);
        for (r, idx, v) in t.iter() {
            m[(r, idx[0] as usize)] = v;
        }
        m
    }

    /// Square Jacobian of the reduced map rebuilt from the flow terms.
    pub fn reduced_jacobian(&self) -> DMatrix<f64> {
        let n = self.layout.dim();
        self.jacobian().rows(0, n).into_owned()
    }
}

/// Labelled dump of every stored entry, for inspection.
pub fn tensor_debug_json(case: &NetworkCase, stack: &DerivativeStack) -> Value {
    let orders: Vec<Value> = stack
        .tensors()
        .iter()
        .map(|t| {
            let entries: Vec<Value> = t
                .iter()
                .map(|(r, idx, v)| {
                    json!({
                        "row": case.row_label(r),
                        "indices": idx.iter().map(|&c| case.coord_label(c as usize)).collect::<Vec<_>>(),
                        "value": v,
                    })
                })
                .collect();
            json!({ "order": t.order(), "entries": entries })
        })
        .collect();
    json!({
        "provenance": stack.provenance().to_string(),
        "base": stack.base(),
        "orders": orders,
    })
}
