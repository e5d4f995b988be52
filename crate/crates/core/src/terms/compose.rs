//! Taylor-mode composition of the derivative stack with a curve `x_0 + h(λ)`.
//!
//! For a multiset `F` of lower indices,
//! `∂_F r(x_0 + h(λ)) = Σ_{M ⊇ F} T[M] Π_l h_l(λ)^{c_l} / c_l!`, where `c` counts the
//! indices of `M \ F`. Because `h(0) = 0` an entry only reaches orders `≥ |M \ F|`,
//! so a truncation at degree `D` needs tensors up to order `|F| + D`.

use nalgebra::{DMatrix, DVector};

use super::DerivativeStack;
use crate::linalg::KahanSum;

/// Power series with vector coefficients; element `t` is the `λ^t` coefficient.
pub type Series = Vec<DVector<f64>>;

/// Series of symmetric second-derivative blocks: `coeffs[t][row]` is an `n × n` matrix.
#[derive(Debug, Clone)]
pub struct PairSeries {
    pub coeffs: Vec<Vec<DMatrix<f64>>>,
}

impl PairSeries {
    /// `Σ_{a,b} R[row](a, b) u^a w^b` as a series, for vector series `u` and `w`.
    pub fn contract(&self, u: &[DVector<f64>], w: &[DVector<f64>], degree: usize) -> Series {
        let rows = self.coeffs.first().map_or(0, |c| c.len());
        let mut out = vec![DVector::zeros(rows); degree + 1];
        for (t, out_t) in out.iter_mut().enumerate() {
            for (p, block) in self.coeffs.iter().enumerate().take(t + 1) {
                for q in 0..=(t - p) {
                    let r = t - p - q;
                    let (Some(uq), Some(wr)) = (u.get(q), w.get(r)) else {
                        continue;
                    };
                    for (row, m) in block.iter().enumerate() {
                        out_t[row] += uq.dot(&(m * wr));
                    }
                }
            }
        }
        out
    }
}

/// Runs of equal indices in a sorted multiset.
fn runs(indices: &[u16]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(4);
    for &i in indices {
        match out.last_mut() {
            Some((v, c)) if *v == i as usize => *c += 1,
            _ => out.push((i as usize, 1)),
        }
    }
    out
}

fn convolve_into(acc: &mut [f64], other: &[f64]) {
    let d = acc.len();
    let mut out = vec![0.0; d];
    for (p, a) in acc.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (q, b) in other.iter().enumerate().take(d - p) {
            out[p + q] += a * b;
        }
    }
    acc.copy_from_slice(&out);
}

struct Powers {
    /// `table[l][c]` holds `h_l(λ)^c / c!` truncated at the degree.
    table: Vec<Vec<Vec<f64>>>,
    degree: usize,
}

impl Powers {
    fn new(h: &[DVector<f64>], dim: usize, degree: usize, absolute: bool) -> Self {
        let table = (0..dim)
            .map(|l| {
                let mut base = vec![0.0; degree + 1];
                for (t, coeff) in h.iter().enumerate().take(degree + 1).skip(1) {
                    base[t] = if absolute { coeff[l].abs() } else { coeff[l] };
                }
                let mut powers = Vec::with_capacity(degree + 1);
                let mut current = vec![0.0; degree + 1];
                current[0] = 1.0;
                powers.push(current.clone());
                for c in 1..=degree {
                    convolve_into(&mut current, &base);
                    let scaled: Vec<f64> = current.iter().map(|v| v / c as f64).collect();
                    current = scaled;
                    powers.push(current.clone());
                }
                powers
            })
            .collect();
        Powers { table, degree }
    }

    /// Product series for the remaining index counts.
    fn product(&self, rest: &[(usize, usize)]) -> Vec<f64> {
        let mut acc = vec![0.0; self.degree + 1];
        acc[0] = 1.0;
        for &(l, c) in rest {
            if c > 0 {
                convolve_into(&mut acc, &self.table[l][c]);
            }
        }
        acc
    }
}

impl DerivativeStack {
    fn check_degree(&self, arity: usize, degree: usize) {
        assert!(
            arity + degree <= self.order(),
            "composition to degree {degree} needs derivative order {}, stack holds {}",
            arity + degree,
            self.order()
        );
    }

    /// `r(x_0 + h(λ))` for the leading `rows` rows, orders `0..=degree`.
    ///
    /// With `absolute` set, every tensor entry and curve coefficient enters by
    /// magnitude, which bounds the size of the terms that cancel.
    pub fn compose_image(
        &self,
        h: &[DVector<f64>],
        degree: usize,
        rows: usize,
        absolute: bool,
    ) -> Series {
        self.check_degree(0, degree);
        let powers = Powers::new(h, self.layout().dim(), degree, absolute);
        let mut acc = vec![vec![KahanSum::default(); degree + 1]; rows];
        for (r, base) in self.base().iter().enumerate().take(rows) {
            acc[r][0].add(if absolute { base.abs() } else { *base });
        }
        for tensor in self.tensors().iter().take(degree) {
            for (row, idx, value) in tensor.iter() {
                if row >= rows || value == 0.0 {
                    continue;
                }
                let value = if absolute { value.abs() } else { value };
                let series = powers.product(&runs(idx));
                for (t, s) in series.iter().enumerate() {
                    if *s != 0.0 {
                        acc[row][t].add(value * s);
                    }
                }
            }
        }
        (0..=degree)
            .map(|t| DVector::from_fn(rows, |r, _| acc[r][t].value()))
            .collect()
    }

    /// Jacobian along the curve: element `t` is the `λ^t` coefficient of `∂r/∂x(x_0 + h(λ))`.
    pub fn compose_jacobian(
        &self,
        h: &[DVector<f64>],
        degree: usize,
        rows: usize,
    ) -> Vec<DMatrix<f64>> {
        self.check_degree(1, degree);
        let n = self.layout().dim();
        let powers = Powers::new(h, n, degree, false);
        let mut acc = vec![KahanSum::default(); (degree + 1) * rows * n];
        let slot = |t: usize, r: usize, a: usize| (t * rows + r) * n + a;
        for tensor in self.tensors().iter().take(degree + 1) {
            for (row, idx, value) in tensor.iter() {
                if row >= rows || value == 0.0 {
                    continue;
                }
                let mut rest = runs(idx);
                if idx.len() - 1 > degree {
                    continue;
                }
                for k in 0..rest.len() {
                    let a = rest[k].0;
                    rest[k].1 -= 1;
                    let series = powers.product(&rest);
                    rest[k].1 += 1;
                    for (t, s) in series.iter().enumerate() {
                        if *s != 0.0 {
                            acc[slot(t, row, a)].add(value * s);
                        }
                    }
                }
            }
        }
        (0..=degree)
            .map(|t| DMatrix::from_fn(rows, n, |r, a| acc[slot(t, r, a)].value()))
            .collect()
    }

    /// Second derivatives along the curve, one symmetric `n × n` block per row and order.
    pub fn compose_hessian(&self, h: &[DVector<f64>], degree: usize, rows: usize) -> PairSeries {
        self.check_degree(2, degree);
        let n = self.layout().dim();
        let powers = Powers::new(h, n, degree, false);
        let mut acc = vec![KahanSum::default(); (degree + 1) * rows * n * n];
        let slot = |t: usize, r: usize, a: usize, b: usize| ((t * rows + r) * n + a) * n + b;
        for tensor in self.tensors().iter().skip(1).take(degree + 1) {
            for (row, idx, value) in tensor.iter() {
                if row >= rows || value == 0.0 || idx.len() - 2 > degree {
                    continue;
                }
                let mut rest = runs(idx);
                for k in 0..rest.len() {
                    for l in k..rest.len() {
                        if k == l && rest[k].1 < 2 {
                            continue;
                        }
                        let (a, b) = (rest[k].0, rest[l].0);
                        rest[k].1 -= 1;
                        rest[l].1 -= 1;
                        let series = powers.product(&rest);
                        rest[k].1 += 1;
                        rest[l].1 += 1;
                        for (t, s) in series.iter().enumerate() {
                            if *s != 0.0 {
                                acc[slot(t, row, a, b)].add(value * s);
                            }
                        }
                    }
                }
            }
        }
        let coeffs = (0..=degree)
            .map(|t| {
                (0..rows)
                    .map(|r| {
                        DMatrix::from_fn(n, n, |a, b| {
                            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                            acc[slot(t, r, lo, hi)].value()
                        })
                    })
                    .collect()
            })
            .collect();
        PairSeries { coeffs }
    }
}
