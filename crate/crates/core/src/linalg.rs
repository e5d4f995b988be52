//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

const SVD_MAX_ITER: usize = 10_000;

/// Singular values; falls back to the eigenvalues of `MᵀM` if the SVD iteration stalls.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    match m.clone().try_svd(false, false, f64::EPSILON, SVD_MAX_ITER) {
        Some(svd) => svd.singular_values,
        None => (m.transpose() * m)
            .symmetric_eigen()
            .eigenvalues
            .map(|e| e.max(0.0).sqrt()),
    }
}

pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    singular_values(m).min()
}

/// Ratio of largest to smallest singular value; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    let (lo, hi) = (s.min(), s.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn smallest_eigenpair(sym: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = sym.symmetric_eigen();
    let idx = eig.eigenvalues.imin();
    (
        eig.eigenvalues[idx].max(0.0).sqrt(),
        eig.eigenvectors.column(idx).into_owned(),
    )
}

fn weakest_index(values: &DVector<f64>) -> (usize, f64) {
    values.iter().enumerate().fold(
        (0, f64::INFINITY),
        |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
    )
}

/// Smallest singular value of a square matrix with its right singular vector.
pub fn weakest_direction(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    match m.clone().try_svd(false, true, f64::EPSILON, SVD_MAX_ITER) {
        Some(svd) => {
            let v_t = svd.v_t.expect("requested right singular vectors");
            let (idx, sigma) = weakest_index(&svd.singular_values);
            (sigma, v_t.row(idx).transpose())
        }
        None => smallest_eigenpair(m.transpose() * m),
    }
}

/// Smallest singular value of `m` paired with the matching left singular vector.
pub fn weakest_left_direction(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    match m.clone().try_svd(true, false, f64::EPSILON, SVD_MAX_ITER) {
        Some(svd) => {
            let u = svd.u.expect("requested left singular vectors");
            let (idx, sigma) = weakest_index(&svd.singular_values);
            (sigma, u.column(idx).into_owned())
        }
        None => smallest_eigenpair(m * m.transpose()),
    }
}

pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(rhs)
}

pub fn det_sign(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().signum()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Compensated (Kahan-Babuska-Neumaier) summation; used where many terms of mixed sign cancel.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weakest_direction_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.5, 2.0]));
        let (s, v) = weakest_direction(&m);
        assert_eq!(s, 0.5);
        assert!((v[1].abs() - 1.0).abs() < 1e-15);
        assert_eq!(condition_number(&m), 6.0);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10 {
            k.add(1e-16);
        }
        k.add(-1.0);
        assert!((k.value() - 1e-15).abs() < 1e-20, "{}", k.value());
    }
}
