//! Padé approximants of jet coordinates, pole extraction and boundary estimates.
//!
//! Coefficients are rescaled by `λ = sμ` before the Toeplitz solve so that the
//! first and last non-zero Taylor coefficients have equal magnitude; roots and
//! evaluation work in `μ` internally.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeodesicJet;
use crate::linalg;

/// Toeplitz systems above this condition number are rejected.
pub const CONDITION_LIMIT: f64 = 1e10;

/// `[L/M]` rational approximant of one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PadeApproximant {
    /// Numerator in `μ`, `ã_0..ã_L`.
    numerator: Vec<f64>,
    /// Denominator in `μ`, `b̃_0 = 1`.
    denominator: Vec<f64>,
    scale: f64,
    pub orders: (usize, usize),
    pub requested: (usize, usize),
    pub condition: f64,
    poles: Vec<Complex64>,
    zeros: Vec<Complex64>,
}

impl PadeApproximant {
    /// Numerator coefficients `a_0..a_L` in `λ`.
    pub fn numerator(&self) -> Vec<f64> {
        unscale(&self.numerator, self.scale)
    }

    /// Denominator coefficients `b_0..b_M` in `λ`, `b_0 = 1`.
    pub fn denominator(&self) -> Vec<f64> {
        unscale(&self.denominator, self.scale)
    }

    /// Denominator roots in `λ`.
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Numerator roots in `λ`.
    pub fn zeros(&self) -> &[Complex64] {
        &self.zeros
    }

    /// Taylor coefficients of `a/b` through `count - 1`, in `λ`.
    pub fn taylor(&self, count: usize) -> Vec<f64> {
        let mut d = vec![0.0; count];
        for k in 0..count {
            let mut s = self.numerator.get(k).copied().unwrap_or(0.0);
            for l in 1..self.denominator.len().min(k + 1) {
                s -= self.denominator[l] * d[k - l];
            }
            d[k] = s;
        }
        unscale(&d, self.scale)
    }

    /// Largest re-expansion mismatch against `coeffs`, relative to the largest rescaled coefficient.
    pub fn reexpansion_residual(&self, coeffs: &[f64]) -> f64 {
        let (l, m) = self.orders;
        let n = (l + m + 1).min(coeffs.len());
        let mut d = vec![0.0; n];
        let c = rescale(coeffs, self.scale);
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let mut s = self.numerator.get(k).copied().unwrap_or(0.0);
            for l in 1..self.denominator.len().min(k + 1) {
                s -= self.denominator[l] * d[k - l];
            }
            d[k] = s;
            worst = worst.max((s - c[k]).abs());
        }
        let reference = c[..n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if reference > 0.0 {
            worst / reference
        } else {
            worst
        }
    }
}

fn rescale(c: &[f64], s: f64) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(k, v)| v * s.powi(k as i32))
        .collect()
}

fn unscale(c: &[f64], s: f64) -> Vec<f64> {
    c.iter()
        .enumerate()
        .map(|(k, v)| v / s.powi(k as i32))
        .collect()
}

fn choose_scale(c: &[f64]) -> f64 {
    let top = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if top == 0.0 {
        return 1.0;
    }
    let live: Vec<usize> = (0..c.len()).filter(|&k| c[k].abs() > 1e-12 * top).collect();
    match (live.first(), live.last()) {
        (Some(&a), Some(&b)) if b > a => (c[a].abs() / c[b].abs()).powf(1.0 / (b - a) as f64),
        _ => 1.0,
    }
}

fn horner(c: &[f64], z: Complex64) -> Complex64 {
    c.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * z + v)
}

fn horner_real(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Roots of `Σ c_k z^k`, trailing negligible coefficients dropped.
pub fn poly_roots(c: &[f64]) -> Vec<Complex64> {
    let top = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if top == 0.0 {
        return Vec::new();
    }
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg].abs() <= 1e-13 * top {
        deg -= 1;
    }
    let c = &c[..=deg];
    let roots = match deg {
        0 => Vec::new(),
        1 => vec![Complex64::new(-c[0] / c[1], 0.0)],
        2 => quadratic(c[2], c[1], c[0]),
        3 => cubic(c[2] / c[3], c[1] / c[3], c[0] / c[3]),
        _ => {
            let mut companion = DMatrix::<f64>::zeros(deg, deg);
            for r in 1..deg {
                companion[(r, r - 1)] = 1.0;
            }
            for r in 0..deg {
                companion[(r, deg - 1)] = -c[r] / c[deg];
            }
            match Schur::try_new(companion, f64::EPSILON, 10_000) {
                Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
                None => Vec::new(),
            }
        }
    };
    roots.into_iter().map(|z| polish_root(c, z)).collect()
}

fn polish_root(c: &[f64], mut z: Complex64) -> Complex64 {
    let dc: Vec<f64> = (1..c.len()).map(|k| c[k] * k as f64).collect();
    for _ in 0..3 {
        let f = horner(c, z);
        let df = horner(&dc, z);
        if df.norm() == 0.0 {
            break;
        }
        let next = z - f / df;
        if !(horner(c, next).norm() < f.norm()) {
            break;
        }
        z = next;
    }
    z
}

fn quadratic(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    let disc = Complex64::new(b * b - 4.0 * a * c, 0.0).sqrt();
    let bz = Complex64::new(b, 0.0);
    let q = if (bz + disc).norm() >= (bz - disc).norm() {
        -(bz + disc) * 0.5
    } else {
        -(bz - disc) * 0.5
    };
    if q.norm() == 0.0 {
        return vec![Complex64::new(0.0, 0.0); 2];
    }
    vec![q / a, Complex64::new(c, 0.0) / q]
}

/// Roots of the monic cubic `z³ + a z² + b z + c`.
fn cubic(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let root = Complex64::new(q * q / 4.0 + p * p * p / 27.0, 0.0).sqrt();
    let half = Complex64::new(-q / 2.0, 0.0);
    let cube = if (half + root).norm() >= (half - root).norm() {
        half + root
    } else {
        half - root
    };
    let shift = Complex64::new(-a / 3.0, 0.0);
    if cube.norm() == 0.0 {
        return vec![shift; 3];
    }
    let u = cube.powf(1.0 / 3.0);
    let omega = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    (0..3)
        .map(|k| {
            let uk = u * omega.powu(k);
            uk - p / (3.0 * uk) + shift
        })
        .collect()
}

/// `[L/M]` approximant matching `coeffs[0..=L+M]`.
pub fn pade_from_taylor(coeffs: &[f64], l: usize, m: usize) -> Result<PadeApproximant> {
    if coeffs.len() < l + m + 1 {
        return Err(Error::OrderTooHigh {
            requested: l + m,
            max: coeffs.len().saturating_sub(1),
        });
    }
    let raw = &coeffs[..=l + m];
    let scale = choose_scale(raw);
    let c = rescale(raw, scale);
    let at = |k: isize| if k < 0 { 0.0 } else { c[k as usize] };
    let top = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut denominator = vec![0.0; m + 1];
    denominator[0] = 1.0;
    let mut condition = 1.0;
    if m > 0 {
        let rhs = DVector::from_fn(m, |r, _| -c[l + 1 + r]);
        if rhs.amax() > 1e-14 * top {
            let a = DMatrix::from_fn(m, m, |r, col| at(l as isize + r as isize - col as isize));
            condition = linalg::condition_number(&a);
            if !(condition <= CONDITION_LIMIT) {
                return Err(Error::PadeIllConditioned { condition });
            }
            let b = linalg::solve(&a, &rhs).ok_or(Error::PadeIllConditioned { condition })?;
            denominator[1..].copy_from_slice(b.as_slice());
        }
    }
    let numerator: Vec<f64> = (0..=l)
        .map(|k| (0..=k.min(m)).map(|j| denominator[j] * c[k - j]).sum())
        .collect();

    let to_lambda = |z: Complex64| z * scale;
    let poles = poly_roots(&denominator)
        .into_iter()
        .map(to_lambda)
        .collect();
    let zeros = poly_roots(&numerator).into_iter().map(to_lambda).collect();
    Ok(PadeApproximant {
        numerator,
        denominator,
        scale,
        orders: (l, m),
        requested: (l, m),
        condition,
        poles,
        zeros,
    })
}

/// Tries `[L/M]`, then `[L+1/M-1]` and so on while the Toeplitz system is ill-conditioned.
pub fn pade_with_fallback(coeffs: &[f64], l: usize, m: usize) -> Result<PadeApproximant> {
    let (mut l_try, mut m_try) = (l, m);
    loop {
        match pade_from_taylor(coeffs, l_try, m_try) {
            Ok(mut p) => {
                p.requested = (l, m);
                return Ok(p);
            }
            Err(Error::PadeIllConditioned { .. }) if m_try > 0 => {
                l_try += 1;
                m_try -= 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Value of `a(λ)/b(λ)`.
pub fn evaluate_pade(approx: &PadeApproximant, lambda: f64) -> Result<f64> {
    for z in &approx.poles {
        let distance = (z - lambda).norm();
        if distance <= 1e-9 {
            return Err(Error::PoleProximity { lambda, distance });
        }
    }
    let mu = lambda / approx.scale;
    Ok(horner_real(&approx.numerator, mu) / horner_real(&approx.denominator, mu))
}

/// How per-coordinate poles are combined into one boundary distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleFilter {
    /// A root counts as real when `|Im z| ≤ imag_tol·|z|`.
    pub imag_tol: f64,
    /// Pole and zero closer than this (relative) cancel.
    pub doublet_tol: f64,
    /// Poles beyond this distance are ignored.
    pub horizon: f64,
    pub aggregation: Aggregation,
}

impl Default for PoleFilter {
    fn default() -> Self {
        PoleFilter {
            imag_tol: 1e-3,
            doublet_tol: 1e-6,
            horizon: 100.0,
            aggregation: Aggregation::Median,
        }
    }
}

/// Smallest positive real pole of one approximant after the doublet filter.
pub fn coordinate_pole(approx: &PadeApproximant, filter: &PoleFilter) -> Option<f64> {
    approx
        .poles()
        .iter()
        .filter(|z| {
            z.re > 0.0 && z.im.abs() <= filter.imag_tol * z.norm() && z.re <= filter.horizon
        })
        .filter(|z| {
            !approx
                .zeros()
                .iter()
                .any(|w| (*w - **z).norm() <= filter.doublet_tol * z.norm())
        })
        .map(|z| z.re)
        .fold(None, |best: Option<f64>, r| {
            Some(best.map_or(r, |b| b.min(r)))
        })
}

/// Aggregated pole statistics across coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleStatistics {
    pub lambda: f64,
    pub coordinate_poles: Vec<Option<f64>>,
    pub min: f64,
    pub max: f64,
}

pub fn smallest_real_pole(
    approxs: &[PadeApproximant],
    filter: &PoleFilter,
) -> Result<PoleStatistics> {
    let coordinate_poles: Vec<Option<f64>> =
        approxs.iter().map(|a| coordinate_pole(a, filter)).collect();
    let mut found: Vec<f64> = coordinate_poles.iter().flatten().copied().collect();
    if found.is_empty() {
        return Err(Error::NoRealPole);
    }
    found.sort_by(f64::total_cmp);
    let k = found.len();
    let lambda = match filter.aggregation {
        Aggregation::Minimum => found[0],
        Aggregation::Median if k % 2 == 1 => found[k / 2],
        Aggregation::Median => 0.5 * (found[k / 2 - 1] + found[k / 2]),
    };
    Ok(PoleStatistics {
        lambda,
        min: found[0],
        max: found[k - 1],
        coordinate_poles,
    })
}

/// Per-coordinate approximants of a jet, each with its own fallback.
pub fn pade_jet(jet: &GeodesicJet, l: usize, m: usize) -> Result<Vec<PadeApproximant>> {
    (0..jet.base.len())
        .map(|c| pade_with_fallback(&jet.coordinate(c), l, m))
        .collect()
}

/// Evaluates every coordinate.
pub fn evaluate_pade_jet(approxs: &[PadeApproximant], lambda: f64) -> Result<DVector<f64>> {
    let values: Result<Vec<f64>> = approxs.iter().map(|a| evaluate_pade(a, lambda)).collect();
    Ok(DVector::from_vec(values?))
}

/// Boundary distance, injection and state along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEstimate {
    pub lambda: f64,
    pub coordinate_poles: Vec<Option<f64>>,
    pub pole_min: f64,
    pub pole_max: f64,
    /// `y_0 + λ_s u` for the reduced injection.
    pub injection: Vec<f64>,
    /// Approximant value just inside `λ_s`.
    pub state: Vec<f64>,
}

/// Fraction of `λ_s` at which the boundary state is evaluated.
pub const INSIDE_FRACTION: f64 = 0.999;

pub fn estimate_boundary(
    approxs: &[PadeApproximant],
    y0: &DVector<f64>,
    u: &DVector<f64>,
    filter: &PoleFilter,
) -> Result<BoundaryEstimate> {
    let stats = smallest_real_pole(approxs, filter)?;
    let mut at = INSIDE_FRACTION * stats.lambda;
    let state = loop {
        match evaluate_pade_jet(approxs, at) {
            Ok(x) => break x,
            Err(Error::PoleProximity { .. }) => at *= INSIDE_FRACTION,
            Err(e) => return Err(e),
        }
    };
    Ok(BoundaryEstimate {
        lambda: stats.lambda,
        injection: (y0 + u * stats.lambda).iter().copied().collect(),
        state: state.iter().copied().collect(),
        pole_min: stats.min,
        pole_max: stats.max,
        coordinate_poles: stats.coordinate_poles,
    })
}
