//! Pullback metric, Christoffel symbols and geodesic Taylor jets at the base point.
//!
//! The basis vectors are the columns of the reduced Jacobian, `g = JᵀJ` and
//! `Γ^m_ij = g^{mk} ⟨r_ij, r_k⟩`. A geodesic `x(λ) = Σ Ω_k λ^k` satisfies
//! `ẍ + Γ(x)(ẋ, ẋ) = 0`, so `k(k-1) Ω_k` is minus the `λ^{k-2}` coefficient of
//! `Γ(x(λ))(ẋ, ẋ)`. Orders 2 and 3 use the stored `Γ` and `∂Γ`; from order 4 on,
//! the `λ`-jet of `Γ(x(λ))` is built in Taylor mode from the derivative stack.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::terms::{DerivativeStack, Series};

/// Riemannian data at the base point.
#[derive(Debug, Clone)]
pub struct GeometryContext {
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    /// Reduced Jacobian; column `i` is the basis vector `r_i`.
    pub jacobian: DMatrix<f64>,
    pub metric: DMatrix<f64>,
    pub inverse_metric: DMatrix<f64>,
    /// `christoffel[m][(i, j)] = Γ^m_ij`.
    pub christoffel: Vec<DMatrix<f64>>,
    /// `d_inverse_metric[k][(m, n)] = ∂_k g^{mn}`.
    pub d_inverse_metric: Vec<DMatrix<f64>>,
    /// `∂_k Γ^m_ij`, see [`GeometryContext::d_christoffel`].
    d_christoffel: Vec<f64>,
    /// Highest spatial derivative order of `Γ` the context can serve.
    pub s_max: usize,
    stack: Arc<DerivativeStack>,
}

impl GeometryContext {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn stack(&self) -> &DerivativeStack {
        &self.stack
    }

    pub fn d_christoffel(&self, m: usize, k: usize, i: usize, j: usize) -> f64 {
        let n = self.dim();
        self.d_christoffel[((m * n + k) * n + i) * n + j]
    }

    /// `Γ^m_ij a^i b^j`.
    pub fn christoffel_apply(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |m, _| a.dot(&(&self.christoffel[m] * b)))
    }

    /// `∂_k Γ^m_ij d^k a^i b^j`.
    pub fn d_christoffel_apply(
        &self,
        d: &DVector<f64>,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |m, _| {
            let mut s = 0.0;
            for k in 0..n {
                if d[k] == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for j in 0..n {
                        s += self.d_christoffel(m, k, i, j) * d[k] * a[i] * b[j];
                    }
                }
            }
            s
        })
    }
}

/// Builds the metric, Christoffel symbols and their first spatial derivatives.
///
/// `s_max` is the highest spatial order of `Γ` later needed; the stack must hold
/// derivatives up to order `s_max + 2`.
pub fn build_geometry(
    stack: Arc<DerivativeStack>,
    x0: DVector<f64>,
    s_max: usize,
) -> Result<GeometryContext> {
    let layout = stack.layout();
    let n = layout.dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "base state has {} entries, expected {n}",
            x0.len()
        )));
    }
    if stack.order() < s_max + 2 || stack.order() < 3 {
        return Err(Error::OrderTooHigh {
            requested: (s_max + 2).max(3),
            max: stack.order(),
        });
    }
    let jac = stack.reduced_jacobian();
    let sigma = linalg::sigma_min(&jac);
    if !(sigma > 1e-10) {
        return Err(Error::SingularJacobian { sigma_min: sigma });
    }
    let metric = jac.transpose() * &jac;
    let inverse_metric = {
        let inv = metric
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::SingularJacobian { sigma_min: sigma })?;
        (&inv + inv.transpose()) * 0.5
    };

    // second-derivative blocks per reduced row
    let mut r2 = vec![DMatrix::<f64>::zeros(n, n); n];
    for (row, idx, v) in stack.tensor(2).iter() {
        if row < n {
            let (a, b) = (idx[0] as usize, idx[1] as usize);
            r2[row][(a, b)] = v;
            r2[row][(b, a)] = v;
        }
    }
    // ⟨r_ij, r_k⟩ stored as inner[k][(i, j)]
    let inner: Vec<DMatrix<f64>> = (0..n)
        .map(|k| {
            let mut m = DMatrix::zeros(n, n);
            for (row, block) in r2.iter().enumerate() {
                m += block * jac[(row, k)];
            }
            m
        })
        .collect();
    let christoffel: Vec<DMatrix<f64>> = (0..n)
        .map(|m| {
            let mut g = DMatrix::zeros(n, n);
            for (k, block) in inner.iter().enumerate() {
                g += block * inverse_metric[(m, k)];
            }
            (&g + g.transpose()) * 0.5
        })
        .collect();

    // ∂_k g^{mn} = -g^{im} Γ^n_ik - g^{in} Γ^m_ik
    let d_inverse_metric: Vec<DMatrix<f64>> = (0..n)
        .map(|k| {
            let mut d = DMatrix::zeros(n, n);
            for m in 0..n {
                for q in 0..n {
                    let mut s = 0.0;
                    for i in 0..n {
                        s -= inverse_metric[(i, m)] * christoffel[q][(i, k)];
                        s -= inverse_metric[(i, q)] * christoffel[m][(i, k)];
                    }
                    d[(m, q)] = s;
                }
            }
            d
        })
        .collect();

    // ⟨r_ijk, r_q⟩ and ⟨r_ij, r_qk⟩
    let idx4 = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
    let mut third = vec![0.0; n * n * n * n];
    for (row, idx, v) in stack.tensor(3).iter() {
        if row >= n {
            continue;
        }
        let (a, b, c) = (idx[0] as usize, idx[1] as usize, idx[2] as usize);
        let mut perms = vec![
            (a, b, c),
            (a, c, b),
            (b, a, c),
            (b, c, a),
            (c, a, b),
            (c, b, a),
        ];
        perms.sort_unstable();
        perms.dedup();
        for (i, j, k) in perms {
            for q in 0..n {
                third[idx4(i, j, k, q)] += v * jac[(row, q)];
            }
        }
    }
    let mut cross = vec![0.0; n * n * n * n];
    for i in 0..n {
        for j in i..n {
            for q in 0..n {
                for k in 0..n {
                    let s: f64 = (0..n).map(|row| r2[row][(i, j)] * r2[row][(q, k)]).sum();
                    cross[idx4(i, j, q, k)] = s;
                    cross[idx4(j, i, q, k)] = s;
                }
            }
        }
    }
    let mut d_christoffel = vec![0.0; n * n * n * n];
    for m in 0..n {
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let mut s = 0.0;
                    for q in 0..n {
                        s += inverse_metric[(m, q)]
                            * (third[idx4(i, j, k, q)] + cross[idx4(i, j, q, k)]);
                        s += inner[q][(i, j)] * d_inverse_metric[k][(m, q)];
                    }
                    d_christoffel[idx4(m, k, i, j)] = s;
                    d_christoffel[idx4(m, k, j, i)] = s;
                }
            }
        }
    }

    let y0 = DVector::from_column_slice(&stack.base()[..n]);
    Ok(GeometryContext {
        x0,
        y0,
        jacobian: jac,
        metric,
        inverse_metric,
        christoffel,
        d_inverse_metric,
        d_christoffel,
        s_max,
        stack,
    })
}

/// Taylor coefficients of a geodesic through the base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicJet {
    pub base: Vec<f64>,
    pub direction: Vec<f64>,
    pub velocity: Vec<f64>,
    /// `coefficients[k]` is `Ω_k`, one entry per reduced coordinate.
    pub coefficients: Vec<Vec<f64>>,
    pub order: usize,
}

impl GeodesicJet {
    pub fn coefficient(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients[k])
    }

    /// Coefficient series of one coordinate.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.coefficients.iter().map(|o| o[c]).collect()
    }

    fn new(x0: &DVector<f64>, u: &DVector<f64>, omegas: Vec<DVector<f64>>) -> Self {
        GeodesicJet {
            base: x0.iter().copied().collect(),
            direction: u.iter().copied().collect(),
            velocity: omegas[1].iter().copied().collect(),
            order: omegas.len() - 1,
            coefficients: omegas
                .into_iter()
                .map(|o| o.iter().copied().collect())
                .collect(),
        }
    }
}

fn check_direction(u: &DVector<f64>, n: usize) -> Result<()> {
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
    Ok(())
}

/// `λ`-jet of `Γ(x(λ))(ẋ, ẋ)` through `degree`, for the partial geodesic `omegas`.
///
/// Needs `Ω_0..Ω_{degree+1}`.
pub fn christoffel_along(ctx: &GeometryContext, omegas: &[DVector<f64>], degree: usize) -> Series {
    let n = ctx.dim();
    let stack = ctx.stack();
    let h: Vec<DVector<f64>> = (0..=degree)
        .map(|t| {
            if t == 0 {
                DVector::zeros(n)
            } else {
                omegas[t].clone()
            }
        })
        .collect();
    let velocity: Vec<DVector<f64>> = (0..=degree)
        .map(|t| &omegas[t + 1] * (t + 1) as f64)
        .collect();
    let jac = stack.compose_jacobian(&h, degree, n);
    let hess = stack.compose_hessian(&h, degree, n);
    let accel = hess.contract(&velocity, &velocity, degree);

    let conv = |t: usize, f: &dyn Fn(usize, usize) -> DMatrix<f64>| -> DMatrix<f64> {
        (0..=t).fold(DMatrix::zeros(n, n), |acc, p| acc + f(p, t - p))
    };
    let g: Vec<DMatrix<f64>> = (0..=degree)
        .map(|t| conv(t, &|p, q| jac[p].transpose() * &jac[q]))
        .collect();
    let b: Vec<DVector<f64>> = (0..=degree)
        .map(|t| {
            (0..=t).fold(DVector::zeros(n), |acc, p| {
                acc + jac[p].transpose() * &accel[t - p]
            })
        })
        .collect();
    // g^{-1}(λ): G_0 Ginv_p = -Σ_{t≥1} G_t Ginv_{p-t}
    let mut ginv: Vec<DMatrix<f64>> = vec![ctx.inverse_metric.clone()];
    for p in 1..=degree {
        let s = (1..=p).fold(DMatrix::zeros(n, n), |acc, t| acc + &g[t] * &ginv[p - t]);
        ginv.push(-&ctx.inverse_metric * s);
    }
    (0..=degree)
        .map(|t| (0..=t).fold(DVector::zeros(n), |acc, p| acc + &ginv[p] * &b[t - p]))
        .collect()
}

/// Geodesic jet from the Christoffel recursion.
pub fn geodesic_jet(ctx: &GeometryContext, u: &DVector<f64>, order: usize) -> Result<GeodesicJet> {
    let n = ctx.dim();
    check_direction(u, n)?;
    if order < 1 {
        return Err(Error::Config("jet order must be at least 1".into()));
    }
    if order > ctx.s_max + 2 {
        return Err(Error::OrderTooHigh {
            requested: order,
            max: ctx.s_max + 2,
        });
    }
    let velocity = linalg::solve(&ctx.jacobian, u).ok_or(Error::SingularJacobian {
        sigma_min: linalg::sigma_min(&ctx.jacobian),
    })?;
    let mut omegas = vec![ctx.x0.clone(), velocity];
    for k in 2..=order {
        let forcing = match k {
            2 => ctx.christoffel_apply(&omegas[1], &omegas[1]),
            3 => {
                ctx.d_christoffel_apply(&omegas[1], &omegas[1], &omegas[1])
                    + ctx.christoffel_apply(&omegas[1], &omegas[2]) * 4.0
            }
            _ => christoffel_along(ctx, &omegas, k - 2)
                .pop()
                .expect("non-empty series"),
        };
        omegas.push(forcing * (-1.0 / (k * (k - 1)) as f64));
    }
    Ok(GeodesicJet::new(&ctx.x0, u, omegas))
}

/// Jet of `x(λ)` solving `r(x(λ)) = y_0 + λu` order by order.
pub fn series_inversion_jet(
    stack: &DerivativeStack,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    order: usize,
) -> Result<GeodesicJet> {
    let n = stack.layout().dim();
    check_direction(u, n)?;
    if order > stack.order() {
        return Err(Error::OrderTooHigh {
            requested: order,
            max: stack.order(),
        });
    }
    let lu = stack.reduced_jacobian().lu();
    let velocity = lu.solve(u).ok_or(Error::SingularJacobian {
        sigma_min: linalg::sigma_min(&stack.reduced_jacobian()),
    })?;
    let mut omegas = vec![x0.clone(), velocity];
    for k in 2..=order {
        let mut h: Vec<DVector<f64>> = omegas.clone();
        h[0] = DVector::zeros(n);
        let image = stack.compose_image(&h, k, n, false);
        let next = lu
            .solve(&(-&image[k]))
            .expect("factorization already checked");
        omegas.push(next);
    }
    Ok(GeodesicJet::new(x0, u, omegas))
}

/// Horner evaluation of the truncated series.
pub fn evaluate_jet(jet: &GeodesicJet, lambda: f64) -> DVector<f64> {
    let n = jet.base.len();
    let mut x = DVector::zeros(n);
    for coeff in jet.coefficients.iter().rev() {
        x *= lambda;
        x += DVector::from_column_slice(coeff);
    }
    x
}

/// `r(x(λ)) - y_0` composed through the jet order, with the matching magnitude bound.
///
/// The second series composes absolute values and bounds the size of the terms
/// that cancel in each coefficient.
pub fn image_jet(stack: &DerivativeStack, jet: &GeodesicJet) -> (Series, Series) {
    let n = stack.layout().dim();
    let mut h: Vec<DVector<f64>> = (0..=jet.order).map(|k| jet.coefficient(k)).collect();
    h[0] = DVector::zeros(n);
    let mut image = stack.compose_image(&h, jet.order, n, false);
    let bound = stack.compose_image(&h, jet.order, n, true);
    image[0] -= DVector::from_column_slice(&stack.base()[..n]);
    (image, bound)
}

/// `g(x(λ))(ẋ, ẋ)` through order `K - 2`.
pub fn speed_jet(stack: &DerivativeStack, jet: &GeodesicJet) -> Vec<f64> {
    let n = stack.layout().dim();
    let degree = jet.order.saturating_sub(2);
    let mut h: Vec<DVector<f64>> = (0..=degree).map(|k| jet.coefficient(k)).collect();
    h[0] = DVector::zeros(n);
    let velocity: Vec<DVector<f64>> = (0..=degree)
        .map(|t| jet.coefficient(t + 1) * (t + 1) as f64)
        .collect();
    let jac = stack.compose_jacobian(&h, degree, n);
    let image_velocity: Vec<DVector<f64>> = (0..=degree)
        .map(|t| (0..=t).fold(DVector::zeros(n), |acc, p| acc + &jac[p] * &velocity[t - p]))
        .collect();
    (0..=degree)
        .map(|t| {
            (0..=t)
                .map(|p| image_velocity[p].dot(&image_velocity[t - p]))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::estimator::JacobianEstimate;
    use crate::powerflow::{OperatingPoint, PowerFlowModel};
    use crate::terms::{recover_flow_terms, FlowTermSet};

    fn context(
        case: crate::network::NetworkCase,
        order: usize,
    ) -> (PowerFlowModel, OperatingPoint, GeometryContext) {
        let model = PowerFlowModel::new(case).unwrap();
        let base = model.solve_base().unwrap();
        let est = JacobianEstimate::from_model(&model, &base);
        let terms =
            recover_flow_terms(&est, model.layout(), &base.p, &base.q, &base.voltage).unwrap();
        let stack = Arc::new(DerivativeStack::build(&terms, order).unwrap());
        let ctx = build_geometry(stack, model.reduced_state(&base), order - 2).unwrap();
        (model, base, ctx)
    }

    fn unit(n: usize, seed: usize) -> DVector<f64> {
        let v = DVector::from_fn(n, |k, _| ((k * 13 + seed * 7) as f64 * 0.37).sin());
        let norm = v.norm();
        v / norm
    }

    #[test]
    fn metric_and_symbols_are_consistent() {
        let (_, _, ctx) = context(cases::wscc9(), 4);
        let n = ctx.dim();
        assert!((&ctx.metric * &ctx.inverse_metric - DMatrix::identity(n, n)).amax() <= 1e-10);
        assert!(ctx.metric.clone().cholesky().is_some());
        for m in 0..n {
            assert_eq!(ctx.christoffel[m], ctx.christoffel[m].transpose());
        }
    }

    fn christoffel_at(
        model: &PowerFlowModel,
        base: &OperatingPoint,
        x: &DVector<f64>,
    ) -> Vec<DMatrix<f64>> {
        let point = model.point_from_reduced(base, x);
        let terms = FlowTermSet::from_model(model, &point);
        let stack = Arc::new(DerivativeStack::build(&terms, 3).unwrap());
        build_geometry(stack, x.clone(), 1).unwrap().christoffel
    }

    #[test]
    fn christoffel_derivative_matches_finite_differences() {
        let (model, base, ctx) = context(cases::wscc9(), 4);
        let n = ctx.dim();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..n {
            let mut xp = ctx.x0.clone();
            let mut xm = ctx.x0.clone();
            xp[k] += h;
            xm[k] -= h;
            let gp = christoffel_at(&model, &base, &xp);
            let gm = christoffel_at(&model, &base, &xm);
            for m in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let fd = (gp[m][(i, j)] - gm[m][(i, j)]) / (2.0 * h);
                        worst = worst.max((fd - ctx.d_christoffel(m, k, i, j)).abs());
                        scale = scale.max(fd.abs());
                    }
                }
            }
        }
        assert!(worst <= 1e-4 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn inverse_metric_derivative_matches_finite_differences() {
        let (model, base, ctx) = context(cases::four_bus(), 4);
        let n = ctx.dim();
        let h = 1e-6;
        for k in 0..n {
            let ginv_at = |x: &DVector<f64>| {
                let point = model.point_from_reduced(&base, x);
                let j = model.reduced_jacobian(&point.angle, &point.voltage);
                (j.transpose() * j).try_inverse().unwrap()
            };
            let mut xp = ctx.x0.clone();
            let mut xm = ctx.x0.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (ginv_at(&xp) - ginv_at(&xm)) / (2.0 * h);
            assert!((fd - &ctx.d_inverse_metric[k]).amax() <= 1e-5 * ctx.inverse_metric.amax());
        }
    }

    #[test]
    fn taylor_mode_matches_stored_symbols() {
        let (_, _, ctx) = context(cases::wscc9(), 6);
        let u = unit(14, 3);
        let jet = geodesic_jet(&ctx, &u, 3).unwrap();
        let omegas: Vec<DVector<f64>> = (0..=3).map(|k| jet.coefficient(k)).collect();
        let series = christoffel_along(&ctx, &omegas, 1);
        let order0 = ctx.christoffel_apply(&omegas[1], &omegas[1]);
        let order1 = ctx.d_christoffel_apply(&omegas[1], &omegas[1], &omegas[1])
            + ctx.christoffel_apply(&omegas[1], &omegas[2]) * 4.0;
        assert!((&series[0] - &order0).amax() <= 1e-12 * order0.amax().max(1.0));
        assert!((&series[1] - &order1).amax() <= 1e-9 * order1.amax().max(1.0));
    }

    #[test]
    fn second_coefficient_from_contracted_form() {
        // Ω_2 = -½ g^{ml} ⟨r_ij, r_l⟩ ẋ^i ẋ^j
        let (_, _, ctx) = context(cases::wscc9(), 4);
        let n = ctx.dim();
        let u = unit(n, 1);
        let jet = geodesic_jet(&ctx, &u, 2).unwrap();
        let v = jet.coefficient(1);
        let t2 = ctx.stack().tensor(2);
        let mut accel = DVector::zeros(n);
        for row in 0..n {
            for i in 0..n {
                for j in 0..n {
                    accel[row] += t2.get(row, &[i, j]) * v[i] * v[j];
                }
            }
        }
        let expected = -0.5 * &ctx.inverse_metric * ctx.jacobian.transpose() * accel;
        assert!((jet.coefficient(2) - expected).amax() <= 1e-12);
    }

    #[test]
    fn both_derivations_agree() {
        for case in [cases::wscc9(), cases::two_bus(), cases::four_bus()] {
            let (_, _, ctx) = context(case, 6);
            let n = ctx.dim();
            for seed in 0..3 {
                let u = unit(n, seed);
                let a = geodesic_jet(&ctx, &u, 6).unwrap();
                let b = series_inversion_jet(ctx.stack(), &ctx.x0, &u, 6).unwrap();
                for k in 0..=6 {
                    let (ca, cb) = (a.coefficient(k), b.coefficient(k));
                    assert!(
                        (&ca - &cb).amax() <= 1e-9 * cb.amax().max(1e-12),
                        "order {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn geodesics_map_to_straight_rays_at_unit_speed() {
        let (_, _, ctx) = context(cases::wscc9(), 6);
        let u = unit(14, 5);
        let jet = geodesic_jet(&ctx, &u, 6).unwrap();
        let (image, bound) = image_jet(ctx.stack(), &jet);
        assert!(image[0].amax() == 0.0);
        assert!((&image[1] - &u).amax() <= 1e-12);
        for k in 2..=6 {
            assert!(image[k].amax() <= 1e-9 * bound[k].amax(), "order {k}");
        }
        let speed = speed_jet(ctx.stack(), &jet);
        assert!((speed[0] - 1.0).abs() <= 1e-10);
        assert!(speed[1..].iter().all(|s| s.abs() <= 1e-8));
    }

    #[test]
    fn two_bus_jet_tracks_the_ray() {
        let (model, base, ctx) = context(cases::two_bus(), 6);
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let jet = geodesic_jet(&ctx, &u, 6).unwrap();
        let config = crate::powerflow::ContinuationConfig::default();
        let truth = crate::powerflow::solve_ray(&model, &base, &u, &[0.1, 0.25], &config).unwrap();
        assert!((evaluate_jet(&jet, 0.1) - &truth[0]).amax() <= 1e-6);
        assert!((evaluate_jet(&jet, 0.25)[1] - truth[1][1]).abs() <= 2e-3);
        assert_eq!(evaluate_jet(&jet, 0.0), ctx.x0);
    }

    #[test]
    fn flat_and_linear_maps() {
        let (_, _, ctx) = context(cases::two_bus(), 3);
        let u = unit(2, 0);
        let jet = geodesic_jet(&ctx, &u, 1).unwrap();
        assert_eq!(jet.order, 1);
        assert_eq!(evaluate_jet(&jet, 0.3), &ctx.x0 + jet.coefficient(1) * 0.3);
        assert!(geodesic_jet(&ctx, &u, 4).is_err());
        assert!(geodesic_jet(&ctx, &(u * 2.0), 2).is_err());
    }

    #[test]
    fn jet_json_round_trip() {
        let (_, _, ctx) = context(cases::two_bus(), 4);
        let jet = geodesic_jet(&ctx, &unit(2, 2), 4).unwrap();
        let text = serde_json::to_string(&jet).unwrap();
        let back: GeodesicJet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, jet);
    }
}
