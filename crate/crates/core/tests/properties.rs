use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pfmanifold::cases;
use pfmanifold::estimator::{estimate_jacobian, JacobianEstimate};
use pfmanifold::evaluation::{
    error_report, evaluate_target, prepare, run_direction, GridPoint, Pipeline, PipelineConfig,
    TargetOutcome,
};
use pfmanifold::geometry::{
    build_geometry, geodesic_jet, image_jet, series_inversion_jet, GeometryContext,
};
use pfmanifold::measurement::{sample_patch, stack_increments, MeasurementSample, PatchSpec};
use pfmanifold::pade::{
    estimate_boundary, pade_jet, pade_with_fallback, PoleFilter, CONDITION_LIMIT,
};
use pfmanifold::powerflow::PowerFlowModel;
use pfmanifold::terms::{DerivativeStack, FlowTermSet};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

fn nine_bus() -> &'static PowerFlowModel {
    static M: OnceLock<PowerFlowModel> = OnceLock::new();
    M.get_or_init(|| PowerFlowModel::new(cases::wscc9()).unwrap())
}

fn four_bus_geometry() -> &'static GeometryContext {
    static G: OnceLock<GeometryContext> = OnceLock::new();
    G.get_or_init(|| {
        let model = PowerFlowModel::new(cases::four_bus()).unwrap();
        let base = model.solve_base().unwrap();
        let stack = DerivativeStack::build(&FlowTermSet::from_model(&model, &base), 6).unwrap();
        build_geometry(Arc::new(stack), model.reduced_state(&base), 4).unwrap()
    })
}

fn two_bus_pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| prepare(PipelineConfig::new(cases::two_bus(), "two-bus")).unwrap())
}

fn unit(raw: Vec<f64>) -> Option<DVector<f64>> {
    let v = DVector::from_vec(raw);
    let norm = v.norm();
    (norm > 1e-3).then(|| v / norm)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn tensor_lookup_is_symmetric(
        angles in prop::collection::vec(-0.3f64..0.3, 8),
        volts in prop::collection::vec(0.92f64..1.08, 6),
        idx in prop::collection::vec(0usize..14, 4),
        row in 0usize..16,
        perm in Just(()).prop_perturb(|_, mut rng| {
            let mut p = vec![0usize, 1, 2, 3];
            for i in (1..4).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        }),
    ) {
        let model = nine_bus();
        let base = model.solve_base().unwrap();
        let mut angle = base.angle.clone();
        let mut voltage = base.voltage.clone();
        angle[..8].copy_from_slice(&angles);
        voltage[..6].copy_from_slice(&volts);
        let op = model.point(angle, voltage);
        let stack = DerivativeStack::build(&FlowTermSet::from_model(model, &op), 4).unwrap();
        for k in 2..=4 {
            let t = stack.tensor(k);
            let order: Vec<usize> = perm.iter().copied().filter(|&p| p < k).collect();
            let permuted: Vec<usize> = order.iter().map(|&p| idx[p]).collect();
            prop_assert_eq!(t.get(row, &idx[..k]).to_bits(), t.get(row, &permuted).to_bits());
        }
    }

    #[test]
    fn pade_reexpands_its_series(
        c0 in 0.1f64..2.0,
        rest in prop::collection::vec(-2.0f64..2.0, 6),
        l in 1usize..4,
    ) {
        let m = 6 - l;
        let mut coeffs = vec![c0];
        coeffs.extend(rest);
        let approx = pade_with_fallback(&coeffs, l, m).unwrap();
        prop_assert_eq!(approx.denominator()[0], 1.0);
        prop_assert!(approx.condition <= CONDITION_LIMIT);
        let (al, am) = approx.orders;
        prop_assert_eq!(al + am, 6);
        prop_assert!(approx.reexpansion_residual(&coeffs) <= 1e-8, "{}", approx.reexpansion_residual(&coeffs));
    }

    #[test]
    fn jets_agree_and_map_straight(raw in prop::collection::vec(-1.0f64..1.0, 5)) {
        let ctx = four_bus_geometry();
        let Some(u) = unit(raw[..ctx.dim()].to_vec()) else { return Ok(()) };
        let a = geodesic_jet(ctx, &u, 6).unwrap();
        let b = series_inversion_jet(ctx.stack(), &ctx.x0, &u, 6).unwrap();
        for k in 1..=6 {
            let (ca, cb) = (a.coefficient(k), b.coefficient(k));
            prop_assert!((ca - &cb).amax() <= 1e-9 * cb.amax().max(1e-300));
        }
        let (image, bound) = image_jet(ctx.stack(), &a);
        for k in 2..=6 {
            prop_assert!(image[k].amax() <= 1e-9 * bound[k].amax());
        }
    }

    #[test]
    fn estimator_recovers_linear_maps_in_any_order(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        samples in prop::collection::vec(-1.0f64..1.0, 24),
        shuffle in Just(()).prop_perturb(|_, mut rng| {
            let mut p: Vec<usize> = (0..6).collect();
            for i in (1..6).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        }),
    ) {
        let j = DMatrix::from_row_slice(4, 4, &entries) + DMatrix::identity(4, 4) * 3.0;
        let dx = DMatrix::from_column_slice(4, 6, &samples);
        let dy = &j * &dx;
        let Ok(est) = estimate_jacobian(&dx, &dy) else { return Ok(()) };
        prop_assert!((&est.jacobian - &j).amax() <= 1e-9 * j.amax() * est.condition.unwrap());
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), 6, |r, c| m[(r, shuffle[c])]);
        let again = estimate_jacobian(&pick(&dx), &pick(&dy)).unwrap();
        prop_assert_eq!(est.jacobian, again.jacobian);
    }

    #[test]
    fn common_angle_shift_leaves_estimate_unchanged(shift in -3.0f64..3.0, seed in 0u64..1000) {
        let model = nine_bus();
        let base = model.solve_base().unwrap();
        let points = sample_patch_points(model, &base, seed);
        let layout = model.layout();
        let moved = |op: &pfmanifold::powerflow::OperatingPoint| {
            let mut op = op.clone();
            op.angle.iter_mut().for_each(|a| *a += shift);
            op
        };
        let plain: Vec<MeasurementSample> = points.iter().map(|p| MeasurementSample::between(layout, &base, p)).collect();
        let shifted: Vec<MeasurementSample> =
            points.iter().map(|p| MeasurementSample::between(layout, &moved(&base), &moved(p))).collect();
        let (dx, dy) = stack_increments(layout, &plain).unwrap();
        let (sx, sy) = stack_increments(layout, &shifted).unwrap();
        let a = estimate_jacobian(&dx, &dy).unwrap().jacobian;
        let b = estimate_jacobian(&sx, &sy).unwrap().jacobian;
        let exact = JacobianEstimate::from_model(model, &base).jacobian;
        // increments agree to rounding of the shifted subtraction
        prop_assert!((&a - &b).amax() <= 1e-9 * exact.amax(), "{}", (&a - &b).amax());
    }

    #[test]
    fn region_max_bounds_average(errors in prop::collection::vec(0.0f64..1.0, 1..60), reference in 0.1f64..2.0) {
        let p = two_bus_pipeline();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let mut run = run_direction(p, 0, None, &u).unwrap();
        run.lambda_true = Some(reference);
        let count = errors.len() as f64;
        run.grid = errors
            .iter()
            .enumerate()
            .map(|(t, &e)| GridPoint {
                lambda: 0.5 * reference * (t + 1) as f64 / count,
                estimate: vec![0.0, 1.0],
                truth: Some(vec![0.0, 1.0 + e]),
                error: Some(e),
            })
            .collect();
        let report = error_report(p, &[run]).unwrap();
        for r in &report.regions {
            prop_assert!(r.max >= r.average);
            prop_assert_eq!(r.points, errors.len());
        }
    }

    #[test]
    fn alarms_exactly_beyond_the_estimate(p2 in -1.2f64..0.6, q2 in -1.0f64..0.6) {
        let p = two_bus_pipeline();
        let target = DVector::from_vec(vec![p2, q2]);
        let delta = &target - &p.y0;
        let lambda = delta.norm();
        prop_assume!(lambda > 1e-6);
        let u = &delta / lambda;
        let jet = geodesic_jet(&p.geometry, &u, 6).unwrap();
        let approxs = pade_jet(&jet, 3, 3).unwrap();
        let lambda_s = estimate_boundary(&approxs, &p.y0, &u, &PoleFilter::default()).ok().map(|b| b.lambda);
        let Ok(outcome) = evaluate_target(p, &target) else { return Ok(()) };
        let expect_alarm = lambda_s.is_some_and(|s| lambda >= s);
        prop_assert_eq!(outcome.is_alarm(), expect_alarm);
        if let TargetOutcome::InfeasibleAlarm { lambda_s: s, .. } = outcome {
            prop_assert_eq!(Some(s), lambda_s);
        }
    }
}

fn sample_patch_points(
    model: &PowerFlowModel,
    base: &pfmanifold::powerflow::OperatingPoint,
    seed: u64,
) -> Vec<pfmanifold::powerflow::OperatingPoint> {
    // rebuild absolute states from increments of a seeded patch
    let samples = sample_patch(
        model,
        base,
        &PatchSpec::uniform(0.01, model.dim() + 2, seed),
    )
    .unwrap();
    samples
        .iter()
        .map(|s| {
            let mut angle = base.angle.clone();
            let mut voltage = base.voltage.clone();
            for (a, d) in angle.iter_mut().zip(&s.d_angle) {
                *a += d;
            }
            for (v, d) in voltage.iter_mut().zip(&s.d_voltage) {
                *v += d;
            }
            model.point(angle, voltage)
        })
        .collect()
}
