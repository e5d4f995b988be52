use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DirectionRun, Pipeline};
use crate::error::{Error, Result, StageExt};
use crate::estimator::{JacobianEstimate, Provenance};
use crate::geometry::{geodesic_jet, image_jet, series_inversion_jet, speed_jet};
use crate::linalg;
use crate::measurement::PatchMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    /// Fraction of the continuation boundary distance.
    pub fraction: f64,
    pub average: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionError {
    pub index: usize,
    pub angle: Option<f64>,
    pub lambda_true: f64,
    pub lambda_s: Option<f64>,
    /// `|λ_s - λ*| / λ*`.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub case: String,
    pub provenance: Provenance,
    /// Patch radius and seed; absent for model runs.
    pub radius: Option<f64>,
    pub seed: Option<u64>,
    pub samples: usize,
    pub order: usize,
    pub pade: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub meta: ReportMeta,
    pub regions: Vec<RegionError>,
    pub directions: Vec<DirectionError>,
}

impl ErrorReport {
    pub fn region(&self, fraction: f64) -> Option<&RegionError> {
        self.regions
            .iter()
            .find(|r| (r.fraction - fraction).abs() < 1e-12)
    }
}

/// Voltage errors per region over every grid point with a reference solution.
pub fn error_report(pipeline: &Pipeline, runs: &[DirectionRun]) -> Result<ErrorReport> {
    let cfg = &pipeline.config;
    let mut regions = Vec::with_capacity(cfg.regions.len());
    for &fraction in &cfg.regions {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        let mut points = 0usize;
        for run in runs {
            let Some(reference) = run.lambda_true else {
                continue;
            };
            let limit = fraction * reference * (1.0 + 1e-9);
            for g in run.grid.iter().filter(|g| g.lambda <= limit) {
                if let Some(e) = g.error {
                    sum += e;
                    max = max.max(e);
                    points += 1;
                }
            }
        }
        if points == 0 {
            return Err(
                Error::Config(format!("region {fraction} has no evaluated points"))
                    .at("error report"),
            );
        }
        regions.push(RegionError {
            fraction,
            average: sum / points as f64,
            max,
            points,
        });
    }
    let directions = runs
        .iter()
        .filter_map(|run| {
            let lambda_true = run.lambda_true?;
            let lambda_s = run.boundary.as_ref().map(|b| b.lambda);
            Some(DirectionError {
                index: run.index,
                angle: run.angle,
                lambda_true,
                lambda_s,
                relative_error: lambda_s.map(|l| (l - lambda_true).abs() / lambda_true),
            })
        })
        .collect();
    let data = cfg.provenance == Provenance::Data;
    Ok(ErrorReport {
        meta: ReportMeta {
            case: cfg.case_name.clone(),
            provenance: cfg.provenance,
            radius: data.then_some(cfg.patch.radius),
            seed: (data && cfg.patch.mode == PatchMode::UniformBox).then_some(cfg.patch.seed),
            samples: pipeline.samples.len(),
            order: cfg.order,
            pade: cfg.pade,
        },
        regions,
        directions,
    })
}

/// Self-checks of a prepared pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest base injection mismatch against the schedule.
    pub base_mismatch: f64,
    pub sigma_min_base: f64,
    pub estimate_condition: Option<f64>,
    pub estimate_residual: f64,
    /// `‖Ĵ - J‖_F / ‖J‖_F` against the analytic Jacobian.
    pub jacobian_relative_error: f64,
    pub consistency: f64,
    pub flow_term_residual: f64,
    /// Largest relative gap between recursion and inversion jets.
    pub dual_derivation: f64,
    /// Largest order-2+ coefficient of the composed image, relative to its magnitude bound.
    pub straight_image: f64,
    /// Largest deviation of the composed speed series from `1, 0, 0, ...`.
    pub unit_speed: f64,
    pub directions: usize,
}

pub fn diagnose(pipeline: &Pipeline, directions: usize) -> Result<Diagnostics> {
    let model = &pipeline.model;
    let base = &pipeline.base;
    let n = model.dim();
    let analytic = JacobianEstimate::from_model(model, base).jacobian;
    let jac_err = (&pipeline.estimate.jacobian - &analytic).norm() / analytic.norm();
    let schedule = model.scheduled_injection();
    let base_mismatch = linalg::inf_norm(&(&pipeline.y0 - schedule));

    let mut rng = ChaCha20Rng::seed_from_u64(pipeline.config.patch.seed);
    rng.set_stream(u64::MAX);
    let k = pipeline.config.order;
    let (mut dual, mut image, mut speed) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..directions {
        let raw: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let u: DVector<f64> = &raw / raw.norm();
        let a = geodesic_jet(&pipeline.geometry, &u, k).stage("diagnostics")?;
        let b = series_inversion_jet(&pipeline.stack, &pipeline.x0, &u, k).stage("diagnostics")?;
        for order in 1..=k {
            let (ca, cb) = (a.coefficient(order), b.coefficient(order));
            let scale = cb.amax().max(f64::MIN_POSITIVE);
            dual = dual.max((ca - &cb).amax() / scale);
        }
        let (img, bound) = image_jet(&pipeline.stack, &a);
        for order in 2..=k {
            let scale = bound[order].amax().max(f64::MIN_POSITIVE);
            image = image.max(img[order].amax() / scale);
        }
        let s = speed_jet(&pipeline.stack, &a);
        speed = speed.max((s[0] - 1.0).abs());
        for v in &s[1..] {
            speed = speed.max(v.abs());
        }
    }
    Ok(Diagnostics {
        base_mismatch,
        sigma_min_base: linalg::sigma_min(&pipeline.geometry.jacobian),
        estimate_condition: pipeline.estimate.condition,
        estimate_residual: pipeline.estimate.residual(),
        jacobian_relative_error: jac_err,
        consistency: pipeline.consistency,
        flow_term_residual: pipeline.terms.row_sum_residual(),
        dual_derivation: dual,
        straight_image: image,
        unit_speed: speed,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::evaluation::{prepare, GridPoint, PipelineConfig};

    fn fake_run(index: usize, lambda_true: f64, errors: &[f64]) -> DirectionRun {
        let p = prepare(PipelineConfig::new(cases::two_bus(), "two-bus")).unwrap();
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let mut run = super::super::run_direction(&p, index, None, &u).unwrap();
        run.lambda_true = Some(lambda_true);
        let count = errors.len() as f64;
        run.grid = errors
            .iter()
            .enumerate()
            .map(|(t, &e)| GridPoint {
                lambda: lambda_true * (t + 1) as f64 / count,
                estimate: vec![0.0, 1.0],
                truth: Some(vec![0.0, 1.0 + e]),
                error: Some(e),
            })
            .collect();
        run
    }

    #[test]
    fn regions_are_nested_and_bounded() {
        let p = prepare(PipelineConfig::new(cases::two_bus(), "two-bus")).unwrap();
        let errors: Vec<f64> = (1..=100).map(|t| 1e-4 * t as f64).collect();
        let runs = vec![fake_run(0, 1.0, &errors), fake_run(1, 2.0, &errors)];
        let report = error_report(&p, &runs).unwrap();
        let r80 = report.region(0.80).unwrap();
        let r95 = report.region(0.95).unwrap();
        let r99 = report.region(0.99).unwrap();
        assert_eq!((r80.points, r95.points, r99.points), (160, 190, 198));
        for r in &report.regions {
            assert!(r.max >= r.average);
        }
        assert!((r80.max - 80e-4).abs() < 1e-15);
        assert!((r80.average - 40.5e-4).abs() < 1e-15);
    }

    #[test]
    fn identical_trace_has_zero_error() {
        let p = prepare(PipelineConfig::new(cases::two_bus(), "two-bus")).unwrap();
        let runs = vec![fake_run(0, 1.0, &[0.0; 10])];
        let report = error_report(&p, &runs).unwrap();
        assert!(report
            .regions
            .iter()
            .all(|r| r.average == 0.0 && r.max == 0.0));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let p = prepare(PipelineConfig::new(cases::two_bus(), "two-bus")).unwrap();
        assert!(error_report(&p, &[]).is_err());
    }

    #[test]
    fn model_pipeline_diagnostics() {
        let p = prepare(PipelineConfig::new(cases::wscc9(), "case9")).unwrap();
        let d = diagnose(&p, 3).unwrap();
        assert!(d.jacobian_relative_error <= 1e-12);
        assert!(d.dual_derivation <= 1e-9);
        assert!(d.straight_image <= 1e-9);
        assert!(d.unit_speed <= 1e-8);
        assert!(d.base_mismatch <= 1e-8);
    }
}
