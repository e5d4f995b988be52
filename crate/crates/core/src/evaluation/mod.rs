//! End-to-end pipeline: data patch, Jacobian estimate, derivative stack and
//! geometry (built once), then per direction jet, Padé and evaluation.

mod output;
mod report;

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::estimator::{estimate_jacobian, JacobianEstimate, Provenance};
use crate::geometry::{build_geometry, evaluate_jet, geodesic_jet, GeodesicJet, GeometryContext};
use crate::measurement::{sample_patch, stack_increments, MeasurementSample, PatchMode, PatchSpec};
use crate::network::NetworkCase;
use crate::pade::{estimate_boundary, evaluate_pade_jet, pade_jet, BoundaryEstimate, PoleFilter};
use crate::powerflow::{
    continuation_trace, solve_ray, ContinuationConfig, OperatingPoint, PowerFlowModel,
};
use crate::terms::{consistency_score, recover_flow_terms, DerivativeStack, FlowTermSet};

pub use output::{
    file_digest, write_boundary_csv, write_jets_json, write_radius_csv, write_targets_csv,
    write_traces_csv, Manifest, OutputFile,
};
pub use report::{
    diagnose, error_report, Diagnostics, DirectionError, ErrorReport, RegionError, ReportMeta,
};

/// Evaluation grid along each direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    /// Last grid point as a fraction of the reference distance.
    pub fraction: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 50,
            fraction: 0.99,
        }
    }
}

pub const DEFAULT_REGIONS: [f64; 3] = [0.80, 0.95, 0.99];

#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    #[serde(skip)]
    pub case: NetworkCase,
    /// Name or path the case was loaded from.
    pub case_name: String,
    pub patch: PatchSpec,
    /// Taylor order `K` of every jet.
    pub order: usize,
    /// Requested Padé orders `(L, M)`.
    pub pade: (usize, usize),
    pub provenance: Provenance,
    pub filter: PoleFilter,
    pub grid: GridSpec,
    pub regions: Vec<f64>,
    /// Trace every direction with continuation for reference values.
    pub validate: bool,
    pub continuation: ContinuationConfig,
}

impl PipelineConfig {
    /// Defaults: uniform patch of `n` samples, `K = 6`, `[3/3]`, model provenance.
    pub fn new(case: NetworkCase, case_name: impl Into<String>) -> Self {
        let n = case.dim();
        PipelineConfig {
            case,
            case_name: case_name.into(),
            patch: PatchSpec::uniform(0.05, n, 0),
            order: 6,
            pade: (3, 3),
            provenance: Provenance::Model,
            filter: PoleFilter::default(),
            grid: GridSpec::default(),
            regions: DEFAULT_REGIONS.to_vec(),
            validate: true,
            continuation: ContinuationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::Config("Taylor order must be at least 2".into()));
        }
        if self.pade.0 + self.pade.1 > self.order {
            return Err(Error::Config(format!(
                "Padé orders [{}/{}] need Taylor order {} but only {} is configured",
                self.pade.0,
                self.pade.1,
                self.pade.0 + self.pade.1,
                self.order
            )));
        }
        if self.grid.points == 0 || !(self.grid.fraction > 0.0 && self.grid.fraction <= 1.0) {
            return Err(Error::Config(
                "grid needs at least one point within (0, 1] of the boundary".into(),
            ));
        }
        if self.regions.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Config("region fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 over the serialized configuration and case.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(serde_json::to_vec(&self.case.to_json()).expect("case serializes"));
        hex::encode(h.finalize())
    }
}

/// Read-only state shared by every direction.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: PowerFlowModel,
    pub base: OperatingPoint,
    pub x0: DVector<f64>,
    pub y0: DVector<f64>,
    pub samples: Vec<MeasurementSample>,
    pub estimate: JacobianEstimate,
    pub terms: FlowTermSet,
    pub stack: Arc<DerivativeStack>,
    pub geometry: GeometryContext,
    /// Voltage-column agreement of the estimate with its flow-term reconstruction.
    pub consistency: f64,
}

/// Runs the shared steps: base point, patch, estimate, flow terms, derivatives, geometry.
pub fn prepare(config: PipelineConfig) -> Result<Pipeline> {
    config.validate().stage("config")?;
    let model = PowerFlowModel::new(config.case.clone()).stage("network")?;
    let base = model.solve_base().stage("base point")?;
    let layout = model.layout();

    let (samples, estimate) = match config.provenance {
        Provenance::Model => (Vec::new(), JacobianEstimate::from_model(&model, &base)),
        Provenance::Data => {
            let samples = sample_patch(&model, &base, &config.patch).stage("sampling")?;
            let (dx, dy) = stack_increments(layout, &samples).stage("sampling")?;
            let estimate = estimate_jacobian(&dx, &dy).stage("estimation")?;
            (samples, estimate)
        }
    };
    let terms = recover_flow_terms(&estimate, layout, &base.p, &base.q, &base.voltage)
        .stage("flow terms")?;
    let stack = Arc::new(DerivativeStack::build(&terms, config.order).stage("derivatives")?);
    let consistency = consistency_score(&estimate, &stack);
    let x0 = model.reduced_state(&base);
    let y0 = model.reduced_injection(&base);
    let geometry =
        build_geometry(Arc::clone(&stack), x0.clone(), config.order - 2).stage("geometry")?;
    Ok(Pipeline {
        config,
        model,
        base,
        x0,
        y0,
        samples,
        estimate,
        terms,
        stack,
        geometry,
        consistency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// Approximant value, or the raw jet where the approximant hits a pole.
    pub estimate: Vec<f64>,
    pub truth: Option<Vec<f64>>,
    /// Max over PQ buses of `|V_est - V_true|`.
    pub error: Option<f64>,
}

/// Everything computed along one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRun {
    pub index: usize,
    /// Angle in the sweep plane, radians.
    pub angle: Option<f64>,
    pub direction: Vec<f64>,
    pub jet: GeodesicJet,
    /// Orders actually used per coordinate after fallback.
    pub pade_orders: Vec<(usize, usize)>,
    pub boundary: Option<BoundaryEstimate>,
    /// Continuation boundary distance when validation is on.
    pub lambda_true: Option<f64>,
    pub grid: Vec<GridPoint>,
}

impl DirectionRun {
    /// Reference distance for region membership: continuation if known, else the estimate.
    pub fn reference_lambda(&self) -> Option<f64> {
        self.lambda_true
            .or(self.boundary.as_ref().map(|b| b.lambda))
    }
}

/// Largest `|ΔV|` over PQ buses between two reduced states.
pub fn voltage_error(pipeline: &Pipeline, estimate: &[f64], truth: &[f64]) -> f64 {
    let m = pipeline.model.layout().angle_count();
    estimate[m..]
        .iter()
        .zip(&truth[m..])
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
}

/// Jet, approximants, boundary estimate and grid evaluation along `u`.
pub fn run_direction(
    pipeline: &Pipeline,
    index: usize,
    angle: Option<f64>,
    u: &DVector<f64>,
) -> Result<DirectionRun> {
    let cfg = &pipeline.config;
    let jet = geodesic_jet(&pipeline.geometry, u, cfg.order).stage("jet")?;
    let approxs = pade_jet(&jet, cfg.pade.0, cfg.pade.1).stage("pade")?;
    let boundary = match estimate_boundary(&approxs, &pipeline.y0, u, &cfg.filter) {
        Ok(b) => Some(b),
        Err(Error::NoRealPole) => None,
        Err(e) => return Err(e.at("boundary")),
    };
    let lambda_true = if cfg.validate {
        let trace = continuation_trace(&pipeline.model, &pipeline.base, u, &cfg.continuation)
            .stage("continuation")?;
        Some(trace.boundary_lambda)
    } else {
        None
    };
    let reference = lambda_true.or(boundary.as_ref().map(|b| b.lambda));
    let lambdas: Vec<f64> = match reference {
        Some(r) => (1..=cfg.grid.points)
            .map(|t| cfg.grid.fraction * r * t as f64 / cfg.grid.points as f64)
            .collect(),
        None => Vec::new(),
    };
    let truths = if cfg.validate {
        Some(
            solve_ray(
                &pipeline.model,
                &pipeline.base,
                u,
                &lambdas,
                &cfg.continuation,
            )
            .stage("continuation")?,
        )
    } else {
        None
    };
    let grid = lambdas
        .iter()
        .enumerate()
        .map(|(t, &lambda)| {
            let estimate: Vec<f64> = match evaluate_pade_jet(&approxs, lambda) {
                Ok(x) => x.iter().copied().collect(),
                Err(_) => evaluate_jet(&jet, lambda).iter().copied().collect(),
            };
            let truth: Option<Vec<f64>> = truths.as_ref().map(|ts| ts[t].iter().copied().collect());
            let error = truth
                .as_ref()
                .map(|tr| voltage_error(pipeline, &estimate, tr));
            GridPoint {
                lambda,
                estimate,
                truth,
                error,
            }
        })
        .collect();
    Ok(DirectionRun {
        index,
        angle,
        direction: u.iter().copied().collect(),
        pade_orders: approxs.iter().map(|a| a.orders).collect(),
        jet,
        boundary,
        lambda_true,
        grid,
    })
}

/// Two reduced injection rows spanning a sweep plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plane {
    pub first: usize,
    pub second: usize,
}

impl Plane {
    /// Parses `BUSq:BUSq` with `q` one of `p` or `q`, e.g. `5p:7p`.
    pub fn parse(case: &NetworkCase, spec: &str) -> Result<Plane> {
        let (a, b) = spec
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("plane `{spec}` must look like 5p:7p")))?;
        let (first, second) = (injection_row(case, a)?, injection_row(case, b)?);
        if first == second {
            return Err(Error::Config(format!(
                "plane `{spec}` repeats one coordinate"
            )));
        }
        Ok(Plane { first, second })
    }

    /// Direction at `angle` radians from the first axis.
    pub fn direction(&self, dim: usize, angle: f64) -> DVector<f64> {
        let mut u = DVector::zeros(dim);
        u[self.first] = angle.cos();
        u[self.second] = angle.sin();
        u
    }

    pub fn labels(&self, case: &NetworkCase) -> (String, String) {
        (case.row_label(self.first), case.row_label(self.second))
    }
}

fn injection_row(case: &NetworkCase, token: &str) -> Result<usize> {
    let token = token.trim();
    let bad = || {
        Error::Config(format!(
            "injection `{token}` must be a bus id followed by p or q"
        ))
    };
    let (id, kind) = token.split_at(token.len().checked_sub(1).ok_or_else(bad)?);
    let id: u32 = id.parse().map_err(|_| bad())?;
    let bus = case
        .index_of(id)
        .ok_or_else(|| Error::Config(format!("bus {id} is not in the case")))?;
    let layout = case.layout();
    if bus == layout.slack() {
        return Err(Error::Config(format!("bus {id} is the slack bus")));
    }
    match kind {
        "p" | "P" => Ok(layout.p_row(bus)),
        "q" | "Q" if layout.is_pq(bus) => Ok(layout.q_row(bus)),
        "q" | "Q" => Err(Error::Config(format!(
            "bus {id} has a fixed voltage; its Q is not a coordinate"
        ))),
        _ => Err(bad()),
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (rayon default when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Evenly spaced directions `θ_k = 2πk / count` in the plane.
pub fn sweep_directions(
    pipeline: &Pipeline,
    plane: Plane,
    count: usize,
) -> Result<Vec<DirectionRun>> {
    if count == 0 {
        return Err(Error::Config("direction count must be at least 1".into()));
    }
    let n = pipeline.model.dim();
    (0..count)
        .into_par_iter()
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            run_direction(pipeline, k, Some(angle), &plane.direction(n, angle))
                .map_err(|e| e.at("sweep"))
        })
        .collect()
}

/// Outcome for one target injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TargetOutcome {
    Solution {
        lambda: f64,
        /// Estimated boundary distance along the same direction, if one was found.
        lambda_s: Option<f64>,
        state: Vec<f64>,
    },
    InfeasibleAlarm {
        lambda: f64,
        lambda_s: f64,
    },
}

impl TargetOutcome {
    pub fn is_alarm(&self) -> bool {
        matches!(self, TargetOutcome::InfeasibleAlarm { .. })
    }
}

/// Voltage solution or infeasible alarm for a reduced injection target.
pub fn evaluate_target(pipeline: &Pipeline, target: &DVector<f64>) -> Result<TargetOutcome> {
    let n = pipeline.model.dim();
    if target.len() != n {
        return Err(
            Error::Dimension(format!("target has {} entries, expected {n}", target.len()))
                .at("target"),
        );
    }
    let delta = target - &pipeline.y0;
    let lambda = delta.norm();
    if lambda == 0.0 {
        return Ok(TargetOutcome::Solution {
            lambda,
            lambda_s: None,
            state: pipeline.x0.iter().copied().collect(),
        });
    }
    let u = delta / lambda;
    let cfg = &pipeline.config;
    let jet = geodesic_jet(&pipeline.geometry, &u, cfg.order).stage("jet")?;
    let approxs = pade_jet(&jet, cfg.pade.0, cfg.pade.1).stage("pade")?;
    let lambda_s = match estimate_boundary(&approxs, &pipeline.y0, &u, &cfg.filter) {
        Ok(b) => Some(b.lambda),
        Err(Error::NoRealPole) => None,
        Err(e) => return Err(e.at("boundary")),
    };
    if let Some(ls) = lambda_s {
        if lambda >= ls {
            return Ok(TargetOutcome::InfeasibleAlarm {
                lambda,
                lambda_s: ls,
            });
        }
    }
    let state = evaluate_pade_jet(&approxs, lambda).stage("evaluation")?;
    Ok(TargetOutcome::Solution {
        lambda,
        lambda_s,
        state: state.iter().copied().collect(),
    })
}

/// One full pipeline run per radius on identical directions.
pub fn radius_study(
    config: &PipelineConfig,
    radii: &[f64],
    plane: Plane,
    count: usize,
) -> Result<Vec<ErrorReport>> {
    if config.patch.mode != PatchMode::FixedDirections {
        return Err(
            Error::Config("radius study needs a fixed-direction patch".into()).at("radius study"),
        );
    }
    if radii.is_empty()
        || radii.iter().any(|r| !(*r > 0.0))
        || radii.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::Config("radii must be positive and ascending".into()).at("radius study"));
    }
    radii
        .iter()
        .map(|&r| {
            let mut cfg = config.clone();
            cfg.patch.radius = r;
            cfg.provenance = Provenance::Data;
            let pipeline = prepare(cfg)?;
            let runs = sweep_directions(&pipeline, plane, count)?;
            error_report(&pipeline, &runs)
        })
        .collect()
}
