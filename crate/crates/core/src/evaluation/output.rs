//! CSV and JSON writers plus the run manifest.
//!
//! Floats use Rust's shortest round-trip formatting, so identical runs produce
//! identical bytes.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{DirectionRun, ErrorReport, PipelineConfig, Plane, TargetOutcome};
use crate::error::Result;
use crate::network::NetworkCase;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn coord_labels(case: &NetworkCase) -> Vec<String> {
    (0..case.dim()).map(|c| case.coord_label(c)).collect()
}

/// One row per grid point: estimated and reference states plus the voltage error.
pub fn write_traces_csv<W: Write>(case: &NetworkCase, runs: &[DirectionRun], out: W) -> Result<()> {
    let labels = coord_labels(case);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "index".to_string(),
        "angle".into(),
        "lambda".into(),
        "fraction".into(),
    ];
    header.extend(labels.iter().map(|l| format!("est_{l}")));
    header.extend(labels.iter().map(|l| format!("true_{l}")));
    header.push("v_error".into());
    w.write_record(&header)?;
    for run in runs {
        let reference = run.reference_lambda();
        for g in &run.grid {
            let mut row = vec![
                run.index.to_string(),
                opt(run.angle),
                g.lambda.to_string(),
                opt(reference.map(|r| g.lambda / r)),
            ];
            row.extend(g.estimate.iter().map(|v| v.to_string()));
            match &g.truth {
                Some(t) => row.extend(t.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), labels.len())),
            }
            row.push(opt(g.error));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per direction: boundary estimate, spread, reference and per-coordinate poles.
pub fn write_boundary_csv<W: Write>(
    case: &NetworkCase,
    plane: Option<Plane>,
    runs: &[DirectionRun],
    out: W,
) -> Result<()> {
    let labels = coord_labels(case);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "index".to_string(),
        "angle".into(),
        "lambda_s".into(),
        "pole_min".into(),
        "pole_max".into(),
        "lambda_true".into(),
    ];
    if let Some(p) = plane {
        let (a, b) = p.labels(case);
        header.push(format!("boundary_{a}"));
        header.push(format!("boundary_{b}"));
    }
    header.extend(labels.iter().map(|l| format!("pole_{l}")));
    w.write_record(&header)?;
    for run in runs {
        let b = run.boundary.as_ref();
        let mut row = vec![
            run.index.to_string(),
            opt(run.angle),
            opt(b.map(|b| b.lambda)),
            opt(b.map(|b| b.pole_min)),
            opt(b.map(|b| b.pole_max)),
            opt(run.lambda_true),
        ];
        if let Some(p) = plane {
            row.push(opt(b.map(|b| b.injection[p.first])));
            row.push(opt(b.map(|b| b.injection[p.second])));
        }
        match b {
            Some(b) => row.extend(b.coordinate_poles.iter().map(|p| opt(*p))),
            None => row.extend(std::iter::repeat_n(String::new(), labels.len())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_targets_csv<W: Write>(
    case: &NetworkCase,
    targets: &[(DVector<f64>, TargetOutcome)],
    out: W,
) -> Result<()> {
    let labels = coord_labels(case);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "index".to_string(),
        "status".into(),
        "lambda".into(),
        "lambda_s".into(),
    ];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (k, (_, outcome)) in targets.iter().enumerate() {
        let mut row = vec![k.to_string()];
        match outcome {
            TargetOutcome::Solution {
                lambda,
                lambda_s,
                state,
            } => {
                row.extend(["solution".to_string(), lambda.to_string(), opt(*lambda_s)]);
                row.extend(state.iter().map(|v| v.to_string()));
            }
            TargetOutcome::InfeasibleAlarm { lambda, lambda_s } => {
                row.extend([
                    "infeasible-alarm".to_string(),
                    lambda.to_string(),
                    lambda_s.to_string(),
                ]);
                row.extend(std::iter::repeat_n(String::new(), labels.len()));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Comparative table with one row per radius and region.
pub fn write_radius_csv<W: Write>(reports: &[ErrorReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["radius", "provenance", "region", "average", "max", "points"])?;
    for r in reports {
        for region in &r.regions {
            w.write_record([
                opt(r.meta.radius),
                r.meta.provenance.to_string(),
                region.fraction.to_string(),
                region.average.to_string(),
                region.max.to_string(),
                region.points.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_jets_json<W: Write>(case: &NetworkCase, runs: &[DirectionRun], out: W) -> Result<()> {
    let doc: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "index": r.index,
                "angle": r.angle,
                "coordinates": coord_labels(case),
                "pade_orders": r.pade_orders,
                "jet": r.jet,
            })
        })
        .collect();
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Run manifest written next to every output set.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub case: String,
    pub config_hash: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub config: Value,
    pub summary: Value,
    pub outputs: Vec<OutputFile>,
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig, workers: Option<usize>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            case: config.case_name.clone(),
            config_hash: config.hash(),
            seed: config.patch.seed,
            workers,
            config: serde_json::to_value(config).expect("config serializes"),
            summary: Value::Null,
            outputs: Vec::new(),
        }
    }

    /// Records a file already written under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        let sha256 = file_digest(&dir.join(name))?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let file = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}
