//! `pfmanifold`: batch front end. Every command writes its outputs plus a
//! `manifest.json` into `--out`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use pfmanifold::cases;
use pfmanifold::estimator::{write_jacobian_csv, JacobianEstimate, Provenance};
use pfmanifold::evaluation::{
    diagnose, error_report, evaluate_target, prepare, radius_study, run_direction,
    sweep_directions, with_workers, write_boundary_csv, write_jets_json, write_radius_csv,
    write_targets_csv, write_traces_csv, DirectionRun, Manifest, Pipeline, PipelineConfig, Plane,
    TargetOutcome,
};
use pfmanifold::measurement::{sample_patch, write_samples_csv, PatchMode, PatchSpec};
use pfmanifold::powerflow::{continuation_trace, write_trace_csv};
use pfmanifold::{NetworkCase, PowerFlowModel};

#[derive(Parser)]
#[command(
    name = "pfmanifold",
    version,
    about = "Power-flow manifold evaluation from local measurements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a measurement patch around the base point.
    Sample(Common),
    /// Estimate the Jacobian from a patch.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Jacobian CSV destination (default: OUT/jacobian.csv).
        #[arg(long)]
        jacobian_out: Option<PathBuf>,
    },
    /// One direction: jet, approximants, evaluated trace and boundary.
    Trace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plane: PlaneArgs,
        /// Angle in the plane, radians.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        angle: f64,
        /// Explicit reduced injection direction, comma separated (overrides the plane).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        direction: Option<Vec<f64>>,
    },
    /// Boundary curve over evenly spaced directions in a plane.
    Boundary {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plane: PlaneArgs,
    },
    /// Traces, boundary curve, jets and error report over a plane.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plane: PlaneArgs,
    },
    /// Error report per patch radius on identical fixed directions.
    RadiusStudy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plane: PlaneArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<f64>,
    },
    /// Pipeline self-checks, plus voltage solutions or alarms for target injections.
    Validate {
        #[command(flatten)]
        common: Common,
        /// CSV of targets; columns are injection labels such as `p_5`, missing ones keep base values.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Random directions for the jet self-checks.
        #[arg(long, default_value_t = 8)]
        checks: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Uniform,
    Fixed,
}

#[derive(Args, Clone)]
struct Common {
    /// Bundled case name (case9, two-bus, four-bus) or a MATPOWER/JSON case file.
    #[arg(long, default_value = "case9")]
    case: String,
    #[arg(long, default_value_t = 0.05)]
    radius: f64,
    /// Patch size (default: state dimension).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Uniform)]
    mode: Mode,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 6)]
    order: usize,
    #[arg(long, num_args = 2, value_names = ["L", "M"], default_values_t = [3, 3])]
    pade: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    provenance: Provenance,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Skip continuation reference runs.
    #[arg(long)]
    no_validate: bool,
}

#[derive(Args, Clone)]
struct PlaneArgs {
    /// Two injections spanning the sweep plane, e.g. 5p:7p.
    #[arg(long, default_value = "5p:7p")]
    plane: String,
    #[arg(long, default_value_t = 64)]
    directions: usize,
}

fn load_case(spec: &str) -> Result<NetworkCase> {
    if let Some(case) = cases::by_name(spec) {
        return Ok(case);
    }
    NetworkCase::load_file(Path::new(spec)).with_context(|| format!("loading case `{spec}`"))
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let case = load_case(&self.case)?;
        let n = case.dim();
        let count = self.samples.unwrap_or(n);
        let mut cfg = PipelineConfig::new(case, self.case.clone());
        cfg.patch = match self.mode {
            Mode::Uniform => PatchSpec::uniform(self.radius, count, self.seed),
            Mode::Fixed => PatchSpec {
                seed: self.seed,
                ..PatchSpec::fixed(self.radius, count)
            },
        };
        cfg.patch.noise_std = self.noise;
        cfg.order = self.order;
        cfg.pade = (self.pade[0], self.pade[1]);
        cfg.provenance = self.provenance;
        cfg.validate = !self.no_validate;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes `name` under `dir` through `write` and records its digest.
fn emit(
    manifest: &mut Manifest,
    dir: &Path,
    name: &str,
    write: impl FnOnce(BufWriter<File>) -> pfmanifold::Result<()>,
) -> Result<()> {
    write(create(dir, name)?).with_context(|| format!("writing {name}"))?;
    manifest.record(dir, name)?;
    Ok(())
}

fn boundary_summary(runs: &[DirectionRun]) -> serde_json::Value {
    let found = runs.iter().filter(|r| r.boundary.is_some()).count();
    json!({ "directions": runs.len(), "boundaries_found": found })
}

fn sweep_outputs(
    pipeline: &Pipeline,
    plane: Plane,
    runs: &[DirectionRun],
    manifest: &mut Manifest,
    dir: &Path,
    full: bool,
) -> Result<()> {
    let case = pipeline.model.case();
    emit(manifest, dir, "boundary.csv", |w| {
        write_boundary_csv(case, Some(plane), runs, w)
    })?;
    let mut summary = boundary_summary(runs);
    if full {
        emit(manifest, dir, "traces.csv", |w| {
            write_traces_csv(case, runs, w)
        })?;
        emit(manifest, dir, "jets.json", |w| {
            write_jets_json(case, runs, w)
        })?;
        if pipeline.config.validate {
            let report = error_report(pipeline, runs)?;
            emit(manifest, dir, "report.json", |w| {
                serde_json::to_writer_pretty(w, &report).map_err(Into::into)
            })?;
            summary["regions"] = serde_json::to_value(&report.regions)?;
        }
    }
    manifest.summary = summary;
    Ok(())
}

/// Parses a target CSV into full reduced injection vectors.
fn read_targets(path: &Path, case: &NetworkCase, y0: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let labels: Vec<String> = (0..case.dim()).map(|r| case.row_label(r)).collect();
    let columns: Vec<usize> = reader
        .headers()?
        .iter()
        .map(|h| {
            labels.iter().position(|l| l == h.trim()).with_context(|| {
                format!("`{h}` is not an injection of this case; expected one of {labels:?}")
            })
        })
        .collect::<Result<_>>()?;
    let mut targets = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let mut y = y0.clone();
        for (field, &row) in record.iter().zip(&columns) {
            y[row] = field
                .trim()
                .parse()
                .with_context(|| format!("target {line}: `{field}` is not a number"))?;
        }
        targets.push(y);
    }
    if targets.is_empty() {
        bail!("{} lists no targets", path.display());
    }
    Ok(targets)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut code = ExitCode::SUCCESS;
    match cli.command {
        Command::Sample(common) => {
            let cfg = common.config()?;
            let dir = common.out_dir()?;
            let model = PowerFlowModel::new(cfg.case.clone())?;
            let base = model.solve_base().context("base point")?;
            let samples =
                with_workers(common.workers, || sample_patch(&model, &base, &cfg.patch))??;
            let mut manifest = Manifest::new("sample", &cfg, common.workers);
            emit(&mut manifest, dir, "samples.csv", |w| {
                write_samples_csv(&model, &samples, w)
            })?;
            manifest.summary = json!({ "samples": samples.len() });
            manifest.write(dir)?;
        }
        Command::Estimate {
            common,
            jacobian_out,
        } => {
            let mut cfg = common.config()?;
            cfg.validate = false;
            let dir = common.out_dir()?;
            let pipeline = with_workers(common.workers, || prepare(cfg))??;
            let mut manifest = Manifest::new("estimate", &pipeline.config, common.workers);
            let write = |w| write_jacobian_csv(&pipeline.model, &pipeline.estimate, w);
            match jacobian_out {
                Some(path) => {
                    write(BufWriter::new(File::create(&path)?))?;
                    manifest.outputs.push(pfmanifold::evaluation::OutputFile {
                        file: path.display().to_string(),
                        sha256: pfmanifold::evaluation::file_digest(&path)?,
                    });
                }
                None => emit(&mut manifest, dir, "jacobian.csv", write)?,
            }
            let analytic = JacobianEstimate::from_model(&pipeline.model, &pipeline.base).jacobian;
            manifest.summary = json!({
                "samples": pipeline.estimate.samples,
                "condition": pipeline.estimate.condition,
                "residual": pipeline.estimate.residual(),
                "relative_error": (&pipeline.estimate.jacobian - &analytic).norm() / analytic.norm(),
                "consistency": pipeline.consistency,
            });
            manifest.write(dir)?;
        }
        Command::Trace {
            common,
            plane,
            angle,
            direction,
        } => {
            let cfg = common.config()?;
            let dir = common.out_dir()?;
            let pipeline = with_workers(common.workers, || prepare(cfg))??;
            let n = pipeline.model.dim();
            let (u, angle, plane) = match direction {
                Some(d) => {
                    if d.len() != n {
                        bail!(
                            "--direction has {} entries, the case has {n} injections",
                            d.len()
                        );
                    }
                    let u = DVector::from_vec(d);
                    let norm = u.norm();
                    if norm == 0.0 {
                        bail!("--direction must be nonzero");
                    }
                    (u / norm, None, None)
                }
                None => {
                    let p = Plane::parse(pipeline.model.case(), &plane.plane)?;
                    (p.direction(n, angle), Some(angle), Some(p))
                }
            };
            let run = run_direction(&pipeline, 0, angle, &u)?;
            let case = pipeline.model.case();
            let mut manifest = Manifest::new("trace", &pipeline.config, common.workers);
            let runs = [run];
            emit(&mut manifest, dir, "traces.csv", |w| {
                write_traces_csv(case, &runs, w)
            })?;
            emit(&mut manifest, dir, "boundary.csv", |w| {
                write_boundary_csv(case, plane, &runs, w)
            })?;
            emit(&mut manifest, dir, "jets.json", |w| {
                write_jets_json(case, &runs, w)
            })?;
            if pipeline.config.validate {
                let trace = continuation_trace(
                    &pipeline.model,
                    &pipeline.base,
                    &u,
                    &pipeline.config.continuation,
                )?;
                emit(&mut manifest, dir, "continuation.csv", |w| {
                    write_trace_csv(&pipeline.model, &trace, w)
                })?;
            }
            let r = &runs[0];
            manifest.summary = json!({
                "lambda_s": r.boundary.as_ref().map(|b| b.lambda),
                "lambda_true": r.lambda_true,
                "pade_orders": r.pade_orders,
            });
            manifest.write(dir)?;
        }
        Command::Boundary { common, plane } => {
            let mut cfg = common.config()?;
            cfg.validate = false;
            let dir = common.out_dir()?;
            let (pipeline, p, runs) = sweep(&common, cfg, &plane)?;
            let mut manifest = Manifest::new("boundary", &pipeline.config, common.workers);
            sweep_outputs(&pipeline, p, &runs, &mut manifest, dir, false)?;
            manifest.write(dir)?;
        }
        Command::Sweep { common, plane } => {
            let cfg = common.config()?;
            let dir = common.out_dir()?;
            let (pipeline, p, runs) = sweep(&common, cfg, &plane)?;
            let mut manifest = Manifest::new("sweep", &pipeline.config, common.workers);
            sweep_outputs(&pipeline, p, &runs, &mut manifest, dir, true)?;
            manifest.write(dir)?;
        }
        Command::RadiusStudy {
            common,
            plane,
            radii,
        } => {
            let mut cfg = common.config()?;
            cfg.patch.mode = PatchMode::FixedDirections;
            cfg.provenance = Provenance::Data;
            cfg.validate = true;
            let dir = common.out_dir()?;
            let p = Plane::parse(&cfg.case, &plane.plane)?;
            let mut model_cfg = cfg.clone();
            model_cfg.provenance = Provenance::Model;
            let reports = with_workers(common.workers, || -> pfmanifold::Result<_> {
                let mut reports = radius_study(&cfg, &radii, p, plane.directions)?;
                let pipeline = prepare(model_cfg)?;
                let runs = sweep_directions(&pipeline, p, plane.directions)?;
                reports.push(error_report(&pipeline, &runs)?);
                Ok(reports)
            })??;
            let mut manifest = Manifest::new("radius-study", &cfg, common.workers);
            emit(&mut manifest, dir, "radius.csv", |w| {
                write_radius_csv(&reports, w)
            })?;
            emit(&mut manifest, dir, "reports.json", |w| {
                serde_json::to_writer_pretty(w, &reports).map_err(Into::into)
            })?;
            manifest.summary = json!({ "radii": radii, "directions": plane.directions });
            manifest.write(dir)?;
        }
        Command::Validate {
            common,
            targets,
            checks,
        } => {
            let mut cfg = common.config()?;
            cfg.validate = false;
            let dir = common.out_dir()?;
            let pipeline = with_workers(common.workers, || prepare(cfg))??;
            let diagnostics = diagnose(&pipeline, checks)?;
            let mut manifest = Manifest::new("validate", &pipeline.config, common.workers);
            emit(&mut manifest, dir, "diagnostics.json", |w| {
                serde_json::to_writer_pretty(w, &diagnostics).map_err(Into::into)
            })?;
            let mut summary = json!({ "diagnostics": diagnostics });
            if let Some(path) = targets {
                let ys = read_targets(&path, pipeline.model.case(), &pipeline.y0)?;
                let outcomes = with_workers(common.workers, || {
                    ys.iter()
                        .map(|y| evaluate_target(&pipeline, y).map(|o| (y.clone(), o)))
                        .collect::<pfmanifold::Result<Vec<_>>>()
                })??;
                emit(&mut manifest, dir, "targets.csv", |w| {
                    write_targets_csv(pipeline.model.case(), &outcomes, w)
                })?;
                let alarms = outcomes.iter().filter(|(_, o)| o.is_alarm()).count();
                summary["targets"] = json!({ "count": outcomes.len(), "alarms": alarms });
                for (k, (_, o)) in outcomes.iter().enumerate() {
                    if let TargetOutcome::InfeasibleAlarm { lambda, lambda_s } = o {
                        eprintln!("target {k}: infeasible alarm (distance {lambda:.6} beyond boundary {lambda_s:.6})");
                    }
                }
                if alarms == outcomes.len() {
                    code = ExitCode::from(2);
                }
            }
            manifest.summary = summary;
            manifest.write(dir)?;
        }
    }
    Ok(code)
}

fn sweep(
    common: &Common,
    cfg: PipelineConfig,
    plane: &PlaneArgs,
) -> Result<(Pipeline, Plane, Vec<DirectionRun>)> {
    with_workers(common.workers, || -> Result<_> {
        let pipeline = prepare(cfg)?;
        let p = Plane::parse(pipeline.model.case(), &plane.plane)?;
        let runs = sweep_directions(&pipeline, p, plane.directions)?;
        Ok((pipeline, p, runs))
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
