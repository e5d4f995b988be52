//! Simulated measurement increments around a base operating point.
//!
//! Each sample perturbs the nodal injections, solves the power flow and records
//! the difference to the base point. Every sample draws from its own ChaCha
//! stream keyed by the sample index, so results do not depend on scheduling.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Layout;
use crate::powerflow::{newton_solve, NewtonConfig, OperatingPoint, PowerFlowModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchMode {
    /// Each reduced injection drawn independently from `U(-ρ, ρ)`.
    UniformBox,
    /// Perturbations of length exactly `ρ` along fixed injection directions.
    FixedDirections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub radius: f64,
    pub mode: PatchMode,
    pub count: usize,
    pub seed: u64,
    /// Directions in reduced injection space; `None` uses the coordinate axes.
    pub directions: Option<Vec<Vec<f64>>>,
    /// Standard deviation of Gaussian noise added to every recorded channel.
    pub noise_std: f64,
    /// Redraws allowed per sample in random mode.
    pub max_attempts: usize,
}

impl PatchSpec {
    pub fn uniform(radius: f64, count: usize, seed: u64) -> Self {
        PatchSpec {
            radius,
            mode: PatchMode::UniformBox,
            count,
            seed,
            directions: None,
            noise_std: 0.0,
            max_attempts: 100,
        }
    }

    pub fn fixed(radius: f64, count: usize) -> Self {
        PatchSpec {
            mode: PatchMode::FixedDirections,
            ..PatchSpec::uniform(radius, count, 0)
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Config(format!(
                "patch radius must be positive, got {}",
                self.radius
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("patch needs at least one sample".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise level must be non-negative".into()));
        }
        if let Some(dirs) = &self.directions {
            if dirs.len() != self.count {
                return Err(Error::Config(format!(
                    "{} directions given for {} samples",
                    dirs.len(),
                    self.count
                )));
            }
            for d in dirs {
                if d.len() != n {
                    return Err(Error::Dimension(format!(
                        "direction has {} entries, expected {n}",
                        d.len()
                    )));
                }
                if !(d.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                    return Err(Error::Config("zero-length patch direction".into()));
                }
            }
        } else if self.mode == PatchMode::FixedDirections && self.count > 2 * n {
            return Err(Error::Config(format!(
                "default axis directions give at most {} samples",
                2 * n
            )));
        }
        Ok(())
    }

    /// Unit injection direction of fixed-mode sample `index`.
    fn direction(&self, index: usize, n: usize) -> DVector<f64> {
        match &self.directions {
            Some(dirs) => {
                let d = DVector::from_column_slice(&dirs[index]);
                let norm = d.norm();
                d / norm
            }
            None => {
                let mut d = DVector::zeros(n);
                d[index % n] = if index < n { 1.0 } else { -1.0 };
                d
            }
        }
    }
}

/// Increment between a solved perturbed point and the base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    /// Angles at buses `1..N-1`.
    pub d_angle: Vec<f64>,
    /// Voltage magnitudes at PQ buses.
    pub d_voltage: Vec<f64>,
    /// Active power at buses `1..N-1`.
    pub d_p: Vec<f64>,
    /// Reactive power at buses `1..N-1`, PV buses included.
    pub d_q: Vec<f64>,
}

impl MeasurementSample {
    pub fn between(layout: Layout, base: &OperatingPoint, point: &OperatingPoint) -> Self {
        let m = layout.angle_count();
        let diff = |a: &[f64], b: &[f64], k: usize| {
            a[..k].iter().zip(&b[..k]).map(|(x, y)| x - y).collect()
        };
        MeasurementSample {
            d_angle: diff(&point.angle, &base.angle, m),
            d_voltage: diff(&point.voltage, &base.voltage, layout.pq),
            d_p: diff(&point.p, &base.p, m),
            d_q: diff(&point.q, &base.q, m),
        }
    }

    fn add_noise(&mut self, rng: &mut ChaCha20Rng, std: f64) {
        let normal = Normal::new(0.0, std).expect("finite non-negative deviation");
        for v in self
            .d_angle
            .iter_mut()
            .chain(self.d_voltage.iter_mut())
            .chain(self.d_p.iter_mut())
            .chain(self.d_q.iter_mut())
        {
            *v += normal.sample(rng);
        }
    }
}

/// Draws a measurement patch around `base`.
pub fn sample_patch(
    model: &PowerFlowModel,
    base: &OperatingPoint,
    spec: &PatchSpec,
) -> Result<Vec<MeasurementSample>> {
    let n = model.dim();
    spec.validate(n)?;
    let layout = model.layout();
    let y0 = model.reduced_injection(base);
    let newton = NewtonConfig::default();

    let draw = |index: usize| -> Result<MeasurementSample> {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let attempts = match spec.mode {
            PatchMode::UniformBox => spec.max_attempts.max(1),
            PatchMode::FixedDirections => 1,
        };
        for _ in 0..attempts {
            let offset = match spec.mode {
                PatchMode::UniformBox => {
                    DVector::from_fn(n, |_, _| rng.random_range(-spec.radius..spec.radius))
                }
                PatchMode::FixedDirections => spec.direction(index, n) * spec.radius,
            };
            let target = &y0 + offset;
            if let Ok(report) = newton_solve(model, &target, base, &newton) {
                let mut sample = MeasurementSample::between(layout, base, &report.point);
                if spec.noise_std > 0.0 {
                    sample.add_noise(&mut rng, spec.noise_std);
                }
                return Ok(sample);
            }
        }
        Err(Error::SamplingFailed { index, attempts })
    };

    (0..spec.count).into_par_iter().map(draw).collect()
}

/// Stacks samples into `ΔX` (n × m) and `ΔY` (2(N−1) × m).
pub fn stack_increments(
    layout: Layout,
    samples: &[MeasurementSample],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let m = layout.angle_count();
    let mut dx = DMatrix::zeros(layout.dim(), samples.len());
    let mut dy = DMatrix::zeros(layout.full_rows(), samples.len());
    for (k, s) in samples.iter().enumerate() {
        if s.d_angle.len() != m
            || s.d_voltage.len() != layout.pq
            || s.d_p.len() != m
            || s.d_q.len() != m
        {
            return Err(Error::Dimension(format!(
                "sample {k} does not match the case layout"
            )));
        }
        for (r, v) in s.d_angle.iter().chain(&s.d_voltage).enumerate() {
            dx[(r, k)] = *v;
        }
        for (r, v) in s.d_p.iter().chain(&s.d_q).enumerate() {
            dy[(r, k)] = *v;
        }
    }
    Ok((dx, dy))
}

fn sample_header(model: &PowerFlowModel) -> Vec<String> {
    let case = model.case();
    let layout = model.layout();
    let ids = case.bus_ids();
    let m = layout.angle_count();
    let mut header: Vec<String> = ids[..m].iter().map(|id| format!("d_delta_{id}")).collect();
    header.extend(ids[..layout.pq].iter().map(|id| format!("d_v_{id}")));
    header.extend(ids[..m].iter().map(|id| format!("d_p_{id}")));
    header.extend(ids[..m].iter().map(|id| format!("d_q_{id}")));
    header
}

/// One row per sample, columns labelled by quantity and bus.
pub fn write_samples_csv<W: Write>(
    model: &PowerFlowModel,
    samples: &[MeasurementSample],
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sample_header(model))?;
    for s in samples {
        let row: Vec<String> = s
            .d_angle
            .iter()
            .chain(&s.d_voltage)
            .chain(&s.d_p)
            .chain(&s.d_q)
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads samples written by [`write_samples_csv`] or recorded externally with the same header.
pub fn read_samples_csv<R: Read>(
    model: &PowerFlowModel,
    input: R,
) -> Result<Vec<MeasurementSample>> {
    let layout = model.layout();
    let m = layout.angle_count();
    let expected = sample_header(model);
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let position: Vec<usize> = expected
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("sample file lacks column {name}")))
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let values: Vec<f64> = position
            .iter()
            .map(|&p| {
                let field = record.get(p).unwrap_or("").trim();
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number '{field}' in sample file")))
            })
            .collect::<Result<_>>()?;
        let (angle, rest) = values.split_at(m);
        let (voltage, rest) = rest.split_at(layout.pq);
        let (p, q) = rest.split_at(m);
        samples.push(MeasurementSample {
            d_angle: angle.to_vec(),
            d_voltage: voltage.to_vec(),
            d_p: p.to_vec(),
            d_q: q.to_vec(),
        });
    }
    Ok(samples)
}
