//! File formats: trajectories and measurements as CSV, segment errors as CSV,
//! and a JSON run summary.
//!
//! Trajectory rows hold the sensor pose in the reference frame (the inverse of
//! the estimated transform `T`), with orientation as a unit quaternion in
//! `x, y, z, w` order, followed by the body velocity and, for WNOJ, the body
//! acceleration of `T`. Quaternions are renormalized on load.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Vector3, Vector4, Vector6};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::factors::{Measurement, MeasurementKind};
use crate::metric::{LengthError, SegmentErrors};
use crate::prior::{Knot, PriorOrder};
use crate::sim::{GroundTruth, GtSample};
use crate::solver::SolveReport;

const POSE_HEADER: [&str; 14] = [
    "t", "x", "y", "z", "qx", "qy", "qz", "qw", "vx", "vy", "vz", "wx", "wy", "wz",
];
const ACC_HEADER: [&str; 6] = ["ax", "ay", "az", "alx", "aly", "alz"];
const MEAS_HEADER: [&str; 18] = [
    "tau", "px", "py", "pz", "qx", "qy", "qz", "kind", "rxx", "rxy", "rxz", "ryy", "ryz", "rzz",
    "nx", "ny", "nz", "beta",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    Error::Parse(format!("{}{line}: {e}", path.display()))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(csv::Reader::from_reader(file))
}

fn field(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::Parse(format!("{} line {line}: missing column {i}", path.display())))?;
    raw.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "{} line {line}: column {i}: cannot parse {raw:?} as a number",
            path.display()
        ))
    })
}

/// One trajectory row: time, the estimated transform, and its derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateRecord {
    pub t: f64,
    pub pose: crate::liegroup::Pose<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Option<Vector6<f64>>,
}

impl From<&Knot<f64>> for StateRecord {
    fn from(k: &Knot<f64>) -> Self {
        Self {
            t: k.t,
            pose: k.pose,
            velocity: k.velocity,
            acceleration: None,
        }
    }
}

impl From<&GtSample> for StateRecord {
    fn from(s: &GtSample) -> Self {
        Self {
            t: s.t,
            pose: s.pose,
            velocity: s.velocity,
            acceleration: Some(s.acceleration),
        }
    }
}

/// Writes knots of the given order; WNOJ rows carry accelerations.
pub fn write_knots(path: &Path, order: PriorOrder, knots: &[Knot<f64>]) -> Result<()> {
    let rows: Vec<StateRecord> = knots
        .iter()
        .map(|k| StateRecord {
            acceleration: (order == PriorOrder::Wnoj).then_some(k.acceleration),
            ..StateRecord::from(k)
        })
        .collect();
    write_states(path, &rows, order == PriorOrder::Wnoj)
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let rows: Vec<StateRecord> = gt.samples.iter().map(StateRecord::from).collect();
    write_states(path, &rows, true)
}

fn write_states(path: &Path, rows: &[StateRecord], with_acc: bool) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<&str> = POSE_HEADER.to_vec();
    if with_acc {
        header.extend_from_slice(&ACC_HEADER);
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let body = r.pose.inverse();
        let p = body.translation();
        let q = body.quaternion();
        let mut rec: Vec<String> = [r.t, p.x, p.y, p.z, q.i, q.j, q.k, q.w]
            .iter()
            .chain(r.velocity.iter())
            .map(|v| v.to_string())
            .collect();
        if with_acc {
            let a = r.acceleration.unwrap_or_else(Vector6::zeros);
            rec.extend(a.iter().map(|v| v.to_string()));
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file; accelerations are present when the file has the
/// six extra columns.
pub fn read_states(path: &Path) -> Result<Vec<StateRecord>> {
    Ok(read_states_and_width(path)?.1)
}

fn read_states_and_width(path: &Path) -> Result<(bool, Vec<StateRecord>)> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let with_acc = match header.len() {
        14 => false,
        20 => true,
        n => {
            return Err(Error::Parse(format!(
                "{} line 1: expected 14 or 20 columns, found {n}",
                path.display()
            )))
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let v = (0..header.len())
            .map(|i| field(path, &rec, i))
            .collect::<Result<Vec<f64>>>()?;
        let quat = Quaternion::new(v[7], v[4], v[5], v[6]);
        if quat.norm() == 0.0 {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            return Err(Error::Parse(format!("{} line {line}: zero quaternion", path.display())));
        }
        let body = crate::liegroup::Pose::from_quaternion(quat, Vector3::new(v[1], v[2], v[3]))?;
        out.push(StateRecord {
            t: v[0],
            pose: body.inverse(),
            velocity: Vector6::from_column_slice(&v[8..14]),
            acceleration: with_acc.then(|| Vector6::from_column_slice(&v[14..20])),
        });
    }
    Ok((with_acc, out))
}

/// Reads knots, inferring the prior order from the presence of accelerations.
pub fn read_knots(path: &Path) -> Result<(PriorOrder, Vec<Knot<f64>>)> {
    let (with_acc, rows) = read_states_and_width(path)?;
    let order = if with_acc { PriorOrder::Wnoj } else { PriorOrder::Wnoa };
    let knots = rows
        .iter()
        .map(|r| Knot::new(r.t, r.pose, r.velocity, r.acceleration.unwrap_or_else(Vector6::zeros)))
        .collect();
    Ok((order, knots))
}

/// Reads a ground-truth file written by [`write_ground_truth`].
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let samples: Vec<GtSample> = read_states(path)?
        .into_iter()
        .map(|r| GtSample {
            t: r.t,
            pose: r.pose,
            velocity: r.velocity,
            acceleration: r.acceleration.unwrap_or_else(Vector6::zeros),
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::Parse(format!("{}: no samples", path.display())));
    }
    if samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::InvalidTime(format!(
            "{}: sample times must increase",
            path.display()
        )));
    }
    Ok(GroundTruth {
        samples,
        descriptor: format!("loaded from {}", path.display()),
    })
}

pub fn write_measurements(path: &Path, ms: &[Measurement<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(MEAS_HEADER).map_err(|e| csv_err(path, e))?;
    for m in ms {
        let mut rec: Vec<String> = [m.tau, m.p.x, m.p.y, m.p.z, m.q.x, m.q.y, m.q.z]
            .iter()
            .map(|v| v.to_string())
            .collect();
        let empty = || String::new();
        match &m.kind {
            MeasurementKind::Point { r, .. } => {
                rec.push("point".into());
                for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
                    rec.push(r[(i, j)].to_string());
                }
                rec.extend((0..4).map(|_| empty()));
            }
            MeasurementKind::Plane { normal, beta } => {
                rec.push("plane".into());
                rec.extend((0..6).map(|_| empty()));
                rec.extend(normal.iter().chain([beta]).map(|v| v.to_string()));
            }
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement<f64>>> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() != MEAS_HEADER.len() {
        return Err(Error::Parse(format!(
            "{} line 1: expected {} columns, found {}",
            path.display(),
            MEAS_HEADER.len(),
            header.len()
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f = |i| field(path, &rec, i);
        let tau = f(0)?;
        let p = Vector4::new(f(1)?, f(2)?, f(3)?, 1.0);
        let q = Vector4::new(f(4)?, f(5)?, f(6)?, 1.0);
        let m = match rec.get(7).map(str::trim) {
            Some("point") => {
                let (xx, xy, xz, yy, yz, zz) = (f(8)?, f(9)?, f(10)?, f(11)?, f(12)?, f(13)?);
                let cov = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
                Measurement::point(tau, p, q, cov)
            }
            Some("plane") => {
                let n = Vector3::new(f(14)?, f(15)?, f(16)?);
                Measurement::plane(tau, p, q, n, f(17)?)
            }
            other => {
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                return Err(Error::Parse(format!(
                    "{} line {line}: unknown measurement kind {:?}",
                    path.display(),
                    other.unwrap_or("")
                )));
            }
        };
        out.push(m.map_err(|e| {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse(format!("{} line {line}: {e}", path.display()))
        })?);
    }
    Ok(out)
}

/// Per-length rows followed by an `overall` row; header only when empty.
pub fn write_segment_errors(path: &Path, errors: &SegmentErrors) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["length", "mean_percent", "segments"])
        .map_err(|e| csv_err(path, e))?;
    for e in &errors.per_length {
        w.write_record([e.length.to_string(), e.mean_percent.to_string(), e.segments.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    if let Some(overall) = errors.overall {
        let total: usize = errors.per_length.iter().map(|e| e.segments).sum();
        w.write_record(["overall".to_string(), overall.to_string(), total.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segment_errors(path: &Path) -> Result<SegmentErrors> {
    let mut r = reader(path)?;
    let mut per_length = Vec::new();
    let mut overall = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let mean = field(path, &rec, 1)?;
        if rec.get(0) == Some("overall") {
            overall = Some(mean);
        } else {
            per_length.push(LengthError {
                length: field(path, &rec, 0)?,
                mean_percent: mean,
                segments: field(path, &rec, 2)? as usize,
            });
        }
    }
    Ok(SegmentErrors { per_length, overall })
}

/// Hex SHA-256 of the configuration's canonical TOML form.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml_string()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthRow {
    pub length: f64,
    pub mean_percent: f64,
    pub segments: usize,
}

/// Structured record of one estimator run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub order: PriorOrder,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination: String,
    pub cost_trace: Vec<f64>,
    pub overall_percent: Option<f64>,
    pub per_length: Vec<LengthRow>,
}

impl RunSummary {
    pub fn new(
        cfg: &ExperimentConfig,
        seed: u64,
        order: PriorOrder,
        report: &SolveReport<f64>,
        errors: &SegmentErrors,
    ) -> Result<Self> {
        Ok(Self {
            config_sha256: config_hash(cfg)?,
            seed,
            order,
            iterations: report.iterations,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            converged: report.converged,
            termination: format!("{:?}", report.termination).to_lowercase(),
            cost_trace: report.cost_trace.clone(),
            overall_percent: errors.overall,
            per_length: errors
                .per_length
                .iter()
                .map(|e| LengthRow {
                    length: e.length,
                    mean_percent: e.mean_percent,
                    segments: e.segments,
                })
                .collect(),
        })
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes `<stem>_segments.csv` and `<stem>_summary.json` into `dir`.
pub fn write_results(dir: &Path, stem: &str, summary: &RunSummary, errors: &SegmentErrors) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    write_segment_errors(&dir.join(format!("{stem}_segments.csv")), errors)?;
    write_json(&dir.join(format!("{stem}_summary.json")), summary)
}
