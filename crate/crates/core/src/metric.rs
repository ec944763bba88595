//! Relative translation error over fixed path lengths.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::liegroup::Pose;

/// Mean translation error for one segment length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LengthError {
    pub length: f64,
    /// Mean error in percent of the segment length.
    pub mean_percent: f64,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentErrors {
    /// Lengths that produced at least one segment.
    pub per_length: Vec<LengthError>,
    /// Mean of the per-length means; `None` when the path is shorter than
    /// every requested length.
    pub overall: Option<f64>,
}

impl SegmentErrors {
    pub fn is_empty(&self) -> bool {
        self.per_length.is_empty()
    }
}

/// Cumulative distance travelled along a sequence of positions.
pub fn arc_length(positions: &[Vector3<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(positions.len());
    let mut acc = 0.0;
    for (i, p) in positions.iter().enumerate() {
        if i > 0 {
            acc += (p - positions[i - 1]).norm();
        }
        out.push(acc);
    }
    out
}

/// Compares time-aligned body poses (body-to-world) of an estimate and the
/// ground truth. For every start index and every length `L`, the segment ends
/// at the first sample whose ground-truth arc length reaches `L`; its error is
/// the norm of the difference of the relative translations, divided by `L`.
pub fn segment_translation_error(
    estimate: &[Pose<f64>],
    ground_truth: &[Pose<f64>],
    lengths: &[f64],
) -> Result<SegmentErrors> {
    if estimate.len() != ground_truth.len() {
        return Err(Error::InvalidProblem(format!(
            "estimate has {} poses, ground truth {}",
            estimate.len(),
            ground_truth.len()
        )));
    }
    if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Config("segment lengths must be positive".into()));
    }
    let positions: Vec<_> = ground_truth.iter().map(|p| p.translation()).collect();
    let dist = arc_length(&positions);
    let mut per_length = Vec::new();
    for &len in lengths {
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut end = 0usize;
        for start in 0..dist.len() {
            end = end.max(start);
            while end < dist.len() && dist[end] - dist[start] < len {
                end += 1;
            }
            if end == dist.len() {
                break;
            }
            let rel_gt = ground_truth[start].inverse() * ground_truth[end];
            let rel_est = estimate[start].inverse() * estimate[end];
            let err = (rel_est.translation() - rel_gt.translation()).norm();
            sum += err / len;
            count += 1;
        }
        if count > 0 {
            per_length.push(LengthError {
                length: len,
                mean_percent: 100.0 * sum / count as f64,
                segments: count,
            });
        }
    }
    let overall = if per_length.is_empty() {
        None
    } else {
        Some(per_length.iter().map(|e| e.mean_percent).sum::<f64>() / per_length.len() as f64)
    };
    Ok(SegmentErrors { per_length, overall })
}
