//! Accuracy metrics: overlap-add accumulation of window predictions,
//! per-step displacement RMSE, yaw-aligned absolute trajectory error, and
//! report/plot generation.

mod report;
pub mod svg;

pub use report::{compare_report, cumulative, Report, SequenceReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::wrap_angle;

/// Planar pose at a timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(time: f64, x: f64, y: f64, yaw: f64) -> Self {
        Self { time, x, y, yaw }
    }
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if let Some(w) = poses.windows(2).find(|w| !(w[1].time > w[0].time)) {
            return Err(Error::input(format!(
                "trajectory times must increase strictly ({} then {})",
                w[0].time, w[1].time
            )));
        }
        if poses.iter().any(|p| !(p.time.is_finite() && p.x.is_finite() && p.y.is_finite() && p.yaw.is_finite())) {
            return Err(Error::input("trajectory contains non-finite values"));
        }
        Ok(Self { poses })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Linear position interpolation with shortest-arc yaw; `None` outside the time span.
    pub fn interpolate(&self, t: f64) -> Option<Pose> {
        let first = self.poses.first()?;
        let last = self.poses.last()?;
        if t < first.time || t > last.time {
            return None;
        }
        let i = self.poses.partition_point(|p| p.time < t);
        if self.poses[i].time == t {
            return Some(self.poses[i]);
        }
        let (a, b) = (self.poses[i - 1], self.poses[i]);
        let u = (t - a.time) / (b.time - a.time);
        Some(Pose {
            time: t,
            x: a.x + u * (b.x - a.x),
            y: a.y + u * (b.y - a.y),
            yaw: wrap_angle(a.yaw + u * wrap_angle(b.yaw - a.yaw)),
        })
    }

    /// Sum of straight-line segment lengths.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }
}

/// A displacement prediction spanning `span` consecutive steps from `start`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start: usize,
    pub span: usize,
    /// Total displacement over the span (m).
    pub value: f64,
}

/// Spreads each window's value evenly over its steps and averages the
/// contributions per step. Uncovered steps are `None`.
pub fn overlap_add(preds: &[WindowPrediction], n_steps: usize) -> Result<Vec<Option<f64>>> {
    let mut sum = vec![0.0; n_steps];
    let mut count = vec![0usize; n_steps];
    for p in preds {
        if p.span == 0 || p.start + p.span > n_steps {
            return Err(Error::input(format!("window [{}, {}) outside {n_steps} steps", p.start, p.start + p.span)));
        }
        let share = p.value / p.span as f64;
        for j in p.start..p.start + p.span {
            sum[j] += share;
            count[j] += 1;
        }
    }
    Ok(sum.into_iter().zip(count).map(|(s, c)| (c > 0).then(|| s / c as f64)).collect())
}

/// Root-mean-square error in millimetres over the steps where `pred` is present.
pub fn rmse_mm(truth: &[f64], pred: &[Option<f64>]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::input(format!("series lengths differ ({} vs {})", truth.len(), pred.len())));
    }
    let (mut acc, mut n) = (0.0, 0usize);
    for (t, p) in truth.iter().zip(pred) {
        if let Some(p) = p {
            acc += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::input("no comparable steps"));
    }
    Ok((acc / n as f64).sqrt() * 1000.0)
}

/// Alignment applied before measuring absolute trajectory error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AteAlignment {
    /// Translate the estimate so both start at the same position.
    pub anchor_start: bool,
    /// Rotate the estimate about the truth's start by the least-squares yaw.
    pub align_yaw: bool,
}

impl Default for AteAlignment {
    fn default() -> Self {
        Self { anchor_start: true, align_yaw: true }
    }
}

/// RMSE of position differences (m) at the truth timestamps covered by the estimate.
pub fn rmse_ate(truth: &Trajectory, est: &Trajectory, alignment: AteAlignment) -> Result<f64> {
    let pairs: Vec<(Pose, Pose)> =
        truth.poses().iter().filter_map(|t| est.interpolate(t.time).map(|e| (*t, e))).collect();
    if pairs.len() < 2 {
        return Err(Error::input(format!("need at least 2 common timestamps for ATE, found {}", pairs.len())));
    }
    let (t0, e0) = pairs[0];
    let shift = if alignment.anchor_start { (t0.x - e0.x, t0.y - e0.y) } else { (0.0, 0.0) };
    // Both point sets relative to the truth start.
    let rel: Vec<([f64; 2], [f64; 2])> =
        pairs.iter().map(|(t, e)| ([t.x - t0.x, t.y - t0.y], [e.x + shift.0 - t0.x, e.y + shift.1 - t0.y])).collect();
    let theta = if alignment.align_yaw {
        let (mut dot, mut cross) = (0.0, 0.0);
        for (p, q) in &rel {
            dot += q[0] * p[0] + q[1] * p[1];
            cross += q[0] * p[1] - q[1] * p[0];
        }
        cross.atan2(dot)
    } else {
        0.0
    };
    let (s, c) = theta.sin_cos();
    let sq: f64 = rel
        .iter()
        .map(|(p, q)| {
            let rx = c * q[0] - s * q[1];
            let ry = s * q[0] + c * q[1];
            (rx - p[0]).powi(2) + (ry - p[1]).powi(2)
        })
        .sum();
    Ok((sq / rel.len() as f64).sqrt())
}
