//! Planar extended Kalman filter fusing wheel odometry, IMU yaw/gyro/
//! acceleration and GPR-derived pseudo-positions.
//!
//! State layout: `[x, y, yaw, vx, vy, yaw_rate, ax, ay]` where velocities and
//! accelerations are expressed in the body frame.

mod config;
mod replay;

pub use config::{EkfConfig, WheelFusion};
pub use replay::{run_filter, FilterTrack, GprStep, ReorderBuffer, SensorLog};

use nalgebra::{DMatrix, DVector, RealField, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 8;
pub const IX: usize = 0;
pub const IY: usize = 1;
pub const IYAW: usize = 2;
pub const IVX: usize = 3;
pub const IVY: usize = 4;
pub const IYAW_RATE: usize = 5;
pub const IAX: usize = 6;
pub const IAY: usize = 7;

pub type StateVector<T> = SVector<T, STATE_DIM>;
pub type StateMatrix<T> = SMatrix<T, STATE_DIM, STATE_DIM>;

/// Symmetric part must match to this tolerance; smaller eigenvalues are an error.
const PSD_FLOOR: f64 = -1e-9;

#[inline]
fn lit<T: RealField + Copy>(v: f64) -> T {
    nalgebra::convert(v)
}

#[inline]
fn to_f64<T: RealField + Copy>(v: T) -> f64 {
    v.to_subset().unwrap_or(f64::NAN)
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.sin().atan2(a.cos());
    if w <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

fn wrap<T: RealField + Copy>(a: T) -> T {
    let w = a.sin().atan2(a.cos());
    if w <= -T::pi() {
        T::pi()
    } else {
        w
    }
}

/// Cumulative wheel encoder counters `[front_left, front_right, rear_left, rear_right]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSample {
    pub time: f64,
    pub ticks: [i64; 4],
}

impl EncoderSample {
    pub fn new(time: f64, ticks: [i64; 4]) -> Self {
        Self { time, ticks }
    }

    fn left(&self) -> f64 {
        0.5 * (self.ticks[0] + self.ticks[2]) as f64
    }

    fn right(&self) -> f64 {
        0.5 * (self.ticks[1] + self.ticks[3]) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub time: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub ax: f64,
    pub ay: f64,
}

/// Drive-train constants.
///
/// Tick deltas become wheel travel through `ticks_per_meter`; the radius is
/// kept for reference (`ticks_per_meter = ticks_per_rev / (2 pi R)`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WheelGeometry {
    pub ticks_per_meter: f64,
    pub wheel_radius: f64,
    pub wheel_separation: f64,
}

impl Default for WheelGeometry {
    fn default() -> Self {
        // Platform constants as published; the separation/radius pair looks
        // transposed for a vehicle of that size, so override when known.
        Self { ticks_per_meter: 78_000.0, wheel_radius: 0.5455, wheel_separation: 0.165 }
    }
}

/// Body-frame forward speed and yaw rate from a differential drive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WheelOdom {
    pub forward_velocity: f64,
    pub yaw_rate: f64,
}

/// Differential-drive odometry between two encoder readings, using the
/// front/rear average on each side.
pub fn wheel_odometry(prev: &EncoderSample, curr: &EncoderSample, geometry: &WheelGeometry) -> Result<WheelOdom> {
    let dt = curr.time - prev.time;
    if !(dt > 0.0) {
        return Err(Error::input(format!("encoder timestamps must increase (dt = {dt})")));
    }
    let v_l = (curr.left() - prev.left()) / geometry.ticks_per_meter / dt;
    let v_r = (curr.right() - prev.right()) / geometry.ticks_per_meter / dt;
    Ok(wheel_velocities(v_l, v_r, geometry.wheel_separation))
}

/// `((v_r + v_l) / 2, (v_r - v_l) / W)`.
pub fn wheel_velocities(v_l: f64, v_r: f64, separation: f64) -> WheelOdom {
    WheelOdom { forward_velocity: 0.5 * (v_r + v_l), yaw_rate: (v_r - v_l) / separation }
}

/// Advances a GPR pseudo-position by `displacement` along heading `yaw`.
pub fn gpr_to_position(displacement: f64, yaw: f64, prev: (f64, f64)) -> (f64, f64) {
    (prev.0 + displacement * yaw.cos(), prev.1 + displacement * yaw.sin())
}

/// Scales the GPR covariance by `factor` while `|yaw_rate| > threshold`.
pub fn inflate_gpr_covariance<T: RealField + Copy>(
    base: &DMatrix<T>,
    yaw_rate: T,
    threshold: T,
    factor: T,
) -> DMatrix<T> {
    if yaw_rate.abs() > threshold {
        base * factor
    } else {
        base.clone()
    }
}

/// What a measurement observes.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementKind<T> {
    /// Forward speed and yaw rate; lateral body speed is observed as zero
    /// (non-holonomic constraint of a wheeled base).
    WheelOdom {
        forward_velocity: T,
        yaw_rate: T,
    },
    Imu {
        yaw: T,
        yaw_rate: T,
        ax: T,
        ay: T,
    },
    GprPosition {
        x: T,
        y: T,
    },
    /// Dead-reckoned wheel position, used when wheels are fused as positions.
    WheelPosition {
        x: T,
        y: T,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement<T> {
    pub time: f64,
    pub kind: MeasurementKind<T>,
    /// Noise covariance, one row/column per observed component.
    pub covariance: DMatrix<T>,
}

impl<T: RealField + Copy> Measurement<T> {
    /// Observed state indices, in the order of `values`.
    pub fn indices(&self) -> &'static [usize] {
        match self.kind {
            MeasurementKind::WheelOdom { .. } => &[IVX, IVY, IYAW_RATE],
            MeasurementKind::Imu { .. } => &[IYAW, IYAW_RATE, IAX, IAY],
            MeasurementKind::GprPosition { .. } | MeasurementKind::WheelPosition { .. } => &[IX, IY],
        }
    }

    pub fn values(&self) -> Vec<T> {
        match self.kind {
            MeasurementKind::WheelOdom { forward_velocity, yaw_rate } => vec![forward_velocity, T::zero(), yaw_rate],
            MeasurementKind::Imu { yaw, yaw_rate, ax, ay } => vec![yaw, yaw_rate, ax, ay],
            MeasurementKind::GprPosition { x, y } | MeasurementKind::WheelPosition { x, y } => vec![x, y],
        }
    }

    /// Builds a measurement with diagonal noise from per-component standard deviations.
    pub fn with_sigmas(time: f64, kind: MeasurementKind<T>, sigmas: &[T]) -> Self {
        let covariance = DMatrix::from_diagonal(&DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| *s * *s)));
        let m = Self { time, kind, covariance };
        debug_assert_eq!(m.indices().len(), sigmas.len());
        m
    }
}

/// Filter belief.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfState<T: RealField + Copy> {
    pub mean: StateVector<T>,
    pub covariance: StateMatrix<T>,
    pub time: f64,
}

impl<T: RealField + Copy> EkfState<T> {
    pub fn new(mean: StateVector<T>, covariance: StateMatrix<T>, time: f64) -> Self {
        let mut mean = mean;
        mean[IYAW] = wrap(mean[IYAW]);
        Self { mean, covariance, time }
    }

    pub fn x(&self) -> T {
        self.mean[IX]
    }

    pub fn y(&self) -> T {
        self.mean[IY]
    }

    pub fn yaw(&self) -> T {
        self.mean[IYAW]
    }

    pub fn covariance_diagonal(&self) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| to_f64(self.covariance[(i, i)]))
    }
}

/// Constant-acceleration planar kinematics over `dt`.
pub fn motion_model<T: RealField + Copy>(x: &StateVector<T>, dt: T) -> StateVector<T> {
    let (s, c) = x[IYAW].sin_cos();
    let half_dt2 = lit::<T>(0.5) * dt * dt;
    let (vx, vy, ax, ay) = (x[IVX], x[IVY], x[IAX], x[IAY]);
    let mut out = *x;
    out[IX] = x[IX] + (vx * c - vy * s) * dt + (ax * c - ay * s) * half_dt2;
    out[IY] = x[IY] + (vx * s + vy * c) * dt + (ax * s + ay * c) * half_dt2;
    out[IYAW] = x[IYAW] + x[IYAW_RATE] * dt;
    out[IVX] = vx + ax * dt;
    out[IVY] = vy + ay * dt;
    out
}

/// Jacobian of [`motion_model`] with respect to the state.
pub fn motion_jacobian<T: RealField + Copy>(x: &StateVector<T>, dt: T) -> StateMatrix<T> {
    let (s, c) = x[IYAW].sin_cos();
    let half_dt2 = lit::<T>(0.5) * dt * dt;
    let (vx, vy, ax, ay) = (x[IVX], x[IVY], x[IAX], x[IAY]);
    let mut f = StateMatrix::<T>::identity();
    f[(IX, IYAW)] = (-vx * s - vy * c) * dt + (-ax * s - ay * c) * half_dt2;
    f[(IX, IVX)] = c * dt;
    f[(IX, IVY)] = -s * dt;
    f[(IX, IAX)] = c * half_dt2;
    f[(IX, IAY)] = -s * half_dt2;
    f[(IY, IYAW)] = (vx * c - vy * s) * dt + (ax * c - ay * s) * half_dt2;
    f[(IY, IVX)] = s * dt;
    f[(IY, IVY)] = c * dt;
    f[(IY, IAX)] = s * half_dt2;
    f[(IY, IAY)] = c * half_dt2;
    f[(IYAW, IYAW_RATE)] = dt;
    f[(IVX, IAX)] = dt;
    f[(IVY, IAY)] = dt;
    f
}

/// Symmetrizes and checks the eigenvalue floor, clamping tiny negative
/// eigenvalues to zero.
pub fn condition_covariance<T: RealField + Copy>(p: &StateMatrix<T>) -> Result<StateMatrix<T>> {
    let sym = (p + p.transpose()) * lit::<T>(0.5);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("covariance contains non-finite entries"));
    }
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(T::max_value().expect("bounded"), |a, b| a.min(b));
    if min < lit(PSD_FLOOR) {
        return Err(Error::numerical(format!(
            "covariance lost positive semi-definiteness (min eigenvalue {})",
            to_f64(min)
        )));
    }
    if min < T::zero() {
        let clamped = eig.eigenvalues.map(|v| v.max(T::zero()));
        let q = eig.eigenvectors;
        let rebuilt = q * StateMatrix::from_diagonal(&clamped) * q.transpose();
        return Ok((rebuilt + rebuilt.transpose()) * lit::<T>(0.5));
    }
    Ok(sym)
}

/// Propagates the belief by `dt` seconds; `q` is the process noise density
/// (covariance per second).
pub fn predict<T: RealField + Copy>(state: &EkfState<T>, dt: f64, q: &StateMatrix<T>) -> Result<EkfState<T>> {
    if !(dt > 0.0) {
        return Err(Error::input(format!("prediction step must be positive (dt = {dt})")));
    }
    let h: T = lit(dt);
    let f = motion_jacobian(&state.mean, h);
    let mut mean = motion_model(&state.mean, h);
    mean[IYAW] = wrap(mean[IYAW]);
    let p = f * state.covariance * f.transpose() + q * h;
    Ok(EkfState { mean, covariance: condition_covariance(&p)?, time: state.time + dt })
}

/// Kalman update with a row-selecting observation matrix. Components with
/// infinite variance are ignored.
pub fn update<T: RealField + Copy>(state: &EkfState<T>, m: &Measurement<T>) -> Result<EkfState<T>> {
    let all = m.indices();
    let values = m.values();
    if m.covariance.nrows() != all.len() || m.covariance.ncols() != all.len() {
        return Err(Error::input(format!("measurement covariance must be {n}x{n}", n = all.len())));
    }
    let keep: Vec<usize> = (0..all.len()).filter(|&r| m.covariance[(r, r)].is_finite()).collect();
    if keep.is_empty() {
        return Ok(state.clone());
    }
    let dim = keep.len();
    let mut h = DMatrix::<T>::zeros(dim, STATE_DIM);
    let mut innovation = DVector::<T>::zeros(dim);
    let mut r = DMatrix::<T>::zeros(dim, dim);
    for (row, &src) in keep.iter().enumerate() {
        let idx = all[src];
        h[(row, idx)] = T::one();
        let mut y = values[src] - state.mean[idx];
        if idx == IYAW {
            y = wrap(y);
        }
        innovation[row] = y;
        for (col, &src2) in keep.iter().enumerate() {
            r[(row, col)] = m.covariance[(src, src2)];
        }
    }
    let p = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| state.covariance[(i, j)]);
    let s = &h * &p * h.transpose() + &r;
    let chol =
        s.clone().cholesky().ok_or_else(|| Error::numerical("innovation covariance is not positive definite"))?;
    // K = P H^T S^-1
    let k = chol.solve(&(&h * &p)).transpose();
    let mut mean = state.mean + StateVector::from_iterator((&k * &innovation).iter().copied());
    mean[IYAW] = wrap(mean[IYAW]);
    // Joseph form keeps the posterior symmetric positive semi-definite.
    let i_kh = DMatrix::<T>::identity(STATE_DIM, STATE_DIM) - &k * &h;
    let post = &i_kh * &p * i_kh.transpose() + &k * &r * k.transpose();
    let post = StateMatrix::from_fn(|i, j| post[(i, j)]);
    Ok(EkfState { mean, covariance: condition_covariance(&post)?, time: state.time.max(m.time) })
}
