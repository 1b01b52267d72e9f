use nalgebra::{DMatrix, RealField};

use super::{
    gpr_to_position, inflate_gpr_covariance, lit, predict, to_f64, update, wheel_odometry, EkfConfig, EkfState,
    EncoderSample, ImuSample, Measurement, MeasurementKind, StateMatrix, StateVector, WheelFusion, WheelOdom, IVX,
    IYAW, IYAW_RATE, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{Pose, Trajectory};

/// Displacement estimate covering `[start_time, time]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GprStep {
    pub start_time: f64,
    pub time: f64,
    pub displacement: f64,
}

/// Raw sensor streams, each ordered by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorLog {
    pub encoders: Vec<EncoderSample>,
    pub imu: Vec<ImuSample>,
    pub gpr: Vec<GprStep>,
}

impl SensorLog {
    pub fn is_empty(&self) -> bool {
        self.encoders.len() < 2 && self.imu.is_empty() && self.gpr.is_empty()
    }
}

pub trait Timestamped {
    fn time(&self) -> f64;
}

impl Timestamped for EncoderSample {
    fn time(&self) -> f64 {
        self.time
    }
}

impl Timestamped for ImuSample {
    fn time(&self) -> f64 {
        self.time
    }
}

impl Timestamped for GprStep {
    fn time(&self) -> f64 {
        self.time
    }
}

impl<T> Timestamped for Measurement<T> {
    fn time(&self) -> f64 {
        self.time
    }
}

/// Small re-sequencing buffer: items arriving up to `window` seconds late are
/// put back in order, later stragglers are dropped.
#[derive(Clone, Debug)]
pub struct ReorderBuffer<M> {
    window: f64,
    pending: Vec<M>,
    newest: f64,
    released: f64,
    dropped: usize,
}

impl<M: Timestamped> ReorderBuffer<M> {
    pub fn new(window: f64) -> Self {
        Self { window, pending: Vec::new(), newest: f64::NEG_INFINITY, released: f64::NEG_INFINITY, dropped: 0 }
    }

    /// Returns `false` if the item was too late and got dropped.
    pub fn push(&mut self, item: M) -> bool {
        let t = item.time();
        if t < self.released || t < self.newest - self.window {
            log::warn!("dropping measurement at t={t:.3}s, {:.3}s behind the stream", self.newest - t);
            self.dropped += 1;
            return false;
        }
        // stable: equal timestamps keep arrival order
        let at = self.pending.partition_point(|p| p.time() <= t);
        self.pending.insert(at, item);
        self.newest = self.newest.max(t);
        true
    }

    /// Items that can no longer be preceded by an acceptable late arrival.
    pub fn pop_ready(&mut self) -> Vec<M> {
        let horizon = self.newest - self.window;
        let n = self.pending.partition_point(|p| p.time() <= horizon);
        let out: Vec<M> = self.pending.drain(..n).collect();
        if let Some(last) = out.last() {
            self.released = last.time();
        }
        out
    }

    pub fn finish(mut self) -> Vec<M> {
        std::mem::take(&mut self.pending)
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

fn resequence<M: Timestamped + Clone>(items: &[M], window: f64) -> Vec<M> {
    let mut buf = ReorderBuffer::new(window);
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        buf.push(item.clone());
        out.extend(buf.pop_ready());
    }
    out.extend(buf.finish());
    out
}

/// Filter output: poses plus the covariance diagonal at each pose.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterTrack {
    pub poses: Vec<Pose>,
    pub covariance_diagonals: Vec<[f64; STATE_DIM]>,
}

impl FilterTrack {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::new(self.poses.clone()).expect("filter emits strictly increasing times")
    }

    fn emit<T: RealField + Copy>(&mut self, s: &EkfState<T>) {
        let pose = Pose::new(s.time, to_f64(s.x()), to_f64(s.y()), to_f64(s.yaw()));
        let diag = s.covariance_diagonal();
        match self.poses.last() {
            Some(last) if (last.time - s.time).abs() <= TIME_EPS => {
                *self.poses.last_mut().unwrap() = pose;
                *self.covariance_diagonals.last_mut().unwrap() = diag;
            }
            _ => {
                self.poses.push(pose);
                self.covariance_diagonals.push(diag);
            }
        }
    }
}

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
enum Event {
    Wheel(usize),
    Imu(usize),
    /// Re-seed the GPR pseudo-position from the current estimate.
    GprAnchor,
    Gpr(usize),
}

impl Event {
    fn rank(&self) -> u8 {
        match self {
            Event::Wheel(_) => 0,
            Event::Imu(_) => 1,
            Event::GprAnchor => 2,
            Event::Gpr(_) => 3,
        }
    }
}

fn diag<T: RealField + Copy>(v: &[f64; STATE_DIM], square: bool) -> StateMatrix<T> {
    StateMatrix::from_diagonal(&StateVector::from_fn(|i, _| lit(if square { v[i] * v[i] } else { v[i] })))
}

fn sigmas<T: RealField + Copy>(values: &[f64]) -> Vec<T> {
    values.iter().map(|v| lit(*v)).collect()
}

/// Replays a sensor log through the filter in time order.
///
/// Poses are emitted after every measurement update and at `output_rate`
/// between updates.
pub fn run_filter<T: RealField + Copy>(log: &SensorLog, cfg: &EkfConfig) -> Result<FilterTrack> {
    cfg.validate()?;
    if log.is_empty() {
        return Err(Error::input("sensor log has no usable measurements"));
    }
    let geometry = cfg.geometry();
    let encoders = resequence(&log.encoders, cfg.reorder_window);
    let imu = resequence(&log.imu, cfg.reorder_window);
    let gpr = if cfg.gpr_enabled { resequence(&log.gpr, cfg.reorder_window) } else { Vec::new() };

    let odometry: Vec<Option<WheelOdom>> = encoders
        .windows(2)
        .map(|w| match wheel_odometry(&w[0], &w[1], &geometry) {
            Ok(o) => Some(o),
            Err(_) => {
                log::warn!("skipping encoder sample with non-increasing time {}", w[1].time);
                None
            }
        })
        .collect();

    let mut events: Vec<(f64, Event)> = Vec::new();
    events.extend(
        (1..encoders.len()).filter(|&i| odometry[i - 1].is_some()).map(|i| (encoders[i].time, Event::Wheel(i))),
    );
    events.extend(imu.iter().enumerate().map(|(i, m)| (m.time, Event::Imu(i))));
    let mut prev_end: Option<f64> = None;
    for (i, step) in gpr.iter().enumerate() {
        if !(step.time > step.start_time) || !step.displacement.is_finite() {
            return Err(Error::input(format!("invalid GPR step at t={}", step.time)));
        }
        if prev_end.is_none_or(|t| (t - step.start_time).abs() > TIME_EPS) {
            events.push((step.start_time, Event::GprAnchor));
        }
        events.push((step.time, Event::Gpr(i)));
        prev_end = Some(step.time);
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())));

    let t0 =
        events.first().map(|e| e.0).into_iter().chain(encoders.first().map(|e| e.time)).fold(f64::INFINITY, f64::min);

    let mut mean = StateVector::<T>::zeros();
    mean[0] = lit(cfg.initial_x);
    mean[1] = lit(cfg.initial_y);
    mean[IYAW] = lit(match imu.first() {
        Some(m) if cfg.yaw_from_imu => m.yaw,
        _ => cfg.initial_yaw,
    });
    if let Some(Some(o)) = odometry.first() {
        mean[IVX] = lit(o.forward_velocity);
        mean[IYAW_RATE] = lit(o.yaw_rate);
    }
    let mut state = EkfState::new(mean, diag(&cfg.initial_sigma, true), t0);
    let q: StateMatrix<T> = diag(&cfg.process_noise, false);

    let mut track = FilterTrack::default();
    track.emit(&state);
    let period = 1.0 / cfg.output_rate;
    let mut tick = 1u64;

    let mut last_imu_yaw: Option<f64> = None;
    let mut gpr_position = (0.0, 0.0);
    let mut wheel_position: Option<(f64, f64)> = None;
    let gpr_base = DMatrix::<T>::identity(2, 2) * lit::<T>(cfg.gpr_position_sigma * cfg.gpr_position_sigma);

    for &(time, event) in &events {
        loop {
            let t_tick = t0 + tick as f64 * period;
            if t_tick >= time - TIME_EPS {
                break;
            }
            if t_tick > state.time + TIME_EPS {
                state = predict(&state, t_tick - state.time, &q)?;
                track.emit(&state);
            }
            tick += 1;
        }
        if time > state.time + TIME_EPS {
            state = predict(&state, time - state.time, &q)?;
        }
        let heading = |state: &EkfState<T>, imu_yaw: Option<f64>| imu_yaw.unwrap_or_else(|| to_f64(state.yaw()));
        match event {
            Event::Wheel(i) => {
                let o = odometry[i - 1].expect("filtered above");
                match cfg.wheel_fusion {
                    WheelFusion::Velocity => {
                        let m = Measurement::with_sigmas(
                            time,
                            MeasurementKind::WheelOdom {
                                forward_velocity: lit(o.forward_velocity),
                                yaw_rate: lit(o.yaw_rate),
                            },
                            &sigmas(&[
                                cfg.encoder_velocity_sigma,
                                cfg.lateral_velocity_sigma,
                                cfg.encoder_yaw_rate_sigma,
                            ]),
                        );
                        state = update(&state, &m)?;
                    }
                    WheelFusion::Position => {
                        let prev = wheel_position.unwrap_or((to_f64(state.x()), to_f64(state.y())));
                        let travel = o.forward_velocity * (time - encoders[i - 1].time);
                        let (x, y) = gpr_to_position(travel, heading(&state, last_imu_yaw), prev);
                        wheel_position = Some((x, y));
                        let m = Measurement::with_sigmas(
                            time,
                            MeasurementKind::WheelPosition { x: lit(x), y: lit(y) },
                            &sigmas(&[cfg.encoder_position_sigma, cfg.encoder_position_sigma]),
                        );
                        state = update(&state, &m)?;
                    }
                }
            }
            Event::Imu(i) => {
                let s = imu[i];
                let accel = if cfg.imu_accel_sigma > 0.0 { cfg.imu_accel_sigma } else { f64::INFINITY };
                let m = Measurement::with_sigmas(
                    time,
                    MeasurementKind::Imu { yaw: lit(s.yaw), yaw_rate: lit(s.yaw_rate), ax: lit(s.ax), ay: lit(s.ay) },
                    &sigmas(&[cfg.imu_yaw_sigma, cfg.imu_yaw_rate_sigma, accel, accel]),
                );
                state = update(&state, &m)?;
                last_imu_yaw = Some(s.yaw);
            }
            Event::GprAnchor => {
                gpr_position = (to_f64(state.x()), to_f64(state.y()));
            }
            Event::Gpr(i) => {
                let step = gpr[i];
                gpr_position = gpr_to_position(step.displacement, heading(&state, last_imu_yaw), gpr_position);
                let covariance = inflate_gpr_covariance(
                    &gpr_base,
                    state.mean[IYAW_RATE],
                    lit(cfg.gpr_turn_threshold),
                    lit(cfg.gpr_turn_factor),
                );
                let m = Measurement {
                    time,
                    kind: MeasurementKind::GprPosition { x: lit(gpr_position.0), y: lit(gpr_position.1) },
                    covariance,
                };
                state = update(&state, &m)?;
            }
        }
        if !matches!(event, Event::GprAnchor) {
            track.emit(&state);
        }
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Stamp(f64);

    impl Timestamped for Stamp {
        fn time(&self) -> f64 {
            self.0
        }
    }

    #[test]
    fn reorder_buffer_resorts_small_delays_and_drops_stragglers() {
        let mut buf = ReorderBuffer::new(0.1);
        let mut out = Vec::new();
        for t in [0.0, 0.05, 0.03, 0.2, 0.15, 0.01, 0.4] {
            buf.push(Stamp(t));
            out.extend(buf.pop_ready().into_iter().map(|s| s.0));
        }
        assert_eq!(buf.dropped(), 1);
        out.extend(buf.finish().into_iter().map(|s| s.0));
        assert_eq!(out, vec![0.0, 0.03, 0.05, 0.15, 0.2, 0.4]);
    }

    fn straight_encoders(speed: f64, rate: f64, duration: f64, tpm: f64) -> Vec<EncoderSample> {
        let n = (duration * rate).round() as usize;
        (0..=n)
            .map(|i| {
                let t = i as f64 / rate;
                let ticks = (speed * t * tpm).round() as i64;
                EncoderSample::new(t, [ticks; 4])
            })
            .collect()
    }

    #[test]
    fn empty_log_is_rejected() {
        let err = run_filter::<f64>(&SensorLog::default(), &EkfConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn encoder_only_straight_line_matches_dead_reckoning() {
        let cfg = EkfConfig::default();
        let log = SensorLog { encoders: straight_encoders(0.1, 20.0, 60.0, cfg.ticks_per_meter), ..Default::default() };
        let track = run_filter::<f64>(&log, &cfg).unwrap();
        for p in &track.poses {
            assert!((p.x - 0.1 * p.time).abs() < 1e-6, "t={} x={}", p.time, p.x);
            assert!(p.y.abs() < 1e-9 && p.yaw.abs() < 1e-9);
        }
        let last = track.poses.last().unwrap();
        assert!((last.time - 60.0).abs() < 1e-9);
    }

    #[test]
    fn output_rate_is_met_between_sparse_updates() {
        let cfg = EkfConfig::default();
        let log = SensorLog { encoders: straight_encoders(0.2, 2.0, 10.0, cfg.ticks_per_meter), ..Default::default() };
        let track = run_filter::<f64>(&log, &cfg).unwrap();
        let gaps = track.poses.windows(2).map(|w| w[1].time - w[0].time);
        assert!(gaps.clone().all(|g| g > 0.0 && g <= 1.0 / 15.0 + 1e-9));
        assert!(track.poses.len() >= 150);
    }

    #[test]
    fn consistent_gpr_steps_change_nothing() {
        let cfg = EkfConfig::default();
        let encoders = straight_encoders(0.1, 20.0, 30.0, cfg.ticks_per_meter);
        let gpr: Vec<GprStep> = (0..40)
            .map(|i| {
                let (a, b) = (1.0 + 0.6 * i as f64, 1.6 + 0.6 * i as f64);
                GprStep { start_time: a, time: b, displacement: 0.1 * (b - a) }
            })
            .collect();
        let without = run_filter::<f64>(&SensorLog { encoders: encoders.clone(), ..Default::default() }, &cfg).unwrap();
        let with = run_filter::<f64>(&SensorLog { encoders, imu: vec![], gpr }, &cfg).unwrap();
        let a = without.trajectory();
        let b = with.trajectory();
        for p in b.poses() {
            let q = a.interpolate(p.time).unwrap();
            assert!((p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6, "t={}", p.time);
        }
    }

    #[test]
    fn gpr_channel_can_be_disabled() {
        let mut cfg = EkfConfig::default();
        let encoders = straight_encoders(0.1, 20.0, 5.0, cfg.ticks_per_meter);
        let gpr = vec![GprStep { start_time: 1.0, time: 2.0, displacement: 5.0 }];
        let log = SensorLog { encoders, imu: vec![], gpr };
        cfg.gpr_enabled = false;
        let off = run_filter::<f64>(&log, &cfg).unwrap();
        cfg.gpr_enabled = true;
        let on = run_filter::<f64>(&log, &cfg).unwrap();
        assert!(off.poses.last().unwrap().x < 0.51);
        assert!(on.poses.last().unwrap().x > 1.0);
    }

    #[test]
    fn replay_is_deterministic_and_position_mode_tracks() {
        let mut cfg = EkfConfig::default();
        let encoders = straight_encoders(0.15, 20.0, 20.0, cfg.ticks_per_meter);
        let imu: Vec<ImuSample> =
            (0..1000).map(|i| ImuSample { time: i as f64 * 0.02, yaw: 0.0, yaw_rate: 0.0, ax: 0.0, ay: 0.0 }).collect();
        let log = SensorLog { encoders, imu, gpr: vec![] };
        assert_eq!(run_filter::<f64>(&log, &cfg).unwrap(), run_filter::<f64>(&log, &cfg).unwrap());
        cfg.wheel_fusion = WheelFusion::Position;
        let track = run_filter::<f64>(&log, &cfg).unwrap();
        let last = track.poses.last().unwrap();
        assert!((last.x - 0.15 * last.time).abs() < 0.02, "{last:?}");
    }
}
