use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Pose;
use crate::fusion::{wrap_angle, EncoderSample, ImuSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Waypoint {
    pub fn new(t: f64, x: f64, y: f64, yaw: f64) -> Self {
        Self { t, x, y, yaw }
    }
}

/// Time interval with its own wheel slip ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlipSegment {
    pub start: f64,
    pub end: f64,
    pub ratio: f64,
}

/// Vehicle trajectory and sensor settings for one simulated drive.
///
/// Motion between waypoints is linear in position (constant speed per
/// segment) and shortest-arc linear in yaw. Travel is assumed forward along
/// the path, so the GPR antenna coordinate is the arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionProfile {
    /// GPR epoch rate (Hz), one stacked trace per epoch.
    pub gpr_rate: f64,
    /// Raw traces captured per epoch.
    pub stack_repeats: usize,
    /// Seconds between repeats within an epoch.
    pub stack_spacing: f64,
    /// Baseline slip ratio outside the explicit segments.
    pub slip_ratio: f64,
    pub encoder_ticks_per_meter: f64,
    pub wheel_separation: f64,
    pub wheel_radius: f64,
    pub encoder_rate: f64,
    pub imu_rate: f64,
    pub truth_rate: f64,
    pub imu_yaw_sigma: f64,
    pub imu_gyro_sigma: f64,
    pub imu_accel_sigma: f64,
    /// Half-width (s) of the second difference used to derive accelerations.
    pub accel_smoothing: f64,
    pub slip_segments: Vec<SlipSegment>,
    pub waypoints: Vec<Waypoint>,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            gpr_rate: 1.67,
            stack_repeats: 3,
            stack_spacing: 0.02,
            slip_ratio: 0.0,
            encoder_ticks_per_meter: 78_000.0,
            wheel_separation: 0.165,
            wheel_radius: 0.5455,
            encoder_rate: 20.0,
            imu_rate: 50.0,
            truth_rate: 20.0,
            imu_yaw_sigma: 0.01,
            imu_gyro_sigma: 0.005,
            imu_accel_sigma: 0.02,
            accel_smoothing: 0.2,
            slip_segments: Vec::new(),
            waypoints: Vec::new(),
        }
    }
}

impl MotionProfile {
    /// Straight drive along +x at constant speed.
    pub fn straight(speed: f64, duration: f64) -> Self {
        Self {
            waypoints: vec![Waypoint::new(0.0, 0.0, 0.0, 0.0), Waypoint::new(duration, speed * duration, 0.0, 0.0)],
            ..Self::default()
        }
    }

    /// Piecewise drive: segments of a few seconds with random speed in
    /// `speed_range` and an occasional gentle turn.
    pub fn random_drive<R: Rng>(rng: &mut R, duration: f64, speed_range: (f64, f64), turn_prob: f64) -> Self {
        let dt = 0.25;
        let (mut t, mut x, mut y, mut yaw) = (0.0, 0.0, 0.0, 0.0);
        let mut waypoints = vec![Waypoint::new(t, x, y, yaw)];
        while t < duration - 1e-9 {
            let seg = rng.random_range(10.0..30.0f64).min(duration - t);
            let speed = rng.random_range(speed_range.0..=speed_range.1);
            let yaw_rate = if rng.random_bool(turn_prob) {
                let mag = rng.random_range(0.05..0.25);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                0.0
            };
            let steps = (seg / dt).ceil().max(1.0) as usize;
            let h = seg / steps as f64;
            for _ in 0..steps {
                let mid = yaw + 0.5 * yaw_rate * h;
                x += speed * h * mid.cos();
                y += speed * h * mid.sin();
                yaw += yaw_rate * h;
                t += h;
                waypoints.push(Waypoint::new(t, x, y, wrap_angle(yaw)));
            }
        }
        Self { waypoints, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gpr_rate > 0.0) {
            return Err(Error::config("gpr_rate must be positive"));
        }
        for (name, v) in [
            ("encoder_rate", self.encoder_rate),
            ("imu_rate", self.imu_rate),
            ("truth_rate", self.truth_rate),
            ("encoder_ticks_per_meter", self.encoder_ticks_per_meter),
            ("wheel_separation", self.wheel_separation),
            ("accel_smoothing", self.accel_smoothing),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.stack_spacing < 0.0 || self.stack_repeats == 0 {
            return Err(Error::config("stack_repeats must be >= 1 and stack_spacing >= 0"));
        }
        let ratio_ok = |r: f64| (0.0..1.0).contains(&r);
        if !ratio_ok(self.slip_ratio) || !self.slip_segments.iter().all(|s| ratio_ok(s.ratio) && s.end > s.start) {
            return Err(Error::config("slip ratios must lie in [0, 1) over non-empty intervals"));
        }
        for s in [self.imu_yaw_sigma, self.imu_gyro_sigma, self.imu_accel_sigma] {
            if !(s >= 0.0) {
                return Err(Error::config("IMU noise levels must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Format(format!("motion: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("motion serializes")
    }

    /// Slip ratio in effect at time `t`.
    pub fn slip_at(&self, t: f64) -> f64 {
        self.slip_segments.iter().find(|s| t >= s.start && t < s.end).map_or(self.slip_ratio, |s| s.ratio)
    }

    /// Fraction of the path length driven under slip of at least `min_ratio`.
    pub fn slip_coverage(&self, min_ratio: f64) -> Result<f64> {
        let path = self.path()?;
        let steps = 2000;
        let (t0, t1) = (path.start_time(), path.end_time());
        let h = (t1 - t0) / steps as f64;
        let mut slipping = 0.0;
        for n in 0..steps {
            let (a, b) = (t0 + n as f64 * h, t0 + (n + 1) as f64 * h);
            if self.slip_at(0.5 * (a + b)) >= min_ratio {
                slipping += path.arc_length(b) - path.arc_length(a);
            }
        }
        Ok(slipping / path.total_length())
    }

    pub(crate) fn path(&self) -> Result<Path> {
        self.validate()?;
        Path::new(&self.waypoints)
    }

    /// Encoder counters at `encoder_rate`, overcounting by `1 / (1 - slip)`.
    pub(crate) fn encoder_stream(&self, path: &Path) -> Vec<EncoderSample> {
        let half_w = 0.5 * self.wheel_separation;
        let theta0 = path.yaw_unwrapped(path.start_time());
        let wheels = |t: f64| {
            let s = path.arc_length(t);
            let turn = half_w * (path.yaw_unwrapped(t) - theta0);
            (s - turn, s + turn)
        };
        let times = sample_times(path.start_time(), path.end_time(), self.encoder_rate);
        let (mut rep_l, mut rep_r) = (0.0, 0.0);
        let mut prev = wheels(times[0]);
        let mut out = Vec::with_capacity(times.len());
        for (n, &t) in times.iter().enumerate() {
            if n > 0 {
                let cur = wheels(t);
                let over = 1.0 / (1.0 - self.slip_at(0.5 * (t + times[n - 1])));
                rep_l += (cur.0 - prev.0) * over;
                rep_r += (cur.1 - prev.1) * over;
                prev = cur;
            }
            let l = (rep_l * self.encoder_ticks_per_meter).round() as i64;
            let r = (rep_r * self.encoder_ticks_per_meter).round() as i64;
            out.push(EncoderSample::new(t, [l, r, l, r]));
        }
        out
    }

    /// Yaw, gyro and kinematic (centripetal-free) body accelerations.
    pub(crate) fn imu_stream<R: Rng>(&self, path: &Path, rng: &mut R) -> Vec<ImuSample> {
        let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("valid sigma");
        let (n_yaw, n_gyro, n_acc) =
            (gauss(self.imu_yaw_sigma), gauss(self.imu_gyro_sigma), gauss(self.imu_accel_sigma));
        let h = self.accel_smoothing;
        sample_times(path.start_time(), path.end_time(), self.imu_rate)
            .into_iter()
            .map(|t| {
                let s = |u: f64| path.arc_length_extrapolated(u);
                let along = (s(t + h) - 2.0 * s(t) + s(t - h)) / (h * h);
                ImuSample {
                    time: t,
                    yaw: wrap_angle(path.yaw_unwrapped(t) + n_yaw.sample(rng)),
                    yaw_rate: path.yaw_rate(t) + n_gyro.sample(rng),
                    ax: along + n_acc.sample(rng),
                    ay: n_acc.sample(rng),
                }
            })
            .collect()
    }
}

/// `t0, t0 + 1/rate, ...` up to and including `t1` (within rounding).
pub(crate) fn sample_times(t0: f64, t1: f64, rate: f64) -> Vec<f64> {
    let n = ((t1 - t0) * rate + 1e-9).floor() as usize;
    (0..=n).map(|k| t0 + k as f64 / rate).collect()
}

/// Piecewise-linear path through the waypoints.
#[derive(Clone, Debug)]
pub(crate) struct Path {
    times: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    yaws: Vec<f64>,
    arc: Vec<f64>,
}

impl Path {
    fn new(waypoints: &[Waypoint]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::config("motion needs at least two waypoints"));
        }
        if waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::config("waypoint times must strictly increase"));
        }
        let mut yaws = vec![waypoints[0].yaw];
        let mut arc = vec![0.0];
        for w in waypoints.windows(2) {
            let last = *yaws.last().expect("non-empty");
            yaws.push(last + wrap_angle(w[1].yaw - w[0].yaw));
            let seg = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            arc.push(arc.last().expect("non-empty") + seg);
        }
        if !(*arc.last().expect("non-empty") > 0.0) {
            return Err(Error::config("degenerate motion: path has zero length"));
        }
        Ok(Self {
            times: waypoints.iter().map(|w| w.t).collect(),
            xs: waypoints.iter().map(|w| w.x).collect(),
            ys: waypoints.iter().map(|w| w.y).collect(),
            yaws,
            arc,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().expect("non-empty")
    }

    /// Segment index and interpolation fraction; clamps outside the time range.
    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 2;
        let idx = match self.times.binary_search_by(|v| v.partial_cmp(&t).expect("finite time")) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        };
        let (a, b) = (self.times[idx], self.times[idx + 1]);
        (idx, ((t - a) / (b - a)).clamp(0.0, 1.0))
    }

    fn lerp(v: &[f64], idx: usize, f: f64) -> f64 {
        v[idx] + f * (v[idx + 1] - v[idx])
    }

    pub fn arc_length(&self, t: f64) -> f64 {
        let (i, f) = self.locate(t);
        Self::lerp(&self.arc, i, f)
    }

    fn segment_speed(&self, i: usize) -> f64 {
        (self.arc[i + 1] - self.arc[i]) / (self.times[i + 1] - self.times[i])
    }

    /// Arc length continued at the end-segment speeds outside the time range.
    pub fn arc_length_extrapolated(&self, t: f64) -> f64 {
        if t < self.start_time() {
            self.segment_speed(0) * (t - self.start_time())
        } else if t > self.end_time() {
            let last = self.times.len() - 2;
            self.total_length() + self.segment_speed(last) * (t - self.end_time())
        } else {
            self.arc_length(t)
        }
    }

    pub fn yaw_unwrapped(&self, t: f64) -> f64 {
        let (i, f) = self.locate(t);
        Self::lerp(&self.yaws, i, f)
    }

    pub fn yaw_rate(&self, t: f64) -> f64 {
        let (i, _) = self.locate(t);
        (self.yaws[i + 1] - self.yaws[i]) / (self.times[i + 1] - self.times[i])
    }

    pub fn pose(&self, t: f64) -> Pose {
        let (i, f) = self.locate(t);
        Pose {
            time: t,
            x: Self::lerp(&self.xs, i, f),
            y: Self::lerp(&self.ys, i, f),
            yaw: wrap_angle(Self::lerp(&self.yaws, i, f)),
        }
    }

    pub fn sample_poses(&self, rate: f64) -> Vec<Pose> {
        sample_times(self.start_time(), self.end_time(), rate).into_iter().map(|t| self.pose(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder_distance(samples: &[EncoderSample], tpm: f64) -> f64 {
        let (a, b) = (samples.first().unwrap(), samples.last().unwrap());
        let d = |s: &EncoderSample| (s.ticks.iter().sum::<i64>()) as f64 / 4.0;
        (d(b) - d(a)) / tpm
    }

    #[test]
    fn encoder_distance_without_slip_matches_truth() {
        let m = MotionProfile::straight(0.2, 50.0);
        let path = m.path().unwrap();
        let enc = m.encoder_stream(&path);
        let dist = encoder_distance(&enc, m.encoder_ticks_per_meter);
        assert!((dist - 10.0).abs() <= 1.0 / m.encoder_ticks_per_meter);
        assert!((dist - 10.0).abs() < 1e-9);
    }

    #[test]
    fn slip_overcounts_by_inverse_complement() {
        let m = MotionProfile { slip_ratio: 0.2, ..MotionProfile::straight(0.2, 50.0) };
        let enc = m.encoder_stream(&m.path().unwrap());
        let dist = encoder_distance(&enc, m.encoder_ticks_per_meter);
        assert!((dist - 1.25 * 10.0).abs() < 1e-4, "{dist}");
    }

    #[test]
    fn encoder_quantization_per_interval_is_at_most_one_tick() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = MotionProfile::random_drive(&mut rng, 60.0, (0.05, 0.3), 0.4);
        let path = m.path().unwrap();
        let enc = m.encoder_stream(&path);
        let theta0 = path.yaw_unwrapped(path.start_time());
        for w in enc.windows(2) {
            let left_true = |t: f64| path.arc_length(t) - 0.5 * m.wheel_separation * (path.yaw_unwrapped(t) - theta0);
            let true_ticks = (left_true(w[1].time) - left_true(w[0].time)) * m.encoder_ticks_per_meter;
            let got = (w[1].ticks[0] - w[0].ticks[0]) as f64;
            assert!((got - true_ticks).abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn slip_segments_override_baseline() {
        let m = MotionProfile {
            slip_ratio: 0.05,
            slip_segments: vec![SlipSegment { start: 10.0, end: 20.0, ratio: 0.3 }],
            ..MotionProfile::straight(0.1, 40.0)
        };
        assert_eq!(m.slip_at(5.0), 0.05);
        assert_eq!(m.slip_at(15.0), 0.3);
        assert!((m.slip_coverage(0.15).unwrap() - 0.25).abs() < 1e-3);
    }

    #[test]
    fn imu_on_straight_constant_speed_path() {
        let m = MotionProfile {
            imu_yaw_sigma: 0.0,
            imu_gyro_sigma: 0.0,
            imu_accel_sigma: 0.0,
            ..MotionProfile::straight(0.3, 10.0)
        };
        let imu = m.imu_stream(&m.path().unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(imu.len(), 501);
        for s in imu {
            assert_eq!(s.yaw, 0.0);
            assert_eq!(s.yaw_rate, 0.0);
            assert!(s.ax.abs() < 1e-9 && s.ay == 0.0);
        }
    }

    #[test]
    fn acceleration_integrates_to_speed_change() {
        let m = MotionProfile {
            imu_accel_sigma: 0.0,
            waypoints: vec![
                Waypoint::new(0.0, 0.0, 0.0, 0.0),
                Waypoint::new(10.0, 1.0, 0.0, 0.0),
                Waypoint::new(20.0, 4.0, 0.0, 0.0),
            ],
            ..MotionProfile::default()
        };
        let imu = m.imu_stream(&m.path().unwrap(), &mut ChaCha8Rng::seed_from_u64(0));
        let dv: f64 = imu.iter().map(|s| s.ax / m.imu_rate).sum();
        assert!((dv - 0.2).abs() < 1e-6, "{dv}");
    }

    #[test]
    fn random_drive_is_valid_and_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = MotionProfile::random_drive(&mut rng, 90.0, (0.05, 0.3), 0.5);
        let path = m.path().unwrap();
        assert!((path.end_time() - 90.0).abs() < 1e-6);
        let speeds: Vec<f64> = (0..m.waypoints.len() - 1).map(|i| path.segment_speed(i)).collect();
        assert!(speeds.iter().all(|&v| (0.05 - 1e-9..=0.3 + 1e-9).contains(&v)));
        let text = m.to_toml_string();
        assert_eq!(MotionProfile::from_toml_str(&text).unwrap(), m);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let mut m = MotionProfile::straight(0.1, 10.0);
        m.gpr_rate = 0.0;
        assert!(m.path().is_err());
        let mut m = MotionProfile::straight(0.1, 10.0);
        m.waypoints[1].t = 0.0;
        assert!(m.path().is_err());
        let mut m = MotionProfile::straight(0.1, 10.0);
        m.slip_ratio = 1.0;
        assert!(m.path().is_err());
    }
}
