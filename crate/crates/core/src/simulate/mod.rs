//! Synthetic radargrams and companion sensor streams.
//!
//! The world is a vertical cross-section along the driven track: point
//! scatterers sit at an along-track coordinate and a depth, and the antenna
//! position is the arc length travelled so far. Each trace superposes a
//! direct-wave band, one Ricker pulse per scatterer at its two-way travel
//! time, a low-order "wow" drift and white noise.

mod motion;

pub use motion::{MotionProfile, SlipSegment, Waypoint};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Pose;
use crate::fusion::{EncoderSample, ImuSample};
use crate::signal::Trace;

/// Speed of light in vacuum, metres per nanosecond.
pub const SPEED_OF_LIGHT: f64 = 0.299792458;
/// Floor on the range used for geometric spreading.
pub const MIN_SPREADING_RANGE: f64 = 0.05;
pub const DEFAULT_TRACE_LEN: usize = 200;

/// Fresnel amplitude reflection coefficient between two media.
pub fn reflection_coeff(kappa1: f64, kappa2: f64) -> f64 {
    let (a, b) = (kappa1.sqrt(), kappa2.sqrt());
    (a - b) / (a + b)
}

/// Ricker wavelet with peak frequency `freq_ghz`, evaluated at `tau_ns` from its centre.
pub fn ricker(tau_ns: f64, freq_ghz: f64) -> f64 {
    let arg = (PI * freq_ghz * tau_ns).powi(2);
    (1.0 - 2.0 * arg) * (-arg).exp()
}

/// Sample interval giving `len` samples over `depth_m` of two-way travel in a medium of `kappa`.
pub fn sample_dt_for_depth(depth_m: f64, kappa: f64, len: usize) -> f64 {
    2.0 * depth_m * kappa.sqrt() / SPEED_OF_LIGHT / len as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    /// Along-track position (m).
    pub x: f64,
    /// Depth below the antenna (m).
    pub depth: f64,
    /// Relative permittivity of the inclusion.
    pub permittivity: f64,
    /// Host permittivity seen by this scatterer; the scene's value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permittivity_host: Option<f64>,
}

/// Declarative synthetic subsurface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterScene {
    pub host_permittivity: f64,
    /// Peak amplitude of the direct (surface) wave, mV.
    pub direct_wave_amplitude: f64,
    /// Arrival time of the direct wave, ns.
    pub direct_wave_time: f64,
    /// Reflection amplitude scale, mV at 1 m range for |R| = 1.
    pub reflection_gain: f64,
    /// Cubic drift `c0 + c1 i + c2 i^2 + c3 i^3`, mV.
    pub wow_coefficients: [f64; 4],
    /// Standard deviation of additive white noise per raw trace, mV.
    pub noise_sigma: f64,
    /// Probability that a raw trace carries a saturated spike.
    pub anomaly_rate: f64,
    pub center_frequency_ghz: f64,
    pub sample_dt: f64,
    pub trace_len: usize,
    pub scatterers: Vec<Scatterer>,
}

impl Default for ScatterScene {
    fn default() -> Self {
        Self {
            host_permittivity: 4.0,
            direct_wave_amplitude: 20.0,
            direct_wave_time: 2.0,
            reflection_gain: 8.0,
            wow_coefficients: [0.0; 4],
            noise_sigma: 0.0,
            anomaly_rate: 0.0,
            center_frequency_ghz: 0.5,
            sample_dt: sample_dt_for_depth(2.0, 4.0, DEFAULT_TRACE_LEN),
            trace_len: DEFAULT_TRACE_LEN,
            scatterers: Vec::new(),
        }
    }
}

impl ScatterScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.host_permittivity >= 1.0) {
            return Err(Error::config("host_permittivity must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::config("anomaly_rate must lie in [0, 1]"));
        }
        if !(self.sample_dt > 0.0) || self.trace_len == 0 {
            return Err(Error::config("sample_dt and trace_len must be positive"));
        }
        for (n, s) in self.scatterers.iter().enumerate() {
            let host_ok = s.permittivity_host.is_none_or(|k| k >= 1.0);
            if !(s.depth > 0.0) || !(s.permittivity >= 1.0) || !host_ok {
                return Err(Error::config(format!("scatterer {n}: depth must be > 0 and permittivities >= 1")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scene: Self = toml::from_str(text).map_err(|e| Error::Format(format!("scene: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Random scene covering `[start, end]` along track with the given mean
    /// scatterer spacing.
    pub fn random<R: Rng>(rng: &mut R, start: f64, end: f64, mean_spacing: f64) -> Self {
        let host = rng.random_range(3.5..5.0);
        let mut scatterers = Vec::new();
        let mut x = start;
        loop {
            x += mean_spacing * rng.random_range(0.3..1.7);
            if x > end {
                break;
            }
            let permittivity =
                if rng.random_bool(0.3) { rng.random_range(1.0..2.0) } else { rng.random_range(7.0..16.0) };
            scatterers.push(Scatterer { x, depth: rng.random_range(0.3..1.8), permittivity, permittivity_host: None });
        }
        Self {
            host_permittivity: host,
            wow_coefficients: [
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.02..0.02),
                rng.random_range(-1e-4..1e-4),
                rng.random_range(-3e-7..3e-7),
            ],
            noise_sigma: 0.3,
            scatterers,
            ..Self::default()
        }
    }
}

/// Noise-free response at along-track position `antenna_x`.
pub fn clean_response(scene: &ScatterScene, antenna_x: f64, sample_dt: f64, len: usize) -> Vec<f64> {
    let f = scene.center_frequency_ghz;
    let mut out = vec![0.0; len];
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 * sample_dt;
        let x = i as f64;
        let [c0, c1, c2, c3] = scene.wow_coefficients;
        *v = scene.direct_wave_amplitude * ricker(t - scene.direct_wave_time, f) + c0 + x * (c1 + x * (c2 + x * c3));
    }
    for s in &scene.scatterers {
        let host = s.permittivity_host.unwrap_or(scene.host_permittivity);
        let range = (s.depth * s.depth + (antenna_x - s.x).powi(2)).sqrt();
        let tau = 2.0 * range * host.sqrt() / SPEED_OF_LIGHT;
        let amp = scene.reflection_gain * reflection_coeff(host, s.permittivity) / range.max(MIN_SPREADING_RANGE);
        // The pulse is negligible beyond a few periods from its centre.
        let reach = 3.0 / f;
        let lo = ((tau - reach) / sample_dt).floor().max(0.0) as usize;
        let hi = (((tau + reach) / sample_dt).ceil() as usize).min(len.saturating_sub(1));
        for (i, v) in out.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *v += amp * ricker(i as f64 * sample_dt - tau, f);
        }
    }
    out
}

/// Trace at `antenna_x` with the scene's white noise drawn from `rng`.
pub fn trace_response<R: Rng>(
    scene: &ScatterScene,
    antenna_x: f64,
    sample_dt: f64,
    len: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut samples = clean_response(scene, antenna_x, sample_dt, len);
    if scene.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, scene.noise_sigma).expect("valid sigma");
        for v in samples.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    samples
}

/// Index of the strongest absolute sample at or after `from`.
pub fn peak_index(samples: &[f64], from: usize) -> usize {
    samples
        .iter()
        .enumerate()
        .skip(from)
        .fold((from, f64::NEG_INFINITY), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
        .0
}

/// Everything produced for one simulated drive.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSequence {
    /// Raw (unstacked) traces in capture order.
    pub traces: Vec<Trace<f64>>,
    /// Capture time of each stacked GPR epoch (mean of its repeats).
    pub epoch_times: Vec<f64>,
    /// Path length travelled between consecutive epochs.
    pub truth_displacements: Vec<f64>,
    pub encoders: Vec<EncoderSample>,
    pub imu: Vec<ImuSample>,
    pub truth: Vec<Pose>,
}

impl SimSequence {
    pub fn total_truth_distance(&self) -> f64 {
        self.truth_displacements.iter().sum()
    }
}

const STREAM_GPR: u64 = 1;
const STREAM_IMU: u64 = 2;
const STREAM_ANOMALY: u64 = 3;
const SATURATED_SPIKE_MV: f64 = 80.0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Renders a full drive. Deterministic in `(scene, motion, seed)`.
pub fn generate_sequence(scene: &ScatterScene, motion: &MotionProfile, seed: u64) -> Result<SimSequence> {
    scene.validate()?;
    let path = motion.path()?;
    let (t0, t1) = (path.start_time(), path.end_time());

    let mut gpr_rng = stream(seed, STREAM_GPR);
    let mut anomaly_rng = stream(seed, STREAM_ANOMALY);
    let repeats = motion.stack_repeats.max(1);
    let span = (repeats - 1) as f64 * motion.stack_spacing;
    let epoch_dt = 1.0 / motion.gpr_rate;
    let mut traces = Vec::new();
    let mut epoch_times = Vec::new();
    let mut n = 0usize;
    loop {
        let start = t0 + n as f64 * epoch_dt;
        if start + span > t1 + 1e-9 {
            break;
        }
        let mut time_sum = 0.0;
        for r in 0..repeats {
            let t = start + r as f64 * motion.stack_spacing;
            time_sum += t;
            let s = path.arc_length(t);
            let mut samples = trace_response(scene, s, scene.sample_dt, scene.trace_len, &mut gpr_rng);
            if scene.anomaly_rate > 0.0 && anomaly_rng.random_bool(scene.anomaly_rate) {
                let at = anomaly_rng.random_range(0..scene.trace_len);
                samples[at] = SATURATED_SPIKE_MV;
            }
            traces.push(Trace::new(samples, t));
        }
        epoch_times.push(time_sum / repeats as f64);
        n += 1;
    }
    let truth_displacements = epoch_times.windows(2).map(|w| path.arc_length(w[1]) - path.arc_length(w[0])).collect();

    let encoders = motion.encoder_stream(&path);
    let imu = motion.imu_stream(&path, &mut stream(seed, STREAM_IMU));
    let truth = path.sample_poses(motion.truth_rate);

    Ok(SimSequence { traces, epoch_times, truth_displacements, encoders, imu, truth })
}
