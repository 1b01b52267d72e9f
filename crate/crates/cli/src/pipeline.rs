//! Turning a [`Sequence`] into model windows, reference step displacements,
//! baselines and filter inputs.

use gprloc_core::eval::{overlap_add, Pose, WindowPrediction};
use gprloc_core::fusion::{GprStep, SensorLog};
use gprloc_core::model::{build_windows, filtered_window, window_starts, WindowSet};
use gprloc_core::signal::{condition_stream, FilterConfig};
use gprloc_core::simulate::{generate_sequence, MotionProfile, ScatterScene, SlipSegment};
use gprloc_core::Trace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SimulationPlan;
use crate::dataset::{Manifest, Sequence};
use crate::error::{CliError, CliResult, Context};

/// Screened and stacked traces: one per GPR epoch.
pub fn stacked_traces(seq: &Sequence, filter: &FilterConfig) -> CliResult<Vec<Trace>> {
    if filter.stack_size != seq.manifest.rates.stack_repeats {
        log::warn!(
            "{}: stacking {} traces per epoch but the manifest records {} repeats",
            seq.name,
            filter.stack_size,
            seq.manifest.rates.stack_repeats
        );
    }
    condition_stream(seq.gpr.clone(), filter).at(&seq.name)
}

/// Piecewise-linear function through `(t, v)` knots, clamped at the ends.
fn interpolate(knots: &[(f64, f64)], t: f64) -> f64 {
    let i = knots.partition_point(|k| k.0 <= t);
    if i == 0 {
        return knots[0].1;
    }
    if i == knots.len() {
        return knots[i - 1].1;
    }
    let (a, b) = (knots[i - 1], knots[i]);
    if b.0 <= a.0 {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

fn differences(knots: &[(f64, f64)], times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| interpolate(knots, w[1]) - interpolate(knots, w[0])).collect()
}

/// Path length travelled between consecutive `times`, from linearly
/// interpolated reference positions.
pub fn truth_steps(truth: &[Pose], times: &[f64]) -> CliResult<Vec<f64>> {
    if truth.len() < 2 {
        return Err(CliError::Input("reference trajectory needs at least two poses".into()));
    }
    let (t0, t1) = (truth[0].time, truth[truth.len() - 1].time);
    if let Some(t) = times.iter().find(|t| **t < t0 - 1e-9 || **t > t1 + 1e-9) {
        return Err(CliError::Input(format!("GPR time {t} lies outside the reference span [{t0}, {t1}]")));
    }
    let mut s = 0.0;
    let mut knots = Vec::with_capacity(truth.len());
    for (i, p) in truth.iter().enumerate() {
        if i > 0 {
            s += (p.x - truth[i - 1].x).hypot(p.y - truth[i - 1].y);
        }
        knots.push((p.time, s));
    }
    Ok(differences(&knots, times))
}

/// Wheel-encoder dead-reckoned travel between consecutive `times` (mean of
/// the four wheels).
pub fn encoder_steps(seq: &Sequence, times: &[f64]) -> CliResult<Vec<f64>> {
    if seq.encoders.len() < 2 {
        return Err(CliError::Input(format!("{}: encoder log needs at least two samples", seq.name)));
    }
    let tpm = seq.manifest.wheels.ticks_per_meter;
    let knots: Vec<(f64, f64)> =
        seq.encoders.iter().map(|e| (e.time, e.ticks.iter().map(|&t| t as f64).sum::<f64>() / (4.0 * tpm))).collect();
    Ok(differences(&knots, times))
}

/// Windows with reference labels for one sequence.
pub fn sequence_windows(seq: &Sequence, filter: &FilterConfig, k: usize, stride: usize) -> CliResult<WindowSet> {
    let traces = stacked_traces(seq, filter)?;
    let times: Vec<f64> = traces.iter().map(|t| t.timestamp).collect();
    let step_truth = truth_steps(&seq.truth, &times).at(&seq.name)?;
    let windows = build_windows(&traces, &step_truth, k, stride, filter).at(&seq.name)?;
    Ok(WindowSet { name: seq.name.clone(), windows, step_truth })
}

/// Unlabelled inference inputs: `(start, flattened window)`.
pub fn inference_inputs(
    traces: &[Trace],
    filter: &FilterConfig,
    k: usize,
    stride: usize,
) -> CliResult<Vec<(usize, Vec<f64>)>> {
    if traces.len() < k {
        return Err(CliError::Input(format!(
            "sequence has {} stacked traces; at least k = {k} are needed for one prediction",
            traces.len()
        )));
    }
    if stride == 0 {
        return Err(CliError::Config("stride must be at least 1".into()));
    }
    window_starts(traces.len(), k, stride)
        .into_iter()
        .map(|s| Ok((s, filtered_window(traces, s, k, filter)?)))
        .collect()
}

/// Per-step estimates from window predictions; `None` where uncovered.
pub fn per_step(preds: &[WindowPrediction], n_steps: usize) -> CliResult<Vec<Option<f64>>> {
    Ok(overlap_add(preds, n_steps)?)
}

/// One GPR displacement measurement per covered step.
pub fn gpr_steps(times: &[f64], steps: &[Option<f64>]) -> Vec<GprStep> {
    steps
        .iter()
        .enumerate()
        .filter_map(|(j, d)| d.map(|displacement| GprStep { start_time: times[j], time: times[j + 1], displacement }))
        .collect()
}

pub fn sensor_log(seq: &Sequence, gpr: Vec<GprStep>) -> SensorLog {
    SensorLog { encoders: seq.encoders.clone(), imu: seq.imu.clone(), gpr }
}

/// Random scene and drive drawn from `plan`, deterministic in `seed`.
pub fn random_drive(plan: &SimulationPlan, seed: u64) -> (ScatterScene, MotionProfile) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut motion =
        MotionProfile::random_drive(&mut rng, plan.duration, (plan.speed_min, plan.speed_max), plan.turn_probability);
    motion.slip_ratio = plan.slip_ratio;
    let reach = plan.duration * plan.speed_max + 2.0;
    let scene = ScatterScene::random(&mut rng, -2.0, reach, plan.scatterer_spacing);
    (scene, motion)
}

/// Adds slip segments of `ratio` covering at least `coverage` of the drive's duration.
pub fn with_slip_bursts(mut motion: MotionProfile, ratio: f64, coverage: f64, bursts: usize) -> MotionProfile {
    let (t0, t1) = match (motion.waypoints.first(), motion.waypoints.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return motion,
    };
    let period = (t1 - t0) / bursts.max(1) as f64;
    for b in 0..bursts.max(1) {
        let start = t0 + b as f64 * period + 0.1 * period;
        motion.slip_segments.push(SlipSegment { start, end: start + coverage * period, ratio });
    }
    motion
}

pub fn simulate_sequence(
    name: impl Into<String>,
    scene: &ScatterScene,
    motion: &MotionProfile,
    seed: u64,
) -> CliResult<Sequence> {
    let sim = generate_sequence(scene, motion, seed)?;
    Ok(Sequence::from_simulation(name, sim, Manifest::simulated(scene, motion, seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_clamps_and_is_linear() {
        let k = [(0.0, 0.0), (1.0, 2.0), (3.0, 2.0)];
        assert_eq!(interpolate(&k, -1.0), 0.0);
        assert_eq!(interpolate(&k, 0.25), 0.5);
        assert_eq!(interpolate(&k, 2.0), 2.0);
        assert_eq!(interpolate(&k, 9.0), 2.0);
    }

    #[test]
    fn constant_speed_labels_are_equal() {
        let seq = simulate_sequence("s", &ScatterScene::default(), &MotionProfile::straight(0.12, 30.0), 1).unwrap();
        let set = sequence_windows(&seq, &FilterConfig::default(), 10, 1).unwrap();
        let first = set.windows[0].label;
        assert!(set.windows.iter().all(|w| (w.label - first).abs() < 1e-9));
    }

    #[test]
    fn slip_inflates_encoder_travel() {
        let mut motion = MotionProfile::straight(0.1, 40.0);
        motion.slip_ratio = 0.2;
        let seq = simulate_sequence("s", &ScatterScene::default(), &motion, 2).unwrap();
        let traces = stacked_traces(&seq, &FilterConfig::default()).unwrap();
        let times: Vec<f64> = traces.iter().map(|t| t.timestamp).collect();
        let enc: f64 = encoder_steps(&seq, &times).unwrap().iter().sum();
        let truth: f64 = truth_steps(&seq.truth, &times).unwrap().iter().sum();
        assert!((enc / truth - 1.25).abs() < 1e-3, "{}", enc / truth);
    }

    #[test]
    fn short_sequences_report_the_minimum() {
        let seq = simulate_sequence("s", &ScatterScene::default(), &MotionProfile::straight(0.1, 3.0), 1).unwrap();
        let traces = stacked_traces(&seq, &FilterConfig::default()).unwrap();
        let e = inference_inputs(&traces, &FilterConfig::default(), 10, 1).unwrap_err();
        assert!(e.message().contains("k = 10"), "{e}");
    }
}
