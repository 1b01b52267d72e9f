use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use gprloc_core::eval::svg::{self, Panel, Series};
use gprloc_core::eval::{compare_report, Report, SequenceReport, Trajectory, WindowPrediction};
use gprloc_core::fusion::{run_filter, EkfConfig, FilterTrack};
use gprloc_core::model::{
    ablation_sweep, read_checkpoint, train, write_checkpoint, AblationAxis, AblationData, AblationRow, DataRequest,
    LabeledWindow, ModelParams, TrainOutcome, WindowSet,
};
use gprloc_core::signal::{filter_pipeline, FilterConfig};
use gprloc_core::BScan;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::dataset::{self, poses_csv, read_sequence, write_sequence, Sequence};
use crate::error::{CliError, CliResult, Context};
use crate::pipeline::{self, gpr_steps, per_step, sensor_log, stacked_traces, truth_steps};

pub const CHECKPOINT_FILE: &str = "model.gprf";
pub const LOSS_FILE: &str = "loss.csv";

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes one or more simulated sequences. With `count > 1` they go to
/// `out/seq_000`, `out/seq_001`, ... with seeds `seed`, `seed + 1`, ...
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, count: usize) -> CliResult<Vec<PathBuf>> {
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let scene = cfg.scene()?;
    let motion = cfg.motion()?;
    let mut dirs = Vec::with_capacity(count);
    for i in 0..count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let (rand_scene, rand_motion) = pipeline::random_drive(&cfg.simulation, seed);
        let scene = scene.clone().unwrap_or(rand_scene);
        let motion = motion.clone().unwrap_or(rand_motion);
        let dir = if count == 1 { out.to_path_buf() } else { out.join(format!("seq_{i:03}")) };
        let name = dir.file_name().map_or_else(|| format!("seq_{i:03}"), |n| n.to_string_lossy().into_owned());
        let seq = pipeline::simulate_sequence(name, &scene, &motion, seed)?;
        write_sequence(&dir, &seq)?;
        log::info!("wrote {} ({} raw traces, seed {seed})", dir.display(), seq.gpr.len());
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Conditions a whole sequence as one B-scan: `timestamp,s0,...` rows.
pub fn cmd_filter(cfg: &ExperimentConfig, seq_dir: &Path, out: &Path) -> CliResult<usize> {
    let seq = read_sequence(seq_dir)?;
    cfg.filter.validate(seq.manifest.trace_len)?;
    let traces = stacked_traces(&seq, &cfg.filter)?;
    let b = filter_pipeline(&BScan::new(traces)?, &cfg.filter)?;
    let mut text = String::from("timestamp");
    for i in 0..b.depth() {
        let _ = write!(text, ",s{i}");
    }
    text.push('\n');
    for tr in b.traces() {
        let _ = write!(text, "{}", tr.timestamp);
        for v in &tr.samples {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    write(out, &text)?;
    Ok(b.width())
}

fn read_all(dirs: &[PathBuf]) -> CliResult<Vec<Sequence>> {
    dirs.iter().map(|d| read_sequence(d)).collect()
}

fn windows_of(cfg: &ExperimentConfig, seqs: &[Sequence], filter: &FilterConfig, k: usize) -> CliResult<Vec<WindowSet>> {
    seqs.iter().map(|s| pipeline::sequence_windows(s, filter, k, cfg.stride)).collect()
}

fn flatten(sets: &[WindowSet]) -> Vec<LabeledWindow> {
    sets.iter().flat_map(|s| s.windows.iter().cloned()).collect()
}

pub fn loss_csv(outcome: &TrainOutcome<f64>) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,alpha\n");
    for e in &outcome.history {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_mse, e.val_mse, e.alpha);
    }
    out
}

/// Trains on the given sequences; writes `model.gprf` and `loss.csv` to `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    train_dirs: &[PathBuf],
    val_dirs: &[PathBuf],
    out: &Path,
) -> CliResult<TrainOutcome<f64>> {
    if train_dirs.is_empty() || val_dirs.is_empty() {
        return Err(CliError::Input("training needs at least one train and one validation sequence".into()));
    }
    let k = cfg.model.window_k;
    let train_sets = windows_of(cfg, &read_all(train_dirs)?, &cfg.filter, k)?;
    let val_sets = windows_of(cfg, &read_all(val_dirs)?, &cfg.filter, k)?;
    let (train_w, val_w) = (flatten(&train_sets), flatten(&val_sets));
    if train_w.is_empty() || val_w.is_empty() {
        return Err(CliError::Input("no windows could be built from the given sequences".into()));
    }
    log::info!("training on {} windows, validating on {}", train_w.len(), val_w.len());
    let outcome = train::<f64>(&train_w, &val_w, &cfg.model, &cfg.train)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let file = fs::File::create(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    write_checkpoint(&outcome.params, BufWriter::new(file)).at(ckpt.display())?;
    write(&out.join(LOSS_FILE), &loss_csv(&outcome))?;
    Ok(outcome)
}

/// Arithmetic precision used for inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(CliError::Config(format!("unknown precision '{s}' (f32, f64)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InferTiming {
    pub windows: usize,
    pub precision: String,
    pub mean_forward_ms: f64,
    pub max_forward_ms: f64,
}

#[derive(Clone, Debug)]
pub struct InferOutcome {
    pub predictions: Vec<WindowPrediction>,
    pub timing: InferTiming,
}

pub fn load_checkpoint(path: &Path) -> CliResult<ModelParams<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file)).at(path.display())
}

pub fn predictions_csv(preds: &[WindowPrediction]) -> String {
    let mut out = String::from("start_index,span,value\n");
    for p in preds {
        let _ = writeln!(out, "{},{},{}", p.start, p.span, p.value);
    }
    out
}

pub fn read_predictions(path: &Path) -> CliResult<Vec<WindowPrediction>> {
    let names = ["start_index", "span", "value"];
    let rows = dataset::read_table(path, &|i| names.get(i).map(|s| s.to_string()))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r[0] < 0.0 || r[0].fract() != 0.0 || r[1] < 1.0 || r[1].fract() != 0.0 {
                return Err(CliError::Input(format!(
                    "{} line {}: start_index and span must be integers",
                    path.display(),
                    i + 2
                )));
            }
            Ok(WindowPrediction { start: r[0] as usize, span: r[1] as usize, value: r[2] })
        })
        .collect()
}

/// Slides the model's window over a sequence, timing every forward pass on
/// the calling thread.
pub fn cmd_infer(
    cfg: &ExperimentConfig,
    seq_dir: &Path,
    checkpoint: &Path,
    stride: usize,
    precision: Precision,
    out: &Path,
) -> CliResult<InferOutcome> {
    let params = load_checkpoint(checkpoint)?;
    let seq = read_sequence(seq_dir)?;
    let (k, dim) = (params.config.window_k, params.config.input_dim);
    if seq.manifest.trace_len != dim {
        return Err(CliError::Input(format!(
            "checkpoint expects {dim} samples per trace, sequence has {}",
            seq.manifest.trace_len
        )));
    }
    let traces = stacked_traces(&seq, &cfg.filter)?;
    let inputs = pipeline::inference_inputs(&traces, &cfg.filter, k, stride)?;
    let narrow = (precision == Precision::F32).then(|| params.cast::<f32>());
    let mut predictions = Vec::with_capacity(inputs.len());
    let mut times = Vec::with_capacity(inputs.len());
    for (start, x) in &inputs {
        let t = Instant::now();
        let value = match &narrow {
            Some(p) => p.predict(x)?,
            None => params.predict(x)?,
        };
        let ms = t.elapsed().as_secs_f64() * 1e3;
        log::debug!("window {start}: {ms:.3} ms");
        times.push(ms);
        predictions.push(WindowPrediction { start: *start, span: k - 1, value });
    }
    write(out, &predictions_csv(&predictions))?;
    let timing = InferTiming {
        windows: times.len(),
        precision: format!("{precision:?}").to_lowercase(),
        mean_forward_ms: times.iter().sum::<f64>() / times.len() as f64,
        max_forward_ms: times.iter().copied().fold(0.0, f64::max),
    };
    Ok(InferOutcome { predictions, timing })
}

/// Filter settings for a sequence: wheel geometry comes from its manifest.
pub fn ekf_config_for(cfg: &EkfConfig, seq: &Sequence) -> EkfConfig {
    let w = &seq.manifest.wheels;
    EkfConfig {
        ticks_per_meter: w.ticks_per_meter,
        wheel_radius: w.wheel_radius,
        wheel_separation: w.wheel_separation,
        ..cfg.clone()
    }
}

/// Runs the EKF over a sequence, optionally with GPR displacements from a
/// prediction file.
pub fn fuse_sequence(
    cfg: &ExperimentConfig,
    seq: &Sequence,
    predictions: Option<&[WindowPrediction]>,
    gpr: bool,
) -> CliResult<FilterTrack> {
    let mut ekf = ekf_config_for(&cfg.ekf, seq);
    ekf.gpr_enabled = ekf.gpr_enabled && gpr;
    let steps = match (ekf.gpr_enabled, predictions) {
        (false, _) => Vec::new(),
        (true, None) => {
            return Err(CliError::Input("GPR fusion is enabled but no predictions were given".into()));
        }
        (true, Some(preds)) => {
            let traces = stacked_traces(seq, &cfg.filter)?;
            let times: Vec<f64> = traces.iter().map(|t| t.timestamp).collect();
            let n_steps = times.len().saturating_sub(1);
            gpr_steps(&times, &per_step(preds, n_steps)?)
        }
    };
    run_filter::<f64>(&sensor_log(seq, steps), &ekf).at(&seq.name)
}

pub fn cmd_fuse(
    cfg: &ExperimentConfig,
    seq_dir: &Path,
    predictions: Option<&Path>,
    gpr: bool,
    out: &Path,
) -> CliResult<FilterTrack> {
    let seq = read_sequence(seq_dir)?;
    let preds = predictions.map(read_predictions).transpose()?;
    let track = fuse_sequence(cfg, &seq, preds.as_deref(), gpr)?;
    write(out, &poses_csv(&track.poses))?;
    Ok(track)
}

pub const ENCODER_METHOD: &str = "wheel_encoder";

/// Scores displacement predictions and filter trajectories against the
/// sequence's reference and writes the report files to `out`. The wheel
/// encoder dead-reckoning baseline is always included.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    seq_dir: &Path,
    predictions: &[(String, PathBuf)],
    trajectories: &[(String, PathBuf)],
    out: &Path,
) -> CliResult<Report> {
    let seq = read_sequence(seq_dir)?;
    let traces = stacked_traces(&seq, &cfg.filter)?;
    let times: Vec<f64> = traces.iter().map(|t| t.timestamp).collect();
    let truth = truth_steps(&seq.truth, &times)?;
    let mut methods =
        vec![(ENCODER_METHOD.to_string(), pipeline::encoder_steps(&seq, &times)?.into_iter().map(Some).collect())];
    for (name, path) in predictions {
        methods.push((name.clone(), per_step(&read_predictions(path)?, truth.len()).at(path.display())?));
    }
    let mut estimates = Vec::new();
    for (name, path) in trajectories {
        estimates.push((name.clone(), Trajectory::new(dataset::read_poses(path)?).at(path.display())?));
    }
    let report = compare_report(&[SequenceReport {
        name: seq.name.clone(),
        truth_steps: truth,
        methods,
        truth_trajectory: Some(Trajectory::new(seq.truth.clone()).at("truth.csv")?),
        trajectories: estimates,
    }])?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for (name, text) in &report.files {
        write(&out.join(name), text)?;
    }
    Ok(report)
}

/// Simulated train/validation/test splits drawn from the experiment plan.
pub fn simulated_splits(cfg: &ExperimentConfig) -> CliResult<[Vec<Sequence>; 3]> {
    let plan = &cfg.simulation;
    let counts = [plan.train_sequences, plan.val_sequences, plan.test_sequences];
    if counts.contains(&0) {
        return Err(CliError::Config("simulation plan needs at least one sequence per split".into()));
    }
    let mut seed = cfg.seed.wrapping_mul(1_000_003);
    let mut split = |label: &str, n: usize| -> CliResult<Vec<Sequence>> {
        (0..n)
            .map(|i| {
                seed = seed.wrapping_add(1);
                let (scene, motion) = pipeline::random_drive(plan, seed);
                pipeline::simulate_sequence(format!("{label}_{i:03}"), &scene, &motion, seed)
            })
            .collect()
    };
    Ok([split("train", counts[0])?, split("val", counts[1])?, split("test", counts[2])?])
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("value,rmse_mm,alpha\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.value, r.rmse_mm, r.alpha);
    }
    out
}

pub fn ablation_svg(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let numeric: Option<Vec<f64>> = rows.iter().map(|r| r.value.parse::<f64>().ok()).collect();
    let xs = numeric.unwrap_or_else(|| (0..rows.len()).map(|i| i as f64).collect());
    let points: Vec<(f64, f64)> = xs.iter().zip(rows).map(|(x, r)| (*x, r.rmse_mm)).collect();
    let mut markers: Vec<(f64, f64, String)> = Vec::new();
    if let Some((i, best)) = rows.iter().enumerate().min_by(|a, b| a.1.rmse_mm.total_cmp(&b.1.rmse_mm)) {
        markers.push((xs[i], best.rmse_mm, format!("best {axis} = {}", best.value)));
    }
    let panel = Panel {
        title: format!("ablation: {axis}"),
        x_label: axis.to_string(),
        y_label: "per-step RMSE (mm)".into(),
        series: vec![Series::new("GPRFormer", points)],
        markers,
        equal_aspect: false,
    };
    svg::render(&[panel], 720, 400)
}

/// Retrains once per value on simulated data; writes
/// `ablation_<axis>.csv` and `ablation_<axis>.svg` to `out`.
pub fn cmd_ablate(
    cfg: &ExperimentConfig,
    axis: AblationAxis,
    values: Option<Vec<String>>,
    out: &Path,
) -> CliResult<Vec<AblationRow>> {
    let values = values.unwrap_or_else(|| axis.default_values(&cfg.model));
    let [train_seqs, val_seqs, test_seqs] = simulated_splits(cfg)?;
    let mut cache: HashMap<DataRequest, AblationData> = HashMap::new();
    let build = |req: &DataRequest| -> gprloc_core::Result<AblationData> {
        if let Some(d) = cache.get(req) {
            return Ok(d.clone());
        }
        let filter = if req.filtered { cfg.filter.clone() } else { FilterConfig::passthrough() };
        let sets = |seqs: &[Sequence]| -> gprloc_core::Result<Vec<WindowSet>> {
            windows_of(cfg, seqs, &filter, req.window_k).map_err(|e| match e {
                CliError::Input(m) => gprloc_core::Error::Input(m),
                CliError::Config(m) => gprloc_core::Error::Config(m),
                CliError::Numerical(m) => gprloc_core::Error::Numerical(m),
            })
        };
        let data = AblationData {
            train: flatten(&sets(&train_seqs)?),
            val: flatten(&sets(&val_seqs)?),
            test: sets(&test_seqs)?,
        };
        cache.insert(*req, data.clone());
        Ok(data)
    };
    let rows = ablation_sweep(axis, &values, &cfg.model, &cfg.train, build)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write(&out.join(format!("ablation_{axis}.csv")), &ablation_csv(&rows))?;
    write(&out.join(format!("ablation_{axis}.svg")), &ablation_svg(axis, &rows))?;
    Ok(rows)
}
