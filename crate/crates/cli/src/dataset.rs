//! On-disk sequence layout. The format is this project's own (loosely modelled
//! on the MarsLGPR release):
//!
//! ```text
//! <dir>/manifest.toml   format tag, provenance, units, rates, wheel geometry
//! <dir>/gpr.csv         timestamp,s0,...,s{n-1}   raw (unstacked) traces, mV
//! <dir>/encoders.csv    timestamp,fl,fr,rl,rr     cumulative ticks
//! <dir>/imu.csv         timestamp,yaw,yaw_rate,ax,ay
//! <dir>/truth.csv       timestamp,x,y,yaw
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! and re-writing a directory reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gprloc_core::eval::Pose;
use gprloc_core::fusion::{EncoderSample, ImuSample};
use gprloc_core::simulate::{MotionProfile, ScatterScene, SimSequence};
use gprloc_core::Trace;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_TAG: &str = "gprloc-sequence/1";
pub const GPR_FILE: &str = "gpr.csv";
pub const ENCODER_FILE: &str = "encoders.csv";
pub const IMU_FILE: &str = "imu.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Simulated,
    Ingested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub time: String,
    pub gpr_amplitude: String,
    pub encoder: String,
    pub angle: String,
    pub angular_rate: String,
    pub acceleration: String,
    pub position: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            time: "s".into(),
            gpr_amplitude: "mV".into(),
            encoder: "ticks (cumulative)".into(),
            angle: "rad".into(),
            angular_rate: "rad/s".into(),
            acceleration: "m/s^2 (body frame)".into(),
            position: "m".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    /// Stacked GPR epochs per second.
    pub gpr_epoch_hz: f64,
    /// Raw traces per epoch in gpr.csv.
    pub stack_repeats: usize,
    pub encoder_hz: f64,
    pub imu_hz: f64,
    pub truth_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wheels {
    pub ticks_per_meter: f64,
    pub wheel_radius: f64,
    pub wheel_separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub provenance: Provenance,
    pub trace_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub units: Units,
    pub rates: Rates,
    pub wheels: Wheels,
    /// Generation inputs, recorded for simulated sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<ScatterScene>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionProfile>,
}

impl Manifest {
    pub fn simulated(scene: &ScatterScene, motion: &MotionProfile, seed: u64) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            provenance: Provenance::Simulated,
            trace_len: scene.trace_len,
            seed: Some(seed),
            units: Units::default(),
            rates: Rates {
                gpr_epoch_hz: motion.gpr_rate,
                stack_repeats: motion.stack_repeats,
                encoder_hz: motion.encoder_rate,
                imu_hz: motion.imu_rate,
                truth_hz: motion.truth_rate,
            },
            wheels: Wheels {
                ticks_per_meter: motion.encoder_ticks_per_meter,
                wheel_radius: motion.wheel_radius,
                wheel_separation: motion.wheel_separation,
            },
            scene: Some(scene.clone()),
            motion: Some(motion.clone()),
        }
    }
}

/// One drive: raw GPR traces plus the other sensor streams and reference poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub manifest: Manifest,
    pub gpr: Vec<Trace>,
    pub encoders: Vec<EncoderSample>,
    pub imu: Vec<ImuSample>,
    pub truth: Vec<Pose>,
}

impl Sequence {
    pub fn from_simulation(name: impl Into<String>, sim: SimSequence, manifest: Manifest) -> Self {
        Self { name: name.into(), manifest, gpr: sim.traces, encoders: sim.encoders, imu: sim.imu, truth: sim.truth }
    }
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let manifest = toml::to_string(&seq.manifest).map_err(|e| CliError::Input(format!("manifest: {e}")))?;
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;

    let n = seq.gpr.first().map_or(seq.manifest.trace_len, |t| t.len());
    let mut out = String::from("timestamp");
    for i in 0..n {
        let _ = write!(out, ",s{i}");
    }
    out.push('\n');
    for tr in &seq.gpr {
        let _ = write!(out, "{}", tr.timestamp);
        for v in &tr.samples {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_file(&dir.join(GPR_FILE), &out)?;

    let mut out = String::from("timestamp,fl,fr,rl,rr\n");
    for e in &seq.encoders {
        let [a, b, c, d] = e.ticks;
        let _ = writeln!(out, "{},{a},{b},{c},{d}", e.time);
    }
    write_file(&dir.join(ENCODER_FILE), &out)?;

    let mut out = String::from("timestamp,yaw,yaw_rate,ax,ay\n");
    for s in &seq.imu {
        let _ = writeln!(out, "{},{},{},{},{}", s.time, s.yaw, s.yaw_rate, s.ax, s.ay);
    }
    write_file(&dir.join(IMU_FILE), &out)?;
    write_file(&dir.join(TRUTH_FILE), &poses_csv(&seq.truth))
}

/// `timestamp,x,y,yaw` rows; shared by truth.csv and filter outputs.
pub fn poses_csv(poses: &[Pose]) -> String {
    let mut out = String::from("timestamp,x,y,yaw\n");
    for p in poses {
        let _ = writeln!(out, "{},{},{},{}", p.time, p.x, p.y, p.yaw);
    }
    out
}

/// Reads a headed numeric CSV, checking the header and that timestamps in
/// the first column never decrease.
pub(crate) fn read_table(path: &Path, header: &dyn Fn(usize) -> Option<String>) -> CliResult<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let name = path.display();
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| CliError::Input(format!("{name}: empty file")))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    for (i, c) in cols.iter().enumerate() {
        match header(i) {
            Some(expected) if expected == *c => {}
            Some(expected) => {
                return Err(CliError::Input(format!("{name} line 1: column {} is '{c}', expected '{expected}'", i + 1)))
            }
            None => return Err(CliError::Input(format!("{name} line 1: unexpected column '{c}'"))),
        }
    }
    if let Some(missing) = header(cols.len()) {
        return Err(CliError::Input(format!("{name} line 1: missing column '{missing}'")));
    }
    let mut rows = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Input(format!("{name} line {lineno}: {e}")))?;
        if row.len() != cols.len() {
            return Err(CliError::Input(format!(
                "{name} line {lineno}: expected {} columns, found {}",
                cols.len(),
                row.len()
            )));
        }
        if !row[0].is_finite() || row[0] < last {
            return Err(CliError::Input(format!("{name} line {lineno}: timestamp {} is out of order", row[0])));
        }
        last = row[0];
        rows.push(row);
    }
    Ok(rows)
}

fn fixed(names: &'static [&'static str]) -> impl Fn(usize) -> Option<String> {
    move |i| names.get(i).map(|s| s.to_string())
}

pub fn read_poses(path: &Path) -> CliResult<Vec<Pose>> {
    let rows = read_table(path, &fixed(&["timestamp", "x", "y", "yaw"]))?;
    Ok(rows.iter().map(|r| Pose::new(r[0], r[1], r[2], r[3])).collect())
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT_TAG {
        return Err(CliError::Input(format!(
            "{}: unsupported format '{}' (expected '{FORMAT_TAG}')",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

pub fn read_sequence(dir: &Path) -> CliResult<Sequence> {
    let manifest = read_manifest(dir)?;
    let n = manifest.trace_len;
    let gpr_header = move |i: usize| match i {
        0 => Some("timestamp".to_string()),
        i if i <= n => Some(format!("s{}", i - 1)),
        _ => None,
    };
    let gpr =
        read_table(&dir.join(GPR_FILE), &gpr_header)?.into_iter().map(|r| Trace::new(r[1..].to_vec(), r[0])).collect();

    let enc_path = dir.join(ENCODER_FILE);
    let encoders = read_table(&enc_path, &fixed(&["timestamp", "fl", "fr", "rl", "rr"]))?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut ticks = [0i64; 4];
            for (t, v) in ticks.iter_mut().zip(&r[1..]) {
                if v.fract() != 0.0 || v.abs() > 9.0e15 {
                    return Err(CliError::Input(format!(
                        "{} line {}: tick count {v} is not an integer",
                        enc_path.display(),
                        i + 2
                    )));
                }
                *t = *v as i64;
            }
            Ok(EncoderSample::new(r[0], ticks))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let imu = read_table(&dir.join(IMU_FILE), &fixed(&["timestamp", "yaw", "yaw_rate", "ax", "ay"]))?
        .into_iter()
        .map(|r| ImuSample { time: r[0], yaw: r[1], yaw_rate: r[2], ax: r[3], ay: r[4] })
        .collect();
    let truth = read_poses(&dir.join(TRUTH_FILE))?;
    let name = dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Sequence { name, manifest, gpr, encoders, imu, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_reader_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let hdr = fixed(&["timestamp", "x", "y", "yaw"]);
        fs::write(&p, "timestamp,x,y,yaw\n0,1,2,3\n1,1,2\n").unwrap();
        let e = read_table(&p, &hdr).unwrap_err();
        assert!(e.message().contains("line 3"), "{e}");
        fs::write(&p, "timestamp,x,y,yaw\n1,1,2,3\n0,1,2,3\n").unwrap();
        assert!(read_table(&p, &hdr).unwrap_err().message().contains("out of order"));
        fs::write(&p, "timestamp,x,y\n").unwrap();
        assert!(read_table(&p, &hdr).unwrap_err().message().contains("missing column"));
        fs::write(&p, "timestamp,x,y,yaw\n0,1,nan?,3\n").unwrap();
        assert!(read_table(&p, &hdr).is_err());
    }
}
