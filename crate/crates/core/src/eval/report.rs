use std::fmt::Write;

use super::svg::{self, Panel, Series};
use super::{rmse_ate, rmse_mm, AteAlignment, Trajectory};
use crate::error::{Error, Result};

/// Everything compared on one sequence.
#[derive(Clone, Debug, Default)]
pub struct SequenceReport {
    pub name: String,
    /// Reference per-step displacement (m).
    pub truth_steps: Vec<f64>,
    /// Named per-step displacement estimates; `None` marks uncovered steps.
    pub methods: Vec<(String, Vec<Option<f64>>)>,
    pub truth_trajectory: Option<Trajectory>,
    /// Named filter outputs, scored by ATE against `truth_trajectory`.
    pub trajectories: Vec<(String, Trajectory)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementRow {
    pub sequence: String,
    pub method: String,
    pub rmse_mm: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteRow {
    pub sequence: String,
    pub filter: String,
    pub rmse_ate_m: f64,
}

/// Tables plus rendered files (`name`, `contents`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub displacement: Vec<DisplacementRow>,
    pub ate: Vec<AteRow>,
    pub files: Vec<(String, String)>,
}

impl Report {
    pub fn displacement_csv(&self) -> String {
        let mut out = String::from("sequence,method,rmse_mm,steps\n");
        for r in &self.displacement {
            let _ = writeln!(out, "{},{},{:.6},{}", r.sequence, r.method, r.rmse_mm, r.steps);
        }
        out
    }

    pub fn ate_csv(&self) -> String {
        let mut out = String::from("sequence,filter,rmse_ate_m\n");
        for r in &self.ate {
            let _ = writeln!(out, "{},{},{:.6}", r.sequence, r.filter, r.rmse_ate_m);
        }
        out
    }

    /// Plain-text summary for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        if !self.displacement.is_empty() {
            let _ = writeln!(out, "{:<24} {:<24} {:>12} {:>7}", "sequence", "method", "RMSE (mm)", "steps");
            for r in &self.displacement {
                let _ = writeln!(out, "{:<24} {:<24} {:>12.3} {:>7}", r.sequence, r.method, r.rmse_mm, r.steps);
            }
        }
        if !self.ate.is_empty() {
            let _ = writeln!(out, "{:<24} {:<24} {:>12}", "sequence", "filter", "ATE (m)");
            for r in &self.ate {
                let _ = writeln!(out, "{:<24} {:<24} {:>12.4}", r.sequence, r.filter, r.rmse_ate_m);
            }
        }
        out
    }
}

/// Running sum; uncovered steps add nothing.
pub fn cumulative(steps: &[Option<f64>]) -> Vec<f64> {
    steps
        .iter()
        .scan(0.0, |acc, s| {
            *acc += s.unwrap_or(0.0);
            Some(*acc)
        })
        .collect()
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn step_series(steps: &[Option<f64>], scale: f64) -> Vec<(f64, f64)> {
    steps.iter().enumerate().filter_map(|(i, s)| s.map(|v| (i as f64, v * scale))).collect()
}

/// Scores every method and filter output and renders cumulative-displacement
/// and trajectory plots. Output is a pure function of the inputs.
pub fn compare_report(sequences: &[SequenceReport]) -> Result<Report> {
    if sequences.iter().all(|s| s.methods.is_empty() && s.trajectories.is_empty()) {
        return Err(Error::input("nothing to compare: no methods or trajectories"));
    }
    let mut report = Report::default();
    for seq in sequences {
        let stem = file_stem(&seq.name);
        for (name, est) in &seq.methods {
            let rmse = rmse_mm(&seq.truth_steps, est).map_err(|e| Error::input(format!("{}/{name}: {e}", seq.name)))?;
            report.displacement.push(DisplacementRow {
                sequence: seq.name.clone(),
                method: name.clone(),
                rmse_mm: rmse,
                steps: est.iter().filter(|s| s.is_some()).count(),
            });
        }
        if !seq.methods.is_empty() {
            let truth: Vec<Option<f64>> = seq.truth_steps.iter().map(|v| Some(*v)).collect();
            let mut cum = vec![Series::new(
                "reference",
                cumulative(&truth).into_iter().enumerate().map(|(i, v)| (i as f64, v)).collect(),
            )];
            let mut per_step = vec![Series::new("reference", step_series(&truth, 1000.0))];
            for (name, est) in &seq.methods {
                cum.push(Series::new(
                    name,
                    cumulative(est).into_iter().enumerate().map(|(i, v)| (i as f64, v)).collect(),
                ));
                per_step.push(Series::new(name, step_series(est, 1000.0)));
            }
            let panels = [
                Panel {
                    title: format!("{}: cumulative displacement", seq.name),
                    x_label: "step".into(),
                    y_label: "distance (m)".into(),
                    series: cum,
                    ..Default::default()
                },
                Panel {
                    title: "per-step displacement".into(),
                    x_label: "step".into(),
                    y_label: "displacement (mm)".into(),
                    series: per_step,
                    ..Default::default()
                },
            ];
            report.files.push((format!("{stem}_displacement.svg"), svg::render(&panels, 900, 320)));
        }
        if seq.trajectories.is_empty() {
            continue;
        }
        let truth = seq
            .truth_trajectory
            .as_ref()
            .ok_or_else(|| Error::input(format!("{}: trajectories given without a reference", seq.name)))?;
        let mut series = vec![Series::new("reference", truth.poses().iter().map(|p| (p.x, p.y)).collect())];
        for (name, est) in &seq.trajectories {
            let ate = rmse_ate(truth, est, AteAlignment::default())
                .map_err(|e| Error::input(format!("{}/{name}: {e}", seq.name)))?;
            report.ate.push(AteRow { sequence: seq.name.clone(), filter: name.clone(), rmse_ate_m: ate });
            series.push(Series::new(name, est.poses().iter().map(|p| (p.x, p.y)).collect()));
        }
        let panel = Panel {
            title: format!("{}: trajectories", seq.name),
            x_label: "x (m)".into(),
            y_label: "y (m)".into(),
            series,
            equal_aspect: true,
            ..Default::default()
        };
        report.files.push((format!("{stem}_trajectory.svg"), svg::render(&[panel], 700, 600)));
    }
    let displacement = report.displacement_csv();
    let ate = report.ate_csv();
    report.files.insert(0, ("displacement_rmse.csv".into(), displacement));
    report.files.insert(1, ("ate.csv".into(), ate));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Pose;

    fn line(n: usize, speed: f64) -> Trajectory {
        Trajectory::new((0..n).map(|i| Pose::new(i as f64, speed * i as f64, 0.0, 0.0)).collect()).unwrap()
    }

    fn sample() -> SequenceReport {
        let truth = vec![0.05; 20];
        let slipped: Vec<Option<f64>> = truth.iter().map(|v| Some(v / 0.85)).collect();
        SequenceReport {
            name: "seq 1".into(),
            truth_steps: truth.clone(),
            methods: vec![("exact".into(), truth.iter().map(|v| Some(*v)).collect()), ("encoder".into(), slipped)],
            truth_trajectory: Some(line(20, 0.05)),
            trajectories: vec![("ekf".into(), line(20, 0.05))],
        }
    }

    #[test]
    fn exact_method_scores_zero_and_slip_overshoots() {
        let seq = sample();
        let r = compare_report(std::slice::from_ref(&seq)).unwrap();
        assert_eq!(r.displacement[0].rmse_mm, 0.0);
        assert_eq!(r.ate[0].rmse_ate_m, 0.0);
        let enc = cumulative(&seq.methods[1].1);
        let tru = cumulative(&seq.methods[0].1);
        assert!(enc.last().unwrap() > tru.last().unwrap());
        assert!(r.displacement_csv().starts_with("sequence,method,rmse_mm,steps\nseq 1,exact,0.000000,20\n"));
        let names: Vec<&str> = r.files.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(names, ["displacement_rmse.csv", "ate.csv", "seq_1_displacement.svg", "seq_1_trajectory.svg"]);
        assert!(r.summary().contains("encoder"));
    }

    #[test]
    fn report_is_deterministic() {
        let a = compare_report(&[sample()]).unwrap();
        let b = compare_report(&[sample()]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_inputs_are_rejected() {
        assert!(compare_report(&[]).is_err());
        let mut s = sample();
        s.truth_trajectory = None;
        assert!(compare_report(&[s]).is_err());
        let mut s = sample();
        s.methods[0].1 = vec![None; 20];
        assert!(compare_report(&[s]).is_err());
    }

    #[test]
    fn cumulative_skips_absent_steps() {
        assert_eq!(cumulative(&[Some(1.0), None, Some(2.0)]), vec![1.0, 1.0, 3.0]);
    }
}
