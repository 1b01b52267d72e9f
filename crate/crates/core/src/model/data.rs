use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::{filter_pipeline, BScan, FilterConfig, Trace};

/// One network input: `k` conditioned traces (trace-major) and the path length
/// covered between the first and the last of them.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    /// Index of the first trace, which is also the first covered step.
    pub start: usize,
    /// Number of inter-trace steps covered (`k - 1`).
    pub span: usize,
    pub input: Vec<f64>,
    pub label: f64,
}

/// Windows of one sequence plus its per-step reference displacements.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowSet {
    pub name: String,
    pub windows: Vec<LabeledWindow>,
    /// `step_truth[j]` is the displacement between traces `j` and `j + 1`.
    pub step_truth: Vec<f64>,
}

/// Start indices of the `k`-trace windows taken every `stride` traces.
pub fn window_starts(n_traces: usize, k: usize, stride: usize) -> Vec<usize> {
    if k == 0 || stride == 0 || n_traces < k {
        return Vec::new();
    }
    (0..=n_traces - k).step_by(stride).collect()
}

/// Conditions traces `start..start + k` as one B-scan and flattens it.
pub fn filtered_window(traces: &[Trace<f64>], start: usize, k: usize, filter: &FilterConfig) -> Result<Vec<f64>> {
    let b = BScan::new(traces[start..start + k].to_vec())?;
    let b = filter_pipeline(&b, filter)?;
    Ok(b.traces().iter().flat_map(|t| t.samples.iter().copied()).collect())
}

/// Builds labelled windows from stacked traces and per-step displacements.
pub fn build_windows(
    traces: &[Trace<f64>],
    step_truth: &[f64],
    k: usize,
    stride: usize,
    filter: &FilterConfig,
) -> Result<Vec<LabeledWindow>> {
    if k < 2 {
        return Err(Error::config("windows need at least 2 traces to span a step"));
    }
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    if traces.len() < k {
        return Err(Error::input(format!(
            "sequence has {} traces, at least {k} are required for one window",
            traces.len()
        )));
    }
    if step_truth.len() + 1 != traces.len() {
        return Err(Error::input(format!(
            "{} traces need {} step displacements, got {}",
            traces.len(),
            traces.len() - 1,
            step_truth.len()
        )));
    }
    window_starts(traces.len(), k, stride)
        .into_par_iter()
        .map(|s| {
            Ok(LabeledWindow {
                start: s,
                span: k - 1,
                input: filtered_window(traces, s, k, filter)?,
                label: step_truth[s..s + k - 1].iter().sum(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traces(n: usize) -> Vec<Trace<f64>> {
        (0..n).map(|j| Trace::new((0..200).map(|i| ((i * (j + 3)) as f64 * 0.05).sin()).collect(), j as f64)).collect()
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_starts(10, 10, 1), vec![0]);
        assert_eq!(window_starts(25, 5, 5).len(), 5);
        assert_eq!(window_starts(27, 5, 5).len(), 27 / 5);
        assert_eq!(window_starts(12, 3, 1).len(), 10);
        assert!(window_starts(4, 5, 1).is_empty());
    }

    #[test]
    fn labels_sum_covered_steps() {
        let t = traces(12);
        let steps: Vec<f64> = (0..11).map(|j| 0.01 * j as f64).collect();
        let w = build_windows(&t, &steps, 4, 2, &FilterConfig::default()).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w[1].start, 2);
        assert_eq!(w[1].span, 3);
        assert!((w[1].label - (0.02 + 0.03 + 0.04)).abs() < 1e-15);
        assert_eq!(w[0].input.len(), 4 * 200);
        let constant = build_windows(&t, &[0.06; 11], 10, 1, &FilterConfig::default()).unwrap();
        assert!(constant.iter().all(|w| (w.label - 0.54).abs() < 1e-9));
    }

    #[test]
    fn short_sequences_and_bad_shapes_are_rejected() {
        let t = traces(3);
        let err = build_windows(&t, &[0.1, 0.1], 4, 1, &FilterConfig::default()).unwrap_err();
        assert!(err.to_string().contains("at least 4"));
        assert!(build_windows(&t, &[0.1], 2, 1, &FilterConfig::default()).is_err());
        assert!(build_windows(&t, &[0.1, 0.1], 1, 1, &FilterConfig::default()).is_err());
    }
}
