use serde::{Deserialize, Serialize};

use super::wavelet::{ThresholdRule, Wavelet};
use crate::error::{Error, Result};

/// A single conditioning step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    BackgroundRemoval,
    Dewow,
    SecGain,
    WaveletDenoise,
}

impl FilterStage {
    pub const DEFAULT_ORDER: [FilterStage; 4] =
        [FilterStage::BackgroundRemoval, FilterStage::Dewow, FilterStage::SecGain, FilterStage::WaveletDenoise];
}

/// Trace conditioning parameters.
///
/// Serialized as a flat `key = value` document:
///
/// ```text
/// sec_a = 0.015
/// sec_b = 0.0
/// sec_threshold = 100
/// dewow_degree = 3
/// wavelet = "db6"
/// wavelet_levels = 4
/// wavelet_threshold_rule = "soft"
/// stack_size = 3
/// anomaly_limit = 50.0
/// stages = ["background_removal", "dewow", "sec_gain", "wavelet_denoise"]
/// ```
///
/// `wavelet_threshold` may be added to pin the shrinkage threshold instead of
/// estimating it from the finest detail band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub sec_a: f64,
    pub sec_b: f64,
    pub sec_threshold: usize,
    pub dewow_degree: usize,
    pub wavelet: String,
    pub wavelet_levels: usize,
    pub wavelet_threshold_rule: ThresholdRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelet_threshold: Option<f64>,
    pub stack_size: usize,
    pub anomaly_limit: f64,
    pub stages: Vec<FilterStage>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sec_a: 0.015,
            sec_b: 0.0,
            sec_threshold: 100,
            dewow_degree: 3,
            wavelet: "db6".to_string(),
            wavelet_levels: 4,
            wavelet_threshold_rule: ThresholdRule::Soft,
            wavelet_threshold: None,
            stack_size: 3,
            anomaly_limit: 50.0,
            stages: FilterStage::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl FilterConfig {
    /// Configuration with no conditioning stages (used by the filtering ablation).
    pub fn passthrough() -> Self {
        Self { stages: Vec::new(), ..Self::default() }
    }

    /// Checks parameter ranges against a trace length.
    pub fn validate(&self, trace_len: usize) -> Result<()> {
        if !(self.sec_a >= 0.0) {
            return Err(Error::config("sec_a must be non-negative"));
        }
        if !self.sec_b.is_finite() {
            return Err(Error::config("sec_b must be finite"));
        }
        if self.stack_size == 0 {
            return Err(Error::config("stack_size must be at least 1"));
        }
        if !(self.anomaly_limit > 0.0) {
            return Err(Error::config("anomaly_limit must be positive"));
        }
        if let Some(t) = self.wavelet_threshold {
            if !(t >= 0.0) {
                return Err(Error::config("wavelet_threshold must be non-negative"));
            }
        }
        if self.stages.contains(&FilterStage::SecGain) && self.sec_threshold >= trace_len {
            return Err(Error::config(format!("sec_threshold {} must lie in [0, {trace_len})", self.sec_threshold)));
        }
        if self.stages.contains(&FilterStage::WaveletDenoise) {
            let w = Wavelet::by_name(&self.wavelet)?;
            let max = w.max_level(trace_len);
            if self.wavelet_levels == 0 || self.wavelet_levels > max {
                return Err(Error::config(format!(
                    "wavelet_levels {} invalid for {trace_len} samples (1..={max})",
                    self.wavelet_levels
                )));
            }
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("filter config: {e}")))
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("filter config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = FilterConfig::default();
        assert_eq!((c.sec_a, c.sec_b, c.sec_threshold), (0.015, 0.0, 100));
        assert_eq!(c.dewow_degree, 3);
        assert_eq!(c.wavelet, "db6");
        assert_eq!(c.stack_size, 3);
        assert_eq!(c.anomaly_limit, 50.0);
        c.validate(200).unwrap();
    }

    #[test]
    fn kv_round_trip_and_partial_documents() {
        let c = FilterConfig {
            wavelet_threshold: Some(0.25),
            wavelet_threshold_rule: ThresholdRule::Hard,
            ..FilterConfig::default()
        };
        let text = c.to_kv_string();
        assert!(text.contains("sec_threshold = 100"));
        assert_eq!(FilterConfig::from_kv_str(&text).unwrap(), c);

        let partial = FilterConfig::from_kv_str("dewow_degree = 2\n").unwrap();
        assert_eq!(partial.dewow_degree, 2);
        assert_eq!(partial.sec_a, 0.015);
        assert!(FilterConfig::from_kv_str("bogus = 1\n").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = |f: fn(&mut FilterConfig)| {
            let mut c = FilterConfig::default();
            f(&mut c);
            c.validate(200).is_err()
        };
        assert!(bad(|c| c.sec_a = -1.0));
        assert!(bad(|c| c.stack_size = 0));
        assert!(bad(|c| c.sec_threshold = 200));
        assert!(bad(|c| c.wavelet_levels = 5));
        assert!(bad(|c| c.wavelet = "coif3".into()));
        assert!(bad(|c| c.anomaly_limit = 0.0));
    }
}
