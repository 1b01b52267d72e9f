use std::fmt;
use std::str::FromStr;

use super::data::{LabeledWindow, WindowSet};
use super::train::{evaluate_rmse_mm, train, TrainConfig};
use super::{ModelConfig, Pooling};
use crate::error::{Error, Result};

/// Component varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    K,
    Alpha,
    Layers,
    Dropout,
    Pooling,
    Encoder,
    Filtering,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 7] = [
        AblationAxis::K,
        AblationAxis::Alpha,
        AblationAxis::Layers,
        AblationAxis::Dropout,
        AblationAxis::Pooling,
        AblationAxis::Encoder,
        AblationAxis::Filtering,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::K => "k",
            AblationAxis::Alpha => "alpha",
            AblationAxis::Layers => "layers",
            AblationAxis::Dropout => "dropout",
            AblationAxis::Pooling => "pooling",
            AblationAxis::Encoder => "encoder",
            AblationAxis::Filtering => "filtering",
        }
    }

    /// Sweep values used when none are given.
    pub fn default_values(&self, base: &ModelConfig) -> Vec<String> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        match self {
            AblationAxis::K => s(&["5", "10", "15", "20", "30", "40"]),
            AblationAxis::Alpha => (1..=9).map(|i| format!("0.{i}")).collect(),
            AblationAxis::Layers => vec!["1".into(), base.layers.to_string()],
            AblationAxis::Dropout => vec!["0".into(), base.dropout_p.to_string()],
            AblationAxis::Pooling => s(&["dual", "post_only"]),
            AblationAxis::Encoder | AblationAxis::Filtering => s(&["on", "off"]),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown ablation axis '{s}' (k, alpha, layers, dropout, pooling, encoder, filtering)"
            ))
        })
    }
}

/// What the data provider must produce for a variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DataRequest {
    pub window_k: usize,
    pub filtered: bool,
}

#[derive(Clone, Debug, Default)]
pub struct AblationData {
    pub train: Vec<LabeledWindow>,
    pub val: Vec<LabeledWindow>,
    pub test: Vec<WindowSet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub rmse_mm: f64,
    /// Blend weight after training.
    pub alpha: f64,
}

fn parse<V: FromStr>(axis: AblationAxis, v: &str) -> Result<V> {
    v.parse().map_err(|_| Error::config(format!("invalid {axis} value '{v}'")))
}

fn on_off(axis: AblationAxis, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid {axis} value '{v}' (on/off)"))),
    }
}

/// Largest head count not above `heads` that divides `dim`.
fn fit_heads(dim: usize, heads: usize) -> usize {
    (1..=heads.max(1)).rev().find(|h| dim.is_multiple_of(*h)).unwrap_or(1)
}

fn variant(
    axis: AblationAxis,
    value: &str,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelConfig, TrainConfig, DataRequest)> {
    let mut m = base.clone();
    let mut t = train_cfg.clone();
    let mut req = DataRequest { window_k: base.window_k, filtered: true };
    match axis {
        AblationAxis::K => {
            m.window_k = parse(axis, value)?;
            req.window_k = m.window_k;
        }
        AblationAxis::Alpha => {
            m.alpha_init = parse(axis, value)?;
            t.freeze_alpha = true;
        }
        AblationAxis::Layers => {
            m.layers = parse(axis, value)?;
            if m.layers == 1 {
                m.heads = 1;
            }
        }
        AblationAxis::Dropout => m.dropout_p = parse(axis, value)?,
        AblationAxis::Pooling => {
            m.pooling = match value {
                "dual" => Pooling::Dual,
                "post_only" | "post" => Pooling::PostOnly,
                _ => return Err(Error::config(format!("invalid pooling value '{value}' (dual/post_only)"))),
            }
        }
        AblationAxis::Encoder => {
            if !on_off(axis, value)? {
                m.linear_encoder = false;
                m.token_dim = m.input_dim;
                m.heads = fit_heads(m.token_dim, m.heads);
            }
        }
        AblationAxis::Filtering => req.filtered = on_off(axis, value)?,
    }
    m.validate()?;
    Ok((m, t, req))
}

/// Retrains and scores one model per value; the score is the pooled per-step
/// RMSE (mm) on the provider's test sequences.
pub fn ablation_sweep<F>(
    axis: AblationAxis,
    values: &[String],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    mut data: F,
) -> Result<Vec<AblationRow>>
where
    F: FnMut(&DataRequest) -> Result<AblationData>,
{
    if values.is_empty() {
        return Err(Error::config("ablation sweep needs at least one value"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let (m, t, req) = variant(axis, value, base, train_cfg)?;
        let d = data(&req)?;
        log::info!("ablation {axis}={value}: {} train / {} val windows", d.train.len(), d.val.len());
        let outcome = train::<f64>(&d.train, &d.val, &m, &t)?;
        let rmse = evaluate_rmse_mm(&outcome.params, &d.test)?;
        rows.push(AblationRow { value: value.clone(), rmse_mm: rmse, alpha: outcome.params.alpha() });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing_and_defaults() {
        for a in AblationAxis::ALL {
            assert_eq!(a.name().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("depth".parse::<AblationAxis>().is_err());
        let base = ModelConfig::default();
        assert_eq!(AblationAxis::K.default_values(&base), ["5", "10", "15", "20", "30", "40"]);
        assert_eq!(AblationAxis::Alpha.default_values(&base).len(), 9);
    }

    #[test]
    fn variants_follow_the_protocol() {
        let base = ModelConfig::default();
        let tc = TrainConfig::default();
        let (m, t, _) = variant(AblationAxis::Alpha, "0.7", &base, &tc).unwrap();
        assert!(t.freeze_alpha && m.alpha_init == 0.7);
        let (m, _, _) = variant(AblationAxis::Layers, "1", &base, &tc).unwrap();
        assert_eq!((m.layers, m.heads), (1, 1));
        let (m, _, _) = variant(AblationAxis::Pooling, "post_only", &base, &tc).unwrap();
        assert_eq!(m.pooling, Pooling::PostOnly);
        let (m, _, _) = variant(AblationAxis::Encoder, "off", &base, &tc).unwrap();
        assert!(!m.linear_encoder && m.token_dim == 200 && 200 % m.heads == 0);
        let (_, _, r) = variant(AblationAxis::K, "15", &base, &tc).unwrap();
        assert_eq!(r.window_k, 15);
        let (_, _, r) = variant(AblationAxis::Filtering, "off", &base, &tc).unwrap();
        assert!(!r.filtered);
        assert!(variant(AblationAxis::K, "ten", &base, &tc).is_err());
    }

    #[test]
    fn sweep_emits_one_row_per_value() {
        let base = ModelConfig { dropout_p: 0.0, ..ModelConfig::reduced() };
        let tc = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() };
        let make = |req: &DataRequest| -> Result<AblationData> {
            let k = req.window_k;
            let windows: Vec<LabeledWindow> = (0..6)
                .map(|s| LabeledWindow {
                    start: s,
                    span: k - 1,
                    input: (0..k * 20).map(|j| ((j + s) as f64 * 0.1).sin()).collect(),
                    label: 0.05 * (k - 1) as f64,
                })
                .collect();
            let test = WindowSet { name: "t".into(), windows: windows.clone(), step_truth: vec![0.05; 6 + k - 1] };
            Ok(AblationData { train: windows.clone(), val: windows, test: vec![test] })
        };
        let values = vec!["3".to_string(), "4".to_string()];
        let rows = ablation_sweep(AblationAxis::K, &values, &base, &tc, make).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.rmse_mm.is_finite()));
    }
}
