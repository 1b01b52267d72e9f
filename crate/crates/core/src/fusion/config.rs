use serde::{Deserialize, Serialize};

use super::{WheelGeometry, STATE_DIM};
use crate::error::{Error, Result};

/// How wheel odometry enters the filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WheelFusion {
    /// Forward speed, yaw rate and a zero lateral-speed constraint.
    Velocity,
    /// Wheel travel integrated into a dead-reckoned position, fused like GPR.
    Position,
}

/// Filter tuning. Serialized as a flat `key = value` document, same format as
/// the trace-conditioning config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Pose emission rate (Hz) between measurement updates.
    pub output_rate: f64,
    pub gpr_enabled: bool,
    pub wheel_fusion: WheelFusion,
    pub ticks_per_meter: f64,
    pub wheel_radius: f64,
    pub wheel_separation: f64,
    pub encoder_velocity_sigma: f64,
    pub encoder_yaw_rate_sigma: f64,
    /// Strength of the zero lateral-speed constraint.
    pub lateral_velocity_sigma: f64,
    /// Only used with `wheel_fusion = "position"`.
    pub encoder_position_sigma: f64,
    pub imu_yaw_sigma: f64,
    pub imu_yaw_rate_sigma: f64,
    /// Set to a negative value to ignore the accelerometer.
    pub imu_accel_sigma: f64,
    pub gpr_position_sigma: f64,
    pub gpr_turn_threshold: f64,
    pub gpr_turn_factor: f64,
    /// Diagonal process-noise density, state order `x y yaw vx vy yaw_rate ax ay`.
    pub process_noise: [f64; STATE_DIM],
    /// Initial standard deviations, same order.
    pub initial_sigma: [f64; STATE_DIM],
    pub initial_x: f64,
    pub initial_y: f64,
    pub initial_yaw: f64,
    /// Take the initial heading from the first IMU sample when available.
    pub yaw_from_imu: bool,
    /// Seconds of out-of-order tolerance per sensor stream.
    pub reorder_window: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        let g = WheelGeometry::default();
        Self {
            output_rate: 15.0,
            gpr_enabled: true,
            wheel_fusion: WheelFusion::Velocity,
            ticks_per_meter: g.ticks_per_meter,
            wheel_radius: g.wheel_radius,
            wheel_separation: g.wheel_separation,
            encoder_velocity_sigma: 0.05,
            encoder_yaw_rate_sigma: 0.05,
            lateral_velocity_sigma: 0.01,
            encoder_position_sigma: 0.05,
            imu_yaw_sigma: 0.02,
            imu_yaw_rate_sigma: 0.01,
            imu_accel_sigma: 0.1,
            gpr_position_sigma: 0.03,
            gpr_turn_threshold: 0.1,
            gpr_turn_factor: 25.0,
            process_noise: [1e-6, 1e-6, 1e-4, 1e-2, 1e-3, 1e-2, 1e-1, 1e-1],
            initial_sigma: [1e-3, 1e-3, 0.02, 0.05, 0.01, 0.05, 0.1, 0.1],
            initial_x: 0.0,
            initial_y: 0.0,
            initial_yaw: 0.0,
            yaw_from_imu: true,
            reorder_window: 0.1,
        }
    }
}

impl EkfConfig {
    pub fn geometry(&self) -> WheelGeometry {
        WheelGeometry {
            ticks_per_meter: self.ticks_per_meter,
            wheel_radius: self.wheel_radius,
            wheel_separation: self.wheel_separation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("output_rate", self.output_rate),
            ("ticks_per_meter", self.ticks_per_meter),
            ("wheel_radius", self.wheel_radius),
            ("wheel_separation", self.wheel_separation),
            ("encoder_velocity_sigma", self.encoder_velocity_sigma),
            ("encoder_yaw_rate_sigma", self.encoder_yaw_rate_sigma),
            ("lateral_velocity_sigma", self.lateral_velocity_sigma),
            ("encoder_position_sigma", self.encoder_position_sigma),
            ("imu_yaw_sigma", self.imu_yaw_sigma),
            ("imu_yaw_rate_sigma", self.imu_yaw_rate_sigma),
            ("gpr_position_sigma", self.gpr_position_sigma),
            ("gpr_turn_threshold", self.gpr_turn_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive and finite (got {v})")));
            }
        }
        if !(self.gpr_turn_factor >= 1.0) {
            return Err(Error::config("gpr_turn_factor must be at least 1"));
        }
        if !(self.reorder_window >= 0.0) {
            return Err(Error::config("reorder_window must be non-negative"));
        }
        if self.process_noise.iter().chain(&self.initial_sigma).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("process_noise and initial_sigma must be non-negative"));
        }
        if ![self.initial_x, self.initial_y, self.initial_yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::config("initial pose must be finite"));
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(format!("ekf config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        toml::to_string(self).expect("ekf config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = EkfConfig::default();
        c.validate().unwrap();
        assert_eq!((c.gpr_position_sigma, c.gpr_turn_factor, c.gpr_turn_threshold), (0.03, 25.0, 0.1));
        assert_eq!(c.output_rate, 15.0);
        let text = c.to_kv_string();
        assert!(text.contains("wheel_fusion = \"velocity\""));
        assert_eq!(EkfConfig::from_kv_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_and_invalid_documents() {
        let c = EkfConfig::from_kv_str("gpr_enabled = false\nwheel_fusion = \"position\"\n").unwrap();
        assert!(!c.gpr_enabled);
        assert_eq!(c.wheel_fusion, WheelFusion::Position);
        assert!(EkfConfig::from_kv_str("gpr_turn_factor = 0.5\n").is_err());
        assert!(EkfConfig::from_kv_str("imu_yaw_sigma = 0.0\n").is_err());
        assert!(EkfConfig::from_kv_str("unknown = 1\n").is_err());
    }
}
