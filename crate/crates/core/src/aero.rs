//! Parametric downwash interference between two stacked multirotors.
//!
//! Only the lower vehicle is disturbed. The force is purely vertical and the
//! torque tilts the lower vehicle towards the upper one.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownwashModel {
    /// Fraction of the upper vehicle's thrust felt as downforce at zero offset and gap.
    pub peak_force_ratio: f64,
    /// Gaussian lateral scale, m.
    pub lateral_decay: f64,
    /// Exponential vertical scale, m.
    pub vertical_decay: f64,
    /// Aligning torque per metre of lateral offset at full envelope, N·m/m.
    pub align_torque_gain: f64,
}

impl Default for DownwashModel {
    fn default() -> Self {
        Self {
            peak_force_ratio: 0.25,
            lateral_decay: 0.12,
            vertical_decay: 0.5,
            align_torque_gain: 0.05,
        }
    }
}

impl DownwashModel {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.peak_force_ratio, self.lateral_decay, self.vertical_decay, self.align_torque_gain];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err("downwash parameters must be positive".into());
        }
        if self.peak_force_ratio > 1.0 {
            return Err(format!("peak_force_ratio {} exceeds 1", self.peak_force_ratio));
        }
        Ok(())
    }

    /// Envelope in `[0, 1]` for a lower-to-upper offset; zero when the
    /// "upper" vehicle is actually below.
    pub fn envelope(&self, rel_pos: &Vector3<f64>) -> f64 {
        if rel_pos.z < 0.0 {
            return 0.0;
        }
        let lateral = rel_pos.xy().norm() / self.lateral_decay;
        (-lateral * lateral).exp() * (-rel_pos.z / self.vertical_decay).exp()
    }
}

/// World-frame force on the lower vehicle. `rel_pos` is the upper vehicle's
/// position minus the lower's.
pub fn downwash_force(model: &DownwashModel, rel_pos: &Vector3<f64>, upper_thrust: f64) -> Vector3<f64> {
    let magnitude = model.peak_force_ratio * upper_thrust.max(0.0) * model.envelope(rel_pos);
    Vector3::new(0.0, 0.0, -magnitude)
}

/// Body-frame torque on the lower vehicle, small-tilt approximation. Its
/// direction tilts the lower vehicle's thrust towards the upper vehicle.
pub fn align_torque(model: &DownwashModel, rel_pos: &Vector3<f64>) -> Vector3<f64> {
    let scale = model.align_torque_gain * model.envelope(rel_pos);
    // A +x offset of the upper vehicle needs a positive rotation about +y.
    Vector3::new(-rel_pos.y, rel_pos.x, 0.0) * scale
}
