//! Scenario files: TOML sections of `key = value` pairs with documented
//! defaults. Unknown keys are rejected with their location.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aero::DownwashModel;
use crate::control::{CascadedPidConfig, FeedforwardMap};
use crate::docking::DockingConfig;
use crate::dynamics::VehicleParams;
use crate::powertrain::{calibrate_k_p, BatteryPack, SwitchCircuit, DEFAULT_DIODE_DROP, DEFAULT_INTERNAL_RESISTANCE};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown scenario key `{0}`")]
    UnknownKey(String),
}

fn invalid(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehiclesSection {
    pub main_mass: f64,
    pub main_arm_length: f64,
    pub main_prop_diameter: f64,
    pub main_max_thrust: f64,
    pub main_inertia: [f64; 3],
    pub main_k_p: f64,
    /// When set, `main_k_p` is replaced by the value that makes the main
    /// vehicle hover for this long on the primary pack, s.
    pub main_kp_solo_time: Option<f64>,
    pub fb_mass: f64,
    pub fb_arm_length: f64,
    pub fb_prop_diameter: f64,
    pub fb_max_thrust: f64,
    pub fb_inertia: [f64; 3],
    pub fb_k_p: f64,
}

impl Default for VehiclesSection {
    fn default() -> Self {
        let m = VehicleParams::main_quadcopter();
        let f = VehicleParams::flying_battery();
        let diag = |p: &VehicleParams| [p.inertia[(0, 0)], p.inertia[(1, 1)], p.inertia[(2, 2)]];
        Self {
            main_mass: m.mass,
            main_arm_length: m.arm_length,
            main_prop_diameter: m.prop_diameter,
            main_max_thrust: m.max_thrust,
            main_inertia: diag(&m),
            main_k_p: m.k_p,
            main_kp_solo_time: None,
            fb_mass: f.mass,
            fb_arm_length: f.arm_length,
            fb_prop_diameter: f.prop_diameter,
            fb_max_thrust: f.max_thrust,
            fb_inertia: diag(&f),
            fb_k_p: f.k_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatteriesSection {
    pub primary_cells: u32,
    pub primary_capacity_ah: f64,
    pub primary_mass: f64,
    pub secondary_cells: u32,
    pub secondary_capacity_ah: f64,
    pub secondary_mass: f64,
    pub fb_own_cells: u32,
    pub fb_own_capacity_ah: f64,
    pub fb_own_mass: f64,
    pub internal_resistance: f64,
}

impl Default for BatteriesSection {
    fn default() -> Self {
        let (p, s, o) = (BatteryPack::primary(), BatteryPack::secondary(), BatteryPack::flying_battery_own());
        Self {
            primary_cells: p.cell_count,
            primary_capacity_ah: p.capacity_ah,
            primary_mass: p.mass,
            secondary_cells: s.cell_count,
            secondary_capacity_ah: s.capacity_ah,
            secondary_mass: s.mass,
            fb_own_cells: o.cell_count,
            fb_own_capacity_ah: o.capacity_ah,
            fb_own_mass: o.mass,
            internal_resistance: DEFAULT_INTERNAL_RESISTANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitSection {
    pub diode_drop: f64,
}

impl Default for CircuitSection {
    fn default() -> Self {
        Self { diode_drop: DEFAULT_DIODE_DROP }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub pos_wn: f64,
    pub pos_zeta: f64,
    pub att_wn: f64,
    pub att_zeta: f64,
    pub max_tilt_deg: f64,
    pub feedforward: bool,
    pub ff_lateral_max: f64,
    pub ff_lateral_bins: usize,
    pub ff_vertical_max: f64,
    pub ff_vertical_bins: usize,
    /// Map exported by an earlier run; when absent the map is built from
    /// downwash-model samples.
    pub ff_map_csv: Option<String>,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            pos_wn: 2.0,
            pos_zeta: 0.8,
            att_wn: 15.0,
            att_zeta: 0.8,
            max_tilt_deg: 40.0,
            feedforward: true,
            ff_lateral_max: 0.4,
            ff_lateral_bins: 9,
            ff_vertical_max: 1.0,
            ff_vertical_bins: 11,
            ff_map_csv: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    PrimaryDepleted,
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionSection {
    pub fleet_size: usize,
    /// Disables all dispatches, leaving a solo hover.
    pub dispatch: bool,
    /// Landed flying batteries get a fresh pack after the turnaround delay.
    pub ground_recharge: bool,
    pub turnaround_delay: f64,
    pub hover_position: [f64; 3],
    pub termination: Termination,
    /// Time from a failed electrical contact to the undock command, s.
    pub contact_detect_delay: f64,
    /// Time of the first dispatch, s.
    pub first_dispatch: f64,
}

impl Default for MissionSection {
    fn default() -> Self {
        Self {
            fleet_size: 2,
            dispatch: true,
            ground_recharge: true,
            turnaround_delay: 60.0,
            hover_position: [0.0, 0.0, 1.5],
            termination: Termination::PrimaryDepleted,
            contact_detect_delay: 1.0,
            first_dispatch: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub seed: u64,
    /// Wall-clock limit on simulated time, s.
    pub duration: f64,
    /// Physics steps per telemetry row.
    pub telemetry_decimation: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt: 1e-3, seed: 1, duration: 7200.0, telemetry_decimation: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub vehicles: VehiclesSection,
    pub batteries: BatteriesSection,
    pub circuit: CircuitSection,
    pub downwash: DownwashModel,
    pub control: ControlSection,
    pub docking: DockingConfig,
    pub mission: MissionSection,
    pub sim: SimSection,
}

pub const SECTIONS: [&str; 8] = ["vehicles", "batteries", "circuit", "downwash", "control", "docking", "mission", "sim"];

pub const SOLO_HOVER: &str = include_str!("../scenarios/solo_hover.toml");
pub const PAPER_DEMO: &str = include_str!("../scenarios/paper_demo.toml");

/// Bundled scenarios by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "solo_hover" => Some(SOLO_HOVER),
        "paper_demo" => Some(PAPER_DEMO),
        _ => None,
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a file, or a bundled scenario when `path` names one.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        if !path.exists() {
            if let Some(text) = path.to_str().and_then(bundled) {
                return Self::parse(text);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Returns a copy with one key replaced. `key` is `section.key`, or a
    /// bare key when it is unique across sections.
    pub fn with_override(&self, key: &str, value: f64) -> Result<Self, ScenarioError> {
        let mut doc = toml::Value::try_from(self).map_err(invalid)?;
        let table = doc.as_table_mut().expect("scenario serialises to a table");
        let (section, field) = match key.split_once('.') {
            Some((s, f)) => (s.to_string(), f.to_string()),
            None => {
                let owners: Vec<&String> = table
                    .iter()
                    .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
                    .map(|(k, _)| k)
                    .collect();
                match owners.as_slice() {
                    [one] => ((*one).clone(), key.to_string()),
                    [] => return Err(ScenarioError::UnknownKey(key.to_string())),
                    _ => return Err(ScenarioError::Invalid(format!("key `{key}` is ambiguous; qualify it with its section"))),
                }
            }
        };
        let entry = table
            .get_mut(&section)
            .and_then(|s| s.as_table_mut())
            .and_then(|t| t.get_mut(&field))
            .ok_or_else(|| ScenarioError::UnknownKey(key.to_string()))?;
        *entry = match entry {
            toml::Value::Integer(_) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
            toml::Value::Integer(_) => return Err(ScenarioError::Invalid(format!("`{key}` takes an integer, got {value}"))),
            toml::Value::Boolean(_) => toml::Value::Boolean(value != 0.0),
            _ => toml::Value::Float(value),
        };
        let s: Scenario = doc.try_into().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Keys that [`Scenario::with_override`] accepts, qualified by section.
    pub fn keys(&self) -> Vec<String> {
        let doc = toml::Value::try_from(self).expect("scenario serialises");
        let mut out = Vec::new();
        for (section, v) in doc.as_table().into_iter().flatten() {
            for (k, _) in v.as_table().into_iter().flatten() {
                out.push(format!("{section}.{k}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.main_params()?.validate().map_err(invalid)?;
        self.fb_params().validate().map_err(invalid)?;
        self.primary_pack()?;
        self.secondary_pack()?;
        self.fb_own_pack()?;
        SwitchCircuit::new(self.circuit.diode_drop).map_err(invalid)?;
        self.downwash.validate().map_err(invalid)?;
        self.docking.validate().map_err(invalid)?;
        let c = &self.control;
        if !(c.pos_wn > 0.0 && c.att_wn > 0.0 && c.pos_zeta > 0.0 && c.att_zeta > 0.0) {
            return Err(invalid("control bandwidths and damping must be positive"));
        }
        if !(c.max_tilt_deg > 0.0 && c.max_tilt_deg < 80.0) {
            return Err(invalid(format!("max_tilt_deg {} outside (0, 80)", c.max_tilt_deg)));
        }
        if c.ff_lateral_bins == 0 || c.ff_vertical_bins == 0 || !(c.ff_lateral_max > 0.0 && c.ff_vertical_max > 0.0) {
            return Err(invalid("feedforward grid must be non-empty"));
        }
        let m = &self.mission;
        if m.fleet_size < 1 {
            return Err(invalid("fleet_size must be at least 1; use dispatch = false for a solo flight"));
        }
        for (name, v) in [
            ("turnaround_delay", m.turnaround_delay),
            ("contact_detect_delay", m.contact_detect_delay),
            ("first_dispatch", m.first_dispatch),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if m.hover_position.iter().any(|v| !v.is_finite()) || m.hover_position[2] <= 0.0 {
            return Err(invalid("hover_position must be finite and above ground"));
        }
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt <= 0.01) {
            return Err(invalid(format!("dt {} outside (0, 0.01]", s.dt)));
        }
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return Err(invalid(format!("duration {} must be positive", s.duration)));
        }
        if s.telemetry_decimation == 0 {
            return Err(invalid("telemetry_decimation must be at least 1"));
        }
        if let Some(t) = self.vehicles.main_kp_solo_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid(format!("main_kp_solo_time {t} must be positive")));
            }
        }
        Ok(())
    }

    /// Main vehicle as configured, before any calibration.
    pub fn main_params(&self) -> Result<VehicleParams, ScenarioError> {
        let v = &self.vehicles;
        Ok(VehicleParams {
            mass: v.main_mass,
            arm_length: v.main_arm_length,
            prop_diameter: v.main_prop_diameter,
            max_thrust: v.main_max_thrust,
            inertia: Matrix3::from_diagonal(&Vector3::from(v.main_inertia)),
            k_p: v.main_k_p,
        })
    }

    pub fn fb_params(&self) -> VehicleParams {
        let v = &self.vehicles;
        VehicleParams {
            mass: v.fb_mass,
            arm_length: v.fb_arm_length,
            prop_diameter: v.fb_prop_diameter,
            max_thrust: v.fb_max_thrust,
            inertia: Matrix3::from_diagonal(&Vector3::from(v.fb_inertia)),
            k_p: v.fb_k_p,
        }
    }

    fn pack(&self, cells: u32, capacity: f64, mass: f64) -> Result<BatteryPack, ScenarioError> {
        BatteryPack::new(cells, capacity, mass, self.batteries.internal_resistance).map_err(invalid)
    }

    pub fn primary_pack(&self) -> Result<BatteryPack, ScenarioError> {
        let b = &self.batteries;
        self.pack(b.primary_cells, b.primary_capacity_ah, b.primary_mass)
    }

    pub fn secondary_pack(&self) -> Result<BatteryPack, ScenarioError> {
        let b = &self.batteries;
        self.pack(b.secondary_cells, b.secondary_capacity_ah, b.secondary_mass)
    }

    pub fn fb_own_pack(&self) -> Result<BatteryPack, ScenarioError> {
        let b = &self.batteries;
        self.pack(b.fb_own_cells, b.fb_own_capacity_ah, b.fb_own_mass)
    }

    /// Main vehicle with `k_p` calibrated when the scenario asks for it.
    pub fn calibrated_main_params(&self) -> Result<VehicleParams, ScenarioError> {
        let mut p = self.main_params()?;
        if let Some(target) = self.vehicles.main_kp_solo_time {
            p.k_p = calibrate_k_p(p.mass, &self.primary_pack()?, self.circuit.diode_drop, target, self.sim.dt)
                .map_err(invalid)?;
        }
        Ok(p)
    }

    pub fn controller_config(&self, params: &VehicleParams) -> CascadedPidConfig {
        let c = &self.control;
        let mut cfg = CascadedPidConfig::pole_placement(params, c.pos_wn, c.pos_zeta, c.att_wn, c.att_zeta);
        cfg.max_tilt = c.max_tilt_deg.to_radians();
        cfg
    }

    pub fn ff_template(&self) -> FeedforwardMap {
        let c = &self.control;
        FeedforwardMap::zeros(c.ff_lateral_max, c.ff_lateral_bins, c.ff_vertical_max, c.ff_vertical_bins)
    }

    pub fn hover_position(&self) -> Vector3<f64> {
        Vector3::from(self.mission.hover_position)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_defaults() {
        assert_eq!(Scenario::parse("").unwrap(), Scenario::default());
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = Scenario::parse("[vehicles]\nmain_mass = 0.8\nmasss = 1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("masss"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Scenario::parse("[sim]\ndt = 0.0\n").is_err());
        assert!(Scenario::parse("[mission]\nfleet_size = 0\n").is_err());
        assert!(Scenario::parse("[docking]\ncontact_failure_probability = 1.5\n").is_err());
    }

    #[test]
    fn overrides() {
        let s = Scenario::default();
        let t = s.with_override("contact_failure_probability", 0.5).unwrap();
        assert_eq!(t.docking.contact_failure_probability, 0.5);
        let t = s.with_override("mission.fleet_size", 3.0).unwrap();
        assert_eq!(t.mission.fleet_size, 3);
        assert!(matches!(s.with_override("nope", 1.0), Err(ScenarioError::UnknownKey(_))));
        assert!(s.with_override("mission.fleet_size", 1.5).is_err());
        assert!(s.keys().contains(&"mission.turnaround_delay".to_string()));
    }

    #[test]
    fn bundled_scenarios_parse() {
        for name in ["solo_hover", "paper_demo"] {
            Scenario::parse(bundled(name).unwrap()).unwrap();
        }
    }
}
