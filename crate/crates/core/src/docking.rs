//! Docking and undocking state machine of one flying battery.
//!
//! The flying battery climbs from its pad, hovers above the host's platform,
//! descends until it is close and centred, then cuts thrust and drops into
//! the capture funnel. Undocking is a straight climb, a transit back over
//! the pad and a landing.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::Setpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DockPhase {
    Grounded,
    Takeoff,
    ApproachAbove,
    Descend,
    FreeFall,
    Docked,
    UndockAscend,
    Depart,
    Landing,
}

impl DockPhase {
    pub const ALL: [DockPhase; 9] = [
        DockPhase::Grounded,
        DockPhase::Takeoff,
        DockPhase::ApproachAbove,
        DockPhase::Descend,
        DockPhase::FreeFall,
        DockPhase::Docked,
        DockPhase::UndockAscend,
        DockPhase::Depart,
        DockPhase::Landing,
    ];

    /// Phases reachable in one transition. Thrusting phases may also abort
    /// straight to `Landing`.
    pub fn successors(self) -> &'static [DockPhase] {
        use DockPhase::*;
        match self {
            Grounded => &[Takeoff],
            Takeoff => &[ApproachAbove, Landing],
            ApproachAbove => &[Descend, Landing],
            Descend => &[FreeFall, Landing],
            FreeFall => &[Docked, ApproachAbove],
            Docked => &[UndockAscend],
            UndockAscend => &[Depart, Landing],
            Depart => &[Landing],
            Landing => &[Grounded],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DockPhase::Grounded => "grounded",
            DockPhase::Takeoff => "takeoff",
            DockPhase::ApproachAbove => "approach_above",
            DockPhase::Descend => "descend",
            DockPhase::FreeFall => "free_fall",
            DockPhase::Docked => "docked",
            DockPhase::UndockAscend => "undock_ascend",
            DockPhase::Depart => "depart",
            DockPhase::Landing => "landing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    /// Flying under its own thrust.
    pub fn is_thrusting(self) -> bool {
        use DockPhase::*;
        matches!(self, Takeoff | ApproachAbove | Descend | UndockAscend | Depart | Landing)
    }

    /// Integrated as an independent rigid body.
    pub fn is_free_body(self) -> bool {
        self.is_thrusting() || self == DockPhase::FreeFall
    }
}

impl std::fmt::Display for DockPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DockThresholds {
    pub hover_above_gap: f64,
    pub lateral_capture_radius: f64,
    pub drop_height: f64,
    pub descent_rate: f64,
}

impl Default for DockThresholds {
    fn default() -> Self {
        Self {
            hover_above_gap: 0.30,
            lateral_capture_radius: 0.020,
            drop_height: 0.050,
            descent_rate: 0.15,
        }
    }
}

impl DockThresholds {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.hover_above_gap, self.lateral_capture_radius, self.drop_height, self.descent_rate];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err("docking thresholds must be positive".into());
        }
        if self.drop_height > self.hover_above_gap {
            return Err(format!(
                "drop_height {} exceeds hover_above_gap {}",
                self.drop_height, self.hover_above_gap
            ));
        }
        Ok(())
    }
}

/// Scenario-level docking settings: thresholds plus manoeuvre speeds and the
/// contact model.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct DockingConfig {
    pub hover_above_gap: f64,
    pub lateral_capture_radius: f64,
    pub drop_height: f64,
    pub descent_rate: f64,
    /// Vertical speed of takeoff, undock climb and landing, m/s.
    pub climb_rate: f64,
    /// Horizontal speed of the transit from pad to platform, m/s.
    pub approach_speed: f64,
    /// Horizontal speed of the transit from platform back to pad, m/s.
    pub depart_speed: f64,
    /// Slack on gap targets when deciding a climb or descent is complete, m.
    pub gap_tolerance: f64,
    /// Horizontal distance from the hover point to each landing pad, m.
    pub pad_distance: f64,
    /// Platform surface height above the main vehicle's centre of mass, m.
    pub platform_height: f64,
    /// Flying-battery centre of mass above the bottom of its legs, m.
    pub leg_height: f64,
    pub contact_failure_probability: f64,
    /// Friction coefficient between legs and platform.
    pub mu: f64,
}

impl Default for DockingConfig {
    fn default() -> Self {
        let t = DockThresholds::default();
        Self {
            hover_above_gap: t.hover_above_gap,
            lateral_capture_radius: t.lateral_capture_radius,
            drop_height: t.drop_height,
            descent_rate: t.descent_rate,
            climb_rate: 0.5,
            approach_speed: 0.2,
            depart_speed: 1.0,
            gap_tolerance: 0.03,
            pad_distance: 2.5,
            platform_height: 0.05,
            leg_height: 0.05,
            contact_failure_probability: 0.1,
            mu: 0.5,
        }
    }
}

impl DockingConfig {
    pub fn thresholds(&self) -> DockThresholds {
        DockThresholds {
            hover_above_gap: self.hover_above_gap,
            lateral_capture_radius: self.lateral_capture_radius,
            drop_height: self.drop_height,
            descent_rate: self.descent_rate,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.thresholds().validate()?;
        let positive = [
            ("climb_rate", self.climb_rate),
            ("approach_speed", self.approach_speed),
            ("depart_speed", self.depart_speed),
            ("gap_tolerance", self.gap_tolerance),
            ("pad_distance", self.pad_distance),
            ("platform_height", self.platform_height),
            ("leg_height", self.leg_height),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.contact_failure_probability) {
            return Err(format!("contact_failure_probability {} outside [0, 1]", self.contact_failure_probability));
        }
        if !(self.mu >= 0.0) {
            return Err(format!("mu {} must be non-negative", self.mu));
        }
        Ok(())
    }

    /// Offset of the docked flying battery's centre of mass from the main
    /// vehicle's, body frame.
    pub fn mount_offset(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.platform_height + self.leg_height)
    }
}

/// Flying battery relative to the docking platform: horizontal distance of
/// its centre from the platform centre and height of its leg bottoms above
/// the platform surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPose {
    pub lateral: f64,
    pub vertical_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Commands {
    pub dock: bool,
    pub undock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactOutcome {
    pub mechanical_engaged: bool,
    pub electrical_engaged: bool,
    /// Uniform draw consumed for the electrical contact decision.
    pub draw: f64,
}

/// Outcome of a free-fall drop landing `landing_point_lateral` metres from
/// the platform centre. Always consumes exactly one draw from `rng`.
pub fn capture_check<R: Rng + ?Sized>(
    landing_point_lateral: f64,
    thresholds: &DockThresholds,
    contact_failure_probability: f64,
    rng: &mut R,
) -> ContactOutcome {
    let draw: f64 = rng.random();
    let mechanical = landing_point_lateral <= thresholds.lateral_capture_radius;
    ContactOutcome {
        mechanical_engaged: mechanical,
        electrical_engaged: mechanical && draw >= contact_failure_probability,
        draw,
    }
}

/// Everything a transition decision looks at in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub rel: RelPose,
    pub commands: Commands,
    /// Takeoff climb reached cruise altitude.
    pub climb_done: bool,
    /// Moving reference has arrived at its target.
    pub reference_settled: bool,
    /// Depart transit is over the pad.
    pub over_pad: bool,
    pub on_ground: bool,
    /// Set on the step a falling flying battery meets the platform.
    pub impact: Option<ContactOutcome>,
}

/// Transition rule of the state machine.
pub fn next_phase(phase: DockPhase, thresholds: &DockThresholds, gap_tolerance: f64, obs: &Observation) -> DockPhase {
    use DockPhase::*;
    let rel = obs.rel;
    let centred = rel.lateral <= thresholds.lateral_capture_radius;
    match phase {
        Grounded if obs.commands.dock => Takeoff,
        Takeoff if obs.climb_done => ApproachAbove,
        ApproachAbove
            if obs.reference_settled
                && centred
                && (rel.vertical_gap - thresholds.hover_above_gap).abs() <= gap_tolerance =>
        {
            Descend
        }
        Descend if centred && rel.vertical_gap <= thresholds.drop_height => FreeFall,
        FreeFall => match obs.impact {
            Some(o) if o.mechanical_engaged => Docked,
            Some(_) => ApproachAbove,
            None => FreeFall,
        },
        Docked if obs.commands.undock => UndockAscend,
        UndockAscend if rel.vertical_gap >= thresholds.hover_above_gap - gap_tolerance => Depart,
        Depart if obs.over_pad => Landing,
        Landing if obs.on_ground => Grounded,
        p => p,
    }
}

/// Pure form of one machine step on relative pose alone, for callers that
/// carry no geometry: climb, transit and ground flags are taken as satisfied
/// only when the pose says so.
pub fn fsm_step(phase: DockPhase, thresholds: &DockThresholds, rel_pose: RelPose, commands: Commands) -> DockPhase {
    let obs = Observation {
        rel: rel_pose,
        commands,
        climb_done: false,
        reference_settled: true,
        over_pad: false,
        on_ground: false,
        impact: None,
    };
    next_phase(phase, thresholds, 0.03, &obs)
}

/// World-frame inputs for one step of [`DockingFsm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsmInputs {
    pub fb_position: Vector3<f64>,
    /// Centre of the platform surface, world frame.
    pub platform_center: Vector3<f64>,
    pub commands: Commands,
    pub impact: Option<ContactOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsmOutput {
    pub setpoint: Setpoint,
    pub thrust_enabled: bool,
    pub transition: Option<(DockPhase, DockPhase)>,
    pub rel: RelPose,
}

#[derive(Debug, Clone)]
pub struct DockingFsm {
    phase: DockPhase,
    config: DockingConfig,
    /// Flying-battery centre of mass when resting on its pad.
    pad: Vector3<f64>,
    reference: Vector3<f64>,
}

const PAD_ARRIVAL_RADIUS: f64 = 0.1;
const GROUND_CONTACT: f64 = 0.005;
/// Distance at which the moving reference counts as arrived; the platform
/// target drifts with the host, so exact arrival never happens.
const SETTLE_TOLERANCE: f64 = 1e-3;

fn approach(from: Vector3<f64>, to: Vector3<f64>, max_step: f64) -> Vector3<f64> {
    let d = to - from;
    let n = d.norm();
    if n <= max_step {
        to
    } else {
        from + d * (max_step / n)
    }
}

fn approach_split(from: Vector3<f64>, to: Vector3<f64>, lateral_step: f64, vertical_step: f64) -> Vector3<f64> {
    let xy = approach(Vector3::new(from.x, from.y, 0.0), Vector3::new(to.x, to.y, 0.0), lateral_step);
    let dz = (to.z - from.z).clamp(-vertical_step, vertical_step);
    Vector3::new(xy.x, xy.y, from.z + dz)
}

impl DockingFsm {
    pub fn new(config: DockingConfig, pad: Vector3<f64>) -> Self {
        Self { phase: DockPhase::Grounded, config, pad, reference: pad }
    }

    pub fn phase(&self) -> DockPhase {
        self.phase
    }

    pub fn pad(&self) -> Vector3<f64> {
        self.pad
    }

    pub fn config(&self) -> &DockingConfig {
        &self.config
    }

    pub fn rel_pose(&self, fb_position: &Vector3<f64>, platform_center: &Vector3<f64>) -> RelPose {
        RelPose {
            lateral: (fb_position - platform_center).xy().norm(),
            vertical_gap: fb_position.z - self.config.leg_height - platform_center.z,
        }
    }

    /// Centre-of-mass height for a given leg gap above the platform.
    fn above_platform(&self, platform: &Vector3<f64>, gap: f64) -> Vector3<f64> {
        Vector3::new(platform.x, platform.y, platform.z + self.config.leg_height + gap)
    }

    /// Forces the machine into `phase` with the reference at `position`,
    /// e.g. when the host places a docked unit.
    pub fn reset_to(&mut self, phase: DockPhase, position: Vector3<f64>) {
        self.phase = phase;
        self.reference = position;
    }

    /// Vertical landing below the current reference, aiming slightly under
    /// the ground so touchdown is certain.
    fn touchdown_target(&self) -> Vector3<f64> {
        Vector3::new(self.reference.x, self.reference.y, self.pad.z - 0.05)
    }

    /// Abandons the current manoeuvre and lands in place. Returns the
    /// transition taken, if any.
    pub fn abort(&mut self, fb_position: Vector3<f64>) -> Option<(DockPhase, DockPhase)> {
        let from = self.phase;
        if !from.successors().contains(&DockPhase::Landing) {
            return None;
        }
        self.phase = DockPhase::Landing;
        self.reference = fb_position;
        Some((from, DockPhase::Landing))
    }

    /// Puts a grounded unit back on its pad, as after a ground swap.
    pub fn return_to_pad(&mut self) {
        self.phase = DockPhase::Grounded;
        self.reference = self.pad;
    }

    pub fn step(&mut self, inputs: &FsmInputs, dt: f64) -> FsmOutput {
        use DockPhase::*;
        let c = self.config;
        let th = c.thresholds();
        let platform = inputs.platform_center;
        let rel = self.rel_pose(&inputs.fb_position, &platform);
        let cruise = self.above_platform(&platform, c.hover_above_gap);
        let pad_air = Vector3::new(self.pad.x, self.pad.y, cruise.z);

        // Target the current phase is steering towards.
        let target = match self.phase {
            Takeoff => Vector3::new(self.pad.x, self.pad.y, cruise.z),
            ApproachAbove => cruise,
            Descend => self.above_platform(&platform, c.drop_height - 0.01),
            UndockAscend => cruise,
            Depart => pad_air,
            Landing => self.touchdown_target(),
            Grounded | FreeFall | Docked => inputs.fb_position,
        };

        let settled = (self.reference - target).norm() <= SETTLE_TOLERANCE;
        let obs = Observation {
            rel,
            commands: inputs.commands,
            climb_done: self.phase == Takeoff && settled && (inputs.fb_position.z - cruise.z).abs() <= c.gap_tolerance,
            reference_settled: settled,
            over_pad: (inputs.fb_position - pad_air).xy().norm() <= PAD_ARRIVAL_RADIUS && settled,
            on_ground: inputs.fb_position.z <= self.pad.z + GROUND_CONTACT,
            impact: inputs.impact,
        };
        let before = self.phase;
        let after = next_phase(before, &th, c.gap_tolerance, &obs);
        let transition = (after != before).then_some((before, after));
        if let Some((_, to)) = transition {
            self.phase = to;
            match to {
                Takeoff => self.reference = self.pad,
                UndockAscend => self.reference = inputs.fb_position,
                ApproachAbove if before == FreeFall => self.reference = inputs.fb_position,
                _ => {}
            }
        }

        // Advance the moving reference for the (possibly new) phase.
        let previous = self.reference;
        let vertical = c.climb_rate * dt;
        self.reference = match self.phase {
            Takeoff => approach_split(self.reference, Vector3::new(self.pad.x, self.pad.y, cruise.z), 0.0, vertical),
            ApproachAbove => approach_split(self.reference, cruise, c.approach_speed * dt, vertical),
            Descend => {
                let goal = self.above_platform(&platform, c.drop_height - 0.01);
                // Follow the platform laterally, descend at the set rate.
                let z = (self.reference.z - c.descent_rate * dt).max(goal.z);
                Vector3::new(goal.x, goal.y, z)
            }
            UndockAscend => {
                let z = (self.reference.z + vertical).min(cruise.z);
                Vector3::new(platform.x, platform.y, z)
            }
            Depart => approach_split(self.reference, pad_air, c.depart_speed * dt, vertical),
            Landing => approach_split(self.reference, self.touchdown_target(), 0.0, vertical),
            Grounded => self.pad,
            FreeFall | Docked => inputs.fb_position,
        };
        let velocity = if self.phase.is_thrusting() && dt > 0.0 {
            (self.reference - previous) / dt
        } else {
            Vector3::zeros()
        };

        FsmOutput {
            setpoint: Setpoint { velocity, ..Setpoint::hold(self.reference) },
            thrust_enabled: self.phase.is_thrusting(),
            transition,
            rel,
        }
    }
}

/// Dock and undock durations measured from one unit's phase transitions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ManeuverDurations {
    /// Takeoff to Docked, s.
    pub dock: Option<f64>,
    /// Undock command to Grounded, s.
    pub undock: Option<f64>,
}

/// Measures the first complete dock and undock in a `(time, from, to)` trace.
pub fn maneuver_durations(trace: &[(f64, DockPhase, DockPhase)]) -> ManeuverDurations {
    let mut out = ManeuverDurations::default();
    let mut takeoff = None;
    let mut undock = None;
    for &(t, from, to) in trace {
        match (from, to) {
            (DockPhase::Grounded, DockPhase::Takeoff) if out.dock.is_none() => takeoff = Some(t),
            (_, DockPhase::Docked) if out.dock.is_none() => out.dock = takeoff.map(|t0| t - t0),
            (DockPhase::Docked, DockPhase::UndockAscend) if out.dock.is_some() && undock.is_none() => undock = Some(t),
            (_, DockPhase::Grounded) if out.undock.is_none() => out.undock = undock.map(|t0| t - t0),
            _ => {}
        }
    }
    out
}
