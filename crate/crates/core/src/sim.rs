//! Fixed-step co-simulation of the main vehicle, its flying batteries and
//! the power system on one deterministic timeline.
//!
//! Each step runs the docking machines, the controllers, the downwash model,
//! rigid-body integration (the docked pair as one composite body), the
//! electrical model and finally the mission rules. Events raised during a
//! step are stamped with the time at its end.

use std::io::Write;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::aero::{align_torque, downwash_force};
use crate::control::{build_ff_map, model_samples, CascadedController, ControlError, FeedforwardMap, Setpoint};
use crate::docking::{capture_check, Commands, DockPhase, DockingFsm, FsmInputs};
use crate::dynamics::{
    composite_com_offset, composite_params, contact_forces, step_rigid_body, DynamicsError, RigidBodyState,
    RotorMixer, VehicleParams, Wrench,
};
use crate::mission::{summarize, EndReason, EventKind, Ledger, MissionLog, MissionSummary};
use crate::powertrain::{
    command_switch, constant_power_endurance, discharge, hover_power, ocv, rotor_coefficient, rotor_power,
    solve_bus, ActiveSource, BatteryPack, BusSample, PowerError, SwitchCircuit, SwitchCommand,
};
use crate::scenario::{Scenario, ScenarioError, Termination};
use crate::telemetry::{FbSample, TelemetryError, TelemetryRow, TelemetryWriter};

/// Restitution of a flying battery bouncing off the platform rim.
const BOUNCE_RESTITUTION: f64 = 0.3;
/// Platform acceleration above which a free-fall drop is flagged, m/s².
const FREE_FALL_ACCEL_WARNING: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("halted at step {step}: non-finite value in {subsystem} ({detail})")]
    NonFinite { step: u64, subsystem: String, detail: String },
    #[error("power system failure at step {step}: {source}")]
    Power { step: u64, source: PowerError },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid simulation setup: {0}")]
    Setup(String),
}

impl SimError {
    /// Numeric failures as opposed to configuration problems.
    pub fn is_numeric(&self) -> bool {
        matches!(self, SimError::NonFinite { .. } | SimError::Power { .. })
    }
}

/// Integer-scaled simulation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub step_index: u64,
    pub dt: f64,
}

impl SimClock {
    pub fn t(&self) -> f64 {
        self.step_index as f64 * self.dt
    }
}

#[derive(Debug, Clone)]
pub struct FlyingBattery {
    pub id: usize,
    pub state: RigidBodyState,
    pub fsm: DockingFsm,
    controller: CascadedController,
    pub rotors: [f64; 4],
    /// Pack powering the unit's own rotors.
    pub own_pack: BatteryPack,
    /// Pack delivered to the main vehicle.
    pub payload: BatteryPack,
    dock_cmd: bool,
    undock_cmd: bool,
    setpoint: Setpoint,
    /// Time a landed unit will have fresh packs.
    ready_at: Option<f64>,
    failed_contact_at: Option<f64>,
    accel_warned: bool,
}

impl FlyingBattery {
    pub fn phase(&self) -> DockPhase {
        self.fsm.phase()
    }

    fn available(&self) -> bool {
        self.phase() == DockPhase::Grounded && self.ready_at.is_none() && self.payload.is_live() && self.own_pack.is_live()
    }
}

/// Electrical state of the last step, kept for telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSample {
    pub bus: BusSample,
    pub loss: f64,
    pub normal_force: f64,
    pub primary_ocv: f64,
    pub secondary_ocv: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub clock: SimClock,
    scenario: Scenario,
    pub main_params: VehicleParams,
    fb_params: VehicleParams,
    composite: VehicleParams,
    /// Composite centre of mass relative to the main vehicle's, body frame.
    com_offset: Vector3<f64>,
    mount_offset: Vector3<f64>,
    pub main: RigidBodyState,
    main_controller: CascadedController,
    main_mixer: RotorMixer,
    fb_mixer: RotorMixer,
    pub main_rotors: [f64; 4],
    hover: Vector3<f64>,
    pub fbs: Vec<FlyingBattery>,
    docked: Option<usize>,
    electrical: bool,
    pub circuit: SwitchCircuit,
    pub primary: BatteryPack,
    rng: ChaCha8Rng,
    ff_map: FeedforwardMap,
    pub log: MissionLog,
    pub ledger: Ledger,
    k_main: f64,
    k_fb: f64,
    /// Unit currently sent to the platform or sitting on it.
    assigned: Option<usize>,
    pending_labels: Vec<String>,
    last: Option<StepSample>,
    end: Option<EndReason>,
}

fn offset_point(state: &RigidBodyState, body_offset: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let r = state.attitude * body_offset;
    let w = state.attitude * state.angular_velocity;
    (state.position + r, state.velocity + w.cross(&r))
}

fn numeric(step: u64, subsystem: impl Into<String>) -> impl FnOnce(DynamicsError) -> SimError {
    let subsystem = subsystem.into();
    move |e| SimError::NonFinite { step, subsystem, detail: e.to_string() }
}

fn power_err(step: u64) -> impl FnOnce(PowerError) -> SimError {
    move |source| SimError::Power { step, source }
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let main_params = scenario.calibrated_main_params()?;
        let fb_params = scenario.fb_params();
        let dock = scenario.docking;
        let mount_offset = dock.mount_offset();
        let composite = composite_params(&main_params, &fb_params, &mount_offset)
            .map_err(|e| SimError::Setup(e.to_string()))?;
        let com_offset = composite_com_offset(main_params.mass, fb_params.mass, &mount_offset);
        let hover = scenario.hover_position();

        let template = scenario.ff_template();
        let ff_map = match &scenario.control.ff_map_csv {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| SimError::Setup(format!("cannot read feedforward map {path}: {e}")))?;
                FeedforwardMap::from_csv(&text)?
            }
            None => build_ff_map(&template, &model_samples(&template, &scenario.downwash, fb_params.hover_thrust(), 4)).map,
        };

        let fleet = scenario.mission.fleet_size;
        let fbs = (0..fleet)
            .map(|id| -> Result<FlyingBattery, SimError> {
                let angle = std::f64::consts::TAU * id as f64 / fleet as f64;
                let pad = Vector3::new(
                    hover.x + dock.pad_distance * angle.cos(),
                    hover.y + dock.pad_distance * angle.sin(),
                    dock.leg_height,
                );
                Ok(FlyingBattery {
                    id,
                    state: RigidBodyState::at_rest(pad),
                    fsm: DockingFsm::new(dock, pad),
                    controller: CascadedController::new(scenario.controller_config(&fb_params), fb_params.mass),
                    rotors: [0.0; 4],
                    own_pack: scenario.fb_own_pack()?,
                    payload: scenario.secondary_pack()?,
                    dock_cmd: false,
                    undock_cmd: false,
                    setpoint: Setpoint::hold(pad),
                    ready_at: None,
                    failed_contact_at: None,
                    accel_warned: false,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            clock: SimClock { step_index: 0, dt: scenario.sim.dt },
            main_controller: CascadedController::new(scenario.controller_config(&main_params), main_params.mass),
            main_mixer: RotorMixer::new(&main_params),
            fb_mixer: RotorMixer::new(&fb_params),
            main: RigidBodyState::at_rest(hover),
            main_rotors: [0.0; 4],
            k_main: rotor_coefficient(main_params.k_p, 4),
            k_fb: rotor_coefficient(fb_params.k_p, 4),
            circuit: SwitchCircuit::new(scenario.circuit.diode_drop).map_err(|e| SimError::Setup(e.to_string()))?,
            primary: scenario.primary_pack()?,
            rng: ChaCha8Rng::seed_from_u64(scenario.sim.seed),
            scenario: scenario.clone(),
            main_params,
            fb_params,
            composite,
            com_offset,
            mount_offset,
            hover,
            fbs,
            docked: None,
            electrical: false,
            ff_map,
            log: MissionLog::default(),
            ledger: Ledger::default(),
            assigned: None,
            pending_labels: Vec::new(),
            last: None,
            end: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn ff_map(&self) -> &FeedforwardMap {
        &self.ff_map
    }

    pub fn set_ff_map(&mut self, map: FeedforwardMap) {
        self.ff_map = map;
    }

    pub fn time(&self) -> f64 {
        self.clock.t()
    }

    pub fn docked(&self) -> Option<usize> {
        self.docked
    }

    pub fn electrical_contact(&self) -> bool {
        self.electrical
    }

    pub fn finished(&self) -> Option<EndReason> {
        self.end
    }

    pub fn last_sample(&self) -> Option<&StepSample> {
        self.last.as_ref()
    }

    pub fn hover_setpoint(&self) -> Vector3<f64> {
        self.hover
    }

    pub fn platform_center(&self) -> Vector3<f64> {
        offset_point(&self.main, &Vector3::new(0.0, 0.0, self.scenario.docking.platform_height)).0
    }

    /// Mass properties the main vehicle currently flies with.
    pub fn main_body_params(&self) -> &VehicleParams {
        if self.docked.is_some() {
            &self.composite
        } else {
            &self.main_params
        }
    }

    /// Starts the world with `unit` already docked, in electrical contact and
    /// powering the bus.
    pub fn dock_at_start(&mut self, unit: usize) -> Result<(), SimError> {
        if self.docked.is_some() || unit >= self.fbs.len() {
            return Err(SimError::Setup(format!("cannot dock unit {unit} at start")));
        }
        let (pos, vel) = offset_point(&self.main, &self.mount_offset);
        let fb = &mut self.fbs[unit];
        fb.state = RigidBodyState { position: pos, velocity: vel, ..self.main };
        fb.fsm.reset_to(DockPhase::Docked, pos);
        self.attach(unit, true)?;
        self.assigned = Some(unit);
        Ok(())
    }

    fn emit(&mut self, events: Vec<EventKind>) {
        let step = self.clock.step_index;
        let t = self.clock.t();
        for kind in events {
            self.pending_labels.push(kind.label());
            self.log.push(step, t, kind);
        }
    }

    fn set_main_mass_properties(&mut self) {
        let p = self.main_body_params().clone();
        let cfg = self.scenario.controller_config(&p);
        self.main_controller.config = cfg;
        self.main_controller.mass = p.mass;
    }

    /// Couples a unit to the platform. Returns the events raised.
    fn attach(&mut self, unit: usize, electrical: bool) -> Result<Vec<EventKind>, SimError> {
        let mut events = vec![EventKind::Docked { unit }];
        self.docked = Some(unit);
        self.electrical = electrical;
        self.set_main_mass_properties();
        if electrical {
            self.circuit.set_secondary_present(true);
            events.push(EventKind::ElectricalContact { unit });
            self.circuit = command_switch(&self.circuit, SwitchCommand::UseSecondary)
                .map_err(power_err(self.clock.step_index))?;
            events.push(EventKind::Switch { to: SwitchCommand::UseSecondary });
        } else {
            self.fbs[unit].failed_contact_at = Some(self.clock.t());
            events.push(EventKind::ContactFailure { unit });
        }
        Ok(events)
    }

    fn detach(&mut self, unit: usize) -> Vec<EventKind> {
        let (pos, vel) = offset_point(&self.main, &self.mount_offset);
        let fb = &mut self.fbs[unit];
        fb.state = RigidBodyState { position: pos, velocity: vel, ..self.main };
        fb.controller.reset();
        fb.failed_contact_at = None;
        self.docked = None;
        self.electrical = false;
        self.circuit.set_secondary_present(false);
        self.set_main_mass_properties();
        vec![EventKind::Undocked { unit }]
    }

    /// Advances the world by one step.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.end.is_some() {
            return Ok(());
        }
        let dt = self.clock.dt;
        let step = self.clock.step_index + 1;
        self.clock.step_index = step;
        let t = self.clock.t();
        let mut events = Vec::new();

        // Docking machines.
        let platform = self.platform_center();
        let mut transitions = Vec::new();
        for fb in &mut self.fbs {
            let inputs = FsmInputs {
                fb_position: fb.state.position,
                platform_center: platform,
                commands: Commands { dock: fb.dock_cmd, undock: fb.undock_cmd },
                impact: None,
            };
            let out = fb.fsm.step(&inputs, dt);
            fb.setpoint = out.setpoint;
            if let Some((from, to)) = out.transition {
                transitions.push((fb.id, from, to));
            }
        }
        for (unit, from, to) in transitions {
            events.push(EventKind::Phase { unit, from, to });
            self.on_transition(unit, from, to, &mut events);
        }

        // Controllers.
        let feedforward = if self.scenario.control.feedforward {
            self.fbs
                .iter()
                .filter(|fb| fb.phase().is_thrusting())
                .map(|fb| fb.state.position - self.main.position)
                .filter(|rel| rel.z > 0.0)
                .map(|rel| self.ff_map.lookup(&rel))
                .sum()
        } else {
            0.0
        };
        let sp = Setpoint { feedforward_thrust: feedforward, ..Setpoint::hold(self.hover) };
        let cmd = self.main_controller.position_control(&self.main, &sp, dt);
        let torque = self.main_controller.attitude_control(&self.main, &cmd.attitude, dt);
        self.main_rotors = self.main_mixer.mix(cmd.thrust, &torque);
        for fb in &mut self.fbs {
            fb.rotors = if fb.phase().is_thrusting() {
                let c = fb.controller.position_control(&fb.state, &fb.setpoint, dt);
                let tq = fb.controller.attitude_control(&fb.state, &c.attitude, dt);
                self.fb_mixer.mix(c.thrust, &tq)
            } else {
                [0.0; 4]
            };
        }

        // Wrenches with downwash on whichever vehicle is lower.
        let model = self.scenario.downwash;
        let main_thrust: f64 = self.main_rotors.iter().sum();
        let mut main_w = self.main_mixer.wrench(&self.main_rotors, &self.main.attitude);
        let mut fb_w: Vec<Wrench> = self.fbs.iter().map(|fb| self.fb_mixer.wrench(&fb.rotors, &fb.state.attitude)).collect();
        for (fb, w) in self.fbs.iter().zip(fb_w.iter_mut()) {
            if !fb.phase().is_free_body() {
                continue;
            }
            let rel = fb.state.position - self.main.position;
            if rel.z > 0.0 {
                let thrust: f64 = fb.rotors.iter().sum();
                main_w.force += downwash_force(&model, &rel, thrust);
                if thrust > 0.0 {
                    main_w.torque += align_torque(&model, &rel);
                }
            } else {
                w.force += downwash_force(&model, &-rel, main_thrust);
                w.torque += align_torque(&model, &-rel);
            }
        }

        // Rigid bodies.
        let v_before = self.main.velocity;
        self.main = if self.docked.is_some() {
            let (p, v) = offset_point(&self.main, &self.com_offset);
            let c = RigidBodyState { position: p, velocity: v, ..self.main };
            let c = step_rigid_body(&c, &self.composite, &main_w, dt).map_err(numeric(step, "composite dynamics"))?;
            let r = c.attitude * self.com_offset;
            let w = c.attitude * c.angular_velocity;
            RigidBodyState { position: c.position - r, velocity: c.velocity - w.cross(&r), ..c }
        } else {
            step_rigid_body(&self.main, &self.main_params, &main_w, dt).map_err(numeric(step, "main dynamics"))?
        };
        let main_accel = (self.main.velocity - v_before).norm() / dt;
        let platform = self.platform_center();
        let (mount_pos, mount_vel) = offset_point(&self.main, &self.mount_offset);
        let dock_cfg = self.scenario.docking;
        let mut impacts = Vec::new();
        for (fb, w) in self.fbs.iter_mut().zip(&fb_w) {
            match fb.phase() {
                DockPhase::Grounded => continue,
                DockPhase::Docked => {
                    fb.state = RigidBodyState { position: mount_pos, velocity: mount_vel, ..self.main };
                    continue;
                }
                _ => {}
            }
            let mut s = step_rigid_body(&fb.state, &self.fb_params, w, dt)
                .map_err(numeric(step, format!("flying battery {} dynamics", fb.id)))?;
            let ground = fb.fsm.pad().z;
            if s.position.z < ground {
                s.position.z = ground;
                s.velocity = Vector3::zeros();
                s.angular_velocity = Vector3::zeros();
            }
            let rel = fb.fsm.rel_pose(&s.position, &platform);
            match fb.phase() {
                DockPhase::UndockAscend if rel.vertical_gap < 0.0 => {
                    s.position.z = platform.z + dock_cfg.leg_height;
                    s.velocity.z = s.velocity.z.max(self.main.velocity.z);
                }
                DockPhase::FreeFall => {
                    if main_accel > FREE_FALL_ACCEL_WARNING && !fb.accel_warned {
                        fb.accel_warned = true;
                        events.push(EventKind::PlatformAccelWarning { unit: fb.id, accel: main_accel });
                    }
                    if rel.vertical_gap <= 0.0 && rel.lateral <= platform_radius(&dock_cfg) {
                        impacts.push((fb.id, rel.lateral));
                    }
                }
                _ => {}
            }
            fb.state = s;
        }
        for (unit, lateral) in impacts {
            self.resolve_impact(unit, lateral, &mut events)?;
        }

        // Power system.
        let mut load = 0.0;
        for f in self.main_rotors {
            load += rotor_power(f, self.k_main).map_err(power_err(step))?;
        }
        let secondary = self.docked.map(|i| self.fbs[i].payload.clone());
        let bus = match solve_bus(&self.circuit, &self.primary, secondary.as_ref(), load) {
            Ok(b) => b,
            Err(PowerError::BusCollapse { .. }) => {
                self.finish(EndReason::PrimaryDepleted, &mut events);
                self.emit(events);
                return Ok(());
            }
            Err(e) => return Err(power_err(step)(e)),
        };
        let (primary, rp) = discharge(&self.primary, bus.primary_power(), dt).map_err(power_err(step))?;
        self.primary = primary;
        self.ledger.primary_wh += rp.energy_drawn_wh;
        let mut loss = rp.resistive_loss;
        let mut secondary_ocv = 0.0;
        if let Some(i) = self.docked {
            let (pack, rs) = discharge(&self.fbs[i].payload, bus.secondary_power(), dt).map_err(power_err(step))?;
            self.fbs[i].payload = pack;
            self.ledger.secondary_wh += rs.energy_drawn_wh;
            loss += rs.resistive_loss;
            if self.circuit.secondary_present {
                secondary_ocv = ocv(&self.fbs[i].payload);
            }
            if rs.depleted_now {
                events.push(EventKind::SecondaryDepleted { unit: i });
                self.circuit = command_switch(&self.circuit, SwitchCommand::UsePrimary).map_err(power_err(step))?;
                events.push(EventKind::Switch { to: SwitchCommand::UsePrimary });
                self.command_undock(i, &mut events);
            }
        }
        match bus.active_source {
            ActiveSource::Primary => self.ledger.time_on_primary += dt,
            ActiveSource::Secondary => self.ledger.time_on_secondary += dt,
            ActiveSource::Both => self.ledger.time_on_both += dt,
            ActiveSource::None => {}
        }
        let mut normal_force = 0.0;
        if self.docked.is_some() {
            let c = contact_forces(self.main_params.mass, self.fb_params.mass, main_thrust, 0.0)
                .map_err(numeric(step, "contact diagnostic"))?;
            normal_force = c.normal_force;
            if self.electrical {
                let m = self.ledger.min_docked_normal_force.get_or_insert(normal_force);
                *m = m.min(normal_force);
            }
        }
        for fb in &mut self.fbs {
            if !fb.phase().is_thrusting() {
                continue;
            }
            let mut p = 0.0;
            for f in fb.rotors {
                p += rotor_power(f, self.k_fb).map_err(power_err(step))?;
            }
            let (pack, r) = discharge(&fb.own_pack, p, dt).map_err(power_err(step))?;
            fb.own_pack = pack;
            self.ledger.fb_own_wh += r.energy_drawn_wh;
            if r.depleted_now {
                events.push(EventKind::FbPackDepleted { unit: fb.id });
                if let Some((from, to)) = fb.fsm.abort(fb.state.position) {
                    events.push(EventKind::Phase { unit: fb.id, from, to });
                    if self.assigned == Some(fb.id) {
                        self.assigned = None;
                    }
                }
            }
        }
        self.ledger.max_altitude_error = self.ledger.max_altitude_error.max((self.main.position.z - self.hover.z).abs());
        self.last = Some(StepSample {
            bus,
            loss,
            normal_force,
            primary_ocv: ocv(&self.primary),
            secondary_ocv,
        });
        if rp.depleted_now {
            events.push(EventKind::PrimaryDepleted);
            if self.scenario.mission.termination == Termination::PrimaryDepleted {
                self.finish(EndReason::PrimaryDepleted, &mut events);
            }
        }

        if self.end.is_none() {
            self.mission_rules(t, &mut events);
        }
        self.emit(events);
        Ok(())
    }

    fn finish(&mut self, reason: EndReason, events: &mut Vec<EventKind>) {
        if self.end.is_none() {
            self.end = Some(reason);
            events.push(EventKind::End { reason });
        }
    }

    /// Ends the mission on the wall clock.
    pub fn stop_wall_clock(&mut self) {
        let mut events = Vec::new();
        self.finish(EndReason::WallClock, &mut events);
        self.emit(events);
    }

    fn command_undock(&mut self, unit: usize, events: &mut Vec<EventKind>) {
        let fb = &mut self.fbs[unit];
        if fb.undock_cmd {
            return;
        }
        fb.undock_cmd = true;
        events.push(EventKind::UndockCommand { unit });
        if self.assigned == Some(unit) {
            self.assigned = None;
        }
    }

    fn on_transition(&mut self, unit: usize, from: DockPhase, to: DockPhase, events: &mut Vec<EventKind>) {
        let t = self.clock.t();
        match to {
            DockPhase::Takeoff => {
                let fb = &mut self.fbs[unit];
                fb.dock_cmd = false;
                fb.accel_warned = false;
                fb.controller.reset();
            }
            DockPhase::UndockAscend if from == DockPhase::Docked => {
                self.fbs[unit].undock_cmd = false;
                events.extend(self.detach(unit));
            }
            DockPhase::Grounded => {
                let recharge = self.scenario.mission.ground_recharge;
                let delay = self.scenario.mission.turnaround_delay;
                let fb = &mut self.fbs[unit];
                let mut p = fb.state.position;
                p.z = fb.fsm.pad().z;
                fb.state = RigidBodyState::at_rest(p);
                fb.rotors = [0.0; 4];
                if recharge {
                    fb.ready_at = Some(t + delay);
                }
                events.push(EventKind::Landed { unit });
            }
            _ => {}
        }
    }

    fn resolve_impact(&mut self, unit: usize, lateral: f64, events: &mut Vec<EventKind>) -> Result<(), SimError> {
        let cfg = self.scenario.docking;
        let outcome = capture_check(lateral, &cfg.thresholds(), cfg.contact_failure_probability, &mut self.rng);
        let platform = self.platform_center();
        let fb = &mut self.fbs[unit];
        let inputs = FsmInputs {
            fb_position: fb.state.position,
            platform_center: platform,
            commands: Commands::default(),
            impact: Some(outcome),
        };
        let out = fb.fsm.step(&inputs, 0.0);
        if let Some((from, to)) = out.transition {
            events.push(EventKind::Phase { unit, from, to });
        }
        if outcome.mechanical_engaged {
            // Perfectly inelastic capture; the composite keeps the momentum.
            let (mm, mf) = (self.main_params.mass, self.fb_params.mass);
            let v_c = (self.main.velocity * mm + fb.state.velocity * mf) / (mm + mf);
            let r = self.main.attitude * self.com_offset;
            let w = self.main.attitude * self.main.angular_velocity;
            self.main.velocity = v_c - w.cross(&r);
            let (pos, vel) = offset_point(&self.main, &self.mount_offset);
            let fb = &mut self.fbs[unit];
            fb.state = RigidBodyState { position: pos, velocity: vel, ..self.main };
            events.extend(self.attach(unit, outcome.electrical_engaged)?);
        } else {
            events.push(EventKind::BounceOff { unit, lateral });
            let main_vz = self.main.velocity.z;
            let s = &mut fb.state;
            s.position.z = platform.z + cfg.leg_height;
            s.velocity.z = main_vz + BOUNCE_RESTITUTION * (main_vz - s.velocity.z).abs();
        }
        Ok(())
    }

    fn mission_rules(&mut self, t: f64, events: &mut Vec<EventKind>) {
        let m = self.scenario.mission.clone();
        for fb in &mut self.fbs {
            if let Some(ready) = fb.ready_at {
                if ready <= t + 1e-12 && fb.phase() == DockPhase::Grounded {
                    fb.ready_at = None;
                    fb.own_pack.recharge();
                    fb.payload.recharge();
                    fb.fsm.return_to_pad();
                    fb.state = RigidBodyState::at_rest(fb.fsm.pad());
                    events.push(EventKind::Recharged { unit: fb.id });
                }
            }
        }
        if let Some(i) = self.docked {
            if let Some(failed) = self.fbs[i].failed_contact_at {
                if t >= failed + m.contact_detect_delay {
                    self.command_undock(i, events);
                }
            }
        }
        if m.dispatch && self.assigned.is_none() && t >= m.first_dispatch {
            if let Some(fb) = self.fbs.iter_mut().find(|fb| fb.available()) {
                fb.dock_cmd = true;
                self.assigned = Some(fb.id);
                events.push(EventKind::Dispatch { unit: fb.id });
            }
        }
    }

    /// Telemetry for the state after the last step.
    pub fn telemetry_row(&mut self) -> TelemetryRow {
        let s = self.last.unwrap_or(StepSample {
            bus: BusSample { bus_voltage: 0.0, current_primary: 0.0, current_secondary: 0.0, active_source: ActiveSource::None },
            loss: 0.0,
            normal_force: 0.0,
            primary_ocv: ocv(&self.primary),
            secondary_ocv: 0.0,
        });
        let p = self.main.position;
        TelemetryRow {
            time: self.clock.t(),
            bus_voltage: s.bus.bus_voltage,
            current_total: s.bus.current_total(),
            current_primary: s.bus.current_primary,
            current_secondary: s.bus.current_secondary,
            power: s.bus.power(),
            loss: s.loss,
            active_source: s.bus.active_source,
            primary_ocv: s.primary_ocv,
            secondary_ocv: s.secondary_ocv,
            main_position: [p.x, p.y, p.z],
            normal_force: s.normal_force,
            fbs: self
                .fbs
                .iter()
                .map(|fb| FbSample {
                    phase: fb.phase(),
                    position: [fb.state.position.x, fb.state.position.y, fb.state.position.z],
                })
                .collect(),
            events: std::mem::take(&mut self.pending_labels).join(";"),
        }
    }
}

/// Outer radius of the platform funnel; a drop landing further out misses
/// the platform entirely.
fn platform_radius(cfg: &crate::docking::DockingConfig) -> f64 {
    (cfg.lateral_capture_radius * 4.0).max(0.08)
}

/// Steps `world` for `duration` seconds or until the mission ends, writing
/// every `decimation`-th row plus the final one. Returns the rows written.
pub fn run<W: Write>(
    world: &mut World,
    duration: f64,
    decimation: u64,
    mut telemetry: Option<&mut TelemetryWriter<W>>,
) -> Result<u64, SimError> {
    if !(duration > 0.0) {
        return Err(SimError::Setup(format!("duration {duration} must be positive")));
    }
    let steps = (duration / world.clock.dt).round() as u64;
    let mut rows = 0;
    for k in 1..=steps {
        world.step()?;
        let done = world.finished().is_some();
        if k % decimation.max(1) == 0 || done || k == steps {
            if let Some(w) = telemetry.as_deref_mut() {
                w.write_row(&world.telemetry_row())?;
            }
            rows += 1;
        }
        if done {
            break;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub log: MissionLog,
    pub summary: MissionSummary,
    pub rows: u64,
}

/// Solo hover time of the main vehicle on the primary pack under the
/// simulator's electrical model.
pub fn solo_endurance(scenario: &Scenario) -> Result<f64, SimError> {
    let p = scenario.calibrated_main_params()?;
    constant_power_endurance(&scenario.primary_pack()?, hover_power(p.mass, p.k_p), scenario.circuit.diode_drop, scenario.sim.dt)
        .map_err(power_err(0))
}

/// Runs a whole mission, streaming telemetry to `out` when given.
pub fn run_mission<W: Write>(scenario: &Scenario, out: Option<W>) -> Result<MissionResult, SimError> {
    let mut world = World::new(scenario)?;
    let mut writer = out.map(|o| TelemetryWriter::new(o, scenario.mission.fleet_size)).transpose()?;
    let rows = run(&mut world, scenario.sim.duration, scenario.sim.telemetry_decimation, writer.as_mut())?;
    if world.finished().is_none() {
        world.stop_wall_clock();
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    let solo = solo_endurance(scenario)?;
    let summary = summarize(
        &world.log,
        &world.ledger,
        scenario.mission.fleet_size,
        world.time(),
        solo,
        world.finished().unwrap_or(EndReason::WallClock),
    );
    Ok(MissionResult { log: world.log, summary, rows })
}

/// Scripted lateral oscillation of the docked pair, `x = A sin(ωt)`, flown
/// by the cascaded controller with acceleration feedforward against linear
/// drag on the main vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationConfig {
    pub amplitude: f64,
    pub omega: f64,
    /// Linear drag on the main vehicle, N/(m/s).
    pub drag_coefficient: f64,
    pub duration: f64,
    pub dt: f64,
    pub mu: f64,
    pub max_tilt_deg: f64,
}

impl OscillationConfig {
    /// Peak lateral acceleration of 12 m/s² at a 2 s period.
    pub fn twelve_g_lateral() -> Self {
        let omega = std::f64::consts::PI;
        Self {
            amplitude: 12.0 / (omega * omega),
            omega,
            drag_coefficient: 0.2,
            duration: 10.0,
            dt: 1e-3,
            mu: 0.5,
            max_tilt_deg: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationSample {
    pub t: f64,
    /// Total rotor thrust along the body z axis, N.
    pub thrust: f64,
    pub body_z: Vector3<f64>,
    /// Drag force on the main vehicle, world frame, N.
    pub drag: Vector3<f64>,
    /// Composite acceleration over the step, world frame.
    pub accel: Vector3<f64>,
    pub contact: crate::dynamics::ContactSolution,
    pub retained: bool,
}

pub fn lateral_oscillation(
    main: &VehicleParams,
    fb: &VehicleParams,
    mount_offset: &Vector3<f64>,
    cfg: &OscillationConfig,
) -> Result<Vec<OscillationSample>, SimError> {
    let composite = composite_params(main, fb, mount_offset).map_err(|e| SimError::Setup(e.to_string()))?;
    let mut ctrl_cfg = crate::control::CascadedPidConfig::default_for(&composite);
    ctrl_cfg.max_tilt = cfg.max_tilt_deg.to_radians();
    let mut ctrl = CascadedController::new(ctrl_cfg, composite.mass);
    let mixer = RotorMixer::new(&composite);
    let (a, w) = (cfg.amplitude, cfg.omega);
    let height = 1.5;
    let mut state = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, height));
    state.velocity.x = a * w;
    let steps = (cfg.duration / cfg.dt).round() as u64;
    let mut out = Vec::with_capacity(steps as usize);
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let (s, c) = (w * t).sin_cos();
        let sp = Setpoint {
            velocity: Vector3::new(a * w * c, 0.0, 0.0),
            acceleration: Vector3::new(-a * w * w * s, 0.0, 0.0),
            ..Setpoint::hold(Vector3::new(a * s, 0.0, height))
        };
        let cmd = ctrl.position_control(&state, &sp, cfg.dt);
        let torque = ctrl.attitude_control(&state, &cmd.attitude, cfg.dt);
        let rotors = mixer.mix(cmd.thrust, &torque);
        let mut wrench = mixer.wrench(&rotors, &state.attitude);
        let drag = -state.velocity * cfg.drag_coefficient;
        wrench.force += drag;
        let body_z = state.body_z();
        let thrust: f64 = rotors.iter().sum();
        let along = drag.dot(&body_z);
        let planar = (drag - body_z * along).norm();
        let contact = contact_forces(main.mass, fb.mass, (thrust + along).max(0.0), planar)
            .map_err(numeric(k, "contact diagnostic"))?;
        let next = step_rigid_body(&state, &composite, &wrench, cfg.dt).map_err(numeric(k + 1, "composite dynamics"))?;
        out.push(OscillationSample {
            t,
            thrust,
            body_z,
            drag,
            accel: (next.velocity - state.velocity) / cfg.dt,
            contact,
            retained: crate::dynamics::contact_retained(&contact, cfg.mu),
        });
        state = next;
    }
    Ok(out)
}

/// Main vehicle hovering while a flying battery, flown on a fixed script,
/// passes overhead and descends towards the platform. Returns the RMS
/// altitude error with the given feedforward map.
pub fn downwash_rejection_trial(scenario: &Scenario, map: &FeedforwardMap) -> Result<f64, SimError> {
    let main = scenario.calibrated_main_params()?;
    let fb = scenario.fb_params();
    let model = scenario.downwash;
    let dt = scenario.sim.dt;
    let hover = scenario.hover_position();
    let mut ctrl = CascadedController::new(scenario.controller_config(&main), main.mass);
    let mixer = RotorMixer::new(&main);
    let mut state = RigidBodyState::at_rest(hover);
    let fb_thrust = fb.hover_thrust();
    // (time, lateral, height above the main vehicle) knots, linear between.
    let knots = [(0.0, 0.45, 0.45), (2.5, 0.0, 0.45), (4.0, 0.0, 0.45), (6.0, 0.0, 0.15), (9.0, 0.0, 0.15), (11.0, 0.0, 0.6), (12.0, 0.0, 0.6)];
    let rel_at = |t: f64| -> Vector3<f64> {
        let i = knots.iter().rposition(|k| k.0 <= t).unwrap_or(0).min(knots.len() - 2);
        let (a, b) = (knots[i], knots[i + 1]);
        let f = ((t - a.0) / (b.0 - a.0)).clamp(0.0, 1.0);
        Vector3::new(a.1 + (b.1 - a.1) * f, 0.0, a.2 + (b.2 - a.2) * f)
    };
    let steps = (knots[knots.len() - 1].0 / dt).round() as u64;
    let mut sum_sq = 0.0;
    for k in 0..steps {
        let t = k as f64 * dt;
        let fb_pos = hover + rel_at(t);
        let rel = fb_pos - state.position;
        let sp = Setpoint { feedforward_thrust: map.lookup(&rel), ..Setpoint::hold(hover) };
        let cmd = ctrl.position_control(&state, &sp, dt);
        let torque = ctrl.attitude_control(&state, &cmd.attitude, dt);
        let rotors = mixer.mix(cmd.thrust, &torque);
        let mut wrench = mixer.wrench(&rotors, &state.attitude);
        wrench.force += downwash_force(&model, &rel, fb_thrust);
        wrench.torque += align_torque(&model, &rel);
        state = step_rigid_body(&state, &main, &wrench, dt).map_err(numeric(k + 1, "main dynamics"))?;
        sum_sq += (state.position.z - hover.z).powi(2);
    }
    Ok((sum_sq / steps as f64).sqrt())
}
