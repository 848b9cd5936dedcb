//! Cascaded PID position/attitude control and the downwash feedforward map.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::aero::{downwash_force, DownwashModel};
use crate::dynamics::{RigidBodyState, VehicleParams, GRAVITY};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("feedforward map: {0}")]
    Map(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadedPidConfig {
    /// Position gains in acceleration units: (m/s²)/m, (m/s²)/(m·s), (m/s²)/(m/s).
    pub pos_kp: Vector3<f64>,
    pub pos_ki: Vector3<f64>,
    pub pos_kd: Vector3<f64>,
    /// Attitude torque gains, N·m/rad and N·m/(rad/s).
    pub att_kp: Vector3<f64>,
    pub att_kd: Vector3<f64>,
    /// Yaw integral gain, N·m/(rad·s).
    pub yaw_ki: f64,
    /// Per-axis bound on the position integrator, m·s.
    pub pos_integrator_limit: f64,
    /// Bound on the yaw integrator, rad·s.
    pub yaw_integrator_limit: f64,
    pub max_tilt: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
}

impl CascadedPidConfig {
    /// Gains from pole placement on double integrators.
    ///
    /// The position loop places `(s + wn/4)(s² + 2ζwn s + wn²)`, the extra
    /// real pole being the integrator. The attitude loop places
    /// `s² + 2ζwn s + wn²` per axis using the vehicle inertia.
    pub fn pole_placement(params: &VehicleParams, pos_wn: f64, pos_zeta: f64, att_wn: f64, att_zeta: f64) -> Self {
        let alpha = pos_wn / 4.0;
        let kp = pos_wn * pos_wn + 2.0 * pos_zeta * pos_wn * alpha;
        let kd = 2.0 * pos_zeta * pos_wn + alpha;
        let ki = alpha * pos_wn * pos_wn;
        let inertia = params.inertia.diagonal();
        let izz = inertia.z;
        Self {
            pos_kp: Vector3::repeat(kp),
            pos_ki: Vector3::repeat(ki),
            pos_kd: Vector3::repeat(kd),
            att_kp: inertia * att_wn * att_wn,
            att_kd: inertia * 2.0 * att_zeta * att_wn,
            yaw_ki: izz * att_wn * att_wn * 0.5,
            pos_integrator_limit: 2.0,
            yaw_integrator_limit: 1.0,
            max_tilt: 40f64.to_radians(),
            thrust_min: 0.0,
            thrust_max: params.max_thrust,
        }
    }

    pub fn default_for(params: &VehicleParams) -> Self {
        Self::pole_placement(params, 2.0, 0.8, 15.0, 0.8)
    }

    pub fn validate(&self, params: &VehicleParams) -> Result<(), ControlError> {
        let gains = [self.pos_kp, self.pos_ki, self.pos_kd, self.att_kp, self.att_kd];
        if gains.iter().any(|g| g.iter().any(|v| !(*v >= 0.0 && v.is_finite()))) || !(self.yaw_ki >= 0.0) {
            return Err(ControlError::InvalidConfig("gains must be non-negative".into()));
        }
        if !(self.pos_integrator_limit > 0.0 && self.yaw_integrator_limit > 0.0) {
            return Err(ControlError::InvalidConfig("integrator limits must be positive".into()));
        }
        if self.thrust_max > params.max_thrust + 1e-12 || self.thrust_min < 0.0 || self.thrust_min > self.thrust_max {
            return Err(ControlError::InvalidConfig(format!(
                "thrust limits [{}, {}] outside [0, {}]",
                self.thrust_min, self.thrust_max, params.max_thrust
            )));
        }
        Ok(())
    }
}

/// Position target plus optional feedforward terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub position: Vector3<f64>,
    pub yaw: f64,
    /// Extra thrust added to the commanded total, N.
    pub feedforward_thrust: f64,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl Setpoint {
    pub fn hold(position: Vector3<f64>) -> Self {
        Self {
            position,
            yaw: 0.0,
            feedforward_thrust: 0.0,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustCommand {
    pub thrust: f64,
    pub attitude: UnitQuaternion<f64>,
    pub saturated: bool,
}

/// One vehicle's controller with its integrator state.
#[derive(Debug, Clone)]
pub struct CascadedController {
    pub config: CascadedPidConfig,
    /// Mass the controller believes it is lifting.
    pub mass: f64,
    pos_integral: Vector3<f64>,
    yaw_integral: f64,
    saturations: u64,
}

impl CascadedController {
    pub fn new(config: CascadedPidConfig, mass: f64) -> Self {
        Self {
            config,
            mass,
            pos_integral: Vector3::zeros(),
            yaw_integral: 0.0,
            saturations: 0,
        }
    }

    pub fn reset(&mut self) {
        self.pos_integral = Vector3::zeros();
        self.yaw_integral = 0.0;
    }

    pub fn position_integral(&self) -> Vector3<f64> {
        self.pos_integral
    }

    pub fn yaw_integral(&self) -> f64 {
        self.yaw_integral
    }

    /// Vertical thrust currently supplied by the position integrator, N.
    pub fn integral_thrust_offset(&self) -> f64 {
        self.mass * self.config.pos_ki.z * self.pos_integral.z
    }

    /// Number of steps on which the thrust command hit a limit.
    pub fn saturation_count(&self) -> u64 {
        self.saturations
    }

    pub fn position_control(&mut self, state: &RigidBodyState, setpoint: &Setpoint, dt: f64) -> ThrustCommand {
        let c = &self.config;
        let err = setpoint.position - state.position;
        let err_v = setpoint.velocity - state.velocity;
        let lim = c.pos_integrator_limit;
        self.pos_integral = (self.pos_integral + err * dt).map(|v| v.clamp(-lim, lim));

        let mut accel = c.pos_kp.component_mul(&err)
            + c.pos_kd.component_mul(&err_v)
            + c.pos_ki.component_mul(&self.pos_integral)
            + setpoint.acceleration;

        // Keep some upward specific force and bound the tilt.
        let vertical = (accel.z + GRAVITY).max(0.2 * GRAVITY);
        accel.z = vertical - GRAVITY;
        let max_lateral = vertical * c.max_tilt.tan();
        let lateral = accel.xy().norm();
        if lateral > max_lateral {
            let s = max_lateral / lateral;
            accel.x *= s;
            accel.y *= s;
        }

        let force = (accel + Vector3::new(0.0, 0.0, GRAVITY)) * self.mass;
        let raw = force.norm() + setpoint.feedforward_thrust;
        let thrust = raw.clamp(c.thrust_min, c.thrust_max);
        let saturated = thrust != raw;
        if saturated {
            self.saturations += 1;
        }
        ThrustCommand {
            thrust,
            attitude: attitude_from_thrust_direction(&force, setpoint.yaw),
            saturated,
        }
    }

    /// PD on the axis-angle attitude error, with integral action on yaw.
    pub fn attitude_control(&mut self, state: &RigidBodyState, desired: &UnitQuaternion<f64>, dt: f64) -> Vector3<f64> {
        let err = attitude_error(&state.attitude, desired);
        let lim = self.config.yaw_integrator_limit;
        self.yaw_integral = (self.yaw_integral + err.z * dt).clamp(-lim, lim);
        let c = &self.config;
        c.att_kp.component_mul(&err) - c.att_kd.component_mul(&state.angular_velocity)
            + Vector3::new(0.0, 0.0, c.yaw_ki * self.yaw_integral)
    }
}

/// Body-frame rotation vector taking `current` onto `desired`.
pub fn attitude_error(current: &UnitQuaternion<f64>, desired: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut q = current.inverse() * desired;
    if q.w < 0.0 {
        q = UnitQuaternion::new_unchecked(-q.into_inner());
    }
    q.scaled_axis()
}

fn attitude_from_thrust_direction(force: &Vector3<f64>, yaw: f64) -> UnitQuaternion<f64> {
    let z = force.normalize();
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = z.cross(&heading);
    let y = if y.norm() < 1e-9 { Vector3::y() } else { y.normalize() };
    let x = y.cross(&z);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Extra thrust against downwash, tabulated over lateral distance and
/// vertical gap between the vehicles. Values live at cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardMap {
    lateral_edges: Vec<f64>,
    vertical_edges: Vec<f64>,
    /// Row-major: lateral bin, then vertical bin.
    values: Vec<f64>,
}

impl FeedforwardMap {
    pub fn zeros(lateral_max: f64, lateral_bins: usize, vertical_max: f64, vertical_bins: usize) -> Self {
        let edges = |max: f64, n: usize| (0..=n).map(|i| max * i as f64 / n as f64).collect::<Vec<_>>();
        Self {
            lateral_edges: edges(lateral_max, lateral_bins),
            vertical_edges: edges(vertical_max, vertical_bins),
            values: vec![0.0; lateral_bins * vertical_bins],
        }
    }

    /// 0–0.4 m lateral in 9 bins, 0–1.0 m vertical in 11 bins.
    pub fn default_grid() -> Self {
        Self::zeros(0.4, 9, 1.0, 11)
    }

    pub fn lateral_bins(&self) -> usize {
        self.lateral_edges.len() - 1
    }

    pub fn vertical_bins(&self) -> usize {
        self.vertical_edges.len() - 1
    }

    pub fn lateral_edges(&self) -> &[f64] {
        &self.lateral_edges
    }

    pub fn vertical_edges(&self) -> &[f64] {
        &self.vertical_edges
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.vertical_bins() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let n = self.vertical_bins();
        self.values[i * n + j] = value;
    }

    pub fn lateral_center(&self, i: usize) -> f64 {
        0.5 * (self.lateral_edges[i] + self.lateral_edges[i + 1])
    }

    pub fn vertical_center(&self, j: usize) -> f64 {
        0.5 * (self.vertical_edges[j] + self.vertical_edges[j + 1])
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    fn cell_of(edges: &[f64], x: f64) -> Option<usize> {
        let last = *edges.last()?;
        if !(x >= edges[0] && x <= last) {
            return None;
        }
        let i = edges.partition_point(|e| *e <= x).saturating_sub(1);
        Some(i.min(edges.len() - 2))
    }

    /// Interpolation weights between the two nearest centres along one axis.
    fn bracket(&self, centre: impl Fn(usize) -> f64, n: usize, x: f64) -> (usize, usize, f64) {
        if n == 1 || x <= centre(0) {
            return (0, 0, 0.0);
        }
        if x >= centre(n - 1) {
            return (n - 1, n - 1, 0.0);
        }
        let mut i = 0;
        while centre(i + 1) < x {
            i += 1;
        }
        let t = (x - centre(i)) / (centre(i + 1) - centre(i));
        (i, i + 1, t)
    }

    /// Bilinear interpolation between cell centres; zero outside the grid.
    pub fn lookup(&self, rel_pos: &Vector3<f64>) -> f64 {
        let lateral = rel_pos.xy().norm();
        let vertical = rel_pos.z;
        if Self::cell_of(&self.lateral_edges, lateral).is_none() || Self::cell_of(&self.vertical_edges, vertical).is_none() {
            return 0.0;
        }
        let (i0, i1, u) = self.bracket(|i| self.lateral_center(i), self.lateral_bins(), lateral);
        let (j0, j1, v) = self.bracket(|j| self.vertical_center(j), self.vertical_bins(), vertical);
        (1.0 - u) * (1.0 - v) * self.get(i0, j0)
            + u * (1.0 - v) * self.get(i1, j0)
            + (1.0 - u) * v * self.get(i0, j1)
            + u * v * self.get(i1, j1)
    }

    /// Text form: two edge rows, then one row of values per lateral bin.
    pub fn to_csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.9e}")).collect::<Vec<_>>().join(",");
        let mut out = String::from("# feedforward thrust map, N\n");
        out.push_str(&format!("lateral_edges,{}\n", join(&self.lateral_edges)));
        out.push_str(&format!("vertical_edges,{}\n", join(&self.vertical_edges)));
        for i in 0..self.lateral_bins() {
            let row: Vec<f64> = (0..self.vertical_bins()).map(|j| self.get(i, j)).collect();
            out.push_str(&format!("values,{}\n", join(&row)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ControlError> {
        let mut lateral = None;
        let mut vertical = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',');
            let tag = fields.next().unwrap_or_default();
            let nums = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ControlError::Map(format!("line {}: {e}", n + 1)))?;
            match tag {
                "lateral_edges" => lateral = Some(nums),
                "vertical_edges" => vertical = Some(nums),
                "values" => rows.push(nums),
                other => return Err(ControlError::Map(format!("line {}: unknown row `{other}`", n + 1))),
            }
        }
        let lateral_edges = lateral.ok_or_else(|| ControlError::Map("missing lateral_edges".into()))?;
        let vertical_edges = vertical.ok_or_else(|| ControlError::Map("missing vertical_edges".into()))?;
        for edges in [&lateral_edges, &vertical_edges] {
            if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
                return Err(ControlError::Map("edges must be strictly increasing".into()));
            }
        }
        let (nl, nv) = (lateral_edges.len() - 1, vertical_edges.len() - 1);
        if rows.len() != nl || rows.iter().any(|r| r.len() != nv) {
            return Err(ControlError::Map(format!("expected {nl} rows of {nv} values")));
        }
        let values: Vec<f64> = rows.concat();
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(ControlError::Map("values must be non-negative".into()));
        }
        Ok(Self { lateral_edges, vertical_edges, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltMap {
    pub map: FeedforwardMap,
    pub filled_cells: usize,
    /// Set when no sample fell inside the grid.
    pub warning: Option<String>,
}

/// Bin-averages `(relative position, integral thrust offset)` samples onto
/// the grid of `template`. Cells without samples are zero.
pub fn build_ff_map(template: &FeedforwardMap, samples: &[(Vector3<f64>, f64)]) -> BuiltMap {
    let mut map = template.clone();
    let mut sums = vec![0.0; map.values.len()];
    let mut counts = vec![0usize; map.values.len()];
    let nv = map.vertical_bins();
    for (rel, offset) in samples {
        let lateral = rel.xy().norm();
        if let (Some(i), Some(j)) = (
            FeedforwardMap::cell_of(&map.lateral_edges, lateral),
            FeedforwardMap::cell_of(&map.vertical_edges, rel.z),
        ) {
            sums[i * nv + j] += offset.max(0.0);
            counts[i * nv + j] += 1;
        }
    }
    for ((v, s), c) in map.values.iter_mut().zip(&sums).zip(&counts) {
        *v = if *c > 0 { s / *c as f64 } else { 0.0 };
    }
    let filled_cells = counts.iter().filter(|c| **c > 0).count();
    let warning = (filled_cells == 0).then(|| "no telemetry samples inside the map grid; map is zero".to_string());
    BuiltMap { map, filled_cells, warning }
}

/// Synthetic integral-offset telemetry from a downwash model, `per_axis`²
/// evenly spread samples per cell along the +x direction.
pub fn model_samples(template: &FeedforwardMap, model: &DownwashModel, upper_thrust: f64, per_axis: usize) -> Vec<(Vector3<f64>, f64)> {
    let mut out = Vec::new();
    for i in 0..template.lateral_bins() {
        for j in 0..template.vertical_bins() {
            let (l0, l1) = (template.lateral_edges[i], template.lateral_edges[i + 1]);
            let (v0, v1) = (template.vertical_edges[j], template.vertical_edges[j + 1]);
            for a in 0..per_axis {
                for b in 0..per_axis {
                    let x = l0 + (l1 - l0) * (a as f64 + 0.5) / per_axis as f64;
                    let z = v0 + (v1 - v0) * (b as f64 + 0.5) / per_axis as f64;
                    let rel = Vector3::new(x, 0.0, z);
                    out.push((rel, -downwash_force(model, &rel, upper_thrust).z));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{step_rigid_body, RotorMixer, Wrench};
    use approx::assert_relative_eq;

    fn main_setup() -> (VehicleParams, CascadedController) {
        let p = VehicleParams::main_quadcopter();
        let c = CascadedController::new(CascadedPidConfig::default_for(&p), p.mass);
        (p, c)
    }

    #[test]
    fn equilibrium_command() {
        let (p, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let cmd = c.position_control(&s, &Setpoint::hold(s.position), 1e-3);
        assert_relative_eq!(cmd.thrust, p.mass * GRAVITY, epsilon = 1e-12);
        assert!(cmd.attitude.angle() < 1e-12);
        assert!(!cmd.saturated);
    }

    #[test]
    fn feedforward_is_additive() {
        let (p, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::zeros());
        let sp = Setpoint { feedforward_thrust: 2.0, ..Setpoint::hold(s.position) };
        let cmd = c.position_control(&s, &sp, 1e-3);
        assert_relative_eq!(cmd.thrust, p.mass * GRAVITY + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn thrust_is_clamped() {
        let (p, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::zeros());
        let up = c.position_control(&s, &Setpoint::hold(Vector3::new(0.0, 0.0, 100.0)), 1e-3);
        assert!(up.thrust <= p.max_thrust);
        let sp = Setpoint { feedforward_thrust: -100.0, ..Setpoint::hold(s.position) };
        let down = c.position_control(&s, &sp, 1e-3);
        assert_eq!(down.thrust, 0.0);
        assert!(down.saturated);
        assert!(c.saturation_count() >= 1);
    }

    #[test]
    fn integrator_is_bounded() {
        let (_, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::zeros());
        for _ in 0..100_000 {
            c.position_control(&s, &Setpoint::hold(Vector3::new(5.0, -5.0, 5.0)), 1e-2);
            assert!(c.position_integral().amax() <= c.config.pos_integrator_limit);
        }
    }

    #[test]
    fn zero_attitude_error_zero_torque() {
        let (_, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::zeros());
        assert_eq!(c.attitude_control(&s, &UnitQuaternion::identity(), 1e-3), Vector3::zeros());
    }

    #[test]
    fn small_roll_step_torque() {
        let (_, mut c) = main_setup();
        let s = RigidBodyState::at_rest(Vector3::zeros());
        let desired = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.1);
        let tau = c.attitude_control(&s, &desired, 1e-3);
        assert!((tau.x - c.config.att_kp.x * 0.1).abs() < 1e-6);
        assert!(tau.y.abs() < 1e-12 && tau.z.abs() < 1e-12);
    }

    /// Simulate one vehicle under the cascade with a constant external wrench.
    fn closed_loop(
        p: &VehicleParams,
        c: &mut CascadedController,
        mut s: RigidBodyState,
        sp: &Setpoint,
        disturbance: Wrench,
        steps: usize,
        mut observe: impl FnMut(usize, &RigidBodyState, &CascadedController),
    ) -> RigidBodyState {
        let mixer = RotorMixer::new(p);
        let dt = 1e-3;
        for k in 0..steps {
            let cmd = c.position_control(&s, sp, dt);
            let tau = c.attitude_control(&s, &cmd.attitude, dt);
            let rotors = mixer.mix(cmd.thrust, &tau);
            let w = mixer.wrench(&rotors, &s.attitude) + disturbance;
            s = step_rigid_body(&s, p, &w, dt).unwrap();
            observe(k, &s, c);
        }
        s
    }

    #[test]
    fn integrator_absorbs_steady_vertical_disturbance() {
        let (p, mut c) = main_setup();
        let hold = Vector3::new(0.0, 0.0, 1.0);
        let push = Wrench::new(Vector3::new(0.0, 0.0, -1.0), Vector3::zeros());
        let s = closed_loop(&p, &mut c, RigidBodyState::at_rest(hold), &Setpoint::hold(hold), push, 30_000, |_, _, _| {});
        assert!((c.integral_thrust_offset() - 1.0).abs() < 0.02, "{}", c.integral_thrust_offset());
        assert!((s.position - hold).norm() < 1e-3);
    }

    #[test]
    fn attitude_step_settles_like_second_order() {
        // Linear oracle: x'' + 2ζw x' + w² x = w² r, underdamped step response.
        let (wn, zeta) = (15.0f64, 0.8f64);
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let phi = (1.0 - zeta * zeta).sqrt().atan2(zeta);
        let response = |t: f64| 1.0 - (-zeta * wn * t).exp() / (1.0 - zeta * zeta).sqrt() * (wd * t + phi).sin();
        let mut predicted = 0.0;
        let mut t = 0.0;
        while t < 2.0 {
            if (response(t) - 1.0).abs() > 0.02 {
                predicted = t;
            }
            t += 1e-5;
        }

        let p = VehicleParams::main_quadcopter();
        let mut c = CascadedController::new(CascadedPidConfig::default_for(&p), p.mass);
        c.config.yaw_ki = 0.0;
        let target = 0.1;
        let desired = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), target);
        let mut s = RigidBodyState::at_rest(Vector3::zeros());
        let dt = 1e-4;
        let mut settled = 0.0;
        for k in 0..20_000 {
            let tau = c.attitude_control(&s, &desired, dt);
            s = step_rigid_body(&s, &p, &Wrench::new(Vector3::new(0.0, 0.0, p.hover_thrust()), tau), dt).unwrap();
            let roll = s.attitude.scaled_axis().x;
            if ((roll - target) / target).abs() > 0.02 {
                settled = (k + 1) as f64 * dt;
            }
        }
        assert!((settled - predicted).abs() <= 0.2 * predicted, "settled {settled} predicted {predicted}");
    }

    #[test]
    fn yaw_integral_removes_steady_error() {
        let (p, mut c) = main_setup();
        let hold = Vector3::new(0.0, 0.0, 1.0);
        let yaw_push = Wrench::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 0.01));
        let s = closed_loop(&p, &mut c, RigidBodyState::at_rest(hold), &Setpoint::hold(hold), yaw_push, 20_000, |_, _, _| {});
        let yaw = s.attitude.euler_angles().2;
        assert!(yaw.abs().to_degrees() < 0.5, "yaw error {} deg", yaw.to_degrees());
    }

    #[test]
    fn map_lookup_basics() {
        let mut m = FeedforwardMap::default_grid();
        assert_eq!(m.lookup(&Vector3::new(0.5, 0.0, 0.3)), 0.0);
        assert_eq!(m.lookup(&Vector3::new(0.0, 0.0, -0.1)), 0.0);
        assert_eq!(m.lookup(&Vector3::new(0.0, 0.0, 1.2)), 0.0);
        m.set(2, 3, 1.5);
        m.set(3, 3, 2.5);
        m.set(2, 4, 0.5);
        m.set(3, 4, 4.0);
        let node = Vector3::new(m.lateral_center(2), 0.0, m.vertical_center(3));
        assert_eq!(m.lookup(&node), 1.5);
        // Lateral distance is radial: rotate the node about z.
        let rotated = Vector3::new(0.0, m.lateral_center(2), m.vertical_center(3));
        assert_relative_eq!(m.lookup(&rotated), 1.5, epsilon = 1e-12);
        let mid = Vector3::new(
            0.5 * (m.lateral_center(2) + m.lateral_center(3)),
            0.0,
            0.5 * (m.vertical_center(3) + m.vertical_center(4)),
        );
        assert!((m.lookup(&mid) - (1.5 + 2.5 + 0.5 + 4.0) / 4.0).abs() < 1e-9);
    }

    #[test]
    fn build_from_empty_and_single() {
        let template = FeedforwardMap::default_grid();
        let empty = build_ff_map(&template, &[]);
        assert!(empty.map.is_zero());
        assert!(empty.warning.is_some());

        let single = build_ff_map(&template, &[(Vector3::new(0.1, 0.0, 0.35), 0.7)]);
        assert!(single.warning.is_none());
        assert_eq!(single.filled_cells, 1);
        let i = FeedforwardMap::cell_of(template.lateral_edges(), 0.1).unwrap();
        let j = FeedforwardMap::cell_of(template.vertical_edges(), 0.35).unwrap();
        for a in 0..template.lateral_bins() {
            for b in 0..template.vertical_bins() {
                let expected = if (a, b) == (i, j) { 0.7 } else { 0.0 };
                assert_eq!(single.map.get(a, b), expected);
            }
        }
    }

    #[test]
    fn model_round_trip_within_five_percent() {
        let template = FeedforwardMap::default_grid();
        let model = DownwashModel::default();
        let thrust = 0.32 * GRAVITY;
        let built = build_ff_map(&template, &model_samples(&template, &model, thrust, 8));
        let (mut err2, mut ref2) = (0.0, 0.0);
        for i in 0..template.lateral_bins() {
            for j in 0..template.vertical_bins() {
                let rel = Vector3::new(template.lateral_center(i), 0.0, template.vertical_center(j));
                let truth = -downwash_force(&model, &rel, thrust).z;
                let got = built.map.lookup(&rel);
                err2 += (got - truth).powi(2);
                ref2 += truth * truth;
            }
        }
        let rel_rms = (err2 / ref2).sqrt();
        assert!(rel_rms < 0.05, "relative RMS {rel_rms}");
    }

    #[test]
    fn csv_round_trip() {
        let template = FeedforwardMap::default_grid();
        let built = build_ff_map(&template, &model_samples(&template, &DownwashModel::default(), 3.0, 3)).map;
        let back = FeedforwardMap::from_csv(&built.to_csv()).unwrap();
        assert_eq!(back.lateral_bins(), 9);
        assert_eq!(back.vertical_bins(), 11);
        for i in 0..9 {
            for j in 0..11 {
                assert_relative_eq!(back.get(i, j), built.get(i, j), max_relative = 1e-9);
            }
        }
        assert!(FeedforwardMap::from_csv("lateral_edges,0,1\nvertical_edges,0,1\n").is_err());
        assert!(FeedforwardMap::from_csv("bogus,1").is_err());
    }

    #[test]
    fn config_validation() {
        let p = VehicleParams::main_quadcopter();
        let mut c = CascadedPidConfig::default_for(&p);
        c.validate(&p).unwrap();
        c.thrust_max = 30.0;
        assert!(c.validate(&p).is_err());
        let mut c = CascadedPidConfig::default_for(&p);
        c.pos_kp.x = -1.0;
        assert!(c.validate(&p).is_err());
    }
}
