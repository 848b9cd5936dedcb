//! Rigid-body vehicle dynamics, docked composite bodies and the platform
//! contact model.
//!
//! World frame is z-up. Forces in a [`Wrench`] are expressed in the world
//! frame and exclude gravity, which the integrator adds itself. Torques are
//! expressed in the body frame.

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;

/// Tolerance on the attitude quaternion norm after each step.
pub const ATTITUDE_NORM_TOL: f64 = 1e-9;

pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid contact input: {0}")]
    InvalidContact(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation.
    pub attitude: UnitQuaternion<f64>,
    /// Body-frame angular velocity, rad/s.
    pub angular_velocity: Vector3<f64>,
}

impl RigidBodyState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
        }
    }

    /// Body z axis expressed in the world frame.
    pub fn body_z(&self) -> Vector3<f64> {
        self.attitude * Vector3::z()
    }

    pub fn check_finite(&self) -> Result<(), DynamicsError> {
        if !all_finite(&self.position) {
            return Err(DynamicsError::NonFinite("position"));
        }
        if !all_finite(&self.velocity) {
            return Err(DynamicsError::NonFinite("velocity"));
        }
        let q = self.attitude.quaternion();
        if !(q.w.is_finite() && all_finite(&q.imag())) {
            return Err(DynamicsError::NonFinite("attitude"));
        }
        if !all_finite(&self.angular_velocity) {
            return Err(DynamicsError::NonFinite("angular_velocity"));
        }
        Ok(())
    }
}

/// Physical description of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// Total mass including any battery carried, kg.
    pub mass: f64,
    pub arm_length: f64,
    pub prop_diameter: f64,
    /// Total thrust of all rotors at full command, N.
    pub max_thrust: f64,
    /// Body-frame inertia about the centre of mass, kg·m².
    pub inertia: Matrix3<f64>,
    /// Powertrain constant relating hover power to mass^(3/2), W/kg^(3/2).
    pub k_p: f64,
}

impl VehicleParams {
    /// Main quadcopter preset (820 g, 27 N, 203 mm props, 165 mm arms).
    pub fn main_quadcopter() -> Self {
        Self {
            mass: 0.820,
            arm_length: 0.165,
            prop_diameter: 0.203,
            max_thrust: 27.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(6.5e-3, 6.5e-3, 1.2e-2)),
            k_p: 164.4,
        }
    }

    /// Flying-battery preset (320 g with both packs, 8 N, 76 mm props, 58 mm arms).
    pub fn flying_battery() -> Self {
        Self {
            mass: 0.320,
            arm_length: 0.058,
            prop_diameter: 0.076,
            max_thrust: 8.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(6.0e-4, 6.0e-4, 1.0e-3)),
            k_p: 390.0,
        }
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * GRAVITY
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let scalars = [self.mass, self.arm_length, self.prop_diameter, self.max_thrust, self.k_p];
        if scalars.iter().any(|v| !v.is_finite()) || self.inertia.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidParams("non-finite parameter".into()));
        }
        if self.mass <= 0.0 {
            return Err(DynamicsError::InvalidParams(format!("mass {} must be positive", self.mass)));
        }
        if self.max_thrust <= self.mass * GRAVITY {
            return Err(DynamicsError::InvalidParams(format!(
                "max thrust {} N cannot hover {} kg",
                self.max_thrust, self.mass
            )));
        }
        if self.arm_length <= 0.0 || self.prop_diameter <= 0.0 || self.k_p <= 0.0 {
            return Err(DynamicsError::InvalidParams(
                "arm length, prop diameter and k_p must be positive".into(),
            ));
        }
        check_inertia(&self.inertia, false)
    }
}

fn check_inertia(inertia: &Matrix3<f64>, allow_zero: bool) -> Result<(), DynamicsError> {
    if (inertia - inertia.transpose()).abs().max() > 1e-12 {
        return Err(DynamicsError::InvalidParams("inertia is not symmetric".into()));
    }
    let min_eig = SymmetricEigen::new(*inertia).eigenvalues.min();
    let ok = if allow_zero { min_eig >= 0.0 } else { min_eig > 0.0 };
    if !ok {
        return Err(DynamicsError::InvalidParams("inertia is not positive definite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    /// World-frame force, N (gravity excluded).
    pub force: Vector3<f64>,
    /// Body-frame torque, N·m.
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.force) && all_finite(&self.torque)
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

fn all_finite(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[derive(Clone, Copy)]
struct Raw {
    p: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

impl Raw {
    fn offset(&self, d: &Raw, h: f64) -> Raw {
        Raw {
            p: self.p + d.p * h,
            v: self.v + d.v * h,
            q: self.q + d.q * h,
            w: self.w + d.w * h,
        }
    }
}

fn derivative(s: &Raw, inv_mass: f64, inertia: &Matrix3<f64>, inv_inertia: &Matrix3<f64>, wrench: &Wrench) -> Raw {
    let gyro = s.w.cross(&(inertia * s.w));
    Raw {
        p: s.v,
        v: wrench.force * inv_mass + gravity_vector(),
        q: s.q * Quaternion::from_imag(s.w) * 0.5,
        w: inv_inertia * (wrench.torque - gyro),
    }
}

/// Advances one vehicle by a single classical Runge-Kutta step. The wrench
/// is held constant over the step.
pub fn step_rigid_body(
    state: &RigidBodyState,
    params: &VehicleParams,
    wrench: &Wrench,
    dt: f64,
) -> Result<RigidBodyState, DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    state.check_finite()?;
    if !wrench.is_finite() {
        return Err(DynamicsError::NonFinite("wrench"));
    }
    let inv_inertia = params
        .inertia
        .try_inverse()
        .ok_or_else(|| DynamicsError::InvalidParams("singular inertia".into()))?;
    let inv_mass = 1.0 / params.mass;

    let s0 = Raw {
        p: state.position,
        v: state.velocity,
        q: *state.attitude.quaternion(),
        w: state.angular_velocity,
    };
    let f = |s: &Raw| derivative(s, inv_mass, &params.inertia, &inv_inertia, wrench);
    let k1 = f(&s0);
    let k2 = f(&s0.offset(&k1, dt / 2.0));
    let k3 = f(&s0.offset(&k2, dt / 2.0));
    let k4 = f(&s0.offset(&k3, dt));
    let h = dt / 6.0;
    let next = Raw {
        p: s0.p + (k1.p + k2.p * 2.0 + k3.p * 2.0 + k4.p) * h,
        v: s0.v + (k1.v + k2.v * 2.0 + k3.v * 2.0 + k4.v) * h,
        q: s0.q + (k1.q + k2.q * 2.0 + k3.q * 2.0 + k4.q) * h,
        w: s0.w + (k1.w + k2.w * 2.0 + k3.w * 2.0 + k4.w) * h,
    };

    let out = RigidBodyState {
        position: next.p,
        velocity: next.v,
        attitude: UnitQuaternion::new_normalize(next.q),
        angular_velocity: next.w,
    };
    out.check_finite()?;
    Ok(out)
}

/// Mass properties of the docked pair treated as one rigid body.
///
/// `mount_offset` is the flying battery's centre of mass relative to the main
/// vehicle's, in the main body frame. Thrust limits, geometry and `k_p` are
/// the main vehicle's.
pub fn composite_params(
    main: &VehicleParams,
    fb: &VehicleParams,
    mount_offset: &Vector3<f64>,
) -> Result<VehicleParams, DynamicsError> {
    main.validate()?;
    if !(fb.mass >= 0.0 && fb.mass.is_finite()) {
        return Err(DynamicsError::InvalidParams(format!("flying battery mass {}", fb.mass)));
    }
    check_inertia(&fb.inertia, true)?;
    if !all_finite(mount_offset) {
        return Err(DynamicsError::NonFinite("mount_offset"));
    }
    if fb.mass == 0.0 {
        return Ok(main.clone());
    }
    let total = main.mass + fb.mass;
    let reduced = main.mass * fb.mass / total;
    let d = mount_offset;
    let transfer = (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * reduced;
    Ok(VehicleParams {
        mass: total,
        inertia: main.inertia + fb.inertia + transfer,
        ..main.clone()
    })
}

/// Composite centre of mass relative to the main vehicle's, body frame.
pub fn composite_com_offset(main_mass: f64, fb_mass: f64, mount_offset: &Vector3<f64>) -> Vector3<f64> {
    mount_offset * (fb_mass / (main_mass + fb_mass))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSolution {
    /// Along the main body z axis; positive presses the legs into the platform.
    pub normal_force: f64,
    /// Friction magnitude required in the platform plane.
    pub required_friction: f64,
    pub engaged: bool,
}

/// Contact forces required for the docked vehicles to share one acceleration,
/// neglecting rotational terms. `thrust` acts along the main body z axis and
/// `external_planar_force` acts on the main vehicle in the platform plane.
pub fn contact_forces(
    main_mass: f64,
    fb_mass: f64,
    thrust: f64,
    external_planar_force: f64,
) -> Result<ContactSolution, DynamicsError> {
    if !(main_mass > 0.0 && fb_mass > 0.0) {
        return Err(DynamicsError::InvalidContact(format!(
            "masses must be positive (main {main_mass}, flying battery {fb_mass})"
        )));
    }
    if !thrust.is_finite() || !external_planar_force.is_finite() {
        return Err(DynamicsError::InvalidContact("non-finite force".into()));
    }
    let share = fb_mass / (main_mass + fb_mass);
    let normal_force = share * thrust;
    Ok(ContactSolution {
        normal_force,
        required_friction: share * external_planar_force.abs(),
        engaged: normal_force >= 0.0,
    })
}

/// Whether static friction with coefficient `mu` can hold the docked pair together.
pub fn contact_retained(contact: &ContactSolution, mu: f64) -> bool {
    contact.engaged && contact.required_friction <= mu * contact.normal_force
}

/// Maps total thrust and body torque onto four rotors in an X layout and back.
#[derive(Debug, Clone)]
pub struct RotorMixer {
    allocation: Matrix4<f64>,
    inverse: Matrix4<f64>,
    max_rotor_thrust: f64,
}

/// Rotor drag torque per newton of thrust, m.
pub const YAW_TORQUE_COEFF: f64 = 0.016;

impl RotorMixer {
    pub fn new(params: &VehicleParams) -> Self {
        let a = params.arm_length / std::f64::consts::SQRT_2;
        // (x, y, spin) for front-left, front-right, rear-right, rear-left.
        let rotors = [(a, a, 1.0), (a, -a, -1.0), (-a, -a, 1.0), (-a, a, -1.0)];
        let mut allocation = Matrix4::zeros();
        for (i, (x, y, spin)) in rotors.iter().enumerate() {
            allocation[(0, i)] = 1.0;
            allocation[(1, i)] = *y;
            allocation[(2, i)] = -*x;
            allocation[(3, i)] = spin * YAW_TORQUE_COEFF;
        }
        let inverse = allocation.try_inverse().expect("X-layout allocation is invertible");
        Self {
            allocation,
            inverse,
            max_rotor_thrust: params.max_thrust / 4.0,
        }
    }

    /// Per-rotor thrusts, each clamped to `[0, max_thrust / 4]`.
    pub fn mix(&self, thrust: f64, torque: &Vector3<f64>) -> [f64; 4] {
        let f = self.inverse * Vector4::new(thrust, torque.x, torque.y, torque.z);
        let mut out = [0.0; 4];
        for (o, v) in out.iter_mut().zip(f.iter()) {
            *o = v.clamp(0.0, self.max_rotor_thrust);
        }
        out
    }

    /// Total thrust and body torque produced by the given rotor thrusts.
    pub fn unmix(&self, rotors: &[f64; 4]) -> (f64, Vector3<f64>) {
        let w = self.allocation * Vector4::from_column_slice(rotors);
        (w[0], Vector3::new(w[1], w[2], w[3]))
    }

    pub fn wrench(&self, rotors: &[f64; 4], attitude: &UnitQuaternion<f64>) -> Wrench {
        let (thrust, torque) = self.unmix(rotors);
        Wrench::new(attitude * Vector3::new(0.0, 0.0, thrust), torque)
    }
}
