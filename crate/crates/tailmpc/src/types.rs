//! Shared state, command, and parameter types.
//!
//! World frame is z-up with gravity along -z; attitude is yaw-pitch-roll
//! (ZYX) Euler angles with yaw held at zero for the whole hover regime, so
//! the rotation is determined by roll `phi` and pitch `theta` alone.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type RotationMatrix = Matrix3<f64>;

/// ZYX Euler attitude in radians. `phi` and `theta` stay inside
/// (-pi/2, pi/2) in normal operation; `psi` is carried for completeness but
/// is zero everywhere in this workbench.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAttitude {
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl EulerAttitude {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta, psi: 0.0 }
    }
}

/// Rigid-body state: inertial position and velocity plus attitude.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UavState {
    pub p: Vec3,
    pub v: Vec3,
    pub att: EulerAttitude,
}

/// Command triplet produced by every controller: collective thrust in
/// newtons plus roll and pitch angle setpoints in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub thrust: f64,
    pub phi_cmd: f64,
    pub theta_cmd: f64,
}

impl ControlInput {
    pub fn new(thrust: f64, phi_cmd: f64, theta_cmd: f64) -> Self {
        Self { thrust, phi_cmd, theta_cmd }
    }

    /// Hover feedforward: weight-compensating thrust, level attitude.
    pub fn hover(params: &VehicleParams) -> Self {
        Self::new(params.m * params.g, 0.0, 0.0)
    }
}

/// Vehicle constants and identified model parameters used by the
/// controllers. Mass and gravity are measured constants; the attitude time
/// constants and drag coefficients come from system identification and are
/// deliberately distinct from the simulator's hidden truth values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Mass in kg.
    pub m: f64,
    /// Gravitational acceleration in m/s^2.
    pub g: f64,
    /// Identified roll closed-loop time constant in seconds.
    pub tau_phi: f64,
    /// Identified pitch closed-loop time constant in seconds.
    pub tau_theta: f64,
    /// Identified per-axis drag coefficients for the quadratic drag model
    /// `a_i = c_di * v_i * |v_i|`; negative for a dissipative fit.
    pub c_dx: f64,
    pub c_dy: f64,
    pub c_dz: f64,
}

impl VehicleParams {
    /// Placeholder parameters before identification has run: correct mass
    /// and gravity, round attitude lags, no drag model.
    pub fn nominal() -> Self {
        Self {
            m: 0.83,
            g: 9.81,
            tau_phi: 0.15,
            tau_theta: 0.15,
            c_dx: 0.0,
            c_dy: 0.0,
            c_dz: 0.0,
        }
    }
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Actuation limits shared by all controllers: thrust box and symmetric
/// roll/pitch angle bound in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputLimits {
    pub t_min: f64,
    pub t_max: f64,
    pub angle_max: f64,
}

impl InputLimits {
    /// Default box derived from vehicle weight: thrust in [0.1, 2.0] times
    /// hover thrust, angles within 0.6 rad.
    pub fn from_params(params: &VehicleParams) -> Self {
        let w = params.m * params.g;
        Self { t_min: 0.1 * w, t_max: 2.0 * w, angle_max: 0.6 }
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.thrust.clamp(self.t_min, self.t_max),
            u.phi_cmd.clamp(-self.angle_max, self.angle_max),
            u.theta_cmd.clamp(-self.angle_max, self.angle_max),
        )
    }
}

/// Body-to-world rotation for ZYX Euler angles: R = Rz(psi) Ry(theta) Rx(phi).
///
/// With psi = 0 the body z axis maps to
/// (cos(phi) sin(theta), -sin(phi), cos(phi) cos(theta)), which is the
/// direction collective thrust acts along in the world frame.
pub fn euler_to_rotation(att: &EulerAttitude) -> RotationMatrix {
    let (sphi, cphi) = att.phi.sin_cos();
    let (sth, cth) = att.theta.sin_cos();
    let (spsi, cpsi) = att.psi.sin_cos();
    Matrix3::new(
        cpsi * cth,
        cpsi * sth * sphi - spsi * cphi,
        cpsi * sth * cphi + spsi * sphi,
        spsi * cth,
        spsi * sth * sphi + cpsi * cphi,
        spsi * sth * cphi - cpsi * sphi,
        -sth,
        cth * sphi,
        cth * cphi,
    )
}

/// Inverse of [`euler_to_rotation`] for |theta| < pi/2.
pub fn rotation_to_euler(r: &RotationMatrix) -> EulerAttitude {
    EulerAttitude {
        phi: r[(2, 1)].atan2(r[(2, 2)]),
        theta: (-r[(2, 0)]).asin(),
        psi: r[(1, 0)].atan2(r[(0, 0)]),
    }
}
