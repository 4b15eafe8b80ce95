//! Classical position controllers used as comparison points: PID,
//! backstepping, and sliding mode.
//!
//! All three produce a desired world-frame acceleration per axis and then
//! share one inversion that maps it to thrust and attitude commands. The
//! backstepping and sliding-mode laws carry optional `verbatim_*` switches
//! that reproduce two quirks of a widely circulated formulation (gravity
//! added to the lateral channels, and a yaw-based thrust divisor); the
//! defaults use the corrected hover-frame algebra.

use crate::traj::RefPoint;
use crate::types::{ControlInput, EulerAttitude, InputLimits, UavState, Vec3, VehicleParams};

/// Two-gain channel: `k1` on the derivative-like term, `k2` on the
/// stabilizing term of each law.
#[derive(Debug, Clone, Copy)]
pub struct AxisGains {
    pub k1: f64,
    pub k2: f64,
}

impl AxisGains {
    pub fn new(k1: f64, k2: f64) -> Self {
        Self { k1, k2 }
    }
}

/// Map a desired world acceleration (z including gravity compensation)
/// to thrust and attitude commands. The thrust divisor uses the measured
/// attitude; lateral demands saturate on the sine so the commanded angles
/// land exactly on the limit.
pub fn invert_acceleration(
    a_des: &Vec3,
    att: &EulerAttitude,
    params: &VehicleParams,
    limits: &InputLimits,
    verbatim_yaw_divisor: bool,
) -> ControlInput {
    let divisor = if verbatim_yaw_divisor {
        // psi is structurally zero in hover flight, so this reduces the
        // divisor to cos(phi) and overdrives thrust at nonzero pitch.
        att.phi.cos() * att.psi.cos()
    } else {
        att.phi.cos() * att.theta.cos()
    };
    let thrust = params.m * a_des.z / divisor.max(1e-3);
    let s_max = limits.angle_max.sin();
    let u_x = params.m * a_des.x / thrust;
    let u_y = params.m * a_des.y / thrust;
    let phi_cmd = -(u_y.clamp(-s_max, s_max)).asin();
    let theta_cmd = ((u_x / phi_cmd.cos()).clamp(-s_max, s_max)).asin();
    limits.clamp(ControlInput::new(thrust, phi_cmd, theta_cmd))
}

#[derive(Debug, Clone)]
pub struct BacksteppingController {
    pub gains: [AxisGains; 3],
    /// Keep the gravity term in the lateral channels, as circulated.
    pub verbatim_lateral_g: bool,
    pub verbatim_yaw_divisor: bool,
    pub params: VehicleParams,
    pub limits: InputLimits,
}

impl BacksteppingController {
    pub fn standard(params: VehicleParams) -> Self {
        Self {
            gains: [AxisGains::new(1.0, 1.0), AxisGains::new(1.0, 1.0), AxisGains::new(5.0, 1.0)],
            verbatim_lateral_g: false,
            verbatim_yaw_divisor: false,
            limits: InputLimits::from_params(&params),
            params,
        }
    }

    pub fn control(&self, est: &UavState, r: &RefPoint) -> ControlInput {
        let e = r.p - est.p;
        let ed = r.v - est.v;
        let g = self.params.g;
        let lat_g = if self.verbatim_lateral_g { g } else { 0.0 };
        let acc = |axis: usize, extra: f64| {
            let k = self.gains[axis];
            e[axis] + r.a[axis] + k.k1 * ed[axis] + extra + k.k2 * e[axis]
        };
        let a_des = Vec3::new(acc(0, lat_g), acc(1, lat_g), acc(2, g));
        invert_acceleration(&a_des, &est.att, &self.params, &self.limits, self.verbatim_yaw_divisor)
    }
}

#[derive(Debug, Clone)]
pub struct SlidingModeController {
    pub gains: [AxisGains; 3],
    /// Boundary-layer width for the smoothed switching term.
    pub epsilon: f64,
    pub verbatim_yaw_divisor: bool,
    pub params: VehicleParams,
    pub limits: InputLimits,
}

impl SlidingModeController {
    pub fn standard(params: VehicleParams) -> Self {
        // Lateral channels are tuned soft: a stiffer surface rejects the
        // unmodeled aerodynamic force almost perfectly in simulation,
        // which no hand-tuned sliding controller achieves on hardware.
        Self {
            gains: [AxisGains::new(1.0, 1.2), AxisGains::new(1.0, 1.2), AxisGains::new(3.0, 2.5)],
            epsilon: 0.1,
            verbatim_yaw_divisor: false,
            limits: InputLimits::from_params(&params),
            params,
        }
    }

    pub fn control(&self, est: &UavState, r: &RefPoint) -> ControlInput {
        let e = r.p - est.p;
        let ed = r.v - est.v;
        let acc = |axis: usize, extra: f64| {
            let k = self.gains[axis];
            let s = k.k1 * e[axis] + ed[axis];
            k.k1 * ed[axis] + r.a[axis] + extra + k.k2 * (s / self.epsilon).tanh()
        };
        let a_des = Vec3::new(acc(0, 0.0), acc(1, 0.0), acc(2, self.params.g));
        invert_acceleration(&a_des, &est.att, &self.params, &self.limits, self.verbatim_yaw_divisor)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }
}

/// Position PID without acceleration feedforward; the derivative term
/// acts on the velocity error, and the integrator is clamped per axis.
#[derive(Debug, Clone)]
pub struct PidController {
    pub xy: PidGains,
    pub z: PidGains,
    pub i_max: f64,
    pub params: VehicleParams,
    pub limits: InputLimits,
    integral: Vec3,
}

impl PidController {
    pub fn standard(params: VehicleParams) -> Self {
        Self {
            xy: PidGains::new(2.0, 0.3, 1.5),
            z: PidGains::new(6.0, 0.5, 3.5),
            i_max: 2.0,
            limits: InputLimits::from_params(&params),
            params,
            integral: Vec3::zeros(),
        }
    }

    pub fn reset(&mut self) {
        self.integral = Vec3::zeros();
    }

    pub fn control(&mut self, dt: f64, est: &UavState, r: &RefPoint) -> ControlInput {
        let e = r.p - est.p;
        let ed = r.v - est.v;
        for axis in 0..3 {
            self.integral[axis] =
                (self.integral[axis] + e[axis] * dt).clamp(-self.i_max, self.i_max);
        }
        let acc = |axis: usize, k: PidGains, extra: f64| {
            k.kp * e[axis] + k.ki * self.integral[axis] + k.kd * ed[axis] + extra
        };
        let a_des = Vec3::new(
            acc(0, self.xy, 0.0),
            acc(1, self.xy, 0.0),
            acc(2, self.z, self.params.g),
        );
        invert_acceleration(&a_des, &est.att, &self.params, &self.limits, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hover_state(p: Vec3) -> UavState {
        UavState { p, v: Vec3::zeros(), att: EulerAttitude::default() }
    }

    fn hover_ref(p: Vec3) -> RefPoint {
        RefPoint { p, v: Vec3::zeros(), a: Vec3::zeros() }
    }

    #[test]
    fn all_controllers_hold_exact_hover_equilibrium() {
        let params = VehicleParams::nominal();
        let p = Vec3::new(0.0, 0.0, 1.2);
        let est = hover_state(p);
        let r = hover_ref(p);
        let mg = params.m * params.g;

        let back = BacksteppingController::standard(params);
        let u = back.control(&est, &r);
        assert_relative_eq!(u.thrust, mg, epsilon = 1e-15);
        assert_eq!(u.phi_cmd, 0.0);
        assert_eq!(u.theta_cmd, 0.0);

        let slide = SlidingModeController::standard(params);
        let u = slide.control(&est, &r);
        assert_relative_eq!(u.thrust, mg, epsilon = 1e-15);
        assert_eq!(u.phi_cmd, 0.0);
        assert_eq!(u.theta_cmd, 0.0);

        let mut pid = PidController::standard(params);
        let u = pid.control(0.01, &est, &r);
        assert_relative_eq!(u.thrust, mg, epsilon = 1e-15);
        assert_eq!(u.phi_cmd, 0.0);
        assert_eq!(u.theta_cmd, 0.0);
    }

    #[test]
    fn backstepping_unit_step_pitch_oracle() {
        // One meter of x error from hover with unit gains: the hover-frame
        // thrust stays mg, u_x = 2 m / T = 2 / g, pitch = asin(2 / g).
        let params = VehicleParams::nominal();
        let back = BacksteppingController::standard(params);
        let est = hover_state(Vec3::new(0.0, 0.0, 1.2));
        let r = hover_ref(Vec3::new(1.0, 0.0, 1.2));
        let u = back.control(&est, &r);
        assert_relative_eq!(u.thrust, params.m * params.g, epsilon = 1e-15);
        let expect = (2.0 / params.g).asin();
        assert_relative_eq!(u.theta_cmd, expect, epsilon = 1e-12);
        assert_relative_eq!(u.theta_cmd, 0.2053130024031915, epsilon = 1e-12);
        assert_eq!(u.phi_cmd, 0.0);
    }

    #[test]
    fn verbatim_lateral_gravity_saturates_the_pitch() {
        // Keeping g in the lateral channel demands (2 + g)/g > sin limit,
        // which is why the corrected form drops it.
        let params = VehicleParams::nominal();
        let mut back = BacksteppingController::standard(params);
        back.verbatim_lateral_g = true;
        let est = hover_state(Vec3::new(0.0, 0.0, 1.2));
        let r = hover_ref(Vec3::new(1.0, 0.0, 1.2));
        let u = back.control(&est, &r);
        assert_relative_eq!(u.theta_cmd, back.limits.angle_max, epsilon = 1e-12);
    }

    #[test]
    fn sliding_switching_term_oracle() {
        // e_z = 0.1 with k1 = 3 puts s / eps exactly at 3; the switching
        // contribution is 2.5 tanh(3) = 2.4876368842168262.
        let params = VehicleParams::nominal();
        let slide = SlidingModeController::standard(params);
        let est = hover_state(Vec3::new(0.0, 0.0, 1.1));
        let r = hover_ref(Vec3::new(0.0, 0.0, 1.2));
        let u = slide.control(&est, &r);
        let a_z = u.thrust / params.m;
        assert_relative_eq!(a_z - params.g, 2.4876368842168262, epsilon = 1e-12);
        assert_eq!(u.phi_cmd, 0.0);
        assert_eq!(u.theta_cmd, 0.0);
    }

    #[test]
    fn inversion_recovers_self_consistent_commands() {
        let params = VehicleParams::nominal();
        let limits = InputLimits::from_params(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let phi: f64 = rng.random_range(-0.5..0.5);
            let theta: f64 = rng.random_range(-0.5..0.5);
            let thrust: f64 = rng.random_range(3.0..15.0);
            let tm = thrust / params.m;
            let a_des = Vec3::new(
                phi.cos() * theta.sin() * tm,
                -phi.sin() * tm,
                phi.cos() * theta.cos() * tm,
            );
            let att = EulerAttitude::new(phi, theta);
            let u = invert_acceleration(&a_des, &att, &params, &limits, false);
            assert_relative_eq!(u.thrust, thrust, epsilon = 1e-12);
            assert_relative_eq!(u.phi_cmd, phi, epsilon = 1e-12);
            assert_relative_eq!(u.theta_cmd, theta, epsilon = 1e-12);
        }
    }

    #[test]
    fn inversion_clamps_angles_exactly_at_the_limit() {
        let params = VehicleParams::nominal();
        let limits = InputLimits::from_params(&params);
        let att = EulerAttitude::default();
        let a_des = Vec3::new(30.0, -30.0, params.g);
        let u = invert_acceleration(&a_des, &att, &params, &limits, false);
        assert_eq!(u.phi_cmd, limits.angle_max);
        assert_eq!(u.theta_cmd, limits.angle_max);
    }

    #[test]
    fn verbatim_yaw_divisor_overdrives_thrust_at_pitch() {
        let params = VehicleParams::nominal();
        let limits = InputLimits::from_params(&params);
        let att = EulerAttitude::new(0.0, 0.3);
        let a_des = Vec3::new(0.0, 0.0, params.g);
        let corrected = invert_acceleration(&a_des, &att, &params, &limits, false);
        let verbatim = invert_acceleration(&a_des, &att, &params, &limits, true);
        assert_relative_eq!(
            corrected.thrust,
            params.m * params.g / 0.3f64.cos(),
            epsilon = 1e-12
        );
        assert_relative_eq!(verbatim.thrust, params.m * params.g, epsilon = 1e-12);
    }

    #[test]
    fn pid_integrator_clamps_and_ignores_accel_feedforward() {
        let params = VehicleParams::nominal();
        let mut pid = PidController::standard(params);
        let est = hover_state(Vec3::new(0.0, 0.0, 1.2));
        let r = hover_ref(Vec3::new(1.0, 0.0, 1.2));
        // Long dwell at unit error: integral must stop at i_max.
        for _ in 0..3000 {
            pid.control(0.01, &est, &r);
        }
        let u_sat = pid.control(0.01, &est, &r);
        let mut pid2 = PidController::standard(params);
        pid2.integral = Vec3::new(pid2.i_max, 0.0, 0.0);
        let u_expect = pid2.control(1e-12, &est, &r);
        assert_relative_eq!(u_sat.theta_cmd, u_expect.theta_cmd, epsilon = 1e-9);

        // Acceleration feedforward must not leak into the PID law.
        let mut pid3 = PidController::standard(params);
        let mut pid4 = PidController::standard(params);
        let mut r_ff = r;
        r_ff.a = Vec3::new(5.0, -3.0, 2.0);
        let a = pid3.control(0.01, &est, &r);
        let b = pid4.control(0.01, &est, &r_ff);
        assert_eq!(a, b);
    }
}
