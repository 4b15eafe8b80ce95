//! Synthetic-truth flight simulator.
//!
//! The plant integrates a point-mass tail-sitter in hover: collective
//! thrust along body z, gravity, and a hidden aerodynamic force the
//! controllers never see directly. Attitude and motor dynamics are
//! first-order lags (attitude additionally rate-limited), integrated with
//! RK4 at a fixed fine step. Wind is a mean field plus an
//! Ornstein-Uhlenbeck gust state advanced discretely between RK4 steps.

use crate::types::{euler_to_rotation, ControlInput, EulerAttitude, UavState, Vec3, VehicleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Hidden truth aerodynamics. The controllers only ever observe the
/// acceleration this produces; none of these coefficients leak into the
/// model side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthAeroParams {
    /// Per-axis quadratic drag in body frame, N s^2/m^2. The x axis faces
    /// the broad side of the wing and dominates.
    pub k_quad: Vec3,
    /// Drag-crisis depth: fraction of the quadratic coefficient shed as
    /// airspeed grows (vortex regime change on the bluff wing).
    pub k_crisis: f64,
    /// Airspeed scale of the drag crisis, m/s.
    pub s_crisis: f64,
    /// Stalled-plate normal-force gain on the x-facing wing, N s^2/m^2.
    pub k_stall: f64,
    /// Propeller-wash/wing interaction gain, N s/m per newton of thrust.
    pub k_pw: f64,
    /// Edgewise-inflow coupling: extra vertical force opposing climb rate,
    /// scaled by lateral airspeed (rotor inflow skews under crossflow),
    /// N s^2/m^2.
    pub k_inflow: f64,
}

impl Default for TruthAeroParams {
    fn default() -> Self {
        Self {
            k_quad: Vec3::new(0.28, 0.22, 0.70),
            k_crisis: 0.45,
            s_crisis: 1.2,
            k_stall: 1.8,
            k_pw: 0.02,
            k_inflow: 0.30,
        }
    }
}

/// Wind field applied to the plant. Gusts are an OU process around the
/// mean with stationary per-axis standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindField {
    None,
    Constant { mean: Vec3 },
    Gusty { mean: Vec3, sigma: f64, corr_time: f64 },
}

impl Default for WindField {
    fn default() -> Self {
        WindField::None
    }
}

impl WindField {
    pub fn mean(&self) -> Vec3 {
        match self {
            WindField::None => Vec3::zeros(),
            WindField::Constant { mean } | WindField::Gusty { mean, .. } => *mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub params: VehicleParams,
    pub aero: TruthAeroParams,
    /// True roll/pitch inner-loop time constants, s. Distinct from the
    /// identified values the controllers use.
    pub tau_phi_true: f64,
    pub tau_theta_true: f64,
    /// Motor thrust lag, s.
    pub motor_tau: f64,
    /// Attitude slew limit, rad/s.
    pub rate_limit: f64,
    /// Integration step, s.
    pub dt_sim: f64,
    /// Position measurement noise, m (1 sigma per axis).
    pub noise_pos_sigma: f64,
    /// Attitude measurement noise, rad (1 sigma per angle).
    pub noise_att_sigma: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            params: VehicleParams::nominal(),
            aero: TruthAeroParams::default(),
            tau_phi_true: 0.18,
            tau_theta_true: 0.12,
            motor_tau: 0.03,
            rate_limit: 6.0,
            dt_sim: 0.002,
            noise_pos_sigma: 0.001,
            noise_att_sigma: 0.2f64.to_radians(),
        }
    }
}

/// Full simulator state: rigid-body state, lagged actual thrust, and the
/// current gust offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub state: UavState,
    pub thrust_actual: f64,
    pub gust: Vec3,
}

impl PlantState {
    /// At-rest equilibrium at `p` with weight-compensating thrust.
    pub fn hover_at(p: Vec3, params: &VehicleParams) -> Self {
        Self {
            state: UavState { p, v: Vec3::zeros(), att: EulerAttitude::default() },
            thrust_actual: params.m * params.g,
            gust: Vec3::zeros(),
        }
    }
}

/// Time derivative of the continuous part of [`PlantState`] (the gust is
/// advanced separately).
#[derive(Debug, Clone, Copy)]
pub struct PlantDeriv {
    pub dp: Vec3,
    pub dv: Vec3,
    pub dphi: f64,
    pub dtheta: f64,
    pub dthrust: f64,
}

/// Truth aerodynamic force in the body frame for air-relative body
/// velocity `v_air` and current thrust.
///
/// Four contributions: anisotropic quadratic drag whose effective
/// coefficient sheds with airspeed (drag crisis on the bluff wing), a
/// flat-plate normal force on the x-facing wing that follows the classic
/// sin(2 alpha) shape below stall and collapses once the incidence
/// passes 45 degrees (gate vanishes for |v_x| >> |v_z|), a
/// propeller-wash term that scales with thrust and opposes body-x motion,
/// and an inflow-skew term that adds vertical drag under crossflow.
pub fn aero_force(v_air: &Vec3, thrust: f64, aero: &TruthAeroParams) -> Vec3 {
    let s = v_air.norm();
    let crisis = 1.0 - aero.k_crisis * s / (s + aero.s_crisis);
    let quad = crisis
        * Vec3::new(
            -aero.k_quad.x * v_air.x * v_air.x.abs(),
            -aero.k_quad.y * v_air.y * v_air.y.abs(),
            -aero.k_quad.z * v_air.z * v_air.z.abs(),
        );
    // |v_sec|^2 sin(2 alpha) with v_sec = (v_x, v_z) collapses to
    // 2 |v_z| v_x; the cubed post-stall gate collapses the force once
    // crossflow overtakes the chordwise component, as hard plate stall
    // does.
    let (u, w) = (v_air.x, v_air.z);
    let stall_gate = (w * w / (w * w + u * u + 0.04)).powi(3);
    let lift_x = -2.0 * aero.k_stall * w.abs() * u * stall_gate;
    let pw_x = -aero.k_pw * thrust * u;
    // Skewed rotor inflow under crossflow: climb drag grows with lateral
    // airspeed. Dissipative (opposes w) and vanishes in planar flight.
    let s_xy = (v_air.x * v_air.x + v_air.y * v_air.y).sqrt();
    let inflow_z = -aero.k_inflow * s_xy * v_air.z;
    quad + Vec3::new(lift_x + pw_x, 0.0, inflow_z)
}

/// Continuous dynamics at fixed wind vector (mean plus current gust).
pub fn plant_derivative(
    ps: &PlantState,
    cmd: &ControlInput,
    cfg: &PlantConfig,
    wind: &Vec3,
) -> PlantDeriv {
    let m = cfg.params.m;
    let r = euler_to_rotation(&ps.state.att);
    let v_air_body = r.transpose() * (ps.state.v - wind);
    let f_body =
        Vec3::new(0.0, 0.0, ps.thrust_actual) + aero_force(&v_air_body, ps.thrust_actual, &cfg.aero);
    let dv = r * f_body / m + Vec3::new(0.0, 0.0, -cfg.params.g);
    let dphi = ((cmd.phi_cmd - ps.state.att.phi) / cfg.tau_phi_true)
        .clamp(-cfg.rate_limit, cfg.rate_limit);
    let dtheta = ((cmd.theta_cmd - ps.state.att.theta) / cfg.tau_theta_true)
        .clamp(-cfg.rate_limit, cfg.rate_limit);
    let dthrust = (cmd.thrust.max(0.0) - ps.thrust_actual) / cfg.motor_tau;
    PlantDeriv { dp: ps.state.v, dv, dphi, dtheta, dthrust }
}

fn advanced(ps: &PlantState, d: &PlantDeriv, dt: f64) -> PlantState {
    PlantState {
        state: UavState {
            p: ps.state.p + d.dp * dt,
            v: ps.state.v + d.dv * dt,
            att: EulerAttitude {
                phi: ps.state.att.phi + d.dphi * dt,
                theta: ps.state.att.theta + d.dtheta * dt,
                psi: ps.state.att.psi,
            },
        },
        thrust_actual: ps.thrust_actual + d.dthrust * dt,
        gust: ps.gust,
    }
}

/// One RK4 step of length `dt` under zero-order-hold command and frozen
/// wind. The gust state is carried through unchanged.
pub fn step_rk4(
    ps: &PlantState,
    cmd: &ControlInput,
    cfg: &PlantConfig,
    wind: &Vec3,
    dt: f64,
) -> PlantState {
    let k1 = plant_derivative(ps, cmd, cfg, wind);
    let k2 = plant_derivative(&advanced(ps, &k1, 0.5 * dt), cmd, cfg, wind);
    let k3 = plant_derivative(&advanced(ps, &k2, 0.5 * dt), cmd, cfg, wind);
    let k4 = plant_derivative(&advanced(ps, &k3, dt), cmd, cfg, wind);
    let combined = PlantDeriv {
        dp: (k1.dp + 2.0 * (k2.dp + k3.dp) + k4.dp) / 6.0,
        dv: (k1.dv + 2.0 * (k2.dv + k3.dv) + k4.dv) / 6.0,
        dphi: (k1.dphi + 2.0 * (k2.dphi + k3.dphi) + k4.dphi) / 6.0,
        dtheta: (k1.dtheta + 2.0 * (k2.dtheta + k3.dtheta) + k4.dtheta) / 6.0,
        dthrust: (k1.dthrust + 2.0 * (k2.dthrust + k3.dthrust) + k4.dthrust) / 6.0,
    };
    advanced(ps, &combined, dt)
}

/// Noisy pose sample, the only quantities the data pipeline may rely on;
/// velocity is never output and must be reconstructed offline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMeasurement {
    pub t: f64,
    pub p: Vec3,
    pub att: EulerAttitude,
}

/// Stateful simulator: owns the plant state, clock, wind field, and two
/// independent seeded RNG streams (gust process and measurement noise) so
/// that enabling measurement noise does not perturb the wind realization.
pub struct Plant {
    pub cfg: PlantConfig,
    pub wind: WindField,
    ps: PlantState,
    t: f64,
    rng_gust: ChaCha8Rng,
    rng_meas: ChaCha8Rng,
}

impl Plant {
    pub fn new(cfg: PlantConfig, wind: WindField, start: PlantState, seed: u64) -> Self {
        Self {
            cfg,
            wind,
            ps: start,
            t: 0.0,
            rng_gust: ChaCha8Rng::seed_from_u64(seed),
            rng_meas: ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn true_state(&self) -> &PlantState {
        &self.ps
    }

    /// Wind vector currently acting on the vehicle.
    pub fn wind_now(&self) -> Vec3 {
        self.wind.mean() + self.ps.gust
    }

    /// Advance one `dt_sim` step under zero-order-hold `cmd`, then update
    /// the gust state with an exact OU discretization.
    pub fn step(&mut self, cmd: &ControlInput) {
        let wind = self.wind_now();
        self.ps = step_rk4(&self.ps, cmd, &self.cfg, &wind, self.cfg.dt_sim);
        if let WindField::Gusty { sigma, corr_time, .. } = self.wind {
            let a = (-self.cfg.dt_sim / corr_time).exp();
            let diff = sigma * (1.0 - a * a).sqrt();
            let n = Vec3::new(
                StandardNormal.sample(&mut self.rng_gust),
                StandardNormal.sample(&mut self.rng_gust),
                StandardNormal.sample(&mut self.rng_gust),
            );
            self.ps.gust = a * self.ps.gust + diff * n;
        }
        self.t += self.cfg.dt_sim;
    }

    /// Noisy mocap-style pose sample at the current time.
    pub fn measure(&mut self) -> PoseMeasurement {
        let mut gauss = |sigma: f64| -> f64 {
            let n: f64 = StandardNormal.sample(&mut self.rng_meas);
            sigma * n
        };
        PoseMeasurement {
            t: self.t,
            p: self.ps.state.p
                + Vec3::new(
                    gauss(self.cfg.noise_pos_sigma),
                    gauss(self.cfg.noise_pos_sigma),
                    gauss(self.cfg.noise_pos_sigma),
                ),
            att: EulerAttitude {
                phi: self.ps.state.att.phi + gauss(self.cfg.noise_att_sigma),
                theta: self.ps.state.att.theta + gauss(self.cfg.noise_att_sigma),
                psi: self.ps.state.att.psi + gauss(self.cfg.noise_att_sigma),
            },
        }
    }
}
