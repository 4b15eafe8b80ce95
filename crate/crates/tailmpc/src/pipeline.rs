//! Flight-data pipeline: raw pose logs in, training-ready residual
//! acceleration dataset out.
//!
//! Logged pose is resampled onto a uniform 100 Hz grid, smoothed with a
//! centered moving average, and differentiated twice to recover velocity
//! and acceleration. The nominal thrust-plus-gravity model is subtracted
//! to leave the residual acceleration the network learns. Splits are
//! assigned in contiguous 5 s blocks so that train/val/test do not share
//! adjacent, highly correlated samples.

use crate::error::{Error, Result};
use crate::types::{euler_to_rotation, ControlInput, EulerAttitude, Vec3, VehicleParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const RESAMPLE_DT: f64 = 0.01;
/// Longest tolerated gap between consecutive raw records, s.
pub const MAX_GAP: f64 = 0.5;
/// Default smoothing window (samples at 100 Hz).
pub const DEFAULT_FILTER_WINDOW: usize = 15;
/// Split block length in samples (5 s at 100 Hz).
pub const SPLIT_BLOCK: usize = 500;

/// One raw log record: timestamp, measured pose, and the command that was
/// active. Velocity is deliberately absent; it is reconstructed here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub t: f64,
    pub p: Vec3,
    pub att: EulerAttitude,
    pub cmd: ControlInput,
}

/// A contiguous recording from one flight segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLog {
    pub label: String,
    pub records: Vec<RawRecord>,
}

/// One processed sample: reconstructed velocity and acceleration plus the
/// nominal-model prediction and the residual the network must learn.
/// `a_res = a - a_nom` holds exactly by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightSample {
    pub t: f64,
    pub v: Vec3,
    pub att: EulerAttitude,
    pub thrust: f64,
    pub a: Vec3,
    pub a_nom: Vec3,
    pub a_res: Vec3,
}

/// Network input layout shared by training and the controllers:
/// [u, v, w, phi, theta, T].
pub fn sample_input(s: &FlightSample) -> [f64; 6] {
    [s.v.x, s.v.y, s.v.z, s.att.phi, s.att.theta, s.thrust]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Min-max ranges over the training split, used to map network inputs and
/// targets into [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_min: [f64; 6],
    pub input_max: [f64; 6],
    pub target_min: [f64; 3],
    pub target_max: [f64; 3],
}

impl NormStats {
    /// Identity mapping ([-1, 1] ranges everywhere), handy for tests.
    pub fn identity() -> Self {
        Self {
            input_min: [-1.0; 6],
            input_max: [1.0; 6],
            target_min: [-1.0; 3],
            target_max: [1.0; 3],
        }
    }

    pub fn from_samples<'a>(samples: impl Iterator<Item = &'a FlightSample>) -> Result<Self> {
        let mut input_min = [f64::INFINITY; 6];
        let mut input_max = [f64::NEG_INFINITY; 6];
        let mut target_min = [f64::INFINITY; 3];
        let mut target_max = [f64::NEG_INFINITY; 3];
        let mut n = 0usize;
        for s in samples {
            let x = sample_input(s);
            for i in 0..6 {
                input_min[i] = input_min[i].min(x[i]);
                input_max[i] = input_max[i].max(x[i]);
            }
            for i in 0..3 {
                target_min[i] = target_min[i].min(s.a_res[i]);
                target_max[i] = target_max[i].max(s.a_res[i]);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyDataset("train"));
        }
        for i in 0..6 {
            if !(input_max[i] - input_min[i] > 1e-12) {
                return Err(Error::DegenerateChannel(i));
            }
        }
        for i in 0..3 {
            if !(target_max[i] - target_min[i] > 1e-12) {
                return Err(Error::DegenerateChannel(6 + i));
            }
        }
        Ok(Self { input_min, input_max, target_min, target_max })
    }

    pub fn normalize_input(&self, x: &[f64; 6]) -> [f64; 6] {
        std::array::from_fn(|i| {
            2.0 * (x[i] - self.input_min[i]) / (self.input_max[i] - self.input_min[i]) - 1.0
        })
    }

    pub fn normalize_target(&self, y: &Vec3) -> [f64; 3] {
        std::array::from_fn(|i| {
            2.0 * (y[i] - self.target_min[i]) / (self.target_max[i] - self.target_min[i]) - 1.0
        })
    }

    pub fn denormalize_target(&self, yn: &[f64; 3]) -> Vec3 {
        Vec3::from_fn(|i, _| {
            (yn[i] + 1.0) * 0.5 * (self.target_max[i] - self.target_min[i]) + self.target_min[i]
        })
    }

    /// Per-channel d(normalized)/d(physical) input scale.
    pub fn input_scale(&self) -> [f64; 6] {
        std::array::from_fn(|i| 2.0 / (self.input_max[i] - self.input_min[i]))
    }

    /// Per-channel d(physical)/d(normalized) target scale.
    pub fn target_scale(&self) -> [f64; 3] {
        std::array::from_fn(|i| 0.5 * (self.target_max[i] - self.target_min[i]))
    }
}

/// Processed dataset: samples with parallel split tags plus the
/// normalization computed on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<FlightSample>,
    pub tags: Vec<SplitTag>,
    pub norm: NormStats,
}

impl Dataset {
    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &FlightSample> {
        self.samples.iter().zip(&self.tags).filter_map(move |(s, &t)| (t == tag).then_some(s))
    }

    pub fn split_len(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

/// Linearly resample a raw log onto a uniform 100 Hz grid anchored at its
/// first timestamp. A log that is already uniform at 100 Hz round-trips
/// unchanged.
pub fn resample_100hz(log: &RawLog) -> Result<RawLog> {
    let rec = &log.records;
    if rec.len() < 2 {
        return Err(Error::SeriesTooShort { need: 2, got: rec.len() });
    }
    for w in rec.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(Error::CorruptLog(format!(
                "non-monotonic timestamps at t = {:.4} in '{}'",
                w[0].t, log.label
            )));
        }
        if dt > MAX_GAP {
            return Err(Error::CorruptLog(format!(
                "gap of {dt:.3} s at t = {:.4} in '{}'",
                w[0].t, log.label
            )));
        }
    }
    let t0 = rec[0].t;
    let t_end = rec[rec.len() - 1].t;
    let n = ((t_end - t0) / RESAMPLE_DT).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut hi = 1usize;
    for k in 0..n {
        let t = t0 + k as f64 * RESAMPLE_DT;
        while hi + 1 < rec.len() && rec[hi].t < t {
            hi += 1;
        }
        let (a, b) = (&rec[hi - 1], &rec[hi]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let lerp = |x: f64, y: f64| x + w * (y - x);
        out.push(RawRecord {
            t,
            p: a.p + w * (b.p - a.p),
            att: EulerAttitude {
                phi: lerp(a.att.phi, b.att.phi),
                theta: lerp(a.att.theta, b.att.theta),
                psi: lerp(a.att.psi, b.att.psi),
            },
            cmd: ControlInput::new(
                lerp(a.cmd.thrust, b.cmd.thrust),
                lerp(a.cmd.phi_cmd, b.cmd.phi_cmd),
                lerp(a.cmd.theta_cmd, b.cmd.theta_cmd),
            ),
        });
    }
    Ok(RawLog { label: log.label.clone(), records: out })
}

/// Centered moving average with an odd window; near the ends the window
/// truncates at the series boundary.
pub fn moving_average(xs: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 || window > xs.len() {
        return Err(Error::InvalidWindow(window));
    }
    let h = window / 2;
    let n = xs.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            xs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Central-difference derivative with one-sided differences at the ends.
pub fn differentiate(xs: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::SeriesTooShort { need: 2, got: n });
    }
    let mut out = Vec::with_capacity(n);
    out.push((xs[1] - xs[0]) / dt);
    for i in 1..n - 1 {
        out.push((xs[i + 1] - xs[i - 1]) / (2.0 * dt));
    }
    out.push((xs[n - 1] - xs[n - 2]) / dt);
    Ok(out)
}

/// Acceleration predicted by the nominal thrust-plus-gravity model. The
/// velocity argument is part of the model interface but unused: the
/// nominal model carries no aerodynamic terms, which is exactly what makes
/// the residual worth learning.
pub fn nominal_acceleration(
    _v: &Vec3,
    att: &EulerAttitude,
    thrust: f64,
    params: &VehicleParams,
) -> Vec3 {
    let r = euler_to_rotation(att);
    r * Vec3::new(0.0, 0.0, thrust / params.m) + Vec3::new(0.0, 0.0, -params.g)
}

fn process_log(log: &RawLog, params: &VehicleParams, window: usize) -> Result<Vec<FlightSample>> {
    let uniform = resample_100hz(log)?;
    let rec = &uniform.records;
    let trim = window / 2 + 2;
    if rec.len() < 2 * trim + 3 {
        return Err(Error::SeriesTooShort { need: 2 * trim + 3, got: rec.len() });
    }
    let grab = |f: &dyn Fn(&RawRecord) -> f64| -> Vec<f64> { rec.iter().map(f).collect() };
    let filt = |xs: Vec<f64>| moving_average(&xs, window);
    let px = filt(grab(&|r| r.p.x))?;
    let py = filt(grab(&|r| r.p.y))?;
    let pz = filt(grab(&|r| r.p.z))?;
    let phi = filt(grab(&|r| r.att.phi))?;
    let theta = filt(grab(&|r| r.att.theta))?;
    let thrust = filt(grab(&|r| r.cmd.thrust))?;
    let vx = differentiate(&px, RESAMPLE_DT)?;
    let vy = differentiate(&py, RESAMPLE_DT)?;
    let vz = differentiate(&pz, RESAMPLE_DT)?;
    let ax = differentiate(&vx, RESAMPLE_DT)?;
    let ay = differentiate(&vy, RESAMPLE_DT)?;
    let az = differentiate(&vz, RESAMPLE_DT)?;
    let mut samples = Vec::with_capacity(rec.len() - 2 * trim);
    for i in trim..rec.len() - trim {
        let v = Vec3::new(vx[i], vy[i], vz[i]);
        let a = Vec3::new(ax[i], ay[i], az[i]);
        let att = EulerAttitude::new(phi[i], theta[i]);
        let a_nom = nominal_acceleration(&v, &att, thrust[i], params);
        samples.push(FlightSample {
            t: rec[i].t,
            v,
            att,
            thrust: thrust[i],
            a,
            a_nom,
            a_res: a - a_nom,
        });
    }
    Ok(samples)
}

/// Run the full pipeline over a set of raw logs and assign 70/15/15
/// train/val/test splits in shuffled contiguous blocks. Proportions are
/// exact to the sample: the block crossing each quota boundary is divided
/// at the boundary.
pub fn build_dataset(
    logs: &[RawLog],
    params: &VehicleParams,
    window: usize,
    seed: u64,
) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    for log in logs {
        let part = process_log(log, params, window)?;
        let base = samples.len();
        let mut start = 0;
        while start < part.len() {
            let end = (start + SPLIT_BLOCK).min(part.len());
            blocks.push((base + start, base + end));
            start = end;
        }
        samples.extend(part);
    }
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyDataset("all"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blocks.shuffle(&mut rng);

    let n_train = (0.70 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    let mut tags = vec![SplitTag::Test; n];
    let mut assigned = 0usize;
    for &(lo, hi) in &blocks {
        for idx in lo..hi {
            let tag = if assigned < n_train {
                SplitTag::Train
            } else if assigned < n_train + n_val {
                SplitTag::Val
            } else {
                SplitTag::Test
            };
            tags[idx] = tag;
            assigned += 1;
        }
    }
    let norm = NormStats::from_samples(
        samples.iter().zip(&tags).filter_map(|(s, &t)| (t == SplitTag::Train).then_some(s)),
    )?;
    Ok(Dataset { samples, tags, norm })
}

/// Fit the time constant of `resp' = (cmd - resp) / tau` by regressing the
/// central-difference derivative of the response on the tracking error.
/// Only interior samples enter the fit; the one-sided end differences are
/// first-order and would bias it.
pub fn identify_first_order_tau(cmd: &[f64], resp: &[f64], dt: f64) -> Result<f64> {
    if cmd.len() != resp.len() {
        return Err(Error::NoExcitation("cmd/response length mismatch".into()));
    }
    if resp.len() < 5 {
        return Err(Error::SeriesTooShort { need: 5, got: resp.len() });
    }
    let dx = differentiate(resp, dt)?;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 1..resp.len() - 1 {
        let r = cmd[i] - resp[i];
        sxy += dx[i] * r;
        sxx += r * r;
    }
    if sxx / (resp.len() - 2) as f64 <= 1e-10 {
        return Err(Error::NoExcitation("tracking error variance too small".into()));
    }
    let b = sxy / sxx;
    if b <= 0.0 {
        return Err(Error::NoExcitation(format!("non-dissipative fit, b = {b:.3e}")));
    }
    Ok(1.0 / b)
}

/// Per-axis least-squares fit of residual acceleration against v|v|,
/// giving the quadratic-drag coefficients of the identified model.
pub fn identify_drag_coeffs(samples: &[FlightSample]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for axis in 0..3 {
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        for s in samples {
            let x = s.v[axis] * s.v[axis].abs();
            sxy += s.a_res[axis] * x;
            sxx += x * x;
        }
        if sxx <= 1e-9 {
            return Err(Error::NoExcitation(format!("axis {axis} has no velocity coverage")));
        }
        out[axis] = sxy / sxx;
    }
    Ok(out)
}
