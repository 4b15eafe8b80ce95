//! One-hidden-layer sigmoid network for the residual-acceleration map,
//! trained full-batch with Levenberg-Marquardt.
//!
//! Inputs are [u, v, w, phi, theta, T], outputs the three residual
//! acceleration components. Both sides are min-max normalized to [-1, 1]
//! with ranges taken from the training split; the public `forward` and
//! `input_jacobian` operate in physical units so controllers never see
//! the normalization.
//!
//! The trainer is deterministic for a fixed seed: Gauss-Newton blocks are
//! accumulated in a fixed superblock order regardless of thread count.

use crate::error::{Error, Result};
use crate::pipeline::{sample_input, Dataset, NormStats, SplitTag};
use crate::types::Vec3;
use nalgebra::{DMatrix, DVector, SMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Residual model: 6 inputs, `hidden` sigmoid units, 3 linear outputs.
/// Weight layout is row-major: `w1[h * 6 + j]`, `w2[i * hidden + h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub norm: NormStats,
}

impl MlpModel {
    /// All-zero weights; with zero weights the normalized output is the
    /// bias vector, so the physical output is the target-range midpoint.
    pub fn zeros(hidden: usize, norm: NormStats) -> Self {
        Self {
            hidden,
            w1: vec![0.0; hidden * 6],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 3 * hidden],
            b2: vec![0.0; 3],
            norm,
        }
    }

    pub fn param_count(&self) -> usize {
        10 * self.hidden + 3
    }

    /// Flatten into the trainer's parameter order:
    /// [w1 row-major, b1, w2 row-major, b2].
    pub fn get_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let h = self.hidden;
        assert_eq!(p.len(), self.param_count());
        self.w1.copy_from_slice(&p[..6 * h]);
        self.b1.copy_from_slice(&p[6 * h..7 * h]);
        self.w2.copy_from_slice(&p[7 * h..10 * h]);
        self.b2.copy_from_slice(&p[10 * h..]);
    }

    /// Forward pass in the normalized domain.
    pub fn forward_normalized(&self, xn: &[f64; 6]) -> [f64; 3] {
        let h = self.hidden;
        let mut y = [self.b2[0], self.b2[1], self.b2[2]];
        for k in 0..h {
            let mut z = self.b1[k];
            for j in 0..6 {
                z += self.w1[k * 6 + j] * xn[j];
            }
            let s = sigmoid(z);
            for i in 0..3 {
                y[i] += self.w2[i * h + k] * s;
            }
        }
        y
    }

    /// Predicted residual acceleration, physical units in and out.
    pub fn forward(&self, x: &[f64; 6]) -> Vec3 {
        let xn = self.norm.normalize_input(x);
        let yn = self.forward_normalized(&xn);
        self.norm.denormalize_target(&yn)
    }

    /// Jacobian of the physical output with respect to the physical input,
    /// columns ordered [u, v, w, phi, theta, T].
    pub fn input_jacobian(&self, x: &[f64; 6]) -> SMatrix<f64, 3, 6> {
        let xn = self.norm.normalize_input(x);
        let sx = self.norm.input_scale();
        let sy = self.norm.target_scale();
        let h = self.hidden;
        let mut jac = SMatrix::<f64, 3, 6>::zeros();
        for k in 0..h {
            let mut z = self.b1[k];
            for j in 0..6 {
                z += self.w1[k * 6 + j] * xn[j];
            }
            let s = sigmoid(z);
            let ds = s * (1.0 - s);
            for i in 0..3 {
                let c = self.w2[i * h + k] * ds;
                for j in 0..6 {
                    jac[(i, j)] += c * self.w1[k * 6 + j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..6 {
                jac[(i, j)] *= sy[i] * sx[j];
            }
        }
        jac
    }

    /// Write the 3 normalized-domain rows d y_n / d params for one sample
    /// into `jb` starting at `row0`, and the normalized residual into `r`.
    fn fill_rows(
        &self,
        xn: &[f64; 6],
        yn_target: &[f64; 3],
        jb: &mut DMatrix<f64>,
        r: &mut DVector<f64>,
        row0: usize,
    ) {
        let h = self.hidden;
        let mut y = [self.b2[0], self.b2[1], self.b2[2]];
        for i in 0..3 {
            for c in 7 * h..10 * h + 3 {
                jb[(row0 + i, c)] = 0.0;
            }
            jb[(row0 + i, 10 * h + i)] = 1.0;
        }
        for k in 0..h {
            let mut z = self.b1[k];
            for j in 0..6 {
                z += self.w1[k * 6 + j] * xn[j];
            }
            let s = sigmoid(z);
            let ds = s * (1.0 - s);
            for i in 0..3 {
                y[i] += self.w2[i * h + k] * s;
                let c = self.w2[i * h + k] * ds;
                for j in 0..6 {
                    jb[(row0 + i, k * 6 + j)] = c * xn[j];
                }
                jb[(row0 + i, 6 * h + k)] = c;
                jb[(row0 + i, 7 * h + i * h + k)] = s;
            }
        }
        for i in 0..3 {
            r[row0 + i] = y[i] - yn_target[i];
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::ModelFile(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))?;
        let h = model.hidden;
        if h == 0
            || model.w1.len() != 6 * h
            || model.b1.len() != h
            || model.w2.len() != 3 * h
            || model.b2.len() != 3
        {
            return Err(Error::ModelFile(format!(
                "{}: inconsistent layer sizes for hidden = {h}",
                path.display()
            )));
        }
        if !model.get_params().iter().all(|v| v.is_finite()) {
            return Err(Error::ModelFile(format!("{}: non-finite weights", path.display())));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub mu0: f64,
    pub mu_max: f64,
    /// Stop after this many consecutive validation-MSE increases.
    pub patience: usize,
    /// Stride-decimate the training split above this row count.
    pub max_train_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(hidden: usize, seed: u64) -> Self {
        Self {
            hidden,
            max_epochs: 300,
            mu0: 1e-3,
            mu_max: 1e10,
            patience: 6,
            max_train_samples: 50_000,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub hidden: usize,
    pub n_train_used: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs: Vec<EpochRecord>,
    /// Per-axis RMSE on the test split, physical units (m/s^2).
    pub test_rmse: [f64; 3],
    pub wall_time_s: f64,
}

/// Normalized training row: input and target.
struct Row {
    xn: [f64; 6],
    yn: [f64; 3],
}

fn collect_rows(ds: &Dataset, tag: SplitTag, cap: Option<usize>) -> Vec<Row> {
    let all: Vec<&crate::pipeline::FlightSample> = ds.split(tag).collect();
    let stride = match cap {
        Some(cap) if all.len() > cap => all.len().div_ceil(cap),
        _ => 1,
    };
    all.iter()
        .step_by(stride)
        .map(|s| Row {
            xn: ds.norm.normalize_input(&sample_input(s)),
            yn: ds.norm.normalize_target(&s.a_res),
        })
        .collect()
}

fn mse(model: &MlpModel, rows: &[Row]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let sse: f64 = rows
        .par_iter()
        .map(|r| {
            let y = model.forward_normalized(&r.xn);
            (0..3).map(|i| (y[i] - r.yn[i]).powi(2)).sum::<f64>()
        })
        .sum();
    sse / (3 * rows.len()) as f64
}

/// Fixed superblock count so the buffer accumulation order, and therefore
/// the result bits, never depend on how many worker threads run.
const SUPERBLOCKS: usize = 16;
const GEMM_BLOCK: usize = 256;

fn normal_equations(model: &MlpModel, rows: &[Row]) -> (DMatrix<f64>, DVector<f64>, f64) {
    let p = model.param_count();
    let chunk = rows.len().div_ceil(SUPERBLOCKS).max(1);
    let partials: Vec<(DMatrix<f64>, DVector<f64>, f64)> = rows
        .par_chunks(chunk)
        .map(|sub| {
            let mut jtj = DMatrix::<f64>::zeros(p, p);
            let mut jtr = DVector::<f64>::zeros(p);
            let mut sse = 0.0;
            for block in sub.chunks(GEMM_BLOCK) {
                let mut jb = DMatrix::<f64>::zeros(3 * block.len(), p);
                let mut rb = DVector::<f64>::zeros(3 * block.len());
                for (s, row) in block.iter().enumerate() {
                    model.fill_rows(&row.xn, &row.yn, &mut jb, &mut rb, 3 * s);
                }
                jtj.gemm_tr(1.0, &jb, &jb, 1.0);
                jtr.gemv_tr(1.0, &jb, &rb, 1.0);
                sse += rb.norm_squared();
            }
            (jtj, jtr, sse)
        })
        .collect();
    let mut jtj = DMatrix::<f64>::zeros(p, p);
    let mut jtr = DVector::<f64>::zeros(p);
    let mut sse = 0.0;
    for (a, b, c) in partials {
        jtj += a;
        jtr += b;
        sse += c;
    }
    (jtj, jtr, sse)
}

fn init_weights(model: &mut MlpModel, rng: &mut ChaCha8Rng) {
    let h = model.hidden;
    // Nguyen-Widrow style spread: scaled random directions for the hidden
    // rows plus biases distributed across the active region.
    let beta = 0.7 * (h as f64).powf(1.0 / 6.0);
    for k in 0..h {
        let mut nrm = 0.0;
        for j in 0..6 {
            let v: f64 = rng.random_range(-1.0..1.0);
            model.w1[k * 6 + j] = v;
            nrm += v * v;
        }
        let scale = beta / nrm.sqrt().max(1e-12);
        for j in 0..6 {
            model.w1[k * 6 + j] *= scale;
        }
        model.b1[k] = rng.random_range(-beta..beta);
    }
    for v in model.w2.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in model.b2.iter_mut() {
        *v = 0.0;
    }
}

/// Full-batch Levenberg-Marquardt over the normalized residuals. Each
/// epoch recomputes the normal equations once; rejected steps only raise
/// the damping and re-solve against the same linearization. Returns the
/// weights with the best validation MSE seen.
pub fn train_lm(ds: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    let start = std::time::Instant::now();
    if cfg.hidden == 0 {
        return Err(Error::TrainingFailed("hidden layer must be non-empty".into()));
    }
    let train = collect_rows(ds, SplitTag::Train, Some(cfg.max_train_samples));
    let val = collect_rows(ds, SplitTag::Val, None);
    if train.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("val"));
    }

    let mut model = MlpModel::zeros(cfg.hidden, ds.norm.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_weights(&mut model, &mut rng);

    let p_dim = model.param_count();
    let mut params = DVector::from_vec(model.get_params());
    let mut mu = cfg.mu0;
    let mut epochs = Vec::new();
    let mut best = (f64::INFINITY, params.clone());
    let mut rises = 0usize;
    let mut candidate = model.clone();

    'outer: for epoch in 0..cfg.max_epochs {
        let (jtj, jtr, sse) = normal_equations(&model, &train);
        let cur_mse = sse / (3 * train.len()) as f64;
        if !cur_mse.is_finite() {
            return Err(Error::TrainingFailed(format!("non-finite loss at epoch {epoch}")));
        }

        // Damping retries share this epoch's linearization.
        let accepted = loop {
            let mut damped = jtj.clone();
            for i in 0..p_dim {
                damped[(i, i)] += mu;
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    mu *= 10.0;
                    if mu > cfg.mu_max {
                        break None;
                    }
                    continue;
                }
            };
            let new_params = &params - &step;
            candidate.set_params(new_params.as_slice());
            let new_mse = mse(&candidate, &train);
            if new_mse.is_finite() && new_mse < cur_mse {
                params = new_params;
                model.set_params(params.as_slice());
                mu *= 0.1;
                break Some(new_mse);
            }
            mu *= 10.0;
            if mu > cfg.mu_max {
                break None;
            }
        };

        let Some(train_mse) = accepted else {
            // Damping exhausted: the current point is a numerical minimum.
            break 'outer;
        };
        let val_mse = mse(&model, &val);
        epochs.push(EpochRecord { epoch, train_mse, val_mse, mu });

        if val_mse < best.0 {
            best = (val_mse, params.clone());
            rises = 0;
        } else {
            rises += 1;
            if rises >= cfg.patience {
                break;
            }
        }
        if train_mse < 1e-14 {
            break;
        }
    }

    model.set_params(best.1.as_slice());

    let mut test_rmse = [0.0; 3];
    let test: Vec<&crate::pipeline::FlightSample> = ds.split(SplitTag::Test).collect();
    if !test.is_empty() {
        let mut sq = [0.0; 3];
        for s in &test {
            let pred = model.forward(&sample_input(s));
            for i in 0..3 {
                sq[i] += (pred[i] - s.a_res[i]).powi(2);
            }
        }
        for i in 0..3 {
            test_rmse[i] = (sq[i] / test.len() as f64).sqrt();
        }
    }

    let report = TrainReport {
        hidden: cfg.hidden,
        n_train_used: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        epochs,
        test_rmse,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    if report.epochs.is_empty() {
        return Err(Error::TrainingFailed("no step was ever accepted".into()));
    }
    Ok((model, report))
}
