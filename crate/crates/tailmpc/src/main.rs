//! Command-line front end: fly the simulator to collect logs, build
//! datasets, train the residual network, identify model parameters, run
//! closed-loop tracking experiments, and benchmark solver timing.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tailmpc::harness::{
    benchmark_solver, benchmark_suite, build_controller_with, collect_data, compute_metrics,
    run_closed_loop, write_collection, AnyController, CollectConfig, ControllerSpec, ModelSet,
    RunConfig, RunMetrics, StepSpec, SuiteConfig, SuiteReport, EVAL_START,
};
use tailmpc::logio::{
    load_params_toml, read_dataset_csv, read_raw_log, save_params_toml, write_dataset_csv,
    write_raw_log, write_run_csv,
};
use tailmpc::mlp::{train_lm, MlpModel, TrainConfig};
use tailmpc::mpc::{MpcConfig, PredictionModel};
use tailmpc::pipeline::{
    build_dataset, identify_drag_coeffs, identify_first_order_tau, resample_100hz, RawLog,
    SplitTag, DEFAULT_FILTER_WINDOW, RESAMPLE_DT,
};
use tailmpc::plant::{PlantConfig, WindField};
use tailmpc::traj::{Envelope, Trajectory, DEFAULT_ALTITUDE};
use tailmpc::types::{Vec3, VehicleParams};

#[derive(Parser)]
#[command(
    name = "tailmpc",
    version,
    about = "Hover-regime tail-sitter workbench: simulate, learn residual dynamics, compare controllers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fly the excitation program under PID and write raw pose logs.
    Collect(CollectArgs),
    /// Turn raw logs into a filtered, split, normalized dataset CSV.
    BuildDataset(BuildDatasetArgs),
    /// Train the residual network with Levenberg-Marquardt.
    Train(TrainArgs),
    /// Identify attitude time constants and drag coefficients from logs.
    Identify(IdentifyArgs),
    /// Run one controller on one trajectory and write the tracking CSV.
    Run(RunArgs),
    /// Run the full controller x trajectory x wind comparison grid.
    Suite(SuiteArgs),
    /// Time OCP solves for each prediction model.
    BenchSolver(BenchSolverArgs),
}

/// On-disk experiment configuration (TOML). Every field is optional;
/// command-line flags take precedence over file values, which take
/// precedence over built-in defaults.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentFile {
    controller: Option<String>,
    trajectory: Option<String>,
    step_size: Option<f64>,
    duration: Option<f64>,
    control_rate: Option<f64>,
    seed: Option<u64>,
    wind: Option<WindField>,
    model: Option<PathBuf>,
    model_reduced: Option<PathBuf>,
    params: Option<PathBuf>,
    out: Option<PathBuf>,
    timing: Option<bool>,
    plant: Option<PlantConfig>,
    mpc: Option<MpcOverrides>,
    gains: Option<GainsFile>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentFile> {
    match path {
        None => Ok(ExperimentFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Partial override of the MPC configuration from the config file.
#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MpcOverrides {
    horizon: Option<usize>,
    dt: Option<f64>,
    sqp_iters: Option<usize>,
    q: Option<[f64; 8]>,
    r: Option<[f64; 3]>,
    q_terminal: Option<[f64; 8]>,
    levenberg: Option<f64>,
    defect_tol: Option<f64>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    angle_max: Option<f64>,
}

impl MpcOverrides {
    fn apply(&self, cfg: &mut MpcConfig) {
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.sqp_iters {
            cfg.sqp_iters = v;
        }
        if let Some(v) = self.q {
            cfg.q = v;
        }
        if let Some(v) = self.r {
            cfg.r = v;
        }
        if let Some(v) = self.q_terminal {
            cfg.q_terminal = v;
        }
        if let Some(v) = self.levenberg {
            cfg.levenberg = v;
        }
        if let Some(v) = self.defect_tol {
            cfg.defect_tol = v;
        }
        if let Some(v) = self.t_min {
            cfg.limits.t_min = v;
        }
        if let Some(v) = self.t_max {
            cfg.limits.t_max = v;
        }
        if let Some(v) = self.angle_max {
            cfg.limits.angle_max = v;
        }
    }
}

/// Partial override of the baseline controller gains from the config file.
/// Axis gain pairs are `[k1, k2]` for x, y, z; PID triples are
/// `[kp, ki, kd]`.
#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GainsFile {
    backstepping: Option<[[f64; 2]; 3]>,
    sliding: Option<[[f64; 2]; 3]>,
    sliding_epsilon: Option<f64>,
    pid_xy: Option<[f64; 3]>,
    pid_z: Option<[f64; 3]>,
    pid_i_max: Option<f64>,
}

impl GainsFile {
    fn apply(&self, ctrl: &mut AnyController) {
        use tailmpc::baselines::{AxisGains, PidGains};
        let pairs = |g: &[[f64; 2]; 3]| {
            [
                AxisGains::new(g[0][0], g[0][1]),
                AxisGains::new(g[1][0], g[1][1]),
                AxisGains::new(g[2][0], g[2][1]),
            ]
        };
        match ctrl {
            AnyController::Backstepping(c) => {
                if let Some(g) = &self.backstepping {
                    c.gains = pairs(g);
                }
            }
            AnyController::Sliding(c) => {
                if let Some(g) = &self.sliding {
                    c.gains = pairs(g);
                }
                if let Some(e) = self.sliding_epsilon {
                    c.epsilon = e;
                }
            }
            AnyController::Pid(c) => {
                if let Some(g) = self.pid_xy {
                    c.xy = PidGains::new(g[0], g[1], g[2]);
                }
                if let Some(g) = self.pid_z {
                    c.z = PidGains::new(g[0], g[1], g[2]);
                }
                if let Some(m) = self.pid_i_max {
                    c.i_max = m;
                }
            }
            AnyController::Mpc(_) => {}
        }
    }
}

fn parse_envelope(s: &str) -> Result<Envelope> {
    match s {
        "full" => Ok(Envelope::Full),
        "reduced" => Ok(Envelope::Reduced),
        other => bail!("unknown envelope {other:?}, expected \"full\" or \"reduced\""),
    }
}

fn parse_vec3(s: &str) -> Result<Vec3> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("expected three comma-separated numbers, got {s:?}");
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse::<f64>().with_context(|| format!("parsing {p:?}"))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

/// Wind field from the command-line flags; None when no flag was given so
/// the config file value can apply.
fn wind_from_flags(
    wind: Option<&str>,
    gust_sigma: Option<f64>,
    gust_corr: Option<f64>,
) -> Result<Option<WindField>> {
    let mean = wind.map(parse_vec3).transpose()?;
    Ok(match (mean, gust_sigma) {
        (None, None) => None,
        (Some(mean), None) => Some(WindField::Constant { mean }),
        (mean, Some(sigma)) => Some(WindField::Gusty {
            mean: mean.unwrap_or_else(Vec3::zeros),
            sigma,
            corr_time: gust_corr.unwrap_or(2.0),
        }),
    })
}

/// Trajectory by name plus its default run duration and step descriptor.
fn make_trajectory(name: &str, step_size: f64) -> Result<(Trajectory, f64, Option<StepSpec>)> {
    Ok(match name {
        "step" => (
            Trajectory::step_default(step_size),
            25.0,
            Some(StepSpec { t_step: 10.0, axis: 0, size: step_size }),
        ),
        "circle" => (Trajectory::circle_default(), 60.0, None),
        "lemniscate" => (Trajectory::lemniscate_default(), 40.0, None),
        "hover" => (
            Trajectory::Hover { base: Vec3::new(0.0, 0.0, DEFAULT_ALTITUDE) },
            20.0,
            None,
        ),
        other => bail!(
            "unknown trajectory {other:?}, expected step, circle, lemniscate, or hover"
        ),
    })
}

fn check_control_rate(rate: Option<f64>) -> Result<()> {
    if let Some(r) = rate {
        if (r - 100.0).abs() > 1e-9 {
            bail!("only a 100 Hz control rate is supported, got {r}");
        }
    }
    Ok(())
}

fn load_model(path: Option<&Path>) -> Result<Option<Arc<MlpModel>>> {
    path.map(|p| {
        MlpModel::load_json(p)
            .map(Arc::new)
            .with_context(|| format!("loading model {}", p.display()))
    })
    .transpose()
}

fn load_params(path: Option<&Path>) -> Result<VehicleParams> {
    match path {
        None => Ok(VehicleParams::nominal()),
        Some(p) => {
            load_params_toml(p).with_context(|| format!("loading parameters {}", p.display()))
        }
    }
}

/// Read every CSV in a directory as a raw log, sorted by file name so the
/// result does not depend on directory iteration order.
fn read_log_dir(dir: &Path) -> Result<Vec<RawLog>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading log directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .csv logs in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| read_raw_log(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

#[derive(Args)]
struct CollectArgs {
    /// Output directory; raw ~300 Hz logs at the top level, 100 Hz
    /// resampled copies under 100hz/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Flight envelope: "full" or "reduced" (caps commanded speed at 2 m/s).
    #[arg(long, default_value = "full")]
    envelope: String,
    /// TOML experiment config; the [plant] table applies here.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let plant = file.plant.unwrap_or_default();
    let envelope = parse_envelope(&a.envelope)?;
    let cfg = CollectConfig::new(a.seed, envelope, plant);
    let logs = collect_data(&cfg)?;
    write_collection(&a.out, &logs)?;
    let sub = a.out.join("100hz");
    std::fs::create_dir_all(&sub)?;
    let mut rows = 0usize;
    for log in &logs {
        rows += log.records.len();
        let uniform = resample_100hz(log)?;
        write_raw_log(&sub.join(format!("{}.csv", uniform.label)), &uniform)?;
    }
    println!(
        "collected {} segments, {} raw rows, into {}",
        logs.len(),
        rows,
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
struct BuildDatasetArgs {
    /// Directory of raw log CSVs (the collect output).
    #[arg(long)]
    logs: PathBuf,
    /// Output dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Split-shuffle seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Moving-average window, samples at 100 Hz.
    #[arg(long, default_value_t = DEFAULT_FILTER_WINDOW)]
    window: usize,
    /// Model parameters TOML for the nominal acceleration; defaults to the
    /// nominal (zero-drag) model.
    #[arg(long)]
    params: Option<PathBuf>,
}

fn cmd_build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let params = load_params(a.params.as_deref())?;
    let logs = read_log_dir(&a.logs)?;
    let ds = build_dataset(&logs, &params, a.window, a.seed)?;
    write_dataset_csv(&a.out, &ds)?;
    println!(
        "dataset {}: {} train / {} val / {} test samples from {} logs",
        a.out.display(),
        ds.split_len(SplitTag::Train),
        ds.split_len(SplitTag::Val),
        ds.split_len(SplitTag::Test),
        logs.len()
    );
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV from build-dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Hidden-layer width.
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Optional training-report JSON (epoch curve, test RMSE, wall time).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Cap on Levenberg-Marquardt epochs.
    #[arg(long)]
    max_epochs: Option<usize>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ds = read_dataset_csv(&a.dataset)?;
    let mut cfg = TrainConfig::new(a.hidden, a.seed);
    if let Some(m) = a.max_epochs {
        cfg.max_epochs = m;
    }
    let (model, report) = train_lm(&ds, &cfg)?;
    model.save_json(&a.out)?;
    if let Some(p) = &a.report {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(p, text)?;
    }
    println!(
        "trained H={} on {} rows in {} epochs, {:.1} s wall",
        report.hidden,
        report.n_train_used,
        report.epochs.len(),
        report.wall_time_s
    );
    println!(
        "test RMSE [x y z] = [{:.4} {:.4} {:.4}] m/s^2 over {} samples",
        report.test_rmse[0], report.test_rmse[1], report.test_rmse[2], report.n_test
    );
    println!("model written to {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct IdentifyArgs {
    /// Directory of raw log CSVs.
    #[arg(long)]
    logs: PathBuf,
    /// Output parameters TOML.
    #[arg(long)]
    out: PathBuf,
    /// Moving-average window for the drag fit.
    #[arg(long, default_value_t = DEFAULT_FILTER_WINDOW)]
    window: usize,
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    let logs = read_log_dir(&a.logs)?;
    let mut taus_phi = Vec::new();
    let mut taus_theta = Vec::new();
    for log in &logs {
        let uniform = resample_100hz(log)?;
        let grab = |f: &dyn Fn(&tailmpc::pipeline::RawRecord) -> f64| -> Vec<f64> {
            uniform.records.iter().map(f).collect()
        };
        let phi = grab(&|r| r.att.phi);
        let phi_cmd = grab(&|r| r.cmd.phi_cmd);
        let theta = grab(&|r| r.att.theta);
        let theta_cmd = grab(&|r| r.cmd.theta_cmd);
        // Segments without enough excitation on an axis are skipped; the
        // step segments excite pitch, the pseudo-manual ones excite both.
        if let Ok(t) = identify_first_order_tau(&phi_cmd, &phi, RESAMPLE_DT) {
            taus_phi.push(t);
        }
        if let Ok(t) = identify_first_order_tau(&theta_cmd, &theta, RESAMPLE_DT) {
            taus_theta.push(t);
        }
    }
    if taus_phi.is_empty() || taus_theta.is_empty() {
        bail!("logs carry no usable attitude excitation");
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ds = build_dataset(&logs, &VehicleParams::nominal(), a.window, 0)?;
    let cd = identify_drag_coeffs(&ds.samples)?;
    let params = VehicleParams {
        tau_phi: mean(&taus_phi),
        tau_theta: mean(&taus_theta),
        c_dx: cd[0],
        c_dy: cd[1],
        c_dz: cd[2],
        ..VehicleParams::nominal()
    };
    save_params_toml(&a.out, &params)?;
    println!(
        "tau_phi = {:.4} s ({} segments), tau_theta = {:.4} s ({} segments)",
        params.tau_phi,
        taus_phi.len(),
        params.tau_theta,
        taus_theta.len()
    );
    println!(
        "drag coefficients [x y z] = [{:.4} {:.4} {:.4}] m^-1",
        params.c_dx, params.c_dy, params.c_dz
    );
    println!("parameters written to {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pid | backstepping | sliding | nmpc | hmpc | hmpc_exact
    #[arg(long)]
    controller: Option<String>,
    /// step | circle | lemniscate | hover
    #[arg(long)]
    trajectory: Option<String>,
    /// Step size in meters when the trajectory is a step.
    #[arg(long)]
    step_size: Option<f64>,
    /// Run length in seconds; defaults per trajectory.
    #[arg(long)]
    duration: Option<f64>,
    /// Controller update rate in Hz; only 100 is supported.
    #[arg(long)]
    control_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constant wind "X,Y,Z" in m/s.
    #[arg(long)]
    wind: Option<String>,
    /// Gust standard deviation in m/s; makes the wind field gusty.
    #[arg(long)]
    gust_sigma: Option<f64>,
    /// Gust correlation time in seconds.
    #[arg(long)]
    gust_corr: Option<f64>,
    /// Trained residual model JSON (required for hmpc).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Identified vehicle parameters TOML.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output tracking CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock solve times in the CSV instead of zeros.
    #[arg(long)]
    timing: bool,
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    check_control_rate(a.control_rate.or(file.control_rate))?;
    let spec = ControllerSpec::parse(
        a.controller.as_deref().or(file.controller.as_deref()).unwrap_or("nmpc"),
    )?;
    let traj_name =
        a.trajectory.as_deref().or(file.trajectory.as_deref()).unwrap_or("circle").to_string();
    let step_size = a.step_size.or(file.step_size).unwrap_or(2.0);
    let (traj, default_duration, step) = make_trajectory(&traj_name, step_size)?;
    let duration = a.duration.or(file.duration).unwrap_or(default_duration);
    let seed = a.seed.or(file.seed).unwrap_or(1);
    let wind = wind_from_flags(a.wind.as_deref(), a.gust_sigma, a.gust_corr)?
        .or(file.wind)
        .unwrap_or(WindField::None);
    let plant = file.plant.unwrap_or_default();
    let params = load_params(a.params.as_deref().or(file.params.as_deref()))?;
    let model = load_model(a.model.as_deref().or(file.model.as_deref()))?;
    let out = a.out.or(file.out).unwrap_or_else(|| PathBuf::from("run.csv"));
    let timing = a.timing || file.timing.unwrap_or(false);

    let mut mpc_cfg = MpcConfig::standard(&params);
    if let Some(o) = &file.mpc {
        o.apply(&mut mpc_cfg);
    }
    // A single run takes one model file; both hybrid variants read it.
    let models = ModelSet { full: model.clone(), reduced: model };
    let mut ctrl = build_controller_with(spec, &params, &models, &plant.aero, mpc_cfg)?;
    if let Some(g) = &file.gains {
        g.apply(&mut ctrl);
    }

    let run_cfg = RunConfig { duration, plant, wind, seed, record_solve_time: timing };
    let rows = run_closed_loop(&mut ctrl, &traj, &run_cfg)?;
    write_run_csv(&out, &rows)?;
    let metrics = compute_metrics(&rows, EVAL_START, step.as_ref());
    println!(
        "{} on {} for {:.0} s (seed {seed}): {} rows -> {}",
        spec.name(),
        traj_name,
        duration,
        rows.len(),
        out.display()
    );
    print_metrics(&metrics, timing);
    Ok(())
}

fn print_metrics(m: &RunMetrics, timing: bool) {
    println!(
        "rmse [x y z] = [{:.4} {:.4} {:.4}] m, max error {:.4} m",
        m.rmse[0], m.rmse[1], m.rmse[2], m.max_error
    );
    if let Some(r) = m.rise_time {
        println!("rise time {r:.2} s");
    }
    if m.n_failed > 0 {
        println!("{} failed solves", m.n_failed);
    }
    if timing {
        println!(
            "solve time median {:.2} ms, max {:.2} ms",
            m.median_solve_ms, m.max_solve_ms
        );
    }
}

#[derive(Args)]
struct SuiteArgs {
    /// TOML experiment config; the [plant] table and paths apply here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for per-cell CSVs and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trained residual model JSON; without it the hmpc rows error out and
    /// the rest of the grid still runs.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reduced-envelope residual model JSON for the hmpc_star rows.
    #[arg(long)]
    model_reduced: Option<PathBuf>,
    /// Identified vehicle parameters TOML.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Record wall-clock solve times (breaks byte-for-byte reproducibility).
    #[arg(long)]
    timing: bool,
}

fn cmd_suite(a: SuiteArgs) -> Result<()> {
    let file = load_config(a.config.as_deref())?;
    let out_dir = a
        .out
        .or(file.out)
        .context("suite needs --out (or `out` in the config file)")?;
    let cfg = SuiteConfig {
        seed: a.seed.or(file.seed).unwrap_or(1),
        out_dir: out_dir.clone(),
        params: load_params(a.params.as_deref().or(file.params.as_deref()))?,
        models: ModelSet {
            full: load_model(a.model.as_deref().or(file.model.as_deref()))?,
            reduced: load_model(
                a.model_reduced.as_deref().or(file.model_reduced.as_deref()),
            )?,
        },
        plant: file.plant.unwrap_or_default(),
        record_solve_time: a.timing || file.timing.unwrap_or(false),
    };
    let report = benchmark_suite(&cfg)?;
    print_suite(&report);
    println!("report and per-cell CSVs in {}", out_dir.display());
    Ok(())
}

fn print_suite(report: &SuiteReport) {
    println!(
        "{:<12} {:<11} {:<6} {:>8} {:>8} {:>8} {:>8} {:>7}",
        "controller", "trajectory", "wind", "rmse_x", "rmse_y", "rmse_z", "max_err", "rise_s"
    );
    for c in &report.cells {
        match (&c.metrics, &c.error) {
            (Some(m), _) => {
                let rise =
                    m.rise_time.map_or_else(|| "-".to_string(), |r| format!("{r:.2}"));
                println!(
                    "{:<12} {:<11} {:<6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>7}",
                    c.controller,
                    c.trajectory,
                    c.wind,
                    m.rmse[0],
                    m.rmse[1],
                    m.rmse[2],
                    m.max_error,
                    rise
                );
            }
            (None, Some(e)) => {
                println!("{:<12} {:<11} {:<6} error: {e}", c.controller, c.trajectory, c.wind);
            }
            _ => {}
        }
    }
    for r in &report.reductions {
        println!(
            "hmpc vs nmpc, {}/{}: x {:+.1}%, y {:+.1}%, z {:+.1}%",
            r.trajectory,
            r.wind,
            r.hmpc_vs_nmpc_pct[0],
            r.hmpc_vs_nmpc_pct[1],
            r.hmpc_vs_nmpc_pct[2]
        );
    }
}

#[derive(Args)]
struct BenchSolverArgs {
    /// OCP solves per model.
    #[arg(long, default_value_t = 1000)]
    solves: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Residual model JSON; repeat for several models. The quadratic-drag
    /// model is always benchmarked first.
    #[arg(long = "model")]
    models: Vec<PathBuf>,
    /// Identified vehicle parameters TOML.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Optional JSON output for the timing rows.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_bench_solver(a: BenchSolverArgs) -> Result<()> {
    let params = load_params(a.params.as_deref())?;
    let mut models =
        vec![("nonlinear".to_string(), PredictionModel::Nonlinear { params })];
    for path in &a.models {
        let model = MlpModel::load_json(path)
            .with_context(|| format!("loading model {}", path.display()))?;
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        models.push((
            format!("hybrid_{name}_H{}", model.hidden),
            PredictionModel::Hybrid { params, model: Arc::new(model) },
        ));
    }
    let rows = benchmark_solver(models, a.solves, a.seed);
    println!(
        "{:<24} {:>7} {:>10} {:>10} {:>10}",
        "model", "solves", "median_ms", "p90_ms", "max_ms"
    );
    for r in &rows {
        println!(
            "{:<24} {:>7} {:>10.3} {:>10.3} {:>10.3}",
            r.model, r.solves, r.median_ms, r.p90_ms, r.max_ms
        );
    }
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Collect(a) => cmd_collect(a),
        Cmd::BuildDataset(a) => cmd_build_dataset(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Identify(a) => cmd_identify(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Suite(a) => cmd_suite(a),
        Cmd::BenchSolver(a) => cmd_bench_solver(a),
    }
}
