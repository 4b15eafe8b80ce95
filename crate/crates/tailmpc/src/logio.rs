//! File formats: raw pose logs, processed datasets, closed-loop run
//! traces, and vehicle-parameter files.
//!
//! CSV floats are written with the shortest round-trip representation,
//! so a written file parses back to bit-identical values and repeated
//! runs with the same seed produce byte-identical output.

use crate::error::{Error, Result};
use crate::pipeline::{Dataset, FlightSample, NormStats, RawLog, RawRecord, SplitTag};
use crate::types::{ControlInput, EulerAttitude, UavState, Vec3, VehicleParams};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const RAW_LOG_HEADER: &str = "t,x,y,z,phi,theta,psi,T_cmd,phi_cmd,theta_cmd";
pub const DATASET_HEADER: &str = "t,u,v,w,phi,theta,T,ax,ay,az,ares_x,ares_y,ares_z,split_tag";
pub const RUN_HEADER: &str = "t,x,y,z,u,v,w,phi,theta,x_d,y_d,z_d,T_cmd,phi_cmd,theta_cmd,\
wind_x,wind_y,wind_z,solve_ms,status";

/// One 100 Hz closed-loop sample: true state, position reference, applied
/// command, ambient wind, and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: f64,
    pub state: UavState,
    pub p_ref: Vec3,
    pub cmd: ControlInput,
    pub wind: Vec3,
    pub solve_ms: f64,
    pub status: String,
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn parse_fields<'a>(
    line: &'a str,
    expect: usize,
    path: &Path,
    lineno: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expect {
        return Err(Error::CorruptLog(format!(
            "{}:{}: expected {} fields, found {}",
            path.display(),
            lineno,
            expect,
            fields.len()
        )));
    }
    Ok(fields)
}

fn parse_f64(s: &str, path: &Path, lineno: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| {
        Error::CorruptLog(format!("{}:{}: bad number '{s}'", path.display(), lineno))
    })
}

fn check_header(line: Option<std::io::Result<String>>, want: &str, path: &Path) -> Result<()> {
    match line {
        Some(Ok(h)) if h.trim_end() == want => Ok(()),
        Some(Ok(h)) => Err(Error::CorruptLog(format!(
            "{}: unexpected header '{}'",
            path.display(),
            h.trim_end()
        ))),
        Some(Err(e)) => Err(e.into()),
        None => Err(Error::CorruptLog(format!("{}: empty file", path.display()))),
    }
}

pub fn write_raw_log(path: &Path, log: &RawLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RAW_LOG_HEADER}")?;
    for r in &log.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.p.x,
            r.p.y,
            r.p.z,
            r.att.phi,
            r.att.theta,
            r.att.psi,
            r.cmd.thrust,
            r.cmd.phi_cmd,
            r.cmd.theta_cmd
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_log(path: &Path) -> Result<RawLog> {
    let mut lines = open_reader(path)?.lines();
    check_header(lines.next(), RAW_LOG_HEADER, path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "log".into());
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f = parse_fields(&line, 10, path, i + 2)?;
        let num = |k: usize| parse_f64(f[k], path, i + 2);
        records.push(RawRecord {
            t: num(0)?,
            p: Vec3::new(num(1)?, num(2)?, num(3)?),
            att: EulerAttitude { phi: num(4)?, theta: num(5)?, psi: num(6)? },
            cmd: ControlInput::new(num(7)?, num(8)?, num(9)?),
        });
    }
    Ok(RawLog { label, records })
}

pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{DATASET_HEADER}")?;
    for (s, tag) in ds.samples.iter().zip(&ds.tags) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.v.x,
            s.v.y,
            s.v.z,
            s.att.phi,
            s.att.theta,
            s.thrust,
            s.a.x,
            s.a.y,
            s.a.z,
            s.a_res.x,
            s.a_res.y,
            s.a_res.z,
            tag.as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset file back. The nominal-model column is reconstructed
/// from `a - a_res`, and normalization is recomputed from the stored
/// train rows, which reproduces the original statistics bit for bit.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut lines = open_reader(path)?.lines();
    check_header(lines.next(), DATASET_HEADER, path)?;
    let mut samples = Vec::new();
    let mut tags = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f = parse_fields(&line, 14, path, i + 2)?;
        let num = |k: usize| parse_f64(f[k], path, i + 2);
        let a = Vec3::new(num(7)?, num(8)?, num(9)?);
        let a_res = Vec3::new(num(10)?, num(11)?, num(12)?);
        samples.push(FlightSample {
            t: num(0)?,
            v: Vec3::new(num(1)?, num(2)?, num(3)?),
            att: EulerAttitude::new(num(4)?, num(5)?),
            thrust: num(6)?,
            a,
            a_nom: a - a_res,
            a_res,
        });
        tags.push(match f[13] {
            "train" => SplitTag::Train,
            "val" => SplitTag::Val,
            "test" => SplitTag::Test,
            other => {
                return Err(Error::CorruptLog(format!(
                    "{}:{}: unknown split tag '{other}'",
                    path.display(),
                    i + 2
                )))
            }
        });
    }
    let norm = NormStats::from_samples(
        samples.iter().zip(&tags).filter_map(|(s, &t)| (t == SplitTag::Train).then_some(s)),
    )?;
    Ok(Dataset { samples, tags, norm })
}

pub fn write_run_csv(path: &Path, rows: &[RunRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RUN_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.state.p.x,
            r.state.p.y,
            r.state.p.z,
            r.state.v.x,
            r.state.v.y,
            r.state.v.z,
            r.state.att.phi,
            r.state.att.theta,
            r.p_ref.x,
            r.p_ref.y,
            r.p_ref.z,
            r.cmd.thrust,
            r.cmd.phi_cmd,
            r.cmd.theta_cmd,
            r.wind.x,
            r.wind.y,
            r.wind.z,
            r.solve_ms,
            r.status
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut lines = open_reader(path)?.lines();
    check_header(lines.next(), RUN_HEADER, path)?;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f = parse_fields(&line, 20, path, i + 2)?;
        let num = |k: usize| parse_f64(f[k], path, i + 2);
        rows.push(RunRecord {
            t: num(0)?,
            state: UavState {
                p: Vec3::new(num(1)?, num(2)?, num(3)?),
                v: Vec3::new(num(4)?, num(5)?, num(6)?),
                att: EulerAttitude::new(num(7)?, num(8)?),
            },
            p_ref: Vec3::new(num(9)?, num(10)?, num(11)?),
            cmd: ControlInput::new(num(12)?, num(13)?, num(14)?),
            wind: Vec3::new(num(15)?, num(16)?, num(17)?),
            solve_ms: num(18)?,
            status: f[19].to_string(),
        });
    }
    Ok(rows)
}

pub fn save_params_toml(path: &Path, params: &VehicleParams) -> Result<()> {
    let text = toml::to_string_pretty(params)
        .map_err(|e| Error::Config(format!("serialize params: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_params_toml(path: &Path) -> Result<VehicleParams> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
