//! JSON-lines trajectory and dataset files, result and force CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fcvp_core::env::{StepRecord, Trajectory, TrajectoryHeader, TRAJECTORY_SCHEMA_VERSION};
use fcvp_core::force::{TransitionSample, DATASET_SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{io_err, HarnessError, Result};

#[derive(Serialize, Deserialize)]
struct Line<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrajectoryLine {
    Header(TrajectoryHeader),
    Step(StepRecord),
}

/// Describes what the dataset samples contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// What the regression target measures.
    pub target: String,
    pub stored_history: usize,
    pub kept_episodes: usize,
    pub dropped_episodes: Vec<(usize, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DatasetLine {
    Meta(DatasetMeta),
    Sample(TransitionSample),
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<serde_json::Value>,
}

fn write_lines<T: Serialize>(w: &mut impl Write, version: u32, lines: impl IntoIterator<Item = T>) -> std::io::Result<()> {
    for body in lines {
        let line = Line {
            schema_version: version,
            body,
        };
        serde_json::to_writer(&mut *w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Parses every non-empty line, reporting the 1-based line number of the
/// first malformed or version-mismatched record.
fn read_lines<T: DeserializeOwned>(r: impl BufRead, name: &str, version: u32) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(io_err(format!("{name}:{n}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| HarnessError::Parse {
            path: name.to_string(),
            line: n,
            message: e.to_string(),
        };
        let probe: VersionProbe = serde_json::from_str(&line).map_err(parse_err)?;
        match probe.schema_version.as_ref().and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(version) => {}
            Some(found) => {
                return Err(HarnessError::Schema {
                    path: name.to_string(),
                    line: n,
                    found,
                    expected: version,
                })
            }
            None => {
                return Err(HarnessError::Parse {
                    path: name.to_string(),
                    line: n,
                    message: "missing schema_version".into(),
                })
            }
        }
        let rec: Line<T> = serde_json::from_str(&line).map_err(parse_err)?;
        out.push(rec.body);
    }
    Ok(out)
}

pub fn write_trajectory(w: &mut impl Write, traj: &Trajectory) -> std::io::Result<()> {
    let header = std::iter::once(TrajectoryLine::Header(traj.header.clone()));
    let steps = traj.steps.iter().cloned().map(TrajectoryLine::Step);
    write_lines(w, TRAJECTORY_SCHEMA_VERSION, header.chain(steps))
}

pub fn read_trajectory(r: impl BufRead, name: &str) -> Result<Trajectory> {
    let lines: Vec<TrajectoryLine> = read_lines(r, name, TRAJECTORY_SCHEMA_VERSION)?;
    let mut iter = lines.into_iter();
    let header = match iter.next() {
        Some(TrajectoryLine::Header(h)) => h,
        _ => {
            return Err(HarnessError::Parse {
                path: name.to_string(),
                line: 1,
                message: "expected a header record".into(),
            })
        }
    };
    let mut steps = Vec::new();
    for (i, l) in iter.enumerate() {
        match l {
            TrajectoryLine::Step(s) => steps.push(s),
            TrajectoryLine::Header(_) => {
                return Err(HarnessError::Parse {
                    path: name.to_string(),
                    line: i + 2,
                    message: "duplicate header record".into(),
                })
            }
        }
    }
    Ok(Trajectory { header, steps })
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let f = File::create(path).map_err(io_err(path.display().to_string()))?;
    write_trajectory(&mut BufWriter::new(f), traj).map_err(io_err(path.display().to_string()))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let f = File::open(path).map_err(io_err(path.display().to_string()))?;
    read_trajectory(BufReader::new(f), &path.display().to_string())
}

pub fn save_dataset(path: &Path, meta: &DatasetMeta, samples: &[TransitionSample]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path.display().to_string()))?;
    let lines = std::iter::once(DatasetLine::Meta(meta.clone())).chain(samples.iter().cloned().map(DatasetLine::Sample));
    write_lines(&mut BufWriter::new(f), DATASET_SCHEMA_VERSION, lines).map_err(io_err(path.display().to_string()))
}

pub fn load_dataset(path: &Path) -> Result<(DatasetMeta, Vec<TransitionSample>)> {
    let name = path.display().to_string();
    let f = File::open(path).map_err(io_err(name.clone()))?;
    let mut meta = None;
    let mut samples = Vec::new();
    for l in read_lines::<DatasetLine>(BufReader::new(f), &name, DATASET_SCHEMA_VERSION)? {
        match l {
            DatasetLine::Meta(m) => meta = Some(m),
            DatasetLine::Sample(s) => samples.push(s),
        }
    }
    let meta = meta.ok_or_else(|| HarnessError::Parse {
        path: name,
        line: 1,
        message: "dataset has no meta record".into(),
    })?;
    Ok((meta, samples))
}

/// One evaluated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub pose_region: String,
    pub garment_id: String,
    pub seed: u64,
    pub dressed_ratio: f64,
    pub avg_violation: f64,
    pub episode_fault: bool,
}

/// One post-warm-up step force of an evaluated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceRow {
    pub method: String,
    pub pose_region: String,
    pub garment_id: String,
    pub seed: u64,
    pub t: usize,
    pub force: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path.display().to_string()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// File name of a cell's trajectory log.
pub fn trajectory_file_name(method: &str, region: &str, garment: &str, seed: u64) -> String {
    format!("{method}__{region}__{garment}__{seed}.jsonl")
}
