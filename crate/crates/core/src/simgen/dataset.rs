//! Line-delimited JSON scenes.
//!
//! The first line is a header `{"format":"tip-scenes","version":1,
//! "generator_digest":"..."}`; every following line holds one scene. Reals
//! are written in shortest round-trip form, so reading returns exactly the
//! values written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Relation, Scene, Trajectory};

use super::{Result, SimgenError};

pub const DATASET_VERSION: u32 = 1;
const FORMAT_NAME: &str = "tip-scenes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub generator_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    points: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    id: String,
    dt: f64,
    n_agents: usize,
    ego_index: usize,
    object_indices: Vec<usize>,
    relation: String,
    past: Vec<TrackRecord>,
    future: Vec<TrackRecord>,
}

fn to_track(t: &Trajectory) -> TrackRecord {
    TrackRecord {
        points: t.points().iter().map(|p| [p.x, p.y]).collect(),
        valid: t.valid().to_vec(),
    }
}

fn from_track(r: TrackRecord, dt: f64) -> std::result::Result<Trajectory, String> {
    let pts = r.points.iter().map(|[x, y]| Point::new(*x, *y)).collect();
    Trajectory::new(pts, r.valid, dt).map_err(|e| e.to_string())
}

fn to_record(s: &Scene) -> SceneRecord {
    SceneRecord {
        id: s.id.clone(),
        dt: s.past[0].dt(),
        n_agents: s.n_agents(),
        ego_index: s.ego_index,
        object_indices: s.object_indices.clone(),
        relation: s.relation.as_str().to_string(),
        past: s.past.iter().map(to_track).collect(),
        future: s.future.iter().map(to_track).collect(),
    }
}

fn from_record(r: SceneRecord) -> std::result::Result<Scene, String> {
    if r.past.len() != r.n_agents || r.future.len() != r.n_agents {
        return Err(format!("n_agents {} does not match the tracks", r.n_agents));
    }
    let relation: Relation = r.relation.parse()?;
    let dt = r.dt;
    let past = r.past.into_iter().map(|t| from_track(t, dt)).collect::<std::result::Result<_, _>>()?;
    let future = r.future.into_iter().map(|t| from_track(t, dt)).collect::<std::result::Result<_, _>>()?;
    Scene::new(r.id, past, future, r.ego_index, r.object_indices, relation).map_err(|e| e.to_string())
}

/// Writes a header and one line per scene.
pub fn write_dataset(scenes: &[Scene], path: &Path, generator_digest: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        format: FORMAT_NAME.into(),
        version: DATASET_VERSION,
        generator_digest: generator_digest.into(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).map_err(std::io::Error::other)?)?;
    for s in scenes {
        let line = serde_json::to_string(&to_record(s)).map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming reader: holds one line at a time.
pub struct DatasetReader {
    header: DatasetHeader,
    lines: Lines<BufReader<File>>,
    line_no: usize,
}

impl DatasetReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().transpose()?.ok_or(SimgenError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let parse_err = |m: String| SimgenError::Parse { line: 1, message: m };
        let value: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse_err(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
            return Err(parse_err("not a scene dataset header".into()));
        }
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| parse_err("header lacks a version".into()))?;
        if found != DATASET_VERSION as u64 {
            return Err(SimgenError::VersionMismatch {
                found: found.min(u32::MAX as u64) as u32,
                expected: DATASET_VERSION,
            });
        }
        let header: DatasetHeader = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        Ok(Self {
            header,
            lines,
            line_no: 1,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Scene>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = self.line_no;
            let parsed = serde_json::from_str::<SceneRecord>(&line)
                .map_err(|e| e.to_string())
                .and_then(from_record)
                .map_err(|message| SimgenError::Parse { line: line_no, message });
            return Some(parsed);
        }
    }
}

/// Reads every scene of a dataset file.
pub fn read_dataset(path: &Path) -> Result<Vec<Scene>> {
    DatasetReader::open(path)?.collect()
}
