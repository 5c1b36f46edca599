//! Line-delimited dataset files.
//!
//! The first line is a JSON header with the dimensions and the spec hash;
//! every following line is one trajectory record
//! `{"env", "version", "states", "actions", "goal"}`, optionally with a
//! provenance `"tag"` (reanalysis buffer snapshots).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EnvError, EnvKind, EnvSpec};
use crate::buffer::Trajectory;

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub env: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub goal_dim: usize,
    pub spec_hash: String,
    pub trajectories: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    env: EnvKind,
    version: u32,
    states: Vec<Vec<f32>>,
    actions: Vec<Vec<f32>>,
    goal: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
    pub tags: Vec<Option<String>>,
}

pub fn write_dataset<W: Write>(
    mut out: W,
    spec: &EnvSpec,
    trajectories: &[Trajectory],
    tags: Option<&[String]>,
) -> Result<(), EnvError> {
    let header = DatasetHeader {
        format: "goplan-dataset".into(),
        version: DATASET_VERSION,
        env: spec.kind,
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
        goal_dim: spec.goal_dim,
        spec_hash: spec.spec_hash(),
        trajectories: trajectories.len(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| EnvError::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    for (i, t) in trajectories.iter().enumerate() {
        let record = Record {
            env: spec.kind,
            version: DATASET_VERSION,
            states: t.states.clone(),
            actions: t.actions.clone(),
            goal: t.goal.clone(),
            tag: tags.map(|tags| tags[i].clone()),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| EnvError::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<DatasetFile, EnvError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| EnvError::Format("empty dataset file".into()))??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| EnvError::Format(format!("header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(EnvError::Format(format!(
            "unsupported dataset version {}",
            header.version
        )));
    }
    let mut trajectories = Vec::with_capacity(header.trajectories);
    let mut tags = Vec::with_capacity(header.trajectories);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| EnvError::Format(format!("record {}: {e}", lineno + 1)))?;
        if rec.env != header.env || rec.version != header.version {
            return Err(EnvError::Format(format!(
                "record {} does not match the header",
                lineno + 1
            )));
        }
        let traj = Trajectory {
            states: rec.states,
            actions: rec.actions,
            goal: rec.goal,
        };
        traj.validate(header.state_dim, header.action_dim, header.goal_dim)
            .map_err(|e| EnvError::Format(format!("record {}: {e}", lineno + 1)))?;
        trajectories.push(traj);
        tags.push(rec.tag);
    }
    if trajectories.len() != header.trajectories {
        return Err(EnvError::Format(format!(
            "header announces {} trajectories, file holds {}",
            header.trajectories,
            trajectories.len()
        )));
    }
    Ok(DatasetFile {
        header,
        trajectories,
        tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, DatasetParams};

    #[test]
    fn round_trip_and_determinism() {
        let spec = EnvSpec::two_corridor_reach();
        let params = DatasetParams {
            n_transitions: 200,
            ..DatasetParams::default()
        };
        let a = generate_dataset(&spec, &params, 5).unwrap();
        let b = generate_dataset(&spec, &params, 5).unwrap();
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_dataset(&mut bytes_a, &spec, &a, None).unwrap();
        write_dataset(&mut bytes_b, &spec, &b, None).unwrap();
        assert_eq!(bytes_a, bytes_b);

        let parsed = read_dataset(&bytes_a[..]).unwrap();
        assert_eq!(parsed.trajectories, a);
        assert_eq!(parsed.header.spec_hash, spec.spec_hash());
        assert!(parsed.tags.iter().all(|t| t.is_none()));
    }

    #[test]
    fn rejects_truncated_files() {
        let spec = EnvSpec::line_bandit();
        let params = DatasetParams {
            n_transitions: 3,
            ..DatasetParams::default()
        };
        let data = generate_dataset(&spec, &params, 1).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &spec, &data, None).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        assert!(read_dataset(cut.join("\n").as_bytes()).is_err());
    }
}
