//! Metrics CSV rows, trajectory logs and atomic file writes.
//!
//! Metrics columns: `seed, kappa, phase, episode, global_discounted_return,
//! agent_0 .. agent_{n-1}, wall_ms`. Training rows carry the sampled
//! episode's returns; evaluation rows carry means over the evaluation
//! episodes run after `episode` training episodes.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_mdp::{LocalState, Trajectory};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub kappa: usize,
    pub phase: Phase,
    pub episode: usize,
    pub global_return: f64,
    pub agent_returns: Vec<f64>,
    pub wall_ms: u64,
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, MetricsError> {
    let agents = rows.first().map_or(0, |r| r.agent_returns.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["seed", "kappa", "phase", "episode", "global_discounted_return"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..agents).map(|i| format!("agent_{i}")));
    header.push("wall_ms".into());
    w.write_record(&header)?;
    for r in rows {
        if r.agent_returns.len() != agents {
            return Err(MetricsError::Format("rows disagree on agent count".into()));
        }
        let mut rec = vec![
            r.seed.to_string(),
            r.kappa.to_string(),
            r.phase.as_str().to_string(),
            r.episode.to_string(),
            format!("{:?}", r.global_return),
        ];
        rec.extend(r.agent_returns.iter().map(|x| format!("{x:?}")));
        rec.push(r.wall_ms.to_string());
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), MetricsError> {
    Ok(write_atomic(path, &metrics_csv(rows)?)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let agents = header.iter().filter(|h| h.starts_with("agent_")).count();
    if header.len() != agents + 6 {
        return Err(MetricsError::Format(format!("unexpected header in {}", path.display())));
    }
    let bad = |what: &str| MetricsError::Format(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(&header[k]));
        let phase = match &rec[2] {
            "train" => Phase::Train,
            "eval" => Phase::Eval,
            _ => return Err(bad("phase")),
        };
        rows.push(MetricsRow {
            seed: rec[0].parse().map_err(|_| bad("seed"))?,
            kappa: rec[1].parse().map_err(|_| bad("kappa"))?,
            phase,
            episode: rec[3].parse().map_err(|_| bad("episode"))?,
            global_return: num(4)?,
            agent_returns: (0..agents).map(|i| num(5 + i)).collect::<Result<_, _>>()?,
            wall_ms: rec[5 + agents].parse().map_err(|_| bad("wall_ms"))?,
        });
    }
    Ok(rows)
}

/// One row per active agent step: `episode, t, agent, s_i, u_i, a_i, r_i`.
pub fn trajectory_csv<S: LocalState>(episode: usize, traj: &Trajectory<S>) -> Result<Vec<u8>, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode", "t", "agent", "state", "rm_state", "action", "reward"])?;
    for t in 0..traj.len() {
        let state = &traj.states[t];
        for i in 0..state.num_agents() {
            if !traj.active[t][i] {
                continue;
            }
            w.write_record([
                episode.to_string(),
                t.to_string(),
                i.to_string(),
                state.mdp_states[i].encode(),
                state.rm_states[i].to_string(),
                traj.actions[t][i].to_string(),
                format!("{:?}", traj.rewards[t][i]),
            ])?;
        }
    }
    w.into_inner().map_err(|e| MetricsError::Io(e.into_error()))
}
