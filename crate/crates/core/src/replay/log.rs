//! Versioned JSON-lines episode log: a header line, then one record per
//! transition. Pixels are not logged.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::buffer::Trajectory;
use crate::error::{Error, Result};

pub const EPISODE_LOG_VERSION: u32 = 1;
const FORMAT: &str = "sacx-episode-log";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    num_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub step: usize,
    pub task: usize,
    pub proprio: [f64; 8],
    pub features: [f64; 8],
    pub action: Vec<f64>,
    pub behavior_log_prob: f64,
    pub rewards: Vec<f64>,
    pub terminal: bool,
}

impl EpisodeRecord {
    pub fn from_trajectory(traj: &Trajectory) -> impl Iterator<Item = EpisodeRecord> + '_ {
        traj.transitions
            .iter()
            .enumerate()
            .map(|(step, t)| EpisodeRecord {
                episode: traj.episode,
                step,
                task: t.executed_task,
                proprio: t.obs.proprio,
                features: t.obs.features,
                action: t.action.clone(),
                behavior_log_prob: t.behavior_log_prob,
                rewards: t.rewards.clone(),
                terminal: t.terminal,
            })
    }
}

pub struct EpisodeLogWriter<W: Write> {
    out: W,
    num_tasks: usize,
}

impl<W: Write> EpisodeLogWriter<W> {
    pub fn new(mut out: W, num_tasks: usize) -> Result<Self> {
        let header = Header {
            format: FORMAT.into(),
            version: EPISODE_LOG_VERSION,
            num_tasks,
        };
        serde_json::to_writer(&mut out, &header).map_err(|e| Error::EpisodeLog(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(Self { out, num_tasks })
    }

    pub fn write(&mut self, record: &EpisodeRecord) -> Result<()> {
        if record.rewards.len() != self.num_tasks {
            return Err(Error::EpisodeLog(format!(
                "record has {} rewards, log declares {} tasks",
                record.rewards.len(),
                self.num_tasks
            )));
        }
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| Error::EpisodeLog(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        for r in EpisodeRecord::from_trajectory(traj) {
            self.write(&r)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub struct EpisodeLogReader<R: BufRead> {
    lines: std::io::Lines<R>,
    line: usize,
    num_tasks: usize,
}

impl<R: BufRead> EpisodeLogReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::EpisodeLog("empty episode log".into()))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| Error::EpisodeLog(format!("line 1: bad header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::EpisodeLog(format!(
                "line 1: unknown format `{}`",
                header.format
            )));
        }
        if header.version != EPISODE_LOG_VERSION {
            return Err(Error::EpisodeLog(format!(
                "line 1: unsupported version {} (expected {EPISODE_LOG_VERSION})",
                header.version
            )));
        }
        Ok(Self {
            lines,
            line: 1,
            num_tasks: header.num_tasks,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }
}

impl<R: BufRead> Iterator for EpisodeLogReader<R> {
    type Item = Result<EpisodeRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            let n = self.line;
            return Some(
                serde_json::from_str::<EpisodeRecord>(&line)
                    .map_err(|e| Error::EpisodeLog(format!("line {n}: {e}")))
                    .and_then(|r| {
                        if r.rewards.len() == self.num_tasks {
                            Ok(r)
                        } else {
                            Err(Error::EpisodeLog(format!(
                                "line {n}: expected {} rewards",
                                self.num_tasks
                            )))
                        }
                    }),
            );
        }
    }
}
