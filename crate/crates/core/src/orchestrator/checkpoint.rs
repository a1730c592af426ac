//! Experiment checkpoints: config, counters and every parameter tensor.
//!
//! Layout: `b"SACXCKPT"`, `u32` version, `u64` seed, `u64` episodes,
//! `u64` learner steps, `u64` config length, the config as JSON, then the
//! tensor dump of the parameter store. Optimiser moments are not saved.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::gated::{InputShapes, Model, ParamStore, TaskSpec};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SACXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model and task list described by `cfg`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(Model, Vec<TaskSpec>)> {
    let tasks = cfg.task_specs()?;
    let model = Model::new(
        &cfg.network,
        InputShapes::for_env(cfg.env.render_size),
        ACTION_DIM,
        tasks.len(),
    )?;
    Ok((model, tasks))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub episodes: u64,
    pub learner_steps: u64,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let json =
            serde_json::to_vec(&self.config).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in [
            self.seed,
            self.episodes,
            self.learner_steps,
            json.len() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&json)?;
        self.store.write_to(&mut w)?;
        Ok(())
    }

    /// Reads a checkpoint; `path` only labels errors.
    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic bytes)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut next = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let (seed, episodes, learner_steps, len) = (next()?, next()?, next()?, next()?);
        if len > 1 << 24 {
            return Err(bad(format!("implausible config length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let config: ExperimentConfig =
            serde_json::from_slice(&json).map_err(|e| bad(format!("config: {e}")))?;
        let (model, _) = build_model(&config)?;
        let mut store = model.init_store(&mut ChaCha8Rng::seed_from_u64(0));
        store.read_into(&mut r).map_err(|e| bad(e.to_string()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self {
            config,
            seed,
            episodes,
            learner_steps,
            store,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::read_from(std::io::BufReader::new(f), path)
    }
}
