//! On-disk corpora: JSONL helpers and batches of simulated trajectories.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::rollout::{simulate, RolloutConfig, Trajectory};
use crate::universe::Universe;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub trajectory: Trajectory,
}

pub fn trajectory_id(index: usize) -> String {
    format!("traj-{index:05}")
}

/// Simulates `count` games. Game `i` runs with seed `derive_seed(cfg.seed,
/// [i])`, so the corpus does not depend on thread scheduling.
pub fn simulate_corpus(u: &Universe, cfg: &RolloutConfig, count: usize) -> Result<Vec<TrajectoryRecord>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let game_cfg = RolloutConfig {
                seed: derive_seed(cfg.seed, &[i as u64]),
                ..cfg.clone()
            };
            Ok(TrajectoryRecord {
                id: trajectory_id(i),
                trajectory: simulate(u, &game_cfg)?,
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            column: "line".into(),
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}
