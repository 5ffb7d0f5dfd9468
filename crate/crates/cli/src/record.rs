//! Run records written by every `bench` suite.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::presets::Recipe;

/// One CSV row per training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub label: String,
    pub architecture: String,
    /// Hash of the network and training configuration.
    pub config_digest: String,
    pub seed: u64,
    /// Test loss of the final weights.
    pub final_metric: f64,
    /// Best evaluation-mode training loss.
    pub best_metric: f64,
    pub params: usize,
    pub wall_s: f64,
}

impl RunRecord {
    pub fn new(
        recipe: &Recipe,
        params: usize,
        final_metric: f64,
        best_metric: f64,
        wall_s: f64,
    ) -> Self {
        RunRecord {
            task: recipe.task.name.clone(),
            label: recipe.label.clone(),
            architecture: recipe.arch.to_string(),
            config_digest: digest(recipe),
            seed: recipe.net.seed,
            final_metric,
            best_metric,
            params,
            wall_s,
        }
    }
}

/// Stable within one toolchain; the seed is excluded so runs of the same
/// configuration share a digest.
fn digest(recipe: &Recipe) -> String {
    let mut net = recipe.net.clone();
    net.seed = 0;
    let mut train = recipe.train.clone();
    train.seed = 0;
    let mut h = DefaultHasher::new();
    net.to_toml_string().hash(&mut h);
    format!("{train:?}").hash(&mut h);
    recipe.arch.to_string().hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Writes records with a header row.
pub fn write_records<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut v = Vec::new();
    for row in rdr.deserialize() {
        v.push(row?);
    }
    Ok(v)
}
