//! The two rating networks used for evaluation and their tuned settings.

use std::path::{Path, PathBuf};

use crate::train::TrainConfig;

/// Directory searched before the defaults of [`candidate_dirs`].
pub const DATA_DIR_ENV: &str = "TRUSTGUARD_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub file: &'static str,
    pub heads: usize,
    pub prune_threshold: f64,
}

pub const BITCOIN_OTC: DatasetPreset = DatasetPreset {
    name: "bitcoin-otc",
    file: "soc-sign-bitcoinotc.csv",
    heads: 8,
    prune_threshold: 0.5,
};

pub const BITCOIN_ALPHA: DatasetPreset = DatasetPreset {
    name: "bitcoin-alpha",
    file: "soc-sign-bitcoinalpha.csv",
    heads: 16,
    prune_threshold: 0.3,
};

pub const PRESETS: [DatasetPreset; 2] = [BITCOIN_OTC, BITCOIN_ALPHA];

impl DatasetPreset {
    /// Matches a preset name or the file name at the end of `path`.
    pub fn detect(path_or_name: &str) -> Option<Self> {
        let file = Path::new(path_or_name).file_name()?.to_str()?;
        PRESETS.into_iter().find(|p| p.name == path_or_name || p.file == file)
    }

    /// Sets the head count and pruning threshold tuned for this network.
    pub fn apply(&self, config: &mut TrainConfig) {
        config.model.temporal.heads = self.heads;
        config.model.spatial.prune_threshold = self.prune_threshold;
    }

    /// The first existing copy of the file among `dirs`.
    pub fn locate(&self, dirs: &[PathBuf]) -> Option<PathBuf> {
        dirs.iter().map(|d| d.join(self.file)).find(|p| p.is_file())
    }
}

/// `$TRUSTGUARD_DATA_DIR` when set, then `./data`.
pub fn candidate_dirs() -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    if let Some(d) = std::env::var_os(DATA_DIR_ENV) {
        dirs.push(PathBuf::from(d));
    }
    dirs.push(PathBuf::from("data"));
    dirs
}
