//! Run configuration: command-line flags override config-file keys, which
//! override the built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use trustguard::attack::{AttackKind, AttackSpec, EdgesPerTarget};
use trustguard::datasets::{candidate_dirs, DatasetPreset};
use trustguard::eval::{TaskKind, TaskSpec};
use trustguard::graph::{Segmentation, TrustLevelScheme};
use trustguard::model::Variant;
use trustguard::spatial::layer_dims;
use trustguard::train::TrainConfig;
use trustguard::{Error, Result};

/// Default output root when neither `--out` nor the config file sets one.
pub const OUT_ENV: &str = "TRUSTGUARD_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackChoice {
    Bad,
    Good,
    Onoff,
    None,
}

impl AttackChoice {
    fn kind(self) -> Option<AttackKind> {
        match self {
            Self::Bad => Some(AttackKind::BadMouthing),
            Self::Good => Some(AttackKind::GoodMouthing),
            Self::Onoff => Some(AttackKind::OnOff),
            Self::None => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationChoice {
    Time,
    Event,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskChoice {
    Single,
    Multi,
    Unobserved,
}

/// Flags shared by every command.
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Edge list path or preset name (bitcoin-otc, bitcoin-alpha).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Trust-level scheme of the edge list.
    #[arg(long)]
    pub scheme: Option<String>,
    /// TOML file with any of the run keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub snapshots: Option<usize>,
    #[arg(long, value_enum)]
    pub segmentation: Option<SegmentationChoice>,
    #[arg(long, value_enum)]
    pub task: Option<TaskChoice>,
    /// Training lengths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub train_upto: Option<Vec<usize>>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long, value_enum)]
    pub attack: Option<AttackChoice>,
    #[arg(long, value_enum)]
    pub defense: Option<Switch>,
    /// Pruning threshold of the robust aggregation.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of propagation layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Seeds as a list (`0,1,2`) or a range (`0..5`).
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output root.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in a config file; all optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<String>,
    pub scheme: Option<String>,
    pub out: Option<PathBuf>,
    pub snapshots: Option<usize>,
    pub segmentation: Option<SegmentationChoice>,
    pub task: Option<TaskChoice>,
    pub train_upto: Option<Vec<usize>>,
    pub horizon: Option<usize>,
    pub variant: Option<String>,
    pub attack: Option<AttackChoice>,
    pub defense: Option<Switch>,
    pub threshold: Option<f64>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub validation_fraction: Option<f64>,
    pub initial_dim: Option<usize>,
    pub structural_dropout: Option<f64>,
    pub temporal_dropout: Option<f64>,
    pub learn_initial: Option<bool>,
    pub predictor_hidden: Option<usize>,
    pub attack_fraction: Option<f64>,
    /// Injected edges per target; 0 means the target's degree.
    pub attack_edges: Option<usize>,
    pub attack_pool: Option<usize>,
    pub attack_seed: Option<u64>,
    pub poison_training: Option<bool>,
    pub fresh_attackers: Option<bool>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// The fully resolved run, written to every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub scheme: String,
    pub out: PathBuf,
    pub task: TaskSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn scheme(&self) -> Result<TrustLevelScheme> {
        TrustLevelScheme::by_name(&self.scheme).ok_or_else(|| Error::config(format!("unknown scheme `{}`", self.scheme)))
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::config("no dataset given (use --dataset)"))
    }
}

pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::config(format!("bad seed list `{text}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// Resolves a dataset argument: an existing path is used as is, a preset
/// name is looked up in the data directories.
pub fn resolve_dataset(arg: &str) -> Result<PathBuf> {
    let path = PathBuf::from(arg);
    if path.is_file() {
        return Ok(path);
    }
    if let Some(preset) = DatasetPreset::detect(arg) {
        if let Some(found) = preset.locate(&candidate_dirs()) {
            return Ok(found);
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("dataset not found: {arg}"),
    )))
}

fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// Merges flags over the file over the defaults and validates the result.
/// `needs_dataset` controls whether a missing or unreadable dataset fails.
pub fn resolve(flags: &CommonArgs, needs_dataset: bool) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    let dataset_arg = pick(flags.dataset.clone(), file.dataset.clone());
    let dataset = match &dataset_arg {
        Some(d) if needs_dataset => Some(resolve_dataset(d)?),
        Some(d) => Some(PathBuf::from(d)),
        None if needs_dataset => return Err(Error::config("no dataset given (use --dataset)")),
        None => None,
    };
    let scheme = pick(flags.scheme.clone(), file.scheme.clone()).unwrap_or_else(|| "bitcoin".into());
    let out = pick(flags.out.clone(), file.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));

    let mut train = TrainConfig::default();
    if let Some(preset) = dataset_arg.as_deref().and_then(DatasetPreset::detect) {
        preset.apply(&mut train);
    }
    let variant = match (&flags.variant, &file.variant) {
        (Some(v), _) => *v,
        (None, Some(v)) => v.parse().map_err(Error::config)?,
        (None, None) => Variant::Full,
    };
    variant.apply(&mut train.model);
    if let Some(levels) = TrustLevelScheme::by_name(&scheme).map(|s| s.cardinality()) {
        train.model.levels = levels;
    }
    if let Some(d) = pick(flags.defense, file.defense) {
        train.model.spatial.defense_enabled = d == Switch::On;
    }
    if let Some(t) = pick(flags.threshold, file.threshold) {
        train.model.spatial.prune_threshold = t;
    }
    if let Some(l) = pick(flags.layers, file.layers) {
        if l == 0 {
            return Err(Error::config("at least one propagation layer is required"));
        }
        train.model.spatial.layer_dims = layer_dims(l);
    }
    if let Some(h) = pick(flags.heads, file.heads) {
        train.model.temporal.heads = h;
    }
    if let Some(e) = pick(flags.epochs, file.epochs) {
        train.max_epochs = e;
    }
    if let Some(p) = file.patience {
        train.patience = p;
    }
    if let Some(lr) = file.learning_rate {
        train.adam.learning_rate = lr;
    }
    if let Some(l2) = file.l2 {
        train.l2 = l2;
    }
    if let Some(v) = file.validation_fraction {
        train.validation_fraction = v;
    }
    if let Some(d) = file.initial_dim {
        train.model.initial_dim = d;
    }
    if let Some(d) = file.structural_dropout {
        train.model.spatial.structural_dropout = d;
    }
    if let Some(d) = file.temporal_dropout {
        train.model.temporal.dropout = d;
    }
    if let Some(b) = file.learn_initial {
        train.model.learn_initial = b;
    }
    if file.predictor_hidden.is_some() {
        train.model.predictor_hidden = file.predictor_hidden;
    }

    let kind = match pick(flags.task, file.task).unwrap_or(TaskChoice::Single) {
        TaskChoice::Single => TaskKind::SingleObserved,
        TaskChoice::Multi => TaskKind::MultiObserved,
        TaskChoice::Unobserved => TaskKind::SingleUnobserved,
    };
    let mut task = TaskSpec::standard(kind);
    task.variant = variant;
    if let Some(n) = pick(flags.snapshots, file.snapshots) {
        task.snapshot_count = n;
    }
    if let Some(h) = pick(flags.horizon, file.horizon) {
        task.horizon = h;
    }
    if let Some(s) = pick(flags.segmentation, file.segmentation) {
        task.segmentation = match s {
            SegmentationChoice::Time => Segmentation::Time,
            SegmentationChoice::Event => Segmentation::Event,
        };
    }
    task.seeds = match (&flags.seeds, &file.seeds) {
        (Some(s), _) => parse_seeds(s)?,
        (None, Some(s)) => s.clone(),
        (None, None) => task.seeds,
    };
    let attack = pick(flags.attack, file.attack).unwrap_or(AttackChoice::None);
    task.attack = attack.kind().map(|kind| {
        let mut a = AttackSpec::new(kind, file.attack_seed.unwrap_or(0));
        if let Some(f) = file.attack_fraction {
            a.target_fraction = f;
        }
        if let Some(e) = file.attack_edges {
            a.edges_per_target = if e == 0 { EdgesPerTarget::Degree } else { EdgesPerTarget::Fixed(e) };
        }
        if let Some(p) = file.attack_pool {
            a.attacker_pool = p;
        }
        if let Some(p) = file.poison_training {
            a.poison_training = p;
        }
        if let Some(f) = file.fresh_attackers {
            a.fresh_attackers = f;
        }
        a
    });
    task.train_upto = match pick(flags.train_upto.clone(), file.train_upto.clone()) {
        Some(t) => t,
        // attacks use the fixed seven-snapshot training window
        None if task.attack.is_some() => vec![7.min(task.snapshot_count.saturating_sub(task.test_span()))],
        None => task.all_subtasks(),
    };

    train.validate()?;
    task.validate()?;
    let config = RunConfig {
        dataset,
        scheme,
        out,
        task,
        train,
    };
    config.scheme()?;
    Ok(config)
}
