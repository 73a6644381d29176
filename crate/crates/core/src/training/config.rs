use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episodes::{
    load_csv, make_synthetic, CsvSchema, EpisodeSpec, LabeledDataset, Phase, SplitConfig,
    SyntheticParams,
};
use crate::error::{Error, Result};
use crate::learners::{HeadConfig, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Baseline,
    /// Train on the highest-loss candidate.
    At,
    /// Lowest-loss candidate for the first half of training, highest-loss after.
    Act,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::At => "at",
            Strategy::Act => "act",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "at" => Ok(Strategy::At),
            "act" => Ok(Strategy::Act),
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One winner per base episode and its extras.
    PerGroup,
    /// `batch_size` winners from all candidates of the batch pooled together.
    PoolTopk,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_group" => Ok(SelectionMode::PerGroup),
            "pool_topk" => Ok(SelectionMode::PoolTopk),
            _ => Err(Error::Config(format!("unknown selection mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticParams),
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Episodes per parameter update.
    pub batch_size: usize,
    pub strategy: Strategy,
    /// Extra candidates sampled per base episode (AT/ACT).
    pub extra_per_episode: usize,
    pub selection_mode: SelectionMode,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query_train: usize,
    pub q_query_eval: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub val_every_iterations: usize,
    pub val_episodes: usize,
    pub test_episodes: usize,
    pub seed: u64,

    pub head: HeadConfig,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub probe_size: usize,
    pub probe_phase: Phase,
    pub dataset: DatasetSource,
    pub train_class_fraction: f64,
    pub val_class_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Minutes-scale run that keeps the reference query counts and candidate group size.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 20,
            episodes_per_epoch: 200,
            batch_size: 4,
            strategy: Strategy::Baseline,
            extra_per_episode: 4,
            selection_mode: SelectionMode::PerGroup,
            n_way: 5,
            k_shot: 1,
            q_query_train: 6,
            q_query_eval: 15,
            lr: 0.01,
            lr_decay_epochs: vec![7, 13, 17],
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            val_every_iterations: 100,
            val_episodes: 200,
            test_episodes: 500,
            seed: 0,
            head: HeadConfig::proto(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            probe_size: 60,
            probe_phase: Phase::Train,
            dataset: DatasetSource::Synthetic(SyntheticParams::default()),
            train_class_fraction: 0.5,
            val_class_fraction: 0.25,
        }
    }

    /// Full-length schedule: 60 epochs of 1000 episodes, batches of 8, top-8-of-40 pooling.
    pub fn full() -> Self {
        TrainConfig {
            epochs: 60,
            episodes_per_epoch: 1000,
            batch_size: 8,
            selection_mode: SelectionMode::PoolTopk,
            lr: 0.1,
            lr_decay_epochs: vec![20, 40, 50],
            val_every_iterations: 1000,
            val_episodes: 2000,
            test_episodes: 1000,
            probe_size: 160,
            ..TrainConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(TrainConfig::desk()),
            "full" => Ok(TrainConfig::full()),
            _ => Err(Error::Config(format!("unknown preset `{name}` (desk, full)"))),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.episodes_per_epoch / self.batch_size
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch()
    }

    pub fn group_size(&self) -> usize {
        match self.strategy {
            Strategy::Baseline => 1,
            _ => 1 + self.extra_per_episode,
        }
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut s = vec![input_dim];
        s.extend(&self.hidden);
        s.push(self.embed_dim);
        s
    }

    pub fn train_spec(&self) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.n_way, self.k_shot, self.q_query_train, Phase::Train)
    }

    pub fn eval_spec(&self, phase: Phase) -> Result<EpisodeSpec> {
        EpisodeSpec::new(self.n_way, self.k_shot, self.q_query_eval, phase)
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }

    /// Checks everything the training loop relies on.
    pub fn validate_structure(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.episodes_per_epoch < self.batch_size || !self.episodes_per_epoch.is_multiple_of(self.batch_size) {
            return fail(format!(
                "episodes_per_epoch ({}) must be a positive multiple of batch_size ({})",
                self.episodes_per_epoch, self.batch_size
            ));
        }
        if self.val_every_iterations == 0 || self.val_episodes == 0 || self.test_episodes == 0 {
            return fail("val_every_iterations, val_episodes and test_episodes must be >= 1".into());
        }
        if self.probe_size == 0 {
            return fail("probe_size must be >= 1".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return fail(format!("lr_decay_factor must be > 0, got {}", self.lr_decay_factor));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.embed_dim < 2 || self.hidden.contains(&0) {
            return fail("embed_dim must be >= 2 and hidden widths >= 1".into());
        }
        self.head.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_spec().map_err(|e| Error::Config(e.to_string()))?;
        self.eval_spec(Phase::Test).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Structural checks plus the strategy rules enforced for user-supplied configs.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if self.strategy != Strategy::Baseline && self.extra_per_episode == 0 {
            return Err(Error::Config(format!(
                "strategy `{}` needs extra_per_episode >= 1; with 0 extras there is nothing to select from",
                self.strategy.as_str()
            )));
        }
        if self.strategy == Strategy::Act && !self.epochs.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "strategy `act` needs an even number of epochs, got {}",
                self.epochs
            )));
        }
        Ok(())
    }

    /// Loads the dataset and builds the class split; features are standardized
    /// with statistics from the train classes only.
    pub fn load_dataset(&self) -> Result<(LabeledDataset, SplitConfig)> {
        let raw = match &self.dataset {
            DatasetSource::Synthetic(p) => make_synthetic(p)?,
            DatasetSource::Csv { path } => load_csv(path, &CsvSchema::new())?,
        };
        let split = SplitConfig::by_fraction(
            raw.num_classes(),
            self.train_class_fraction,
            self.val_class_fraction,
        )?;
        split.validate(raw.num_classes())?;
        let per_class = self.k_shot + self.q_query_train.max(self.q_query_eval);
        raw.check_min_class_size(per_class)?;
        let ds = raw.normalized(&split.train)?;
        Ok((ds, split))
    }
}
