//! Episodic meta-training with baseline, adversarial and curriculum selection.

mod config;
mod select;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{DatasetSource, SelectionMode, Strategy, TrainConfig};
pub use select::{argmax_first, argmin_first, pick_for, select, select_act, select_at, top_k, Choice, Pick};

use crate::episodes::{
    sample_many, sample_probe_set, Episode, EpisodeSampler, EpisodeSpec, LabeledDataset, Phase,
    ProbeSet, SplitConfig,
};
use crate::error::{Error, Result};
use crate::forgetting::{record_epoch, AccuracyTrace};
use crate::hardness::{mean_ci95, score_episodes, HardnessRecord};
use crate::io::{fmt_f64, write_csv_rows};
use crate::learners::{
    loss_and_gradients, score_episode, Checkpoint, EmbeddingNet, HeadConfig, ModelState,
};
use crate::ndcore::{sgd_step, Tensor};

/// Independent seed for a named random stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Seed for held-out evaluation episodes drawn from `phase`.
pub fn eval_seed(seed: u64, phase: Phase) -> u64 {
    derive_seed(seed, &format!("eval-{phase}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    /// Mean query loss of the selected episodes, before the update.
    pub loss: f64,
    pub selected_ids: Vec<u64>,
    /// Candidate losses per group; empty when no selection took place.
    pub candidate_losses: Vec<Vec<f64>>,
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<IterationLog>,
    pub validations: Vec<ValidationRecord>,
    /// Index into `validations` of the best (earliest on ties) accuracy.
    pub best_validation: Option<usize>,
}

impl TrainLog {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.best_validation.map(|i| self.validations[i].mean_accuracy)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .iterations
            .iter()
            .map(|it| {
                vec![
                    it.epoch.to_string(),
                    it.iteration.to_string(),
                    fmt_f64(it.loss),
                    fmt_f64(it.lr),
                    it.selected_ids.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
                ]
            })
            .collect();
        write_csv_rows(path, &["epoch", "iter", "loss", "lr", "selected_ids"], &rows)
    }

    pub fn write_validation_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .validations
            .iter()
            .map(|v| vec![v.epoch.to_string(), v.iteration.to_string(), fmt_f64(v.mean_accuracy)])
            .collect();
        write_csv_rows(path, &["epoch", "iter", "val_accuracy"], &rows)
    }
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_model: Checkpoint,
    pub log: TrainLog,
    pub probe: ProbeSet,
    pub traces: Vec<AccuracyTrace>,
}

/// Query losses of candidate episodes under fixed parameters (no graph is kept).
pub fn candidate_losses(net: &EmbeddingNet, head: &HeadConfig, episodes: &[Episode]) -> Result<Vec<f64>> {
    episodes
        .par_iter()
        .map(|ep| score_episode(net, head, ep).map(|s| s.loss))
        .collect()
}

/// Mean loss and mean gradient over `episodes`, reduced in index order.
pub fn batch_gradients(
    net: &EmbeddingNet,
    head: &HeadConfig,
    episodes: &[&Episode],
) -> Result<(f64, Vec<Tensor>)> {
    let parts = episodes
        .par_iter()
        .map(|ep| loss_and_gradients(net, head, ep))
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut sums: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
    for (l, grads) in &parts {
        loss += l;
        for (acc, g) in sums.iter_mut().zip(grads) {
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
    let grads = sums
        .into_iter()
        .zip(net.param_shapes())
        .map(|(s, shape)| Tensor::from_parts(shape, s.into_iter().map(|v| v / n).collect()))
        .collect();
    Ok((loss / n, grads))
}

/// Step-by-step driver behind [`train`].
pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub state: ModelState,
    dataset: &'d LabeledDataset,
    splits: &'d SplitConfig,
    train_spec: EpisodeSpec,
    base_sampler: EpisodeSampler,
    extra_sampler: EpisodeSampler,
    iteration: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, dataset: &'d LabeledDataset, splits: &'d SplitConfig) -> Result<Self> {
        config.validate_structure()?;
        splits.validate(dataset.num_classes())?;
        let net = EmbeddingNet::init(&config.layer_sizes(dataset.dim()), derive_seed(config.seed, "init"))?;
        let state = ModelState::new(net, config.head, config.lr, config.momentum, config.weight_decay)?;
        Ok(Trainer {
            train_spec: config.train_spec()?,
            base_sampler: EpisodeSampler::new(derive_seed(config.seed, "train")),
            extra_sampler: EpisodeSampler::new(derive_seed(config.seed, "extra")),
            config,
            state,
            dataset,
            splits,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws `batch_size` candidate groups: a base episode plus its extras.
    pub fn sample_groups(&mut self) -> Result<Vec<Vec<Episode>>> {
        let extras = self.config.group_size() - 1;
        let classes = self.splits.classes(Phase::Train);
        (0..self.config.batch_size)
            .map(|_| {
                let mut group = vec![self.base_sampler.sample(self.dataset, classes, &self.train_spec)?];
                for _ in 0..extras {
                    group.push(self.extra_sampler.sample(self.dataset, classes, &self.train_spec)?);
                }
                Ok(group)
            })
            .collect()
    }

    /// Chooses the training episodes for one iteration.
    pub fn choose(&self, groups: &[Vec<Episode>], epoch: usize) -> Result<(Vec<Vec<f64>>, Vec<Choice>)> {
        if groups.iter().all(|g| g.len() == 1) {
            return Ok((Vec::new(), (0..groups.len()).map(|g| (g, 0)).collect()));
        }
        let flat: Vec<Episode> = groups.iter().flatten().cloned().collect();
        let losses = candidate_losses(&self.state.net, &self.state.head, &flat)?;
        let mut it = losses.into_iter();
        let per_group: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| it.by_ref().take(g.len()).collect())
            .collect();
        let pick = pick_for(self.config.strategy, epoch, self.config.epochs);
        let choices = select(&per_group, self.config.selection_mode, pick)?;
        Ok((per_group, choices))
    }

    /// One parameter update on the given episodes. Returns the pre-update mean loss.
    pub fn update(&mut self, episodes: &[&Episode]) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.state.net, &self.state.head, episodes)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at iteration {}", self.iteration)));
        }
        let mut params = self.state.net.params();
        let names = self.state.net.param_names();
        sgd_step(&mut params, &grads, &names, &mut self.state.optimizer)
            .map_err(|e| e.context(format!("iteration {}", self.iteration)))?;
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Training(format!(
                "parameter {} became non-finite at iteration {}",
                names[i], self.iteration
            )));
        }
        self.state.net.set_params(params)?;
        Ok(loss)
    }

    /// Sample, select and update once.
    pub fn step(&mut self, epoch: usize) -> Result<IterationLog> {
        let lr = self.config.lr_at(epoch);
        self.state.optimizer.lr = lr;
        let groups = self.sample_groups()?;
        let (candidate_losses, choices) = self.choose(&groups, epoch)?;
        let selected: Vec<&Episode> = choices.iter().map(|&(g, i)| &groups[g][i]).collect();
        let loss = self.update(&selected)?;
        let log = IterationLog {
            epoch,
            iteration: self.iteration,
            lr,
            loss,
            selected_ids: selected.iter().map(|e| e.episode_id).collect(),
            candidate_losses,
            choices,
        };
        self.iteration += 1;
        Ok(log)
    }
}

/// Mean accuracy of a snapshot over pre-sampled episodes.
pub fn mean_accuracy(net: &EmbeddingNet, head: &HeadConfig, episodes: &[Episode]) -> Result<f64> {
    let recs = score_episodes(net, head, episodes)?;
    Ok(recs.iter().map(|r| r.accuracy).sum::<f64>() / recs.len() as f64)
}

/// Runs meta-training and returns the best-validation checkpoint.
pub fn train(config: &TrainConfig, dataset: &LabeledDataset, splits: &SplitConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), dataset, splits)?;
    let probe = sample_probe_set(
        dataset,
        splits,
        &config.eval_spec(config.probe_phase)?,
        config.probe_size,
        derive_seed(config.seed, "probe"),
    )?;
    let probe_episodes = probe.materialize(dataset)?;
    let val_episodes = sample_many(
        dataset,
        splits,
        &config.eval_spec(Phase::Val)?,
        config.val_episodes,
        derive_seed(config.seed, "val"),
    )?;

    let mut log = TrainLog::default();
    let mut traces = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let total = config.total_iterations();

    for epoch in 0..config.epochs {
        trainer.state.epoch = epoch;
        for _ in 0..config.iterations_per_epoch() {
            let it = trainer.step(epoch)?;
            log.iterations.push(it);
            let done = trainer.iteration();
            if done % config.val_every_iterations == 0 || done == total {
                let acc = mean_accuracy(&trainer.state.net, &trainer.state.head, &val_episodes)?;
                log.validations.push(ValidationRecord { epoch, iteration: done, mean_accuracy: acc });
                let improved = log.best_val_accuracy().is_none_or(|b| acc > b);
                if improved {
                    log.best_validation = Some(log.validations.len() - 1);
                    best = Some(trainer.state.to_checkpoint());
                }
            }
        }
        record_epoch(&mut traces, &trainer.state.net, &trainer.state.head, &probe_episodes, epoch)?;
    }

    Ok(TrainOutcome {
        best: best.expect("validation runs at the last iteration"),
        final_model: trainer.state.to_checkpoint(),
        log,
        probe,
        traces,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_accuracy: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
    pub records: Vec<HardnessRecord>,
}

/// Samples `num_episodes` fresh episodes and scores them.
pub fn evaluate(
    net: &EmbeddingNet,
    head: &HeadConfig,
    dataset: &LabeledDataset,
    splits: &SplitConfig,
    spec: &EpisodeSpec,
    num_episodes: usize,
    seed: u64,
) -> Result<Evaluation> {
    if num_episodes == 0 {
        return Err(Error::Parameter("num_episodes must be >= 1".into()));
    }
    let episodes = sample_many(dataset, splits, spec, num_episodes, seed)?;
    let records = score_episodes(net, head, &episodes)?;
    let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let (mean_accuracy, ci95) = mean_ci95(&accs);
    Ok(Evaluation { mean_accuracy, ci95, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{make_synthetic, SyntheticParams};

    fn tiny(strategy: Strategy, extras: usize) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            episodes_per_epoch: 8,
            batch_size: 2,
            strategy,
            extra_per_episode: extras,
            val_every_iterations: 3,
            val_episodes: 5,
            test_episodes: 5,
            probe_size: 4,
            hidden: vec![8],
            embed_dim: 4,
            dataset: DatasetSource::Synthetic(SyntheticParams { per_class: 30, ..SyntheticParams::default() }),
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn baseline_selection_is_identity() {
        let cfg = tiny(Strategy::Baseline, 4);
        let (ds, sp) = cfg.load_dataset().unwrap();
        let out = train(&cfg, &ds, &sp).unwrap();
        for it in &out.log.iterations {
            assert!(it.candidate_losses.is_empty());
            assert_eq!(it.choices, vec![(0, 0), (1, 0)]);
        }
        assert_eq!(out.traces.len(), 4);
        assert!(out.traces.iter().all(|t| t.acc.len() == 2));
    }

    #[test]
    fn best_checkpoint_tracks_max_validation() {
        let cfg = tiny(Strategy::At, 2);
        let (ds, sp) = cfg.load_dataset().unwrap();
        let out = train(&cfg, &ds, &sp).unwrap();
        let best = out.log.best_val_accuracy().unwrap();
        assert!(out.log.validations.iter().all(|v| v.mean_accuracy <= best));
        assert_eq!(out.log.validations.last().unwrap().iteration, cfg.total_iterations());
    }

    #[test]
    fn lr_follows_schedule_in_log() {
        let cfg = TrainConfig { lr_decay_epochs: vec![1], ..tiny(Strategy::Baseline, 0) };
        let (ds, sp) = cfg.load_dataset().unwrap();
        let out = train(&cfg, &ds, &sp).unwrap();
        for it in &out.log.iterations {
            let want = if it.epoch == 0 { cfg.lr } else { cfg.lr * 0.1 };
            assert!((it.lr - want).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_clusters_are_solved() {
        let ds = make_synthetic(&SyntheticParams { spread: 1e-9, ..SyntheticParams::default() }).unwrap();
        let sp = SplitConfig::by_fraction(20, 0.5, 0.25).unwrap();
        let ds = ds.normalized(&sp.train).unwrap();
        let net = EmbeddingNet::init(&[16, 32, 8], 3).unwrap();
        let spec = EpisodeSpec::new(5, 1, 15, Phase::Test).unwrap();
        let ev = evaluate(&net, &HeadConfig::proto(), &ds, &sp, &spec, 50, 1).unwrap();
        assert_eq!(ev.mean_accuracy, 1.0);
        assert_eq!(ev.ci95, 0.0);
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "extra"));
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
    }
}
