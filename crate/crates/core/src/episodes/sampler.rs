use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{LabeledDataset, Phase, SplitConfig};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    /// Query examples per class.
    pub q_query: usize,
    pub phase: Phase,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize, phase: Phase) -> Result<Self> {
        let spec = EpisodeSpec { n_way, k_shot, q_query, phase };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.q_query < 1 {
            return Err(Error::Parameter(format!(
                "episode spec needs n_way >= 2, k_shot >= 1, q_query >= 1; got {}-way {}-shot {} query",
                self.n_way, self.k_shot, self.q_query
            )));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.q_query
    }
}

/// Dataset indices that define one episode; the serializable identity of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeIndices {
    pub episode_id: u64,
    /// Sampled global class ids; position is the local label.
    pub classes: Vec<usize>,
    /// Support example indices, grouped by local label in order.
    pub support: Vec<usize>,
    /// Query example indices, grouped by local label in order.
    pub query: Vec<usize>,
}

/// One n-way k-shot task with materialized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub global_classes: Vec<usize>,
    pub support_features: Tensor,
    pub support_labels: Vec<usize>,
    pub query_features: Tensor,
    pub query_labels: Vec<usize>,
    pub indices: EpisodeIndices,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.global_classes.len()
    }

    /// Builds features and local labels from a dataset.
    pub fn materialize(dataset: &LabeledDataset, idx: &EpisodeIndices) -> Result<Self> {
        let local = |examples: &[usize]| -> Result<Vec<usize>> {
            examples
                .iter()
                .map(|&e| {
                    let global = *dataset.labels().get(e).ok_or_else(|| {
                        Error::Sampling(format!("example index {e} outside dataset"))
                    })?;
                    idx.classes.iter().position(|&c| c == global).ok_or_else(|| {
                        Error::Sampling(format!(
                            "example {e} has class {global} not in episode {}",
                            idx.episode_id
                        ))
                    })
                })
                .collect()
        };
        let support_labels = local(&idx.support)?;
        let query_labels = local(&idx.query)?;
        Ok(Episode {
            episode_id: idx.episode_id,
            global_classes: idx.classes.clone(),
            support_features: dataset.features().select_rows(&idx.support),
            support_labels,
            query_features: dataset.features().select_rows(&idx.query),
            query_labels,
            indices: idx.clone(),
        })
    }
}

/// Stable episode identity from the sampler seed, draw counter and drawn indices.
pub fn episode_id(seed: u64, draw: u64, classes: &[usize], examples: &[usize]) -> u64 {
    let mut c = classes.to_vec();
    c.sort_unstable();
    let mut e = examples.to_vec();
    e.sort_unstable();
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(draw.to_le_bytes());
    h.update((c.len() as u64).to_le_bytes());
    for v in c {
        h.update((v as u64).to_le_bytes());
    }
    for v in e {
        h.update((v as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Seeded two-step episode sampler: classes first, then examples per class.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    seed: u64,
    draws: u64,
    rng: ChaCha8Rng,
}

impl EpisodeSampler {
    pub fn new(seed: u64) -> Self {
        EpisodeSampler {
            seed,
            draws: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Draws episode indices without touching feature data.
    pub fn sample_indices(
        &mut self,
        dataset: &LabeledDataset,
        classes: &[usize],
        spec: &EpisodeSpec,
    ) -> Result<EpisodeIndices> {
        spec.validate()?;
        if classes.len() < spec.n_way {
            return Err(Error::Sampling(format!(
                "{} split has {} classes, episode needs {}",
                spec.phase,
                classes.len(),
                spec.n_way
            )));
        }
        let per_class = spec.per_class();
        for &c in classes {
            let have = dataset.class_index().get(c).map_or(0, Vec::len);
            if have < per_class {
                return Err(Error::Sampling(format!(
                    "class `{}` has {have} examples, episode needs {per_class}",
                    dataset.class_index().get(c).map_or_else(|| c.to_string(), |_| dataset.class_name(c).to_string())
                )));
            }
        }
        let chosen: Vec<usize> = index::sample(&mut self.rng, classes.len(), spec.n_way)
            .into_iter()
            .map(|i| classes[i])
            .collect();
        let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
        let mut query = Vec::with_capacity(spec.n_way * spec.q_query);
        for &c in &chosen {
            let pool = &dataset.class_index()[c];
            let picks = index::sample(&mut self.rng, pool.len(), per_class);
            for (j, p) in picks.into_iter().enumerate() {
                if j < spec.k_shot {
                    support.push(pool[p]);
                } else {
                    query.push(pool[p]);
                }
            }
        }
        let all: Vec<usize> = support.iter().chain(&query).copied().collect();
        let id = episode_id(self.seed, self.draws, &chosen, &all);
        self.draws += 1;
        Ok(EpisodeIndices {
            episode_id: id,
            classes: chosen,
            support,
            query,
        })
    }

    pub fn sample(
        &mut self,
        dataset: &LabeledDataset,
        classes: &[usize],
        spec: &EpisodeSpec,
    ) -> Result<Episode> {
        let idx = self.sample_indices(dataset, classes, spec)?;
        Episode::materialize(dataset, &idx)
    }
}

/// Samples one episode from the split named by `spec.phase`.
pub fn sample_episode(
    dataset: &LabeledDataset,
    splits: &SplitConfig,
    spec: &EpisodeSpec,
    sampler: &mut EpisodeSampler,
) -> Result<Episode> {
    sampler.sample(dataset, splits.classes(spec.phase), spec)
}

/// Samples `count` episodes from a fresh sampler seeded with `seed`.
pub fn sample_many(
    dataset: &LabeledDataset,
    splits: &SplitConfig,
    spec: &EpisodeSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    let mut sampler = EpisodeSampler::new(seed);
    (0..count)
        .map(|_| sample_episode(dataset, splits, spec, &mut sampler))
        .collect()
}
