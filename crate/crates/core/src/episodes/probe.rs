use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, SplitConfig};
use super::sampler::{Episode, EpisodeIndices, EpisodeSampler, EpisodeSpec};
use crate::error::{Error, Result};

pub const DEFAULT_PROBE_SIZE: usize = 160;

/// Fixed episodes re-evaluated every epoch to build accuracy traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub spec: EpisodeSpec,
    pub seed: u64,
    pub episodes: Vec<EpisodeIndices>,
}

impl ProbeSet {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.episodes.iter().map(|e| e.episode_id).collect()
    }

    pub fn materialize(&self, dataset: &LabeledDataset) -> Result<Vec<Episode>> {
        self.episodes
            .iter()
            .map(|idx| Episode::materialize(dataset, idx))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Samples `k` episodes once, from the split named by `spec.phase`.
pub fn sample_probe_set(
    dataset: &LabeledDataset,
    splits: &SplitConfig,
    spec: &EpisodeSpec,
    k: usize,
    seed: u64,
) -> Result<ProbeSet> {
    if k == 0 {
        return Err(Error::Parameter("probe set size must be >= 1".into()));
    }
    let mut sampler = EpisodeSampler::new(seed);
    let classes = splits.classes(spec.phase);
    let episodes = (0..k)
        .map(|_| sampler.sample_indices(dataset, classes, spec))
        .collect::<Result<_>>()?;
    Ok(ProbeSet {
        spec: *spec,
        seed,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{make_synthetic, Phase, SyntheticParams};

    #[test]
    fn sizes_and_roundtrip() {
        let ds = make_synthetic(&SyntheticParams::default()).unwrap();
        let sp = SplitConfig::by_fraction(20, 0.5, 0.25).unwrap();
        let spec = EpisodeSpec::new(5, 1, 15, Phase::Train).unwrap();
        let probe = sample_probe_set(&ds, &sp, &spec, DEFAULT_PROBE_SIZE, 11).unwrap();
        assert_eq!(probe.len(), 160);
        assert_eq!(sample_probe_set(&ds, &sp, &spec, 1, 11).unwrap().len(), 1);
        assert!(sample_probe_set(&ds, &sp, &spec, 0, 11).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.json");
        probe.save(&path).unwrap();
        let back = ProbeSet::load(&path).unwrap();
        assert_eq!(back.ids(), probe.ids());
        assert_eq!(back, probe);
    }
}
