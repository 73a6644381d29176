//! Dataset ingestion, class splits and n-way k-shot episode sampling.

mod dataset;
mod probe;
mod sampler;

pub use dataset::{
    load_csv, make_synthetic, read_csv, CsvSchema, LabeledDataset, Phase, SplitConfig,
    SyntheticParams,
};
pub use probe::{sample_probe_set, ProbeSet, DEFAULT_PROBE_SIZE};
pub use sampler::{
    episode_id, sample_episode, sample_many, Episode, EpisodeIndices, EpisodeSampler, EpisodeSpec,
};
