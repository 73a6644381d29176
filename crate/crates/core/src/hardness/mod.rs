//! Episode hardness: query loss of a fixed model, ranking, histograms and
//! cross-model transfer correlations.

mod stats;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stats::{average_ranks, mean, mean_ci95, pearson, spearman};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv_rows};
use crate::learners::{score_episode, EmbeddingNet, HeadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardnessRecord {
    pub episode_id: u64,
    pub loss: f64,
    pub accuracy: f64,
    /// Position after a descending-loss sort; 0 is the hardest episode.
    pub rank: usize,
    pub log_odds: f64,
}

/// Reassigns ranks by descending loss; ties keep input order.
pub fn assign_ranks(records: &mut [HardnessRecord]) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].loss.total_cmp(&records[a].loss));
    for (rank, &i) in order.iter().enumerate() {
        records[i].rank = rank;
    }
}

/// Scores every episode against a fixed snapshot. Parameters are never touched.
pub fn score_episodes(
    net: &EmbeddingNet,
    head: &HeadConfig,
    episodes: &[Episode],
) -> Result<Vec<HardnessRecord>> {
    let mut records = episodes
        .par_iter()
        .map(|ep| {
            let s = score_episode(net, head, ep)
                .map_err(|e| e.context(format!("episode {}", ep.episode_id)))?;
            Ok(HardnessRecord {
                episode_id: ep.episode_id,
                loss: s.loss,
                accuracy: s.accuracy,
                rank: 0,
                log_odds: s.log_odds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assign_ranks(&mut records);
    Ok(records)
}

/// The `m` hardest and `m` easiest episodes with group means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub m: usize,
    /// Hardest first.
    pub hardest: Vec<HardnessRecord>,
    /// Easiest first.
    pub easiest: Vec<HardnessRecord>,
    pub hardest_mean_accuracy: f64,
    pub easiest_mean_accuracy: f64,
    pub hardest_mean_loss: f64,
    pub easiest_mean_loss: f64,
}

impl Extremes {
    /// Easiest-group mean accuracy minus hardest-group mean accuracy.
    pub fn accuracy_gap(&self) -> f64 {
        self.easiest_mean_accuracy - self.hardest_mean_accuracy
    }
}

pub fn extremes(records: &[HardnessRecord], m: usize) -> Result<Extremes> {
    if m == 0 || 2 * m > records.len() {
        return Err(Error::Parameter(format!(
            "extremes needs 1 <= m <= N/2, got m={m} with N={}",
            records.len()
        )));
    }
    let mut by_rank: Vec<&HardnessRecord> = records.iter().collect();
    by_rank.sort_by_key(|r| r.rank);
    let hardest: Vec<HardnessRecord> = by_rank[..m].iter().map(|r| **r).collect();
    let easiest: Vec<HardnessRecord> = by_rank.iter().rev().take(m).map(|r| **r).collect();
    let avg = |g: &[HardnessRecord], f: fn(&HardnessRecord) -> f64| {
        g.iter().map(f).sum::<f64>() / g.len() as f64
    };
    Ok(Extremes {
        m,
        hardest_mean_accuracy: avg(&hardest, |r| r.accuracy),
        easiest_mean_accuracy: avg(&easiest, |r| r.accuracy),
        hardest_mean_loss: avg(&hardest, |r| r.loss),
        easiest_mean_loss: avg(&easiest, |r| r.loss),
        hardest,
        easiest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of losses over `[min, max]`; the maximum lands in the last bin.
pub fn hardness_histogram(records: &[HardnessRecord], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Parameter(format!("histogram needs >= 2 bins, got {bins}")));
    }
    if records.is_empty() {
        return Err(Error::Parameter("histogram of zero records".into()));
    }
    let lo = records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for r in records {
        let b = if width > 0.0 {
            (((r.loss - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub models: Vec<String>,
    pub pearson: Vec<Vec<f64>>,
    pub spearman: Vec<Vec<f64>>,
    pub episodes: usize,
}

/// Pairwise correlations of per-episode losses from already-scored models.
pub fn transfer_from_losses(names: &[String], losses: &[Vec<f64>]) -> Result<TransferMatrix> {
    if names.len() < 2 || names.len() != losses.len() {
        return Err(Error::Parameter(format!(
            "transfer matrix needs >= 2 models with one loss vector each, got {} names / {} vectors",
            names.len(),
            losses.len()
        )));
    }
    let n = names.len();
    let mut p = vec![vec![1.0; n]; n];
    let mut s = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let ctx = || format!("models {} and {}", names[i], names[j]);
            let pv = pearson(&losses[i], &losses[j]).map_err(|e| e.context(ctx()))?;
            let sv = spearman(&losses[i], &losses[j]).map_err(|e| e.context(ctx()))?;
            p[i][j] = pv;
            p[j][i] = pv;
            s[i][j] = sv;
            s[j][i] = sv;
        }
    }
    Ok(TransferMatrix {
        models: names.to_vec(),
        pearson: p,
        spearman: s,
        episodes: losses[0].len(),
    })
}

/// Scores shared episodes with each model and correlates the loss vectors.
pub fn transfer_matrix(
    models: &[(String, &EmbeddingNet, HeadConfig)],
    episodes: &[Episode],
) -> Result<TransferMatrix> {
    let mut names = Vec::new();
    let mut losses = Vec::new();
    for (name, net, head) in models {
        let recs = score_episodes(net, head, episodes).map_err(|e| e.context(name))?;
        names.push(name.clone());
        losses.push(recs.iter().map(|r| r.loss).collect());
    }
    transfer_from_losses(&names, &losses)
}

pub const HARDNESS_HEADER: [&str; 5] = ["episode_id", "loss", "accuracy", "rank", "log_odds"];

pub fn write_hardness_csv(path: &Path, records: &[HardnessRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.episode_id.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.accuracy),
                r.rank.to_string(),
                fmt_f64(r.log_odds),
            ]
        })
        .collect();
    write_csv_rows(path, &HARDNESS_HEADER, &rows)
}

pub fn read_hardness_csv(path: &Path) -> Result<Vec<HardnessRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != HARDNESS_HEADER {
        return Err(Error::Parameter(format!(
            "{}: expected columns {}",
            path.display(),
            HARDNESS_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |c: &str| Error::Parameter(format!("{}: row {}: bad {c}", path.display(), i + 2));
        out.push(HardnessRecord {
            episode_id: rec[0].parse().map_err(|_| bad("episode_id"))?,
            loss: rec[1].parse().map_err(|_| bad("loss"))?,
            accuracy: rec[2].parse().map_err(|_| bad("accuracy"))?,
            rank: rec[3].parse().map_err(|_| bad("rank"))?,
            log_odds: rec[4].parse().map_err(|_| bad("log_odds"))?,
        });
    }
    Ok(out)
}

pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<()> {
    let rows: Vec<Vec<String>> = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![fmt_f64(h.edges[i]), fmt_f64(h.edges[i + 1]), c.to_string()])
        .collect();
    write_csv_rows(path, &["bin_lo", "bin_hi", "count"], &rows)
}
