//! Candidate selection rules. Ties always go to the lowest candidate index.

use serde::{Deserialize, Serialize};

use super::config::{SelectionMode, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pick {
    Hardest,
    Easiest,
}

/// Index of the largest loss, first on ties.
pub fn argmax_first(losses: &[f64]) -> Result<usize> {
    pick_one(losses, Pick::Hardest)
}

/// Index of the smallest loss, first on ties.
pub fn argmin_first(losses: &[f64]) -> Result<usize> {
    pick_one(losses, Pick::Easiest)
}

fn pick_one(losses: &[f64], pick: Pick) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::Contract("empty candidate group".into()));
    }
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate().skip(1) {
        let better = match pick {
            Pick::Hardest => l > losses[best],
            Pick::Easiest => l < losses[best],
        };
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// Indices of the `k` hardest (or easiest) losses, in selection order.
pub fn top_k(losses: &[f64], k: usize, pick: Pick) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(Error::Contract("empty candidate pool".into()));
    }
    if k > losses.len() {
        return Err(Error::Contract(format!("cannot take {k} of {} candidates", losses.len())));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    // stable sort keeps lower indices first among equal losses
    match pick {
        Pick::Hardest => order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a])),
        Pick::Easiest => order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b])),
    }
    order.truncate(k);
    Ok(order)
}

/// Which end of the loss distribution a strategy trains on during `epoch`.
pub fn pick_for(strategy: Strategy, epoch: usize, total_epochs: usize) -> Pick {
    match strategy {
        Strategy::Baseline | Strategy::At => Pick::Hardest,
        // first ceil(E/2) epochs pick the easiest candidates
        Strategy::Act if epoch < total_epochs.div_ceil(2) => Pick::Easiest,
        Strategy::Act => Pick::Hardest,
    }
}

/// A chosen candidate: `(group, position within group)`.
pub type Choice = (usize, usize);

/// Applies a selection rule to per-group candidate losses.
///
/// `PerGroup` returns one choice per group in group order; `PoolTopk` pools
/// every candidate (group-major order) and returns `groups.len()` choices.
pub fn select(groups: &[Vec<f64>], mode: SelectionMode, pick: Pick) -> Result<Vec<Choice>> {
    if groups.is_empty() {
        return Err(Error::Contract("no candidate groups".into()));
    }
    match mode {
        SelectionMode::PerGroup => groups
            .iter()
            .enumerate()
            .map(|(g, losses)| pick_one(losses, pick).map(|i| (g, i)))
            .collect(),
        SelectionMode::PoolTopk => {
            let mut owners = Vec::new();
            let mut pooled = Vec::new();
            for (g, losses) in groups.iter().enumerate() {
                if losses.is_empty() {
                    return Err(Error::Contract(format!("candidate group {g} is empty")));
                }
                for (i, &l) in losses.iter().enumerate() {
                    owners.push((g, i));
                    pooled.push(l);
                }
            }
            Ok(top_k(&pooled, groups.len(), pick)?
                .into_iter()
                .map(|p| owners[p])
                .collect())
        }
    }
}

/// Adversarial selection: highest loss per group, or top-k over the pool.
pub fn select_at(groups: &[Vec<f64>], mode: SelectionMode) -> Result<Vec<Choice>> {
    select(groups, mode, Pick::Hardest)
}

/// Curriculum selection: lowest loss before the halfway epoch, then as [`select_at`].
pub fn select_act(
    groups: &[Vec<f64>],
    mode: SelectionMode,
    epoch: usize,
    total_epochs: usize,
) -> Result<Vec<Choice>> {
    select(groups, mode, pick_for(Strategy::Act, epoch, total_epochs))
}
