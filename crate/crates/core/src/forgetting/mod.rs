//! Probe-episode accuracy traces and forgetting-event detection.
//!
//! A global event for an episode means its final accuracy sits at least `α`
//! below the best accuracy it ever reached; a local event at epoch `j` means
//! `acc[j] + α <= acc[j-1]`.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv_rows};
use crate::learners::{adapt_episode, EmbeddingNet, HeadConfig};

pub const DEFAULT_ALPHAS: [f64; 7] = [0.03, 0.05, 0.07, 0.09, 0.11, 0.13, 0.15];
pub const DEFAULT_GROUP_SIZE: usize = 15;
pub const REFERENCE_WINDOW: usize = 20;
pub const REFERENCE_EPOCHS: usize = 60;

/// Slack for comparing accuracies that are ratios of small integers.
const CMP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTrace {
    pub episode_id: u64,
    /// Accuracy at the end of each completed epoch.
    pub acc: Vec<f64>,
}

/// Window of `20` epochs at 60 total, scaled proportionally for shorter runs.
pub fn default_window(epochs: usize) -> usize {
    if epochs >= REFERENCE_EPOCHS {
        REFERENCE_WINDOW
    } else {
        ((REFERENCE_WINDOW * epochs) as f64 / REFERENCE_EPOCHS as f64).round().max(1.0) as usize
    }
}

/// Appends one accuracy value per probe episode for epoch `epoch`.
pub fn record_epoch(
    traces: &mut Vec<AccuracyTrace>,
    net: &EmbeddingNet,
    head: &HeadConfig,
    probe: &[Episode],
    epoch: usize,
) -> Result<()> {
    if traces.is_empty() {
        traces.extend(probe.iter().map(|e| AccuracyTrace { episode_id: e.episode_id, acc: Vec::new() }));
    }
    if traces.len() != probe.len() {
        return Err(Error::Contract(format!(
            "{} traces for {} probe episodes",
            traces.len(),
            probe.len()
        )));
    }
    for (t, e) in traces.iter().zip(probe) {
        if t.episode_id != e.episode_id {
            return Err(Error::Contract(format!(
                "trace for episode {} paired with probe episode {}",
                t.episode_id, e.episode_id
            )));
        }
        if t.acc.len() != epoch {
            return Err(Error::Contract(format!(
                "epoch {epoch} recorded out of order; trace {} has {} epochs",
                t.episode_id,
                t.acc.len()
            )));
        }
    }
    let accs = probe
        .par_iter()
        .map(|ep| {
            let mut clf = adapt_episode(net, head, ep)?;
            clf.episode_accuracy(&ep.query_features, &ep.query_labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    for (t, a) in traces.iter_mut().zip(accs) {
        t.acc.push(a);
    }
    Ok(())
}

fn check(trace: &[f64], alpha: f64) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::Contract("empty accuracy trace".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    Ok(())
}

/// `max_j acc_j >= acc_end + α`.
pub fn detect_global(trace: &[f64], alpha: f64) -> Result<bool> {
    check(trace, alpha)?;
    let max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + CMP_EPS >= trace[trace.len() - 1] + alpha)
}

/// Number of epochs `j >= 1` with `acc_j + α <= acc_{j-1}`.
pub fn detect_local(trace: &[f64], alpha: f64) -> Result<usize> {
    count_local_in(trace, alpha, 0..trace.len())
}

/// Local events whose epoch index `j` lies in `epochs`.
pub fn count_local_in(trace: &[f64], alpha: f64, epochs: Range<usize>) -> Result<usize> {
    check(trace, alpha)?;
    let lo = epochs.start.max(1);
    let hi = epochs.end.min(trace.len());
    Ok((lo..hi)
        .filter(|&j| trace[j] + alpha <= trace[j - 1] + CMP_EPS)
        .count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeForgetting {
    pub episode_id: u64,
    pub acc_max: f64,
    pub acc_end: f64,
    pub gap: f64,
    /// One flag per alpha.
    pub global_event: Vec<bool>,
    /// One count per alpha.
    pub local_events: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Hard,
    Easy,
    All,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Hard => "hard",
            Group::Easy => "easy",
            Group::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Full,
    First,
    Last,
}

impl Window {
    pub fn as_str(self) -> &'static str {
        match self {
            Window::Full => "full",
            Window::First => "first",
            Window::Last => "last",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEvents {
    pub group: Group,
    pub alpha: f64,
    pub window: Window,
    pub local_events: usize,
    pub episodes: usize,
}

impl GroupEvents {
    pub fn mean_events(&self) -> f64 {
        self.local_events as f64 / self.episodes as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: Group,
    pub mean_acc_max: f64,
    pub mean_acc_end: f64,
}

impl GroupSummary {
    pub fn mean_gap(&self) -> f64 {
        self.mean_acc_max - self.mean_acc_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub alphas: Vec<f64>,
    pub window: usize,
    pub epochs: usize,
    pub per_episode: Vec<EpisodeForgetting>,
    pub group_events: Vec<GroupEvents>,
    pub group_summaries: Vec<GroupSummary>,
}

impl ForgettingReport {
    pub fn events(&self, group: Group, alpha: f64, window: Window) -> Option<&GroupEvents> {
        self.group_events
            .iter()
            .find(|g| g.group == group && g.window == window && (g.alpha - alpha).abs() < 1e-12)
    }

    pub fn summary(&self, group: Group) -> Option<&GroupSummary> {
        self.group_summaries.iter().find(|g| g.group == group)
    }
}

/// Per-episode and per-group forgetting statistics.
///
/// `window` epochs at the start and at the end of training form the
/// `first`/`last` windows; a local event belongs to the window holding its epoch.
pub fn forgetting_report(
    traces: &[AccuracyTrace],
    alphas: &[f64],
    hard: &[u64],
    easy: &[u64],
    window: usize,
) -> Result<ForgettingReport> {
    let epochs = traces.first().map_or(0, |t| t.acc.len());
    if epochs == 0 {
        return Err(Error::Contract("no recorded epochs".into()));
    }
    if let Some(t) = traces.iter().find(|t| t.acc.len() != epochs) {
        return Err(Error::Contract(format!(
            "trace {} has {} epochs, expected {epochs}",
            t.episode_id,
            t.acc.len()
        )));
    }
    if window == 0 || window > epochs {
        return Err(Error::Contract(format!("window {window} outside 1..={epochs}")));
    }
    if alphas.is_empty() {
        return Err(Error::Parameter("empty alpha grid".into()));
    }
    let by_id: HashMap<u64, &AccuracyTrace> = traces.iter().map(|t| (t.episode_id, t)).collect();
    let lookup = |ids: &[u64]| -> Result<Vec<&AccuracyTrace>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("unknown episode_id {id}")))
            })
            .collect()
    };
    let groups = [
        (Group::Hard, lookup(hard)?),
        (Group::Easy, lookup(easy)?),
        (Group::All, traces.iter().collect()),
    ];

    let mut per_episode = Vec::with_capacity(traces.len());
    for t in traces {
        let acc_max = t.acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let acc_end = t.acc[epochs - 1];
        per_episode.push(EpisodeForgetting {
            episode_id: t.episode_id,
            acc_max,
            acc_end,
            gap: acc_max - acc_end,
            global_event: alphas.iter().map(|&a| detect_global(&t.acc, a)).collect::<Result<_>>()?,
            local_events: alphas.iter().map(|&a| detect_local(&t.acc, a)).collect::<Result<_>>()?,
        });
    }

    let windows = [
        (Window::Full, 0..epochs),
        (Window::First, 0..window),
        (Window::Last, epochs - window..epochs),
    ];
    let mut group_events = Vec::new();
    let mut group_summaries = Vec::new();
    for (group, members) in &groups {
        for &alpha in alphas {
            for (w, range) in &windows {
                let mut total = 0;
                for t in members {
                    total += count_local_in(&t.acc, alpha, range.clone())?;
                }
                group_events.push(GroupEvents {
                    group: *group,
                    alpha,
                    window: *w,
                    local_events: total,
                    episodes: members.len(),
                });
            }
        }
        let n = members.len().max(1) as f64;
        group_summaries.push(GroupSummary {
            group: *group,
            mean_acc_max: members
                .iter()
                .map(|t| t.acc.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .sum::<f64>()
                / n,
            mean_acc_end: members.iter().map(|t| t.acc[epochs - 1]).sum::<f64>() / n,
        });
    }
    Ok(ForgettingReport {
        alphas: alphas.to_vec(),
        window,
        epochs,
        per_episode,
        group_events,
        group_summaries,
    })
}

pub fn write_traces_csv(path: &Path, traces: &[AccuracyTrace]) -> Result<()> {
    let rows: Vec<Vec<String>> = traces
        .iter()
        .flat_map(|t| {
            t.acc
                .iter()
                .enumerate()
                .map(move |(j, a)| vec![t.episode_id.to_string(), j.to_string(), fmt_f64(*a)])
        })
        .collect();
    write_csv_rows(path, &["episode_id", "epoch", "accuracy"], &rows)
}

/// Reads traces; episodes keep first-appearance order and epochs must be contiguous from 0.
pub fn read_traces_csv(path: &Path) -> Result<Vec<AccuracyTrace>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut order = Vec::new();
    let mut series: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Parameter(format!("{}: malformed row {}", path.display(), i + 2));
        if rec.len() != 3 {
            return Err(bad());
        }
        let id: u64 = rec[0].parse().map_err(|_| bad())?;
        let epoch: usize = rec[1].parse().map_err(|_| bad())?;
        let acc: f64 = rec[2].parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(bad());
        }
        let entry = series.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        entry.push((epoch, acc));
    }
    order
        .into_iter()
        .map(|id| {
            let mut pts = series.remove(&id).expect("present");
            pts.sort_by_key(|p| p.0);
            if pts.iter().enumerate().any(|(j, p)| p.0 != j) {
                return Err(Error::Parameter(format!(
                    "{}: episode {id} has non-contiguous epochs",
                    path.display()
                )));
            }
            Ok(AccuracyTrace { episode_id: id, acc: pts.into_iter().map(|p| p.1).collect() })
        })
        .collect()
}

pub fn write_report_csvs(events_path: &Path, summary_path: &Path, report: &ForgettingReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report
        .group_events
        .iter()
        .map(|g| {
            vec![
                g.group.as_str().to_string(),
                format!("{:.2}", g.alpha),
                g.window.as_str().to_string(),
                g.local_events.to_string(),
            ]
        })
        .collect();
    write_csv_rows(events_path, &["group", "alpha", "window", "local_events"], &rows)?;
    let rows: Vec<Vec<String>> = report
        .group_summaries
        .iter()
        .map(|s| vec![s.group.as_str().to_string(), fmt_f64(s.mean_acc_max), fmt_f64(s.mean_acc_end)])
        .collect();
    write_csv_rows(summary_path, &["group", "mean_acc_max", "mean_acc_end"], &rows)
}
