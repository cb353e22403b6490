//! Weighted majority-label voting over rater-conditioned predictions.
//!
//! Every voter contributes one vote per voxel in the base label space. Foreground
//! votes are multiplied by `w_fg` before the winner is picked; ties go to the
//! lowest label id, so background wins every tie it takes part in. The
//! disagreement map counts, per voxel, how many voters did not pick the
//! label with the most raw votes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schema::{LabelSchema, BACKGROUND};
use crate::volume::{LabelVolume, LogitVolume, ScalarVolume, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VoteConfig {
    foreground_weight: u32,
}

impl VoteConfig {
    pub fn new(foreground_weight: u32) -> Result<Self> {
        if foreground_weight == 0 {
            return Err(Error::InvalidParameter(
                "foreground weight must be >= 1".into(),
            ));
        }
        Ok(Self { foreground_weight })
    }

    /// Plain majority vote (`w_fg = 1`).
    pub fn majority() -> Self {
        Self {
            foreground_weight: 1,
        }
    }

    pub fn foreground_weight(&self) -> u32 {
        self.foreground_weight
    }
}

/// Vote counts of one voxel, indexed by base label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoteTally {
    raw: Vec<u32>,
    weighted: Vec<u64>,
}

impl VoteTally {
    pub fn from_counts(raw: Vec<u32>, config: &VoteConfig) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput(
                "vote tally needs at least the background label",
            ));
        }
        let weighted = raw
            .iter()
            .enumerate()
            .map(|(label, &n)| {
                if label == usize::from(BACKGROUND) {
                    u64::from(n)
                } else {
                    u64::from(n) * u64::from(config.foreground_weight)
                }
            })
            .collect();
        Ok(Self { raw, weighted })
    }

    pub fn from_votes(
        votes: impl IntoIterator<Item = u16>,
        num_labels: usize,
        config: &VoteConfig,
    ) -> Result<Self> {
        let mut raw = vec![0u32; num_labels];
        for vote in votes {
            let slot = raw
                .get_mut(usize::from(vote))
                .ok_or(Error::LabelOutOfRange {
                    label: vote.into(),
                    limit: num_labels as u32,
                    voxel: None,
                })?;
            *slot += 1;
        }
        Self::from_counts(raw, config)
    }

    pub fn raw(&self) -> &[u32] {
        &self.raw
    }

    pub fn weighted(&self) -> &[u64] {
        &self.weighted
    }

    pub fn num_voters(&self) -> u32 {
        self.raw.iter().sum()
    }

    /// Label with the largest weighted count; lowest id on ties.
    pub fn winner(&self) -> u16 {
        argmax_lowest(&self.weighted) as u16
    }

    /// Voters minus the largest raw count.
    pub fn disagreement(&self) -> u32 {
        self.num_voters() - self.raw.iter().copied().max().unwrap_or(0)
    }
}

fn argmax_lowest<T: Ord + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-voxel rater disagreement, integer-valued in `0..=voters-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementMap {
    scores: ScalarVolume,
    num_voters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl DisagreementMap {
    pub fn scores(&self) -> &ScalarVolume {
        &self.scores
    }

    pub fn into_scores(self) -> ScalarVolume {
        self.scores
    }

    pub fn num_voters(&self) -> usize {
        self.num_voters
    }

    /// Maximum along `axis`; the result has extent 1 on that axis.
    pub fn max_projection(&self, axis: Axis) -> ScalarVolume {
        let g = self.scores.geometry();
        let dims = g.dims();
        let a = match axis {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        };
        let mut out_dims = dims;
        out_dims[a] = 1;
        let out_geometry = VolumeGeometry::new(out_dims, g.spacing())
            .expect("projection of a valid grid is valid");
        let mut out = vec![f32::NEG_INFINITY; out_geometry.num_voxels()];
        for (i, &v) in self.scores.data().iter().enumerate() {
            let mut c = g.coords(i);
            c[a] = 0;
            let j = out_geometry.index(c[0], c[1], c[2]);
            out[j] = out[j].max(v);
        }
        ScalarVolume::new(out_geometry, out).expect("length matches")
    }
}

/// Voxel-wise mean of several models' logits, summed in list order.
pub fn ensemble_logits(models: &[LogitVolume]) -> Result<LogitVolume> {
    let first = models
        .first()
        .ok_or(Error::EmptyInput("ensemble needs at least one model"))?;
    for m in &models[1..] {
        first.geometry().ensure_same_grid(m.geometry())?;
        if m.num_classes() != first.num_classes() {
            return Err(Error::ClassMismatch {
                left: first.num_classes(),
                right: m.num_classes(),
            });
        }
    }
    let mut sum = vec![0f64; first.data().len()];
    for m in models {
        for (acc, &x) in sum.iter_mut().zip(m.data()) {
            *acc += f64::from(x);
        }
    }
    let n = models.len() as f64;
    let data = sum.into_iter().map(|s| (s / n) as f32).collect();
    LogitVolume::new(first.geometry().clone(), first.num_classes(), data)
}

/// Fuses base-space predictions by weighted majority-label voting.
///
/// Rater-specific predictions must be collapsed first, see
/// [`LabelSchema::collapse_volume`].
pub fn weighted_majority_vote(
    predictions: &[LabelVolume],
    num_foreground: usize,
    config: &VoteConfig,
) -> Result<(LabelVolume, DisagreementMap)> {
    let first = predictions
        .first()
        .ok_or(Error::EmptyInput("voting needs at least one prediction"))?;
    let geometry = first.geometry();
    let num_labels = num_foreground + 1;
    for p in predictions {
        geometry.ensure_same_grid(p.geometry())?;
        p.check_labels_below(num_labels as u32)?;
    }
    let weight = u64::from(config.foreground_weight);
    let n = geometry.num_voxels();
    let mut fused = Vec::with_capacity(n);
    let mut disagreement = Vec::with_capacity(n);
    let mut raw = vec![0u32; num_labels];
    let voters = predictions.len() as u32;
    for voxel in 0..n {
        raw.iter_mut().for_each(|c| *c = 0);
        for p in predictions {
            raw[usize::from(p.data()[voxel])] += 1;
        }
        let mut best = 0usize;
        let mut best_weighted = u64::from(raw[0]);
        let mut max_raw = raw[0];
        for (label, &count) in raw.iter().enumerate().skip(1) {
            let w = u64::from(count) * weight;
            if w > best_weighted {
                best = label;
                best_weighted = w;
            }
            max_raw = max_raw.max(count);
        }
        fused.push(best as u16);
        disagreement.push((voters - max_raw) as f32);
    }
    let fused = LabelVolume::new(geometry.clone(), fused)?;
    let scores = ScalarVolume::new(geometry.clone(), disagreement)?;
    Ok((
        fused,
        DisagreementMap {
            scores,
            num_voters: predictions.len(),
        },
    ))
}

/// Collapses rater-specific predictions to base ids, then votes.
pub fn fuse_rater_predictions(
    schema: &LabelSchema,
    predictions: &[LabelVolume],
    config: &VoteConfig,
) -> Result<(LabelVolume, DisagreementMap)> {
    let collapsed = predictions
        .iter()
        .map(|p| schema.collapse_volume(p))
        .collect::<Result<Vec<_>>>()?;
    weighted_majority_vote(&collapsed, schema.num_foreground(), config)
}

/// The prediction conditioned on the reference annotation's own rater.
pub fn oracle_select(predictions: &[LabelVolume], rater_index: usize) -> Result<&LabelVolume> {
    predictions.get(rater_index).ok_or(Error::RaterOutOfRange {
        index: rater_index,
        num_raters: predictions.len(),
    })
}

/// One vote multiset (counts per base label) and its fused label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoteOutcome {
    pub counts: Vec<u32>,
    pub fused: u16,
}

impl VoteOutcome {
    pub fn background_votes(&self) -> u32 {
        self.counts[0]
    }

    pub fn is_foreground(&self) -> bool {
        self.fused != BACKGROUND
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackgroundRow {
    pub background_votes: u32,
    pub multisets: usize,
    pub foreground_outcomes: usize,
}

impl BackgroundRow {
    pub fn foreground_reachable(&self) -> bool {
        self.foreground_outcomes > 0
    }

    pub fn foreground_forced(&self) -> bool {
        self.foreground_outcomes == self.multisets
    }
}

/// Exhaustive fused decisions for every vote multiset of a voter panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionTable {
    pub num_voters: usize,
    pub num_foreground: usize,
    pub foreground_weight: u32,
    pub outcomes: Vec<VoteOutcome>,
    pub by_background: Vec<BackgroundRow>,
}

impl DecisionTable {
    pub fn row(&self, background_votes: u32) -> Option<&BackgroundRow> {
        self.by_background
            .iter()
            .find(|r| r.background_votes == background_votes)
    }

    pub fn outcome(&self, counts: &[u32]) -> Option<&VoteOutcome> {
        self.outcomes.iter().find(|o| o.counts == counts)
    }
}

const MAX_ENUMERATED_MULTISETS: usize = 1 << 22;

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Enumerates all multisets of `num_voters` votes over `num_foreground + 1`
/// labels and records how each is fused.
pub fn characterize_foreground_rule(
    num_voters: usize,
    num_foreground: usize,
    config: &VoteConfig,
) -> Result<DecisionTable> {
    if num_voters == 0 || num_foreground == 0 {
        return Err(Error::InvalidParameter(
            "characterization needs at least one voter and one foreground label".into(),
        ));
    }
    let labels = num_foreground + 1;
    match binomial(num_voters + num_foreground, num_foreground) {
        Some(n) if n <= MAX_ENUMERATED_MULTISETS => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{num_voters} voters over {labels} labels is too large to enumerate"
            )))
        }
    }
    let mut outcomes = Vec::new();
    let mut counts = vec![0u32; labels];
    enumerate_compositions(num_voters as u32, 0, &mut counts, &mut |c| {
        let tally = VoteTally::from_counts(c.to_vec(), config).expect("non-empty counts");
        outcomes.push(VoteOutcome {
            counts: c.to_vec(),
            fused: tally.winner(),
        });
    });
    let by_background = (0..=num_voters as u32)
        .map(|b| {
            let rows: Vec<_> = outcomes
                .iter()
                .filter(|o| o.background_votes() == b)
                .collect();
            BackgroundRow {
                background_votes: b,
                multisets: rows.len(),
                foreground_outcomes: rows.iter().filter(|o| o.is_foreground()).count(),
            }
        })
        .collect();
    Ok(DecisionTable {
        num_voters,
        num_foreground,
        foreground_weight: config.foreground_weight,
        outcomes,
        by_background,
    })
}

fn enumerate_compositions(
    remaining: u32,
    slot: usize,
    counts: &mut [u32],
    f: &mut dyn FnMut(&[u32]),
) {
    if slot == counts.len() - 1 {
        counts[slot] = remaining;
        f(counts);
        return;
    }
    for n in (0..=remaining).rev() {
        counts[slot] = n;
        enumerate_compositions(remaining - n, slot + 1, counts, f);
    }
    counts[slot] = 0;
}
