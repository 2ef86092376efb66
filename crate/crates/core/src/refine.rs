//! Correspondence-based refinement: labels are propagated from the best
//! cosine-similarity match in the next frame when that match lies within a
//! spatial radius, and the propagated masks are then combined by per-cell
//! temporal majority voting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoarseMask, FeatureGrid};

/// How the voted map is applied to the frames of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CbrMode {
    /// Every frame of the batch receives the voted map.
    #[default]
    BatchVoted,
    /// Each frame keeps its propagated mask except where the voted label holds
    /// at least half of the votes.
    PerFrame,
}

fn norms(grid: &FeatureGrid) -> Result<Vec<f64>> {
    grid.cells()
        .enumerate()
        .map(|(i, v)| {
            let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(Error::ZeroVector(i))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// Propagate `next_mask` labels back onto the current frame. For each cell `p`
/// the most similar cell `q` of `next` (cosine similarity, ties to the
/// smallest row-major index) supplies the label when `|p - q|^2 <= threshold`
/// in grid units; otherwise `mask[p]` is kept.
pub fn correspond(
    current: &FeatureGrid,
    next: &FeatureGrid,
    mask: &CoarseMask,
    next_mask: &CoarseMask,
    threshold: f32,
) -> Result<CoarseMask> {
    let dims = current.dims();
    if next.dims() != dims || mask.dims() != dims || next_mask.dims() != dims {
        return Err(Error::shape(format!(
            "correspondence inputs differ: features {:?}/{:?}, masks {:?}/{:?}",
            dims,
            next.dims(),
            mask.dims(),
            next_mask.dims()
        )));
    }
    if current.channels() != next.channels() {
        return Err(Error::ChannelMismatch {
            expected: current.channels(),
            found: next.channels(),
        });
    }
    if !(threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} must be >= 0")));
    }
    let num_labels = mask.num_labels().max(next_mask.num_labels());
    let current_norms = norms(current)?;
    let next_norms = norms(next)?;
    let width = current.width();
    let threshold = threshold as f64;

    let labels: Vec<u32> = (0..current.len())
        .into_par_iter()
        .map(|p| {
            let a = current.cell(p);
            let mut best_q = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (q, b) in next.cells().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
                let sim = dot / (current_norms[p] * next_norms[q]);
                if sim > best_sim {
                    best_sim = sim;
                    best_q = q;
                }
            }
            let dy = (p / width) as f64 - (best_q / width) as f64;
            let dx = (p % width) as f64 - (best_q % width) as f64;
            if dy * dy + dx * dx <= threshold {
                next_mask.labels()[best_q]
            } else {
                mask.labels()[p]
            }
        })
        .collect();
    CoarseMask::new(dims.0, dims.1, num_labels, labels)
}

fn check_same_shape(masks: &[CoarseMask]) -> Result<(usize, usize, u32)> {
    let first = masks.first().ok_or(Error::EmptyList)?;
    let mut num_labels = first.num_labels();
    for m in &masks[1..] {
        if m.dims() != first.dims() {
            return Err(Error::shape(format!(
                "masks of shape {:?} and {:?} cannot be voted",
                first.dims(),
                m.dims()
            )));
        }
        num_labels = num_labels.max(m.num_labels());
    }
    Ok((first.height(), first.width(), num_labels))
}

/// Per-cell vote counts for every label.
fn vote_counts(masks: &[CoarseMask], num_labels: u32, cell: usize, counts: &mut [usize]) {
    counts.iter_mut().for_each(|c| *c = 0);
    for m in masks {
        counts[m.labels()[cell] as usize] += 1;
    }
    debug_assert_eq!(counts.len(), num_labels as usize);
}

/// Winning label (lowest index on ties) and its count.
fn winner(counts: &[usize]) -> (u32, usize) {
    let mut best = (0u32, 0usize);
    for (l, &c) in counts.iter().enumerate() {
        if c > best.1 {
            best = (l as u32, c);
        }
    }
    best
}

/// Per-cell majority label over the masks; ties go to the lowest label.
pub fn temporal_vote(masks: &[CoarseMask]) -> Result<CoarseMask> {
    let (h, w, num_labels) = check_same_shape(masks)?;
    let mut counts = vec![0usize; num_labels as usize];
    let labels = (0..h * w)
        .map(|cell| {
            vote_counts(masks, num_labels, cell, &mut counts);
            winner(&counts).0
        })
        .collect();
    CoarseMask::new(h, w, num_labels, labels)
}

/// Refine the coarse masks of one batch. `features` are the correspondence
/// block's features for the same frames.
pub fn refine_batch(
    features: &[FeatureGrid],
    masks: &[CoarseMask],
    threshold: f32,
    mode: CbrMode,
) -> Result<Vec<CoarseMask>> {
    if masks.is_empty() {
        return Err(Error::EmptyList);
    }
    if features.len() != masks.len() {
        return Err(Error::shape(format!(
            "{} feature grids for {} masks",
            features.len(),
            masks.len()
        )));
    }
    let b = masks.len();
    let mut propagated = Vec::with_capacity(b);
    for j in 0..b - 1 {
        propagated.push(correspond(
            &features[j],
            &features[j + 1],
            &masks[j],
            &masks[j + 1],
            threshold,
        )?);
    }
    propagated.push(masks[b - 1].clone());

    match mode {
        CbrMode::BatchVoted => {
            let voted = temporal_vote(&propagated)?;
            Ok(vec![voted; b])
        }
        CbrMode::PerFrame => {
            let (h, w, num_labels) = check_same_shape(&propagated)?;
            let quorum = b.div_ceil(2);
            let mut counts = vec![0usize; num_labels as usize];
            let mut outputs: Vec<Vec<u32>> = propagated.iter().map(|m| m.labels().to_vec()).collect();
            for cell in 0..h * w {
                vote_counts(&propagated, num_labels, cell, &mut counts);
                let (label, count) = winner(&counts);
                if count >= quorum {
                    outputs.iter_mut().for_each(|o| o[cell] = label);
                }
            }
            outputs
                .into_iter()
                .map(|labels| CoarseMask::new(h, w, num_labels, labels))
                .collect()
        }
    }
}
