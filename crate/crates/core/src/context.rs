//! The scene context model: an exact k-nearest-neighbor classifier over
//! aggregated features. It is fit on the first frame's clusters, predicts
//! coarse masks for later frames and is refit batch by batch.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoarseMask, FeatureGrid};

/// Average the selected blocks' feature grids cell by cell.
pub fn aggregate_features(grids: &BTreeMap<u32, FeatureGrid>, blocks: &[u32]) -> Result<FeatureGrid> {
    let (&first, rest) = blocks.split_first().ok_or(Error::EmptyList)?;
    let base = grids.get(&first).ok_or(Error::MissingBlock(first))?;
    let shape = (base.height(), base.width(), base.channels());
    let mut sum: Vec<f64> = base.values().iter().map(|&v| v as f64).collect();
    for &b in rest {
        let grid = grids.get(&b).ok_or(Error::MissingBlock(b))?;
        let other = (grid.height(), grid.width(), grid.channels());
        if other != shape {
            return Err(Error::shape(format!(
                "block {b} features are {other:?}, block {first} features are {shape:?}"
            )));
        }
        for (s, &v) in sum.iter_mut().zip(grid.values()) {
            *s += v as f64;
        }
    }
    let n = blocks.len() as f64;
    FeatureGrid::new(
        shape.0,
        shape.1,
        shape.2,
        sum.into_iter().map(|s| (s / n) as f32).collect(),
    )
}

/// How [`ContextModel::update`] treats the existing training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Keep only the most recent batch.
    #[default]
    Replace,
    /// Keep the first frame plus the last `n` batches.
    AppendWindow(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Samples {
    vectors: Vec<f32>,
    labels: Vec<u32>,
}

impl Samples {
    fn from_frames(masks: &[CoarseMask], features: &[FeatureGrid], num_labels: u32) -> Result<Self> {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (mask, grid) in masks.iter().zip(features) {
            if mask.dims() != grid.dims() {
                return Err(Error::shape(format!(
                    "mask is {:?} but features are {:?}",
                    mask.dims(),
                    grid.dims()
                )));
            }
            if let Some(&label) = mask.labels().iter().find(|&&l| l >= num_labels) {
                return Err(Error::LabelOutOfRange { label, num_labels });
            }
            vectors.extend_from_slice(grid.values());
            labels.extend_from_slice(mask.labels());
        }
        Ok(Self { vectors, labels })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Labeled feature store with exact nearest-neighbor prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    dim: usize,
    k_nn: usize,
    num_labels: u32,
    mode: UpdateMode,
    anchor: Samples,
    batches: VecDeque<Samples>,
    store: Samples,
}

impl ContextModel {
    /// Fit on the first frame's features and cluster mask. `k_nn` is clamped
    /// to the store size.
    pub fn fit_initial(
        features: &FeatureGrid,
        mask: &CoarseMask,
        k_nn: usize,
        num_labels: u32,
        mode: UpdateMode,
    ) -> Result<Self> {
        if k_nn == 0 {
            return Err(Error::InvalidConfig("k_nn must be positive".into()));
        }
        if let UpdateMode::AppendWindow(0) = mode {
            return Err(Error::InvalidConfig("append window must hold at least one batch".into()));
        }
        let anchor = Samples::from_frames(std::slice::from_ref(mask), std::slice::from_ref(features), num_labels)?;
        Ok(Self {
            dim: features.channels(),
            k_nn,
            num_labels,
            mode,
            store: anchor.clone(),
            anchor,
            batches: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.len() == 0
    }

    /// Neighbor count actually used.
    pub fn k_nn(&self) -> usize {
        self.k_nn.min(self.store.len())
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn update_mode(&self) -> UpdateMode {
        self.mode
    }

    pub fn store_labels(&self) -> &[u32] {
        &self.store.labels
    }

    pub fn store_vector(&self, i: usize) -> &[f32] {
        &self.store.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Refit on a batch of refined masks and their features.
    pub fn update(&self, masks: &[CoarseMask], features: &[FeatureGrid]) -> Result<Self> {
        if masks.is_empty() || features.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if masks.len() != features.len() {
            return Err(Error::shape(format!(
                "{} masks but {} feature grids",
                masks.len(),
                features.len()
            )));
        }
        if let Some(g) = features.iter().find(|g| g.channels() != self.dim) {
            return Err(Error::ChannelMismatch {
                expected: self.dim,
                found: g.channels(),
            });
        }
        let batch = Samples::from_frames(masks, features, self.num_labels)?;
        let mut next = self.clone();
        match self.mode {
            UpdateMode::Replace => {
                next.batches.clear();
                next.store = batch;
            }
            UpdateMode::AppendWindow(window) => {
                next.batches.push_back(batch);
                while next.batches.len() > window {
                    next.batches.pop_front();
                }
                let mut store = next.anchor.clone();
                for b in &next.batches {
                    store.vectors.extend_from_slice(&b.vectors);
                    store.labels.extend_from_slice(&b.labels);
                }
                next.store = store;
            }
        }
        Ok(next)
    }

    /// Store indices of the `k` nearest neighbors of `query`, nearest first;
    /// equal distances are ordered by store index.
    pub fn neighbors(&self, query: &[f32]) -> Vec<(usize, f64)> {
        let k = self.k_nn();
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (i, v) in self.store.vectors.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(query, v);
            if best.len() == k && d >= best[k - 1].1 {
                continue;
            }
            // insert after every entry with distance <= d to keep index order
            let pos = best.partition_point(|&(_, bd)| bd <= d);
            best.insert(pos, (i, d));
            best.truncate(k);
        }
        best
    }

    /// Majority label among the nearest neighbors. Ties go to the tied label
    /// that has the nearest neighbor.
    pub fn classify(&self, query: &[f32]) -> u32 {
        let neighbors = self.neighbors(query);
        let mut counts = vec![0usize; self.num_labels as usize];
        for &(i, _) in &neighbors {
            counts[self.store.labels[i] as usize] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        neighbors
            .iter()
            .map(|&(i, _)| self.store.labels[i])
            .find(|&l| counts[l as usize] == top)
            .expect("store is never empty")
    }

    pub fn predict(&self, features: &FeatureGrid) -> Result<CoarseMask> {
        if features.channels() != self.dim {
            return Err(Error::ChannelMismatch {
                expected: self.dim,
                found: features.channels(),
            });
        }
        let labels: Vec<u32> = features
            .values()
            .par_chunks_exact(self.dim)
            .map(|q| self.classify(q))
            .collect();
        CoarseMask::new(features.height(), features.width(), self.num_labels, labels)
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize, c: usize, values: Vec<f32>) -> FeatureGrid {
        FeatureGrid::new(h, w, c, values).unwrap()
    }

    #[test]
    fn mean_of_identical_blocks_is_identity() {
        let a = grid(2, 1, 2, vec![0.1, 0.2, 0.3, 0.7]);
        let grids: BTreeMap<_, _> = [(6, a.clone()), (7, a.clone()), (8, a.clone())].into();
        let out = aggregate_features(&grids, &[6, 7, 8]).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn mean_of_two_blocks() {
        let grids: BTreeMap<_, _> = [
            (6, grid(1, 1, 2, vec![1.0, 2.0])),
            (7, grid(1, 1, 2, vec![3.0, 4.0])),
        ]
        .into();
        assert_eq!(aggregate_features(&grids, &[6, 7]).unwrap().values(), &[2.0, 3.0]);
    }

    #[test]
    fn mismatched_channels_and_missing_blocks() {
        let grids: BTreeMap<_, _> = [
            (6, grid(1, 1, 640, vec![0.0; 640])),
            (7, grid(1, 1, 320, vec![0.0; 320])),
        ]
        .into();
        assert!(matches!(aggregate_features(&grids, &[6, 7]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(aggregate_features(&grids, &[6, 8]), Err(Error::MissingBlock(8))));
    }

    #[test]
    fn fit_stores_every_cell() {
        let f = grid(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let m = CoarseMask::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 10, 2, UpdateMode::Replace).unwrap();
        assert_eq!(model.len(), 4);
        assert_eq!(model.store_labels().iter().filter(|&&l| l == 0).count(), 2);
        assert_eq!(model.k_nn(), 4);
    }

    #[test]
    fn out_of_range_training_label() {
        let f = grid(1, 2, 1, vec![0.0, 1.0]);
        let m = CoarseMask::new(1, 2, 8, vec![0, 7]).unwrap();
        assert!(matches!(
            ContextModel::fit_initial(&f, &m, 1, 4, UpdateMode::Replace),
            Err(Error::LabelOutOfRange { label: 7, num_labels: 4 })
        ));
    }

    #[test]
    fn exact_match_with_single_neighbor() {
        let f = grid(1, 4, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let m = CoarseMask::new(1, 4, 4, vec![0, 1, 2, 3]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 1, 4, UpdateMode::Replace).unwrap();
        assert_eq!(model.classify(&[3.0]), 3);
    }

    #[test]
    fn majority_of_three() {
        // neighbors of 0.0: 0.1 (1), 0.2 (1), 0.3 (2)
        let f = grid(1, 4, 1, vec![0.3, 0.1, 5.0, 0.2]);
        let m = CoarseMask::new(1, 4, 3, vec![2, 1, 0, 1]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 3, 3, UpdateMode::Replace).unwrap();
        assert_eq!(model.classify(&[0.0]), 1);
    }

    #[test]
    fn tie_goes_to_nearest_neighbor_label() {
        let f = grid(1, 4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let m = CoarseMask::new(1, 4, 3, vec![2, 1, 1, 2]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 4, 3, UpdateMode::Replace).unwrap();
        assert_eq!(model.classify(&[0.0]), 2);
        assert_eq!(model.classify(&[2.4]), 1);
    }

    #[test]
    fn predict_on_training_frame_reproduces_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = grid(6, 7, 5, (0..6 * 7 * 5).map(|_| rng.random()).collect());
        let m = CoarseMask::new(6, 7, 4, (0..42).map(|_| rng.random_range(0..4)).collect()).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 1, 4, UpdateMode::Replace).unwrap();
        assert_eq!(model.predict(&f).unwrap(), m);
    }

    #[test]
    fn update_requires_a_batch() {
        let f = grid(1, 1, 1, vec![0.0]);
        let m = CoarseMask::new(1, 1, 1, vec![0]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 1, 1, UpdateMode::Replace).unwrap();
        assert!(matches!(model.update(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn replace_mode_uses_latest_batch() {
        let f = grid(1, 2, 1, vec![0.0, 1.0]);
        let m = CoarseMask::new(1, 2, 6, vec![0, 1]).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 1, 6, UpdateMode::Replace).unwrap();
        let nf = grid(1, 2, 1, vec![0.0, 9.0]);
        let nm = CoarseMask::new(1, 2, 6, vec![5, 4]).unwrap();
        let next = model.update(&[nm], &[nf]).unwrap();
        assert_eq!(next.len(), 2);
        assert_eq!(next.classify(&[0.0]), 5);
        assert_eq!(next.num_labels(), 6);
    }

    #[test]
    fn append_window_capacity() {
        let (h, w, b) = (2, 3, 2);
        let f = grid(h, w, 1, vec![0.0; h * w]);
        let m = CoarseMask::new(h, w, 2, vec![0; h * w]).unwrap();
        let mut model = ContextModel::fit_initial(&f, &m, 5, 2, UpdateMode::AppendWindow(2)).unwrap();
        for _ in 0..3 {
            let masks = vec![m.clone(); b];
            let feats = vec![f.clone(); b];
            model = model.update(&masks, &feats).unwrap();
        }
        assert_eq!(model.len(), h * w + 2 * b * h * w);
    }

    #[test]
    fn predicted_labels_come_from_the_store() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = grid(4, 4, 3, (0..48).map(|_| rng.random()).collect());
        let m = CoarseMask::new(4, 4, 10, (0..16).map(|i| [1, 4, 7][i % 3]).collect()).unwrap();
        let model = ContextModel::fit_initial(&f, &m, 3, 10, UpdateMode::Replace).unwrap();
        let q = grid(5, 5, 3, (0..75).map(|_| rng.random_range(-2.0..2.0)).collect());
        let pred = model.predict(&q).unwrap();
        assert!(pred.labels().iter().all(|l| [1, 4, 7].contains(l)));
        assert_eq!(pred, model.predict(&q).unwrap());
    }
}
