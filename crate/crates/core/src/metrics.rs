//! Evaluation: first-frame ground-truth label assignment for class-agnostic
//! clusters, mean IoU and mean video consistency (mVC_n).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SegmentationMap, IGNORE};

/// Cluster index to dataset class id (or [`IGNORE`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    classes: Vec<u32>,
}

impl LabelAssignment {
    pub fn from_classes(classes: Vec<u32>) -> Self {
        Self { classes }
    }

    pub fn num_clusters(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, cluster: u32) -> u32 {
        self.classes.get(cluster as usize).copied().unwrap_or(IGNORE)
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn apply(&self, map: &SegmentationMap) -> SegmentationMap {
        map.map_labels(|l| self.class_of(l))
    }
}

fn same_dims(a: &SegmentationMap, b: &SegmentationMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "prediction is {:?} but ground truth is {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Map each cluster to the ground-truth class it overlaps most on the first
/// frame (ignore pixels excluded, ties to the smaller class id). Clusters
/// with no valid overlap map to [`IGNORE`].
pub fn assign_gt_labels(
    pred_first: &SegmentationMap,
    gt_first: &SegmentationMap,
    num_clusters: u32,
) -> Result<LabelAssignment> {
    same_dims(pred_first, gt_first)?;
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred_first.labels().iter().zip(gt_first.labels()) {
        if g != IGNORE && p < num_clusters {
            *overlap.entry((p, g)).or_default() += 1;
        }
    }
    let mut classes = vec![IGNORE; num_clusters as usize];
    let mut best = vec![0usize; num_clusters as usize];
    for (&(cluster, class), &count) in &overlap {
        let slot = cluster as usize;
        if count > best[slot] || (count == best[slot] && class < classes[slot]) {
            best[slot] = count;
            classes[slot] = class;
        }
    }
    Ok(LabelAssignment { classes })
}

/// Mean IoU together with the per-class values it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouSummary {
    pub miou: f64,
    /// IoU for classes present in ground truth or prediction.
    pub per_class: BTreeMap<u32, f64>,
}

/// Confusion counts per class, accumulated over frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IouAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    valid: u64,
}

impl IouAccumulator {
    pub fn new(num_classes: u32) -> Self {
        let n = num_classes as usize;
        Self {
            tp: vec![0; n],
            fp: vec![0; n],
            fn_: vec![0; n],
            valid: 0,
        }
    }

    pub fn add(&mut self, pred: &SegmentationMap, gt: &SegmentationMap) -> Result<()> {
        same_dims(pred, gt)?;
        let n = self.tp.len() as u32;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE {
                continue;
            }
            if g >= n {
                return Err(Error::LabelOutOfRange { label: g, num_labels: n });
            }
            if p != IGNORE && p >= n {
                return Err(Error::LabelOutOfRange { label: p, num_labels: n });
            }
            self.valid += 1;
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fn_[g as usize] += 1;
                if p != IGNORE {
                    self.fp[p as usize] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
        self.valid += other.valid;
    }

    pub fn summary(&self) -> Result<IouSummary> {
        if self.valid == 0 {
            return Err(Error::NoValidPixels);
        }
        let per_class: BTreeMap<u32, f64> = (0..self.tp.len())
            .filter_map(|c| {
                let union = self.tp[c] + self.fp[c] + self.fn_[c];
                (union > 0).then(|| (c as u32, self.tp[c] as f64 / union as f64))
            })
            .collect();
        let miou = per_class.values().sum::<f64>() / per_class.len() as f64;
        Ok(IouSummary { miou, per_class })
    }
}

/// Mean IoU over all frames; classes absent from both ground truth and
/// prediction are left out of the mean.
pub fn miou(preds: &[SegmentationMap], gts: &[SegmentationMap], num_classes: u32) -> Result<IouSummary> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = IouAccumulator::new(num_classes);
    for (p, g) in preds.iter().zip(gts) {
        acc.add(p, g)?;
    }
    acc.summary()
}

/// Video consistency over windows of `n` frames: within each window, the
/// fraction of pixels whose ground-truth class is constant that are also
/// predicted as that class in every frame. Windows without any constant
/// ground-truth pixel are skipped; the result is the mean over windows.
pub fn video_consistency(preds: &[SegmentationMap], gts: &[SegmentationMap], n: usize) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("window length must be positive".into()));
    }
    if n > gts.len() {
        return Err(Error::WindowTooLong { n, len: gts.len() });
    }
    for (p, g) in preds.iter().zip(gts) {
        same_dims(p, g)?;
        same_dims(g, &gts[0])?;
    }
    let pixels = gts[0].labels().len();
    let mut total = 0.0;
    let mut windows = 0usize;
    for start in 0..=gts.len() - n {
        let gw = &gts[start..start + n];
        let pw = &preds[start..start + n];
        let mut consistent = 0usize;
        let mut hit = 0usize;
        for i in 0..pixels {
            let c = gw[0].labels()[i];
            if c == IGNORE || gw.iter().any(|g| g.labels()[i] != c) {
                continue;
            }
            consistent += 1;
            if pw.iter().all(|p| p.labels()[i] == c) {
                hit += 1;
            }
        }
        if consistent > 0 {
            total += hit as f64 / consistent as f64;
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(total / windows as f64)
}

/// Mean of [`video_consistency`] over videos.
pub fn mvc(videos: &[(&[SegmentationMap], &[SegmentationMap])], n: usize) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::EmptyList);
    }
    let sum = videos
        .iter()
        .map(|(p, g)| video_consistency(p, g, n))
        .sum::<Result<f64>>()?;
    Ok(sum / videos.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub frames: usize,
    pub miou: f64,
    pub mvc8: Option<f64>,
    pub mvc16: Option<f64>,
}

/// JSON metrics report. Window metrics are `null` when no video is long
/// enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub mvc8: Option<f64>,
    pub mvc16: Option<f64>,
    pub per_class_iou: BTreeMap<u32, f64>,
    pub per_video: Vec<VideoMetrics>,
}

/// Class-space predictions and ground truth of one video.
#[derive(Debug, Clone)]
pub struct VideoEval {
    pub video_id: String,
    pub preds: Vec<SegmentationMap>,
    pub gts: Vec<SegmentationMap>,
}

fn optional_window(preds: &[SegmentationMap], gts: &[SegmentationMap], n: usize) -> Result<Option<f64>> {
    match video_consistency(preds, gts, n) {
        Ok(v) => Ok(Some(v)),
        Err(Error::WindowTooLong { .. }) | Err(Error::NoValidPixels) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Highest ground-truth class id plus one.
pub fn infer_num_classes<'a>(gts: impl IntoIterator<Item = &'a SegmentationMap>) -> u32 {
    gts.into_iter()
        .flat_map(|g| g.labels().iter().copied())
        .filter(|&l| l != IGNORE)
        .max()
        .map_or(0, |m| m + 1)
}

pub fn evaluate(videos: &[VideoEval], num_classes: u32) -> Result<MetricsReport> {
    if videos.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut total = IouAccumulator::new(num_classes);
    let mut per_video = Vec::with_capacity(videos.len());
    for v in videos {
        if v.preds.len() != v.gts.len() {
            return Err(Error::shape(format!(
                "video {}: {} predictions for {} ground-truth frames",
                v.video_id,
                v.preds.len(),
                v.gts.len()
            )));
        }
        let mut acc = IouAccumulator::new(num_classes);
        for (p, g) in v.preds.iter().zip(&v.gts) {
            acc.add(p, g)?;
        }
        total.merge(&acc);
        per_video.push(VideoMetrics {
            video_id: v.video_id.clone(),
            frames: v.preds.len(),
            miou: acc.summary()?.miou,
            mvc8: optional_window(&v.preds, &v.gts, 8)?,
            mvc16: optional_window(&v.preds, &v.gts, 16)?,
        });
    }
    let summary = total.summary()?;
    Ok(MetricsReport {
        miou: summary.miou,
        mvc8: mean(per_video.iter().filter_map(|v| v.mvc8)),
        mvc16: mean(per_video.iter().filter_map(|v| v.mvc16)),
        per_class_iou: summary.per_class,
        per_video,
    })
}
