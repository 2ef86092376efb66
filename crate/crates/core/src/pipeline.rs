//! End-to-end run over one video: first-frame clustering, batched context
//! propagation with refinement, masked modulation to full resolution, and
//! optional evaluation against ground truth.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_fit_grid, KMeansParams};
use crate::context::{aggregate_features, ContextModel, UpdateMode};
use crate::error::{Error, Result};
use crate::external::ExternalModulator;
use crate::grid::{upsample_fullres, CoarseMask, FeatureGrid, SegmentationMap};
use crate::imageio::{read_label_map, write_indexed_png, write_rgb_png};
use crate::manifest::{load_manifest, VideoManifest};
use crate::metrics::{assign_gt_labels, evaluate, infer_num_classes, LabelAssignment, MetricsReport, VideoEval};
use crate::modulate::{
    difference_map, filter_difference, label_from_differences, ClusterRequest, FrameContext, Gain,
    LatentModulator, LatentState, ModulationParams, Modulator, Schedule, ToyBackbone,
};
use crate::refine::{refine_batch, CbrMode};
use crate::render::{palette_color, render_overlay};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneChoice {
    Toy,
    /// Directory served by an external extractor process.
    External(PathBuf),
}

impl std::str::FromStr for BackboneChoice {
    type Err = Error;

    /// `toy` or `external:DIR`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "toy" => Ok(BackboneChoice::Toy),
            Some(("external", dir)) if !dir.is_empty() => Ok(BackboneChoice::External(dir.into())),
            _ => Err(Error::InvalidConfig(format!("unknown backbone {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub batch_size: usize,
    pub num_clusters: u32,
    pub blocks_aggregate: Vec<u32>,
    pub block_correspond: u32,
    pub block_modulate: u32,
    pub lambda: f32,
    pub t_m: usize,
    pub t_f: usize,
    pub t_inv: usize,
    /// Squared grid distance beyond which a correspondence is rejected.
    pub threshold: f32,
    pub filter_strength: f32,
    pub k_nn: usize,
    pub cbr_mode: CbrMode,
    pub update_mode: UpdateMode,
    pub seed: u64,
    pub backbone: BackboneChoice,
    /// Skip modulation and upsample the refined coarse masks instead.
    pub coarse_only: bool,
    pub cbr_enabled: bool,
    /// Probability of corrupting each predicted coarse label before
    /// refinement. Only useful for robustness experiments.
    pub label_noise: f64,
    /// Thread count for parallel work; 0 uses every core.
    pub workers: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub toy_contraction: f32,
    pub toy_gain: f32,
    pub external_timeout_secs: Option<f64>,
    pub overlay_alpha: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            batch_size: 14,
            num_clusters: 20,
            blocks_aggregate: vec![6, 7, 8],
            block_correspond: 7,
            block_modulate: 7,
            lambda: 50.0,
            t_m: 20,
            t_f: 25,
            t_inv: 25,
            threshold: 1.0,
            filter_strength: 0.7,
            k_nn: 5,
            cbr_mode: CbrMode::BatchVoted,
            update_mode: UpdateMode::Replace,
            seed: 0,
            backbone: BackboneChoice::Toy,
            coarse_only: false,
            cbr_enabled: true,
            label_noise: 0.0,
            workers: 0,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-4,
            toy_contraction: 0.5,
            toy_gain: 1.0,
            external_timeout_secs: None,
            overlay_alpha: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.t_m, self.t_f, self.t_inv)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.num_clusters == 0 || self.num_clusters > 255 {
            return bad("num_clusters must lie in 1..=255");
        }
        if self.blocks_aggregate.is_empty() {
            return bad("blocks_aggregate is empty");
        }
        if self.k_nn == 0 {
            return bad("k_nn must be positive");
        }
        if !(self.threshold >= 0.0) {
            return bad("threshold must be nonnegative");
        }
        if !self.lambda.is_finite() {
            return bad("lambda must be finite");
        }
        if !(0.0..=1.0).contains(&self.filter_strength) {
            return Err(Error::SOutOfRange(self.filter_strength));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.overlay_alpha) {
            return bad("overlay_alpha must lie in [0, 1]");
        }
        if let UpdateMode::AppendWindow(0) = self.update_mode {
            return bad("append window must hold at least one batch");
        }
        self.schedule()?;
        Ok(())
    }

    fn modulator(&self, video_id: &str) -> Result<Box<dyn Modulator>> {
        Ok(match &self.backbone {
            BackboneChoice::Toy => Box::new(LatentModulator::new(ToyBackbone::new(
                self.toy_contraction,
                Gain::Constant(self.toy_gain),
            )?)),
            BackboneChoice::External(dir) => {
                let mut m = ExternalModulator::new(dir, video_id);
                m.timeout = self.external_timeout_secs.map(Duration::from_secs_f64);
                Box::new(m)
            }
        })
    }
}

/// Everything a run produces for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub video_id: String,
    /// Refined coarse cluster masks, one per frame.
    pub coarse: Vec<CoarseMask>,
    /// Full-resolution cluster maps, one per frame.
    pub maps: Vec<SegmentationMap>,
    pub assignment: Option<LabelAssignment>,
    /// Cluster maps relabeled into ground-truth classes.
    pub class_maps: Option<Vec<SegmentationMap>>,
    pub report: Option<MetricsReport>,
}

fn check_blocks(manifest: &VideoManifest, config: &PipelineConfig) -> Result<()> {
    let needed = config.blocks_aggregate.iter().chain([&config.block_correspond]);
    for &b in needed {
        if !manifest.block_ids.contains(&b) || manifest.frames.iter().any(|f| !f.features.contains_key(&b)) {
            return Err(Error::MissingBlock(b));
        }
    }
    Ok(())
}

fn corrupt_labels(mask: &CoarseMask, p: f64, seed: u64, frame: usize) -> Result<CoarseMask> {
    let l = mask.num_labels();
    if p == 0.0 || l < 2 {
        return Ok(mask.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let labels = mask
        .labels()
        .iter()
        .map(|&x| {
            if rng.random_bool(p) {
                let y = rng.random_range(0..l - 1);
                if y >= x { y + 1 } else { y }
            } else {
                x
            }
        })
        .collect();
    CoarseMask::new(mask.height(), mask.width(), l, labels)
}

/// Full-resolution cluster map of one frame from its refined coarse mask.
pub fn modulate_frame(
    modulator: &dyn Modulator,
    frame: &FrameContext,
    mask: &CoarseMask,
    params: &ModulationParams,
    filter_strength: f32,
) -> Result<SegmentationMap> {
    let (big_h, big_w) = frame.image_size;
    let requests: Vec<ClusterRequest> = mask
        .present_labels()
        .into_iter()
        .map(|cluster| ClusterRequest {
            cluster,
            mask: mask.binary(cluster),
        })
        .collect();
    let pairs = modulator.rollout_pairs(frame, &requests, params)?;
    let maps = requests
        .par_iter()
        .zip(pairs.par_iter())
        .map(|(r, (plus, minus))| {
            let d = difference_map(plus, minus, r.cluster)?;
            filter_difference(&d, &upsample_fullres(&r.mask, big_h, big_w)?, filter_strength)
        })
        .collect::<Result<Vec<_>>>()?;
    label_from_differences(&maps)
}

/// Run every stage over `manifest` with the configured backbone.
pub fn run_video(manifest: &VideoManifest, config: &PipelineConfig) -> Result<VideoResult> {
    config.validate()?;
    let modulator = config.modulator(&manifest.video_id)?;
    run_video_with(manifest, config, modulator.as_ref())
}

/// [`run_video`] with an explicit modulator; `config.backbone` is ignored.
pub fn run_video_with(
    manifest: &VideoManifest,
    config: &PipelineConfig,
    modulator: &dyn Modulator,
) -> Result<VideoResult> {
    config.validate()?;
    check_blocks(manifest, config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| run_stages(manifest, config, modulator))
}

fn run_stages(manifest: &VideoManifest, config: &PipelineConfig, modulator: &dyn Modulator) -> Result<VideoResult> {
    let n = manifest.frame_count;
    let l = config.num_clusters;
    let params = ModulationParams {
        strength: config.lambda,
        block: config.block_modulate,
        schedule: config.schedule()?,
    };
    let mut blocks = config.blocks_aggregate.clone();
    if !blocks.contains(&config.block_correspond) {
        blocks.push(config.block_correspond);
    }

    let mut model: Option<ContextModel> = None;
    let mut coarse = Vec::with_capacity(n);
    let mut maps = Vec::with_capacity(n);
    for start in (0..n).step_by(config.batch_size) {
        let end = (start + config.batch_size).min(n);
        let (aggregated, correspond): (Vec<FeatureGrid>, Vec<FeatureGrid>) = (start..end)
            .into_par_iter()
            .map(|j| {
                let mut grids = manifest.block_features(j, &blocks)?;
                let agg = aggregate_features(&grids, &config.blocks_aggregate)?;
                let corr = grids.remove(&config.block_correspond).expect("block loaded");
                Ok((agg, corr))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();

        let omega = match model.take() {
            Some(m) => m,
            None => {
                let mut params = KMeansParams::new(l as usize, config.seed);
                params.max_iter = config.kmeans_max_iter;
                params.tol = config.kmeans_tol;
                let (_, first) = kmeans_fit_grid(&aggregated[0], &params)?;
                ContextModel::fit_initial(&aggregated[0], &first, config.k_nn, l, config.update_mode)?
            }
        };
        let masks = aggregated
            .iter()
            .enumerate()
            .map(|(i, f)| corrupt_labels(&omega.predict(f)?, config.label_noise, config.seed, start + i))
            .collect::<Result<Vec<_>>>()?;
        let refined = if config.cbr_enabled {
            refine_batch(&correspond, &masks, config.threshold, config.cbr_mode)?
        } else {
            masks
        };
        if end < n {
            model = Some(omega.update(&refined, &aggregated)?);
        }

        let batch_maps = (start..end)
            .into_par_iter()
            .zip(refined.par_iter())
            .map(|(j, mask)| {
                let (big_h, big_w) = manifest.image_size;
                if config.coarse_only {
                    return upsample_fullres(&mask.to_segmentation(), big_h, big_w);
                }
                let (values, [h, w, c]) = manifest.latent(j)?;
                let frame = FrameContext {
                    index: j,
                    latent: LatentState::new(h, w, c, values, 0)?,
                    image_size: manifest.image_size,
                };
                modulate_frame(modulator, &frame, mask, &params, config.filter_strength)
            })
            .collect::<Result<Vec<_>>>()?;
        coarse.extend(refined);
        maps.extend(batch_maps);
    }

    let mut result = VideoResult {
        video_id: manifest.video_id.clone(),
        coarse,
        maps,
        assignment: None,
        class_maps: None,
        report: None,
    };
    if manifest.has_gt() {
        let gts = (0..n)
            .map(|j| manifest.gt(j).map(|g| g.expect("ground truth present")))
            .collect::<Result<Vec<_>>>()?;
        let num_classes = manifest.num_gt_classes.unwrap_or_else(|| infer_num_classes(&gts));
        let (assignment, report) = assign_and_evaluate(&result.video_id, &result.maps, gts, l, num_classes)?;
        result.class_maps = Some(result.maps.iter().map(|m| assignment.apply(m)).collect());
        result.assignment = Some(assignment);
        result.report = Some(report);
    }
    Ok(result)
}

fn assign_and_evaluate(
    video_id: &str,
    maps: &[SegmentationMap],
    gts: Vec<SegmentationMap>,
    num_clusters: u32,
    num_classes: u32,
) -> Result<(LabelAssignment, MetricsReport)> {
    let assignment = assign_gt_labels(&maps[0], &gts[0], num_clusters)?;
    let video = VideoEval {
        video_id: video_id.to_string(),
        preds: maps.iter().map(|m| assignment.apply(m)).collect(),
        gts,
    };
    let report = evaluate(std::slice::from_ref(&video), num_classes)?;
    Ok((assignment, report))
}

pub fn frame_file_name(j: usize) -> String {
    format!("frame_{j:06}.png")
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Write cluster maps, overlays, class maps and metrics into `out`. Files
/// are staged in a hidden subdirectory and moved into place only once every
/// one of them has been written.
pub fn write_outputs(result: &VideoResult, manifest: &VideoManifest, out: &Path, overlay_alpha: f32) -> Result<()> {
    let stage = out.join(".partial");
    if stage.exists() {
        io(&stage, std::fs::remove_dir_all(&stage))?;
    }
    for sub in ["overlays", "classes"] {
        let d = stage.join(sub);
        io(&d, std::fs::create_dir_all(&d))?;
    }
    for (j, map) in result.maps.iter().enumerate() {
        let name = frame_file_name(j);
        write_indexed_png(stage.join(&name), map, palette_color)?;
        let overlay = render_overlay(&manifest.image(j)?, map, overlay_alpha, palette_color)?;
        write_rgb_png(stage.join("overlays").join(&name), &overlay)?;
        if let Some(classes) = &result.class_maps {
            write_indexed_png(stage.join("classes").join(&name), &classes[j], palette_color)?;
        }
    }
    if let (Some(report), Some(assignment)) = (&result.report, &result.assignment) {
        let p = stage.join("metrics.json");
        io(&p, std::fs::write(&p, serde_json::to_string_pretty(report).expect("report serializes")))?;
        let p = stage.join("assignment.json");
        io(&p, std::fs::write(&p, serde_json::to_string_pretty(assignment).expect("assignment serializes")))?;
    }
    move_contents(&stage, out)?;
    io(&stage, std::fs::remove_dir_all(&stage))
}

fn move_contents(from: &Path, to: &Path) -> Result<()> {
    for entry in io(from, std::fs::read_dir(from))? {
        let entry = io(from, entry)?;
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            io(&target, std::fs::create_dir_all(&target))?;
            move_contents(&entry.path(), &target)?;
        } else {
            io(&target, std::fs::rename(entry.path(), &target))?;
        }
    }
    Ok(())
}

/// Load a manifest, run it and, when `out` is given, write the outputs.
pub fn run_manifest(manifest_path: impl AsRef<Path>, config: &PipelineConfig, out: Option<&Path>) -> Result<VideoResult> {
    let manifest = load_manifest(manifest_path)?;
    let result = run_video(&manifest, config)?;
    if let Some(out) = out {
        write_outputs(&result, &manifest, out, config.overlay_alpha)?;
    }
    Ok(result)
}

fn frame_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = io(dir, std::fs::read_dir(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("frame_") && (n.ends_with(".png") || n.ends_with(".npy")))
        .collect();
    names.sort();
    Ok(names)
}

/// Score a directory of predicted label maps against a directory of ground
/// truth, matching files by name. With `assign`, predictions are cluster ids
/// and get mapped to classes from the first frame.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, assign: bool, num_classes: Option<u32>) -> Result<MetricsReport> {
    let names = frame_files(gt_dir)?;
    if names.is_empty() {
        return Err(Error::EmptyList);
    }
    let gts = names
        .iter()
        .map(|n| read_label_map(gt_dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let preds = names
        .iter()
        .map(|n| read_label_map(pred_dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    let num_classes = num_classes.unwrap_or_else(|| infer_num_classes(&gts));
    let video_id = gt_dir
        .file_name()
        .map_or_else(|| "video".to_string(), |s| s.to_string_lossy().into_owned());
    if assign {
        let num_clusters = infer_num_classes(&preds);
        Ok(assign_and_evaluate(&video_id, &preds, gts, num_clusters, num_classes)?.1)
    } else {
        evaluate(&[VideoEval { video_id, preds, gts }], num_classes)
    }
}
