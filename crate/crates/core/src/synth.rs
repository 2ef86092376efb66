//! Synthetic videos with exact ground truth. Class regions are Voronoi cells
//! of random sites on a torus, translated every frame with wraparound. Every
//! block's features are the class prototype plus independent Gaussian noise,
//! so averaging blocks averages the noise away.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arrayio::{write_array, ArrayFile};
use crate::error::{Error, Result};
use crate::grid::{upsample_fullres, SegmentationMap};
use crate::imageio::{write_gray_png, write_rgb_png, RgbImage};
use crate::manifest::{FrameRecord, VideoManifest};
use crate::render::palette_color;

fn default_channels() -> usize {
    8
}
fn default_scale() -> usize {
    4
}
fn default_blocks() -> Vec<u32> {
    vec![6, 7, 8]
}
fn default_latent_channels() -> usize {
    4
}
fn default_video_id() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    /// Coarse grid `(h, w)`.
    pub grid: (usize, usize),
    pub classes: u32,
    pub prototype_separation: f32,
    pub noise_sigma: f32,
    /// Per-frame translation `(rows, cols)` of the class regions.
    #[serde(default)]
    pub motion: (i64, i64),
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Image pixels per coarse cell.
    #[serde(default = "default_scale")]
    pub scale: usize,
    #[serde(default = "default_blocks")]
    pub blocks: Vec<u32>,
    #[serde(default = "default_latent_channels")]
    pub latent_channels: usize,
    #[serde(default = "default_video_id")]
    pub video_id: String,
}

impl SynthSpec {
    pub fn new(frames: usize, grid: (usize, usize), classes: u32, separation: f32, noise_sigma: f32, seed: u64) -> Self {
        Self {
            frames,
            grid,
            classes,
            prototype_separation: separation,
            noise_sigma,
            motion: (0, 0),
            seed,
            channels: default_channels(),
            scale: default_scale(),
            blocks: default_blocks(),
            latent_channels: default_latent_channels(),
            video_id: default_video_id(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.frames == 0 || self.grid.0 == 0 || self.grid.1 == 0 || self.scale == 0 {
            return bad("frames, grid and scale must be positive".into());
        }
        if self.classes == 0 || self.classes as usize > self.grid.0 * self.grid.1 {
            return bad(format!("{} classes do not fit the grid", self.classes));
        }
        if self.classes as usize > self.channels {
            return bad(format!(
                "{} classes need at least as many feature channels, got {}",
                self.classes, self.channels
            ));
        }
        if self.classes > 255 {
            return bad("at most 255 classes".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be nonnegative".into());
        }
        if !(self.prototype_separation > 6.0 * self.noise_sigma) || !(self.prototype_separation > 0.0) {
            return bad(format!(
                "prototype separation {} must exceed 6 noise sigmas ({})",
                self.prototype_separation,
                6.0 * self.noise_sigma
            ));
        }
        if self.blocks.is_empty() {
            return bad("at least one block is required".into());
        }
        if self.latent_channels < 3 {
            return bad("latents need at least 3 channels".into());
        }
        Ok(())
    }

    /// Class prototypes: scaled one-hot vectors, pairwise
    /// `prototype_separation` apart.
    pub fn prototypes(&self) -> Vec<Vec<f32>> {
        let a = self.prototype_separation / std::f32::consts::SQRT_2;
        (0..self.classes as usize)
            .map(|k| {
                let mut p = vec![0.0; self.channels];
                p[k] = a;
                p
            })
            .collect()
    }

    /// Coarse ground truth of the first frame.
    pub fn base_layout(&self) -> Vec<u32> {
        let (h, w) = self.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_1a70);
        let mut sites: Vec<(usize, usize)> = Vec::new();
        while sites.len() < self.classes as usize {
            let s = (rng.random_range(0..h), rng.random_range(0..w));
            if !sites.contains(&s) {
                sites.push(s);
            }
        }
        let torus = |a: usize, b: usize, n: usize| {
            let d = a.abs_diff(b);
            d.min(n - d)
        };
        (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let mut best = (0u32, usize::MAX);
                for (k, &(sy, sx)) in sites.iter().enumerate() {
                    let dy = torus(y, sy, h);
                    let dx = torus(x, sx, w);
                    let d = dy * dy + dx * dx;
                    if d < best.1 {
                        best = (k as u32, d);
                    }
                }
                best.0
            })
            .collect()
    }

    /// Coarse ground truth of frame `j` (0-based): the first frame's layout
    /// shifted by `j · motion` with wraparound.
    pub fn layout_at(&self, base: &[u32], j: usize) -> Vec<u32> {
        let (h, w) = self.grid;
        let (hi, wi) = (h as i64, w as i64);
        let (dy, dx) = (self.motion.0 * j as i64, self.motion.1 * j as i64);
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as i64, (i % w) as i64);
                let sy = (y - dy).rem_euclid(hi) as usize;
                let sx = (x - dx).rem_euclid(wi) as usize;
                base[sy * w + sx]
            })
            .collect()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.grid.0 * self.scale, self.grid.1 * self.scale)
    }
}

fn class_color(k: u32) -> [f32; 3] {
    palette_color(k + 1).map(|c| c as f32 / 255.0)
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Write a synthetic video (frames, per-block features, latents, ground
/// truth) under `out` and return its saved manifest.
pub fn synth_generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<VideoManifest> {
    spec.validate()?;
    let out = out.as_ref();
    for sub in ["frames", "features", "latents", "gt"] {
        let d = out.join(sub);
        io(&d, std::fs::create_dir_all(&d))?;
    }
    let (h, w) = spec.grid;
    let (big_h, big_w) = spec.image_size();
    let protos = spec.prototypes();
    let base = spec.base_layout();
    let noise = Normal::new(0.0f32, spec.noise_sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut frames = Vec::with_capacity(spec.frames);
    for j in 0..spec.frames {
        let layout = spec.layout_at(&base, j);

        let mut features = BTreeMap::new();
        for &block in &spec.blocks {
            let mut values = Vec::with_capacity(h * w * spec.channels);
            for &k in &layout {
                values.extend(protos[k as usize].iter().map(|&p| p + noise.sample(&mut rng)));
            }
            let rel = PathBuf::from(format!("features/frame_{j:06}_block{block}.npy"));
            write_array(out.join(&rel), &ArrayFile::from_f32(vec![h, w, spec.channels], values)?)?;
            features.insert(block, rel);
        }

        let mut latent = Vec::with_capacity(h * w * spec.latent_channels);
        for &k in &layout {
            let c = class_color(k);
            latent.extend_from_slice(&c);
            latent.extend(std::iter::repeat_n(0.0f32, spec.latent_channels - 3));
        }
        let latent_rel = PathBuf::from(format!("latents/frame_{j:06}.npy"));
        write_array(
            out.join(&latent_rel),
            &ArrayFile::from_f32(vec![h, w, spec.latent_channels], latent)?,
        )?;

        let coarse_gt = SegmentationMap::new(h, w, layout.clone())?;
        let gt = upsample_fullres(&coarse_gt, big_h, big_w)?;
        let gt_rel = PathBuf::from(format!("gt/frame_{j:06}.png"));
        write_gray_png(out.join(&gt_rel), &gt)?;

        let data = gt.labels().iter().flat_map(|&k| class_color(k)).collect();
        let image_rel = PathBuf::from(format!("frames/frame_{j:06}.png"));
        write_rgb_png(out.join(&image_rel), &RgbImage::new(big_h, big_w, data)?)?;

        frames.push(FrameRecord {
            image: image_rel,
            features,
            latent: latent_rel,
            gt: Some(gt_rel),
        });
    }

    let mut manifest = VideoManifest::new(
        spec.video_id.clone(),
        (big_h, big_w),
        (h, w),
        spec.scale,
        spec.blocks.clone(),
        frames,
    );
    manifest.num_gt_classes = Some(spec.classes);
    manifest.save(out.join("manifest.json"))?;
    manifest.set_root(out);
    Ok(manifest)
}
