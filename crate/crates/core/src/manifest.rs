//! Video manifests: a JSON document listing, per frame, the RGB image, one
//! feature array per decoder block, the latent and an optional ground-truth
//! label map. Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrayio::{read_array, read_header, Dtype};
use crate::error::{Error, Result};
use crate::grid::{FeatureGrid, SegmentationMap};
use crate::imageio::{image_dims, read_label_map, read_rgb, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: PathBuf,
    /// Feature array path per block id.
    pub features: BTreeMap<u32, PathBuf>,
    pub latent: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub video_id: String,
    pub frame_count: usize,
    /// `(H, W)` in pixels.
    pub image_size: (usize, usize),
    /// `(h, w)` in grid cells.
    pub coarse_size: (usize, usize),
    pub scale: usize,
    pub frames: Vec<FrameRecord>,
    pub block_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_gt_classes: Option<u32>,
    #[serde(skip)]
    root: PathBuf,
}

impl VideoManifest {
    pub fn new(
        video_id: impl Into<String>,
        image_size: (usize, usize),
        coarse_size: (usize, usize),
        scale: usize,
        block_ids: Vec<u32>,
        frames: Vec<FrameRecord>,
    ) -> Self {
        Self {
            video_id: video_id.into(),
            frame_count: frames.len(),
            image_size,
            coarse_size,
            scale,
            frames,
            block_ids,
            num_gt_classes: None,
            root: PathBuf::new(),
        }
    }

    /// Directory that relative paths resolve against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_root(&mut self, root: impl Into<PathBuf>) {
        self.root = root.into();
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn has_gt(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.gt.is_some())
    }

    pub fn features(&self, frame: usize, block: u32) -> Result<FeatureGrid> {
        let path = self.frames[frame]
            .features
            .get(&block)
            .ok_or(Error::MissingBlock(block))?;
        FeatureGrid::from_array(read_array(self.resolve(path))?)
    }

    /// All requested blocks of one frame.
    pub fn block_features(&self, frame: usize, blocks: &[u32]) -> Result<BTreeMap<u32, FeatureGrid>> {
        blocks
            .iter()
            .map(|&b| Ok((b, self.features(frame, b)?)))
            .collect()
    }

    /// Latent values and shape `(h_z, w_z, c_z)`.
    pub fn latent(&self, frame: usize) -> Result<(Vec<f32>, [usize; 3])> {
        let array = read_array(self.resolve(&self.frames[frame].latent))?;
        let [h, w, c] = array.shape()[..] else {
            return Err(Error::shape(format!(
                "latent arrays must be rank 3, got {:?}",
                array.shape()
            )));
        };
        Ok((array.into_f32()?, [h, w, c]))
    }

    pub fn image(&self, frame: usize) -> Result<RgbImage> {
        read_rgb(self.resolve(&self.frames[frame].image))
    }

    pub fn gt(&self, frame: usize) -> Result<Option<SegmentationMap>> {
        self.frames[frame]
            .gt
            .as_ref()
            .map(|p| read_label_map(self.resolve(p)))
            .transpose()
    }

    /// Check every invariant, opening array headers only.
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::shape("frame_count must be positive"));
        }
        if self.frames.len() != self.frame_count {
            return Err(Error::shape(format!(
                "frame_count is {} but {} frame records are listed",
                self.frame_count,
                self.frames.len()
            )));
        }
        let (img_h, img_w) = self.image_size;
        let (h, w) = self.coarse_size;
        if self.scale == 0 || h * self.scale != img_h || w * self.scale != img_w {
            return Err(Error::shape(format!(
                "coarse size ({h}, {w}) must equal image size ({img_h}, {img_w}) / scale {} = ({}, {})",
                self.scale,
                img_h / self.scale.max(1),
                img_w / self.scale.max(1)
            )));
        }

        let mut channels: BTreeMap<u32, usize> = BTreeMap::new();
        let mut latent_shape: Option<Vec<usize>> = None;
        for (i, frame) in self.frames.iter().enumerate() {
            for &block in &self.block_ids {
                let path = frame.features.get(&block).ok_or(Error::MissingBlock(block))?;
                let header = read_header(self.resolve(path))?;
                if header.dtype != Dtype::F32 {
                    return Err(Error::UnsupportedDtype(format!(
                        "{} for features of block {block}",
                        header.dtype.descr()
                    )));
                }
                let [fh, fw, c] = header.shape[..] else {
                    return Err(Error::shape(format!(
                        "frame {i} block {block}: features must be (h, w, C), got {:?}",
                        header.shape
                    )));
                };
                if (fh, fw) != (h, w) {
                    return Err(Error::shape(format!(
                        "frame {i} block {block}: features are ({fh}, {fw}), coarse size is ({h}, {w})"
                    )));
                }
                match channels.get(&block) {
                    Some(&expected) if expected != c => {
                        return Err(Error::InconsistentChannels {
                            block,
                            expected,
                            found: c,
                        })
                    }
                    _ => {
                        channels.insert(block, c);
                    }
                }
            }

            let header = read_header(self.resolve(&frame.latent))?;
            if header.dtype != Dtype::F32 || header.shape.len() != 3 {
                return Err(Error::shape(format!(
                    "frame {i}: latent must be float32 (h_z, w_z, c_z), got {} {:?}",
                    header.dtype.descr(),
                    header.shape
                )));
            }
            match &latent_shape {
                Some(s) if *s != header.shape => {
                    return Err(Error::shape(format!(
                        "frame {i}: latent shape {:?} differs from {:?}",
                        header.shape, s
                    )))
                }
                _ => latent_shape = Some(header.shape),
            }

            let dims = image_dims(self.resolve(&frame.image))?;
            if dims != self.image_size {
                return Err(Error::shape(format!(
                    "frame {i}: image is {dims:?}, manifest declares {:?}",
                    self.image_size
                )));
            }
            if let Some(gt) = &frame.gt {
                let dims = image_dims(self.resolve(gt))?;
                if dims != self.image_size {
                    return Err(Error::shape(format!(
                        "frame {i}: ground truth is {dims:?}, manifest declares {:?}",
                        self.image_size
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parse and fully validate a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<VideoManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: VideoManifest =
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    manifest.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrayio::{write_array, ArrayFile};
    use crate::imageio::{write_gray_png, write_rgb_png};

    fn write_frame(dir: &Path, i: usize, channels: &[(u32, usize)], coarse: (usize, usize), image: (usize, usize)) -> FrameRecord {
        let mut features = BTreeMap::new();
        for &(block, c) in channels {
            let name = format!("f{i}_b{block}.npy");
            let n = coarse.0 * coarse.1 * c;
            write_array(dir.join(&name), &ArrayFile::from_f32(vec![coarse.0, coarse.1, c], vec![0.5; n]).unwrap()).unwrap();
            features.insert(block, PathBuf::from(name));
        }
        let latent = format!("z{i}.npy");
        write_array(dir.join(&latent), &ArrayFile::from_f32(vec![coarse.0, coarse.1, 4], vec![0.0; coarse.0 * coarse.1 * 4]).unwrap()).unwrap();
        let img = format!("x{i}.png");
        write_rgb_png(dir.join(&img), &RgbImage::filled(image.0, image.1, [0.2, 0.4, 0.6])).unwrap();
        let gt = format!("y{i}.png");
        write_gray_png(dir.join(&gt), &SegmentationMap::filled(image.0, image.1, 1)).unwrap();
        FrameRecord {
            image: img.into(),
            features,
            latent: latent.into(),
            gt: Some(gt.into()),
        }
    }

    fn write_manifest(dir: &Path, per_frame: &[Vec<(u32, usize)>], coarse: (usize, usize), scale: usize) -> PathBuf {
        let image = (coarse.0 * scale, coarse.1 * scale);
        let frames = per_frame
            .iter()
            .enumerate()
            .map(|(i, ch)| write_frame(dir, i, ch, coarse, image))
            .collect();
        let blocks = per_frame[0].iter().map(|&(b, _)| b).collect();
        let m = VideoManifest::new("v", image, coarse, scale, blocks, frames);
        let path = dir.join("manifest.json");
        m.save(&path).unwrap();
        path
    }

    #[test]
    fn loads_a_fourteen_frame_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let blocks = vec![(6, 8), (7, 8), (8, 8)];
        let path = write_manifest(dir.path(), &vec![blocks; 14], (4, 5), 2);
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.frame_count, 14);
        assert!(m.has_gt());
        assert_eq!(m.features(3, 7).unwrap().dims(), (4, 5));
        assert_eq!(m.image(0).unwrap().dims(), (8, 10));
    }

    #[test]
    fn changing_channel_count_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[vec![(7, 640)], vec![(7, 320)]], (2, 2), 2);
        match load_manifest(&path) {
            Err(Error::InconsistentChannels { block, expected, found }) => {
                assert_eq!((block, expected, found), (7, 640, 320));
            }
            other => panic!("expected InconsistentChannels, got {other:?}"),
        }
    }

    #[test]
    fn coarse_size_must_match_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[vec![(7, 2)]], (2, 2), 2);
        let mut m: VideoManifest = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        m.image_size = (480, 640);
        m.scale = 8;
        m.coarse_size = (61, 80);
        m.save(&path).unwrap();
        match load_manifest(&path) {
            Err(Error::ShapeMismatch(msg)) => assert!(msg.contains("60"), "{msg}"),
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_feature_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[vec![(7, 2)], vec![(7, 2)]], (2, 2), 2);
        std::fs::remove_file(dir.path().join("f1_b7.npy")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::MissingFile(_))));
    }

    #[test]
    fn frame_count_must_match_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &[vec![(7, 2)], vec![(7, 2)]], (2, 2), 2);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"frame_count\": 2", "\"frame_count\": 3");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::ShapeMismatch(_))));
    }
}
