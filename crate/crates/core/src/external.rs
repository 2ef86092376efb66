//! Directory protocol for modulation by an out-of-process diffusion backbone.
//!
//! For every `(frame, cluster)` pair the engine creates a request directory
//! `<root>/<video_id>/frame_NNNNNN_cluster_CCC/` holding `mask.npy` (uint8
//! coarse mask) and `request.json`, written last. The backbone answers by
//! writing `plus.png` and `minus.png` (8-bit RGB, `H × W`) and finally an
//! empty `done` marker into the same directory.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::arrayio::{read_array, write_array};
use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::imageio::{read_rgb, write_rgb_png, RgbImage};
use crate::modulate::{ClusterRequest, FrameContext, ModulationParams, Modulator};

pub const REQUEST_FILE: &str = "request.json";
pub const MASK_FILE: &str = "mask.npy";
pub const PLUS_FILE: &str = "plus.png";
pub const MINUS_FILE: &str = "minus.png";
pub const DONE_FILE: &str = "done";

/// Contents of `request.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationRequest {
    pub video_id: String,
    pub frame_index: usize,
    pub cluster_id: u32,
    pub lambda: f32,
    /// Sign applied to produce `plus.png`; `minus.png` uses the opposite.
    pub sign: i8,
    pub t_m: usize,
    pub t_f: usize,
    pub t_inv: usize,
    pub b_m: u32,
    /// Output image size `(H, W)`.
    pub image_size: (usize, usize),
}

pub fn request_dir(root: &Path, video_id: &str, frame: usize, cluster: u32) -> PathBuf {
    root.join(video_id)
        .join(format!("frame_{frame:06}_cluster_{cluster:03}"))
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

/// Write a request directory, replacing any stale one.
pub fn write_request(dir: &Path, request: &ModulationRequest, mask: &BinaryMask) -> Result<()> {
    if dir.exists() {
        io(dir, std::fs::remove_dir_all(dir))?;
    }
    io(dir, std::fs::create_dir_all(dir))?;
    write_array(dir.join(MASK_FILE), &mask.to_array())?;
    let tmp = dir.join(".request.json.tmp");
    let text = serde_json::to_string_pretty(request).expect("request serializes");
    io(&tmp, std::fs::write(&tmp, text))?;
    let target = dir.join(REQUEST_FILE);
    io(&target, std::fs::rename(&tmp, &target))
}

pub fn read_request(dir: &Path) -> Result<(ModulationRequest, BinaryMask)> {
    let path = dir.join(REQUEST_FILE);
    let text = io(&path, std::fs::read_to_string(&path))?;
    let request: ModulationRequest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mask = BinaryMask::from_array(&read_array(dir.join(MASK_FILE))?)?;
    Ok((request, mask))
}

/// Write a response; the `done` marker goes last.
pub fn write_response(dir: &Path, plus: &RgbImage, minus: &RgbImage) -> Result<()> {
    write_rgb_png(dir.join(PLUS_FILE), plus)?;
    write_rgb_png(dir.join(MINUS_FILE), minus)?;
    let done = dir.join(DONE_FILE);
    io(&done, std::fs::write(&done, b""))
}

/// Read a finished response, checking the image size.
pub fn read_response(dir: &Path, image_size: (usize, usize)) -> Result<(RgbImage, RgbImage)> {
    let plus = read_rgb(dir.join(PLUS_FILE))?;
    let minus = read_rgb(dir.join(MINUS_FILE))?;
    for img in [&plus, &minus] {
        if img.dims() != image_size {
            return Err(Error::MalformedResponse {
                path: dir.to_path_buf(),
                message: format!("image is {:?}, expected {:?}", img.dims(), image_size),
            });
        }
    }
    Ok((plus, minus))
}

/// Service every pending request under `root` (recursively one video level
/// deep) with `handler`. Returns the number of requests answered.
pub fn serve_pending<F>(root: &Path, mut handler: F) -> Result<usize>
where
    F: FnMut(&ModulationRequest, &BinaryMask) -> Result<(RgbImage, RgbImage)>,
{
    let mut served = 0;
    if !root.exists() {
        return Ok(0);
    }
    let mut videos: Vec<PathBuf> = io(root, std::fs::read_dir(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    videos.sort();
    for video in videos {
        let mut dirs: Vec<PathBuf> = io(&video, std::fs::read_dir(&video))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(REQUEST_FILE).exists() && !p.join(DONE_FILE).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let (request, mask) = read_request(&dir)?;
            let (plus, minus) = handler(&request, &mask)?;
            write_response(&dir, &plus, &minus)?;
            served += 1;
        }
    }
    Ok(served)
}

/// [`Modulator`] that delegates rollouts to an external process through the
/// directory protocol.
#[derive(Debug, Clone)]
pub struct ExternalModulator {
    pub root: PathBuf,
    pub video_id: String,
    pub poll_interval: Duration,
    /// `None` waits indefinitely.
    pub timeout: Option<Duration>,
}

impl ExternalModulator {
    pub fn new(root: impl Into<PathBuf>, video_id: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            video_id: video_id.into(),
            poll_interval: Duration::from_millis(20),
            timeout: None,
        }
    }

    fn wait_for(&self, dir: &Path) -> Result<()> {
        let start = Instant::now();
        let done = dir.join(DONE_FILE);
        while !done.exists() {
            if self.timeout.is_some_and(|t| start.elapsed() > t) {
                return Err(Error::ResponseTimeout(dir.to_path_buf()));
            }
            std::thread::sleep(self.poll_interval);
        }
        Ok(())
    }
}

impl Modulator for ExternalModulator {
    fn rollout_pairs(
        &self,
        frame: &FrameContext,
        requests: &[ClusterRequest],
        params: &ModulationParams,
    ) -> Result<Vec<(RgbImage, RgbImage)>> {
        let dirs = requests
            .iter()
            .map(|r| {
                let dir = request_dir(&self.root, &self.video_id, frame.index, r.cluster);
                let request = ModulationRequest {
                    video_id: self.video_id.clone(),
                    frame_index: frame.index,
                    cluster_id: r.cluster,
                    lambda: params.strength,
                    sign: 1,
                    t_m: params.schedule.modulation_step,
                    t_f: params.schedule.final_step,
                    t_inv: params.schedule.inversion_step,
                    b_m: params.block,
                    image_size: frame.image_size,
                };
                write_request(&dir, &request, &r.mask)?;
                Ok(dir)
            })
            .collect::<Result<Vec<_>>>()?;
        dirs.iter()
            .map(|dir| {
                self.wait_for(dir)?;
                read_response(dir, frame.image_size)
            })
            .collect()
    }
}
