//! Masked modulation: per-cluster ±λ perturbed denoising rollouts whose latents
//! are blended with an unmodulated reference inside the cluster mask, decoded
//! into image pairs, turned into difference maps, filtered and reduced to a
//! full-resolution label map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Resample, SegmentationMap};
use crate::imageio::RgbImage;

/// A latent tensor (`height × width × channels`, channels innermost) at a
/// denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
    step: usize,
}

impl LatentState {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>, step: usize) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "latent ({height}, {width}, {channels}) needs {} values, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            step,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, step: usize) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
            step,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }
}

/// Latent blending: `z * (1 - M) + z_hat * M`. With a binary mask this is a
/// per-cell selection, which keeps both identities bit-exact.
pub fn blend_latents(z: &LatentState, z_hat: &LatentState, mask: &BinaryMask) -> Result<LatentState> {
    if !z.same_shape(z_hat) || z.step != z_hat.step {
        return Err(Error::shape(format!(
            "cannot blend latents ({}, {}, {}) @ {} and ({}, {}, {}) @ {}",
            z.height, z.width, z.channels, z.step, z_hat.height, z_hat.width, z_hat.channels, z_hat.step
        )));
    }
    if mask.dims() != z.dims() {
        return Err(Error::shape(format!(
            "mask {:?} does not match latent resolution {:?}",
            mask.dims(),
            z.dims()
        )));
    }
    let c = z.channels;
    let values = z
        .values
        .chunks_exact(c)
        .zip(z_hat.values.chunks_exact(c))
        .zip(mask.data())
        .flat_map(|((a, b), &inside)| if inside { b } else { a })
        .copied()
        .collect();
    Ok(LatentState {
        values,
        ..z.clone()
    })
}

/// Sign of a modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f32 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// A ±λ perturbation of one decoder block's attention inside a coarse mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulation {
    pub mask: BinaryMask,
    pub sign: Sign,
    pub strength: f32,
    pub block: u32,
}

/// Per-frame inputs a backbone may condition on.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContext {
    pub index: usize,
    /// Noise-free latent of the frame.
    pub latent: LatentState,
    /// Output image size `(H, W)`.
    pub image_size: (usize, usize),
}

/// Step indices of a rollout. Denoising steps are numbered `1..=final_step`
/// from the start of sampling; sampling starts `inversion_step` steps before
/// the end, modulation fires at `modulation_step` and blending applies from
/// there through `final_step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub modulation_step: usize,
    pub final_step: usize,
    pub inversion_step: usize,
}

impl Schedule {
    pub fn new(modulation_step: usize, final_step: usize, inversion_step: usize) -> Result<Self> {
        let s = Self {
            modulation_step,
            final_step,
            inversion_step,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (t_m, t_f, t_inv) = (self.modulation_step, self.final_step, self.inversion_step);
        if t_m == 0 {
            return Err(Error::InvalidSchedule("steps are numbered from 1".into()));
        }
        if t_m > t_f {
            return Err(Error::InvalidSchedule(format!(
                "modulation step {t_m} is after the final step {t_f}"
            )));
        }
        if t_inv < t_m {
            return Err(Error::InvalidSchedule(format!(
                "inversion step {t_inv} must not be below the modulation step {t_m}"
            )));
        }
        if t_inv > t_f {
            return Err(Error::InvalidSchedule(format!(
                "inversion step {t_inv} exceeds the {t_f} scheduled steps"
            )));
        }
        if self.first_step() > t_m {
            return Err(Error::InvalidSchedule(format!(
                "sampling starts at step {} and never reaches modulation step {t_m}",
                self.first_step()
            )));
        }
        Ok(())
    }

    /// First denoising step executed.
    pub fn first_step(&self) -> usize {
        self.final_step + 1 - self.inversion_step.min(self.final_step)
    }
}

/// Operations a denoising backbone must provide. Implementations must be
/// deterministic and safe to call concurrently on distinct trajectories.
pub trait Backbone: Sync {
    /// Latent from which sampling starts (its step index is the step before
    /// the first executed one).
    fn init_latent(&self, frame: &FrameContext, schedule: &Schedule) -> Result<LatentState>;

    /// One denoising step producing the latent at step `t`.
    fn step(
        &self,
        frame: &FrameContext,
        latent: &LatentState,
        t: usize,
        modulation: Option<&Modulation>,
    ) -> Result<LatentState>;

    fn decode(&self, frame: &FrameContext, latent: &LatentState) -> Result<RgbImage>;

    fn latent_resolution(&self, frame: &FrameContext) -> (usize, usize);
}

/// Per-step modulation gain of the [`ToyBackbone`].
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    Constant(f32),
    /// Gain for steps `1..=len`; later steps use the last entry.
    PerStep(Vec<f32>),
}

impl Gain {
    pub fn at(&self, t: usize) -> f32 {
        match self {
            Gain::Constant(g) => *g,
            Gain::PerStep(gs) => gs[(t.max(1) - 1).min(gs.len() - 1)],
        }
    }
}

/// An analytically tractable backbone. Each step contracts the latent toward
/// the frame's noise-free latent, `z' = α z + (1 - α) target`, and a
/// modulation adds `sign · λ · γ_t` inside the mask on every channel.
/// Decoding upsamples by nearest neighbor and mixes channels linearly into
/// RGB; it does not clamp, so decoded values can leave `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    pub contraction: f32,
    pub gain: Gain,
    /// Row-major `3 × latent_channels` matrix; `None` copies the first three
    /// latent channels.
    pub mixing: Option<Vec<f32>>,
}

impl Default for ToyBackbone {
    fn default() -> Self {
        Self {
            contraction: 0.5,
            gain: Gain::Constant(1.0),
            mixing: None,
        }
    }
}

impl ToyBackbone {
    pub fn new(contraction: f32, gain: Gain) -> Result<Self> {
        if !(contraction > 0.0 && contraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "contraction {contraction} must lie in (0, 1)"
            )));
        }
        Ok(Self {
            contraction,
            gain,
            mixing: None,
        })
    }

    pub fn with_mixing(mut self, mixing: Vec<f32>) -> Self {
        self.mixing = Some(mixing);
        self
    }

    fn mix(&self, px: &[f32]) -> Result<[f32; 3]> {
        match &self.mixing {
            None => {
                if px.len() < 3 {
                    return Err(Error::shape(format!(
                        "identity mixing needs at least 3 latent channels, got {}",
                        px.len()
                    )));
                }
                Ok([px[0], px[1], px[2]])
            }
            Some(m) => {
                if m.len() != 3 * px.len() {
                    return Err(Error::shape(format!(
                        "mixing matrix has {} entries for {} latent channels",
                        m.len(),
                        px.len()
                    )));
                }
                let mut out = [0.0f32; 3];
                for (o, row) in out.iter_mut().zip(m.chunks_exact(px.len())) {
                    *o = row.iter().zip(px).map(|(a, b)| a * b).sum();
                }
                Ok(out)
            }
        }
    }
}

impl Backbone for ToyBackbone {
    fn init_latent(&self, frame: &FrameContext, schedule: &Schedule) -> Result<LatentState> {
        let z = &frame.latent;
        Ok(LatentState::zeros(z.height, z.width, z.channels, schedule.first_step() - 1))
    }

    fn step(
        &self,
        frame: &FrameContext,
        latent: &LatentState,
        t: usize,
        modulation: Option<&Modulation>,
    ) -> Result<LatentState> {
        let target = &frame.latent;
        if !latent.same_shape(target) {
            return Err(Error::shape("latent does not match the frame's latent shape"));
        }
        let a = self.contraction;
        let mut values: Vec<f32> = latent
            .values
            .iter()
            .zip(&target.values)
            .map(|(&z, &x)| a * z + (1.0 - a) * x)
            .collect();
        if let Some(m) = modulation {
            let mask = m.mask.resample_nearest(latent.height, latent.width);
            let delta = m.sign.value() * m.strength * self.gain.at(t);
            for (cell, &inside) in values.chunks_exact_mut(latent.channels).zip(mask.data()) {
                if inside {
                    cell.iter_mut().for_each(|v| *v += delta);
                }
            }
        }
        Ok(LatentState {
            values,
            step: t,
            ..latent.clone()
        })
    }

    fn decode(&self, frame: &FrameContext, latent: &LatentState) -> Result<RgbImage> {
        let (big_h, big_w) = frame.image_size;
        let (h, w) = latent.dims();
        if big_h % h != 0 || big_w % w != 0 || big_h / h != big_w / w {
            return Err(Error::shape(format!(
                "image {:?} is not an integer upsampling of latent ({h}, {w})",
                frame.image_size
            )));
        }
        let mixed: Vec<[f32; 3]> = latent
            .values
            .chunks_exact(latent.channels)
            .map(|px| self.mix(px))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(big_h * big_w * 3);
        let scale = big_h / h;
        for y in 0..big_h {
            for x in 0..big_w {
                data.extend_from_slice(&mixed[(y / scale) * w + x / scale]);
            }
        }
        RgbImage::new(big_h, big_w, data)
    }

    fn latent_resolution(&self, frame: &FrameContext) -> (usize, usize) {
        frame.latent.dims()
    }
}

/// The unmodulated trajectory of one frame from the step before modulation
/// through the final step.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    schedule: Schedule,
    /// Latents at steps `modulation_step - 1 ..= final_step`.
    latents: Vec<LatentState>,
}

impl ReferenceTrajectory {
    pub fn compute<B: Backbone + ?Sized>(backbone: &B, frame: &FrameContext, schedule: &Schedule) -> Result<Self> {
        schedule.validate()?;
        let mut z = backbone.init_latent(frame, schedule)?;
        let mut latents = Vec::with_capacity(schedule.final_step - schedule.modulation_step + 2);
        if schedule.first_step() == schedule.modulation_step {
            latents.push(z.clone());
        }
        for t in schedule.first_step()..=schedule.final_step {
            z = backbone.step(frame, &z, t, None)?;
            if t + 1 >= schedule.modulation_step {
                latents.push(z.clone());
            }
        }
        Ok(Self {
            schedule: *schedule,
            latents,
        })
    }

    /// Latent at step `t` for `t` in `modulation_step - 1 ..= final_step`.
    pub fn at(&self, t: usize) -> &LatentState {
        &self.latents[t + 1 - self.schedule.modulation_step]
    }

    pub fn last(&self) -> &LatentState {
        self.latents.last().expect("trajectory is never empty")
    }
}

/// Run one signed trajectory against a precomputed reference.
pub fn signed_rollout<B: Backbone + ?Sized>(
    backbone: &B,
    frame: &FrameContext,
    reference: &ReferenceTrajectory,
    modulation: &Modulation,
) -> Result<LatentState> {
    let schedule = reference.schedule;
    let latent_mask = modulation
        .mask
        .resample_nearest(reference.last().height, reference.last().width);
    let mut z = reference.at(schedule.modulation_step - 1).clone();
    for t in schedule.modulation_step..=schedule.final_step {
        let m = (t == schedule.modulation_step).then_some(modulation);
        let stepped = backbone.step(frame, &z, t, m)?;
        z = blend_latents(reference.at(t), &stepped, &latent_mask)?;
    }
    Ok(z)
}

/// Decode the `+λ` and `-λ` rollouts for one coarse mask.
pub fn modulated_rollout<B: Backbone + ?Sized>(
    backbone: &B,
    frame: &FrameContext,
    mask: &BinaryMask,
    strength: f32,
    block: u32,
    schedule: &Schedule,
) -> Result<(RgbImage, RgbImage)> {
    let reference = ReferenceTrajectory::compute(backbone, frame, schedule)?;
    rollout_pair(backbone, frame, &reference, mask, strength, block)
}

fn rollout_pair<B: Backbone + ?Sized>(
    backbone: &B,
    frame: &FrameContext,
    reference: &ReferenceTrajectory,
    mask: &BinaryMask,
    strength: f32,
    block: u32,
) -> Result<(RgbImage, RgbImage)> {
    let decode = |sign| -> Result<RgbImage> {
        let m = Modulation {
            mask: mask.clone(),
            sign,
            strength,
            block,
        };
        backbone.decode(frame, &signed_rollout(backbone, frame, reference, &m)?)
    };
    Ok((decode(Sign::Plus)?, decode(Sign::Minus)?))
}

/// Parameters shared by every modulation request of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationParams {
    pub strength: f32,
    pub block: u32,
    pub schedule: Schedule,
}

/// One cluster's modulation request within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRequest {
    pub cluster: u32,
    /// Coarse binary mask of the cluster.
    pub mask: BinaryMask,
}

/// Something that turns per-cluster coarse masks into decoded `(I+, I-)`
/// pairs, in request order.
pub trait Modulator: Sync {
    fn rollout_pairs(
        &self,
        frame: &FrameContext,
        requests: &[ClusterRequest],
        params: &ModulationParams,
    ) -> Result<Vec<(RgbImage, RgbImage)>>;
}

/// In-process modulation through a [`Backbone`]. The reference trajectory is
/// computed once per frame; clusters run in parallel.
pub struct LatentModulator<B> {
    pub backbone: B,
}

impl<B: Backbone> LatentModulator<B> {
    pub fn new(backbone: B) -> Self {
        Self { backbone }
    }
}

impl<B: Backbone> Modulator for LatentModulator<B> {
    fn rollout_pairs(
        &self,
        frame: &FrameContext,
        requests: &[ClusterRequest],
        params: &ModulationParams,
    ) -> Result<Vec<(RgbImage, RgbImage)>> {
        let reference = ReferenceTrajectory::compute(&self.backbone, frame, &params.schedule)?;
        requests
            .par_iter()
            .map(|r| rollout_pair(&self.backbone, frame, &reference, &r.mask, params.strength, params.block))
            .collect()
    }
}

/// Full-resolution activation map of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    cluster: u32,
}

impl DifferenceMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, cluster: u32) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "difference map ({height}, {width}) needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidConfig("difference maps must be nonnegative".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            cluster,
        })
    }

    pub fn zeros(height: usize, width: usize, cluster: u32) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            cluster,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cluster(&self) -> u32 {
        self.cluster
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Per-pixel squared distance between the two decoded images, channels
/// summed in order.
pub fn difference_map(plus: &RgbImage, minus: &RgbImage, cluster: u32) -> Result<DifferenceMap> {
    if plus.dims() != minus.dims() {
        return Err(Error::shape(format!(
            "images {:?} and {:?} differ in size",
            plus.dims(),
            minus.dims()
        )));
    }
    let values = plus
        .data()
        .chunks_exact(3)
        .zip(minus.data().chunks_exact(3))
        .map(|(a, b)| {
            let mut acc = 0.0f32;
            for c in 0..3 {
                let d = a[c] - b[c];
                acc += d * d;
            }
            acc
        })
        .collect();
    Ok(DifferenceMap {
        height: plus.height(),
        width: plus.width(),
        values,
        cluster,
    })
}

/// Keep activations inside the mask and scale those outside by `strength`.
pub fn filter_difference(map: &DifferenceMap, mask: &BinaryMask, strength: f32) -> Result<DifferenceMap> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::SOutOfRange(strength));
    }
    if mask.dims() != map.dims() {
        return Err(Error::shape(format!(
            "mask {:?} does not match difference map {:?}",
            mask.dims(),
            map.dims()
        )));
    }
    let values = map
        .values
        .iter()
        .zip(mask.data())
        .map(|(&d, &inside)| if inside { d } else { strength * d })
        .collect();
    Ok(DifferenceMap {
        values,
        ..map.clone()
    })
}

/// Per-pixel argmax over the maps' activations (ties to the earliest map);
/// labels are the maps' cluster indices.
pub fn label_from_differences(maps: &[DifferenceMap]) -> Result<SegmentationMap> {
    let first = maps.first().ok_or(Error::EmptyList)?;
    if let Some(m) = maps.iter().find(|m| m.dims() != first.dims()) {
        return Err(Error::shape(format!(
            "difference maps {:?} and {:?} differ in size",
            first.dims(),
            m.dims()
        )));
    }
    let labels = (0..first.values.len())
        .map(|i| {
            let mut best = first;
            for m in &maps[1..] {
                if m.values[i] > best.values[i] {
                    best = m;
                }
            }
            best.cluster
        })
        .collect();
    SegmentationMap::new(first.height, first.width, labels)
}
