//! Dense grids shared by every stage: coarse feature tensors, coarse label
//! masks, binary masks and full-resolution segmentation maps.

use crate::arrayio::ArrayFile;
use crate::error::{Error, Result};

/// Label value excluded from every metric count.
pub const IGNORE: u32 = 255;

/// A coarse `height × width × channels` feature tensor, row-major with
/// channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "feature grid dimensions must be positive, got ({height}, {width}, {channels})"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(format!(
                "feature grid ({height}, {width}, {channels}) needs {} values, got {}",
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
        })
    }

    pub fn from_array(array: ArrayFile) -> Result<Self> {
        let shape = array.shape().to_vec();
        let [h, w, c] = shape[..] else {
            return Err(Error::shape(format!(
                "feature arrays must be rank 3 (h, w, C), got {shape:?}"
            )));
        };
        Self::new(h, w, c, array.into_f32()?)
    }

    pub fn to_array(&self) -> ArrayFile {
        ArrayFile::from_f32(
            vec![self.height, self.width, self.channels],
            self.values.clone(),
        )
        .expect("grid shape matches its values")
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

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Feature vector of the cell at flat (row-major) index `idx`.
    pub fn cell(&self, idx: usize) -> &[f32] {
        &self.values[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.channels)
    }
}

/// A coarse label grid with labels in `[0, num_labels)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoarseMask {
    height: usize,
    width: usize,
    num_labels: u32,
    labels: Vec<u32>,
}

impl CoarseMask {
    pub fn new(height: usize, width: usize, num_labels: u32, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "mask ({height}, {width}) needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::LabelOutOfRange { label, num_labels });
        }
        Ok(Self {
            height,
            width,
            num_labels,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// One-hot slice for `label`.
    pub fn binary(&self, label: u32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Sorted, deduplicated labels that occur in the mask.
    pub fn present_labels(&self) -> Vec<u32> {
        let mut seen = vec![false; self.num_labels as usize];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..self.num_labels).filter(|&l| seen[l as usize]).collect()
    }

    pub fn to_segmentation(&self) -> SegmentationMap {
        SegmentationMap {
            height: self.height,
            width: self.width,
            labels: self.labels.clone(),
        }
    }
}

/// A binary region mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "binary mask ({height}, {width}) needs {} cells, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_array(&self) -> ArrayFile {
        ArrayFile::from_u8(
            vec![self.height, self.width],
            self.data.iter().map(|&b| b as u8).collect(),
        )
        .expect("mask shape matches its cells")
    }

    pub fn from_array(array: &ArrayFile) -> Result<Self> {
        let [h, w] = array.shape()[..] else {
            return Err(Error::shape(format!(
                "mask arrays must be rank 2, got {:?}",
                array.shape()
            )));
        };
        let data = array.to_i64()?.into_iter().map(|v| v != 0).collect();
        Self::new(h, w, data)
    }
}

/// A full-resolution label map. Labels are cluster indices before ground-truth
/// assignment and dataset class ids after; [`IGNORE`] marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "segmentation map ({height}, {width}) needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_array(array: &ArrayFile) -> Result<Self> {
        let [h, w] = array.shape()[..] else {
            return Err(Error::shape(format!(
                "label arrays must be rank 2, got {:?}",
                array.shape()
            )));
        };
        let labels = array
            .to_i64()?
            .into_iter()
            .map(|v| {
                u32::try_from(v).map_err(|_| Error::LabelOutOfRange {
                    label: u32::MAX,
                    num_labels: IGNORE + 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, labels)
    }

    pub fn to_array(&self) -> ArrayFile {
        ArrayFile::from_i32(
            vec![self.height, self.width],
            self.labels.iter().map(|&l| l as i32).collect(),
        )
        .expect("map shape matches its labels")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn map_labels(&self, f: impl Fn(u32) -> u32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            labels: self.labels.iter().map(|&l| f(l)).collect(),
        }
    }
}

/// Source index sampled by nearest-neighbor resampling from `src` cells to
/// `dst` cells along one axis.
pub fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    i * src / dst
}

fn resample<T: Copy>(values: &[T], (h, w): (usize, usize), (th, tw): (usize, usize)) -> Vec<T> {
    let cols: Vec<usize> = (0..tw).map(|x| nearest_source(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let row = &values[nearest_source(y, h, th) * w..][..w];
        out.extend(cols.iter().map(|&x| row[x]));
    }
    out
}

/// Grids that can be resampled by nearest neighbor.
pub trait Resample: Sized {
    fn grid_dims(&self) -> (usize, usize);
    /// Nearest-neighbor resampling to any positive target size.
    fn resample_nearest(&self, height: usize, width: usize) -> Self;
}

impl Resample for CoarseMask {
    fn grid_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn resample_nearest(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            num_labels: self.num_labels,
            labels: resample(&self.labels, self.dims(), (height, width)),
        }
    }
}

impl Resample for BinaryMask {
    fn grid_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn resample_nearest(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: resample(&self.data, self.dims(), (height, width)),
        }
    }
}

impl Resample for SegmentationMap {
    fn grid_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn resample_nearest(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: resample(&self.labels, self.dims(), (height, width)),
        }
    }
}

/// Nearest-neighbor upsampling to a full-resolution target, which must be at
/// least as large as the source in both dimensions.
pub fn upsample_fullres<T: Resample>(grid: &T, height: usize, width: usize) -> Result<T> {
    let (h, w) = grid.grid_dims();
    if height < h || width < w || height == 0 || width == 0 {
        return Err(Error::InvalidTarget {
            source_dims: (h, w),
            target: (height, width),
        });
    }
    Ok(grid.resample_nearest(height, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn two_by_two_upsamples_to_blocks() {
        let m = SegmentationMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let up = upsample_fullres(&m, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = vec![
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 3, 3,
            2, 2, 3, 3,
        ];
        assert_eq!(up.labels(), &expected[..]);
    }

    #[test]
    fn identity_target_is_unchanged() {
        let m = CoarseMask::new(2, 3, 4, vec![0, 1, 2, 3, 2, 1]).unwrap();
        assert_eq!(upsample_fullres(&m, 2, 3).unwrap(), m);
    }

    #[test]
    fn three_to_seven_matches_index_formula() {
        let labels: Vec<u32> = (0..9).collect();
        let m = SegmentationMap::new(3, 3, labels.clone()).unwrap();
        let up = upsample_fullres(&m, 7, 7).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                // floor(i * 3 / 7) computed in floating point
                let sy = (y as f64 * 3.0 / 7.0).floor() as usize;
                let sx = (x as f64 * 3.0 / 7.0).floor() as usize;
                assert_eq!(up.get(y, x), labels[sy * 3 + sx]);
            }
        }
        let before: BTreeSet<_> = m.labels().iter().collect();
        let after: BTreeSet<_> = up.labels().iter().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn smaller_target_is_invalid() {
        let m = SegmentationMap::filled(4, 4, 0);
        assert!(matches!(
            upsample_fullres(&m, 2, 8),
            Err(Error::InvalidTarget { .. })
        ));
    }

    #[test]
    fn coarse_mask_rejects_out_of_range_labels() {
        assert!(matches!(
            CoarseMask::new(1, 2, 2, vec![0, 2]),
            Err(Error::LabelOutOfRange { label: 2, num_labels: 2 })
        ));
    }

    #[test]
    fn one_hot_slices_partition_the_grid() {
        let m = CoarseMask::new(2, 3, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let slices: Vec<_> = (0..3).map(|l| m.binary(l)).collect();
        for cell in 0..6 {
            let hits = slices.iter().filter(|s| s.data()[cell]).count();
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn feature_grid_rejects_nan() {
        assert!(matches!(
            FeatureGrid::new(1, 1, 2, vec![0.0, f32::NAN]),
            Err(Error::NonFiniteInput)
        ));
    }
}
