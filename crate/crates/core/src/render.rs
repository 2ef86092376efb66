//! Label palettes and overlays for qualitative output. Colors only identify
//! label indices; they carry no class semantics.

use crate::error::{Error, Result};
use crate::grid::{upsample_fullres, SegmentationMap};
use crate::imageio::RgbImage;

/// Default palette: the bit-interleaved colormap used by PASCAL VOC style
/// label images. Label 0 is black, 1 is `(128, 0, 0)`, 3 is `(128, 128, 0)`
/// and the ignore label 255 is `(224, 224, 192)`.
pub fn palette_color(label: u32) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = label;
    for shift in (0..8).rev() {
        for (channel, value) in rgb.iter_mut().enumerate() {
            *value |= (((c >> channel) & 1) as u8) << shift;
        }
        c >>= 3;
    }
    rgb
}

/// Alpha-blend label colors over an image. A coarser map is upsampled by
/// nearest neighbor first.
pub fn render_overlay(
    image: &RgbImage,
    map: &SegmentationMap,
    alpha: f32,
    palette: impl Fn(u32) -> [u8; 3],
) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    let map = if map.dims() == image.dims() {
        map.clone()
    } else {
        upsample_fullres(map, image.height(), image.width()).map_err(|_| {
            Error::shape(format!(
                "map {:?} cannot be upsampled onto image {:?}",
                map.dims(),
                image.dims()
            ))
        })?
    };
    let data = image
        .data()
        .chunks_exact(3)
        .zip(map.labels())
        .flat_map(|(px, &l)| {
            let color = palette(l);
            (0..3).map(move |c| px[c] * (1.0 - alpha) + (color[c] as f32 / 255.0) * alpha)
        })
        .collect();
    RgbImage::new(image.height(), image.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_palette_entries() {
        assert_eq!(palette_color(0), [0, 0, 0]);
        assert_eq!(palette_color(1), [128, 0, 0]);
        assert_eq!(palette_color(2), [0, 128, 0]);
        assert_eq!(palette_color(3), [128, 128, 0]);
        assert_eq!(palette_color(255), [224, 224, 192]);
    }

    #[test]
    fn overlay_alpha_extremes() {
        let img = RgbImage::filled(2, 2, [0.25, 0.5, 0.75]);
        let map = SegmentationMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(render_overlay(&img, &map, 0.0, palette_color).unwrap(), img);
        let full = render_overlay(&img, &map, 1.0, palette_color).unwrap();
        assert_eq!(full.pixel(0, 1), [128.0 / 255.0, 0.0, 0.0]);
        assert_eq!(full.pixel(1, 1), [128.0 / 255.0, 128.0 / 255.0, 0.0]);
    }

    #[test]
    fn coarse_map_is_upsampled() {
        let img = RgbImage::filled(4, 4, [0.0; 3]);
        let map = SegmentationMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let out = render_overlay(&img, &map, 1.0, palette_color).unwrap();
        assert_eq!(out.pixel(3, 3), [128.0 / 255.0, 128.0 / 255.0, 0.0]);
        let bigger = SegmentationMap::filled(8, 8, 0);
        assert!(matches!(
            render_overlay(&img, &bigger, 0.5, palette_color),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
