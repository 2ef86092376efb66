//! PNG and array-backed image I/O: RGB frames, label maps and indexed-palette
//! outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::arrayio::{read_array, read_header, write_array, ArrayFile, ArrayData};
use crate::error::{Error, Result};
use crate::grid::SegmentationMap;

/// An RGB image stored as `height × width × 3` floats, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "RGB image ({height}, {width}) needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Quantize to 8-bit, clamping to `[0, 1]` first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn is_npy(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("npy"))
}

fn open_png(path: &Path) -> Result<png::Decoder<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(png::Decoder::new(BufReader::new(file)))
}

fn png_error(path: &Path, err: impl std::fmt::Display) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}

/// `(height, width)` of an image or label file, reading headers only.
pub fn image_dims(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    if is_npy(path) {
        let header = read_header(path)?;
        return match header.shape[..] {
            [h, w] | [h, w, _] => Ok((h, w)),
            _ => Err(Error::shape(format!(
                "{} has shape {:?}, expected (H, W) or (H, W, 3)",
                path.display(),
                header.shape
            ))),
        };
    }
    let reader = open_png(path)?.read_info().map_err(|e| png_error(path, e))?;
    let info = reader.info();
    Ok((info.height as usize, info.width as usize))
}

/// Read an RGB frame from a PNG (any 8-bit color type) or a uint8
/// `(H, W, 3)` array file.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if is_npy(path) {
        let array = read_array(path)?;
        let [h, w, 3] = array.shape()[..] else {
            return Err(Error::shape(format!(
                "{} has shape {:?}, expected (H, W, 3)",
                path.display(),
                array.shape()
            )));
        };
        return match array.data() {
            ArrayData::U8(bytes) => RgbImage::from_u8(h, w, bytes),
            ArrayData::F32(values) => RgbImage::new(h, w, values.clone()),
            ArrayData::I32(_) => Err(Error::UnsupportedDtype("<i4 for an RGB image".into())),
        };
    }
    let mut decoder = open_png(path)?;
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_error(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_error(path, "palette was not expanded")),
    };
    let mut rgb = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let line = &buf[y * stride..];
        for x in 0..w {
            let px = &line[x * channels..];
            if channels < 3 {
                rgb.extend_from_slice(&[px[0]; 3]);
            } else {
                rgb.extend_from_slice(&px[..3]);
            }
        }
    }
    RgbImage::from_u8(h, w, &rgb)
}

pub fn write_rgb_png(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_error(path, e))?;
    writer
        .write_image_data(&image.to_u8())
        .map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

/// Read a label map: an 8-bit grayscale or indexed PNG (raw indices, palette
/// ignored) or a uint8/int32 `(H, W)` array file.
pub fn read_label_map(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let path = path.as_ref();
    if is_npy(path) {
        return SegmentationMap::from_array(&read_array(path)?);
    }
    let mut decoder = open_png(path)?;
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| png_error(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_error(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(path, e))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(
            info.color_type,
            png::ColorType::Grayscale | png::ColorType::Indexed
        )
    {
        return Err(png_error(
            path,
            "label maps must be 8-bit grayscale or indexed PNGs",
        ));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        labels.extend(buf[y * info.line_size..][..w].iter().map(|&b| b as u32));
    }
    SegmentationMap::new(h, w, labels)
}

/// Write a label map as an indexed PNG whose palette entry `i` is
/// `palette(i)`. Labels above 255 cannot be stored.
pub fn write_indexed_png(
    path: impl AsRef<Path>,
    map: &SegmentationMap,
    palette: impl Fn(u32) -> [u8; 3],
) -> Result<()> {
    let path = path.as_ref();
    let indices = map
        .labels()
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
                label: l,
                num_labels: 256,
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let table: Vec<u8> = (0..256).flat_map(&palette).collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width() as u32, map.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(table);
    let mut writer = encoder.write_header().map_err(|e| png_error(path, e))?;
    writer
        .write_image_data(&indices)
        .map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

/// Write a label map as an 8-bit grayscale PNG.
pub fn write_gray_png(path: impl AsRef<Path>, map: &SegmentationMap) -> Result<()> {
    let path = path.as_ref();
    let indices = map
        .labels()
        .iter()
        .map(|&l| {
            u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
                label: l,
                num_labels: 256,
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.width() as u32, map.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_error(path, e))?;
    writer
        .write_image_data(&indices)
        .map_err(|e| png_error(path, e))?;
    writer.finish().map_err(|e| png_error(path, e))
}

/// Store an RGB image as a uint8 `(H, W, 3)` array file.
pub fn write_rgb_array(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    let array = ArrayFile::from_u8(vec![image.height, image.width, 3], image.to_u8())?;
    write_array(path, &array)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_png_keeps_raw_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let map = SegmentationMap::new(2, 3, vec![0, 1, 2, 3, 255, 7]).unwrap();
        write_indexed_png(&path, &map, |i| [i as u8, 0, 0]).unwrap();
        assert_eq!(read_label_map(&path).unwrap(), map);
        assert_eq!(image_dims(&path).unwrap(), (2, 3));
    }

    #[test]
    fn gray_png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let map = SegmentationMap::new(3, 2, vec![5, 4, 3, 2, 1, 0]).unwrap();
        write_gray_png(&path, &map).unwrap();
        assert_eq!(read_label_map(&path).unwrap(), map);
    }

    #[test]
    fn rgb_png_round_trips_through_u8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let bytes: Vec<u8> = (0..2 * 4 * 3).map(|i| (i * 10) as u8).collect();
        let img = RgbImage::from_u8(2, 4, &bytes).unwrap();
        write_rgb_png(&path, &img).unwrap();
        let back = read_rgb(&path).unwrap();
        assert_eq!(back.to_u8(), bytes);
    }

    #[test]
    fn labels_above_255_cannot_be_written() {
        let dir = tempfile::tempdir().unwrap();
        let map = SegmentationMap::new(1, 1, vec![300]).unwrap();
        assert!(write_indexed_png(dir.path().join("x.png"), &map, |_| [0; 3]).is_err());
    }
}
