//! Grayscale image decoding and conversion to network input tensors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::{ColorType, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel means on the [0, 1] scale, subtracted after replication.
pub const CHANNEL_MEANS: [f32; 3] = [0.406, 0.456, 0.485];

/// The seven expression classes, in canonical (alphabetical) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expression {
    Anger,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

impl Expression {
    pub const ALL: [Expression; 7] = [
        Expression::Anger,
        Expression::Disgust,
        Expression::Fear,
        Expression::Happy,
        Expression::Neutral,
        Expression::Sad,
        Expression::Surprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Expression::Anger => "anger",
            Expression::Disgust => "disgust",
            Expression::Fear => "fear",
            Expression::Happy => "happy",
            Expression::Neutral => "neutral",
            Expression::Sad => "sad",
            Expression::Surprise => "surprise",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::UnknownLabel {
                found: s.to_string(),
                valid: Self::ALL.map(Expression::name).join(", "),
            })
    }
}

/// An 8-bit grayscale image with an optional class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub label: Option<Expression>,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, height: usize, width: usize, pixels: Vec<u8>, label: Option<Expression>) -> Result<Self> {
        let id = id.into();
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage {
                id,
                reason: format!("empty image ({height}x{width})"),
            });
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidImage {
                id,
                reason: format!("{} pixels for a {height}x{width} image", pixels.len()),
            });
        }
        Ok(Self {
            id,
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn source_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Decodes a PGM or 8-bit grayscale PNG file.
    pub fn from_file(path: &Path, id: impl Into<String>, label: Option<Expression>) -> Result<Self> {
        let id = id.into();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let (height, width, pixels) = decode_gray8(&bytes).map_err(|reason| Error::InvalidImage { id: id.clone(), reason })?;
        Self::new(id, height, width, pixels, label)
    }
}

/// Returns `(height, width, pixels)` for 8-bit grayscale PGM or PNG data.
pub fn decode_gray8(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(format!("unsupported container {format:?}; expected PGM or PNG"));
    }
    let img = ImageReader::with_format(std::io::Cursor::new(bytes), format)
        .decode()
        .map_err(|e| e.to_string())?;
    if img.color() != ColorType::L8 {
        return Err(format!("expected 8-bit grayscale, found {:?}", img.color()));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok((h as usize, w as usize, gray.into_raw()))
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f32], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let ys = axis_taps(height, out_h);
    let xs = axis_taps(width, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        let r0 = &src[y0 * width..(y0 + 1) * width];
        let r1 = &src[y1 * width..(y1 + 1) * width];
        for &(x0, x1, tx) in &xs {
            let top = f64::from(r0[x0]) * (1.0 - tx) + f64::from(r0[x1]) * tx;
            let bottom = f64::from(r1[x0]) * (1.0 - tx) + f64::from(r1[x1]) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Scales to [0, 1] and resizes to `size`x`size`, single channel.
pub fn normalize_and_resize(sample: &ImageSample, size: usize) -> Result<Vec<f32>> {
    if sample.height == 0 || sample.width == 0 || sample.pixels.is_empty() {
        return Err(Error::InvalidImage {
            id: sample.id.clone(),
            reason: "empty image".into(),
        });
    }
    let scaled: Vec<f32> = sample.pixels.iter().map(|p| f32::from(*p) / 255.0).collect();
    Ok(resize_bilinear(&scaled, sample.height, sample.width, size, size))
}

/// Produces the `(3, size, size)` network input for a sample.
pub fn preprocess(sample: &ImageSample, size: usize) -> Result<Tensor> {
    let plane = normalize_and_resize(sample, size)?;
    let mut data = Vec::with_capacity(3 * plane.len());
    for mean in CHANNEL_MEANS {
        data.extend(plane.iter().map(|v| v - mean));
    }
    Tensor::new(vec![3, size, size], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> ImageSample {
        let px = (0..h * w).map(|i| ((i * 7) % 256) as u8).collect();
        ImageSample::new("g", h, w, px, None).unwrap()
    }

    #[test]
    fn labels_parse_in_canonical_order() {
        let names: Vec<_> = Expression::ALL.iter().map(|e| e.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!("happy".parse::<Expression>().unwrap(), Expression::Happy);
        let err = "surprised".parse::<Expression>().unwrap_err().to_string();
        assert!(err.contains("surprise"), "{err}");
    }

    #[test]
    fn empty_image_rejected() {
        assert!(ImageSample::new("e", 0, 4, vec![], None).is_err());
    }

    #[test]
    fn output_shape_and_replicated_channels() {
        let t = preprocess(&gradient(256, 256), 224).unwrap();
        assert_eq!(t.shape(), &[3, 224, 224]);
        let n = 224 * 224;
        let d = t.data();
        for i in (0..n).step_by(997) {
            assert!(((d[i] + CHANNEL_MEANS[0]) - (d[n + i] + CHANNEL_MEANS[1])).abs() < 1e-6);
            assert!(((d[i] + CHANNEL_MEANS[0]) - (d[2 * n + i] + CHANNEL_MEANS[2])).abs() < 1e-6);
        }
    }

    #[test]
    fn white_image_is_one_minus_mean() {
        let s = ImageSample::new("w", 480, 640, vec![255; 480 * 640], None).unwrap();
        let t = preprocess(&s, 224).unwrap();
        for (c, chunk) in t.data().chunks(224 * 224).enumerate() {
            assert!(chunk.iter().all(|v| (*v - (1.0 - CHANNEL_MEANS[c])).abs() < 1e-6));
        }
    }

    #[test]
    fn resize_is_identity_at_same_size() {
        let s = gradient(224, 224);
        let plane = normalize_and_resize(&s, 224).unwrap();
        for (a, p) in plane.iter().zip(&s.pixels) {
            assert!((a - f32::from(*p) / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_pixel_upsamples_to_constant() {
        let s = ImageSample::new("p", 1, 1, vec![51], None).unwrap();
        let plane = normalize_and_resize(&s, 8).unwrap();
        assert!(plane.iter().all(|v| (*v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn png_and_pgm_decode_to_same_grid() {
        let s = gradient(13, 9);
        let img = image::GrayImage::from_raw(9, 13, s.pixels.clone()).unwrap();
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png).unwrap();
        let mut pgm = format!("P5\n9 13\n255\n").into_bytes();
        pgm.extend_from_slice(&s.pixels);
        assert_eq!(decode_gray8(&png).unwrap(), (13, 9, s.pixels.clone()));
        assert_eq!(decode_gray8(&pgm).unwrap(), (13, 9, s.pixels));
    }

    #[test]
    fn rgb_png_rejected() {
        let img = image::RgbImage::new(2, 2);
        let mut png = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut png), ImageFormat::Png).unwrap();
        assert!(decode_gray8(&png).unwrap_err().contains("grayscale"));
    }
}
