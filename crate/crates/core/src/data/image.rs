//! RGB images, the PPM codec and bilinear resampling.

use std::path::Path;

use mvkd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// An RGB image stored planar (`[3, height, width]`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidParameter(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let hw = width * height;
        let data = rgb.iter().flat_map(|&v| std::iter::repeat_n(v, hw)).collect();
        Image { width, height, data }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let hw = self.width * self.height;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let hw = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }

    /// Luma (BT.601 weights) per pixel.
    pub fn grayscale(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        (0..hw)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[hw + i] + 0.114 * self.data[2 * hw + i])
            .collect()
    }

    /// The image as a `[3, H, W]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Ok(Tensor::from_vec(self.data.clone(), &[3, self.height, self.width])?)
    }

    /// Binary PPM (P6, maxval 255).
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        let hw = self.width * self.height;
        out.reserve(3 * hw);
        for i in 0..hw {
            for c in 0..3 {
                out.push(quantize(self.data[c * hw + i]));
            }
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_ppm()).map_err(io_err(path))
    }

    /// Parse a P6 or P3 PPM with any maxval up to 65535.
    pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or("missing magic")?;
        let binary = match magic {
            b"P6" => true,
            b"P3" => false,
            other => return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(other))),
        };
        let mut header = [0usize; 3];
        for (slot, what) in header.iter_mut().zip(["width", "height", "maxval"]) {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"))?;
            *slot = parse_uint(tok).ok_or_else(|| format!("invalid {what}"))?;
        }
        let [width, height, maxval] = header;
        if width == 0 || height == 0 {
            return Err(format!("degenerate {width}x{height} image"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(format!("maxval {maxval} out of range"));
        }
        let hw = width.checked_mul(height).ok_or("image too large")?;
        let scale = 1.0 / maxval as f32;
        let mut data = vec![0.0f32; 3 * hw];
        let mut store = |k: usize, v: usize| -> std::result::Result<(), String> {
            if v > maxval {
                return Err(format!("sample {v} exceeds maxval {maxval}"));
            }
            data[(k % 3) * hw + k / 3] = v as f32 * scale;
            Ok(())
        };
        if binary {
            // exactly one whitespace byte separates the header from the raster
            pos += 1;
            let wide = maxval > 255;
            let need = 3 * hw * if wide { 2 } else { 1 };
            let raster = bytes.get(pos..pos + need).ok_or_else(|| {
                format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos))
            })?;
            for k in 0..3 * hw {
                let v = if wide {
                    u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as usize
                } else {
                    raster[k] as usize
                };
                store(k, v)?;
            }
        } else {
            for k in 0..3 * hw {
                let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("raster truncated at sample {k}"))?;
                store(k, parse_uint(tok).ok_or("invalid sample")?)?;
            }
        }
        Ok(Image { width, height, data })
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::DecodeError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Image::decode_ppm(&bytes).map_err(|reason| Error::DecodeError {
            path: path.to_path_buf(),
            reason,
        })
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_uint(tok: &[u8]) -> Option<usize> {
    std::str::from_utf8(tok).ok()?.parse().ok()
}

/// Resample `channels` planes of `h x w` to `oh x ow` with half-pixel
/// centres and edge clamping (bilinear, corners not aligned).
pub fn resize_bilinear(src: &[f32], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (ty, tx) = (taps(h, oh), taps(w, ow));
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Per-channel `(x - mean) / std` applied after resizing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

/// Bilinear resize to `size x size` and optional per-channel normalisation.
/// Without normalisation every value stays in `[0, 1]`.
pub fn preprocess(image: &Image, size: usize, normalization: Option<&Normalization>) -> Result<Tensor<f32>> {
    if size < 8 {
        return Err(Error::InvalidParameter(format!("target size must be at least 8, got {size}")));
    }
    if image.width == 0 || image.height == 0 || image.data.is_empty() {
        return Err(Error::DecodeError {
            path: "<memory>".into(),
            reason: "image has no pixels".into(),
        });
    }
    let mut data = if (image.height, image.width) == (size, size) {
        image.data.clone()
    } else {
        resize_bilinear(&image.data, 3, image.height, image.width, size, size)
    };
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    if let Some(n) = normalization {
        if n.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter(format!("normalisation std must be positive, got {:?}", n.std)));
        }
        for (c, plane) in data.chunks_mut(size * size).enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v - n.mean[c]) / n.std[c]);
        }
    }
    Ok(Tensor::from_vec(data, &[3, size, size])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_at_8_bits() {
        let data: Vec<f32> = (0..3 * 6).map(|i| (i * 14) as f32 / 255.0).collect();
        let img = Image::new(3, 2, data).unwrap();
        let back = Image::decode_ppm(&img.encode_ppm()).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn ascii_ppm_with_comments() {
        let src = b"P3\n# two pixels\n2 1\n# depth\n15\n15 0 0   0 15 15\n";
        let img = Image::decode_ppm(src).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(1, 0), [0.0, 1.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_binary() {
        let mut src = b"P6 1 1 65535\n".to_vec();
        src.extend_from_slice(&[0xFF, 0xFF, 0x80, 0x00, 0x00, 0x00]);
        let img = Image::decode_ppm(&src).unwrap();
        assert_eq!(img.pixel(0, 0)[0], 1.0);
        assert!((img.pixel(0, 0)[1] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn malformed_ppm_is_rejected() {
        assert!(Image::decode_ppm(b"P5 1 1 255\n\0").is_err());
        assert!(Image::decode_ppm(b"P6 2 2 255\n\0\0\0").is_err());
        assert!(Image::decode_ppm(b"P6 0 2 255\n").is_err());
        assert!(Image::decode_ppm(b"P3 1 1 9\n10 0 0").is_err());
    }
}
