//! Binary 8-bit PNM images: P6 for colour, P5 for greyscale masks.

use std::path::Path;

use patchscope_core::Tensor;

use crate::error::{Error, Result};
use crate::{read_file, write_file};

/// Decoded raster: `channels` is 1 (P5) or 3 (P6), samples interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn rgb(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: 3,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("pnm: truncated header".into()));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Format(format!("pnm: unsupported magic {m:?} (want P5 or P6)"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("pnm: bad header field {s:?}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("pnm: only 8-bit images supported, maxval {maxval}")));
        }
        let len = width * height * channels;
        let pixels = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::Format(format!("pnm: expected {len} raster bytes")))?
            .to_vec();
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Colour image as a `[3, H, W]` tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.channels != 3 {
            return Err(Error::Format("expected a colour (P6) image".into()));
        }
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; plane * 3];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Ok(Tensor::new(vec![3, self.height, self.width], data)?)
    }

    /// Binary `[H, W]` mask: grey levels above 127 are foreground.
    pub fn to_mask(&self) -> Result<Tensor> {
        if self.channels != 1 {
            return Err(Error::Format("expected a greyscale (P5) mask".into()));
        }
        let data = self.pixels.iter().map(|&p| if p > 127 { 1.0 } else { 0.0 }).collect();
        Ok(Tensor::new(vec![self.height, self.width], data)?)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::Format(format!("cannot write tensor of shape {:?} as an image", t.shape())));
        };
        if c != 3 && c != 1 {
            return Err(Error::Format(format!("cannot write {c}-channel tensor as an image")));
        }
        let plane = h * w;
        let mut pixels = vec![0u8; plane * c];
        for i in 0..plane {
            for k in 0..c {
                pixels[i * c + k] = quantize(t.data()[k * plane + i]);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            channels: c,
            pixels,
        })
    }

    pub fn mask_from_tensor(t: &Tensor) -> Result<Self> {
        let &[h, w] = t.shape() else {
            return Err(Error::Format(format!("mask must be 2-d, got {:?}", t.shape())));
        };
        Ok(Self {
            width: w,
            height: h,
            channels: 1,
            pixels: t.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect(),
        })
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        if y < self.height && x < self.width {
            let i = (y * self.width + x) * self.channels;
            self.pixels[i..i + self.channels].copy_from_slice(&rgb[..self.channels]);
        }
    }

    pub fn get(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Draws a 1-pixel rectangle outline.
    pub fn outline(&mut self, top: usize, left: usize, height: usize, width: usize, rgb: [u8; 3]) {
        if height == 0 || width == 0 {
            return;
        }
        let (bottom, right) = (top + height - 1, left + width - 1);
        for x in left..=right {
            self.set(top, x, rgb);
            self.set(bottom, x, rgb);
        }
        for y in top..=bottom {
            self.set(y, left, rgb);
            self.set(y, right, rgb);
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    Raster::decode(&read_file(path)?)
        .and_then(|r| r.to_tensor())
        .map_err(|e| in_file(path, e))
}

pub fn read_mask(path: &Path) -> Result<Tensor> {
    Raster::decode(&read_file(path)?)
        .and_then(|r| r.to_mask())
        .map_err(|e| in_file(path, e))
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &Raster::from_tensor(t)?.encode())
}

pub fn write_mask(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &Raster::mask_from_tensor(t)?.encode())
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}
