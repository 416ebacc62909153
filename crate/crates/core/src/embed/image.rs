// SPDX-License-Identifier: Apache-2.0

use image::ImageFormat;

use crate::error::{Error, Result};

/// Packed 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(ImageTensor {
            width,
            height,
            data,
        })
    }

    /// Every pixel set to `rgb`.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        ImageTensor::from_fn(self.width, self.height, |x, y| {
            self.pixel(self.width - 1 - x, y)
        })
        .expect("same shape")
    }

    /// Planar `[3, H, W]` floats in [0, 1].
    pub fn to_chw_unit(&self) -> Vec<f32> {
        let plane = self.width as usize * self.height as usize;
        let mut out = vec![0.0f32; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        out
    }

    /// Encodes as PNG.
    pub fn to_png(&self) -> Vec<u8> {
        self.encode(ImageFormat::Png)
    }

    pub fn to_jpeg(&self) -> Vec<u8> {
        self.encode(ImageFormat::Jpeg)
    }

    fn encode(&self, format: ImageFormat) -> Vec<u8> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, format)
            .expect("encoding an in-memory RGB8 image cannot fail");
        out.into_inner()
    }
}

/// Decodes PNG or JPEG bytes. Other recognizable formats are
/// `UnsupportedFormat`; anything unreadable is `DecodeFailure`.
pub fn decode_image(raw: &[u8]) -> Result<ImageTensor> {
    let format = image::guess_format(raw)
        .map_err(|e| Error::DecodeFailure(format!("unrecognized image data: {e}")))?;
    match format {
        ImageFormat::Png | ImageFormat::Jpeg => {}
        other => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
    }
    let img = image::load_from_memory_with_format(raw, format)
        .map_err(|e| Error::DecodeFailure(e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    ImageTensor::new(w, h, img.into_raw())
}

/// Bilinear resampling with half-pixel centers and edge clamping.
/// Same-size input is returned unchanged.
pub fn resize_bilinear(src: &ImageTensor, width: u32, height: u32) -> ImageTensor {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let xs = axis_taps(src.width, width);
    let ys = axis_taps(src.height, height);
    let sw = src.width as usize;
    let mut data = Vec::with_capacity(width as usize * height as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| src.data[(y * sw + x) * 3 + c] as f32;
                let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
                let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
                let v = top + (bottom - top) * fy;
                data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageTensor {
        width,
        height,
        data,
    }
}

fn axis_taps(src: u32, dst: u32) -> Vec<(usize, usize, f32)> {
    let scale = src as f32 / dst as f32;
    let last = src as usize - 1;
    (0..dst)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            (i0, i1, s - i0 as f32)
        })
        .collect()
}
