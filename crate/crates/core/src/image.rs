//! RGB images with channel values in `[0, 1]`.

use std::io::Cursor;

use image::{imageops::FilterType, ImageFormat, Rgb, Rgb32FImage, RgbImage};

use crate::error::{CoreError, Result};

pub const CHANNELS: usize = 3;

/// Row-major `height × width × 3` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::InvalidImage(format!("empty image {height}×{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(CoreError::InvalidImage(format!(
                "{height}×{width}×{CHANNELS} image needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::InvalidImage(format!("channel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Decodes an 8-bit raster (PNG or anything the decoder recognises) and
    /// maps channels to `[0, 1]`.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| CoreError::InvalidImage(e.to_string()))?;
        let rgb = img.to_rgb8();
        Self::from_rgb8(&rgb)
    }

    pub fn from_rgb8(rgb: &RgbImage) -> Result<Self> {
        let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self::new(rgb.height() as usize, rgb.width() as usize, data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            Rgb(p.map(|v| (v * 255.0).round() as u8))
        })
    }

    pub fn to_png_bytes(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, ImageFormat::Png)
            .expect("in-memory PNG encoding");
        out.into_inner()
    }

    /// Bilinear resize; returns a clone when the size already matches.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        if height == 0 || width == 0 {
            return Err(CoreError::InvalidImage(format!("cannot resize to {height}×{width}")));
        }
        let src = Rgb32FImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer matches dimensions");
        let dst = image::imageops::resize(&src, width as u32, height as u32, FilterType::Triangle);
        let data = dst.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, data)
    }

    /// Largest per-channel population variance.
    pub fn max_channel_variance(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        (0..CHANNELS)
            .map(|c| {
                let vals = self.data.iter().skip(c).step_by(CHANNELS).map(|&v| v as f64);
                let mean = vals.clone().sum::<f64>() / n;
                vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n
            })
            .fold(0.0, f64::max)
    }
}
