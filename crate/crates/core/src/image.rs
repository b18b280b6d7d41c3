//! Planar float images used throughout the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A channel-major (CHW) image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", channels, height, width),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    /// Bilinear sample at continuous pixel coordinates, clamping to the border.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f32 {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
        let bottom = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(1, self.height, self.width);
        let plane = self.height * self.width;
        for i in 0..plane {
            let r = self.data[i];
            let g = self.data[plane + i];
            let b = self.data[2 * plane + i];
            out.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len());
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        (s / self.data.len().max(1) as f64) as f32
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::CorruptImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Image {
        let color = img.color();
        if color.has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let (w, h) = (w as usize, h as usize);
            let mut out = Image::new(3, h, w);
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    out.set(c, y as usize, x as usize, p[c] as f32 / 255.0);
                }
            }
            out
        } else {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            let mut out = Image::new(1, h as usize, w as usize);
            for (x, y, p) in g.enumerate_pixels() {
                out.set(0, y as usize, x as usize, p[0] as f32 / 255.0);
            }
            out
        }
    }

    /// Expand a single-channel image to three identical channels.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_fn(w, h, |x, y| image::Luma([q(self.get(0, y as usize, x as usize))]))
                .save(path),
            3 => image::RgbImage::from_fn(w, h, |x, y| {
                image::Rgb([
                    q(self.get(0, y as usize, x as usize)),
                    q(self.get(1, y as usize, x as usize)),
                    q(self.get(2, y as usize, x as usize)),
                ])
            })
            .save(path),
            n => {
                return Err(Error::Unsupported(format!("cannot save {n}-channel image")));
            }
        };
        res.map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::CorruptImage {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
    }
}
