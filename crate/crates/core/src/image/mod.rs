//! Image side of the pipeline: decoding, aspect-preserving resize,
//! augmentation, patchification, patch sampling, and position-grid
//! interpolation.

pub mod augment;
pub mod io;
pub mod patch;
pub mod posgrid;
pub mod resize;

pub use augment::{rand_augment, AugOp, AugPolicy};
pub use patch::{patchify, sample_patches, unpatchify, PatchBatch};
pub use posgrid::interpolate_pos_grid;
pub use resize::resize_keep_aspect;

use crate::error::{Error, Result};

/// RGB image with values in `[0, 1]`, stored channel-major `[3, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Image(format!("zero-sized image {h}x{w}")));
        }
        Ok(ImageTensor {
            h,
            w,
            data: vec![0.0; 3 * h * w],
        })
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut img = ImageTensor::new(h, w)?;
        for c in 0..3 {
            let plane = &mut img.data[c * h * w..(c + 1) * h * w];
            plane.fill(rgb[c]);
        }
        Ok(img)
    }

    pub fn from_data(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Image(format!("zero-sized image {h}x{w}")));
        }
        if data.len() != 3 * h * w {
            return Err(Error::Image(format!(
                "data length {} does not match 3x{h}x{w}",
                data.len()
            )));
        }
        Ok(ImageTensor { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// One channel plane as a slice.
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    pub fn clamp_01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample at fractional coordinates with a constant fill
    /// outside the canvas.
    pub fn sample_bilinear(&self, c: usize, y: f64, x: f64, fill: f64) -> f64 {
        if y <= -1.0 || x <= -1.0 || y >= self.h as f64 || x >= self.w as f64 {
            return fill;
        }
        let y0 = y.floor();
        let x0 = x.floor();
        let dy = y - y0;
        let dx = x - x0;
        let mut acc = 0.0;
        for (iy, wy) in [(y0 as i64, 1.0 - dy), (y0 as i64 + 1, dy)] {
            for (ix, wx) in [(x0 as i64, 1.0 - dx), (x0 as i64 + 1, dx)] {
                let wgt = wy * wx;
                if wgt == 0.0 {
                    continue;
                }
                let v = if iy < 0 || ix < 0 || iy >= self.h as i64 || ix >= self.w as i64 {
                    fill
                } else {
                    self.get(c, iy as usize, ix as usize)
                };
                acc += wgt * v;
            }
        }
        acc
    }

    /// Luma (Rec. 601) of a pixel.
    pub fn luma(&self, y: usize, x: usize) -> f64 {
        0.299 * self.get(0, y, x) + 0.587 * self.get(1, y, x) + 0.114 * self.get(2, y, x)
    }
}
