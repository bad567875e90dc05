//! Dense image containers: interleaved f64 images and boolean masks.

use crate::error::{Result, SvsError};

/// Row-major, channel-interleaved f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels >= 1, "images need at least one channel");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, values: &[f64]) -> Self {
        let channels = values.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(values);
        }
        Self::from_vec(width, height, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn expect_shape(&self, other: &ImageBuf) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SvsError::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuf {
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integer + 0.5). Taps outside the image read as zero; `inside` is false
    /// if any tap fell outside.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        let xf = u - 0.5;
        let yf = v - 0.5;
        let x0 = xf.floor();
        let y0 = yf.floor();
        let ax = xf - x0;
        let ay = yf - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        out.fill(0.0);
        let mut inside = true;
        for (dy, wy) in [(0i64, 1.0 - ay), (1i64, ay)] {
            for (dx, wx) in [(0i64, 1.0 - ax), (1i64, ax)] {
                let x = x0 + dx;
                let y = y0 + dy;
                let w = wx * wy;
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    inside = false;
                    continue;
                }
                let p = self.pixel(x as usize, y as usize);
                for c in 0..self.channels {
                    out[c] += w * p[c];
                }
            }
        }
        inside
    }
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_at_pixel_center_is_exact() {
        let mut img = ImageBuf::new(4, 4, 2);
        img.set(2, 1, 0, 0.7);
        img.set(2, 1, 1, -0.3);
        let mut out = [0.0; 2];
        let inside = img.sample_bilinear(2.5, 1.5, &mut out);
        assert!(inside);
        assert_eq!(out, [0.7, -0.3]);
    }

    #[test]
    fn bilinear_outside_reports_exit() {
        let img = ImageBuf::new(4, 4, 1);
        let mut out = [0.0];
        assert!(!img.sample_bilinear(0.2, 2.0, &mut out));
        assert!(!img.sample_bilinear(3.9, 2.0, &mut out));
        assert!(img.sample_bilinear(0.5, 0.5, &mut out));
    }

    #[test]
    fn bilinear_interpolates_linearly() {
        let mut img = ImageBuf::new(2, 1, 1);
        img.set(0, 0, 0, 1.0);
        img.set(1, 0, 0, 3.0);
        let mut out = [0.0];
        img.sample_bilinear(1.0, 0.5, &mut out);
        assert!((out[0] - 2.0).abs() < 1e-12);
    }
}
