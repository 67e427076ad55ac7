use super::{ImagingError, Result};
use crate::Rect;

/// 8-bit luminance raster, row-major, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        if data.len() != width * height {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 1,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the image (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn crop(&self, rect: Rect) -> Result<GrayImage> {
        if rect.is_empty() || rect.right() > self.width || rect.bottom() > self.height {
            return Err(ImagingError::RectOutOfBounds(rect));
        }
        let mut data = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.bottom() {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + rect.x..row + rect.right()]);
        }
        GrayImage::new(rect.width, rect.height, data)
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.data {
            hist[v as usize] += 1;
        }
        hist
    }

    pub fn mirrored(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 3,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luma conversion, `0.299 R + 0.587 G + 0.114 B` rounded half-up.
    ///
    /// Evaluated in integer arithmetic so that the rounding is exact.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let acc = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                ((acc + 500) / 1000) as u8
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn from_gray(gray: &GrayImage) -> RgbImage {
        let data = gray.data().iter().flat_map(|&v| [v, v, v]).collect();
        RgbImage {
            width: gray.width(),
            height: gray.height(),
            data,
        }
    }

    pub fn mirrored(&self) -> RgbImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width * 3) {
            for px in row.chunks_exact(3).rev() {
                data.extend_from_slice(px);
            }
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear resample to `width` x `height`.
    pub fn resized(&self, width: usize, height: usize) -> Result<RgbImage> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptyImage { width, height });
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let buf =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length checked at construction");
        let out = image::imageops::resize(
            &buf,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        RgbImage::new(width, height, out.into_raw())
    }

    pub fn crop(&self, rect: Rect) -> Result<RgbImage> {
        if rect.is_empty() || rect.right() > self.width || rect.bottom() > self.height {
            return Err(ImagingError::RectOutOfBounds(rect));
        }
        let mut data = Vec::with_capacity(rect.width * rect.height * 3);
        for y in rect.y..rect.bottom() {
            let start = (y * self.width + rect.x) * 3;
            data.extend_from_slice(&self.data[start..start + rect.width * 3]);
        }
        RgbImage::new(rect.width, rect.height, data)
    }
}

/// Free function form of [`RgbImage::to_gray`].
pub fn to_gray(rgb: &RgbImage) -> GrayImage {
    rgb.to_gray()
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(ImagingError::BufferSize {
                width,
                height,
                channels: 1,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Renders set pixels as 255 and the rest as 0.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Circle detected by the Hough transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: u32,
    pub score: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luma(p: [u8; 3]) -> u8 {
        RgbImage::new(1, 1, p.to_vec()).unwrap().to_gray().get(0, 0)
    }

    #[test]
    fn luma_cases() {
        assert_eq!(luma([255, 255, 255]), 255);
        assert_eq!(luma([0, 0, 0]), 0);
        // 0.299 * 255 = 76.245
        assert_eq!(luma([255, 0, 0]), 76);
        assert_eq!(luma([1, 0, 0]), 0);
        // 0.114 * 250 = 28.5 exactly: half rounds up
        assert_eq!(luma([0, 0, 250]), 29);
    }

    #[test]
    fn empty_image_rejected() {
        assert!(matches!(
            RgbImage::new(0, 4, vec![]),
            Err(ImagingError::EmptyImage { .. })
        ));
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn crop_and_mirror() {
        let img = GrayImage::from_fn(4, 3, |x, y| (y * 4 + x) as u8).unwrap();
        let c = img.crop(Rect::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.data(), &[5, 6, 9, 10]);
        assert_eq!(img.mirrored().get(0, 0), 3);
        assert!(img.crop(Rect::new(3, 0, 2, 1)).is_err());
    }
}
