use crate::error::{Result, SpeError};

/// Single-channel intensity grid with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        check_dims(height, width, pixels.len())?;
        if let Some(bad) = pixels
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(SpeError::validation(format!(
                "intensity {} at index {bad} is outside [0, 1]",
                pixels[bad]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Min-max normalizes arbitrary raw intensities. A constant grid maps to zeros.
    pub fn from_raw(height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        check_dims(height, width, raw.len())?;
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !lo.is_finite() || !hi.is_finite() {
            return Err(SpeError::validation("raw intensities must be finite"));
        }
        let span = hi - lo;
        let pixels = if span > 0.0 {
            raw.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Quantizes to 8 bits (`round(v * 255)`).
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    /// Stable content hash over shape and exact pixel bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.height as u64);
        h.write_u64(self.width as u64);
        for v in &self.pixels {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

/// Boolean foreground grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(height, width, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        let mut m = Self::empty(height, width);
        m.bits.fill(true);
        m
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                m.bits[r * width + c] = f(r, c);
            }
        }
        m
    }

    /// Nonzero samples are foreground.
    pub fn from_values<T: Copy + Default + PartialEq>(
        height: usize,
        width: usize,
        values: &[T],
    ) -> Result<Self> {
        let zero = T::default();
        Self::new(height, width, values.iter().map(|v| *v != zero).collect())
    }

    /// Foreground where the image intensity is at least `threshold`.
    pub fn threshold(image: &Image, threshold: f64) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            bits: image.pixels().iter().map(|v| *v >= threshold).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Shifts the foreground by `(dy, dx)`; pixels moved off the canvas are lost.
    pub fn translated(&self, dy: i64, dx: i64) -> Self {
        let (h, w) = (self.height as i64, self.width as i64);
        let mut out = Self::empty(self.height, self.width);
        for r in 0..h {
            for c in 0..w {
                if self.bits[(r * w + c) as usize] {
                    let (nr, nc) = (r + dy, c + dx);
                    if (0..h).contains(&nr) && (0..w).contains(&nc) {
                        out.bits[(nr * w + nc) as usize] = true;
                    }
                }
            }
        }
        out
    }

    /// Foreground pixel coordinates as `(row, col)`, in row-major order.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    /// 0 for background, 255 for foreground.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.bits.iter().map(|b| if *b { 255 } else { 0 }).collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.height as u64);
        h.write_u64(self.width as u64);
        for b in &self.bits {
            h.write_u64(*b as u64);
        }
        h.finish()
    }
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(SpeError::validation(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(SpeError::validation(format!(
            "{height}x{width} grid needs {} samples, got {len}",
            height * width
        )));
    }
    Ok(())
}

/// 64-bit FNV-1a. Only used for in-process content keys.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(Image::new(1, 2, vec![0.5, 1.2]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn min_max_normalization() {
        let img = Image::from_raw(1, 3, &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.5, 1.0]);
        let flat = Image::from_raw(1, 2, &[7.0, 7.0]).unwrap();
        assert_eq!(flat.pixels(), &[0.0, 0.0]);
    }

    #[test]
    fn translate_drops_pixels_off_canvas() {
        let m = BinaryMask::from_fn(3, 3, |r, c| r == 0 && c < 2);
        let t = m.translated(0, 2);
        assert_eq!(t.count(), 1);
        assert!(t.get(0, 2));
        assert_eq!(m.translated(-1, 0).count(), 0);
    }
}
