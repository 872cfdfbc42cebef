//! Raster value types shared by every stage of the pipeline.

use crate::error::{Error, Result};

/// Dense `height x width` raster of 32-bit floats, row-major.
///
/// Also used as a plain matrix (rows x cols) where the pipeline needs one.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .ok_or_else(|| Error::shape("grid size overflows"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{height}x{width} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
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

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.data)
    }

    pub(crate) fn ensure_same_dims(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Stack of `layers` rasters, each `height x width`, layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    layers: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Grid3D {
    pub fn new(layers: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "stack dimensions must be positive, got {layers}x{height}x{width}"
            )));
        }
        let expected = layers
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::shape("stack size overflows"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{layers}x{height}x{width} stack needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            layers,
            height,
            width,
            data,
        })
    }

    pub fn from_layers(layers: &[Grid2D]) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("layer list"))?;
        let mut data = Vec::with_capacity(layers.len() * first.len());
        for layer in layers {
            first.ensure_same_dims(layer, "stack layers")?;
            data.extend_from_slice(layer.as_slice());
        }
        Self::new(layers.len(), first.height, first.width, data)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.layers, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn layer(&self, index: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn layer_grid(&self, index: usize) -> Grid2D {
        Grid2D {
            height: self.height,
            width: self.width,
            data: self.layer(index).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, layer: usize, row: usize, col: usize) -> f32 {
        self.data[(layer * self.height + row) * self.width + col]
    }

    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.data)
    }
}

fn min_max(data: &[f32]) -> (f32, f32) {
    data.iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// `height x width` boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if Some(bits.len()) != height.checked_mul(width) {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a || b)
            .count()
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &BinaryMask, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// 8-bit raster with 3 (RGB) or 4 (RGBA) interleaved channels.
///
/// Alpha, when present, is hard: every sample is 0 or 255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 3 && channels != 4 {
            return Err(Error::UnsupportedColorType(format!("{channels} channels")));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::shape("image size overflows"))?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        if channels == 4 {
            if let Some(i) = data
                .chunks_exact(4)
                .position(|px| px[3] != 0 && px[3] != 255)
            {
                return Err(Error::invalid(format!(
                    "soft alpha at pixel {i}; alpha must be 0 or 255"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn from_fn_rgb(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn has_alpha(&self) -> bool {
        self.channels == 4
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn rgb(&self, row: usize, col: usize) -> [u8; 3] {
        let px = self.pixel(row, col);
        [px[0], px[1], px[2]]
    }

    /// Alpha of a pixel; opaque images report 255.
    pub fn alpha(&self, row: usize, col: usize) -> u8 {
        if self.channels == 4 {
            self.pixel(row, col)[3]
        } else {
            255
        }
    }

    /// Mask of pixels with alpha 255. All-set for opaque images.
    pub fn alpha_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| self.alpha(r, c) == 255)
    }

    /// Zeroes every pixel outside `mask` (the `I ⊙ M` product). Alpha is preserved.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Image> {
        self.ensure_mask_dims(mask, "masked image")?;
        let mut out = self.clone();
        for (i, px) in out.data.chunks_exact_mut(self.channels).enumerate() {
            if !mask.bits()[i] {
                px[..3].fill(0);
            }
        }
        Ok(out)
    }

    /// BT.601 luma per pixel, in 8-bit units.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64)
            .collect()
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_mask_dims(&self, mask: &BinaryMask, what: &str) -> Result<()> {
        if self.dims() != mask.dims() {
            return Err(Error::shape(format!(
                "{what}: image {}x{} vs mask {}x{}",
                self.height,
                self.width,
                mask.height(),
                mask.width()
            )));
        }
        Ok(())
    }
}

/// Bilinear resize with align-corners sampling and edge clamping.
///
/// Output corner pixels sample input corners exactly; a 1-pixel output axis
/// samples input index 0.
pub fn resize_bilinear(grid: &Grid2D, out_h: usize, out_w: usize) -> Result<Grid2D> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "zero target dimension {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w) = grid.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grid.clone());
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    let src = grid.as_slice();
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        let top = &src[r0 * in_w..(r0 + 1) * in_w];
        let bottom = &src[r1 * in_w..(r1 + 1) * in_w];
        for &(c0, c1, fc) in &cols {
            let t = top[c0] as f64 + (top[c1] as f64 - top[c0] as f64) * fc;
            let b = bottom[c0] as f64 + (bottom[c1] as f64 - bottom[c0] as f64) * fc;
            data.push((t + (b - t) * fr) as f32);
        }
    }
    Grid2D::new(out_h, out_w, data)
}

/// Per output index: the two clamped source taps and the weight of the second.
fn axis_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = if len_out > 1 {
        (len_in - 1) as f64 / (len_out - 1) as f64
    } else {
        0.0
    };
    (0..len_out)
        .map(|o| {
            let pos = (o as f64 * scale).clamp(0.0, (len_in - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constructors_reject_length_mismatch() {
        assert!(Grid2D::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Grid2D::new(0, 2, vec![]).is_err());
        assert!(Grid3D::new(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(BinaryMask::new(2, 3, vec![false; 5]).is_err());
        assert!(Image::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(Image::new(1, 1, 2, vec![0; 2]).is_err());
    }

    #[test]
    fn grid_rejects_non_finite() {
        assert!(matches!(
            Grid2D::new(1, 2, vec![1.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn image_rejects_soft_alpha() {
        assert!(Image::new(1, 1, 4, vec![1, 2, 3, 128]).is_err());
        assert!(Image::new(1, 2, 4, vec![1, 2, 3, 0, 4, 5, 6, 255]).is_ok());
    }

    #[test]
    fn resize_constant_stays_constant() {
        let g = Grid2D::filled(3, 5, 7.0).unwrap();
        for (h, w) in [(1, 1), (4, 9), (17, 2)] {
            let r = resize_bilinear(&g, h, w).unwrap();
            assert_eq!(r.dims(), (h, w));
            assert!(r.as_slice().iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn resize_midpoint_align_corners() {
        let g = Grid2D::new(1, 2, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&g, 1, 3).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_identity() {
        let g = Grid2D::from_fn(4, 6, |r, c| (r * 6 + c) as f32 * 0.37).unwrap();
        let r = resize_bilinear(&g, 4, 6).unwrap();
        for (a, b) in g.as_slice().iter().zip(r.as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let g = Grid2D::filled(2, 2, 1.0).unwrap();
        assert!(resize_bilinear(&g, 0, 3).is_err());
        assert!(resize_bilinear(&g, 3, 0).is_err());
    }

    #[test]
    fn mask_set_algebra() {
        let a = BinaryMask::from_fn(4, 4, |_, c| c < 2);
        let b = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        assert_eq!(a.intersection_count(&b), 4);
        assert_eq!(a.union_count(&b), 12);
        assert_eq!(a.intersection(&b).count(), 4);
        assert_eq!(a.union(&b).count(), 12);
        assert_eq!(a.complement().count(), 8);
        assert!(a.intersection(&b).is_subset_of(&a));
    }

    proptest! {
        #[test]
        fn resize_bounded_by_input_range(
            h in 1usize..6, w in 1usize..6, oh in 1usize..12, ow in 1usize..12,
            seed in any::<u64>(),
        ) {
            let g = Grid2D::from_fn(h, w, |r, c| {
                (crate::rng::uniform(seed, 0, (r * w + c) as u64) * 200.0 - 100.0) as f32
            }).unwrap();
            let (lo, hi) = g.min_max();
            let out = resize_bilinear(&g, oh, ow).unwrap();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo && ohi <= hi);
        }
    }
}
