//! Frequency-domain edge smoother.
//!
//! The refined mask is dilated to pick up edit fringes (shadows, halos), both
//! images are cut to the dilated region, and the low-frequency content of the
//! two cut-outs is differenced. What survives a threshold, after closing and
//! hole filling, is the final edit mask.

pub mod fft;
pub mod morphology;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};

pub use self::fft::{fft2, fft2_real, ifft2, lowpass, Spectrum};
pub use self::morphology::{close, close_and_fill, dilate, erode, fill_holes};

/// Reference side length the default radii are tuned for.
pub const REFERENCE_SIZE: f64 = 512.0;

/// Smoother parameters, expressed at the 512x512 reference size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub cutoff: f64,
    pub dilation_radius: usize,
    /// Threshold on the absolute low-pass luma difference, 8-bit units.
    pub g_threshold: f64,
    pub closing_radius: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            cutoff: 200.0,
            dilation_radius: 15,
            g_threshold: 10.0,
            closing_radius: 5,
        }
    }
}

/// Parameters after scaling to a concrete image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSmoother {
    pub cutoff: f64,
    pub dilation_radius: usize,
    pub g_threshold: f64,
    pub closing_radius: usize,
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::invalid(format!(
                "cutoff must be > 0, got {}",
                self.cutoff
            )));
        }
        if !(self.g_threshold > 0.0 && self.g_threshold.is_finite()) {
            return Err(Error::invalid(format!(
                "g_threshold must be > 0, got {}",
                self.g_threshold
            )));
        }
        if self.dilation_radius == 0 || self.closing_radius == 0 {
            return Err(Error::invalid("dilation and closing radii must be >= 1"));
        }
        Ok(())
    }

    /// Scales cutoff and dilation by `min(H, W) / 512`.
    pub fn resolve(&self, height: usize, width: usize) -> ResolvedSmoother {
        let scale = height.min(width) as f64 / REFERENCE_SIZE;
        ResolvedSmoother {
            cutoff: self.cutoff * scale,
            dilation_radius: ((self.dilation_radius as f64 * scale).round() as usize).max(1),
            g_threshold: self.g_threshold,
            closing_radius: self.closing_radius,
        }
    }
}

/// Thresholded low-pass luma difference of the two dilated layers.
pub fn difference_mask(
    layer_d: &Image,
    orig_d: &Image,
    params: &ResolvedSmoother,
) -> Result<BinaryMask> {
    layer_d.ensure_same_dims(orig_d, "difference mask")?;
    let diff = lowpass_difference(layer_d, orig_d, params.cutoff)?;
    let (h, w) = layer_d.dims();
    BinaryMask::new(
        h,
        w,
        diff.iter().map(|v| v.abs() > params.g_threshold).collect(),
    )
}

/// Real part of `ifft(H(fft(a)) - H(fft(b)))` over BT.601 luma.
pub fn lowpass_difference(a: &Image, b: &Image, cutoff: f64) -> Result<Vec<f64>> {
    a.ensure_same_dims(b, "low-pass difference")?;
    let (h, w) = a.dims();
    let fa = lowpass(&fft2_real(h, w, &a.luma())?, cutoff)?;
    let fb = lowpass(&fft2_real(h, w, &b.luma())?, cutoff)?;
    Ok(fft::ifft2_real(&fa.sub(&fb)?))
}

/// Intermediate masks of one smoothing pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothStages {
    pub dilated: BinaryMask,
    pub difference: BinaryMask,
    pub final_mask: BinaryMask,
    pub params: ResolvedSmoother,
}

pub fn smooth(
    original: &Image,
    canvas: &Image,
    refined: &BinaryMask,
    config: &SmootherConfig,
) -> Result<BinaryMask> {
    smooth_stages(original, canvas, refined, config).map(|s| s.final_mask)
}

pub fn smooth_stages(
    original: &Image,
    canvas: &Image,
    refined: &BinaryMask,
    config: &SmootherConfig,
) -> Result<SmoothStages> {
    config.validate()?;
    original.ensure_same_dims(canvas, "original vs canvas")?;
    original.ensure_mask_dims(refined, "refined mask")?;
    let (h, w) = original.dims();
    let params = config.resolve(h, w);
    let dilated = dilate(refined, params.dilation_radius);
    let layer_d = canvas.masked(&dilated)?;
    let orig_d = original.masked(&dilated)?;
    let difference = difference_mask(&layer_d, &orig_d, &params)?;
    let final_mask = close_and_fill(&difference, params.closing_radius);
    Ok(SmoothStages {
        dilated,
        difference,
        final_mask,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(size: usize, radius: f64) -> BinaryMask {
        let c = size as f64 / 2.0;
        BinaryMask::from_fn(size, size, |r, col| {
            (r as f64 + 0.5 - c).powi(2) + (col as f64 + 0.5 - c).powi(2) <= radius * radius
        })
    }

    fn textured(size: usize) -> Image {
        Image::from_fn_rgb(size, size, |r, c| {
            [(r * 3 % 200) as u8 + 20, (c * 5 % 180) as u8 + 30, 90]
        })
    }

    #[test]
    fn resolve_scales_with_size() {
        let cfg = SmootherConfig::default();
        let full = cfg.resolve(512, 512);
        assert_eq!((full.cutoff, full.dilation_radius), (200.0, 15));
        let small = cfg.resolve(64, 128);
        assert_eq!((small.cutoff, small.dilation_radius), (25.0, 2));
    }

    #[test]
    fn identical_inputs_give_empty_mask() {
        let img = textured(32);
        let params = SmootherConfig::default().resolve(32, 32);
        assert!(difference_mask(&img, &img, &params).unwrap().is_empty());
        for refined in [
            BinaryMask::full(32, 32),
            disk(32, 6.0),
            BinaryMask::empty(32, 32),
        ] {
            assert!(smooth(&img, &img, &refined, &SmootherConfig::default())
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn small_global_difference_is_rejected() {
        let a = Image::filled(16, 16, [100, 100, 100]);
        let b = Image::filled(16, 16, [109, 109, 109]);
        let params = SmootherConfig::default().resolve(16, 16);
        assert!(difference_mask(&a, &b, &params).unwrap().is_empty());
    }

    #[test]
    fn all_ones_refined_is_contained_in_closed_support() {
        let size = 64;
        let original = textured(size);
        let region = disk(size, 12.0);
        let canvas = Image::from_fn_rgb(size, size, |r, c| {
            if region.get(r, c) {
                [250, 250, 250]
            } else {
                original.rgb(r, c)
            }
        });
        let cfg = SmootherConfig::default();
        let out = smooth(&original, &canvas, &BinaryMask::full(size, size), &cfg).unwrap();
        let params = cfg.resolve(size, size);
        let support = close_and_fill(
            &difference_mask(&canvas, &original, &params).unwrap(),
            params.closing_radius,
        );
        assert!(out.is_subset_of(&support));
        assert!(!out.is_empty());
    }

    #[test]
    fn rejects_mismatch_and_bad_config() {
        let a = Image::filled(8, 8, [0, 0, 0]);
        let b = Image::filled(8, 9, [0, 0, 0]);
        assert!(smooth(&a, &b, &BinaryMask::full(8, 8), &SmootherConfig::default()).is_err());
        assert!(smooth(&a, &a, &BinaryMask::full(8, 9), &SmootherConfig::default()).is_err());
        let bad = SmootherConfig {
            cutoff: 0.0,
            ..SmootherConfig::default()
        };
        assert!(smooth(&a, &a, &BinaryMask::full(8, 8), &bad).is_err());
    }
}
