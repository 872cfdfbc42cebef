//! Pixel and mask metrics used for evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};
use crate::refine::region_iou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    /// Mean absolute sample difference, samples scaled to `[0, 1]`.
    pub l1: f64,
    /// Mean squared sample difference, samples scaled to `[0, 1]`.
    pub l2: f64,
}

pub fn pixel_metrics(a: &Image, b: &Image) -> Result<PixelMetrics> {
    check(a, b)?;
    Ok(accumulate(a, b, |_| true))
}

/// Metrics over the pixels where `region` is set. An empty region scores 0.
pub fn masked_pixel_metrics(a: &Image, b: &Image, region: &BinaryMask) -> Result<PixelMetrics> {
    check(a, b)?;
    a.ensure_mask_dims(region, "metric region")?;
    Ok(accumulate(a, b, |i| region.bits()[i]))
}

fn check(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_dims(b, "pixel metrics")?;
    if a.channels() != b.channels() {
        return Err(Error::shape(format!(
            "pixel metrics: {} vs {} channels",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

fn accumulate(a: &Image, b: &Image, include: impl Fn(usize) -> bool) -> PixelMetrics {
    let ch = a.channels();
    let (mut abs, mut sq, mut n) = (0u64, 0u64, 0u64);
    for (i, (pa, pb)) in a
        .as_bytes()
        .chunks_exact(ch)
        .zip(b.as_bytes().chunks_exact(ch))
        .enumerate()
    {
        if !include(i) {
            continue;
        }
        for (&x, &y) in pa.iter().zip(pb) {
            let d = x.abs_diff(y) as u64;
            abs += d;
            sq += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return PixelMetrics { l1: 0.0, l2: 0.0 };
    }
    PixelMetrics {
        l1: abs as f64 / (n as f64 * 255.0),
        l2: sq as f64 / (n as f64 * 255.0 * 255.0),
    }
}

/// Intersection over union of two masks.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    region_iou(a, b)
}

/// User preference rate: each method's share of the total score, in percent.
pub fn upr(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!(
            "scores must be finite and >= 0, got {s}"
        )));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all scores are zero"));
    }
    Ok(scores.iter().map(|s| 100.0 * s / total).collect())
}
