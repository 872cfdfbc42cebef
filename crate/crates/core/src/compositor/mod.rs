//! Edited layers and lossless compositing over the original image.

pub mod metrics;
pub mod session;

use serde::{Deserialize, Serialize};

use crate::denoise::EditAction;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image};

pub use self::metrics::{mask_iou, masked_pixel_metrics, pixel_metrics, upr, PixelMetrics};
pub use self::session::{EditSession, HistoryEntry, SessionManifest, SessionOp};

/// Metadata attached to an extracted layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMeta {
    pub name: String,
    pub instruction: String,
    pub action: EditAction,
}

/// RGBA layer holding canvas color where `mask` is set, transparent elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditLayer {
    pub meta: LayerMeta,
    pub pixels: Image,
    pub mask: BinaryMask,
}

impl EditLayer {
    pub fn name(&self) -> &str {
        &self.meta.name
    }

    /// Builds a layer from stored pixels, checking alpha agrees with the mask.
    pub fn from_parts(meta: LayerMeta, pixels: Image, mask: BinaryMask) -> Result<Self> {
        if !pixels.has_alpha() {
            return Err(Error::invalid(format!(
                "layer {:?} must be RGBA",
                meta.name
            )));
        }
        pixels.ensure_mask_dims(&mask, "layer mask")?;
        if pixels.alpha_mask() != mask {
            return Err(Error::invalid(format!(
                "layer {:?}: alpha disagrees with mask",
                meta.name
            )));
        }
        Ok(Self { meta, pixels, mask })
    }
}

/// `canvas ⊙ mask` as an RGBA layer: alpha 255 and canvas RGB inside the
/// mask, all zeros outside.
pub fn extract_layer(canvas: &Image, mask: &BinaryMask, meta: LayerMeta) -> Result<EditLayer> {
    canvas.ensure_mask_dims(mask, "layer extraction")?;
    let (h, w) = canvas.dims();
    let mut data = Vec::with_capacity(h * w * 4);
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                data.extend_from_slice(&canvas.rgb(r, c));
                data.push(255);
            } else {
                data.extend_from_slice(&[0, 0, 0, 0]);
            }
        }
    }
    Ok(EditLayer {
        meta,
        pixels: Image::new(h, w, 4, data)?,
        mask: mask.clone(),
    })
}

/// Painter's algorithm over hard-alpha images: later images occlude earlier
/// ones, and pixels no image covers are copied from `base` unchanged.
pub fn composite_images<'a>(
    base: &Image,
    layers: impl IntoIterator<Item = &'a Image>,
) -> Result<Image> {
    let channels = base.channels();
    let mut out = base.as_bytes().to_vec();
    for layer in layers {
        base.ensure_same_dims(layer, "composite layer")?;
        let lc = layer.channels();
        for (dst, src) in out
            .chunks_exact_mut(channels)
            .zip(layer.as_bytes().chunks_exact(lc))
        {
            if lc == 3 || src[3] == 255 {
                dst[..3].copy_from_slice(&src[..3]);
                if channels == 4 {
                    dst[3] = 255;
                }
            }
        }
    }
    Image::new(base.height(), base.width(), channels, out)
}

pub fn composite(base: &Image, layers: &[EditLayer]) -> Result<Image> {
    composite_images(base, layers.iter().map(|l| &l.pixels))
}
