//! Synthetic edit cases that stand in for model output: an original image,
//! an edited canvas, mock attention stacks, segment candidates, a trained
//! action classifier and an instruction embedding, all written in the
//! exchange formats.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::classifier::{train, BlobSpec, ClassifierParams, Dataset, TrainConfig, TrainReport};
use crate::denoise::{run_fused_denoise, EditAction, FusionConfig, GuidanceScales, MockDenoiser};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid2D, Image};
use crate::io::{self, Tensor};
use crate::pipeline::{AttentionEntry, EditManifest};
use crate::refine::{write_segment_dir, SegmentSet};
use crate::rng::{self, Counter};

/// Seed of the blob dataset the fixture classifier is trained on.
pub const CLASSIFIER_SEED: u64 = 0;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CASE_FILE: &str = "case.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Disk {
        cy: f64,
        cx: f64,
        radius: f64,
    },
}

impl Region {
    pub fn square(top: usize, left: usize, side: usize) -> Self {
        Region::Rect {
            top,
            left,
            height: side,
            width: side,
        }
    }

    pub fn mask(&self, height: usize, width: usize) -> BinaryMask {
        match *self {
            Region::Rect {
                top,
                left,
                height: rh,
                width: rw,
            } => BinaryMask::from_fn(height, width, |r, c| {
                r >= top && r < top + rh && c >= left && c < left + rw
            }),
            Region::Disk { cy, cx, radius } => BinaryMask::from_fn(height, width, |r, c| {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                dy * dy + dx * dx <= radius * radius
            }),
        }
    }

    fn translate(&self, dy: isize, dx: isize) -> Self {
        let shift = |v: usize, d: isize| v.saturating_add_signed(d);
        match *self {
            Region::Rect {
                top,
                left,
                height,
                width,
            } => Region::Rect {
                top: shift(top, dy),
                left: shift(left, dx),
                height,
                width,
            },
            Region::Disk { cy, cx, radius } => Region::Disk {
                cy: cy + dy as f64,
                cx: cx + dx as f64,
                radius,
            },
        }
    }

    /// Half the shorter extent, used to size distractors.
    fn half_extent(&self) -> usize {
        match *self {
            Region::Rect { height, width, .. } => height.min(width) / 2,
            Region::Disk { radius, .. } => radius as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub height: usize,
    pub width: usize,
    pub region: Region,
    pub action: EditAction,
    pub seed: u64,
    pub distractors: usize,
    pub steps: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            region: Region::square(192, 256, 64),
            action: EditAction::Change,
            seed: 0,
            distractors: 6,
            steps: FusionConfig::default().steps,
        }
    }
}

impl FixtureSpec {
    pub fn instruction(&self) -> String {
        match self.action {
            EditAction::Change => "turn the block red".into(),
            EditAction::Add => "add a red block".into(),
            EditAction::Remove => "remove the block".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("fixture images must be at least 16x16"));
        }
        let mask = self.region.mask(self.height, self.width);
        if mask.is_empty() {
            return Err(Error::invalid("fixture region lies outside the image"));
        }
        Ok(())
    }
}

/// Files of one generated case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureCase {
    pub dir: PathBuf,
    pub original: PathBuf,
    pub manifest: PathBuf,
    pub ground_truth: PathBuf,
    pub instruction: String,
}

impl FixtureCase {
    pub fn at(dir: impl AsRef<Path>, instruction: String) -> Self {
        let dir = dir.as_ref().to_path_buf();
        Self {
            original: dir.join("original.png"),
            manifest: dir.join(MANIFEST_FILE),
            ground_truth: dir.join("ground_truth.png"),
            dir,
            instruction,
        }
    }
}

/// Smooth gradients with mild texture; depends only on size and seed.
pub fn original_image(height: usize, width: usize, seed: u64) -> Image {
    let (fh, fw) = (height as f64, width as f64);
    Image::from_fn_rgb(height, width, |r, c| {
        let (y, x) = (r as f64 / fh, c as f64 / fw);
        let p = (r * width + c) as u64;
        let jitter = |ch: u64| (rng::uniform(seed, 0x696d_6700 | ch, p) - 0.5) * 8.0;
        let wave = 12.0 * (6.0 * x + 4.0 * y).sin();
        [
            (60.0 + 90.0 * y + jitter(0)).round() as u8,
            (90.0 + 60.0 * x + wave + jitter(1)).round() as u8,
            (150.0 - 40.0 * y + wave + jitter(2)).round() as u8,
        ]
    })
}

/// Repaints `region` with a saturated colour and perturbs every other pixel
/// by at most 3 levels, mimicking a model that slightly over-edits.
pub fn edited_canvas(
    original: &Image,
    region: &BinaryMask,
    action: EditAction,
    seed: u64,
) -> Result<Image> {
    original.ensure_mask_dims(region, "fixture canvas")?;
    let fill: [f64; 3] = match action {
        EditAction::Change => [225.0, 35.0, 30.0],
        EditAction::Add => [240.0, 220.0, 40.0],
        EditAction::Remove => [20.0, 20.0, 25.0],
    };
    let width = original.width();
    Ok(Image::from_fn_rgb(original.height(), width, |r, c| {
        let p = (r * width + c) as u64;
        let rgb = original.rgb(r, c);
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let u = rng::uniform(seed, 0x6361_6e00 | ch as u64, p);
            out[ch] = if region.get(r, c) {
                (fill[ch] + (u - 0.5) * 10.0).round().clamp(0.0, 255.0) as u8
            } else {
                let d = (u * 7.0).floor() - 3.0;
                (rgb[ch] as f64 + d).clamp(0.0, 255.0) as u8
            };
        }
        out
    }))
}

/// The true region plus distractors: a shifted copy, an enclosing box,
/// the complement and random boxes elsewhere. The true region's position in
/// the list is random.
pub fn segment_candidates(spec: &FixtureSpec) -> Result<(SegmentSet, usize)> {
    let (h, w) = (spec.height, spec.width);
    let truth = spec.region.mask(h, w);
    let half = spec.region.half_extent().max(2) as isize;
    let mut rng = Counter::new(spec.seed, 0x7365_6700);
    let mut masks = Vec::with_capacity(spec.distractors + 1);
    for k in 0..spec.distractors {
        let m = match k {
            0 => spec.region.translate(half, half).mask(h, w),
            1 => crate::smoother::dilate(&truth, half as usize * 2),
            2 => truth.complement(),
            _ => {
                let side = 8 + rng.below((h.min(w) / 4).max(1));
                let top = rng.below(h - side.min(h - 1));
                let left = rng.below(w - side.min(w - 1));
                Region::Rect {
                    top,
                    left,
                    height: side,
                    width: side,
                }
                .mask(h, w)
            }
        };
        masks.push(m);
    }
    let index = rng.below(masks.len() + 1);
    masks.insert(index, truth);
    Ok((SegmentSet::from_masks(masks)?, index))
}

fn trained_classifier() -> &'static (ClassifierParams, TrainReport) {
    static CELL: OnceLock<(ClassifierParams, TrainReport)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = BlobSpec::default().generate(CLASSIFIER_SEED);
        train(
            &data,
            &TrainConfig {
                seed: CLASSIFIER_SEED,
                ..TrainConfig::default()
            },
        )
        .expect("fixture classifier trains")
    })
}

/// The classifier every fixture case ships, trained once per process.
pub fn fixture_classifier() -> &'static ClassifierParams {
    &trained_classifier().0
}

pub fn fixture_classifier_report() -> &'static TrainReport {
    &trained_classifier().1
}

/// Embedding for an instruction of the given action, drawn from the same
/// blobs the fixture classifier was trained on.
pub fn instruction_embedding(action: EditAction, seed: u64) -> Vec<f64> {
    BlobSpec::default()
        .sample(CLASSIFIER_SEED, action, seed)
        .embedding
}

/// Labeled blob dataset in the classifier's file layout.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    let data = spec.generate(seed);
    data.save(dir)?;
    Ok(data)
}

/// Writes every input of one edit case under `dir`.
pub fn write_case(spec: &FixtureSpec, dir: impl AsRef<Path>) -> Result<FixtureCase> {
    spec.validate()?;
    let case = FixtureCase::at(dir, spec.instruction());
    let dir = &case.dir;
    io::create_dir_all(dir)?;
    let (h, w) = (spec.height, spec.width);
    let truth = spec.region.mask(h, w);
    let original = original_image(h, w, spec.seed);
    io::write_image(&original, &case.original)?;
    io::write_image(
        &edited_canvas(&original, &truth, spec.action, spec.seed)?,
        dir.join("canvas.png"),
    )?;
    io::write_mask(&truth, &case.ground_truth)?;

    let fusion = FusionConfig {
        steps: spec.steps,
        ..FusionConfig::default()
    };
    let mock = MockDenoiser::new(spec.seed, truth, spec.steps);
    let run = run_fused_denoise(&mock, spec.action, &GuidanceScales::default(), &fusion)?;
    let att_dir = dir.join("attention");
    io::create_dir_all(&att_dir)?;
    let mut attention = Vec::with_capacity(run.attention.len());
    for stack in &run.attention.stacks {
        let path = format!("attention/s{:02}_{}.ztf", stack.step, stack.block);
        io::write_tensor(&Tensor::Rank3(stack.maps.clone()), dir.join(&path))?;
        attention.push(AttentionEntry {
            path,
            step: stack.step,
            block: stack.block.clone(),
        });
    }

    let (segments, _) = segment_candidates(spec)?;
    write_segment_dir(&segments, dir.join("segments"))?;
    fixture_classifier().save(dir.join("classifier"))?;
    let emb = instruction_embedding(spec.action, spec.seed);
    let emb = Grid2D::new(1, emb.len(), emb.iter().map(|&v| v as f32).collect())?;
    io::write_tensor(&Tensor::Rank2(emb), dir.join("instruction.ztf"))?;

    let manifest = EditManifest {
        canvas: "canvas.png".into(),
        attention,
        segments: "segments".into(),
        classifier: "classifier".into(),
        instruction_embedding: "instruction.ztf".into(),
    };
    io::write_json(&case.manifest, &manifest)?;
    io::write_json(&dir.join(CASE_FILE), spec)?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::region_iou;

    #[test]
    fn regions_rasterize() {
        assert_eq!(Region::square(2, 3, 4).mask(16, 16).count(), 16);
        let disk = Region::Disk {
            cy: 8.0,
            cx: 8.0,
            radius: 3.0,
        }
        .mask(16, 16);
        assert_eq!(disk.count(), 29);
        assert!(Region::square(20, 20, 4).mask(16, 16).is_empty());
    }

    #[test]
    fn canvas_changes_only_the_region_strongly() {
        let original = original_image(32, 32, 1);
        let region = Region::square(8, 8, 8).mask(32, 32);
        let canvas = edited_canvas(&original, &region, EditAction::Change, 1).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let (a, b) = (original.rgb(r, c), canvas.rgb(r, c));
                let max = (0..3).map(|k| a[k].abs_diff(b[k])).max().unwrap();
                if region.get(r, c) {
                    assert!(max > 40);
                } else {
                    assert!(max <= 3);
                }
            }
        }
    }

    #[test]
    fn truth_is_the_best_candidate() {
        let spec = FixtureSpec::default();
        let truth = spec.region.mask(spec.height, spec.width);
        let (set, index) = segment_candidates(&spec).unwrap();
        assert_eq!(set.len(), spec.distractors + 1);
        assert_eq!(set.get(index).unwrap().mask, truth);
        for (i, s) in set.segments().iter().enumerate() {
            if i != index {
                assert!(region_iou(&s.mask, &truth).unwrap() < 0.5);
            }
        }
    }
}
