//! Fused denoising arithmetic over latent grids, plus a deterministic mock
//! denoiser that synthesizes attention stacks and latents without a model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionCollection;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid2D, Grid3D};
use crate::rng;

/// Edit action predicted from the instruction. Discriminants are the
/// classifier labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditAction {
    Change = 0,
    Add = 1,
    Remove = 2,
}

impl EditAction {
    pub const ALL: [EditAction; 3] = [EditAction::Change, EditAction::Add, EditAction::Remove];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Result<Self> {
        Self::ALL
            .get(label)
            .copied()
            .ok_or_else(|| Error::invalid(format!("action label {label} not in 0..=2")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EditAction::Change => "change",
            EditAction::Add => "add",
            EditAction::Remove => "remove",
        }
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EditAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "change" | "0" => Ok(EditAction::Change),
            "add" | "1" => Ok(EditAction::Add),
            "remove" | "2" => Ok(EditAction::Remove),
            other => Err(Error::invalid(format!("unknown action {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceScales {
    pub image_scale: f64,
    pub text_scale: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self {
            image_scale: 1.5,
            text_scale: 7.5,
        }
    }
}

impl GuidanceScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("image", self.image_scale), ("text", self.text_scale)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} guidance scale must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Two-condition classifier-free guidance:
/// `uncond + s_I (img - uncond) + s_T (full - img)`.
pub fn cfg_combine(
    uncond: &Grid2D,
    img: &Grid2D,
    full: &Grid2D,
    scales: &GuidanceScales,
) -> Result<Grid2D> {
    scales.validate()?;
    uncond.ensure_same_dims(img, "guidance inputs")?;
    uncond.ensure_same_dims(full, "guidance inputs")?;
    let (si, st) = (scales.image_scale, scales.text_scale);
    let data = uncond
        .as_slice()
        .iter()
        .zip(img.as_slice())
        .zip(full.as_slice())
        .map(|((&u, &i), &f)| {
            let (u, i, f) = (u as f64, i as f64, f as f64);
            (u + si * (i - u) + st * (f - i)) as f32
        })
        .collect();
    Grid2D::new(uncond.height(), uncond.width(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub beta_remove: f64,
    pub beta_other: f64,
    pub steps: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta_remove: 0.2,
            beta_other: 0.01,
            steps: 20,
        }
    }
}

impl FusionConfig {
    pub fn beta(&self, action: EditAction) -> f64 {
        match action {
            EditAction::Remove => self.beta_remove,
            _ => self.beta_other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [
            ("beta_remove", self.beta_remove),
            ("beta_other", self.beta_other),
        ] {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and >= 0, got {b}"
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        Ok(())
    }
}

/// `(primary + beta * secondary) / (1 + beta)`, elementwise.
pub fn fuse_with_beta(primary: &Grid2D, secondary: &Grid2D, beta: f64) -> Result<Grid2D> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    primary.ensure_same_dims(secondary, "latent fusion")?;
    let data = primary
        .as_slice()
        .iter()
        .zip(secondary.as_slice())
        .map(|(&a, &b)| ((a as f64 + beta * b as f64) / (1.0 + beta)) as f32)
        .collect();
    Grid2D::new(primary.height(), primary.width(), data)
}

/// Blends the instruction-model latent with the secondary model's latent,
/// weighting the latter more heavily for removals.
pub fn fuse_latents(
    primary: &Grid2D,
    secondary: &Grid2D,
    action: EditAction,
    config: &FusionConfig,
) -> Result<Grid2D> {
    config.validate()?;
    fuse_with_beta(primary, secondary, config.beta(action))
}

/// Synthetic stand-in for the two diffusion models.
///
/// Attention maps decay from the start token to the end token and are
/// darkened inside `implanted_region`; token 1 is a constant bright anchor
/// that pins the joint normalization range. All noise comes from
/// [`rng::draw`] keyed on `(seed, step/block/token, pixel)`.
#[derive(Debug, Clone)]
pub struct MockDenoiser {
    pub seed: u64,
    /// Signal retention per step, in `(0, 1]`, non-decreasing as noise drops.
    pub schedule: Vec<f64>,
    pub implanted_region: BinaryMask,
    pub token_count: usize,
    pub blocks: Vec<String>,
    /// Native attention resolution is the image size divided by this.
    pub downsample: usize,
}

impl MockDenoiser {
    pub const DARKEN: f64 = 0.2;
    pub const NOISE: f64 = 0.01;

    pub fn new(seed: u64, implanted_region: BinaryMask, steps: usize) -> Self {
        Self {
            seed,
            schedule: linear_schedule(steps),
            implanted_region,
            token_count: 6,
            blocks: ["down_2", "down_3", "down_4", "up_1", "up_2", "up_3"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            downsample: 8,
        }
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    pub fn native_dims(&self) -> (usize, usize) {
        let (h, w) = self.implanted_region.dims();
        ((h / self.downsample).max(1), (w / self.downsample).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return Err(Error::invalid("mock schedule is empty"));
        }
        if let Some(a) = self.schedule.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::invalid(format!("schedule value {a} outside (0, 1]")));
        }
        if self.schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("schedule must be non-decreasing"));
        }
        if self.token_count < 3 {
            return Err(Error::invalid("mock needs at least 3 tokens"));
        }
        if self.blocks.is_empty() {
            return Err(Error::invalid("mock needs at least one block"));
        }
        if self.downsample == 0 {
            return Err(Error::invalid("downsample must be >= 1"));
        }
        Ok(())
    }

    /// Region coverage sampled at the positions the align-corners upsampler
    /// maps native cells to, averaged over a `downsample`-wide window.
    fn native_coverage(&self) -> Vec<f64> {
        let (h, w) = self.implanted_region.dims();
        let (nh, nw) = self.native_dims();
        let sy = if nh > 1 {
            (h - 1) as f64 / (nh - 1) as f64
        } else {
            0.0
        };
        let sx = if nw > 1 {
            (w - 1) as f64 / (nw - 1) as f64
        } else {
            0.0
        };
        let half = self.downsample as f64 / 2.0;
        let mut out = Vec::with_capacity(nh * nw);
        for i in 0..nh {
            let cy = i as f64 * sy;
            let (r0, r1) = window(cy, half, h);
            for j in 0..nw {
                let cx = j as f64 * sx;
                let (c0, c1) = window(cx, half, w);
                let mut hits = 0usize;
                for r in r0..r1 {
                    for c in c0..c1 {
                        hits += self.implanted_region.get(r, c) as usize;
                    }
                }
                out.push(hits as f64 / ((r1 - r0) * (c1 - c0)) as f64);
            }
        }
        out
    }

    fn attention_stack(&self, coverage: &[f64], step: usize, block: usize) -> Result<Grid3D> {
        let (nh, nw) = self.native_dims();
        let tokens = self.token_count;
        let mut data = Vec::with_capacity(tokens * nh * nw);
        for t in 0..tokens {
            let base = if t == 1 {
                1.0
            } else {
                1.0 - 0.9 * t as f64 / (tokens - 1) as f64
            };
            let stream = ((step as u64) << 32) | ((block as u64) << 16) | t as u64;
            for (p, &cov) in coverage.iter().enumerate() {
                let darken = if t == 1 {
                    1.0
                } else {
                    1.0 - (1.0 - Self::DARKEN) * cov
                };
                let noise = (rng::uniform(self.seed, stream, p as u64) - 0.5) * 2.0 * Self::NOISE;
                data.push((base * darken + noise).max(0.0) as f32);
            }
        }
        Grid3D::new(tokens, nh, nw, data)
    }

    fn noise_grid(&self, stream: u64, amplitude: f64) -> Result<Grid2D> {
        let (nh, nw) = self.native_dims();
        Grid2D::new(
            nh,
            nw,
            (0..nh * nw)
                .map(|p| (rng::normal(self.seed, stream, p as u64) * amplitude) as f32)
                .collect(),
        )
    }
}

fn window(center: f64, half: f64, len: usize) -> (usize, usize) {
    let lo = (center - half + 0.5).floor().max(0.0) as usize;
    let hi = ((center + half + 0.5).floor() as usize).clamp(lo + 1, len);
    (lo.min(len - 1), hi)
}

/// `(t + 1) / steps` for `t` in `0..steps`.
pub fn linear_schedule(steps: usize) -> Vec<f64> {
    (0..steps).map(|t| (t + 1) as f64 / steps as f64).collect()
}

#[derive(Debug, Clone)]
pub struct FusedRun {
    pub canvas_latent: Grid2D,
    pub attention: AttentionCollection,
    pub beta: f64,
}

/// Runs `config.steps` mock denoising steps. Each step combines three
/// guidance predictions, produces an instruction-model latent and a
/// secondary-model latent, fuses them, and records one attention stack per
/// block.
pub fn run_fused_denoise(
    mock: &MockDenoiser,
    action: EditAction,
    scales: &GuidanceScales,
    config: &FusionConfig,
) -> Result<FusedRun> {
    mock.validate()?;
    scales.validate()?;
    config.validate()?;
    if mock.steps() != config.steps {
        return Err(Error::invalid(format!(
            "mock schedule has {} steps, config expects {}",
            mock.steps(),
            config.steps
        )));
    }
    let (nh, nw) = mock.native_dims();
    let coverage = mock.native_coverage();
    let target_primary = Grid2D::new(nh, nw, coverage.iter().map(|&c| c as f32).collect())?;
    let target_secondary =
        Grid2D::new(nh, nw, coverage.iter().map(|&c| (0.8 * c) as f32).collect())?;
    let beta = config.beta(action);

    const STREAM_INIT: u64 = 1 << 60;
    const STREAM_EPS: u64 = 2 << 60;
    let mut latent = mock.noise_grid(STREAM_INIT, 1.0)?;
    let mut attention = AttentionCollection::default();
    for (step, &alpha) in mock.schedule.iter().enumerate() {
        let s = step as u64 * 4;
        let eps = cfg_combine(
            &mock.noise_grid(STREAM_EPS + s, 0.1)?,
            &mock.noise_grid(STREAM_EPS + s + 1, 0.1)?,
            &mock.noise_grid(STREAM_EPS + s + 2, 0.1)?,
            scales,
        )?;
        let denoise = |target: &Grid2D| -> Result<Grid2D> {
            let data = latent
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .zip(eps.as_slice())
                .map(|((&z, &x0), &e)| {
                    (alpha * x0 as f64 + (1.0 - alpha) * (z as f64 - 0.1 * e as f64)) as f32
                })
                .collect();
            Grid2D::new(nh, nw, data)
        };
        let primary = denoise(&target_primary)?;
        let secondary = denoise(&target_secondary)?;
        latent = fuse_with_beta(&primary, &secondary, beta)?;
        for (b, block) in mock.blocks.iter().enumerate() {
            attention.push(
                step as u32,
                block.clone(),
                mock.attention_stack(&coverage, step, b)?,
            );
        }
    }
    Ok(FusedRun {
        canvas_latent: latent,
        attention,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{average_maps, binarize_location, LocalizerConfig};
    use crate::rng::Counter;
    use proptest::prelude::*;

    fn random_grid(rng: &mut Counter, h: usize, w: usize) -> Grid2D {
        Grid2D::from_fn(h, w, |_, _| rng.range(-10.0, 10.0) as f32).unwrap()
    }

    #[test]
    fn cfg_of_equal_inputs_is_identity() {
        let c = Grid2D::filled(3, 3, 2.5).unwrap();
        for (si, st) in [(0.0, 0.0), (1.5, 7.5), (12.0, 0.3)] {
            let s = GuidanceScales {
                image_scale: si,
                text_scale: st,
            };
            let out = cfg_combine(&c, &c, &c, &s).unwrap();
            assert!(out.as_slice().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn cfg_unit_scales_return_full() {
        let mut rng = Counter::new(11, 0);
        let (u, i, f) = (
            random_grid(&mut rng, 4, 5),
            random_grid(&mut rng, 4, 5),
            random_grid(&mut rng, 4, 5),
        );
        let s = GuidanceScales {
            image_scale: 1.0,
            text_scale: 1.0,
        };
        assert_eq!(cfg_combine(&u, &i, &f, &s).unwrap(), f);
    }

    #[test]
    fn cfg_rejects_mismatch_and_negative_scale() {
        let a = Grid2D::zeros(2, 2).unwrap();
        let b = Grid2D::zeros(2, 3).unwrap();
        assert!(cfg_combine(&a, &a, &b, &GuidanceScales::default()).is_err());
        let bad = GuidanceScales {
            image_scale: -1.0,
            text_scale: 1.0,
        };
        assert!(cfg_combine(&a, &a, &a, &bad).is_err());
    }

    #[test]
    fn fuse_zero_beta_returns_primary() {
        let mut rng = Counter::new(12, 0);
        let (a, b) = (random_grid(&mut rng, 3, 4), random_grid(&mut rng, 3, 4));
        let cfg = FusionConfig {
            beta_remove: 0.0,
            beta_other: 0.0,
            steps: 1,
        };
        for action in EditAction::ALL {
            assert_eq!(fuse_latents(&a, &b, action, &cfg).unwrap(), a);
        }
    }

    #[test]
    fn fuse_fixed_point() {
        let a = Grid2D::filled(2, 2, 0.75).unwrap();
        for action in EditAction::ALL {
            assert_eq!(
                fuse_latents(&a, &a, action, &FusionConfig::default()).unwrap(),
                a
            );
        }
    }

    #[test]
    fn fuse_remove_scalar() {
        let a = Grid2D::filled(1, 1, 1.0).unwrap();
        let b = Grid2D::filled(1, 1, 2.0).unwrap();
        let out = fuse_latents(&a, &b, EditAction::Remove, &FusionConfig::default()).unwrap();
        assert!((out.get(0, 0) as f64 - 1.1666667).abs() < 1e-6);
        let out = fuse_latents(&a, &b, EditAction::Add, &FusionConfig::default()).unwrap();
        assert!((out.get(0, 0) as f64 - 1.02 / 1.01).abs() < 1e-6);
    }

    #[test]
    fn action_labels_and_names() {
        for (i, a) in EditAction::ALL.iter().enumerate() {
            assert_eq!(a.label(), i);
            assert_eq!(EditAction::from_label(i).unwrap(), *a);
            assert_eq!(a.name().parse::<EditAction>().unwrap(), *a);
        }
        assert!(EditAction::from_label(3).is_err());
        assert!("paint".parse::<EditAction>().is_err());
    }

    fn square(size: usize, lo: usize, hi: usize) -> BinaryMask {
        BinaryMask::from_fn(size, size, |r, c| {
            (lo..hi).contains(&r) && (lo..hi).contains(&c)
        })
    }

    #[test]
    fn mock_is_deterministic() {
        let mock = MockDenoiser::new(99, square(64, 16, 40), 4);
        let cfg = FusionConfig {
            steps: 4,
            ..FusionConfig::default()
        };
        let a =
            run_fused_denoise(&mock, EditAction::Add, &GuidanceScales::default(), &cfg).unwrap();
        let b =
            run_fused_denoise(&mock, EditAction::Add, &GuidanceScales::default(), &cfg).unwrap();
        assert_eq!(a.canvas_latent, b.canvas_latent);
        assert_eq!(a.attention, b.attention);
        assert_eq!(a.attention.len(), 4 * mock.blocks.len());
        assert_eq!(a.attention.step_count(), 4);
    }

    #[test]
    fn mock_full_frame_recovers_full_frame() {
        let mock = MockDenoiser::new(5, BinaryMask::full(64, 64), 20);
        let run = run_fused_denoise(
            &mock,
            EditAction::Change,
            &GuidanceScales::default(),
            &FusionConfig::default(),
        )
        .unwrap();
        let cfg = LocalizerConfig::new(64, 64);
        let mb = binarize_location(&average_maps(&run.attention, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(mb.count(), 64 * 64);
    }

    #[test]
    fn mock_rejects_bad_config() {
        let mut mock = MockDenoiser::new(1, square(16, 4, 8), 3);
        let cfg = FusionConfig::default();
        assert!(
            run_fused_denoise(&mock, EditAction::Add, &GuidanceScales::default(), &cfg).is_err()
        );
        mock.schedule = vec![0.5, 0.2, 1.0];
        assert!(mock.validate().is_err());
        mock.schedule = vec![0.0, 0.5, 1.0];
        assert!(mock.validate().is_err());
    }

    proptest! {
        #[test]
        fn cfg_is_homogeneous(seed in any::<u64>(), k in -4.0f64..4.0) {
            let mut rng = Counter::new(seed, 0);
            let (u, i, f) = (random_grid(&mut rng, 3, 3), random_grid(&mut rng, 3, 3), random_grid(&mut rng, 3, 3));
            let s = GuidanceScales::default();
            let scale = |g: &Grid2D| Grid2D::new(3, 3, g.as_slice().iter().map(|&v| (v as f64 * k) as f32).collect()).unwrap();
            let base = cfg_combine(&u, &i, &f, &s).unwrap();
            let scaled = cfg_combine(&scale(&u), &scale(&i), &scale(&f), &s).unwrap();
            for (a, b) in base.as_slice().iter().zip(scaled.as_slice()) {
                prop_assert!((*a as f64 * k - *b as f64).abs() <= 1e-4 * (1.0 + b.abs() as f64));
            }
        }

        #[test]
        fn fusion_is_convex(seed in any::<u64>(), beta in 0.0f64..50.0) {
            let mut rng = Counter::new(seed, 0);
            let (a, b) = (random_grid(&mut rng, 4, 4), random_grid(&mut rng, 4, 4));
            let out = fuse_with_beta(&a, &b, beta).unwrap();
            for ((&x, &y), &z) in a.as_slice().iter().zip(b.as_slice()).zip(out.as_slice()) {
                prop_assert!(z >= x.min(y) && z <= x.max(y));
            }
        }
    }
}
