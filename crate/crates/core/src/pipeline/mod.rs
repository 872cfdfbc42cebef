//! End-to-end edit: classify the instruction, localize with attention,
//! snap to a segment, smooth the edges, and stack the result as a layer.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{ConfigOverrides, PipelineConfig, ENV_PREFIX};

use crate::attention::{average_maps, binarize_location, AttentionCollection};
use crate::classifier::{classify, ClassifierParams};
use crate::compositor::metrics::{masked_pixel_metrics, pixel_metrics, PixelMetrics};
use crate::compositor::{extract_layer, EditLayer, EditSession, LayerMeta};
use crate::denoise::EditAction;
use crate::error::{Error, Result, StageExt};
use crate::grid::{BinaryMask, Image};
use crate::io;
use crate::refine::{check_relative, read_segment_dir, refine, SegmentSet};
use crate::smoother::smooth_stages;

pub const SESSION_DIR: &str = "session";
pub const FINAL_IMAGE: &str = "final.png";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionEntry {
    pub path: String,
    pub step: u32,
    pub block: String,
}

/// Inputs produced by the model side for one instruction. Paths are
/// relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditManifest {
    pub canvas: String,
    pub attention: Vec<AttentionEntry>,
    pub segments: String,
    pub classifier: String,
    pub instruction_embedding: String,
}

impl EditManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        if m.attention.is_empty() {
            return Err(Error::Empty("attention list"));
        }
        for p in [
            &m.canvas,
            &m.segments,
            &m.classifier,
            &m.instruction_embedding,
        ] {
            check_relative(p)?;
        }
        for a in &m.attention {
            check_relative(&a.path)?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct EditInputs {
    pub canvas: Image,
    pub attention: AttentionCollection,
    pub segments: SegmentSet,
    pub classifier: ClassifierParams,
    pub embedding: Vec<f64>,
}

impl EditInputs {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = EditManifest::parse(&io::read_bytes(manifest_path)?)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let mut attention = AttentionCollection::default();
        for a in &manifest.attention {
            attention.push(
                a.step,
                a.block.clone(),
                io::read_tensor(dir.join(&a.path))?.into_grid3()?,
            );
        }
        Ok(Self {
            canvas: io::read_image(dir.join(&manifest.canvas))?,
            attention,
            segments: read_segment_dir(dir.join(&manifest.segments))?,
            classifier: ClassifierParams::load(dir.join(&manifest.classifier))?,
            embedding: read_embedding(dir.join(&manifest.instruction_embedding))?,
        })
    }
}

/// A single embedding stored as a 1xD tensor.
pub fn read_embedding(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let grid = io::read_tensor(path)?.into_grid2()?;
    if grid.height() != 1 {
        return Err(Error::shape(format!(
            "embedding tensor has {} rows, expected 1",
            grid.height()
        )));
    }
    Ok(grid.as_slice().iter().map(|&v| v as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskAreas {
    pub location: usize,
    pub refined: usize,
    pub smoothed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditReport {
    pub instruction: String,
    pub layer: String,
    pub action: EditAction,
    pub beta: f64,
    pub segment_index: usize,
    pub riou: f64,
    pub areas: MaskAreas,
    /// Final composite against the original.
    pub metrics: PixelMetrics,
    /// Same, restricted to pixels no layer covers; zero when edits stay local.
    pub untouched: PixelMetrics,
    pub layers: usize,
    pub timings: Vec<StageTiming>,
    pub config: PipelineConfig,
    pub seed: u64,
}

impl EditReport {
    pub fn summary(&self) -> String {
        format!(
            "{} ({}) riou={:.6} area={} l1={:.6} l2={:.6} layers={}",
            self.layer,
            self.action,
            self.riou,
            self.areas.smoothed,
            self.metrics.l1,
            self.metrics.l2,
            self.layers
        )
    }
}

/// In-memory result of one edit.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub action: EditAction,
    pub beta: f64,
    pub location: BinaryMask,
    pub segment_index: usize,
    pub riou: f64,
    pub refined: BinaryMask,
    pub smoothed: BinaryMask,
    pub layer: EditLayer,
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

/// Runs every stage from classification to layer extraction.
pub fn edit(
    original: &Image,
    inputs: &EditInputs,
    layer_name: &str,
    instruction: &str,
    config: &PipelineConfig,
) -> Result<EditOutcome> {
    edit_timed(
        original,
        inputs,
        layer_name,
        instruction,
        config,
        &mut Timer {
            timings: Vec::new(),
        },
    )
}

fn edit_timed(
    original: &Image,
    inputs: &EditInputs,
    layer_name: &str,
    instruction: &str,
    config: &PipelineConfig,
    timer: &mut Timer,
) -> Result<EditOutcome> {
    config.validate().stage("config")?;
    let (h, w) = original.dims();
    let action = timer.run("classify", || {
        classify(&inputs.classifier, &inputs.embedding)
    })?;
    let location = timer.run("localize", || {
        let localizer = config.localizer(h, w);
        let mask = binarize_location(&average_maps(&inputs.attention, &localizer)?, &localizer)?;
        if mask.is_empty() {
            return Err(Error::NoEditRegion);
        }
        Ok(mask)
    })?;
    let refinement = timer.run("refine", || {
        let r = refine(&inputs.segments, &location)?;
        if r.score < config.min_riou {
            return Err(Error::LowRegionIou {
                score: r.score,
                min: config.min_riou,
            });
        }
        Ok(r)
    })?;
    let smoothed = timer.run("smooth", || {
        Ok(smooth_stages(
            original,
            &inputs.canvas,
            &refinement.mask,
            &config.smoother(),
        )?
        .final_mask)
    })?;
    let layer = timer.run("extract", || {
        extract_layer(
            &inputs.canvas,
            &smoothed,
            LayerMeta {
                name: layer_name.to_string(),
                instruction: instruction.to_string(),
                action,
            },
        )
    })?;
    Ok(EditOutcome {
        action,
        beta: config.fusion().beta(action),
        location,
        segment_index: refinement.index,
        riou: refinement.score,
        refined: refinement.mask,
        smoothed,
        layer,
    })
}

/// Paths written by [`run_edit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub session: PathBuf,
    pub final_image: PathBuf,
    pub report: PathBuf,
}

impl RunPaths {
    pub fn new(out: impl AsRef<Path>) -> Self {
        let out = out.as_ref();
        Self {
            session: out.join(SESSION_DIR),
            final_image: out.join(FINAL_IMAGE),
            report: out.join(REPORT_FILE),
        }
    }
}

/// Applies one instruction and writes `session/`, `final.png` and
/// `report.json` under `out`. An existing session in `out` gains a layer.
pub fn run_edit(
    original: impl AsRef<Path>,
    instruction: &str,
    manifest: impl AsRef<Path>,
    config: &PipelineConfig,
    out: impl AsRef<Path>,
) -> Result<EditReport> {
    let paths = RunPaths::new(out);
    let mut timer = Timer {
        timings: Vec::new(),
    };
    let (original, inputs, mut session) = timer.run("load", || {
        let original = io::read_image(original.as_ref())?;
        let inputs = EditInputs::load(manifest.as_ref())?;
        let session = if paths
            .session
            .join(crate::compositor::session::SESSION_MANIFEST)
            .exists()
        {
            let s = EditSession::load(&paths.session)?;
            s.base().ensure_same_dims(&original, "session base")?;
            s
        } else {
            EditSession::new(original.clone())
        };
        Ok((original, inputs, session))
    })?;
    let seq = session.history().last().map_or(0, |h| h.seq + 1);
    let name = format!("edit-{seq:02}");
    let outcome = edit_timed(&original, &inputs, &name, instruction, config, &mut timer)?;
    let areas = MaskAreas {
        location: outcome.location.count(),
        refined: outcome.refined.count(),
        smoothed: outcome.smoothed.count(),
    };
    let flat = timer.run("composite", || {
        session.add_layer(outcome.layer.clone())?;
        session.flatten()
    })?;
    let (metrics, untouched) = timer.run("metrics", || {
        let covered = session
            .layers()
            .iter()
            .fold(BinaryMask::empty(flat.height(), flat.width()), |acc, l| {
                acc.union(&l.mask)
            });
        Ok((
            pixel_metrics(&flat, &original)?,
            masked_pixel_metrics(&flat, session.base(), &covered.complement())?,
        ))
    })?;
    timer.run("write", || {
        session.save(&paths.session)?;
        io::write_image(&flat, &paths.final_image)
    })?;
    let report = EditReport {
        instruction: instruction.to_string(),
        layer: name,
        action: outcome.action,
        beta: outcome.beta,
        segment_index: outcome.segment_index,
        riou: outcome.riou,
        areas,
        metrics,
        untouched,
        layers: session.layers().len(),
        timings: timer.timings,
        config: *config,
        seed: config.seed,
    };
    io::write_json(&paths.report, &report).stage("write")?;
    Ok(report)
}
