//! Region-IoU selection of the refined edit mask from segment candidates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::io;

pub const SEGMENT_MANIFEST: &str = "segments.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub mask: BinaryMask,
    /// Segmentation granularity the candidate came from, if known.
    pub level: Option<u32>,
}

/// Candidates pooled across every segmentation level.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments.first().ok_or(Error::Empty("segment set"))?;
        for s in &segments[1..] {
            first.mask.ensure_same_dims(&s.mask, "segment set")?;
        }
        Ok(Self { segments })
    }

    pub fn from_masks(masks: Vec<BinaryMask>) -> Result<Self> {
        Self::new(
            masks
                .into_iter()
                .map(|mask| Segment { mask, level: None })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.segments[0].mask.dims()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, index: usize) -> Option<&Segment> {
        self.segments.get(index)
    }
}

/// `|S ∩ M| / |S ∪ M|`, or 0 when both masks are empty.
pub fn region_iou(segment: &BinaryMask, location: &BinaryMask) -> Result<f64> {
    segment.ensure_same_dims(location, "region IoU")?;
    let (inter, union) = segment
        .bits()
        .iter()
        .zip(location.bits())
        .fold((0usize, 0usize), |(i, u), (&a, &b)| {
            (i + (a && b) as usize, u + (a || b) as usize)
        });
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub mask: BinaryMask,
    pub index: usize,
    pub score: f64,
}

/// Picks the candidate with the highest Region-IoU against the location
/// mask. Ties go to the lowest index.
pub fn refine(segments: &SegmentSet, location: &BinaryMask) -> Result<Refinement> {
    if segments.is_empty() {
        return Err(Error::Empty("segment set"));
    }
    if location.is_empty() {
        return Err(Error::NoEditRegion);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in segments.segments().iter().enumerate() {
        let score = region_iou(&s.mask, location)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    let (index, score) = best.expect("non-empty set");
    Ok(Refinement {
        mask: segments.segments()[index].mask.clone(),
        index,
        score,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

/// `segments.json`: candidate order plus optional level per mask file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentManifest {
    pub segments: Vec<SegmentEntry>,
}

impl SegmentManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(bytes)?;
        for entry in &manifest.segments {
            check_relative(&entry.file)?;
        }
        Ok(manifest)
    }
}

/// Rejects absolute paths and parent traversal in manifest file references.
pub(crate) fn check_relative(file: &str) -> Result<()> {
    let path = Path::new(file);
    let escapes = path.components().any(|c| {
        !matches!(
            c,
            std::path::Component::Normal(_) | std::path::Component::CurDir
        )
    });
    if file.is_empty() || escapes {
        return Err(Error::invalid(format!(
            "manifest path {file:?} must be relative and stay inside its directory"
        )));
    }
    Ok(())
}

pub fn read_segment_dir(dir: impl AsRef<Path>) -> Result<SegmentSet> {
    let dir = dir.as_ref();
    let manifest = SegmentManifest::parse(&io::read_bytes(&dir.join(SEGMENT_MANIFEST))?)?;
    let segments = manifest
        .segments
        .iter()
        .map(|e| {
            Ok(Segment {
                mask: io::read_mask(dir.join(&e.file))?,
                level: e.level,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SegmentSet::new(segments)
}

pub fn write_segment_dir(set: &SegmentSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    io::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, s) in set.segments().iter().enumerate() {
        let file = format!("{i:04}.png");
        io::write_mask(&s.mask, dir.join(&file))?;
        entries.push(SegmentEntry {
            file,
            level: s.level,
        });
    }
    io::write_json(
        &dir.join(SEGMENT_MANIFEST),
        &SegmentManifest { segments: entries },
    )
}
