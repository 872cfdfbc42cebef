//! Multi-turn edit sessions: an ordered layer stack over one base image.
//!
//! On disk a session is a directory:
//!
//! ```text
//! base.png
//! layers/NN_name.png        RGBA layer
//! layers/NN_name.mask.png   1-bit mask
//! session.json              order, metadata, history
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{composite, EditLayer, LayerMeta};
use crate::denoise::EditAction;
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::io;
use crate::refine::check_relative;

pub const SESSION_MANIFEST: &str = "session.json";
pub const BASE_FILE: &str = "base.png";
pub const LAYER_DIR: &str = "layers";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SessionOp {
    Add {
        name: String,
        instruction: String,
        action: EditAction,
    },
    Remove {
        name: String,
    },
    Reorder {
        name: String,
        index: usize,
    },
}

/// One history record. `seq` is a logical clock so saved sessions are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub op: SessionOp,
}

#[derive(Debug, Clone)]
pub struct EditSession {
    base: Image,
    layers: Vec<EditLayer>,
    history: Vec<HistoryEntry>,
}

impl EditSession {
    pub fn new(base: Image) -> Self {
        Self {
            base,
            layers: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn base(&self) -> &Image {
        &self.base
    }

    pub fn layers(&self) -> &[EditLayer] {
        &self.layers
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn layer(&self, name: &str) -> Option<&EditLayer> {
        self.layers.iter().find(|l| l.name() == name)
    }

    fn position(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    fn record(&mut self, op: SessionOp) {
        let seq = self.history.last().map_or(0, |h| h.seq + 1);
        self.history.push(HistoryEntry { seq, op });
    }

    /// Appends a layer on top of the stack.
    pub fn add_layer(&mut self, layer: EditLayer) -> Result<()> {
        validate_name(layer.name())?;
        if self.layer(layer.name()).is_some() {
            return Err(Error::DuplicateLayer(layer.name().to_string()));
        }
        self.base.ensure_same_dims(&layer.pixels, "session layer")?;
        self.record(SessionOp::Add {
            name: layer.meta.name.clone(),
            instruction: layer.meta.instruction.clone(),
            action: layer.meta.action,
        });
        self.layers.push(layer);
        Ok(())
    }

    pub fn remove_layer(&mut self, name: &str) -> Result<EditLayer> {
        let i = self.position(name)?;
        self.record(SessionOp::Remove {
            name: name.to_string(),
        });
        Ok(self.layers.remove(i))
    }

    /// Moves a layer to `index` in the bottom-to-top order.
    pub fn reorder(&mut self, name: &str, index: usize) -> Result<()> {
        let i = self.position(name)?;
        if index >= self.layers.len() {
            return Err(Error::invalid(format!(
                "index {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        let layer = self.layers.remove(i);
        self.layers.insert(index, layer);
        self.record(SessionOp::Reorder {
            name: name.to_string(),
            index,
        });
        Ok(())
    }

    pub fn flatten(&self) -> Result<Image> {
        composite(&self.base, &self.layers)
    }

    /// Rebuilds a session by re-applying `history`; added layers are looked
    /// up by name in `pool`.
    pub fn replay(base: Image, history: &[HistoryEntry], pool: &[EditLayer]) -> Result<Self> {
        let mut session = Self::new(base);
        for entry in history {
            match &entry.op {
                SessionOp::Add { name, .. } => {
                    let layer = pool
                        .iter()
                        .find(|l| l.name() == name)
                        .ok_or_else(|| Error::UnknownLayer(name.clone()))?;
                    session.add_layer(layer.clone())?;
                }
                SessionOp::Remove { name } => {
                    session.remove_layer(name)?;
                }
                SessionOp::Reorder { name, index } => session.reorder(name, *index)?,
            }
        }
        Ok(session)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let layer_dir = dir.join(LAYER_DIR);
        io::create_dir_all(&layer_dir)?;
        clear_layer_files(&layer_dir)?;
        io::write_image(&self.base, dir.join(BASE_FILE))?;
        let mut entries = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let stem = format!("{i:02}_{}", layer.name());
            let file = format!("{LAYER_DIR}/{stem}.png");
            let mask = format!("{LAYER_DIR}/{stem}.mask.png");
            io::write_image(&layer.pixels, dir.join(&file))?;
            io::write_mask(&layer.mask, dir.join(&mask))?;
            entries.push(LayerEntry {
                name: layer.meta.name.clone(),
                file,
                mask,
                instruction: layer.meta.instruction.clone(),
                action: layer.meta.action,
            });
        }
        let manifest = SessionManifest {
            version: FORMAT_VERSION,
            base: BASE_FILE.to_string(),
            layers: entries,
            history: self.history.clone(),
        };
        io::write_json(&dir.join(SESSION_MANIFEST), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = SessionManifest::parse(&io::read_bytes(&dir.join(SESSION_MANIFEST))?)?;
        let base = io::read_image(dir.join(&manifest.base))?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for entry in manifest.layers {
            let meta = LayerMeta {
                name: entry.name,
                instruction: entry.instruction,
                action: entry.action,
            };
            let layer = EditLayer::from_parts(
                meta,
                io::read_image(dir.join(&entry.file))?,
                io::read_mask(dir.join(&entry.mask))?,
            )?;
            base.ensure_same_dims(&layer.pixels, "session layer")?;
            layers.push(layer);
        }
        Ok(Self {
            base,
            layers,
            history: manifest.history,
        })
    }
}

fn clear_layer_files(layer_dir: &Path) -> Result<()> {
    let entries = std::fs::read_dir(layer_dir).map_err(|e| Error::io(layer_dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(layer_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Layer names double as file-name components.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if !ok {
        return Err(Error::invalid(format!(
            "layer name {name:?} must be 1-64 characters of [A-Za-z0-9_-]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub file: String,
    pub mask: String,
    pub instruction: String,
    pub action: EditAction,
}

/// `session.json` contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub version: u32,
    pub base: String,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

impl SessionManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let manifest: Self = serde_json::from_slice(bytes)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported session version {}",
                manifest.version
            )));
        }
        check_relative(&manifest.base)?;
        let mut names = std::collections::HashSet::new();
        for layer in &manifest.layers {
            validate_name(&layer.name)?;
            check_relative(&layer.file)?;
            check_relative(&layer.mask)?;
            if !names.insert(layer.name.as_str()) {
                return Err(Error::DuplicateLayer(layer.name.clone()));
            }
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::extract_layer;
    use crate::grid::BinaryMask;
    use crate::rng::Counter;

    fn noise_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = Counter::new(seed, 0);
        Image::from_fn_rgb(h, w, |_, _| {
            let v = rng.next_u64().to_le_bytes();
            [v[0], v[1], v[2]]
        })
    }

    fn layer(name: &str, seed: u64, mask: BinaryMask) -> EditLayer {
        let (h, w) = mask.dims();
        extract_layer(
            &noise_image(seed, h, w),
            &mask,
            LayerMeta {
                name: name.into(),
                instruction: format!("make {name} blue"),
                action: EditAction::Change,
            },
        )
        .unwrap()
    }

    fn three_layers() -> Vec<EditLayer> {
        vec![
            layer("a", 1, BinaryMask::from_fn(8, 8, |r, _| r < 5)),
            layer("b", 2, BinaryMask::from_fn(8, 8, |_, c| c < 5)),
            layer("c", 3, BinaryMask::from_fn(8, 8, |r, c| r + c > 6)),
        ]
    }

    #[test]
    fn empty_session_flattens_to_base() {
        let base = noise_image(9, 8, 8);
        assert_eq!(EditSession::new(base.clone()).flatten().unwrap(), base);
    }

    #[test]
    fn add_then_remove_restores_base() {
        let base = noise_image(9, 8, 8);
        let mut s = EditSession::new(base.clone());
        s.add_layer(layer("hat", 4, BinaryMask::full(8, 8)))
            .unwrap();
        assert_ne!(s.flatten().unwrap(), base);
        s.remove_layer("hat").unwrap();
        assert_eq!(s.flatten().unwrap(), base);
        assert_eq!(s.history().len(), 2);
        assert_eq!(s.history()[1].seq, 1);
    }

    #[test]
    fn reorder_matches_permuted_composite() {
        let base = noise_image(9, 8, 8);
        let layers = three_layers();
        let mut s = EditSession::new(base.clone());
        for l in &layers {
            s.add_layer(l.clone()).unwrap();
        }
        s.reorder("c", 0).unwrap();
        s.reorder("a", 2).unwrap();
        let permuted = [layers[2].clone(), layers[1].clone(), layers[0].clone()];
        assert_eq!(s.flatten().unwrap(), composite(&base, &permuted).unwrap());
    }

    #[test]
    fn errors_on_unknown_and_duplicate() {
        let mut s = EditSession::new(noise_image(9, 8, 8));
        s.add_layer(layer("a", 1, BinaryMask::full(8, 8))).unwrap();
        assert!(matches!(
            s.add_layer(layer("a", 2, BinaryMask::full(8, 8))),
            Err(Error::DuplicateLayer(_))
        ));
        assert!(matches!(s.remove_layer("zz"), Err(Error::UnknownLayer(_))));
        assert!(matches!(s.reorder("zz", 0), Err(Error::UnknownLayer(_))));
        assert!(s.reorder("a", 1).is_err());
        assert!(s
            .add_layer(layer("bad name", 3, BinaryMask::full(8, 8)))
            .is_err());
        assert!(s
            .add_layer(layer("small", 3, BinaryMask::full(4, 4)))
            .is_err());
        // failed operations leave no history
        assert_eq!(s.history().len(), 1);
    }

    #[test]
    fn replay_reproduces_flatten() {
        let base = noise_image(9, 8, 8);
        let layers = three_layers();
        let mut s = EditSession::new(base.clone());
        for l in &layers {
            s.add_layer(l.clone()).unwrap();
        }
        s.reorder("b", 2).unwrap();
        s.remove_layer("a").unwrap();
        let replayed = EditSession::replay(base, s.history(), &layers).unwrap();
        assert_eq!(replayed.flatten().unwrap(), s.flatten().unwrap());
        assert_eq!(replayed.history(), s.history());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = EditSession::new(noise_image(9, 8, 8));
        for l in three_layers() {
            s.add_layer(l).unwrap();
        }
        s.save(dir.path()).unwrap();
        let loaded = EditSession::load(dir.path()).unwrap();
        assert_eq!(loaded.layers(), s.layers());
        assert_eq!(loaded.history(), s.history());
        assert_eq!(loaded.flatten().unwrap(), s.flatten().unwrap());
        assert!(dir.path().join("layers/01_b.mask.png").exists());

        // re-saving after a removal drops the stale files
        let mut loaded = loaded;
        loaded.remove_layer("b").unwrap();
        loaded.save(dir.path()).unwrap();
        assert!(!dir.path().join("layers/01_b.png").exists());
        assert_eq!(EditSession::load(dir.path()).unwrap().layers().len(), 2);
    }

    #[test]
    fn manifest_validation() {
        let ok = br#"{"version":1,"base":"base.png","layers":[{"name":"a","file":"layers/00_a.png","mask":"layers/00_a.mask.png","instruction":"x","action":"add"}],"history":[{"seq":0,"op":"add","name":"a","instruction":"x","action":"add"}]}"#;
        assert!(SessionManifest::parse(ok).is_ok());
        let bad_version = br#"{"version":2,"base":"base.png","layers":[]}"#;
        assert!(SessionManifest::parse(bad_version).is_err());
        let escape = br#"{"version":1,"base":"../base.png","layers":[]}"#;
        assert!(SessionManifest::parse(escape).is_err());
        let dup = br#"{"version":1,"base":"b.png","layers":[{"name":"a","file":"x.png","mask":"y.png","instruction":"","action":"add"},{"name":"a","file":"z.png","mask":"w.png","instruction":"","action":"add"}]}"#;
        assert!(matches!(
            SessionManifest::parse(dup),
            Err(Error::DuplicateLayer(_))
        ));
    }
}
