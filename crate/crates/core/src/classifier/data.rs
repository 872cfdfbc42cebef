//! Labeled embedding sets: files and the synthetic blob fixture.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EMBED_DIM;
use crate::denoise::EditAction;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::io::{self, Tensor};
use crate::rng::Counter;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub embedding: Vec<f64>,
    pub label: EditAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledEmbedding>,
    pub test: Vec<LabeledEmbedding>,
}

impl Dataset {
    /// Common embedding width of all samples.
    pub fn dim(&self) -> Result<usize> {
        let mut all = self.train.iter().chain(&self.test);
        let first = all.next().ok_or(Error::Empty("dataset"))?.embedding.len();
        if first == 0 {
            return Err(Error::shape("zero-width embeddings"));
        }
        if let Some(bad) = all.find(|s| s.embedding.len() != first) {
            return Err(Error::shape(format!(
                "mixed embedding widths {first} and {}",
                bad.embedding.len()
            )));
        }
        Ok(first)
    }

    pub fn split(&self, split: Split) -> &[LabeledEmbedding] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Writes `train.ztf`, `train.labels`, `test.ztf`, `test.labels`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::create_dir_all(dir)?;
        for split in [Split::Train, Split::Test] {
            let stem = split.stem();
            write_split(
                self.split(split),
                dir.join(format!("{stem}.ztf")),
                dir.join(format!("{stem}.labels")),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let load = |split: Split| {
            let stem = split.stem();
            read_split(
                dir.join(format!("{stem}.ztf")),
                dir.join(format!("{stem}.labels")),
            )
        };
        Ok(Self {
            train: load(Split::Train)?,
            test: load(Split::Test)?,
        })
    }
}

/// One integer label per line; blank lines are skipped.
pub fn parse_labels(text: &str) -> Result<Vec<EditAction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let n: usize = l.trim().parse().map_err(|_| {
                Error::invalid(format!(
                    "label line {}: {:?} is not an integer",
                    i + 1,
                    l.trim()
                ))
            })?;
            EditAction::from_label(n)
        })
        .collect()
}

pub fn format_labels(labels: impl IntoIterator<Item = EditAction>) -> String {
    labels
        .into_iter()
        .map(|a| format!("{}\n", a.label()))
        .collect()
}

pub fn read_split(
    matrix: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<Vec<LabeledEmbedding>> {
    let grid = io::read_tensor(matrix)?.into_grid2()?;
    let labels = labels.as_ref();
    let text = String::from_utf8(io::read_bytes(labels)?)
        .map_err(|_| Error::invalid(format!("{} is not UTF-8", labels.display())))?;
    let labels = parse_labels(&text)?;
    if labels.len() != grid.height() {
        return Err(Error::shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            grid.height()
        )));
    }
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(r, label)| LabeledEmbedding {
            embedding: grid.row(r).iter().map(|&v| v as f64).collect(),
            label,
        })
        .collect())
}

pub fn write_split(
    samples: &[LabeledEmbedding],
    matrix: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    let first = samples.first().ok_or(Error::Empty("split"))?;
    let width = first.embedding.len();
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.embedding.len() != width {
            return Err(Error::shape("mixed embedding widths"));
        }
        data.extend(s.embedding.iter().map(|&v| v as f32));
    }
    io::write_tensor(
        &Tensor::Rank2(Grid2D::new(samples.len(), width, data)?),
        matrix,
    )?;
    io::write_bytes(
        labels.as_ref(),
        format_labels(samples.iter().map(|s| s.label)).as_bytes(),
    )
}

/// Three Gaussian blobs, one per action. Centers are dense random sign
/// vectors scaled so every center lies at least `margin_sigmas` noise
/// deviations from each pairwise bisector (closest pair 2x that apart).
/// Samples are redrawn until they lie on their own center's side of every
/// bisector with at least `gap_sigmas` to spare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub margin_sigmas: f64,
    pub gap_sigmas: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            dim: EMBED_DIM,
            train_per_class: 150,
            test_per_class: 50,
            margin_sigmas: 5.0,
            gap_sigmas: 2.0,
        }
    }
}

impl BlobSpec {
    /// Per-coordinate noise deviation; keeps embedding norms near 1.
    pub fn sigma(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    pub fn centers(&self, seed: u64) -> [Vec<f64>; 3] {
        let mut rng = Counter::new(seed, 0x626c_6f62);
        let mut centers: [Vec<f64>; 3] = std::array::from_fn(|_| {
            (0..self.dim)
                .map(|_| if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 })
                .collect()
        });
        let mut closest = f64::INFINITY;
        for a in 0..3 {
            for b in a + 1..3 {
                closest = closest.min(distance(&centers[a], &centers[b]));
            }
        }
        let scale = 2.0 * self.margin_sigmas * self.sigma() / closest;
        centers.iter_mut().flatten().for_each(|v| *v *= scale);
        centers
    }

    /// One sample of `class`, redrawn until it clears every bisector.
    fn draw(&self, centers: &[Vec<f64>; 3], rng: &mut Counter, class: usize) -> LabeledEmbedding {
        let sigma = self.sigma();
        loop {
            let x: Vec<f64> = centers[class]
                .iter()
                .map(|c| c + sigma * rng.normal())
                .collect();
            let inside = (0..3).filter(|&j| j != class).all(|j| {
                let d = distance(&centers[class], &centers[j]);
                let along: f64 = x
                    .iter()
                    .zip(&centers[class])
                    .zip(&centers[j])
                    .map(|((xi, ci), cj)| (xi - ci) * (cj - ci))
                    .sum::<f64>()
                    / d;
                along < 0.5 * d - self.gap_sigmas * sigma
            });
            if inside {
                return LabeledEmbedding {
                    embedding: x,
                    label: EditAction::ALL[class],
                };
            }
        }
    }

    pub fn generate(&self, seed: u64) -> Dataset {
        let centers = self.centers(seed);
        let mut rng = Counter::new(seed, 0x7361_6d70);
        let mut split = |per_class: usize| {
            let mut out = Vec::with_capacity(3 * per_class);
            for _ in 0..per_class {
                for class in 0..3 {
                    out.push(self.draw(&centers, &mut rng, class));
                }
            }
            out
        };
        let train = split(self.train_per_class);
        let test = split(self.test_per_class);
        Dataset { train, test }
    }

    /// A fresh sample from the blobs of `seed`, independent of both splits.
    pub fn sample(&self, seed: u64, action: EditAction, stream: u64) -> LabeledEmbedding {
        let centers = self.centers(seed);
        let mut rng = Counter::new(seed, 0x6578_7472_0000_0000 | stream);
        self.draw(&centers, &mut rng, action.label())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
