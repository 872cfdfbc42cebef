//! Instruction action classifier: a two-layer ReLU MLP over text embeddings
//! with softmax cross-entropy, trained full-batch with Adam.

pub mod data;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::EditAction;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::io::{self, Tensor};
use crate::refine::check_relative;
use crate::rng::Counter;

pub use data::{parse_labels, read_split, write_split, BlobSpec, Dataset, LabeledEmbedding, Split};

pub const EMBED_DIM: usize = 768;
pub const HIDDEN_DIM: usize = 128;
pub const NUM_CLASSES: usize = 3;

pub const PARAMS_MANIFEST: &str = "classifier.json";

/// Row-major weights: `w1` is hidden×input, `w2` is classes×hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    input: usize,
    hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; NUM_CLASSES * hidden],
            b2: vec![0.0; NUM_CLASSES],
        }
    }

    pub fn from_parts(
        input: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let p = Self {
            input,
            hidden,
            w1,
            b1,
            w2,
            b2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(input: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input, hidden);
        let mut rng = Counter::new(seed, 0x636c_6173);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        p.w1.iter_mut()
            .chain(p.b1.iter_mut())
            .for_each(|v| *v = rng.range(-a1, a1));
        p.w2.iter_mut()
            .chain(p.b2.iter_mut())
            .for_each(|v| *v = rng.range(-a2, a2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let expect = [
            ("w1", self.w1.len(), self.hidden * self.input),
            ("b1", self.b1.len(), self.hidden),
            ("w2", self.w2.len(), NUM_CLASSES * self.hidden),
            ("b2", self.b2.len(), NUM_CLASSES),
        ];
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::shape("classifier dims must be nonzero"));
        }
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::shape(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        Ok(())
    }

    fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if (self.input, self.hidden) != (other.input, other.hidden) {
            return Err(Error::shape(format!(
                "parameter shapes {}x{} and {}x{} differ",
                self.input, self.hidden, other.input, other.hidden
            )));
        }
        Ok(())
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat view in w1, b1, w2, b2 order.
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut i = index;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::shape(format!(
                "embedding has {} values, expected {}",
                x.len(),
                self.input
            )));
        }
        Ok(())
    }

    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input)
            .zip(&self.b1)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    fn logits_from_hidden(&self, h: &[f64]) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        for (k, row) in self.w2.chunks_exact(self.hidden).enumerate() {
            out[k] = self.b2[k] + dot(row, h);
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::create_dir_all(dir)?;
        let shapes = [
            ("w1", self.hidden, self.input),
            ("b1", 1, self.hidden),
            ("w2", NUM_CLASSES, self.hidden),
            ("b2", 1, NUM_CLASSES),
        ];
        let mut files = Vec::new();
        for ((name, h, w), values) in shapes.into_iter().zip(self.tensors()) {
            let grid = Grid2D::new(h, w, values.iter().map(|&v| v as f32).collect())?;
            let file = format!("{name}.ztf");
            io::write_tensor(&Tensor::Rank2(grid), dir.join(&file))?;
            files.push(file);
        }
        let manifest = ParamsManifest {
            input_dim: self.input,
            hidden_dim: self.hidden,
            classes: NUM_CLASSES,
            w1: files[0].clone(),
            b1: files[1].clone(),
            w2: files[2].clone(),
            b2: files[3].clone(),
        };
        io::write_json(&dir.join(PARAMS_MANIFEST), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = ParamsManifest::parse(&io::read_bytes(&dir.join(PARAMS_MANIFEST))?)?;
        let read = |file: &str, h: usize, w: usize| -> Result<Vec<f64>> {
            let grid = io::read_tensor(dir.join(file))?.into_grid2()?;
            if grid.dims() != (h, w) {
                return Err(Error::shape(format!(
                    "{file} is {:?}, expected ({h}, {w})",
                    grid.dims()
                )));
            }
            Ok(grid.as_slice().iter().map(|&v| v as f64).collect())
        };
        Self::from_parts(
            m.input_dim,
            m.hidden_dim,
            read(&m.w1, m.hidden_dim, m.input_dim)?,
            read(&m.b1, 1, m.hidden_dim)?,
            read(&m.w2, NUM_CLASSES, m.hidden_dim)?,
            read(&m.b2, 1, NUM_CLASSES)?,
        )
    }
}

/// `classifier.json` next to the four parameter tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
}

impl ParamsManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        if m.classes != NUM_CLASSES {
            return Err(Error::invalid(format!(
                "classifier has {} classes, expected {NUM_CLASSES}",
                m.classes
            )));
        }
        if m.input_dim == 0
            || m.hidden_dim == 0
            || m.input_dim
                .checked_mul(m.hidden_dim)
                .is_none_or(|n| n > 1 << 28)
        {
            return Err(Error::invalid("classifier dims out of range"));
        }
        for f in [&m.w1, &m.b1, &m.w2, &m.b2] {
            check_relative(f)?;
        }
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn forward(params: &ClassifierParams, embedding: &[f64]) -> Result<[f64; NUM_CLASSES]> {
    params.check_input(embedding)?;
    let mut h = params.hidden_pre(embedding);
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(params.logits_from_hidden(&h))
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Argmax of the logits; ties go to the lowest label.
pub fn argmax(logits: &[f64; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

pub fn classify(params: &ClassifierParams, embedding: &[f64]) -> Result<EditAction> {
    EditAction::from_label(argmax(&forward(params, embedding)?))
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn loss_and_grad(
    params: &ClassifierParams,
    batch: &[LabeledEmbedding],
) -> Result<(f64, ClassifierParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (n_in, n_h) = (params.input, params.hidden);
    let mut grad = ClassifierParams::zeros(n_in, n_h);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut dh = vec![0.0; n_h];
    for sample in batch {
        let x = &sample.embedding;
        params.check_input(x)?;
        let label = sample.label.label();
        let pre = params.hidden_pre(x);
        let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let logits = params.logits_from_hidden(&h);

        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - logits[label];

        let mut dz = softmax(&logits);
        dz[label] -= 1.0;
        dz.iter_mut().for_each(|d| *d *= scale);

        dh.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..NUM_CLASSES {
            grad.b2[k] += dz[k];
            let w_row = &params.w2[k * n_h..(k + 1) * n_h];
            let g_row = &mut grad.w2[k * n_h..(k + 1) * n_h];
            for j in 0..n_h {
                g_row[j] += dz[k] * h[j];
                dh[j] += dz[k] * w_row[j];
            }
        }
        for j in 0..n_h {
            if pre[j] <= 0.0 {
                continue;
            }
            let d = dh[j];
            grad.b1[j] += d;
            let g_row = &mut grad.w1[j * n_in..(j + 1) * n_in];
            for (g, xi) in g_row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: ClassifierParams,
    pub second_moment: ClassifierParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ClassifierParams, config: AdamConfig) -> Self {
        let zeros = ClassifierParams::zeros(params.input, params.hidden);
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ClassifierParams,
    grads: &ClassifierParams,
    state: &mut AdamState,
) -> Result<()> {
    params.ensure_same_shape(grads)?;
    params.ensure_same_shape(&state.first_moment)?;
    params.ensure_same_shape(&state.second_moment)?;
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
    let moments = state
        .first_moment
        .tensors_mut()
        .into_iter()
        .zip(state.second_moment.tensors_mut());
    for ((p, g), (m, v)) in tensors.zip(moments) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            hidden_dim: HIDDEN_DIM,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-batch training loss before each epoch's update, then after the last.
    pub losses: Vec<f64>,
    pub train_top1: f64,
    pub test_top1: f64,
}

impl TrainReport {
    pub fn loss_non_increasing(&self) -> bool {
        self.losses.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn top1(params: &ClassifierParams, samples: &[LabeledEmbedding]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut hits = 0usize;
    for s in samples {
        if classify(params, &s.embedding)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Full-batch training: one Adam step per epoch over the whole train split.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(ClassifierParams, TrainReport)> {
    if dataset.train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if dataset.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let dim = dataset.dim()?;
    let mut params = ClassifierParams::init(dim, config.hidden_dim, config.seed);
    let mut state = AdamState::new(&params, config.adam);
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, grad) = loss_and_grad(&params, &dataset.train)?;
        losses.push(loss);
        adam_step(&mut params, &grad, &mut state)?;
    }
    losses.push(loss_and_grad(&params, &dataset.train)?.0);
    let report = TrainReport {
        losses,
        train_top1: top1(&params, &dataset.train)?,
        test_top1: top1(&params, &dataset.test)?,
    };
    Ok((params, report))
}
