//! One-hidden-layer tanh classifier with hand-written forward and backward
//! passes.
//!
//! Weights are stored row-major: `w1` is `hidden x input`, `w2` is
//! `classes x hidden`. The [`View`] decides which feature blocks of an
//! [`Example`](crate::datagen::Example) reach the input layer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::datagen::Example;
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::rng::{self, Stream};

pub const NUM_CLASSES: usize = 3;

const CKPT_MAGIC: &[u8; 8] = b"FLCKPT\0\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum View {
    /// Genuine features followed by shortcut features.
    #[default]
    Full,
    /// Shortcut features only; the hypothesis-only bias model.
    ShortcutOnly,
}

impl View {
    fn tag(self) -> u8 {
        match self {
            View::Full => 0,
            View::ShortcutOnly => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(View::Full),
            1 => Some(View::ShortcutOnly),
            _ => None,
        }
    }

    pub fn input_dim(self, genuine_dim: usize, shortcut_dim: usize) -> usize {
        match self {
            View::Full => genuine_dim + shortcut_dim,
            View::ShortcutOnly => shortcut_dim,
        }
    }
}

/// Project an example onto the features a model with `view` consumes.
pub fn apply_view(example: &Example, view: View) -> Vec<f64> {
    let mut out = Vec::with_capacity(view.input_dim(example.genuine.len(), example.shortcut.len()));
    write_view(example, view, &mut out);
    out
}

pub(crate) fn write_view(example: &Example, view: View, out: &mut Vec<f64>) {
    if view == View::Full {
        out.extend_from_slice(&example.genuine);
    }
    out.extend_from_slice(&example.shortcut);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub view: View,
    pub seed: u64,
}

/// Gradients shaped like the [`ModelParams`] they differentiate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases.
pub fn init_params(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<ModelParams> {
    init_params_with_view(input_dim, hidden_dim, seed, View::Full)
}

pub fn init_params_with_view(input_dim: usize, hidden_dim: usize, seed: u64, view: View) -> Result<ModelParams> {
    if input_dim == 0 || hidden_dim == 0 {
        return Err(Error::invalid(
            "model dimensions",
            format!("input {input_dim} and hidden {hidden_dim} must both be >= 1"),
        ));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let mut uniform = |fan_in: usize, n: usize| -> Vec<f64> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    };
    let w1 = uniform(input_dim, hidden_dim * input_dim);
    let w2 = uniform(hidden_dim, NUM_CLASSES * hidden_dim);
    Ok(ModelParams {
        input_dim,
        hidden_dim,
        w1,
        b1: vec![0.0; hidden_dim],
        w2,
        b2: vec![0.0; NUM_CLASSES],
        view,
        seed,
    })
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, view: View) -> Self {
        ModelParams {
            input_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; NUM_CLASSES * hidden_dim],
            b2: vec![0.0; NUM_CLASSES],
            view,
            seed: 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = [
            self.hidden_dim * self.input_dim,
            self.hidden_dim,
            NUM_CLASSES * self.hidden_dim,
            NUM_CLASSES,
        ];
        for (name, (slice, want)) in ["w1", "b1", "w2", "b2"]
            .into_iter()
            .zip(self.slices().into_iter().zip(expected))
        {
            if slice.len() != want {
                return Err(Error::invalid(
                    "model parameters",
                    format!("{name} has {} entries, want {want}", slice.len()),
                ));
            }
            if let Some(i) = slice.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "model parameters",
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Logits for an example, projected through this model's view.
    pub fn logits_for(&self, example: &Example) -> Result<Vec<f64>> {
        let x = apply_view(example, self.view);
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut logits = vec![0.0; NUM_CLASSES];
        self.forward_into(&x, &mut hidden, &mut logits)?;
        Ok(logits)
    }

    pub fn probs_for(&self, example: &Example) -> Result<Vec<f64>> {
        Ok(losses::softmax(&self.logits_for(example)?)?.into_inner())
    }

    /// Writes tanh activations into `hidden` and logits into `logits`.
    pub(crate) fn forward_into(&self, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::LengthMismatch {
                what: "model input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        for (h, (row, b)) in hidden
            .iter_mut()
            .zip(self.w1.chunks_exact(self.input_dim).zip(&self.b1))
        {
            *h = (dot(row, x) + b).tanh();
        }
        for (z, (row, b)) in logits
            .iter_mut()
            .zip(self.w2.chunks_exact(self.hidden_dim).zip(&self.b2))
        {
            *z = dot(row, hidden) + b;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + 8 * self.num_params());
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.push(self.view.tag());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for dim in [self.input_dim, self.hidden_dim, NUM_CLASSES] {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for slice in self.slices() {
            for x in slice {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let mut cur = ByteCursor { bytes: &bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != CKPT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CKPT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let view = cur
            .take(1)
            .and_then(|t| View::from_tag(t[0]))
            .ok_or_else(|| bad("unknown view tag"))?;
        let seed = cur.u64().ok_or_else(|| bad("truncated header"))?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = cur.u64().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [input_dim, hidden_dim, classes] = dims;
        if classes != NUM_CLASSES {
            return Err(bad(&format!("{classes} classes, expected {NUM_CLASSES}")));
        }
        let mut params = ModelParams::zeros(input_dim, hidden_dim, view);
        params.seed = seed;
        for slice in params.slices_mut() {
            for x in slice.iter_mut() {
                *x = cur.f64().ok_or_else(|| bad("truncated parameter block"))?;
            }
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        params.validate()?;
        Ok(params)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            input_dim: params.input_dim,
            hidden_dim: params.hidden_dim,
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn fill_zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn matches(&self, params: &ModelParams) -> bool {
        self.input_dim == params.input_dim
            && self.hidden_dim == params.hidden_dim
            && self.w1.len() == params.w1.len()
            && self.w2.len() == params.w2.len()
    }

    /// Adds `d logits` backpropagated through one cached example.
    pub(crate) fn accumulate(
        &mut self,
        params: &ModelParams,
        x: &[f64],
        hidden: &[f64],
        grad_logits: &[f64],
        scratch: &mut [f64],
    ) {
        let (input_dim, hidden_dim) = (params.input_dim, params.hidden_dim);
        // scratch <- d hidden pre-activation
        scratch.iter_mut().for_each(|s| *s = 0.0);
        for (k, &gk) in grad_logits.iter().enumerate() {
            self.b2[k] += gk;
            let w2_row = &params.w2[k * hidden_dim..(k + 1) * hidden_dim];
            let gw2_row = &mut self.w2[k * hidden_dim..(k + 1) * hidden_dim];
            for j in 0..hidden_dim {
                gw2_row[j] += gk * hidden[j];
                scratch[j] += gk * w2_row[j];
            }
        }
        for j in 0..hidden_dim {
            let d = scratch[j] * (1.0 - hidden[j] * hidden[j]);
            if d == 0.0 {
                continue;
            }
            self.b1[j] += d;
            let row = &mut self.w1[j * input_dim..(j + 1) * input_dim];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w += d * xi;
            }
        }
    }
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let mut hidden = vec![0.0; params.hidden_dim];
    let mut logits = vec![0.0; NUM_CLASSES];
    params.forward_into(x, &mut hidden, &mut logits)?;
    Ok((
        logits,
        ForwardCache {
            input: x.to_vec(),
            hidden,
        },
    ))
}

pub fn backward(params: &ModelParams, cache: &ForwardCache, grad_logits: &[f64]) -> Result<ModelGrads> {
    if cache.input.len() != params.input_dim || cache.hidden.len() != params.hidden_dim {
        return Err(Error::invalid(
            "forward cache",
            format!(
                "cache is for a {}x{} model, parameters are {}x{}",
                cache.hidden.len(),
                cache.input.len(),
                params.hidden_dim,
                params.input_dim
            ),
        ));
    }
    if grad_logits.len() != NUM_CLASSES {
        return Err(Error::LengthMismatch {
            what: "logit gradient",
            expected: NUM_CLASSES,
            got: grad_logits.len(),
        });
    }
    let mut grads = ModelGrads::zeros_like(params);
    let mut scratch = vec![0.0; params.hidden_dim];
    grads.accumulate(params, &cache.input, &cache.hidden, grad_logits, &mut scratch);
    Ok(grads)
}

/// Mean loss over a batch and its parameter gradient.
///
/// `bias_probs[i]` supplies the frozen bias model's distribution for row `i`
/// when the loss needs one.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    inputs: &[&[f64]],
    labels: &[usize],
    loss: &LossSpec,
    bias_probs: Option<&[&[f64]]>,
) -> Result<(f64, ModelGrads)> {
    let mut ws = Workspace::new(params);
    let mut grads = ModelGrads::zeros_like(params);
    let total = ws.accumulate_batch(params, inputs, labels, loss, bias_probs, &mut grads)?;
    Ok((total, grads))
}

/// Reusable per-run buffers for the training hot loop.
pub(crate) struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    grad_logits: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(params: &ModelParams) -> Self {
        Workspace {
            hidden: vec![0.0; params.hidden_dim],
            logits: vec![0.0; NUM_CLASSES],
            probs: vec![0.0; NUM_CLASSES],
            grad_logits: vec![0.0; NUM_CLASSES],
            scratch: vec![0.0; params.hidden_dim],
        }
    }

    /// Accumulates reduced gradients into `grads` (which is not cleared) and
    /// returns the reduced loss.
    pub(crate) fn accumulate_batch(
        &mut self,
        params: &ModelParams,
        inputs: &[&[f64]],
        labels: &[usize],
        loss: &LossSpec,
        bias_probs: Option<&[&[f64]]>,
        grads: &mut ModelGrads,
    ) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if labels.len() != inputs.len() {
            return Err(Error::LengthMismatch {
                what: "batch labels",
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let scale = match loss.reduction {
            losses::Reduction::Mean => 1.0 / inputs.len() as f64,
            losses::Reduction::Sum => 1.0,
        };
        let mut total = 0.0;
        for (i, (&x, &y)) in inputs.iter().zip(labels).enumerate() {
            params.forward_into(x, &mut self.hidden, &mut self.logits)?;
            let bias = bias_probs.map(|b| b[i]);
            total += loss.sample_loss_and_grad(&self.logits, y, bias, &mut self.probs, &mut self.grad_logits)?;
            self.grad_logits.iter_mut().for_each(|g| *g *= scale);
            grads.accumulate(params, x, &self.hidden, &self.grad_logits, &mut self.scratch);
        }
        Ok(total * scale)
    }

    /// Per-example loss without gradients.
    pub(crate) fn sample_loss(
        &mut self,
        params: &ModelParams,
        x: &[f64],
        label: usize,
        loss: &LossSpec,
        bias: Option<&[f64]>,
    ) -> Result<f64> {
        params.forward_into(x, &mut self.hidden, &mut self.logits)?;
        loss.sample_loss_and_grad(&self.logits, label, bias, &mut self.probs, &mut self.grad_logits)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
