//! AdamW with linear warmup/decay, SGD with per-epoch shrink, and global
//! gradient-norm clipping.
//!
//! Update rules work on anything exposing its storage as flat blocks, so the
//! same code drives [`ModelParams`] and the scalar models used in tests.

use crate::error::{Error, Result};
use crate::netmodel::{ModelGrads, ModelParams};

/// Parameter-shaped storage visible as a fixed list of flat blocks.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamBlocks for ModelParams {
    fn blocks(&self) -> Vec<&[f64]> {
        self.slices().to_vec()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut().into_iter().collect()
    }
}

impl ParamBlocks for ModelGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        self.slices().to_vec()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut().into_iter().collect()
    }
}

impl ParamBlocks for Vec<f64> {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimKind {
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSpec {
    pub kind: OptimKind,
    pub peak_lr: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    /// AdamW only.
    pub warmup_fraction: f64,
    /// SGD only.
    pub shrink_factor: f64,
    pub batch_size: usize,
}

impl Default for OptimSpec {
    fn default() -> Self {
        Self::sgd()
    }
}

impl OptimSpec {
    /// The recurrent-encoder recipe: lr 0.1, shrink 5 per epoch, clip 5.
    pub fn sgd() -> Self {
        OptimSpec {
            kind: OptimKind::Sgd,
            peak_lr: 0.1,
            adam_eps: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            clip_norm: Some(5.0),
            warmup_fraction: 0.0,
            shrink_factor: 5.0,
            batch_size: 32,
        }
    }

    /// The transformer fine-tuning recipe: AdamW at 2e-5 with 10% warmup.
    pub fn adamw() -> Self {
        OptimSpec {
            kind: OptimKind::AdamW,
            peak_lr: 2e-5,
            adam_eps: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            warmup_fraction: 0.1,
            shrink_factor: 1.0,
            batch_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |what, reason: String| Err(Error::invalid(what, reason));
        if !(self.peak_lr >= 0.0 && self.peak_lr.is_finite()) {
            return fail("peak_lr", format!("{} must be finite and >= 0", self.peak_lr));
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps", format!("{} must be > 0", self.adam_eps));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(name, format!("{b} outside [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay", format!("{} must be >= 0", self.weight_decay));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return fail("clip_norm", format!("{c} must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction", format!("{} outside [0, 1)", self.warmup_fraction));
        }
        if !(self.shrink_factor >= 1.0) {
            return fail("shrink_factor", format!("{} must be >= 1", self.shrink_factor));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step_counter: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub current_lr: f64,
}

impl OptimState {
    pub fn new<P: ParamBlocks>(params: &P, spec: &OptimSpec) -> Self {
        let zeros = || -> Vec<Vec<f64>> {
            match spec.kind {
                OptimKind::AdamW => params.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
                OptimKind::Sgd => Vec::new(),
            }
        };
        OptimState {
            step_counter: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            current_lr: spec.peak_lr,
        }
    }
}

fn global_norm<G: ParamBlocks>(grads: &G) -> Result<f64> {
    let mut sq = 0.0;
    let mut offset = 0;
    for block in grads.blocks() {
        for (i, &g) in block.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradients",
                    index: offset + i,
                });
            }
            sq += g * g;
        }
        offset += block.len();
    }
    Ok(sq.sqrt())
}

/// Rescales `grads` in place so its global L2 norm is at most `max_norm`.
/// Returns the applied scale.
pub fn clip_grad_norm_in_place<G: ParamBlocks>(grads: &mut G, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid("max_norm", format!("{max_norm} must be > 0")));
    }
    let norm = global_norm(grads)?;
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for block in grads.blocks_mut() {
        block.iter_mut().for_each(|g| *g *= scale);
    }
    Ok(scale)
}

pub fn clip_grad_norm<G: ParamBlocks + Clone>(grads: &G, max_norm: f64) -> Result<(G, f64)> {
    let mut out = grads.clone();
    let scale = clip_grad_norm_in_place(&mut out, max_norm)?;
    Ok((out, scale))
}

/// Linear ramp from 0 to `peak_lr` over `ceil(warmup_fraction * total)`
/// steps, then linear decay to 0 at `total_steps`.
pub fn warmup_linear_lr(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::invalid(
            "warmup_fraction",
            format!("{warmup_fraction} outside [0, 1)"),
        ));
    }
    let warm = warmup_steps(total_steps, warmup_fraction);
    if step < warm {
        return Ok(peak_lr * step as f64 / warm as f64);
    }
    let decay = total_steps - warm;
    if decay == 0 {
        return Ok(0.0);
    }
    Ok(peak_lr * (total_steps - step) as f64 / decay as f64)
}

pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    // Guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4.
    let raw = warmup_fraction * total_steps as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(total_steps)
}

/// Decoupled-weight-decay Adam update at `state.current_lr`, with
/// bias-corrected moments.
pub fn adamw_step<P: ParamBlocks, G: ParamBlocks>(
    state: &mut OptimState,
    params: &mut P,
    grads: &G,
    spec: &OptimSpec,
) -> Result<()> {
    let mut param_blocks = params.blocks_mut();
    let grad_blocks = grads.blocks();
    if param_blocks.len() != grad_blocks.len() || state.first_moment.len() != grad_blocks.len() {
        return Err(Error::invalid(
            "adamw state",
            "block count mismatch between parameters, gradients and moments",
        ));
    }
    for ((p, g), m) in param_blocks.iter().zip(&grad_blocks).zip(&state.first_moment) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::LengthMismatch {
                what: "adamw block",
                expected: p.len(),
                got: g.len(),
            });
        }
    }
    state.step_counter += 1;
    let t = state.step_counter as i32;
    let correction1 = 1.0 - spec.beta1.powi(t);
    let correction2 = 1.0 - spec.beta2.powi(t);
    let lr = state.current_lr;
    let decay = 1.0 - lr * spec.weight_decay;
    for (((p, g), m), v) in param_blocks
        .iter_mut()
        .zip(&grad_blocks)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g[i];
            v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + spec.adam_eps);
        }
    }
    Ok(())
}

pub fn sgd_step<P: ParamBlocks, G: ParamBlocks>(params: &mut P, grads: &G, lr: f64) -> Result<()> {
    let mut param_blocks = params.blocks_mut();
    let grad_blocks = grads.blocks();
    if param_blocks.len() != grad_blocks.len() {
        return Err(Error::invalid("sgd step", "block count mismatch"));
    }
    for (p, g) in param_blocks.iter_mut().zip(&grad_blocks) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                what: "sgd block",
                expected: p.len(),
                got: g.len(),
            });
        }
        for (pi, gi) in p.iter_mut().zip(g.iter()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}

pub fn shrink_on_epoch(current_lr: f64, shrink_factor: f64) -> Result<f64> {
    if !(shrink_factor >= 1.0) {
        return Err(Error::invalid("shrink_factor", format!("{shrink_factor} must be >= 1")));
    }
    Ok(current_lr / shrink_factor)
}
