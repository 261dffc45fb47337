//! Cross-entropy, focal loss, debiased focal loss and product-of-experts
//! combination, each with its gradient with respect to the logits.
//!
//! Focal loss scales the cross-entropy of the ground-truth probability `p`
//! by `(1 - p)^gamma`. With `gamma = 0` it is cross-entropy, bit for bit:
//! both kinds share one code path whenever the modulator is the constant 1.

use crate::error::{Error, Result};

/// Default numerical floor used inside logarithms.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-12;

const MAX_CLAMP_EPS: f64 = 1e-3;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    CrossEntropy,
    Focal,
    /// Modulator driven by a frozen bias model: `-(1 - b)^gamma * log(p)`.
    DebiasedFocal,
    /// Cross-entropy (focal when `gamma > 0`) of the renormalized product of
    /// main and bias probabilities.
    ProductOfExperts,
}

impl LossKind {
    pub fn needs_bias_model(self) -> bool {
        matches!(self, LossKind::DebiasedFocal | LossKind::ProductOfExperts)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Focal => "focal",
            LossKind::DebiasedFocal => "dfl",
            LossKind::ProductOfExperts => "poe",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        match s {
            "ce" => Some(LossKind::CrossEntropy),
            "focal" => Some(LossKind::Focal),
            "dfl" => Some(LossKind::DebiasedFocal),
            "poe" => Some(LossKind::ProductOfExperts),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gamma: f64,
    pub clamp_eps: f64,
    pub reduction: Reduction,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::cross_entropy()
    }
}

impl LossSpec {
    pub fn cross_entropy() -> Self {
        LossSpec {
            kind: LossKind::CrossEntropy,
            gamma: 0.0,
            clamp_eps: DEFAULT_CLAMP_EPS,
            reduction: Reduction::Mean,
        }
    }

    pub fn focal(gamma: f64) -> Self {
        LossSpec {
            kind: LossKind::Focal,
            gamma,
            ..Self::cross_entropy()
        }
    }

    pub fn debiased_focal(gamma: f64) -> Self {
        LossSpec {
            kind: LossKind::DebiasedFocal,
            gamma,
            ..Self::cross_entropy()
        }
    }

    pub fn product_of_experts() -> Self {
        LossSpec {
            kind: LossKind::ProductOfExperts,
            ..Self::cross_entropy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid(
                "gamma",
                format!("{} is not a finite value >= 0", self.gamma),
            ));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= MAX_CLAMP_EPS) {
            return Err(Error::invalid(
                "clamp_eps",
                format!("{} is outside (0, {MAX_CLAMP_EPS}]", self.clamp_eps),
            ));
        }
        Ok(())
    }

    /// The focusing parameter actually applied; cross-entropy ignores `gamma`.
    pub fn effective_gamma(&self) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => 0.0,
            _ => self.gamma,
        }
    }

    /// Loss of one sample given its logits, writing `dL/dlogits` into `grad`.
    ///
    /// `bias_probs` must be present for the bias-coupled kinds. This is the
    /// allocation-light path used by the trainer; the free functions in this
    /// module are thin wrappers over the same arithmetic.
    pub fn sample_loss_and_grad(
        &self,
        logits: &[f64],
        label: usize,
        bias_probs: Option<&[f64]>,
        probs_buf: &mut [f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        let n = logits.len();
        check_len("gradient buffer", n, grad.len())?;
        check_len("probability buffer", n, probs_buf.len())?;
        check_label(label, n)?;
        match self.kind {
            LossKind::CrossEntropy | LossKind::Focal => {
                softmax_into(logits, probs_buf)?;
                let gamma = self.effective_gamma();
                focal_grad_from_probs(probs_buf, label, gamma, self.clamp_eps, grad);
                Ok(focal_from_prob(probs_buf[label], gamma, self.clamp_eps))
            }
            LossKind::DebiasedFocal => {
                let bias = require_bias(bias_probs, n)?;
                softmax_into(logits, probs_buf)?;
                let weight = debiased_weight(bias[label], self.gamma, self.clamp_eps);
                for (j, (g, &p)) in grad.iter_mut().zip(probs_buf.iter()).enumerate() {
                    let onehot = if j == label { 1.0 } else { 0.0 };
                    *g = weight * (p - onehot);
                }
                Ok(-weight * probs_buf[label].max(self.clamp_eps).ln())
            }
            LossKind::ProductOfExperts => {
                // log(normalize(p * b)) = log_softmax(z + log b), so the
                // combined loss is an ordinary focal loss on shifted logits.
                let bias = require_bias(bias_probs, n)?;
                for (i, ((s, &z), &b)) in probs_buf.iter_mut().zip(logits).zip(bias).enumerate() {
                    if !b.is_finite() {
                        return Err(Error::NonFinite {
                            what: "bias probabilities",
                            index: i,
                        });
                    }
                    *s = z + b.max(self.clamp_eps * self.clamp_eps).ln();
                }
                let shifted = probs_buf.to_vec();
                softmax_into(&shifted, probs_buf)?;
                focal_grad_from_probs(probs_buf, label, self.gamma, self.clamp_eps, grad);
                Ok(focal_from_prob(probs_buf[label], self.gamma, self.clamp_eps))
            }
        }
    }
}

/// A probability distribution over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::invalid("probability vector", "needs at least two entries"));
        }
        for (i, &p) in entries.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    what: "probabilities",
                    index: i,
                });
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    "probability vector",
                    format!("entry {i} = {p} outside [0, 1]"),
                ));
            }
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid("probability vector", format!("entries sum to {sum}")));
        }
        Ok(ProbVector(entries))
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out)?;
    Ok(ProbVector(out))
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::invalid(
            "logits",
            format!("need at least 2 entries, got {}", logits.len()),
        ));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &z) in logits.iter().enumerate() {
        if !z.is_finite() {
            return Err(Error::NonFinite {
                what: "logits",
                index: i,
            });
        }
        max = max.max(z);
    }
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// `-(1 - p)^gamma * log(p)` for the ground-truth probability `p`.
pub fn focal_value(probs: &ProbVector, label: usize, spec: &LossSpec) -> Result<f64> {
    check_label(label, probs.len())?;
    match spec.kind {
        LossKind::CrossEntropy | LossKind::Focal => {}
        other => {
            return Err(Error::invalid(
                "loss kind",
                format!("{other:?} is not a plain focal kind"),
            ));
        }
    }
    Ok(focal_from_prob(probs[label], spec.effective_gamma(), spec.clamp_eps))
}

/// Gradient of [`focal_value`] composed with [`softmax`], with respect to the logits.
pub fn focal_grad_logits(logits: &[f64], label: usize, spec: &LossSpec) -> Result<Vec<f64>> {
    match spec.kind {
        LossKind::CrossEntropy | LossKind::Focal => {}
        other => {
            return Err(Error::invalid(
                "loss kind",
                format!("{other:?} is not a plain focal kind"),
            ));
        }
    }
    let probs = softmax(logits)?;
    check_label(label, probs.len())?;
    let mut grad = vec![0.0; logits.len()];
    focal_grad_from_probs(
        probs.as_slice(),
        label,
        spec.effective_gamma(),
        spec.clamp_eps,
        &mut grad,
    );
    Ok(grad)
}

/// `-(1 - b)^gamma * log(p)` where `b` is the bias model's ground-truth probability.
pub fn debiased_focal_value(probs: &ProbVector, label: usize, bias_probs: &ProbVector, spec: &LossSpec) -> Result<f64> {
    check_len("bias probabilities", probs.len(), bias_probs.len())?;
    check_label(label, probs.len())?;
    if spec.kind != LossKind::DebiasedFocal {
        return Err(Error::invalid(
            "loss kind",
            format!("{:?} is not DebiasedFocal", spec.kind),
        ));
    }
    let weight = debiased_weight(bias_probs[label], spec.gamma, spec.clamp_eps);
    Ok(-weight * probs[label].max(spec.clamp_eps).ln())
}

/// Elementwise product of two distributions, renormalized.
pub fn product_of_experts(main_probs: &ProbVector, bias_probs: &ProbVector) -> Result<ProbVector> {
    check_len("bias probabilities", main_probs.len(), bias_probs.len())?;
    let floor = DEFAULT_CLAMP_EPS * DEFAULT_CLAMP_EPS;
    let product: Vec<f64> = main_probs
        .as_slice()
        .iter()
        .zip(bias_probs.as_slice())
        .map(|(p, b)| p * b)
        .collect();
    if product.iter().all(|&x| x < floor) {
        return Err(Error::DegenerateProduct { floor });
    }
    let total: f64 = product.iter().sum();
    Ok(ProbVector(product.into_iter().map(|x| x / total).collect()))
}

pub fn batch_reduce(values: &[f64], reduction: Reduction) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let sum: f64 = values.iter().sum();
    Ok(match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / values.len() as f64,
    })
}

pub(crate) fn focal_from_prob(p: f64, gamma: f64, eps: f64) -> f64 {
    let log_p = p.max(eps).ln();
    if gamma == 0.0 {
        return -log_p;
    }
    let p_pow = if gamma < 1.0 { p.clamp(eps, 1.0 - eps) } else { p };
    -(1.0 - p_pow).powf(gamma) * log_p
}

fn debiased_weight(b: f64, gamma: f64, eps: f64) -> f64 {
    if gamma == 0.0 {
        return 1.0;
    }
    (1.0 - b.clamp(eps, 1.0 - eps)).powf(gamma)
}

/// dL/dz_j = [gamma (1-p)^(gamma-1) p log p - (1-p)^gamma] (delta_jy - p_j)
pub(crate) fn focal_grad_from_probs(probs: &[f64], label: usize, gamma: f64, eps: f64, grad: &mut [f64]) {
    if gamma == 0.0 {
        for (j, (g, &p)) in grad.iter_mut().zip(probs).enumerate() {
            *g = if j == label { p - 1.0 } else { p };
        }
        return;
    }
    let p = probs[label];
    let one_minus = 1.0 - p;
    if one_minus <= 0.0 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return;
    }
    let pow_gm1 = if gamma < 1.0 {
        one_minus.max(eps).powf(gamma - 1.0)
    } else {
        one_minus.powf(gamma - 1.0)
    };
    let coeff = gamma * pow_gm1 * p * p.max(eps).ln() - one_minus.powf(gamma);
    for (j, (g, &pj)) in grad.iter_mut().zip(probs).enumerate() {
        let onehot = if j == label { 1.0 } else { 0.0 };
        *g = coeff * (onehot - pj);
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::LengthMismatch { what, expected, got });
    }
    Ok(())
}

fn require_bias(bias: Option<&[f64]>, n: usize) -> Result<&[f64]> {
    let bias = bias.ok_or_else(|| Error::invalid("bias probabilities", "required by bias-coupled loss"))?;
    check_len("bias probabilities", n, bias.len())?;
    Ok(bias)
}
