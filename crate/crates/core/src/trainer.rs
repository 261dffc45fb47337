//! Mini-batch training with optional bias-model coupling and
//! lowest-validation-loss checkpoint selection.

use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::datagen::{CorpusBundle, Example};
use crate::error::{Error, Result};
use crate::losses::{self, LossSpec};
use crate::netmodel::{self, ModelGrads, ModelParams, View, Workspace};
use crate::optimizer::{self, OptimKind, OptimSpec, OptimState};
use crate::rng::{self, Stream};

/// Training loss above this is treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden_dim: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ValidationSplit {
    Matched,
    #[default]
    Mismatched,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BiasModelSource {
    #[default]
    None,
    TrainShortcutOnlyFirst,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub loss: LossSpec,
    pub optim: OptimSpec,
    pub early_stopping: bool,
    pub validation_split: ValidationSplit,
    pub max_epochs: usize,
    pub seed: u64,
    pub bias_model_source: BiasModelSource,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            loss: LossSpec::cross_entropy(),
            optim: OptimSpec::sgd(),
            early_stopping: true,
            validation_split: ValidationSplit::Mismatched,
            max_epochs: 6,
            seed: 0,
            bias_model_source: BiasModelSource::None,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optim.validate()?;
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be >= 1"));
        }
        let coupled = self.loss.kind.needs_bias_model();
        let has_source = self.bias_model_source != BiasModelSource::None;
        if coupled != has_source {
            return Err(Error::invalid(
                "bias_model_source",
                format!(
                    "{:?} loss {} a bias model but the source is {:?}",
                    self.loss.kind,
                    if coupled { "needs" } else { "takes no" },
                    self.bias_model_source
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    /// Zero-based.
    pub best_epoch: usize,
    pub best_params: ModelParams,
}

impl RunHistory {
    pub fn best_record(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
            ));
        }
        out
    }
}

/// Rows of a split projected through a view, stored contiguously.
pub(crate) struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(examples: &[Example], view: View) -> Self {
        let dim = examples
            .first()
            .map(|e| view.input_dim(e.genuine.len(), e.shortcut.len()))
            .unwrap_or(0);
        let mut data = Vec::with_capacity(dim * examples.len());
        for ex in examples {
            netmodel::write_view(ex, view, &mut data);
        }
        FeatureMatrix {
            dim,
            data,
            labels: examples.iter().map(|e| e.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Frozen bias-model distributions, one row per example.
struct BiasTable(Vec<[f64; 3]>);

impl BiasTable {
    fn new(bias_model: &ModelParams, examples: &[Example]) -> Result<Self> {
        examples
            .iter()
            .map(|ex| {
                let p = bias_model.probs_for(ex)?;
                Ok([p[0], p[1], p[2]])
            })
            .collect::<Result<Vec<_>>>()
            .map(BiasTable)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.0[i]
    }
}

/// Mean loss and accuracy of `params` on a split under `loss`.
fn evaluate_split(
    params: &ModelParams,
    features: &FeatureMatrix,
    loss: &LossSpec,
    bias: Option<&BiasTable>,
    ws: &mut Workspace,
) -> Result<(f64, f64)> {
    if features.len() == 0 {
        return Err(Error::Empty("validation split"));
    }
    let mut hidden = vec![0.0; params.hidden_dim];
    let mut logits = [0.0; 3];
    let mut total = 0.0;
    let mut correct = 0usize;
    for i in 0..features.len() {
        let x = features.row(i);
        let y = features.labels[i];
        total += ws.sample_loss(params, x, y, loss, bias.map(|b| b.row(i)))?;
        params.forward_into(x, &mut hidden, &mut logits)?;
        if losses::argmax(&logits) == y {
            correct += 1;
        }
    }
    let n = features.len() as f64;
    Ok((total / n, correct as f64 / n))
}

/// Validation loss and accuracy exactly as the trainer records them.
///
/// Bias-coupled losses need the bias model the run was trained with.
pub fn validation_metrics(
    params: &ModelParams,
    bundle: &CorpusBundle,
    split: ValidationSplit,
    loss: &LossSpec,
    bias_model: Option<&ModelParams>,
) -> Result<(f64, f64)> {
    let examples = validation_examples(bundle, split);
    let features = FeatureMatrix::new(examples, params.view);
    let bias = bias_model.map(|b| BiasTable::new(b, examples)).transpose()?;
    evaluate_split(params, &features, loss, bias.as_ref(), &mut Workspace::new(params))
}

fn validation_examples(bundle: &CorpusBundle, split: ValidationSplit) -> &[Example] {
    match split {
        ValidationSplit::Matched => &bundle.val_matched,
        ValidationSplit::Mismatched => &bundle.val_mismatched,
    }
}

/// Resolves the frozen bias model a coupled loss needs.
pub fn resolve_bias_model(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
) -> Result<Option<ModelParams>> {
    match &spec.bias_model_source {
        BiasModelSource::None => Ok(None),
        BiasModelSource::TrainShortcutOnlyFirst => {
            let bias_spec = TrainSpec {
                seed: rng::derive_seed(spec.seed, Stream::BiasModel),
                ..spec.clone()
            };
            train_bias_model_with(bundle, model_cfg, &bias_spec).map(Some)
        }
        BiasModelSource::Checkpoint(path) => {
            let params = ModelParams::load(path)?;
            if params.view != View::ShortcutOnly || params.input_dim != bundle.shortcut_dim() {
                return Err(Error::Checkpoint {
                    path: path.clone(),
                    msg: "bias model must be a shortcut-only model over this corpus".into(),
                });
            }
            Ok(Some(params))
        }
    }
}

/// Trains the full-view classifier described by `spec`.
pub fn train_run(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
) -> Result<(ModelParams, RunHistory)> {
    spec.validate()?;
    let bias_model = resolve_bias_model(bundle, model_cfg, spec)?;
    train_run_with_bias(bundle, model_cfg, spec, bias_model.as_ref())
}

/// As [`train_run`] with an already-resolved bias model.
pub fn train_run_with_bias(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
    bias_model: Option<&ModelParams>,
) -> Result<(ModelParams, RunHistory)> {
    spec.validate()?;
    if spec.loss.kind.needs_bias_model() != bias_model.is_some() {
        return Err(Error::invalid(
            "bias model",
            format!("{:?} loss and bias model presence disagree", spec.loss.kind),
        ));
    }
    let val_examples = validation_examples(bundle, spec.validation_split);
    let val_features = FeatureMatrix::new(val_examples, View::Full);
    let val_bias = bias_model.map(|b| BiasTable::new(b, val_examples)).transpose()?;
    let mut ws: Option<Workspace> = None;
    let mut validator = |params: &ModelParams, _epoch: usize| {
        let ws = ws.get_or_insert_with(|| Workspace::new(params));
        evaluate_split(params, &val_features, &spec.loss, val_bias.as_ref(), ws)
    };
    fit(bundle, model_cfg, spec, View::Full, bias_model, &mut validator)
}

/// Training loop with a caller-supplied validation pass returning
/// `(loss, accuracy)` for the parameters at the end of each epoch.
pub fn train_run_with_validator(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
    validator: &mut dyn FnMut(&ModelParams, usize) -> Result<(f64, f64)>,
) -> Result<(ModelParams, RunHistory)> {
    spec.validate()?;
    let bias_model = resolve_bias_model(bundle, model_cfg, spec)?;
    fit(bundle, model_cfg, spec, View::Full, bias_model.as_ref(), validator)
}

/// Shortcut-only classifier trained with cross-entropy on the training split.
pub fn train_bias_model(bundle: &CorpusBundle, model_cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    train_bias_model_with(
        bundle,
        model_cfg,
        &TrainSpec {
            seed,
            ..TrainSpec::default()
        },
    )
}

/// Uses the optimizer, epochs and validation split of `template`; the loss
/// is always cross-entropy and no bias coupling is applied.
pub fn train_bias_model_with(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    template: &TrainSpec,
) -> Result<ModelParams> {
    let spec = TrainSpec {
        loss: LossSpec {
            clamp_eps: template.loss.clamp_eps,
            reduction: template.loss.reduction,
            ..LossSpec::cross_entropy()
        },
        early_stopping: true,
        bias_model_source: BiasModelSource::None,
        ..template.clone()
    };
    spec.validate()?;
    let val_examples = validation_examples(bundle, spec.validation_split);
    let val_features = FeatureMatrix::new(val_examples, View::ShortcutOnly);
    let mut ws: Option<Workspace> = None;
    let mut validator = |params: &ModelParams, _epoch: usize| {
        let ws = ws.get_or_insert_with(|| Workspace::new(params));
        evaluate_split(params, &val_features, &spec.loss, None, ws)
    };
    let (params, _) = fit(bundle, model_cfg, &spec, View::ShortcutOnly, None, &mut validator)?;
    Ok(params)
}

fn fit(
    bundle: &CorpusBundle,
    model_cfg: &ModelConfig,
    spec: &TrainSpec,
    view: View,
    bias_model: Option<&ModelParams>,
    validator: &mut dyn FnMut(&ModelParams, usize) -> Result<(f64, f64)>,
) -> Result<(ModelParams, RunHistory)> {
    if bundle.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let train = FeatureMatrix::new(&bundle.train, view);
    let train_bias = bias_model.map(|b| BiasTable::new(b, &bundle.train)).transpose()?;
    let mut params = netmodel::init_params_with_view(train.dim, model_cfg.hidden_dim, spec.seed, view)?;
    let optim = &spec.optim;
    let mut state = OptimState::new(&params, optim);
    let mut grads = ModelGrads::zeros_like(&params);
    let mut ws = Workspace::new(&params);
    let mut shuffle_rng = rng::stream(spec.seed, Stream::Shuffle);

    let batch = optim.batch_size.min(train.len());
    let steps_per_epoch = train.len().div_ceil(batch);
    let total_steps = steps_per_epoch * spec.max_epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows: Vec<&[f64]> = Vec::with_capacity(batch);
    let mut labels: Vec<usize> = Vec::with_capacity(batch);
    let mut bias_rows: Vec<&[f64]> = Vec::with_capacity(batch);

    let mut records = Vec::with_capacity(spec.max_epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut global_step = 0usize;

    for epoch in 0..spec.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            rows.clear();
            labels.clear();
            bias_rows.clear();
            for &i in chunk {
                rows.push(train.row(i));
                labels.push(train.labels[i]);
                if let Some(b) = &train_bias {
                    bias_rows.push(b.row(i));
                }
            }
            grads.fill_zero();
            let bias_arg = train_bias.as_ref().map(|_| bias_rows.as_slice());
            let loss = ws.accumulate_batch(&params, &rows, &labels, &spec.loss, bias_arg, &mut grads)?;
            if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged { epoch, step, loss });
            }
            epoch_loss += match spec.loss.reduction {
                losses::Reduction::Mean => loss * chunk.len() as f64,
                losses::Reduction::Sum => loss,
            };
            if let Some(max_norm) = optim.clip_norm {
                optimizer::clip_grad_norm_in_place(&mut grads, max_norm)?;
            }
            match optim.kind {
                OptimKind::Sgd => optimizer::sgd_step(&mut params, &grads, state.current_lr)?,
                OptimKind::AdamW => {
                    // lr for the update that completes step `global_step + 1`
                    state.current_lr = optimizer::warmup_linear_lr(
                        global_step + 1,
                        total_steps,
                        optim.peak_lr,
                        optim.warmup_fraction,
                    )?;
                    optimizer::adamw_step(&mut state, &mut params, &grads, optim)?;
                }
            }
            global_step += 1;
        }
        let (val_loss, val_acc) = validator(&params, epoch)?;
        records.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
            val_acc,
            lr: state.current_lr,
        });
        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if spec.early_stopping && improved {
            best = Some((epoch, val_loss, params.clone()));
        }
        if optim.kind == OptimKind::Sgd {
            state.current_lr = optimizer::shrink_on_epoch(state.current_lr, optim.shrink_factor)?;
        }
    }

    let (best_epoch, best_params) = match best {
        Some((epoch, _, p)) if spec.early_stopping => (epoch, p),
        _ => (records.len() - 1, params),
    };
    let history = RunHistory {
        epochs: records,
        best_epoch,
        best_params: best_params.clone(),
    };
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_corpus, GenSpec};
    use crate::losses::LossKind;

    fn tiny_bundle() -> CorpusBundle {
        generate_corpus(&GenSpec {
            n_train: 400,
            n_val: 100,
            n_test: 100,
            n_challenge_per_cell: 10,
            n_pool_per_cell: 10,
            seed: 3,
            ..GenSpec::default()
        })
        .unwrap()
    }

    fn quick_spec() -> TrainSpec {
        TrainSpec {
            max_epochs: 3,
            optim: OptimSpec {
                batch_size: 16,
                ..OptimSpec::sgd()
            },
            ..TrainSpec::default()
        }
    }

    fn scripted(losses: Vec<f64>) -> impl FnMut(&ModelParams, usize) -> Result<(f64, f64)> {
        move |_: &ModelParams, epoch: usize| Ok((losses[epoch], 0.5))
    }

    #[test]
    fn scripted_validation_picks_argmin() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let spec = quick_spec();
        let mut v = scripted(vec![0.9, 0.5, 0.7]);
        let (params, history) = train_run_with_validator(&bundle, &cfg, &spec, &mut v).unwrap();
        assert_eq!(history.best_epoch, 1);
        assert_eq!(params, history.best_params);

        let no_es = TrainSpec {
            early_stopping: false,
            ..spec.clone()
        };
        let mut v = scripted(vec![0.9, 0.5, 0.7]);
        let (final_params, history) = train_run_with_validator(&bundle, &cfg, &no_es, &mut v).unwrap();
        assert_eq!(history.best_epoch, 2);
        assert_ne!(final_params, params);
    }

    #[test]
    fn ties_resolve_to_earliest_epoch() {
        let bundle = tiny_bundle();
        let mut v = scripted(vec![0.6, 0.4, 0.4]);
        let (_, history) =
            train_run_with_validator(&bundle, &ModelConfig { hidden_dim: 4 }, &quick_spec(), &mut v).unwrap();
        assert_eq!(history.best_epoch, 1);
    }

    #[test]
    fn zero_lr_full_batch_is_null_update() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let spec = TrainSpec {
            max_epochs: 1,
            optim: OptimSpec {
                peak_lr: 0.0,
                batch_size: bundle.train.len(),
                ..OptimSpec::sgd()
            },
            ..TrainSpec::default()
        };
        let (params, _) = train_run(&bundle, &cfg, &spec).unwrap();
        let init = netmodel::init_params(bundle.genuine_dim() + bundle.shortcut_dim(), 8, spec.seed).unwrap();
        assert_eq!(params, init);
    }

    #[test]
    fn best_params_reproduce_recorded_validation_loss() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let spec = TrainSpec {
            loss: LossSpec::focal(2.0),
            ..quick_spec()
        };
        let (params, history) = train_run(&bundle, &cfg, &spec).unwrap();
        let (loss, acc) = validation_metrics(&params, &bundle, spec.validation_split, &spec.loss, None).unwrap();
        assert!((loss - history.best_record().val_loss).abs() <= 1e-9);
        assert_eq!(acc, history.best_record().val_acc);
    }

    #[test]
    fn focal_gamma_zero_trajectory_equals_cross_entropy() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let ce = train_run(&bundle, &cfg, &quick_spec()).unwrap();
        let fl = train_run(
            &bundle,
            &cfg,
            &TrainSpec {
                loss: LossSpec::focal(0.0),
                ..quick_spec()
            },
        )
        .unwrap();
        assert_eq!(ce, fl);
    }

    #[test]
    fn training_is_deterministic() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let spec = TrainSpec {
            loss: LossSpec::focal(1.0),
            ..quick_spec()
        };
        assert_eq!(
            train_run(&bundle, &cfg, &spec).unwrap(),
            train_run(&bundle, &cfg, &spec).unwrap()
        );
    }

    #[test]
    fn bias_source_must_match_loss_kind() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 4 };
        let bad = TrainSpec {
            loss: LossSpec::debiased_focal(2.0),
            ..quick_spec()
        };
        assert!(train_run(&bundle, &cfg, &bad).is_err());
        let bad = TrainSpec {
            bias_model_source: BiasModelSource::TrainShortcutOnlyFirst,
            ..quick_spec()
        };
        assert!(train_run(&bundle, &cfg, &bad).is_err());
    }

    #[test]
    fn coupled_losses_train() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        for loss in [LossSpec::debiased_focal(2.0), LossSpec::product_of_experts()] {
            let spec = TrainSpec {
                loss,
                bias_model_source: BiasModelSource::TrainShortcutOnlyFirst,
                ..quick_spec()
            };
            let (_, history) = train_run(&bundle, &cfg, &spec).unwrap();
            assert_eq!(history.epochs.len(), 3);
            assert!(history.epochs.iter().all(|r| r.train_loss.is_finite()));
        }
    }

    #[test]
    fn bias_model_checkpoint_source() {
        let bundle = tiny_bundle();
        let cfg = ModelConfig { hidden_dim: 8 };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bias.ckpt");
        let bias = train_bias_model_with(&bundle, &cfg, &quick_spec()).unwrap();
        assert_eq!(bias.view, View::ShortcutOnly);
        bias.save(&path).unwrap();
        let spec = TrainSpec {
            loss: LossSpec::debiased_focal(1.0),
            bias_model_source: BiasModelSource::Checkpoint(path.clone()),
            ..quick_spec()
        };
        let from_ckpt = train_run(&bundle, &cfg, &spec).unwrap();
        let direct = train_run_with_bias(&bundle, &cfg, &spec, Some(&bias)).unwrap();
        assert_eq!(from_ckpt, direct);

        // A full-view checkpoint is not a bias model.
        netmodel::init_params(25, 4, 0).unwrap().save(&path).unwrap();
        assert!(matches!(train_run(&bundle, &cfg, &spec), Err(Error::Checkpoint { .. })));
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let bundle = tiny_bundle();
        let spec = TrainSpec {
            optim: OptimSpec {
                peak_lr: 1e6,
                clip_norm: None,
                batch_size: 8,
                ..OptimSpec::sgd()
            },
            loss: LossSpec {
                reduction: losses::Reduction::Sum,
                ..LossSpec::cross_entropy()
            },
            ..quick_spec()
        };
        match train_run(&bundle, &ModelConfig { hidden_dim: 16 }, &spec) {
            Err(Error::Diverged { epoch, step, loss }) => {
                assert!(
                    !loss.is_finite() || loss > DIVERGENCE_THRESHOLD,
                    "epoch {epoch} step {step}"
                );
            }
            // Saturated tanh keeps logits bounded; a huge but finite loss is
            // still acceptable as long as nothing non-finite slipped through.
            Ok((_, h)) => assert!(h.epochs.iter().all(|r| r.train_loss.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
        assert_eq!(LossKind::CrossEntropy.short_name(), "ce");
    }
}
