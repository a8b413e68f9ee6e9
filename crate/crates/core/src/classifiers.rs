//! Device-identification (Task 1) and rogue-detection (Task 2) classifiers:
//! the single-task CNN/FNN stacks, the multi-task model with a shared first
//! layer and one head per task, training with best-checkpoint selection,
//! and accuracy metrics.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Authenticity, Dataset, LabeledSample, Task, INPUT_SHAPE};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, argmax, checkpoint, cross_entropy, init_network, softmax_ce_grad, Activation,
    AdamConfig, AdamState, LayerSpec, Mode, Network, Padding,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

const DROPOUT: f64 = 0.1;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cnn,
    Fnn,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Fnn => "fnn",
        }
    }
}

/// First layer of each architecture; the multi-task model shares it.
pub fn shared_layers(arch: Arch) -> Vec<LayerSpec> {
    match arch {
        Arch::Cnn => vec![LayerSpec::Conv2d {
            filters: 32,
            kernel_h: 1,
            kernel_w: 3,
            activation: Activation::Relu,
            padding: Padding::Full,
        }],
        Arch::Fnn => vec![LayerSpec::dense(64, Activation::Relu)],
    }
}

/// Remaining layers, ending in the 2-way softmax.
pub fn head_layers(arch: Arch) -> Vec<LayerSpec> {
    let mut layers = match arch {
        Arch::Cnn => vec![LayerSpec::Flatten],
        Arch::Fnn => vec![
            LayerSpec::dropout(DROPOUT),
            LayerSpec::dense(32, Activation::Relu),
        ],
    };
    if arch == Arch::Cnn {
        layers.push(LayerSpec::dense(32, Activation::Relu));
    }
    layers.extend([
        LayerSpec::dropout(DROPOUT),
        LayerSpec::dense(8, Activation::Relu),
        LayerSpec::dropout(DROPOUT),
        LayerSpec::dense(2, Activation::Softmax),
    ]);
    layers
}

/// The full single-task stack.
pub fn layer_stack(arch: Arch) -> Vec<LayerSpec> {
    let mut layers = shared_layers(arch);
    layers.extend(head_layers(arch));
    layers
}

/// Architecture recognised from a layer stack.
pub fn detect_arch(specs: &[LayerSpec]) -> Option<Arch> {
    match specs.first()? {
        LayerSpec::Conv2d { .. } => Some(Arch::Cnn),
        LayerSpec::Dense { .. } => Some(Arch::Fnn),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleTaskModel {
    pub net: Network,
    pub task: Task,
    pub arch: Arch,
}

pub fn build_single(arch: Arch, task: Task, seed: u64) -> Result<SingleTaskModel> {
    Ok(SingleTaskModel {
        net: init_network(&layer_stack(arch), &INPUT_SHAPE, seed)?,
        task,
        arch,
    })
}

/// Shared first layer feeding one head per task. `weights` are the task
/// weights of the joint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskModel {
    pub shared: Network,
    pub heads: [Network; 2],
    pub weights: [f64; 2],
    pub arch: Arch,
}

pub(crate) fn check_weights(w: [f64; 2], what: &str) -> Result<()> {
    let valid = w.iter().all(|v| (0.0..=1.0).contains(v)) && ((w[0] + w[1]) - 1.0).abs() < 1e-9;
    if valid {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} {w:?} must lie in [0, 1] and sum to 1"
        )))
    }
}

pub fn build_multitask(arch: Arch, seed: u64, weights: [f64; 2]) -> Result<MultiTaskModel> {
    check_weights(weights, "task weights")?;
    let shared = init_network(
        &shared_layers(arch),
        &INPUT_SHAPE,
        derive_seed(seed, "shared"),
    )?;
    let trunk_shape = shared.output_shape().to_vec();
    let head =
        |label: &str| init_network(&head_layers(arch), &trunk_shape, derive_seed(seed, label));
    Ok(MultiTaskModel {
        heads: [head("head1")?, head("head2")?],
        shared,
        weights,
        arch,
    })
}

impl MultiTaskModel {
    pub fn count_parameters(&self) -> usize {
        self.shared.count_parameters()
            + self
                .heads
                .iter()
                .map(Network::count_parameters)
                .sum::<usize>()
    }

    pub fn head(&self, task: Task) -> &Network {
        &self.heads[task_index(task)]
    }

    /// Per-task probabilities for one batch.
    pub fn predict_both(&self, x: &Tensor) -> Result<[Tensor; 2]> {
        let trunk = self.shared.predict(x)?;
        let mut shape = vec![x.rows()];
        shape.extend_from_slice(self.shared.output_shape());
        let trunk = trunk.reshape(shape)?;
        Ok([
            self.heads[0].predict(&trunk)?,
            self.heads[1].predict(&trunk)?,
        ])
    }

    /// Gradient of `sum_i coeffs[i] * CE_i` with respect to all three
    /// parameter blocks and to the input. Losses are per-sample sums scaled
    /// by `scale`; the returned pair holds the unweighted mean task losses.
    pub(crate) fn joint_backward(
        &self,
        x: &Tensor,
        labels: [&[usize]; 2],
        coeffs: [f64; 2],
        scale: f64,
        mut mode: Mode<'_>,
    ) -> Result<JointGradients> {
        let shared_cache = match &mut mode {
            Mode::Eval => self.shared.forward_cached(x, Mode::Eval)?,
            Mode::Train(rng) => self.shared.forward_cached(x, Mode::Train(rng))?,
        };
        let rows = shared_cache.batch();
        let trunk = shared_cache.output().to_vec();
        let mut d_trunk = vec![0.0; trunk.len()];
        let mut head_grads = [Vec::new(), Vec::new()];
        let mut losses = [0.0; 2];
        for (k, head) in self.heads.iter().enumerate() {
            if labels[k].len() != rows {
                return Err(Error::Shape(format!(
                    "{} labels for a batch of {rows}",
                    labels[k].len()
                )));
            }
            let cache = match &mut mode {
                Mode::Eval => head.forward_raw(trunk.clone(), rows, Mode::Eval),
                Mode::Train(rng) => head.forward_raw(trunk.clone(), rows, Mode::Train(rng)),
            };
            let probs = cache.output();
            losses[k] = cross_entropy(probs, 2, labels[k])?;
            let d = softmax_ce_grad(probs, 2, labels[k], coeffs[k] * scale);
            let mut g = vec![0.0; head.count_parameters()];
            let dt = head.backward(&cache, &d, &mut g);
            d_trunk.iter_mut().zip(&dt).for_each(|(a, b)| *a += b);
            head_grads[k] = g;
        }
        let mut shared_grads = vec![0.0; self.shared.count_parameters()];
        let d_input = self
            .shared
            .backward(&shared_cache, &d_trunk, &mut shared_grads);
        let [h1, h2] = head_grads;
        Ok(JointGradients {
            losses,
            shared: shared_grads,
            heads: [h1, h2],
            input: d_input,
        })
    }
}

pub(crate) struct JointGradients {
    pub losses: [f64; 2],
    pub shared: Vec<f64>,
    pub heads: [Vec<f64>; 2],
    pub input: Vec<f64>,
}

pub(crate) fn task_index(task: Task) -> usize {
    match task {
        Task::Device => 0,
        Task::Authenticity => 1,
    }
}

/// Anything that outputs class probabilities for a task.
pub trait Predictor {
    fn probabilities(&self, x: &Tensor, task: Task) -> Result<Tensor>;
}

impl Predictor for SingleTaskModel {
    fn probabilities(&self, x: &Tensor, task: Task) -> Result<Tensor> {
        if task != self.task {
            return Err(Error::Config(format!(
                "model trained for {} cannot answer {}",
                self.task.name(),
                task.name()
            )));
        }
        self.net.predict(x)
    }
}

impl Predictor for MultiTaskModel {
    fn probabilities(&self, x: &Tensor, task: Task) -> Result<Tensor> {
        let [p1, p2] = self.predict_both(x)?;
        Ok(if task == Task::Device { p1 } else { p2 })
    }
}

/// Argmax predictions over a dataset-shaped input, evaluated in chunks.
pub fn predict_labels<P: Predictor + ?Sized>(
    model: &P,
    x: &Tensor,
    task: Task,
) -> Result<Vec<usize>> {
    let rows = x.rows();
    let width = x.row_len();
    let mut out = Vec::with_capacity(rows);
    for start in (0..rows).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(rows);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let chunk = Tensor::new(shape, x.data()[start * width..end * width].to_vec())?;
        let probs = model.probabilities(&chunk, task)?;
        out.extend((0..end - start).map(|r| argmax(probs.row(r))));
    }
    Ok(out)
}

/// Overall and per-class conditional accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `Pr(pred = true)`.
    pub overall: f64,
    /// `Pr(pred = c | true = c)`; `None` when class `c` is absent.
    pub per_class: [Option<f64>; 2],
    pub class_counts: [usize; 2],
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() || truth.is_empty() {
            return Err(Error::Data(format!(
                "metrics need equal non-empty prediction and label lists ({} vs {})",
                predicted.len(),
                truth.len()
            )));
        }
        let mut counts = [0usize; 2];
        let mut correct = [0usize; 2];
        for (&p, &t) in predicted.iter().zip(truth) {
            counts[t] += 1;
            if p == t {
                correct[t] += 1;
            }
        }
        let per_class =
            [0, 1].map(|c| (counts[c] > 0).then(|| correct[c] as f64 / counts[c] as f64));
        Ok(Self {
            overall: (correct[0] + correct[1]) as f64 / truth.len() as f64,
            per_class,
            class_counts: counts,
        })
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.overall
    }
}

pub fn evaluate<P: Predictor + ?Sized>(model: &P, test: &Dataset, task: Task) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Data("evaluation on an empty test set".into()));
    }
    let predicted = predict_labels(model, &test.inputs(), task)?;
    Metrics::from_predictions(&predicted, &test.labels(task))
}

pub fn evaluate_multitask(model: &MultiTaskModel, test: &Dataset) -> Result<[Metrics; 2]> {
    Ok([
        evaluate(model, test, Task::Device)?,
        evaluate(model, test, Task::Authenticity)?,
    ])
}

/// Sub-population of the test set used for Task-1 metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    LegitimateOnly,
    RogueOnly,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::LegitimateOnly => "legitimate_only",
            Subset::RogueOnly => "rogue_only",
        }
    }

    pub fn keeps(self, s: &LabeledSample) -> bool {
        match self {
            Subset::All => true,
            Subset::LegitimateOnly => s.authenticity == Authenticity::Legitimate,
            Subset::RogueOnly => s.authenticity == Authenticity::Rogue,
        }
    }
}

/// Task-1 metrics restricted to a sub-population.
pub fn evaluate_subset<P: Predictor + ?Sized>(
    model: &P,
    test: &Dataset,
    subset: Subset,
) -> Result<Metrics> {
    let filtered = test.filter(|s| subset.keeps(s));
    if filtered.is_empty() {
        return Err(Error::Data(format!(
            "no test records in subset {}",
            subset.name()
        )));
    }
    evaluate(model, &filtered, Task::Device)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fraction of the training split held out for checkpoint selection.
    pub validation_frac: f64,
    /// Joint-loss task weights (multi-task only).
    pub task_weights: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            validation_frac: 0.1,
            task_weights: [0.5, 0.5],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.validation_frac > 0.0 && self.validation_frac < 1.0) {
            return Err(Error::Config(format!(
                "validation_frac {} outside (0, 1)",
                self.validation_frac
            )));
        }
        let a = &self.adam;
        let adam_ok = a.learning_rate > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon > 0.0;
        if !adam_ok {
            return Err(Error::Config(format!("invalid Adam hyperparameters {a:?}")));
        }
        check_weights(self.task_weights, "task_weights")
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean joint training loss of each epoch.
    pub loss: Vec<f64>,
    /// Mean per-task losses of each epoch (multi-task only).
    pub task_losses: Vec<[f64; 2]>,
    /// Held-out selection score after each epoch.
    pub validation: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// One optimisation step's worth of loss and gradients.
pub struct StepOutput {
    pub loss: f64,
    pub task_losses: Option<[f64; 2]>,
    /// One gradient vector per parameter block.
    pub grads: Vec<Vec<f64>>,
}

/// A model that can be optimised by [`fit`].
pub trait Trainable: Clone {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
    fn block_sizes(&self) -> Vec<usize>;
    fn step(&self, x: &Tensor, samples: &[LabeledSample], rng: &mut Rng) -> Result<StepOutput>;
    /// Default checkpoint-selection score on held-out records.
    fn score(&self, val: &Dataset) -> Result<f64>;
}

impl Trainable for SingleTaskModel {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.net.params_mut()]
    }

    fn block_sizes(&self) -> Vec<usize> {
        vec![self.net.count_parameters()]
    }

    fn step(&self, x: &Tensor, samples: &[LabeledSample], rng: &mut Rng) -> Result<StepOutput> {
        let labels: Vec<usize> = samples.iter().map(|s| s.label(self.task)).collect();
        let (loss, grads) = self.net.loss_and_gradients(x, &labels, Mode::Train(rng))?;
        Ok(StepOutput {
            loss,
            task_losses: None,
            grads: vec![grads],
        })
    }

    fn score(&self, val: &Dataset) -> Result<f64> {
        Ok(evaluate(self, val, self.task)?.overall)
    }
}

impl Trainable for MultiTaskModel {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let [h1, h2] = &mut self.heads;
        vec![self.shared.params_mut(), h1.params_mut(), h2.params_mut()]
    }

    fn block_sizes(&self) -> Vec<usize> {
        vec![
            self.shared.count_parameters(),
            self.heads[0].count_parameters(),
            self.heads[1].count_parameters(),
        ]
    }

    fn step(&self, x: &Tensor, samples: &[LabeledSample], rng: &mut Rng) -> Result<StepOutput> {
        let y1: Vec<usize> = samples.iter().map(|s| s.label(Task::Device)).collect();
        let y2: Vec<usize> = samples
            .iter()
            .map(|s| s.label(Task::Authenticity))
            .collect();
        let g = self.joint_backward(
            x,
            [&y1, &y2],
            self.weights,
            1.0 / samples.len() as f64,
            Mode::Train(rng),
        )?;
        let [h1, h2] = g.heads;
        Ok(StepOutput {
            loss: self.weights[0] * g.losses[0] + self.weights[1] * g.losses[1],
            task_losses: Some(g.losses),
            grads: vec![g.shared, h1, h2],
        })
    }

    fn score(&self, val: &Dataset) -> Result<f64> {
        let [m1, m2] = evaluate_multitask(self, val)?;
        Ok(0.5 * (m1.overall + m2.overall))
    }
}

fn batch_tensor(samples: &[LabeledSample]) -> Tensor {
    let data = samples
        .iter()
        .flat_map(|s| s.sample.values().iter().copied())
        .collect();
    Tensor::new(vec![samples.len(), 2, dataset::SAMPLE_LEN], data).expect("fixed record size")
}

/// Batch augmentation hook: returns inputs for the first `k` samples of the
/// batch, appended with their labels.
pub type Augment<'a, M> = dyn Fn(&M, &Tensor, &[LabeledSample]) -> Result<Option<Tensor>> + 'a;
pub type Score<'a, M> = dyn Fn(&M, &Dataset) -> Result<f64> + 'a;

/// Mini-batch Adam over `train`, holding out a stratified validation slice
/// and returning the parameters with the best validation score (earliest
/// epoch on ties).
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &Dataset,
    cfg: &TrainConfig,
    augment: Option<&Augment<'_, M>>,
    score: Option<&Score<'_, M>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let (fit_set, val_set) = dataset::split(
        train,
        1.0 - cfg.validation_frac,
        derive_seed(cfg.seed, "validation"),
    )?;
    if fit_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data(format!(
            "training split of {} records leaves no room for a validation slice",
            train.len()
        )));
    }
    let mut adam: Vec<AdamState> = model
        .block_sizes()
        .into_iter()
        .map(|n| AdamState::new(n, cfg.adam))
        .collect();
    let mut shuffle_rng = Rng::substream(cfg.seed, "shuffle");
    let mut dropout_rng = Rng::substream(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..fit_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, M)> = None;
    let evaluate_score = |m: &M| match score {
        Some(f) => f(m, &val_set),
        None => m.score(&val_set),
    };

    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut task_sum = [0.0; 2];
        for chunk in order.chunks(cfg.batch_size) {
            let mut samples: Vec<LabeledSample> =
                chunk.iter().map(|&i| fit_set.samples()[i]).collect();
            let mut x = batch_tensor(&samples);
            if let Some(aug) = augment {
                if let Some(extra) = aug(model, &x, &samples)? {
                    let mut data = x.into_data();
                    data.extend_from_slice(extra.data());
                    let extra_rows = extra.rows();
                    if extra_rows > samples.len() {
                        return Err(Error::Shape(format!(
                            "augmentation produced {extra_rows} rows for a batch of {}",
                            samples.len()
                        )));
                    }
                    samples.extend_from_within(..extra_rows);
                    x = Tensor::new(vec![samples.len(), 2, dataset::SAMPLE_LEN], data)?;
                }
            }
            let out = model.step(&x, &samples, &mut dropout_rng)?;
            if !out.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {}",
                    epoch + 1
                )));
            }
            for ((params, grads), state) in model
                .blocks_mut()
                .into_iter()
                .zip(&out.grads)
                .zip(&mut adam)
            {
                adam_step(params, grads, state);
            }
            let w = chunk.len() as f64;
            loss_sum += out.loss * w;
            if let Some(t) = out.task_losses {
                task_sum[0] += t[0] * w;
                task_sum[1] += t[1] * w;
            }
        }
        let n = fit_set.len() as f64;
        history.loss.push(loss_sum / n);
        if model.block_sizes().len() > 1 {
            history.task_losses.push([task_sum[0] / n, task_sum[1] / n]);
        }
        let s = evaluate_score(model)?;
        history.validation.push(s);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, model.clone()));
            history.best_epoch = epoch;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(history)
}

fn require_both_classes(train: &Dataset, task: Task) -> Result<()> {
    let labels = train.labels(task);
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Data(format!(
            "training data for {} must contain both classes",
            task.name()
        )));
    }
    Ok(())
}

pub fn train_single(
    model: &mut SingleTaskModel,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    require_both_classes(train, model.task)?;
    fit(model, train, cfg, None, None)
}

/// Joint training of both heads with the model's task weights.
pub fn train_multitask(
    model: &mut MultiTaskModel,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    require_both_classes(train, Task::Device)?;
    require_both_classes(train, Task::Authenticity)?;
    fit(model, train, cfg, None, None)
}

pub const MULTITASK_MAGIC: &[u8; 8] = b"LAMT0001";

#[derive(Debug, Serialize, Deserialize)]
struct MultiTaskManifest {
    arch: Arch,
    weights: [f64; 2],
    blocks: Vec<String>,
    param_counts: Vec<usize>,
}

impl MultiTaskModel {
    /// `LAMT0001`, `u64` manifest length, JSON manifest, then the shared
    /// layer and both heads as network checkpoints.
    pub fn encode(&self) -> Vec<u8> {
        let manifest = MultiTaskManifest {
            arch: self.arch,
            weights: self.weights,
            blocks: vec!["shared".into(), "head1".into(), "head2".into()],
            param_counts: self.block_sizes(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(MULTITASK_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for net in [&self.shared, &self.heads[0], &self.heads[1]] {
            checkpoint::write_network(net, &mut buf).expect("writing to a Vec cannot fail");
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut input = bytes;
        let mut head = [0u8; 16];
        input
            .read_exact(&mut head)
            .map_err(|_| Error::Format("multi-task checkpoint truncated".into()))?;
        if &head[..8] != MULTITASK_MAGIC {
            return Err(Error::Format("bad multi-task checkpoint magic".into()));
        }
        let len = u64::from_le_bytes(head[8..].try_into().expect("8 bytes")) as usize;
        if len > input.len() {
            return Err(Error::Format("multi-task manifest truncated".into()));
        }
        let manifest: MultiTaskManifest = serde_json::from_slice(&input[..len])
            .map_err(|e| Error::Format(format!("multi-task manifest: {e}")))?;
        input = &input[len..];
        let shared = checkpoint::read_network(&mut input)?;
        let h1 = checkpoint::read_network(&mut input)?;
        let h2 = checkpoint::read_network(&mut input)?;
        if !input.is_empty() {
            return Err(Error::Format(
                "trailing bytes after multi-task checkpoint".into(),
            ));
        }
        let model = MultiTaskModel {
            shared,
            heads: [h1, h2],
            weights: manifest.weights,
            arch: manifest.arch,
        };
        if model.block_sizes() != manifest.param_counts {
            return Err(Error::Format(
                "multi-task block sizes disagree with manifest".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
