//! Adversarial training: each training batch is presented together with
//! FGSM copies computed against the model being trained.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    apply_and_clamp, evaluate_asp, fgsm_multitask_untargeted, fgsm_untargeted, psr_to_epsilon,
    AttackSpec, SweepConfig, Victims,
};
use crate::classifiers::{
    check_weights, evaluate, fit, predict_labels, Metrics, MultiTaskModel, Predictor,
    SingleTaskModel, TrainConfig, TrainHistory, Trainable,
};
use crate::dataset::{mean_signal_power, Dataset, LabeledSample, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    /// PSR of the untargeted FGSM copies.
    pub psr_db: f64,
    /// Adversarial copies per clean sample, in (0, 1].
    pub ratio: f64,
    /// Multi-task attack weights used to craft the copies.
    pub gamma: [f64; 2],
    /// Admissible amplitude; `None` means the training-split maximum.
    pub clamp_bound: Option<f64>,
    pub train: TrainConfig,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            psr_db: -3.0,
            ratio: 1.0,
            gamma: [0.5, 0.5],
            clamp_bound: None,
            train: TrainConfig::default(),
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "augmentation ratio {} outside (0, 1]",
                self.ratio
            )));
        }
        if self.psr_db.is_nan() || self.psr_db == f64::INFINITY {
            return Err(Error::Config(format!(
                "defense psr_db {} is not finite",
                self.psr_db
            )));
        }
        if let Some(a) = self.clamp_bound {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("clamp bound {a} must be positive")));
            }
        }
        check_weights(self.gamma, "gamma")?;
        self.train.validate()
    }
}

/// Models that can craft their own untargeted FGSM copies.
pub trait SelfAttack: Trainable + Predictor {
    fn fgsm(
        &self,
        x: &Tensor,
        samples: &[LabeledSample],
        epsilon: f64,
        gamma: [f64; 2],
    ) -> Result<Tensor>;
    /// Tasks this model answers.
    fn tasks(&self) -> Vec<Task>;
}

impl SelfAttack for SingleTaskModel {
    fn fgsm(
        &self,
        x: &Tensor,
        samples: &[LabeledSample],
        epsilon: f64,
        _gamma: [f64; 2],
    ) -> Result<Tensor> {
        let y: Vec<usize> = samples.iter().map(|s| s.label(self.task)).collect();
        Ok(fgsm_untargeted(&self.net, x, &y, epsilon)?.delta)
    }

    fn tasks(&self) -> Vec<Task> {
        vec![self.task]
    }
}

impl SelfAttack for MultiTaskModel {
    fn fgsm(
        &self,
        x: &Tensor,
        samples: &[LabeledSample],
        epsilon: f64,
        gamma: [f64; 2],
    ) -> Result<Tensor> {
        let y1: Vec<usize> = samples.iter().map(|s| s.label(Task::Device)).collect();
        let y2: Vec<usize> = samples
            .iter()
            .map(|s| s.label(Task::Authenticity))
            .collect();
        Ok(fgsm_multitask_untargeted(self, x, &y1, &y2, gamma, epsilon)?.delta)
    }

    fn tasks(&self) -> Vec<Task> {
        vec![Task::Device, Task::Authenticity]
    }
}

fn head_rows(x: &Tensor, rows: usize) -> Result<Tensor> {
    let mut shape = x.shape().to_vec();
    shape[0] = rows;
    Tensor::new(shape, x.data()[..rows * x.row_len()].to_vec())
}

/// Trains `model` (normally freshly initialised with the baseline's seed) on
/// clean batches plus their FGSM copies. Checkpoints are selected on the mean
/// of clean and attacked validation accuracy.
pub fn adversarial_training<M: SelfAttack>(
    model: &mut M,
    train: &Dataset,
    cfg: &DefenseConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let epsilon = psr_to_epsilon(cfg.psr_db, mean_signal_power(train)?)?;
    let bound = cfg.clamp_bound.unwrap_or_else(|| train.max_abs());
    let tasks = model.tasks();

    let augment = |m: &M, x: &Tensor, samples: &[LabeledSample]| -> Result<Option<Tensor>> {
        let n = ((samples.len() as f64 * cfg.ratio).ceil() as usize).min(samples.len());
        let x = head_rows(x, n)?;
        let delta = m.fgsm(&x, &samples[..n], epsilon, cfg.gamma)?;
        Ok(Some(apply_and_clamp(&x, &delta, bound)?))
    };
    let score = |m: &M, val: &Dataset| -> Result<f64> {
        let x = val.inputs();
        let delta = m.fgsm(&x, val.samples(), epsilon, cfg.gamma)?;
        let x_adv = apply_and_clamp(&x, &delta, bound)?;
        let mut total = 0.0;
        for &t in &tasks {
            let truth = val.labels(t);
            let attacked = Metrics::from_predictions(&predict_labels(m, &x_adv, t)?, &truth)?;
            total += evaluate(m, val, t)?.overall + attacked.overall;
        }
        Ok(total / (2 * tasks.len()) as f64)
    };
    fit(model, train, &cfg.train, Some(&augment), Some(&score))
}

/// One row of a defense table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub scope: String,
    pub asp_before: f64,
    pub asp_after: f64,
    pub clean_accuracy: f64,
}

pub const DEFENSE_COLUMNS: [&str; 4] = ["scope", "asp_before", "asp_after", "clean_accuracy"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DefenseReport {
    pub rows: Vec<DefenseRow>,
}

impl DefenseReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        let fail = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(DEFENSE_COLUMNS).map_err(fail)?;
        for r in &self.rows {
            w.serialize(r).map_err(fail)?;
        }
        w.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| Error::Format(format!("csv: {e}")))?
            .clone();
        if headers.iter().ne(DEFENSE_COLUMNS) {
            return Err(Error::Format(format!(
                "unexpected defense columns {headers:?}"
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<DefenseRow>, _>>()
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        for row in &rows {
            let vals = [row.asp_before, row.asp_after, row.clean_accuracy];
            if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Format(format!(
                    "defense row {} has values outside [0, 1]",
                    row.scope
                )));
            }
        }
        Ok(Self { rows })
    }
}

/// ASP of `attack` on `task` before (against `baseline`) and after (against
/// `robust`, with perturbations regenerated against it), plus the robust
/// model's clean accuracy.
pub fn evaluate_defense(
    robust: &Victims<'_>,
    baseline: &Victims<'_>,
    test: &Dataset,
    attack: &AttackSpec,
    task: Task,
    sweep: &SweepConfig,
) -> Result<DefenseRow> {
    let sweep = SweepConfig {
        psr_grid: vec![attack.psr_db],
        with_baseline: false,
        ..sweep.clone()
    };
    let asp = |v: &Victims<'_>| -> Result<f64> {
        evaluate_asp(v, test, attack, &sweep)?
            .get(attack.psr_db, task, false)
            .ok_or_else(|| {
                Error::Config(format!("no model answers {} under this scope", task.name()))
            })
    };
    let clean = match attack.scope {
        crate::attacks::Scope::Multitask => robust.multitask.map(|m| evaluate(m, test, task)),
        _ => match task {
            Task::Device => robust.classifier1.map(|m| evaluate(m, test, task)),
            Task::Authenticity => robust.classifier2.map(|m| evaluate(m, test, task)),
        },
    }
    .ok_or_else(|| Error::Config(format!("no robust model for {}", task.name())))??;
    Ok(DefenseRow {
        scope: format!("{}/{}", attack.scope.name(), task.name()),
        asp_before: asp(baseline)?,
        asp_after: asp(robust)?,
        clean_accuracy: clean.overall,
    })
}
