//! FGSM perturbations (untargeted, targeted, hybrid, multi-task) under a
//! perturbation-to-signal ratio budget, the Gaussian-noise baseline, and
//! attack success probability (ASP) sweeps.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    check_weights, predict_labels, MultiTaskModel, Predictor, SingleTaskModel,
};
use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

const GRAD_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Untargeted,
    Targeted,
}

/// Which model(s) the perturbation is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Classifier1,
    Classifier2,
    Hybrid,
    Multitask,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Untargeted => "untargeted",
            AttackKind::Targeted => "targeted",
        }
    }
}

impl Scope {
    pub const ALL: [Scope; 4] = [
        Scope::Classifier1,
        Scope::Classifier2,
        Scope::Hybrid,
        Scope::Multitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Classifier1 => "classifier1",
            Scope::Classifier2 => "classifier2",
            Scope::Hybrid => "hybrid",
            Scope::Multitask => "multitask",
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack scope {s:?}")))
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "untargeted" => Ok(AttackKind::Untargeted),
            "targeted" => Ok(AttackKind::Targeted),
            _ => Err(Error::Config(format!("unknown attack kind {s:?}"))),
        }
    }
}

/// Default targets: Device 1 and legitimate.
pub const DEFAULT_TARGETS: [usize; 2] = [0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub scope: Scope,
    #[serde(default = "default_gamma")]
    pub gamma: [f64; 2],
    #[serde(default = "default_psr")]
    pub psr_db: f64,
    /// Target labels for (Task 1, Task 2); required for targeted attacks.
    #[serde(default)]
    pub targets: Option<[usize; 2]>,
    /// Admissible amplitude; `None` means the training-split maximum.
    #[serde(default)]
    pub clamp_bound: Option<f64>,
}

fn default_gamma() -> [f64; 2] {
    [0.5, 0.5]
}

fn default_psr() -> f64 {
    -3.0
}

impl AttackSpec {
    pub fn untargeted(scope: Scope, psr_db: f64) -> Self {
        Self {
            kind: AttackKind::Untargeted,
            scope,
            gamma: default_gamma(),
            psr_db,
            targets: None,
            clamp_bound: None,
        }
    }

    pub fn targeted(scope: Scope, psr_db: f64, targets: [usize; 2]) -> Self {
        Self {
            kind: AttackKind::Targeted,
            targets: Some(targets),
            ..Self::untargeted(scope, psr_db)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_weights(self.gamma, "gamma")?;
        if self.psr_db.is_nan() || self.psr_db == f64::INFINITY {
            return Err(Error::Config(format!(
                "psr_db {} is not a usable budget",
                self.psr_db
            )));
        }
        match (self.kind, self.targets) {
            (AttackKind::Targeted, None) => {
                return Err(Error::Config("targeted attacks need target labels".into()));
            }
            (AttackKind::Untargeted, Some(_)) => {
                return Err(Error::Config(
                    "untargeted attacks take no target labels".into(),
                ));
            }
            (_, Some(t)) if t.iter().any(|&c| c > 1) => {
                return Err(Error::Config(format!("target labels {t:?} must be 0 or 1")));
            }
            _ => {}
        }
        if let Some(a) = self.clamp_bound {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("clamp bound {a} must be positive")));
            }
        }
        Ok(())
    }
}

/// A batch of perturbations shaped like the attacked input.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Tensor,
    pub epsilon: f64,
}

impl Perturbation {
    pub fn zeros_like(x: &Tensor) -> Self {
        Self {
            delta: Tensor::zeros(x.shape().to_vec()),
            epsilon: 0.0,
        }
    }
}

/// Per-component amplitude for a PSR given the mean per-component signal power.
pub fn psr_to_epsilon(psr_db: f64, mean_power: f64) -> Result<f64> {
    if !(mean_power > 0.0 && mean_power.is_finite()) {
        return Err(Error::Numeric(format!(
            "mean signal power {mean_power} must be positive"
        )));
    }
    if psr_db.is_nan() || psr_db == f64::INFINITY {
        return Err(Error::Config(format!(
            "psr_db {psr_db} is not a usable budget"
        )));
    }
    Ok((mean_power * 10f64.powf(psr_db / 10.0)).sqrt())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn signed_step(grad: &Tensor, epsilon: f64) -> Perturbation {
    Perturbation {
        delta: grad.map(|g| epsilon * sign(g)),
        epsilon,
    }
}

fn chunked(
    x: &Tensor,
    labels: &[&[usize]],
    f: impl Fn(&Tensor, &[&[usize]]) -> Result<Tensor>,
) -> Result<Tensor> {
    let rows = x.rows();
    let width = x.row_len();
    for l in labels {
        if l.len() != rows {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {rows}",
                l.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for start in (0..rows).step_by(GRAD_CHUNK) {
        let end = (start + GRAD_CHUNK).min(rows);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, x.data()[start * width..end * width].to_vec())?;
        let ls: Vec<&[usize]> = labels.iter().map(|l| &l[start..end]).collect();
        out.extend_from_slice(f(&part, &ls)?.data());
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Per-sample `γ1 ∇x L(model1) + γ2 ∇x L(model2)`.
pub fn hybrid_input_gradient(
    model1: &Network,
    model2: &Network,
    x: &Tensor,
    y1: &[usize],
    y2: &[usize],
    gamma: [f64; 2],
) -> Result<Tensor> {
    chunked(x, &[y1, y2], |part, ls| {
        let g1 = model1.input_gradient(part, ls[0])?;
        let g2 = model2.input_gradient(part, ls[1])?;
        let data = g1
            .data()
            .iter()
            .zip(g2.data())
            .map(|(a, b)| gamma[0] * a + gamma[1] * b)
            .collect();
        Tensor::new(part.shape().to_vec(), data)
    })
}

/// Per-sample `Σ γi ∇x Li` through the shared layer of a multi-task model.
pub fn multitask_input_gradient(
    mtl: &MultiTaskModel,
    x: &Tensor,
    y1: &[usize],
    y2: &[usize],
    gamma: [f64; 2],
) -> Result<Tensor> {
    chunked(x, &[y1, y2], |part, ls| {
        let g = mtl.joint_backward(part, [ls[0], ls[1]], gamma, 1.0, Mode::Eval)?;
        Tensor::new(part.shape().to_vec(), g.input)
    })
}

/// `δ = ε sign(∇x L(x, y))`.
pub fn fgsm_untargeted(
    model: &Network,
    x: &Tensor,
    y: &[usize],
    epsilon: f64,
) -> Result<Perturbation> {
    let g = chunked(x, &[y], |part, ls| model.input_gradient(part, ls[0]))?;
    Ok(signed_step(&g, epsilon))
}

/// `δ = -ε sign(∇x L(x, y_target))`.
pub fn fgsm_targeted(
    model: &Network,
    x: &Tensor,
    y_target: &[usize],
    epsilon: f64,
) -> Result<Perturbation> {
    fgsm_untargeted(model, x, y_target, -epsilon).map(|p| Perturbation { epsilon, ..p })
}

/// `δ = ε sign(γ1 ∇x L1 + γ2 ∇x L2)` over two single-task models.
pub fn fgsm_hybrid(
    model1: &Network,
    model2: &Network,
    x: &Tensor,
    y1: &[usize],
    y2: &[usize],
    gamma: [f64; 2],
    epsilon: f64,
) -> Result<Perturbation> {
    check_weights(gamma, "gamma")?;
    Ok(signed_step(
        &hybrid_input_gradient(model1, model2, x, y1, y2, gamma)?,
        epsilon,
    ))
}

/// `δ = ε sign(Σ γi ∇x L(x, yi))` through the multi-task model.
pub fn fgsm_multitask_untargeted(
    mtl: &MultiTaskModel,
    x: &Tensor,
    y1: &[usize],
    y2: &[usize],
    gamma: [f64; 2],
    epsilon: f64,
) -> Result<Perturbation> {
    check_weights(gamma, "gamma")?;
    Ok(signed_step(
        &multitask_input_gradient(mtl, x, y1, y2, gamma)?,
        epsilon,
    ))
}

/// `δ = -ε sign(Σ γi ∇x L(x, ti))`.
pub fn fgsm_multitask_targeted(
    mtl: &MultiTaskModel,
    x: &Tensor,
    t1: &[usize],
    t2: &[usize],
    gamma: [f64; 2],
    epsilon: f64,
) -> Result<Perturbation> {
    fgsm_multitask_untargeted(mtl, x, t1, t2, gamma, -epsilon)
        .map(|p| Perturbation { epsilon, ..p })
}

/// I.i.d. `N(0, ε²)` components.
pub fn gaussian_baseline(shape: &[usize], epsilon: f64, rng: &mut Rng) -> Result<Perturbation> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )));
    }
    let n = shape.iter().product();
    let data = (0..n).map(|_| epsilon * rng.normal()).collect();
    Ok(Perturbation {
        delta: Tensor::new(shape.to_vec(), data)?,
        epsilon,
    })
}

/// Gaussian perturbations for a batch, one rng substream per sample.
pub fn gaussian_batch(x: &Tensor, epsilon: f64, seed: u64) -> Result<Perturbation> {
    let row_shape = &x.shape()[1..];
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let mut rng = Rng::substream(seed, &format!("gaussian-{i}"));
        data.extend_from_slice(
            gaussian_baseline(row_shape, epsilon, &mut rng)?
                .delta
                .data(),
        );
    }
    Ok(Perturbation {
        delta: Tensor::new(x.shape().to_vec(), data)?,
        epsilon,
    })
}

/// `clamp(x + δ, -A, A)` component-wise.
pub fn apply_and_clamp(x: &Tensor, delta: &Tensor, bound: f64) -> Result<Tensor> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(Error::Config(format!(
            "clamp bound {bound} must be positive"
        )));
    }
    if x.shape() != delta.shape() {
        return Err(Error::Shape(format!(
            "perturbation shape {:?} does not match input {:?}",
            delta.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(delta.data())
        .map(|(a, d)| (a + d).clamp(-bound, bound))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Untargeted: share of all samples misclassified. Targeted: share of
/// samples whose true label differs from the target that are predicted as
/// the target.
pub fn attack_success(predicted: &[usize], truth: &[usize], target: Option<usize>) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::Data(
            "ASP needs equal non-empty prediction and label lists".into(),
        ));
    }
    match target {
        None => Ok(
            predicted.iter().zip(truth).filter(|(p, t)| p != t).count() as f64 / truth.len() as f64,
        ),
        Some(t) => {
            let eligible: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != t).collect();
            if eligible.is_empty() {
                return Err(Error::Data(format!(
                    "no test samples outside target class {t}"
                )));
            }
            let hits = eligible.iter().filter(|&&i| predicted[i] == t).count();
            Ok(hits as f64 / eligible.len() as f64)
        }
    }
}

/// Trained models available to an attack sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct Victims<'a> {
    pub classifier1: Option<&'a SingleTaskModel>,
    pub classifier2: Option<&'a SingleTaskModel>,
    pub multitask: Option<&'a MultiTaskModel>,
}

impl<'a> Victims<'a> {
    fn single(&self, task: Task) -> Result<&'a SingleTaskModel> {
        let m = match task {
            Task::Device => self.classifier1,
            Task::Authenticity => self.classifier2,
        };
        m.ok_or_else(|| Error::Config(format!("no single-task model for {}", task.name())))
    }

    fn mtl(&self) -> Result<&'a MultiTaskModel> {
        self.multitask
            .ok_or_else(|| Error::Config("multi-task scope needs a multi-task model".into()))
    }

    /// Model whose task-`task` prediction is scored under `scope`.
    fn predictor(&self, scope: Scope, task: Task) -> Result<&'a (dyn Predictor + Sync)> {
        Ok(match scope {
            Scope::Multitask => self.mtl()?,
            _ => self.single(task)?,
        })
    }
}

/// The sign pattern of an FGSM attack for `spec`, before scaling by ε.
/// Targeted attacks already carry their negative sign.
pub fn attack_direction(
    victims: &Victims<'_>,
    x: &Tensor,
    test: &Dataset,
    spec: &AttackSpec,
) -> Result<Tensor> {
    spec.validate()?;
    let labels: [Vec<usize>; 2] = match spec.targets {
        Some(t) if spec.kind == AttackKind::Targeted => {
            [vec![t[0]; test.len()], vec![t[1]; test.len()]]
        }
        _ => [test.labels(Task::Device), test.labels(Task::Authenticity)],
    };
    let step = if spec.kind == AttackKind::Targeted {
        -1.0
    } else {
        1.0
    };
    let p = match spec.scope {
        Scope::Classifier1 => {
            fgsm_untargeted(&victims.single(Task::Device)?.net, x, &labels[0], step)?
        }
        Scope::Classifier2 => fgsm_untargeted(
            &victims.single(Task::Authenticity)?.net,
            x,
            &labels[1],
            step,
        )?,
        Scope::Hybrid => fgsm_hybrid(
            &victims.single(Task::Device)?.net,
            &victims.single(Task::Authenticity)?.net,
            x,
            &labels[0],
            &labels[1],
            spec.gamma,
            step,
        )?,
        Scope::Multitask => {
            fgsm_multitask_untargeted(victims.mtl()?, x, &labels[0], &labels[1], spec.gamma, step)?
        }
    };
    Ok(p.delta)
}

/// One point of an ASP-versus-PSR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspPoint {
    pub psr_db: f64,
    pub scope: Scope,
    pub kind: AttackKind,
    pub task: String,
    pub asp: f64,
    /// `true` for the Gaussian-noise baseline, `false` for FGSM.
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AspCurve {
    pub points: Vec<AspPoint>,
}

pub const ASP_COLUMNS: [&str; 6] = ["psr_db", "scope", "kind", "task", "asp", "baseline"];

impl AspCurve {
    pub fn get(&self, psr_db: f64, task: Task, baseline: bool) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.psr_db == psr_db && p.task == task.name() && p.baseline == baseline)
            .map(|p| p.asp)
    }

    pub fn write_csv(&self, out: impl Write, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(header)
            .from_writer(out);
        for p in &self.points {
            w.serialize(p)
                .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        if header && self.points.is_empty() {
            w.write_record(ASP_COLUMNS)
                .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r
            .headers()
            .map_err(|e| Error::Format(format!("csv: {e}")))?
            .clone();
        if headers.iter().ne(ASP_COLUMNS) {
            return Err(Error::Format(format!("unexpected ASP columns {headers:?}")));
        }
        let points = r
            .deserialize()
            .collect::<std::result::Result<Vec<AspPoint>, _>>()
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        for p in &points {
            if !(0.0..=1.0).contains(&p.asp) {
                return Err(Error::Format(format!("ASP {} outside [0, 1]", p.asp)));
            }
        }
        Ok(Self { points })
    }
}

/// Options for an ASP sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub psr_grid: Vec<f64>,
    /// Per-component signal power used to turn PSR into ε.
    pub mean_power: f64,
    pub clamp_bound: f64,
    pub with_baseline: bool,
    pub seed: u64,
    /// Worker threads for grid points.
    pub threads: usize,
}

/// −20..=0 dB in 1 dB steps.
pub fn default_psr_grid() -> Vec<f64> {
    (-20..=0).map(f64::from).collect()
}

/// ASP of both tasks for every PSR in the grid. The FGSM sign pattern does
/// not depend on ε, so it is computed once and rescaled per grid point.
/// Grid points are spread over `sweep.threads` workers; output order follows
/// the grid regardless.
pub fn evaluate_asp(
    victims: &Victims<'_>,
    test: &Dataset,
    spec: &AttackSpec,
    sweep: &SweepConfig,
) -> Result<AspCurve> {
    if test.is_empty() {
        return Err(Error::Data("ASP evaluation on an empty test set".into()));
    }
    let bound = spec.clamp_bound.unwrap_or(sweep.clamp_bound);
    let x = test.inputs();
    let direction = attack_direction(victims, &x, test, spec)?;
    let noise_unit = if sweep.with_baseline {
        Some(gaussian_batch(&x, 1.0, sweep.seed)?.delta)
    } else {
        None
    };
    let ctx = SweepContext {
        victims,
        spec,
        x: &x,
        direction: &direction,
        noise_unit: noise_unit.as_ref(),
        truth: [test.labels(Task::Device), test.labels(Task::Authenticity)],
        bound,
        mean_power: sweep.mean_power,
    };

    let threads = sweep.threads.clamp(1, sweep.psr_grid.len().max(1));
    let per_worker = sweep.psr_grid.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<AspPoint>>> = if threads == 1 {
        vec![ctx.points(&sweep.psr_grid)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = sweep
                .psr_grid
                .chunks(per_worker)
                .map(|grid| {
                    let ctx = &ctx;
                    scope.spawn(move || ctx.points(grid))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("ASP worker panicked".into())))
                })
                .collect()
        })
    };
    let mut curve = AspCurve::default();
    for part in parts {
        curve.points.extend(part?);
    }
    Ok(curve)
}

struct SweepContext<'a, 'v> {
    victims: &'a Victims<'v>,
    spec: &'a AttackSpec,
    x: &'a Tensor,
    direction: &'a Tensor,
    noise_unit: Option<&'a Tensor>,
    truth: [Vec<usize>; 2],
    bound: f64,
    mean_power: f64,
}

impl SweepContext<'_, '_> {
    fn points(&self, grid: &[f64]) -> Result<Vec<AspPoint>> {
        let tasks = [Task::Device, Task::Authenticity];
        let target = |k: usize| match self.spec.kind {
            AttackKind::Targeted => self.spec.targets.map(|t| t[k]),
            AttackKind::Untargeted => None,
        };
        let mut out = Vec::new();
        for &psr in grid {
            let eps = psr_to_epsilon(psr, self.mean_power)?;
            let mut variants = vec![(false, self.direction.map(|d| d * eps))];
            if let Some(unit) = self.noise_unit {
                variants.push((true, unit.map(|d| d * eps)));
            }
            for (baseline, delta) in variants {
                let x_adv = apply_and_clamp(self.x, &delta, self.bound)?;
                for (k, &task) in tasks.iter().enumerate() {
                    let Ok(model) = self.victims.predictor(self.spec.scope, task) else {
                        continue;
                    };
                    let predicted = predict_labels(model, &x_adv, task)?;
                    out.push(AspPoint {
                        psr_db: psr,
                        scope: self.spec.scope,
                        kind: self.spec.kind,
                        task: task.name().to_string(),
                        asp: attack_success(&predicted, &self.truth[k], target(k))?,
                        baseline,
                    });
                }
            }
        }
        Ok(out)
    }
}
