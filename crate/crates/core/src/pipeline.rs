//! End-to-end experiment: data generation, spoofing, training, attack
//! sweeps, adversarial training and reports, with a manifest of content
//! hashes for every stage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{
    default_psr_grid, evaluate_asp, AspCurve, AttackSpec, Scope, SweepConfig, Victims,
    DEFAULT_TARGETS,
};
use crate::classifiers::{
    build_multitask, build_single, detect_arch, evaluate, evaluate_subset, train_multitask,
    train_single, Arch, Metrics, MultiTaskModel, Predictor, SingleTaskModel, Subset, TrainConfig,
    TrainHistory,
};
use crate::dataset::{
    self, from_raw_f32, load_dataset, mean_signal_power, save_dataset, Authenticity, Dataset,
    DatasetConfig, Device, IqSample, Task,
};
use crate::defense::{adversarial_training, evaluate_defense, DefenseConfig, DefenseReport};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::rng::{derive_seed, Rng};
use crate::spoof::{jsd, kde_draws, kde_fit, spoof_rogues, HistogramConfig};

/// JSON schema describing [`ExperimentConfig`] files.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/experiment_config.schema.json");

pub const THREADS_ENV: &str = "LORA_ADVSEC_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Single,
    Multitask,
    Both,
}

impl RunMode {
    pub fn single(self) -> bool {
        self != RunMode::Multitask
    }

    pub fn multitask(self) -> bool {
        self != RunMode::Single
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Labeled dataset file to use instead of generating one.
    pub dataset_path: Option<PathBuf>,
    pub train_frac: f64,
    pub arch: Arch,
    pub mode: RunMode,
    pub train: TrainConfig,
    /// Attack curves to sweep; `None` selects the defaults for the mode.
    pub attacks: Option<Vec<AttackSpec>>,
    pub psr_grid: Vec<f64>,
    pub gaussian_baseline: bool,
    /// `None` skips adversarial training.
    pub defense: Option<DefenseConfig>,
    pub histogram: HistogramConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dataset: DatasetConfig::default(),
            dataset_path: None,
            train_frac: 0.8,
            arch: Arch::Cnn,
            mode: RunMode::Both,
            train: TrainConfig::default(),
            attacks: None,
            psr_grid: default_psr_grid(),
            gaussian_baseline: true,
            defense: Some(DefenseConfig::default()),
            histogram: HistogramConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Untargeted and targeted curves for every scope the mode provides.
pub fn default_attacks(mode: RunMode) -> Vec<AttackSpec> {
    let mut scopes = Vec::new();
    if mode.single() {
        scopes.extend([Scope::Classifier1, Scope::Classifier2, Scope::Hybrid]);
    }
    if mode.multitask() {
        scopes.push(Scope::Multitask);
    }
    let untargeted = scopes.iter().map(|&s| AttackSpec::untargeted(s, -3.0));
    let targeted = scopes
        .iter()
        .map(|&s| AttackSpec::targeted(s, -3.0, DEFAULT_TARGETS));
    untargeted.chain(targeted).collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac {} outside (0, 1)",
                self.train_frac
            )));
        }
        if self.psr_grid.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("psr_grid entries must be finite".into()));
        }
        for a in self.attacks.iter().flatten() {
            a.validate()?;
            let needs_single = a.scope != Scope::Multitask;
            if (needs_single && !self.mode.single()) || (!needs_single && !self.mode.multitask()) {
                return Err(Error::Config(format!(
                    "attack scope {} is unavailable in mode {:?}",
                    a.scope.name(),
                    self.mode
                )));
            }
        }
        if let Some(d) = &self.defense {
            d.validate()?;
        }
        if self.histogram.bins_i == 0
            || self.histogram.bins_q == 0
            || self.histogram.epsilon.is_nan()
            || self.histogram.epsilon <= 0.0
        {
            return Err(Error::Config(
                "histogram needs positive bins and epsilon".into(),
            ));
        }
        Ok(())
    }

    /// Copy with every optional default filled in.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.attacks.is_none() {
            cfg.attacks = Some(default_attacks(cfg.mode));
        }
        cfg
    }

    fn attack_specs(&self) -> Vec<AttackSpec> {
        self.attacks
            .clone()
            .unwrap_or_else(|| default_attacks(self.mode))
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.out_dir)
    }
}

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub root: PathBuf,
}

pub const LEGITIMATE_FILE: &str = "data/legitimate.lora";
pub const DATASET_FILE: &str = "data/dataset.lora";
pub const TRAIN_FILE: &str = "data/train.lora";
pub const TEST_FILE: &str = "data/test.lora";
pub const HISTORY_FILE: &str = "histories.json";
pub const FIDELITY_FILE: &str = "fidelity.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const ASP_FILE: &str = "asp_curves.csv";
pub const DEFENSE_FILE: &str = "defense.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn single_model(&self, arch: Arch, task: Task, robust: bool) -> String {
        format!(
            "models/{}_{}{}.lann",
            arch.name(),
            task.name(),
            if robust { "_robust" } else { "" }
        )
    }

    pub fn multitask_model(&self, arch: Arch, robust: bool) -> String {
        format!(
            "models/{}_multitask{}.lamt",
            arch.name(),
            if robust { "_robust" } else { "" }
        )
    }

    fn ensure_parent(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(path)
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.ensure_parent(rel)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.path(rel);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    fn save_dataset(&self, rel: &str, ds: &Dataset) -> Result<()> {
        let path = self.ensure_parent(rel)?;
        save_dataset(ds, &path)
    }

    fn load_dataset(&self, rel: &str) -> Result<Dataset> {
        load_dataset(&self.path(rel))
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    pub fn hash(&self, rel: &str) -> Result<String> {
        Ok(sha256_hex(&self.read(rel)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Evaluation worker count from `LORA_ADVSEC_THREADS` (default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV}={v:?} must be a positive integer"
            ))),
        },
    }
}

fn stage_seed(cfg: &ExperimentConfig, label: &str) -> u64 {
    derive_seed(cfg.seed, label)
}

fn model_train_config(cfg: &ExperimentConfig, name: &str) -> TrainConfig {
    TrainConfig {
        seed: stage_seed(cfg, &format!("train/{name}")),
        ..cfg.train.clone()
    }
}

fn init_seed(cfg: &ExperimentConfig, name: &str) -> u64 {
    stage_seed(cfg, &format!("init/{name}"))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Legitimate records from the configured device profiles.
pub fn stage_gen_data(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let per_device = cfg.dataset.n_total / 4;
    let legit = dataset::generate_legitimate(&cfg.dataset, per_device, stage_seed(cfg, "dataset"))?;
    let mut ds = Dataset::new(legit);
    ds.set_provenance(Some(cfg.dataset.hash()), Some(stage_seed(cfg, "dataset")));
    cfg.workspace().save_dataset(LEGITIMATE_FILE, &ds)?;
    Ok(vec![LEGITIMATE_FILE.into()])
}

/// Legitimate records converted from raw interleaved float32 captures; the
/// i-th file belongs to device i+1.
pub fn stage_gen_data_from_raw(cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<Vec<String>> {
    if files.is_empty() || files.len() > 2 {
        return Err(Error::Config(
            "give one raw capture per device (1 or 2 files)".into(),
        ));
    }
    let mut samples = Vec::new();
    for (path, device) in files.iter().zip(Device::ALL) {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        samples.extend(from_raw_f32(&bytes, device, Authenticity::Legitimate)?);
    }
    cfg.workspace()
        .save_dataset(LEGITIMATE_FILE, &Dataset::new(samples))?;
    Ok(vec![LEGITIMATE_FILE.into()])
}

/// Rogue records spoofed from the legitimate ones, plus constellation fidelity.
pub fn stage_spoof(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let ws = cfg.workspace();
    let legit = ws.load_dataset(LEGITIMATE_FILE)?;
    let counts = legit.counts();
    let per_device = counts[0][0].min(counts[1][0]);
    if per_device == 0 {
        return Err(Error::Data(
            "spoofing needs legitimate records for both devices".into(),
        ));
    }
    let rogue = spoof_rogues(
        legit.samples(),
        &cfg.dataset,
        per_device,
        stage_seed(cfg, "dataset"),
    )?;
    let mut samples = legit.samples().to_vec();
    samples.extend(rogue);
    let mut ds = Dataset::new(samples);
    ds.set_provenance(legit.meta().config_hash.clone(), legit.meta().seed);
    ws.save_dataset(DATASET_FILE, &ds)?;
    ws.write(FIDELITY_FILE, &fidelity_report(cfg, &ds)?)?;
    Ok(vec![DATASET_FILE.into(), FIDELITY_FILE.into()])
}

/// One row per device: JSD of the legitimate constellation against fresh
/// KDE draws and against the stored rogue records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub device: String,
    pub n_legitimate: usize,
    pub jsd_kde: f64,
    pub jsd_rogue: f64,
}

pub fn fidelity_rows(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<FidelityRow>> {
    let mut rows = Vec::new();
    for device in Device::ALL {
        let pick = |a: Authenticity| -> Vec<IqSample> {
            ds.samples()
                .iter()
                .filter(|s| s.device == device && s.authenticity == a)
                .map(|s| s.sample)
                .collect()
        };
        let legit = pick(Authenticity::Legitimate);
        let rogue = pick(Authenticity::Rogue);
        if legit.is_empty() || rogue.is_empty() {
            return Err(Error::Data(format!(
                "fidelity needs both legitimate and rogue records of {device:?}"
            )));
        }
        let model = kde_fit(&legit, cfg.dataset.kde_bandwidth)?;
        let mut rng = Rng::substream(
            stage_seed(cfg, "fidelity"),
            &format!("device-{}", device.index() + 1),
        );
        let draws = kde_draws(&model, legit.len(), &mut rng)?;
        rows.push(FidelityRow {
            device: format!("device{}", device.index() + 1),
            n_legitimate: legit.len(),
            jsd_kde: jsd(&legit, &draws, &cfg.histogram)?,
            jsd_rogue: jsd(&legit, &rogue, &cfg.histogram)?,
        });
    }
    Ok(rows)
}

fn fidelity_report(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<u8>> {
    let rows = fidelity_rows(cfg, ds)?;
    csv_bytes(|buf| write_rows(buf, &rows))
}

fn write_rows<T: Serialize>(buf: &mut Vec<u8>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv: {e}")))
}

fn source_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset_path {
        Some(p) => load_dataset(p),
        None => cfg.workspace().load_dataset(DATASET_FILE),
    }
}

/// Trained models of one run.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub classifier1: Option<SingleTaskModel>,
    pub classifier2: Option<SingleTaskModel>,
    pub multitask: Option<MultiTaskModel>,
}

impl Models {
    pub fn victims(&self) -> Victims<'_> {
        Victims {
            classifier1: self.classifier1.as_ref(),
            classifier2: self.classifier2.as_ref(),
            multitask: self.multitask.as_ref(),
        }
    }

    pub fn load(cfg: &ExperimentConfig, robust: bool) -> Result<Self> {
        let ws = cfg.workspace();
        let mut models = Models::default();
        if cfg.mode.single() {
            for task in [Task::Device, Task::Authenticity] {
                let net =
                    checkpoint::load_network(&ws.path(&ws.single_model(cfg.arch, task, robust)))?;
                if detect_arch(net.specs()) != Some(cfg.arch) {
                    return Err(Error::Format(format!(
                        "checkpoint for {} is not a {} model",
                        task.name(),
                        cfg.arch.name()
                    )));
                }
                let model = SingleTaskModel {
                    net,
                    task,
                    arch: cfg.arch,
                };
                match task {
                    Task::Device => models.classifier1 = Some(model),
                    Task::Authenticity => models.classifier2 = Some(model),
                }
            }
        }
        if cfg.mode.multitask() {
            let m = MultiTaskModel::load(&ws.path(&ws.multitask_model(cfg.arch, robust)))?;
            if m.arch != cfg.arch {
                return Err(Error::Format(format!(
                    "multi-task checkpoint is not a {} model",
                    cfg.arch.name()
                )));
            }
            models.multitask = Some(m);
        }
        Ok(models)
    }

    fn save(&self, cfg: &ExperimentConfig, robust: bool) -> Result<Vec<String>> {
        let ws = cfg.workspace();
        let mut written = Vec::new();
        for m in [&self.classifier1, &self.classifier2].into_iter().flatten() {
            let rel = ws.single_model(cfg.arch, m.task, robust);
            ws.write(&rel, &checkpoint::encode_network(&m.net))?;
            written.push(rel);
        }
        if let Some(m) = &self.multitask {
            let rel = ws.multitask_model(cfg.arch, robust);
            ws.write(&rel, &m.encode())?;
            written.push(rel);
        }
        Ok(written)
    }
}

/// Stratified split, then every model the mode asks for.
pub fn stage_train(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let ws = cfg.workspace();
    let ds = source_dataset(cfg)?;
    let (train, test) = dataset::split(&ds, cfg.train_frac, stage_seed(cfg, "split"))?;
    ws.save_dataset(TRAIN_FILE, &train)?;
    ws.save_dataset(TEST_FILE, &test)?;

    let mut models = Models::default();
    let mut histories: BTreeMap<String, TrainHistory> = BTreeMap::new();
    if cfg.mode.single() {
        for task in [Task::Device, Task::Authenticity] {
            let name = task.name();
            let mut m = build_single(cfg.arch, task, init_seed(cfg, name))?;
            histories.insert(
                name.into(),
                train_single(&mut m, &train, &model_train_config(cfg, name))?,
            );
            match task {
                Task::Device => models.classifier1 = Some(m),
                Task::Authenticity => models.classifier2 = Some(m),
            }
        }
    }
    if cfg.mode.multitask() {
        let mut m = build_multitask(
            cfg.arch,
            init_seed(cfg, "multitask"),
            cfg.train.task_weights,
        )?;
        histories.insert(
            "multitask".into(),
            train_multitask(&mut m, &train, &model_train_config(cfg, "multitask"))?,
        );
        models.multitask = Some(m);
    }
    let mut outputs = vec![TRAIN_FILE.to_string(), TEST_FILE.to_string()];
    outputs.extend(models.save(cfg, false)?);
    let json = serde_json::to_vec_pretty(&histories).map_err(|e| Error::Format(e.to_string()))?;
    ws.write(HISTORY_FILE, &json)?;
    outputs.push(HISTORY_FILE.into());
    Ok(outputs)
}

fn sweep_config(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    grid: Vec<f64>,
    baseline: bool,
) -> Result<SweepConfig> {
    Ok(SweepConfig {
        psr_grid: grid,
        mean_power: mean_signal_power(test)?,
        clamp_bound: train.max_abs(),
        with_baseline: baseline,
        seed: stage_seed(cfg, "gaussian"),
        threads: threads_from_env()?,
    })
}

/// Full ASP-versus-PSR sweep for every configured attack.
pub fn asp_report(cfg: &ExperimentConfig) -> Result<Vec<u8>> {
    let ws = cfg.workspace();
    let train = ws.load_dataset(TRAIN_FILE)?;
    let test = ws.load_dataset(TEST_FILE)?;
    let models = Models::load(cfg, false)?;
    let sweep = sweep_config(
        cfg,
        &train,
        &test,
        cfg.psr_grid.clone(),
        cfg.gaussian_baseline,
    )?;
    let mut curve = AspCurve::default();
    for spec in cfg.attack_specs() {
        curve
            .points
            .extend(evaluate_asp(&models.victims(), &test, &spec, &sweep)?.points);
    }
    csv_bytes(|buf| curve.write_csv(buf, true))
}

pub fn stage_attack(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    cfg.workspace().write(ASP_FILE, &asp_report(cfg)?)?;
    Ok(vec![ASP_FILE.into()])
}

/// One FGSM point appended to `asp_curves.csv` (one row per scored task).
pub fn attack_point(cfg: &ExperimentConfig, spec: &AttackSpec) -> Result<Vec<String>> {
    spec.validate()?;
    let ws = cfg.workspace();
    let train = ws.load_dataset(TRAIN_FILE)?;
    let test = ws.load_dataset(TEST_FILE)?;
    let models = Models::load(cfg, false)?;
    let sweep = sweep_config(cfg, &train, &test, vec![spec.psr_db], false)?;
    let curve = evaluate_asp(&models.victims(), &test, spec, &sweep)?;
    let path = ws.ensure_parent(ASP_FILE)?;
    let fresh = !path.exists();
    let mut existing = if fresh {
        Vec::new()
    } else {
        ws.read(ASP_FILE)?
    };
    if !fresh {
        AspCurve::read_csv(existing.as_slice())?;
    }
    curve.write_csv(&mut existing, fresh)?;
    fs::write(&path, existing).map_err(|e| Error::io(&path, e))?;
    Ok(vec![ASP_FILE.into()])
}

fn defense_settings(cfg: &ExperimentConfig) -> Result<&DefenseConfig> {
    cfg.defense
        .as_ref()
        .ok_or_else(|| Error::Config("no defense configured".into()))
}

/// Robust copies of every baseline model, retrained from the baseline's
/// initialisation and training seeds on clean plus FGSM batches.
pub fn stage_defend(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let dcfg = defense_settings(cfg)?;
    let ws = cfg.workspace();
    let train = ws.load_dataset(TRAIN_FILE)?;
    let mut robust = Models::default();
    let mut histories: BTreeMap<String, TrainHistory> = BTreeMap::new();
    let with_seed = |name: &str| DefenseConfig {
        train: TrainConfig {
            seed: stage_seed(cfg, &format!("train/{name}")),
            ..dcfg.train.clone()
        },
        ..dcfg.clone()
    };
    if cfg.mode.single() {
        for task in [Task::Device, Task::Authenticity] {
            let name = task.name();
            let mut m = build_single(cfg.arch, task, init_seed(cfg, name))?;
            histories.insert(
                format!("{name}_robust"),
                adversarial_training(&mut m, &train, &with_seed(name))?,
            );
            match task {
                Task::Device => robust.classifier1 = Some(m),
                Task::Authenticity => robust.classifier2 = Some(m),
            }
        }
    }
    if cfg.mode.multitask() {
        let mut m = build_multitask(
            cfg.arch,
            init_seed(cfg, "multitask"),
            cfg.train.task_weights,
        )?;
        histories.insert(
            "multitask_robust".into(),
            adversarial_training(&mut m, &train, &with_seed("multitask"))?,
        );
        robust.multitask = Some(m);
    }
    let mut outputs = robust.save(cfg, true)?;
    let json = serde_json::to_vec_pretty(&histories).map_err(|e| Error::Format(e.to_string()))?;
    ws.write("histories_robust.json", &json)?;
    outputs.push("histories_robust.json".into());
    ws.write(DEFENSE_FILE, &defense_report(cfg)?)?;
    outputs.push(DEFENSE_FILE.into());
    Ok(outputs)
}

/// Scopes reported for each defended task: matched, hybrid, mismatched.
fn defense_rows(mode: RunMode) -> Vec<(Scope, Task)> {
    let mut rows = Vec::new();
    if mode.single() {
        for (task, matched, mismatched) in [
            (Task::Device, Scope::Classifier1, Scope::Classifier2),
            (Task::Authenticity, Scope::Classifier2, Scope::Classifier1),
        ] {
            rows.extend([(matched, task), (Scope::Hybrid, task), (mismatched, task)]);
        }
    }
    if mode.multitask() {
        rows.extend([
            (Scope::Multitask, Task::Device),
            (Scope::Multitask, Task::Authenticity),
        ]);
    }
    rows
}

pub fn defense_report(cfg: &ExperimentConfig) -> Result<Vec<u8>> {
    let dcfg = defense_settings(cfg)?;
    let ws = cfg.workspace();
    let train = ws.load_dataset(TRAIN_FILE)?;
    let test = ws.load_dataset(TEST_FILE)?;
    let baseline = Models::load(cfg, false)?;
    let robust = Models::load(cfg, true)?;
    let sweep = sweep_config(cfg, &train, &test, vec![dcfg.psr_db], false)?;
    let mut report = DefenseReport::default();
    for (scope, task) in defense_rows(cfg.mode) {
        let spec = AttackSpec {
            gamma: dcfg.gamma,
            clamp_bound: dcfg.clamp_bound,
            ..AttackSpec::untargeted(scope, dcfg.psr_db)
        };
        report.rows.push(evaluate_defense(
            &robust.victims(),
            &baseline.victims(),
            &test,
            &spec,
            task,
            &sweep,
        )?);
    }
    csv_bytes(|buf| report.write_csv(buf))
}

/// One line of the accuracy tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub arch: Arch,
    pub task: String,
    pub subset: Subset,
    pub overall: f64,
    pub class0: Option<f64>,
    pub class1: Option<f64>,
}

impl AccuracyRow {
    fn new(model: &str, arch: Arch, task: Task, subset: Subset, m: Metrics) -> Self {
        Self {
            model: model.into(),
            arch,
            task: task.name().into(),
            subset,
            overall: m.overall,
            class0: m.per_class[0],
            class1: m.per_class[1],
        }
    }
}

/// Task 1 on all, legitimate-only and rogue-only records, then Task 2.
pub fn accuracy_rows(
    model: &(impl Predictor + ?Sized),
    name: &str,
    arch: Arch,
    test: &Dataset,
    tasks: &[Task],
) -> Result<Vec<AccuracyRow>> {
    let mut rows = Vec::new();
    for &task in tasks {
        if task == Task::Device {
            for subset in [Subset::All, Subset::LegitimateOnly, Subset::RogueOnly] {
                rows.push(AccuracyRow::new(
                    name,
                    arch,
                    task,
                    subset,
                    evaluate_subset(model, test, subset)?,
                ));
            }
        } else {
            rows.push(AccuracyRow::new(
                name,
                arch,
                task,
                Subset::All,
                evaluate(model, test, task)?,
            ));
        }
    }
    Ok(rows)
}

pub fn accuracy_report(cfg: &ExperimentConfig) -> Result<Vec<u8>> {
    let test = cfg.workspace().load_dataset(TEST_FILE)?;
    let models = Models::load(cfg, false)?;
    let mut rows = Vec::new();
    for m in [&models.classifier1, &models.classifier2]
        .into_iter()
        .flatten()
    {
        rows.extend(accuracy_rows(m, "single", cfg.arch, &test, &[m.task])?);
    }
    if let Some(m) = &models.multitask {
        rows.extend(accuracy_rows(
            m,
            "multitask",
            cfg.arch,
            &test,
            &[Task::Device, Task::Authenticity],
        )?);
    }
    csv_bytes(|buf| write_rows(buf, &rows))
}

pub fn read_accuracy(bytes: &[u8]) -> Result<Vec<AccuracyRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<AccuracyRow>, _>>()
        .map_err(|e| Error::Format(format!("accuracy csv: {e}")))
}

pub fn read_fidelity(bytes: &[u8]) -> Result<Vec<FidelityRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<FidelityRow>, _>>()
        .map_err(|e| Error::Format(format!("fidelity csv: {e}")))
}

pub fn stage_report(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    cfg.workspace()
        .write(ACCURACY_FILE, &accuracy_report(cfg)?)?;
    Ok(vec![ACCURACY_FILE.into()])
}

/// Rewrites every report from the saved dataset and checkpoints.
pub fn regenerate_reports(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let ws = cfg.workspace();
    let mut written = stage_report(cfg)?;
    written.extend(stage_attack(cfg)?);
    if ws.exists(DATASET_FILE) && cfg.dataset_path.is_none() {
        let ds = ws.load_dataset(DATASET_FILE)?;
        ws.write(FIDELITY_FILE, &fidelity_report(cfg, &ds)?)?;
        written.push(FIDELITY_FILE.into());
    }
    let robust_present = cfg.defense.is_some()
        && (!cfg.mode.single() || ws.exists(&ws.single_model(cfg.arch, Task::Device, true)))
        && (!cfg.mode.multitask() || ws.exists(&ws.multitask_model(cfg.arch, true)));
    if robust_present {
        ws.write(DEFENSE_FILE, &defense_report(cfg)?)?;
        written.push(DEFENSE_FILE.into());
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Skipped,
    Failed,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file, keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub library_version: String,
    pub rng: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub complete: bool,
}

impl RunManifest {
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub const STAGES: [&str; 6] = ["gen-data", "spoof", "train", "attack", "defend", "report"];

type StageFn = fn(&ExperimentConfig) -> Result<Vec<String>>;

fn stage_inputs(cfg: &ExperimentConfig, name: &str) -> Vec<PathBuf> {
    let ws = cfg.workspace();
    let models = |robust: bool| {
        let mut v = Vec::new();
        if cfg.mode.single() {
            v.push(ws.path(&ws.single_model(cfg.arch, Task::Device, robust)));
            v.push(ws.path(&ws.single_model(cfg.arch, Task::Authenticity, robust)));
        }
        if cfg.mode.multitask() {
            v.push(ws.path(&ws.multitask_model(cfg.arch, robust)));
        }
        v
    };
    match name {
        "spoof" => vec![ws.path(LEGITIMATE_FILE)],
        "train" => vec![cfg
            .dataset_path
            .clone()
            .unwrap_or_else(|| ws.path(DATASET_FILE))],
        "attack" | "report" | "defend" => {
            let mut v = vec![ws.path(TRAIN_FILE), ws.path(TEST_FILE)];
            v.extend(models(false));
            v
        }
        _ => Vec::new(),
    }
}

/// Runs every stage in order and writes `manifest.json`. A failing stage
/// stops the run; the manifest then lists it as failed and later stages as
/// not run.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let ws = cfg.workspace();
    fs::create_dir_all(&ws.root).map_err(|e| Error::io(&ws.root, e))?;
    let external = cfg.dataset_path.is_some();
    let plan: [(&'static str, Option<StageFn>); 6] = [
        ("gen-data", (!external).then_some(stage_gen_data as StageFn)),
        ("spoof", (!external).then_some(stage_spoof as StageFn)),
        ("train", Some(stage_train)),
        ("attack", Some(stage_attack)),
        (
            "defend",
            cfg.defense.is_some().then_some(stage_defend as StageFn),
        ),
        ("report", Some(stage_report)),
    ];
    let mut manifest = RunManifest {
        library_version: env!("CARGO_PKG_VERSION").into(),
        rng: Rng::ALGORITHM.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        stages: Vec::new(),
        complete: false,
    };
    let mut failure = None;
    for (name, stage) in plan {
        let mut record = StageRecord {
            name: name.into(),
            status: StageStatus::NotRun,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            error: None,
        };
        match (stage, &failure) {
            (_, Some(_)) => {}
            (None, None) => record.status = StageStatus::Skipped,
            (Some(f), None) => {
                let result = hash_inputs(&cfg, name, &mut record)
                    .and_then(|_| f(&cfg))
                    .and_then(|outs| {
                        for rel in outs {
                            let h = ws.hash(&rel)?;
                            record.outputs.insert(rel, h);
                        }
                        Ok(())
                    });
                match result {
                    Ok(()) => record.status = StageStatus::Complete,
                    Err(e) => {
                        record.status = StageStatus::Failed;
                        record.error = Some(e.to_string());
                        failure = Some(e.in_stage(name));
                    }
                }
            }
        }
        manifest.stages.push(record);
    }
    manifest.complete = failure.is_none();
    ws.write(MANIFEST_FILE, &manifest.to_json())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

fn hash_inputs(cfg: &ExperimentConfig, name: &str, record: &mut StageRecord) -> Result<()> {
    for path in stage_inputs(cfg, name) {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let key = path
            .strip_prefix(&cfg.out_dir)
            .map(Path::to_path_buf)
            .unwrap_or(path.clone());
        record
            .inputs
            .insert(key.display().to_string(), sha256_hex(&bytes));
    }
    Ok(())
}
