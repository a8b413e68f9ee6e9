//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Shares one full default pipeline run across the criteria that
//! need trained models.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use lora_advsec::attacks::{
    evaluate_asp, fgsm_hybrid, fgsm_multitask_targeted, fgsm_multitask_untargeted, fgsm_targeted,
    fgsm_untargeted, psr_to_epsilon, AspCurve, AttackKind, AttackSpec, Perturbation, Scope,
    SweepConfig,
};
use lora_advsec::classifiers::{
    build_multitask, build_single, head_layers, shared_layers, Arch, MultiTaskModel,
};
use lora_advsec::dataset::{load_dataset, mean_signal_power, Dataset, Task, INPUT_SHAPE};
use lora_advsec::defense::DefenseReport;
use lora_advsec::nn::{cross_entropy, Mode, Network};
use lora_advsec::pipeline::{
    self, read_accuracy, read_fidelity, AccuracyRow, ExperimentConfig, Models, RunMode,
    ACCURACY_FILE, ASP_FILE, DEFENSE_FILE, FIDELITY_FILE, TEST_FILE, TRAIN_FILE,
};
use lora_advsec::spoof::KdeModel;
use lora_advsec::{Result, Rng, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct FullRun {
    cfg: ExperimentConfig,
}

impl FullRun {
    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let path = self.cfg.out_dir.join(rel);
        fs::read(&path).map_err(|e| lora_advsec::Error::io(&path, e))
    }

    fn dataset(&self, rel: &str) -> Result<Dataset> {
        load_dataset(&self.cfg.out_dir.join(rel))
    }

    fn accuracy(&self) -> Result<Vec<AccuracyRow>> {
        read_accuracy(&self.read(ACCURACY_FILE)?)
    }
}

fn run_in(dir: &Path, cfg: ExperimentConfig) -> Result<FullRun> {
    let cfg = ExperimentConfig {
        out_dir: dir.to_path_buf(),
        ..cfg
    };
    pipeline::run_pipeline(&cfg)?;
    Ok(FullRun { cfg })
}

// 1

fn parameter_counts() -> Result<Outcome> {
    let counts = [
        build_single(Arch::Fnn, Task::Device, 0)?
            .net
            .count_parameters(),
        build_single(Arch::Cnn, Task::Authenticity, 0)?
            .net
            .count_parameters(),
        build_multitask(Arch::Fnn, 0, [0.5, 0.5])?.count_parameters(),
        build_multitask(Arch::Cnn, 0, [0.5, 0.5])?.count_parameters(),
    ];
    Ok(outcome(
        counts == [6522, 70074, 8884, 140020],
        format!(
            "FNN {} / CNN {} / MTL-FNN {} / MTL-CNN {}",
            counts[0], counts[1], counts[2], counts[3]
        ),
    ))
}

// 2

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn mean_loss(net: &Network, x: &Tensor, y: &[usize]) -> f64 {
    cross_entropy(net.predict(x).unwrap().data(), 2, y).unwrap()
}

fn fd_errors(net: &mut Network, x: &Tensor, y: &[usize]) -> Result<(f64, f64)> {
    let (_, grads) = net.loss_and_gradients(x, y, Mode::Eval)?;
    let mut param_err: f64 = 0.0;
    for (i, &g) in grads.iter().enumerate() {
        let p0 = net.params()[i];
        net.params_mut()[i] = p0 + FD_STEP;
        let up = mean_loss(net, x, y);
        net.params_mut()[i] = p0 - FD_STEP;
        let down = mean_loss(net, x, y);
        net.params_mut()[i] = p0;
        param_err = param_err.max(rel_err(g, (up - down) / (2.0 * FD_STEP)));
    }
    let analytic = net.input_gradient(x, y)?;
    let mut input_err: f64 = 0.0;
    let width = x.row_len();
    for r in 0..x.rows() {
        let row = Tensor::new(vec![1, 2, 32], x.row(r).to_vec())?;
        for c in 0..width {
            let mut probe = row.clone();
            probe.data_mut()[c] += FD_STEP;
            let up = mean_loss(net, &probe, &y[r..=r]);
            probe.data_mut()[c] -= 2.0 * FD_STEP;
            let down = mean_loss(net, &probe, &y[r..=r]);
            input_err = input_err.max(rel_err(analytic.row(r)[c], (up - down) / (2.0 * FD_STEP)));
        }
    }
    Ok((param_err, input_err))
}

fn gradient_check() -> Result<Outcome> {
    let mut details = Vec::new();
    let mut worst: f64 = 0.0;
    for arch in [Arch::Fnn, Arch::Cnn] {
        let mut net = build_single(arch, Task::Device, 11)?.net;
        let mut rng = Rng::new(12);
        for i in 0..net.specs().len() {
            for b in net.bias_mut(i) {
                *b = 0.1 * rng.normal();
            }
        }
        let x = Tensor::new(
            vec![3, 2, 32],
            (0..192).map(|_| 0.7 * rng.normal()).collect(),
        )?;
        let (p, i) = fd_errors(&mut net, &x, &[0, 1, 1])?;
        worst = worst.max(p).max(i);
        details.push(format!("{} params {:.1e} input {:.1e}", arch.name(), p, i));
    }
    Ok(outcome(worst < 1e-4, details.join("; ")))
}

// 3

fn find(rows: &[AccuracyRow], model: &str, task: Task) -> Option<f64> {
    rows.iter()
        .find(|r| {
            r.model == model
                && r.task == task.name()
                && r.subset == lora_advsec::classifiers::Subset::All
        })
        .map(|r| r.overall)
}

fn clean_accuracy(cnn: &FullRun, fnn: &FullRun) -> Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for (name, run) in [("cnn", cnn), ("fnn", fnn)] {
        let rows = run.accuracy()?;
        let get = |m: &str, t: Task| find(&rows, m, t).unwrap_or(f64::NAN);
        let vals = [
            get("single", Task::Device),
            get("single", Task::Authenticity),
            get("multitask", Task::Device),
            get("multitask", Task::Authenticity),
        ];
        pass &= vals.iter().all(|v| *v >= 0.85);
        pass &= vals[2] >= vals[0] - 0.02;
        details.push(format!(
            "{name}: single T1 {:.4} T2 {:.4}, MTL T1 {:.4} T2 {:.4}",
            vals[0], vals[1], vals[2], vals[3]
        ));
    }
    Ok(outcome(pass, details.join("; ")))
}

// 4

fn kde_fidelity(cnn: &FullRun) -> Result<Outcome> {
    let rows = read_fidelity(&cnn.read(FIDELITY_FILE)?)?;
    let jsd_ok = rows.len() == 2 && rows.iter().all(|r| r.jsd_kde < 0.05);

    let mut rng = Rng::new(3);
    let points: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.normal() * 0.5]).collect();
    let h = 1e-3;
    let kde = KdeModel::fit(&points, h)?;
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - 12.0 * h;
    let hi = points
        .iter()
        .map(|p| p[0])
        .fold(f64::NEG_INFINITY, f64::max)
        + 12.0 * h;
    let n = 2 * ((hi - lo) / (h / 50.0)).ceil() as usize;
    let step = (hi - lo) / n as f64;
    let mut integral = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += w * kde.pdf(&[lo + k as f64 * step])?;
    }
    integral *= step / 3.0;
    let integral_ok = (integral - 1.0).abs() < 1e-6;
    let jsds: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.device, r.jsd_kde))
        .collect();
    let rogue: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.jsd_rogue)).collect();
    Ok(outcome(
        jsd_ok && integral_ok,
        format!(
            "JSD legit vs KDE {} (after rogue offsets {}); 1-d pdf integral {:.9}",
            jsds.join(", "),
            rogue.join(", "),
            integral
        ),
    ))
}

// 5

fn asp_at(
    curve: &AspCurve,
    scope: Scope,
    kind: AttackKind,
    psr: f64,
    task: Task,
    baseline: bool,
) -> f64 {
    curve
        .points
        .iter()
        .find(|p| {
            p.scope == scope
                && p.kind == kind
                && p.psr_db == psr
                && p.task == task.name()
                && p.baseline == baseline
        })
        .map(|p| p.asp)
        .unwrap_or(f64::NAN)
}

fn transferability(cnn: &FullRun) -> Result<Outcome> {
    let curve = AspCurve::read_csv(cnn.read(ASP_FILE)?.as_slice())?;
    let u = AttackKind::Untargeted;
    let matched = asp_at(&curve, Scope::Classifier1, u, -3.0, Task::Device, false);
    let hybrid = asp_at(&curve, Scope::Hybrid, u, -3.0, Task::Device, false);
    let mismatched = asp_at(&curve, Scope::Classifier2, u, -3.0, Task::Device, false);
    let gaussian = asp_at(&curve, Scope::Classifier1, u, -3.0, Task::Device, true);
    let pass = matched >= 0.80
        && matched - hybrid >= 0.05
        && hybrid - mismatched >= 0.05
        && matched - gaussian >= 0.2;
    Ok(outcome(
        pass,
        format!("matched {matched:.4}, hybrid {hybrid:.4}, mismatched {mismatched:.4}, gaussian {gaussian:.4}"),
    ))
}

// 6

fn only_signs(p: &Perturbation, eps: f64) -> bool {
    p.delta
        .data()
        .iter()
        .all(|&d| d == 0.0 || d == eps || d == -eps)
}

fn negated(p: &Perturbation) -> Vec<f64> {
    p.delta.data().iter().map(|d| -d).collect()
}

fn head1_as_network(m: &MultiTaskModel) -> Result<Network> {
    let mut specs = shared_layers(m.arch);
    specs.extend(head_layers(m.arch));
    let mut params = m.shared.params().to_vec();
    params.extend_from_slice(m.heads[0].params());
    Network::from_parts(&specs, &INPUT_SHAPE, 0, params)
}

fn structural_identities(cnn: &FullRun) -> Result<Outcome> {
    let models = Models::load(&cnn.cfg, false)?;
    let (c1, c2, mtl) = (
        models.classifier1.as_ref().expect("single models"),
        models.classifier2.as_ref().expect("single models"),
        models.multitask.as_ref().expect("multi-task model"),
    );
    let train = cnn.dataset(TRAIN_FILE)?;
    let test = cnn.dataset(TEST_FILE)?;
    let x = test.inputs();
    let y1 = test.labels(Task::Device);
    let y2 = test.labels(Task::Authenticity);
    let eps = psr_to_epsilon(-3.0, mean_signal_power(&test)?)?;
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let zero = fgsm_untargeted(&c1.net, &x, &y1, 0.0)?;
    check(zero.delta.data().iter().all(|&d| d == 0.0), "eps=0 delta");
    let z_mtl = fgsm_multitask_untargeted(mtl, &x, &y1, &y2, [0.5, 0.5], 0.0)?;
    check(
        z_mtl.delta.data().iter().all(|&d| d == 0.0),
        "eps=0 multitask delta",
    );

    let sweep = SweepConfig {
        psr_grid: vec![f64::NEG_INFINITY],
        mean_power: mean_signal_power(&test)?,
        clamp_bound: train.max_abs(),
        with_baseline: false,
        seed: 0,
        threads: 1,
    };
    let victims = models.victims();
    for scope in Scope::ALL {
        let curve = evaluate_asp(
            &victims,
            &test,
            &AttackSpec::untargeted(scope, -3.0),
            &sweep,
        )?;
        for p in &curve.points {
            let task = if p.task == "task1" {
                Task::Device
            } else {
                Task::Authenticity
            };
            let predictor: &dyn lora_advsec::classifiers::Predictor = match (scope, task) {
                (Scope::Multitask, _) => mtl,
                (_, Task::Device) => c1,
                (_, Task::Authenticity) => c2,
            };
            let predicted = lora_advsec::classifiers::predict_labels(predictor, &x, task)?;
            let truth = test.labels(task);
            let wrong = predicted.iter().zip(&truth).filter(|(a, b)| a != b).count();
            check(
                p.asp == wrong as f64 / truth.len() as f64,
                "eps=0 ASP equals clean error",
            );
        }
    }

    let targets = vec![0usize; test.len()];
    let t = fgsm_targeted(&c1.net, &x, &targets, eps)?;
    let u = fgsm_untargeted(&c1.net, &x, &targets, eps)?;
    check(
        t.delta.data() == negated(&u).as_slice(),
        "targeted = -untargeted at target",
    );
    let tm = fgsm_multitask_targeted(mtl, &x, &targets, &targets, [0.5, 0.5], eps)?;
    let um = fgsm_multitask_untargeted(mtl, &x, &targets, &targets, [0.5, 0.5], eps)?;
    check(
        tm.delta.data() == negated(&um).as_slice(),
        "multitask targeted = -untargeted at targets",
    );

    let h10 = fgsm_hybrid(&c1.net, &c2.net, &x, &y1, &y2, [1.0, 0.0], eps)?;
    let single = fgsm_untargeted(&c1.net, &x, &y1, eps)?;
    check(h10 == single, "hybrid gamma=(1,0)");
    let m10 = fgsm_multitask_untargeted(mtl, &x, &y1, &y2, [1.0, 0.0], eps)?;
    let standalone = fgsm_untargeted(&head1_as_network(mtl)?, &x, &y1, eps)?;
    check(m10 == standalone, "multitask gamma=(1,0)");

    let hybrid = fgsm_hybrid(&c1.net, &c2.net, &x, &y1, &y2, [0.5, 0.5], eps)?;
    for (p, name) in [
        (&single, "untargeted"),
        (&t, "targeted"),
        (&hybrid, "hybrid"),
        (&um, "multitask"),
        (&tm, "multitask targeted"),
    ] {
        check(
            only_signs(p, eps),
            &format!("{name} components in {{-eps, 0, eps}}"),
        );
    }
    let pass = failures.is_empty();
    Ok(outcome(
        pass,
        if pass {
            format!(
                "all identities hold exactly on {} test records (eps {eps:.6})",
                test.len()
            )
        } else {
            format!("violated: {}", failures.join(", "))
        },
    ))
}

// 7

fn multitask_attack(cnn: &FullRun) -> Result<Outcome> {
    let curve = AspCurve::read_csv(cnn.read(ASP_FILE)?.as_slice())?;
    let t1 = asp_at(
        &curve,
        Scope::Multitask,
        AttackKind::Untargeted,
        0.0,
        Task::Device,
        false,
    );
    let t2 = asp_at(
        &curve,
        Scope::Multitask,
        AttackKind::Untargeted,
        0.0,
        Task::Authenticity,
        false,
    );
    Ok(outcome(
        t1 >= 0.70 && t2 >= 0.70,
        format!("PSR 0 dB, gamma (0.5, 0.5): task1 ASP {t1:.4}, task2 ASP {t2:.4}"),
    ))
}

// 8

fn defense(cnn: &FullRun) -> Result<Outcome> {
    let report = DefenseReport::read_csv(cnn.read(DEFENSE_FILE)?.as_slice())?;
    let acc = cnn.accuracy()?;
    let matched = [
        ("classifier1/task1", "single", Task::Device),
        ("classifier2/task2", "single", Task::Authenticity),
        ("multitask/task1", "multitask", Task::Device),
        ("multitask/task2", "multitask", Task::Authenticity),
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for (scope, model, task) in matched {
        let Some(row) = report.rows.iter().find(|r| r.scope == scope) else {
            pass = false;
            details.push(format!("{scope} missing"));
            continue;
        };
        let before = find(&acc, model, task).unwrap_or(f64::NAN);
        pass &= row.asp_after <= 0.15 && row.clean_accuracy >= before - 0.05;
        details.push(format!(
            "{scope} ASP {:.4}->{:.4}, clean {:.4}->{:.4}",
            row.asp_before, row.asp_after, before, row.clean_accuracy
        ));
    }
    Ok(outcome(pass, details.join("; ")))
}

// 9

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Result<Outcome> {
    let cfg = ExperimentConfig {
        dataset: lora_advsec::dataset::DatasetConfig {
            n_total: 1000,
            ..Default::default()
        },
        train: lora_advsec::classifiers::TrainConfig {
            epochs: 4,
            ..Default::default()
        },
        defense: Some(lora_advsec::defense::DefenseConfig {
            train: lora_advsec::classifiers::TrainConfig {
                epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        }),
        ..ExperimentConfig::default()
    };
    let dir = root.join("determinism");
    run_in(&dir, cfg.clone())?;
    let first = snapshot(&dir);
    fs::remove_dir_all(&dir).map_err(|e| lora_advsec::Error::io(&dir, e))?;
    run_in(&dir, cfg)?;
    let second = snapshot(&dir);
    let differing: Vec<String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    Ok(outcome(
        differing.is_empty() && !first.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", first.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

fn record(
    results: &mut Vec<(u8, &'static str, Outcome)>,
    id: u8,
    name: &'static str,
    r: Result<Outcome>,
) {
    let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    println!(
        "{} [{id}] {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push((id, name, o));
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results = Vec::new();

    record(&mut results, 1, "parameter counts", parameter_counts());
    record(&mut results, 2, "gradient correctness", gradient_check());

    let cnn = run_in(&tmp.path().join("cnn"), ExperimentConfig::default());
    let fnn = run_in(
        &tmp.path().join("fnn"),
        ExperimentConfig {
            arch: Arch::Fnn,
            mode: RunMode::Both,
            attacks: Some(Vec::new()),
            defense: None,
            ..ExperimentConfig::default()
        },
    );
    match (&cnn, &fnn) {
        (Ok(cnn), Ok(fnn)) => {
            record(
                &mut results,
                3,
                "clean accuracy regime",
                clean_accuracy(cnn, fnn),
            );
            record(&mut results, 4, "KDE fidelity", kde_fidelity(cnn));
            record(
                &mut results,
                5,
                "attack efficacy and transferability",
                transferability(cnn),
            );
            record(
                &mut results,
                6,
                "structural attack identities",
                structural_identities(cnn),
            );
            record(&mut results, 7, "multi-task attack", multitask_attack(cnn));
            record(
                &mut results,
                8,
                "adversarial-training defense",
                defense(cnn),
            );
        }
        _ => {
            let msg = format!(
                "pipeline failed: {}",
                [cnn.as_ref().err(), fnn.as_ref().err()]
                    .into_iter()
                    .flatten()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            );
            for (id, name) in [
                (3, "clean accuracy regime"),
                (4, "KDE fidelity"),
                (5, "attack efficacy and transferability"),
                (6, "structural attack identities"),
                (7, "multi-task attack"),
                (8, "adversarial-training defense"),
            ] {
                record(&mut results, id, name, Ok(outcome(false, msg.clone())));
            }
        }
    }
    record(&mut results, 9, "determinism", determinism(tmp.path()));

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0}s{}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
