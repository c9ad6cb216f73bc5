//! The seven pipeline subcommands.

use std::path::Path;

use carm_core::attacks::{attack_dataset, misclassification_success, AttackConfig, AttackMethod};
use carm_core::codec::{compress, QualityFactor};
use carm_core::data_io::{
    load_model, load_suite, read_ppm, save_dataset, save_model, save_suite, write_ppm,
    write_sweep_csv, SidecarMeta,
};
use carm_core::defense::{
    accuracy, compress_dataset, ensemble_accuracy, ensemble_predict, evaluate, vaccinate,
    QualityGrid, SweepEntry, SweepRecord, TestQuality,
};
use carm_core::nn::{build_network, train, ArchId, Model, TrainConfig};
use carm_core::parallel::parallel_map;
use carm_core::Dataset;

use crate::args::Args;
use crate::source::load_source;
use crate::CliError;

fn pipeline<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Pipeline(e.to_string())
}

fn log_run(sub: &str, args: &Args, seed: u64) {
    eprintln!("carm {sub}: seed={seed} resolved:{}", args.resolved_log());
}

fn parse_quality(args: &Args, key: &str, default: u32) -> Result<QualityFactor, CliError> {
    let q: u32 = args.parse_or(key, default)?;
    QualityFactor::new(q).map_err(pipeline)
}

fn train_config(args: &Args, default_epochs: usize, seed: u64) -> Result<TrainConfig, CliError> {
    Ok(TrainConfig {
        epochs: args.parse_or("epochs", default_epochs)?,
        batch_size: args.parse_or("batch-size", 64)?,
        dropout_rate: args.parse_or("dropout", 0.5f32)?,
        lr: args.parse_or("lr", 1e-3f32)?,
        seed,
    })
}

pub fn cmd_train(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &[
        "data", "arch", "epochs", "batch-size", "lr", "dropout", "seed", "threads", "out",
    ];
    let args = Args::parse("train", KEYS, argv)?;
    let seed = args.seed()?;
    let threads = args.threads()?;
    let data_spec = args.require("data")?;
    let out = args.require("out")?;
    let arch: ArchId = args.str_or("arch", "toy").parse().map_err(pipeline)?;
    let cfg = train_config(&args, 40, seed)?;
    log_run("train", &args, seed);

    let (dataset, _) = load_source(&data_spec, seed)?;
    let (w, h) = dataset
        .dims()
        .ok_or_else(|| CliError::Pipeline("training set is empty".into()))?;
    let init = build_network(arch, (h, w, 3), dataset.class_count(), seed).map_err(pipeline)?;
    let model = train(&init, &dataset, &cfg).map_err(pipeline)?;
    let train_acc = accuracy(&model, &dataset, threads).map_err(pipeline)?;
    eprintln!("carm train: {} instances, train accuracy {train_acc:.4}", dataset.len());
    save_model(&model, Path::new(&out)).map_err(pipeline)?;
    Ok(())
}

pub fn cmd_compress(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &["in", "quality", "out", "seed", "threads"];
    let args = Args::parse("compress", KEYS, argv)?;
    let seed = args.seed()?;
    let input = args.require("in")?;
    let out = args.require("out")?;
    let quality = parse_quality(&args, "quality", 75)?;
    log_run("compress", &args, seed);

    if input.ends_with(".ppm") {
        let img = read_ppm(Path::new(&input)).map_err(pipeline)?;
        write_ppm(&compress(&img, quality), Path::new(&out)).map_err(pipeline)?;
    } else {
        let (dataset, mut meta) = load_source(&input, seed)?;
        let compressed = compress_dataset(&dataset, quality);
        meta.insert("compressed_at".into(), quality.to_string());
        save_dataset(&compressed, Path::new(&out), &meta).map_err(pipeline)?;
    }
    Ok(())
}

pub fn cmd_attack(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &[
        "model", "data", "method", "eps", "overshoot", "max-iter", "seed", "threads", "out",
    ];
    let args = Args::parse("attack", KEYS, argv)?;
    let seed = args.seed()?;
    let threads = args.threads()?;
    let model_path = args.require("model")?;
    let data_spec = args.require("data")?;
    let out = args.require("out")?;
    let method: AttackMethod = args.str_or("method", "fgsm").parse().map_err(pipeline)?;
    let epsilon: f32 = args.parse_or("eps", 0.02f32)?;
    let overshoot: f32 = args.parse_or("overshoot", 0.02f32)?;
    let max_iter: usize = args.parse_or("max-iter", 50)?;
    log_run("attack", &args, seed);

    let model = load_model(Path::new(&model_path)).map_err(pipeline)?;
    let (dataset, _) = load_source(&data_spec, seed)?;
    let cfg = AttackConfig {
        method,
        epsilon,
        overshoot,
        max_iter,
    };
    let (adversarial, results) = attack_dataset(&model, &dataset, &cfg, threads).map_err(pipeline)?;
    match misclassification_success(&model, &dataset, &adversarial, threads) {
        Ok(rate) => eprintln!(
            "carm attack: {} attacked of {}, misclassification success {rate:.4}",
            results.len(),
            dataset.len()
        ),
        Err(e) => eprintln!("carm attack: {e}"),
    }

    let mut meta = SidecarMeta::new();
    meta.insert("attack".into(), method.as_str().into());
    meta.insert("epsilon".into(), format!("{epsilon:.6}"));
    if method == AttackMethod::DeepFool {
        meta.insert("overshoot".into(), format!("{overshoot:.6}"));
        meta.insert("max_iter".into(), max_iter.to_string());
    }
    meta.insert("seed".into(), seed.to_string());
    save_dataset(&adversarial, Path::new(&out), &meta).map_err(pipeline)?;
    Ok(())
}

/// Attack tag and epsilon carried by a dataset's sidecar, if any.
fn attack_provenance(meta: &SidecarMeta) -> (String, f64) {
    let tag = meta.get("attack").cloned().unwrap_or_else(|| "none".into());
    let epsilon = meta
        .get("epsilon")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    (tag, epsilon)
}

fn parse_qualities(spec: &str) -> Result<Vec<TestQuality>, CliError> {
    spec.split(',')
        .map(|part| TestQuality::parse(part.trim()).map_err(pipeline))
        .collect()
}

pub fn cmd_sweep(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &[
        "suite", "models", "data", "clean", "qualities", "seed", "threads", "out",
    ];
    let args = Args::parse("sweep", KEYS, argv)?;
    let seed = args.seed()?;
    let threads = args.threads()?;
    let data_spec = args.require("data")?;
    let out = args.require("out")?;
    let qualities = parse_qualities(&args.str_or("qualities", "phi,100,90,80,70,60,50,40,30,20"))?;
    log_run("sweep", &args, seed);

    let mut owned: Vec<(String, Option<QualityFactor>, Model)> = Vec::new();
    if let Some(dir) = args.str_opt("suite") {
        let suite = load_suite(Path::new(&dir)).map_err(pipeline)?;
        owned.push(("base".into(), None, suite.base().clone()));
        for (q, m) in suite.models() {
            owned.push((format!("m_{q}"), Some(*q), m.clone()));
        }
    }
    if let Some(list) = args.str_opt("models") {
        for path in list.split(',') {
            let path = path.trim();
            let id = Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.to_string());
            owned.push((id, None, load_model(Path::new(path)).map_err(pipeline)?));
        }
    }
    if owned.is_empty() {
        return Err(CliError::Usage(
            "carm sweep: need --suite and/or --models".into(),
        ));
    }

    let (dataset, meta) = load_source(&data_spec, seed)?;
    let clean = match args.str_opt("clean") {
        Some(spec) => Some(load_source(&spec, seed)?.0),
        None => None,
    };
    let (attack_tag, epsilon) = attack_provenance(&meta);

    let entries: Vec<SweepEntry> = owned
        .iter()
        .map(|(id, q, m)| SweepEntry {
            id: id.clone(),
            train_quality: *q,
            model: m,
        })
        .collect();
    let records = evaluate(
        &entries,
        &dataset,
        clean.as_ref(),
        &qualities,
        &attack_tag,
        epsilon,
        threads,
    )
    .map_err(pipeline)?;
    write_sweep_csv(&records, Path::new(&out)).map_err(pipeline)?;
    eprintln!("carm sweep: wrote {} records to {out}", records.len());
    Ok(())
}

pub fn cmd_vaccinate(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &[
        "model", "data", "grid", "epochs", "batch-size", "lr", "dropout", "seed", "threads",
        "out-dir",
    ];
    let args = Args::parse("vaccinate", KEYS, argv)?;
    let seed = args.seed()?;
    let model_path = args.require("model")?;
    let data_spec = args.require("data")?;
    let out_dir = args.require("out-dir")?;
    let grid = QualityGrid::parse(&args.str_or("grid", "100:20:10")).map_err(pipeline)?;
    // Warm-started retraining converges fast; a quarter of the default
    // training epochs is the default here.
    let cfg = train_config(&args, 10, seed)?;
    log_run("vaccinate", &args, seed);

    let base = load_model(Path::new(&model_path)).map_err(pipeline)?;
    let (dataset, _) = load_source(&data_spec, seed)?;
    let suite = vaccinate(&base, &dataset, &grid, &cfg).map_err(pipeline)?;
    save_suite(&suite, Path::new(&out_dir)).map_err(pipeline)?;
    eprintln!(
        "carm vaccinate: trained {} models over grid {} into {out_dir}",
        suite.len(),
        suite.grid()
    );
    Ok(())
}

/// Ensemble misclassification success: of the instances the ensemble labels
/// correctly on the clean set, the fraction flipped on the evaluated set.
fn ensemble_misclass(
    suite: &carm_core::VaccinatedSuite,
    clean: &Dataset,
    evaluated: &Dataset,
    threads: usize,
) -> Result<Option<f64>, CliError> {
    if clean.len() != evaluated.len() || clean.labels() != evaluated.labels() {
        return Err(CliError::Pipeline(
            "clean and evaluated sets are not aligned".into(),
        ));
    }
    let indices: Vec<usize> = (0..clean.len()).collect();
    let flags = parallel_map(&indices, threads, |&i| {
        let clean_label = ensemble_predict(suite, &clean.images()[i], 1)?.label;
        if clean_label != clean.labels()[i] {
            return Ok::<(bool, bool), carm_core::nn::NnError>((false, false));
        }
        let adv_label = ensemble_predict(suite, &evaluated.images()[i], 1)?.label;
        Ok((true, adv_label != clean.labels()[i]))
    });
    let mut denom = 0u64;
    let mut flipped = 0u64;
    for f in flags {
        let (correct, flip) = f.map_err(pipeline)?;
        if correct {
            denom += 1;
            if flip {
                flipped += 1;
            }
        }
    }
    Ok((denom > 0).then(|| flipped as f64 / denom as f64))
}

pub fn cmd_ensemble(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &["suite", "data", "clean", "seed", "threads", "out"];
    let args = Args::parse("ensemble", KEYS, argv)?;
    let seed = args.seed()?;
    let threads = args.threads()?;
    let suite_dir = args.require("suite")?;
    let data_spec = args.require("data")?;
    let out = args.require("out")?;
    log_run("ensemble", &args, seed);

    let suite = load_suite(Path::new(&suite_dir)).map_err(pipeline)?;
    let (dataset, meta) = load_source(&data_spec, seed)?;
    let (attack_tag, epsilon) = attack_provenance(&meta);
    let clean = match args.str_opt("clean") {
        Some(spec) => Some(load_source(&spec, seed)?.0),
        None => None,
    };

    let mut records = Vec::new();
    if let Some(clean) = &clean {
        let clean_acc = ensemble_accuracy(&suite, clean, threads).map_err(pipeline)?;
        records.push(SweepRecord {
            model_id: "ensemble".into(),
            train_quality: None,
            test_quality: TestQuality::Phi,
            attack: "none".into(),
            epsilon: 0.0,
            accuracy: clean_acc,
            misclass_success: None,
        });
    }
    let acc = ensemble_accuracy(&suite, &dataset, threads).map_err(pipeline)?;
    let misclass = match &clean {
        Some(clean) => ensemble_misclass(&suite, clean, &dataset, threads)?,
        None => None,
    };
    records.push(SweepRecord {
        model_id: "ensemble".into(),
        train_quality: None,
        test_quality: TestQuality::Phi,
        attack: attack_tag,
        epsilon,
        accuracy: acc,
        misclass_success: misclass,
    });
    write_sweep_csv(&records, Path::new(&out)).map_err(pipeline)?;
    eprintln!("carm ensemble: accuracy {acc:.4} over {} votes per instance", suite.len() * suite.grid().len());
    Ok(())
}

pub fn cmd_report(argv: &[String]) -> Result<(), CliError> {
    const KEYS: &[&str] = &[
        "model", "suite", "benign", "fgsm", "deepfool", "seed", "threads", "out",
    ];
    let args = Args::parse("report", KEYS, argv)?;
    let seed = args.seed()?;
    let threads = args.threads()?;
    let model_path = args.require("model")?;
    let suite_dir = args.require("suite")?;
    let out = args.require("out")?;
    log_run("report", &args, seed);

    let base = load_model(Path::new(&model_path)).map_err(pipeline)?;
    let suite = load_suite(Path::new(&suite_dir)).map_err(pipeline)?;

    let mut rows = String::from("scenario,original,ensemble\n");
    for (scenario, key) in [("benign", "benign"), ("fgsm", "fgsm"), ("deepfool", "deepfool")] {
        let Some(spec) = args.str_opt(key) else {
            continue;
        };
        let (dataset, _) = load_source(&spec, seed)?;
        let original = accuracy(&base, &dataset, threads).map_err(pipeline)?;
        let ensemble = ensemble_accuracy(&suite, &dataset, threads).map_err(pipeline)?;
        rows.push_str(&format!("{scenario},{original:.6},{ensemble:.6}\n"));
        eprintln!("carm report: {scenario} original {original:.4} ensemble {ensemble:.4}");
    }
    std::fs::write(Path::new(&out), rows).map_err(pipeline)?;
    Ok(())
}
