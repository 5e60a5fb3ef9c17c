use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use altdetect::aggregate::{
    classify_by_threshold, grid_search_threshold, svm_predict, tamper_ratio, LabeledScore, SvmModel, ThresholdModel,
};
use altdetect::data::{
    convert_to_png, decode_image, generate_corpus, CorpusConfig, ImageFormat, Manifest, Split, SynthAlterConfig,
};
use altdetect::eval::{
    assign_splits, calibrate, evaluate_images, load_images, patches_for_training, run_experiment, score_images,
    Aggregation, Aggregators, Calibration, ExperimentKind, ExperimentReport, LoadedImage, SplitMode,
};
use altdetect::net::{build_model, load_checkpoint, predict_patches, save_checkpoint, train_with_observer};
use altdetect::{extract_patches, DetectorModel, Error, Label, Result};

use crate::settings::Settings;
use crate::{Cli, Command, DeciderArgs, FormatArg, OutputArgs, SplitArg};

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(&cli.config)?;
    match cli.command {
        Command::Synth { out, count, height, width, radius, region_fraction, amplitude, no_probes, format } => {
            let cfg = CorpusConfig {
                count,
                height,
                width,
                seed: settings.cfg.seed,
                alter: SynthAlterConfig { seed: settings.cfg.seed, radius, region_fraction, amplitude },
                probes: !no_probes,
                format: match format {
                    FormatArg::Png => ImageFormat::Png,
                    FormatArg::Jpeg => ImageFormat::Jpeg,
                },
            };
            synth(&out, &cfg)
        }
        Command::Train { manifest, out, trace, split_out } => train(&settings, &manifest, &out, trace, split_out),
        Command::Calibrate { checkpoint, manifest, out } => calibrate_cmd(&mut settings, &checkpoint, &manifest, &out),
        Command::Eval { checkpoint, manifest, deciders, output } => {
            eval(&mut settings, &checkpoint, &manifest, &deciders, &output)
        }
        Command::Predict { checkpoint, image, deciders, json } => {
            predict(&mut settings, &checkpoint, &image, &deciders, json)
        }
        Command::Gridsearch { checkpoint, manifest, split, out } => {
            gridsearch(&mut settings, &checkpoint, &manifest, split, out)
        }
        Command::Ablate { manifest, output } => {
            settings.cfg.kind = ExperimentKind::Ablation;
            experiment(&settings, &read_manifest(&manifest)?, &output)
        }
        Command::Compress { manifest, png_copy, output } => {
            settings.cfg.kind = ExperimentKind::Compression;
            let mut m = read_manifest(&manifest)?;
            if let Some(dir) = png_copy {
                m = convert_to_png(&m, &dir)?;
                m.write(&dir.join("manifest.tsv"))?;
                println!("png copy {}", dir.join("manifest.tsv").display());
            }
            experiment(&settings, &m, &output)
        }
    }
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::read(path).map_err(|e| match e {
        Error::Manifest { line, reason } => {
            Error::Manifest { line, reason: format!("{reason} (in {})", path.display()) }
        }
        Error::Io(io) => Error::Config(format!("cannot read manifest {}: {io}", path.display())),
        other => other,
    })
}

/// Keeps the manifest's own split column when every record has one.
fn splits_for(manifest: &Manifest, settings: &Settings) -> Result<Manifest> {
    let mut cfg = settings.cfg.clone();
    if manifest.records.iter().all(|r| r.split.is_some()) {
        cfg.split = SplitMode::Manifest;
    }
    assign_splits(manifest, &cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn synth(out: &Path, cfg: &CorpusConfig) -> Result<()> {
    println!("config {}", cfg.fingerprint()?);
    let m = generate_corpus(out, cfg)?;
    println!("wrote {} records to {}", m.records.len(), out.join("manifest.tsv").display());
    Ok(())
}

fn train(
    settings: &Settings,
    manifest: &Path,
    out: &Path,
    trace: Option<PathBuf>,
    split_out: Option<PathBuf>,
) -> Result<()> {
    let cfg = &settings.cfg;
    println!("config {}", cfg.fingerprint());
    let m = splits_for(&read_manifest(manifest)?, settings)?;
    let split_path = split_out.unwrap_or_else(|| out.with_extension("split.tsv"));
    m.with_absolute_paths()?.write(&split_path)?;
    println!("split manifest {}", split_path.display());

    let train_imgs = load_images(&m, Some(Split::Train))?;
    let val_imgs = load_images(&m, Some(Split::Val))?;
    let patches = patches_for_training(&train_imgs, cfg.arch.patch_size, cfg.labeling)?;
    let val = patches_for_training(&val_imgs, cfg.arch.patch_size, cfg.labeling)?;
    log::info!(
        "training on {} patches from {} images, {} validation patches",
        patches.len(),
        train_imgs.len(),
        val.len()
    );

    let model = build_model::<f32>(&cfg.arch, cfg.seed)?;
    let mut trace_out = trace.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    let mut io_err = None;
    let train_cfg = altdetect::TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let outcome = train_with_observer(model, &patches, (!val.is_empty()).then_some(&val[..]), &train_cfg, |rec| {
        let line = serde_json::to_string(rec).expect("epoch records serialize");
        println!("{line}");
        if let Some(w) = trace_out.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    if let Some(mut w) = trace_out {
        w.flush()?;
    }
    save_checkpoint(&outcome.model, out)?;
    println!("checkpoint {} (epoch {} kept)", out.display(), outcome.best_epoch);
    Ok(())
}

/// Loads a checkpoint and adopts its architecture and training settings,
/// rejecting explicitly requested architectures that differ.
fn open_model(settings: &mut Settings, path: &Path) -> Result<DetectorModel<f32>> {
    let model = load_checkpoint(path)?;
    if settings.sets_arch() && settings.cfg.arch != model.arch {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds {:?}, but the config asks for {:?}",
            path.display(),
            model.arch,
            settings.cfg.arch
        )));
    }
    settings.cfg.arch = model.arch.clone();
    settings.cfg.train = model.train_config.clone();
    Ok(model)
}

fn calibration_images(m: &Manifest) -> Result<Vec<LoadedImage>> {
    let val = load_images(m, Some(Split::Val))?;
    if Label::ALL.iter().all(|&c| val.iter().any(|i| i.label == c)) {
        return Ok(val);
    }
    log::warn!("validation split lacks a class; calibrating on the training split");
    load_images(m, Some(Split::Train))
}

fn calibrate_cmd(settings: &mut Settings, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let model = open_model(settings, checkpoint)?;
    let cfg = &settings.cfg;
    println!("config {}", cfg.fingerprint());
    let m = splits_for(&read_manifest(manifest)?, settings)?;
    let scored = score_images(&model, &calibration_images(&m)?, cfg.labeling)?;
    let cal = calibrate(&scored.images, &cfg.svm, &cfg.threshold_grid)?;
    println!("calibration images {}", cal.images);
    for (tau, acc) in &cal.threshold.table {
        println!("tau {tau:>5}  accuracy {:.4}", acc);
    }
    println!("threshold {}", cal.threshold.model.tau);
    println!(
        "svm support vectors {}{}",
        cal.svm.support.len(),
        if cal.svm.non_separable { " (non-separable)" } else { "" }
    );
    write_text(out, &serde_json::to_string_pretty(&cal)?)?;
    println!("calibration {}", out.display());
    Ok(())
}

fn deciders(args: &DeciderArgs) -> Result<Aggregators> {
    let mut aggs = match &args.calibration {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str::<Calibration>(&text)?.aggregators()
        }
        None => Aggregators::default(),
    };
    if let Some(tau) = args.threshold {
        aggs.threshold = Some(ThresholdModel { tau });
    }
    if let Some(p) = &args.svm_model {
        let text = std::fs::read_to_string(p)?;
        aggs.svm = Some(serde_json::from_str::<SvmModel>(&text)?);
    }
    Ok(aggs)
}

fn eval(
    settings: &mut Settings,
    checkpoint: &Path,
    manifest: &Path,
    args: &DeciderArgs,
    output: &OutputArgs,
) -> Result<()> {
    let model = open_model(settings, checkpoint)?;
    let cfg = &settings.cfg;
    let fp = cfg.fingerprint();
    println!("config {fp}");
    let m = splits_for(&read_manifest(manifest)?, settings)?;
    let test = load_images(&m, Some(Split::Test))?;
    let report = evaluate_images(&model, &test, cfg.labeling, &deciders(args)?, cfg.aggregation, &fp)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = &output.report {
        write_text(p, &table)?;
    }
    if let Some(p) = &output.decisions {
        write_text(p, &report.decisions_jsonl()?)?;
    }
    Ok(())
}

fn predict(settings: &mut Settings, checkpoint: &Path, image: &Path, args: &DeciderArgs, json: bool) -> Result<()> {
    let model = open_model(settings, checkpoint)?;
    let fp = settings.cfg.fingerprint();
    let mut aggs = deciders(args)?;
    if aggs.threshold.is_none() && aggs.svm.is_none() {
        log::warn!("no calibrated deciders given; using the default threshold");
        aggs.threshold = Some(ThresholdModel::default());
    }
    let pixels = decode_image(image)?;
    let id = image.display().to_string();
    let grid = extract_patches(&id, &pixels, model.arch.patch_size)?;
    let labels: Vec<Label> = predict_patches(&model, &grid.patches)?.iter().map(|p| p.label).collect();
    let score = tamper_ratio(&id, &labels)?;
    let by_threshold = aggs.threshold.map(|t| (classify_by_threshold(&score, &t), t.tau));
    let by_svm = aggs.svm.as_ref().map(|m| svm_predict(m, &score));
    let label = match (settings.cfg.aggregation, by_threshold, by_svm) {
        (Aggregation::Threshold, Some((l, _)), _) => l,
        (_, _, Some((l, _))) => l,
        (_, Some((l, _)), None) => l,
        (_, None, None) => unreachable!("a default threshold is always present"),
    };
    if json {
        let value = serde_json::json!({
            "image_id": id,
            "total": score.total_patches,
            "tampered": score.tampered_patches,
            "output": score.output,
            "label_threshold": by_threshold.map(|(l, _)| l),
            "label_svm": by_svm.map(|(l, _)| l),
            "margin": by_svm.map(|(_, m)| m),
            "label": label,
            "config": fp,
        });
        println!("{value}");
        return Ok(());
    }
    println!("config {fp}");
    println!("image {id}");
    println!("patches {} tampered {} output {}", score.total_patches, score.tampered_patches, score.output);
    if let Some((l, tau)) = by_threshold {
        println!("threshold {l} (tau {tau})");
    }
    if let Some((l, m)) = by_svm {
        println!("svm {l} (margin {m:.6})");
    }
    println!("label {label}");
    Ok(())
}

fn gridsearch(
    settings: &mut Settings,
    checkpoint: &Path,
    manifest: &Path,
    split: SplitArg,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = open_model(settings, checkpoint)?;
    let cfg = &settings.cfg;
    println!("config {}", cfg.fingerprint());
    let m = splits_for(&read_manifest(manifest)?, settings)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let scored = score_images(&model, &load_images(&m, Some(split))?, cfg.labeling)?;
    let labeled: Vec<LabeledScore> =
        scored.images.iter().map(|s| LabeledScore { score: s.score.clone(), label: s.label }).collect();
    let search = grid_search_threshold(&labeled, &cfg.threshold_grid)?;
    println!("{split} images {}", labeled.len());
    for (tau, acc) in &search.table {
        println!("tau {tau:>5}  accuracy {acc:.4}");
    }
    println!("best tau {}", search.model.tau);
    if let Some(p) = out {
        write_text(&p, &serde_json::to_string_pretty(&search)?)?;
    }
    Ok(())
}

fn experiment(settings: &Settings, manifest: &Manifest, output: &OutputArgs) -> Result<()> {
    let mut cfg = settings.cfg.clone();
    if manifest.records.iter().all(|r| r.split.is_some()) {
        cfg.split = SplitMode::Manifest;
    }
    println!("config {}", cfg.fingerprint());
    let report: ExperimentReport = run_experiment(manifest, &cfg)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(p) = &output.report {
        write_text(p, &table)?;
    }
    if let Some(p) = &output.decisions {
        write_text(p, &report.decisions_jsonl()?)?;
    }
    Ok(())
}
