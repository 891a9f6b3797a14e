use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use image::DynamicImage;
use sha2::{Digest, Sha256};
use tss_core::datamodel::{
    label_from_concentration, preprocess_for_network, split_manifest, ClassLabel, DatasetManifest, ManifestRow, Split,
    SplitOptions, SplitStrategy, CHARACTERIZED_MAX_MG_PER_L,
};
use tss_core::evalmetrics::PredictionTable;
use tss_core::ingest::{self, FrameLogRow};
use tss_core::network::{checkpoint, features, BatchView, Network, NetworkSpec};
use tss_core::synthgen::{generate_dataset, SyntheticBatchPlan, MANIFEST_FILE};
use tss_core::trainer::{
    evaluate_epoch, fit_preprocess, format_float, train, Dataset, EpochRecord, InMemoryDataset, ManifestDataset, Optimizer,
    TrainOptions,
};

use crate::config::PipelineConfig;
use crate::{
    ClassifyArgs, Cli, Command, EvaluateArgs, FeaturemapsArgs, GenerateArgs, IngestArgs, NetworkArg, OptimizerArg,
    SplitArgs, SplitSel, StrategyArg, TrainArgs,
};

/// Preprocessed datasets up to this size are held in memory.
const CACHE_BUDGET_BYTES: usize = 1 << 30;
const FRAMES_DIR: &str = "frames";
const FRAME_LOG_FILE: &str = "frames.csv";

struct Ctx {
    cfg: PipelineConfig,
    seed: u64,
    out: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        out: cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        cfg,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Ingest(a) => ingest_videos(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Classify(a) => classify(a),
        Command::Featuremaps(a) => featuremaps(&ctx, a),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn counts_line(counts: &BTreeMap<ClassLabel, usize>) -> String {
    counts.iter().map(|(c, n)| format!("{c}={n}")).collect::<Vec<_>>().join(" ")
}

fn generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let per = a.per_class.unwrap_or(ctx.cfg.synthgen.per_class);
    let counts = BTreeMap::from([
        (ClassLabel::High, a.high.unwrap_or(per)),
        (ClassLabel::Medium, a.medium.unwrap_or(per)),
        (ClassLabel::Low, a.low.unwrap_or(per)),
    ]);
    let mut scene = ctx.cfg.synthgen.scene.clone();
    if let Some(s) = a.image_size {
        scene.image_size = s;
    }
    scene.validate().context("--image-size")?;
    let plan = SyntheticBatchPlan { per_class_counts: counts, scene, seed: ctx.seed };
    let manifest = generate_dataset(&plan, &ctx.out)?;
    let path = ctx.out.join(MANIFEST_FILE);
    println!("generated {} images ({})", manifest.len(), counts_line(&manifest.class_counts()));
    println!("manifest {} sha256={}", path.display(), sha256_file(&path)?);
    Ok(())
}

struct SidecarRow {
    video: String,
    sample_id: String,
    concentration: f64,
}

fn read_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("sidecar {}", path.display()))?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("sidecar {} lacks a `{name}` column", path.display()))
    };
    let (v, s, c) = (col("video")?, col("sample_id")?, col("concentration_mg_per_l")?);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("sidecar {}", path.display()))?;
        let concentration = rec[c]
            .trim()
            .parse()
            .map_err(|_| anyhow!("sidecar {} row {}: bad concentration `{}`", path.display(), i + 2, &rec[c]))?;
        rows.push(SidecarRow { video: rec[v].trim().to_string(), sample_id: rec[s].trim().to_string(), concentration });
    }
    Ok(rows)
}

fn find_sidecar<'a>(rows: &'a [SidecarRow], video: &Path) -> Option<&'a SidecarRow> {
    let as_str = video.to_string_lossy();
    let name = video.file_name().map(|n| n.to_string_lossy().into_owned());
    rows.iter()
        .find(|r| r.video == as_str)
        .or_else(|| rows.iter().find(|r| Some(&r.video) == name.as_ref()))
}

fn ingest_videos(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let mut opts = ctx.cfg.ingest;
    if let Some(r) = a.rate {
        opts.rate_fps = r;
    }
    if let Some(t) = a.blur_threshold {
        opts.blur_threshold = t;
    }
    if let Some(c) = a.crop_side {
        opts.crop_side = c;
    }
    opts.validate()?;
    let sidecar = read_sidecar(&a.sidecar)?;

    // Resolve every video's label before decoding anything.
    let mut jobs = Vec::new();
    for video in &a.videos {
        let row = find_sidecar(&sidecar, video)
            .ok_or_else(|| anyhow!("no sidecar row for video {}", video.display()))?;
        let label = label_from_concentration(row.concentration)
            .with_context(|| format!("video {}", video.display()))?;
        if row.concentration > CHARACTERIZED_MAX_MG_PER_L {
            log::warn!(
                "video {}: {} mg/L exceeds the {} mg/L range the classes were characterized on",
                video.display(),
                row.concentration,
                CHARACTERIZED_MAX_MG_PER_L
            );
        }
        jobs.push((video, row, label));
    }

    let mut log_rows: Vec<FrameLogRow> = Vec::new();
    let mut manifest_rows = Vec::new();
    for (video, row, label) in jobs {
        let mut source = ingest::open_video(video).with_context(|| format!("video {}", video.display()))?;
        let rows = ingest::ingest_video(&mut *source, &row.sample_id, &opts, &ctx.out, Path::new(FRAMES_DIR))
            .with_context(|| format!("video {}", video.display()))?;
        let kept = rows.iter().filter(|r| r.kept).count();
        println!(
            "{}: sample {} extracted={} kept={} dropped={}",
            video.display(),
            row.sample_id,
            rows.len(),
            kept,
            rows.len() - kept
        );
        for r in rows.iter().filter(|r| r.kept) {
            let path = PathBuf::from(&r.path);
            manifest_rows.push(ManifestRow {
                id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                path,
                concentration_mg_per_l: row.concentration,
                label,
                split: Split::Unassigned,
                sample_id: Some(row.sample_id.clone()),
            });
        }
        log_rows.extend(rows);
    }
    ingest::write_frame_log(&ctx.out.join(FRAME_LOG_FILE), &log_rows)?;
    let manifest = DatasetManifest::new(manifest_rows, &ctx.out)?;
    let path = ctx.out.join(MANIFEST_FILE);
    manifest.write_csv(&path)?;
    println!("manifest {} with {} images ({})", path.display(), manifest.len(), counts_line(&manifest.class_counts()));
    Ok(())
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::read_csv(path, None).with_context(|| format!("manifest {}", path.display()))
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    let mut manifest = read_manifest(&a.manifest)?;
    if manifest.rows().iter().any(|r| r.split != Split::Unassigned) {
        if !a.force {
            bail!("manifest {} already has split assignments; pass --force to reassign", a.manifest.display());
        }
        manifest = manifest.cleared_splits();
    }
    let s = &ctx.cfg.split;
    let opts = SplitOptions {
        val_fraction: a.val_fraction.unwrap_or(s.val_fraction),
        strategy: match a.strategy {
            Some(StrategyArg::Stratified) => SplitStrategy::StratifiedRandom,
            Some(StrategyArg::Grouped) => SplitStrategy::GroupedBySample,
            None => s.strategy,
        },
        seed: ctx.seed,
        allow_missing_classes: a.allow_missing_classes || s.allow_missing_classes,
    };
    let out = split_manifest(&manifest, &opts)?;
    let target = a.output.clone().unwrap_or_else(|| a.manifest.clone());
    out.write_csv(&target)?;
    println!("train {} ({})", out.subset(Split::Train).len(), counts_line(&out.split_counts(Split::Train)));
    println!("val {} ({})", out.subset(Split::Val).len(), counts_line(&out.split_counts(Split::Val)));
    println!("wrote {}", target.display());
    Ok(())
}

fn dataset_for(
    manifest: &DatasetManifest,
    rows: &[&ManifestRow],
    net: &Network<f32>,
) -> Result<Box<dyn Dataset<f32>>> {
    let spec = net.preprocess();
    let bytes = rows.len() * spec.output_len() * std::mem::size_of::<f32>();
    if bytes <= CACHE_BUDGET_BYTES {
        Ok(Box::new(InMemoryDataset::from_rows(manifest, rows, spec)?))
    } else {
        log::info!("dataset needs {} MiB; decoding images per batch", bytes >> 20);
        Ok(Box::new(ManifestDataset::new(manifest, rows, spec.clone())?))
    }
}

/// Starting weights: a fresh network, or a checkpoint whose head is resized to
/// the three concentration classes.
fn initial_network(ctx: &Ctx, spec: NetworkSpec, init: Option<&Path>) -> Result<Network<f32>> {
    let mut net = match init {
        None => Network::new(spec, ctx.seed)?,
        Some(path) => {
            let mut net: Network<f32> =
                checkpoint::load(path).with_context(|| format!("init checkpoint {}", path.display()))?;
            if net.spec().with_num_classes(3) != spec {
                bail!(
                    "init checkpoint {} holds a `{}` network that does not match `{}`",
                    path.display(),
                    net.spec().name,
                    spec.name
                );
            }
            if net.num_classes() != 3 {
                log::info!("replacing {}-way head with a 3-way head", net.num_classes());
                net.replace_head(3, ctx.seed)?;
            }
            net
        }
    };
    net.set_class_names(ClassLabel::names())?;
    if let Some(p) = &ctx.cfg.network.preprocess {
        net.set_preprocess(p.clone())?;
    }
    Ok(net)
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let mut hp = ctx.cfg.trainer.hyperparameters(ctx.seed);
    if let Some(e) = a.epochs {
        hp.epochs = e;
    }
    if let Some(b) = a.batch_size {
        hp.batch_size = b;
    }
    if let Some(lr) = a.lr {
        hp.learning_rate = lr;
    }
    if let Some(o) = a.optimizer {
        hp.optimizer = match o {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        };
    }
    hp.validate()?;
    let name = match a.network {
        Some(NetworkArg::Alexnet) => "alexnet",
        Some(NetworkArg::Tiny) => "tiny",
        None => ctx.cfg.network.name.as_str(),
    };
    let spec = NetworkSpec::by_name(name, 3)?;

    let manifest = read_manifest(&a.manifest)?;
    if !manifest.is_split() {
        bail!(
            "manifest {} has no train/validation assignment; run `tss split --manifest {}` first",
            a.manifest.display(),
            a.manifest.display()
        );
    }
    let init = a.init_checkpoint.as_deref().or(ctx.cfg.network.init_checkpoint.as_deref());
    let mut net = initial_network(ctx, spec, init)?;
    println!("{}", hp.summary());
    println!("network={} parameters={}", net.spec().name, net.num_params());

    let train_rows = manifest.subset(Split::Train);
    let val_rows = manifest.subset(Split::Val);
    let started = Instant::now();
    // from-scratch weights get constants fitted to the training images;
    // an init checkpoint keeps the ones its backbone was trained with
    if init.is_none() && ctx.cfg.network.preprocess.is_none() {
        let fitted = fit_preprocess(&manifest, &train_rows, net.preprocess())?;
        net.set_preprocess(fitted)?;
    }
    let p = net.preprocess();
    println!(
        "preprocess side={} means=[{:.4}, {:.4}, {:.4}] stds=[{:.4}, {:.4}, {:.4}]",
        p.resize_side,
        p.channel_means[0],
        p.channel_means[1],
        p.channel_means[2],
        p.channel_stds[0],
        p.channel_stds[1],
        p.channel_stds[2]
    );
    let train_set = dataset_for(&manifest, &train_rows, &net)?;
    let val_set = dataset_for(&manifest, &val_rows, &net)?;
    println!("train={} val={}", train_rows.len(), val_rows.len());

    let report = &ctx.cfg.report;
    let best_path = ctx.out.join(&report.best_checkpoint);
    println!("{:>5} {:>10} {:>9} {:>10} {:>9} {:>8}", "epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds");
    let mut show = |r: &EpochRecord| {
        println!(
            "{:>5} {:>10.4} {:>9.4} {:>10.4} {:>9.4} {:>8.1}",
            r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.seconds
        );
    };
    let outcome = train(
        &mut net,
        train_set.as_ref(),
        val_set.as_ref(),
        &hp,
        TrainOptions { best_checkpoint: Some(best_path.clone()), on_epoch: Some(&mut show) },
    )?;

    let final_path = ctx.out.join(&report.final_checkpoint);
    let meta = BTreeMap::from([
        ("epoch".to_string(), hp.epochs.to_string()),
        ("hyperparameters".to_string(), hp.summary()),
    ]);
    checkpoint::save_with_metadata(&net, &meta, &final_path)?;
    let curve_path = ctx.out.join(&report.learning_curve_csv);
    outcome.curve.write_csv(&curve_path)?;
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "best val_acc={:.4} at epoch {} -> {}",
        outcome.best_val_accuracy,
        outcome.best_epoch,
        best_path.display()
    );
    println!("final -> {}", final_path.display());
    println!("curve -> {}", curve_path.display());
    println!("training time {} min {:.1} s", (elapsed / 60.0).floor(), elapsed % 60.0);
    Ok(())
}

fn predictions_from_checkpoint(ckpt: &Path, manifest_path: &Path, sel: Option<SplitSel>) -> Result<PredictionTable> {
    let net: Network<f32> = checkpoint::load(ckpt).with_context(|| format!("checkpoint {}", ckpt.display()))?;
    let manifest = read_manifest(manifest_path)?;
    let rows: Vec<&ManifestRow> = match sel {
        Some(SplitSel::All) => manifest.rows().iter().collect(),
        Some(SplitSel::Train) => manifest.subset(Split::Train),
        Some(SplitSel::Val) => manifest.subset(Split::Val),
        None if manifest.is_split() => manifest.subset(Split::Val),
        None => manifest.rows().iter().collect(),
    };
    if rows.is_empty() {
        bail!("no manifest rows selected for evaluation");
    }
    let class_of = |label: ClassLabel| {
        net.class_names()
            .iter()
            .position(|n| n == label.name())
            .ok_or_else(|| anyhow!("checkpoint classes {:?} do not include `{label}`", net.class_names()))
    };
    let y_true = rows.iter().map(|r| class_of(r.label)).collect::<Result<Vec<_>>>()?;
    let data = ManifestDataset::new(&manifest, &rows, net.preprocess().clone())?;
    let ev = evaluate_epoch(&net, &data, 50)?;
    Ok(PredictionTable {
        class_names: net.class_names().to_vec(),
        ids: rows.iter().map(|r| r.id.clone()).collect(),
        y_true,
        probabilities: ev.probabilities,
    })
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    let report_cfg = &ctx.cfg.report;
    let table = match (&a.predictions, &a.checkpoint, &a.manifest) {
        (Some(p), _, _) => PredictionTable::read_csv(p)?,
        (None, Some(c), Some(m)) => {
            let t = predictions_from_checkpoint(c, m, a.split)?;
            t.write_csv(&ctx.out.join(&report_cfg.predictions_csv))?;
            t
        }
        _ => bail!("evaluate needs --predictions, or --checkpoint with --manifest"),
    };
    let report = table.report()?;
    report.write_json(&ctx.out.join(&report_cfg.json))?;
    tss_core::fsutil::atomic_write(&ctx.out.join(&report_cfg.confusion_csv), &report.confusion_csv())?;
    tss_core::fsutil::atomic_write(&ctx.out.join(&report_cfg.roc_csv), &report.roc_csv())?;
    print!("{}", report.summary());
    println!("report -> {}", ctx.out.join(&report_cfg.json).display());
    Ok(())
}

/// Decodes an image as 8-bit RGB, converting other 8-bit layouts.
fn load_rgb(path: &Path) -> Result<DynamicImage> {
    let img = tss_core::fsutil::read_image(path)?;
    Ok(match img {
        DynamicImage::ImageRgb8(_) => img,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => {
            log::warn!("{}: converting {:?} to RGB", path.display(), img.color());
            DynamicImage::ImageRgb8(img.to_rgb8())
        }
        other => bail!("{}: unsupported pixel format {:?}; expected 8-bit RGB", path.display(), other.color()),
    })
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let net: Network<f32> =
        checkpoint::load(&a.checkpoint).with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let img = load_rgb(&a.image)?;
    let x: Vec<f32> = preprocess_for_network(&img, net.preprocess())?;
    let side = net.spec().input_side;
    let probs = net.predict_proba(&BatchView::new(&x, [1, net.spec().input_channels, side, side])?)?;
    let best = tss_core::network::argmax(&probs);
    println!("{}", net.class_names()[best]);
    for (name, p) in net.class_names().iter().zip(&probs) {
        println!("{name} {}", format_float(f64::from(*p)));
    }
    Ok(())
}

fn featuremaps(ctx: &Ctx, a: &FeaturemapsArgs) -> Result<()> {
    let net: Network<f32> =
        checkpoint::load(&a.checkpoint).with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let img = load_rgb(&a.image)?;
    let x: Vec<f32> = preprocess_for_network(&img, net.preprocess())?;
    let maps = net.extract_feature_maps(&x)?;
    for path in features::write_feature_maps(&maps, &ctx.out)? {
        println!("{}", path.display());
    }
    Ok(())
}
