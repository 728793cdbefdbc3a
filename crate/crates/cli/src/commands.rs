use crate::{BaselineArg, CodecArg, ContainerArg, Failure, NormArg};
use anyhow::{anyhow, Context};
use bitcover::bitstream::{
    extract_auto, extract_frames_annexb, extract_frames_mp4, sniff_codec, Codec, ExtractError, Mp4SizeMode,
};
use bitcover::datagen::standard_benchmark;
use bitcover::dtw::{knn_classify_all, DtwConfig};
use bitcover::eval::EvalReport;
use bitcover::fsts::{self, write_fsts, FSTS_MAGIC};
use bitcover::manifest::{Manifest, ManifestRow};
use bitcover::nn::{self, load_model, save_model, Model, ModelConfig, NnError, Samples, TrainConfig};
use bitcover::series::{split, LabeledDataset, Normalization, PreprocessSpec};
use bitcover::stats::{class_kld_matrix, median};
use bitcover::FrameSizeSeries;
use serde::Deserialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

type CmdResult = Result<(), Failure>;

fn emit(v: Value) {
    println!("{v}");
}

fn normalization(n: NormArg) -> Normalization {
    match n {
        NormArg::Zscore => Normalization::ZScore,
        NormArg::None => Normalization::None,
    }
}

fn read_manifest(path: &Path, class_names: Option<&[String]>) -> Result<LabeledDataset, Failure> {
    let m = Manifest::read(path)?;
    Ok(m.load(class_names)?)
}

fn preprocess(ds: &LabeledDataset, n_frames: usize, norm: NormArg) -> Result<(Vec<Vec<f64>>, Vec<usize>), Failure> {
    let spec = PreprocessSpec::prefix(n_frames, normalization(norm));
    spec.apply_all(ds).map_err(|e| {
        let shortest = ds.shortest().unwrap_or(0);
        anyhow!("{e} (n-frames {n_frames}, shortest clip {shortest} frames)").into()
    })
}

fn load_classifier(path: &Path) -> Result<Model<f32>, Failure> {
    load_model(path).with_context(|| format!("loading model {}", path.display())).map_err(Into::into)
}

/// Errors out unless every label in `manifest` is one of the model's classes.
fn check_classes(manifest: &Path, model: &Model<f32>) -> Result<LabeledDataset, Failure> {
    let m = Manifest::read(manifest)?;
    let unknown: Vec<String> = m.labels().into_iter().filter(|l| !model.class_names.contains(l)).collect();
    if !unknown.is_empty() {
        return Err(anyhow!(
            "class mismatch: manifest labels {:?} not in model classes {:?}",
            unknown,
            model.class_names
        )
        .into());
    }
    Ok(m.load(Some(&model.class_names))?)
}

pub fn extract(input: &Path, codec: CodecArg, container: ContainerArg, with_overhead: bool, output: &Path) -> CmdResult {
    let data = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let mode = if with_overhead {
        Mp4SizeMode::WithOverhead
    } else {
        Mp4SizeMode::Samples
    };
    let annexb = |data: &[u8]| -> Result<FrameSizeSeries, ExtractError> {
        let c = match codec {
            CodecArg::Auto => sniff_codec(data)?,
            CodecArg::Avc => Codec::Avc,
            CodecArg::Hevc => Codec::Hevc,
        };
        extract_frames_annexb(data, c)
    };
    let series = match container {
        ContainerArg::Mp4 => extract_frames_mp4(&data, mode).map_err(|e| anyhow!("mp4: {e}"))?,
        ContainerArg::Annexb => annexb(&data).map_err(|e| anyhow!("annex-b: {e}"))?,
        ContainerArg::Auto if codec == CodecArg::Auto && !with_overhead => {
            extract_auto(&data).map_err(|e| anyhow!("{e}"))?
        }
        ContainerArg::Auto => match extract_frames_mp4(&data, mode) {
            Ok(s) => s,
            Err(ExtractError::NotMp4) => annexb(&data)
                .map_err(|e| anyhow!("not mp4 ({}); not annex-b ({e})", ExtractError::NotMp4))?,
            Err(e) => return Err(anyhow!("mp4: {e}").into()),
        },
    };
    write_fsts(&series, output).with_context(|| format!("writing {}", output.display()))?;
    eprintln!("{} frames, {} bits", series.len(), series.total_bits());
    emit(json!({
        "record": "extract",
        "input": input.display().to_string(),
        "output": output.display().to_string(),
        "frames": series.len(),
        "total_bits": series.total_bits(),
        "codec": series.codec().map(|c| c.name()),
        "fps": series.fps(),
    }));
    Ok(())
}

pub fn gen(classes: usize, clips: usize, frames: usize, seed: u64, output: &Path) -> CmdResult {
    let ds = standard_benchmark(classes, clips, frames, seed)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut rows = Vec::with_capacity(ds.len());
    for (s, y) in &ds.items {
        let name = format!("{}.fsts", s.source_id());
        let path = output.join(&name);
        write_fsts(s, &path).with_context(|| format!("writing {}", path.display()))?;
        rows.push(ManifestRow {
            path: name,
            label: ds.class_names[*y].clone(),
        });
    }
    let manifest = Manifest {
        rows,
        base_dir: output.to_path_buf(),
    };
    let mpath = output.join("manifest.csv");
    manifest.write(&mpath)?;
    eprintln!("{} clips of {frames} frames in {} classes -> {}", ds.len(), classes, mpath.display());
    emit(json!({
        "record": "gen",
        "manifest": mpath.display().to_string(),
        "classes": classes,
        "clips_per_class": clips,
        "frames": frames,
        "seed": seed,
    }));
    Ok(())
}

/// Optional overrides read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    filters: Option<[usize; 3]>,
    kernels: Option<[usize; 3]>,
    bn_momentum: Option<f64>,
    bn_eps: Option<f64>,
    init_lr: Option<f64>,
    lr_factor: Option<f64>,
    lr_patience: Option<usize>,
    early_stop_patience: Option<usize>,
    min_delta: Option<f64>,
    max_epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    model_seed: Option<u64>,
    split_seed: Option<u64>,
}

impl TrainFile {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn model_config(&self, n_classes: usize) -> ModelConfig {
        let mut c = ModelConfig::standard(n_classes);
        if let Some(f) = self.filters {
            c.filters = f;
        }
        if let Some(k) = self.kernels {
            c.kernels = k;
        }
        c.bn_momentum = self.bn_momentum.unwrap_or(c.bn_momentum);
        c.bn_eps = self.bn_eps.unwrap_or(c.bn_eps);
        c
    }

    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            init_lr: self.init_lr.unwrap_or(d.init_lr),
            lr_factor: self.lr_factor.unwrap_or(d.lr_factor),
            lr_patience: self.lr_patience.unwrap_or(d.lr_patience),
            early_stop_patience: self.early_stop_patience.unwrap_or(d.early_stop_patience),
            min_delta: self.min_delta.unwrap_or(d.min_delta),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    output.with_file_name(name)
}

fn write_split(ds: &LabeledDataset, path: &Path) -> Result<(), Failure> {
    let rows = ds
        .items
        .iter()
        .map(|(s, y)| ManifestRow {
            path: s.source_id().to_string(),
            label: ds.class_names[*y].clone(),
        })
        .collect();
    Manifest {
        rows,
        base_dir: PathBuf::new(),
    }
    .write(path)?;
    Ok(())
}

fn epoch_row(e: &nn::EpochRecord) -> Value {
    json!({
        "record": "epoch",
        "epoch": e.epoch,
        "train_loss": e.train_loss,
        "val_loss": e.val_loss,
        "val_accuracy": e.val_accuracy,
        "lr": e.lr,
    })
}

pub fn train(
    manifest: &Path,
    val_manifest: Option<&Path>,
    n_frames: usize,
    norm: NormArg,
    config: Option<&Path>,
    output: &Path,
) -> CmdResult {
    let file = config.map(TrainFile::read).transpose()?.unwrap_or_default();
    let all = read_manifest(manifest, None)?;
    let (train_ds, val_ds) = match val_manifest {
        Some(v) => {
            let val = read_manifest(v, Some(&all.class_names))?;
            (all, val)
        }
        None => {
            let (tr, va, te) = split(&all, (0.7, 0.15, 0.15), file.split_seed.unwrap_or(0))?;
            for (part, ds) in [("train", &tr), ("val", &va), ("test", &te)] {
                write_split(ds, &sibling(output, &format!(".{part}.csv")))?;
            }
            (tr, va)
        }
    };
    let (xtr, ytr) = preprocess(&train_ds, n_frames, norm)?;
    let (xva, yva) = preprocess(&val_ds, n_frames, norm)?;

    let mcfg = file.model_config(train_ds.num_classes());
    let tcfg = file.train_config();
    let model = Model::<f32>::new(mcfg, train_ds.class_names.clone(), file.model_seed.unwrap_or(0))?;
    eprintln!(
        "training {} parameters on {} clips, validating on {}",
        model.num_params(),
        xtr.len(),
        xva.len()
    );
    let history_path = sibling(output, ".history.jsonl");
    let write_history = |h: &nn::TrainHistory| -> anyhow::Result<()> {
        let mut text = String::new();
        for e in &h.epochs {
            let row = epoch_row(e);
            emit(row.clone());
            text += &format!("{row}\n");
        }
        fs::write(&history_path, text).with_context(|| format!("writing {}", history_path.display()))
    };
    let outcome = match nn::train(model, Samples::new(&xtr, &ytr), Samples::new(&xva, &yva), &tcfg) {
        Ok(o) => o,
        Err(NnError::DivergedLoss { epoch, history }) => {
            write_history(&history)?;
            return Err(Failure::Numeric(anyhow!("loss diverged at epoch {epoch}")));
        }
        Err(e) => return Err(e.into()),
    };
    write_history(&outcome.history)?;
    save_model(&outcome.model, output).with_context(|| format!("writing {}", output.display()))?;
    let best = outcome.history.best().expect("at least one epoch");
    eprintln!(
        "best epoch {}: val loss {:.5}, val accuracy {:.4}; model -> {}",
        best.epoch,
        best.val_loss,
        best.val_accuracy,
        output.display()
    );
    emit(json!({
        "record": "best",
        "epoch": best.epoch,
        "val_loss": best.val_loss,
        "val_accuracy": best.val_accuracy,
        "epochs_run": outcome.history.epochs.len(),
        "lr_reductions": outcome.history.lr_reductions,
        "stopped_at": outcome.history.stopped_at,
        "model": output.display().to_string(),
    }));
    Ok(())
}

fn read_any_series(path: &Path) -> Result<FrameSizeSeries, Failure> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if data.starts_with(&FSTS_MAGIC) {
        return Ok(fsts::decode(&data).with_context(|| path.display().to_string())?);
    }
    extract_auto(&data).map_err(|e| anyhow!("{}: {e}", path.display()).into())
}

pub fn classify(model_path: &Path, n_frames: Option<usize>, norm: NormArg, inputs: &[PathBuf]) -> CmdResult {
    let model = load_classifier(model_path)?;
    for input in inputs {
        let series = read_any_series(input)?;
        let spec = PreprocessSpec::prefix(n_frames.unwrap_or(series.len()), normalization(norm));
        let x = spec.apply(&series).map_err(|e| anyhow!("{}: {e}", input.display()))?;
        let (class, probs) = model.predict(&x)?;
        eprintln!("{}: {class}", input.display());
        let probs: serde_json::Map<String, Value> =
            model.class_names.iter().cloned().zip(probs.into_iter().map(Value::from)).collect();
        emit(json!({
            "record": "prediction",
            "input": input.display().to_string(),
            "class": class,
            "frames": x.len(),
            "probabilities": probs,
        }));
    }
    Ok(())
}

fn report_rows(method: &str, r: &EvalReport) {
    for (t, row) in r.confusion.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            emit(json!({
                "record": "confusion",
                "method": method,
                "true": r.class_names[t],
                "predicted": r.class_names[p],
                "count": count,
            }));
        }
    }
    for (k, name) in r.class_names.iter().enumerate() {
        emit(json!({
            "record": "class",
            "method": method,
            "class": name,
            "precision": r.metrics.precision[k],
            "recall": r.metrics.recall[k],
        }));
    }
    let never: Vec<&String> = r.metrics.never_predicted.iter().map(|&k| &r.class_names[k]).collect();
    emit(json!({
        "record": "summary",
        "method": method,
        "accuracy": r.metrics.accuracy,
        "macro_precision": r.metrics.macro_precision,
        "macro_recall": r.metrics.macro_recall,
        "never_predicted": never,
        "wall_time_seconds": r.wall_time_seconds,
        "frames_processed": r.frames_processed,
        "fps": r.fps,
        "real_time_factor": r.real_time_factor,
    }));
}

pub fn eval(
    manifest: &Path,
    model_path: &Path,
    n_frames: usize,
    norm: NormArg,
    baseline: BaselineArg,
    train_manifest: Option<&Path>,
    fps: f64,
) -> CmdResult {
    let model = load_classifier(model_path)?;
    let ds = check_classes(manifest, &model)?;
    let (xs, ys) = preprocess(&ds, n_frames, norm)?;
    let t = Instant::now();
    let pred = model.classify(&xs, 64)?;
    let resnet_s = t.elapsed().as_secs_f64();
    let report = EvalReport::new(model.class_names.clone(), &ys, &pred, n_frames, fps, resnet_s)?;
    eprintln!("resnet\n{}", report.table());
    report_rows("resnet", &report);

    if baseline == BaselineArg::Dtw {
        let tm = train_manifest.ok_or_else(|| anyhow!("--baseline dtw needs --train-manifest"))?;
        let refs = check_classes(tm, &model)?;
        let (rx, ry) = preprocess(&refs, n_frames, norm)?;
        let t = Instant::now();
        let dpred = knn_classify_all(&rx, &ry, &xs, 1, DtwConfig::default())?;
        let dtw_s = t.elapsed().as_secs_f64();
        let dreport = EvalReport::new(model.class_names.clone(), &ys, &dpred, n_frames, fps, dtw_s)?;
        eprintln!("dtw 1-nn\n{}", dreport.table());
        report_rows("dtw", &dreport);
        let ratio = dtw_s / resnet_s.max(f64::MIN_POSITIVE);
        eprintln!("dtw / resnet wall time: {ratio:.1}x");
        emit(json!({
            "record": "comparison",
            "resnet_accuracy": report.metrics.accuracy,
            "dtw_accuracy": dreport.metrics.accuracy,
            "resnet_seconds": resnet_s,
            "dtw_seconds": dtw_s,
            "wall_time_ratio": ratio,
        }));
    }
    Ok(())
}

pub fn kld(manifest: &Path, bins: usize, seed: u64) -> CmdResult {
    let ds = read_manifest(manifest, None)?;
    let m = class_kld_matrix(&ds, bins, seed)?;
    let w = m.class_names.iter().map(|s| s.len()).max().unwrap_or(0).max(8);
    let mut table = format!("{:>w$}", "p \\ q");
    for name in &m.class_names {
        table += &format!(" {name:>w$}");
    }
    table.push('\n');
    for (i, row) in m.values.iter().enumerate() {
        table += &format!("{:>w$}", m.class_names[i]);
        for v in row {
            table += &format!(" {v:>w$.4}");
        }
        table.push('\n');
    }
    let (inter, intra) = (m.median_inter(), m.median_intra());
    eprintln!("{table}\nmedian inter {inter:.5}, median intra {intra:.5}");
    for (i, row) in m.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            emit(json!({
                "record": "kld",
                "p": m.class_names[i],
                "q": m.class_names[j],
                "nats": v,
            }));
        }
    }
    emit(json!({
        "record": "kld_summary",
        "bins": bins,
        "median_inter": if inter.is_nan() { Value::Null } else { json!(inter) },
        "median_intra": intra,
        "ratio": if inter.is_nan() || intra == 0.0 { Value::Null } else { json!(inter / intra) },
    }));
    Ok(())
}

pub fn bench(
    manifest: &Path,
    model_path: &Path,
    n_frames: usize,
    norm: NormArg,
    repeat: usize,
    fps: f64,
    batch_size: usize,
) -> CmdResult {
    if repeat == 0 {
        return Err(anyhow!("--repeat must be at least 1").into());
    }
    let model = load_classifier(model_path)?;
    let ds = check_classes(manifest, &model)?;
    let (xs, _) = preprocess(&ds, n_frames, norm)?;
    let mut times = Vec::with_capacity(repeat);
    for r in 0..repeat {
        let t = Instant::now();
        model.classify(&xs, batch_size)?;
        let s = t.elapsed().as_secs_f64();
        emit(json!({"record": "timing", "repeat": r, "seconds": s}));
        times.push(s);
    }
    let med = median(&times);
    let items = xs.len();
    let rtf = bitcover::eval::realtime_factor(items, n_frames, fps, med);
    eprintln!(
        "{items} items x {n_frames} frames: median {med:.6} s over {repeat} runs, real-time factor {rtf:.1} at {fps} fps"
    );
    emit(json!({
        "record": "bench",
        "items": items,
        "frames_per_item": n_frames,
        "fps": fps,
        "repeat": repeat,
        "median_seconds": med,
        "items_per_second": items as f64 / med,
        "frames_per_second": (items * n_frames) as f64 / med,
        "real_time_factor": rtf,
    }));
    Ok(())
}
