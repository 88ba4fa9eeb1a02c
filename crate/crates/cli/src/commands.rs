//! Subcommand implementations.

use std::path::{Path, PathBuf};

use affect_core::data::feature::decode_feature_bytes;
use affect_core::data::labels::decode_label_text;
use affect_core::data::synth::SynthSpec;
use affect_core::data::{
    load_dataset, merge_streams, parse_manifest, read_feature_file, synthesize_dataset,
    write_label_file, LoadedDataset,
};
use affect_core::model::ModelConfig;
use affect_core::train::checkpoint::decode_checkpoint;
use affect_core::train::{evaluate, fit, predict_sequence, Task, TrainConfig};
use affect_core::data::AugmentPolicy;
use affect_core::{Error, Result, EXPR_CLASSES};

use crate::config::{parse_config_file, resolve_seed, FileConfig};
use crate::{EvalArgs, InspectArgs, PredictArgs, SynthArgs, TrainArgs};

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("input file {} does not exist", path.display()))
        } else {
            Error::Io(e)
        }
    })
}

fn echo_effective(prefix: &str, pairs: &[(String, String)]) {
    for (k, v) in pairs {
        eprintln!("# {prefix}{k} = {v}");
    }
}

// ── synth ───────────────────────────────────────────────────────────

const SYNTH_KEYS: &[&str] = &[
    "synth.classes",
    "synth.videos_per_class",
    "synth.frames_per_video",
    "synth.dim_a",
    "synth.dim_b",
    "synth.feature_noise",
    "synth.separation",
    "synth.va_noise",
    "synth.au_flip_prob",
    "synth.seed",
];

fn synth_spec_from(file: &FileConfig, seed_flag: Option<u64>) -> Result<SynthSpec> {
    file.check_known(SYNTH_KEYS)?;
    let mut spec = SynthSpec::default();
    if let Some(v) = file.get_usize("synth.classes")? {
        spec.classes = v;
    }
    if let Some(v) = file.get_usize("synth.videos_per_class")? {
        spec.videos_per_class = v;
    }
    if let Some(v) = file.get_usize("synth.frames_per_video")? {
        spec.frames_per_video = v;
    }
    let dim_a = file.get_usize("synth.dim_a")?;
    let dim_b = file.get_usize("synth.dim_b")?;
    match (dim_a, dim_b) {
        (Some(a), Some(b)) => spec.stream_dims = vec![a, b],
        (Some(a), None) => spec.stream_dims = vec![a],
        (None, Some(_)) => {
            return Err(Error::Config("synth.dim_b given without synth.dim_a".into()));
        }
        (None, None) => {}
    }
    if let Some(v) = file.get_f64("synth.feature_noise")? {
        spec.feature_noise = v;
    }
    if let Some(v) = file.get_f64("synth.separation")? {
        spec.separation = v;
    }
    if let Some(v) = file.get_f64("synth.va_noise")? {
        spec.va_noise = v;
    }
    if let Some(v) = file.get_f64("synth.au_flip_prob")? {
        spec.au_flip_prob = v;
    }
    spec.seed = resolve_seed(seed_flag, file.get_u64("synth.seed")?)?;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let file = match &args.spec {
        Some(path) => parse_config_file(path)?,
        None => FileConfig::default(),
    };
    let spec = synth_spec_from(&file, args.seed)?;
    echo_effective(
        "synth.",
        &[
            ("classes".into(), spec.classes.to_string()),
            ("videos_per_class".into(), spec.videos_per_class.to_string()),
            ("frames_per_video".into(), spec.frames_per_video.to_string()),
            ("stream_dims".into(), format!("{:?}", spec.stream_dims)),
            ("feature_noise".into(), spec.feature_noise.to_string()),
            ("separation".into(), spec.separation.to_string()),
            ("va_noise".into(), spec.va_noise.to_string()),
            ("au_flip_prob".into(), spec.au_flip_prob.to_string()),
            ("seed".into(), spec.seed.to_string()),
        ],
    );
    std::fs::create_dir_all(&args.out).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create output directory {}: {e}", args.out.display()),
        ))
    })?;
    let manifest_path = synthesize_dataset(&spec, &args.out).map_err(|err| match err {
        Error::Io(e) => Error::Io(std::io::Error::new(
            e.kind(),
            format!("while writing under {}: {e}", args.out.display()),
        )),
        other => other,
    })?;

    let ds = load_dataset(&parse_manifest(&manifest_path)?)?;
    println!("manifest={}", manifest_path.display());
    println!("videos={}", ds.videos.len());
    println!("frames={}", ds.total_frames());
    println!("dim={}", ds.d_v);
    for (c, n) in ds.expr_counts().iter().enumerate() {
        println!("expr_class_{c}={n}");
    }
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────

const TRAIN_KEYS: &[&str] = &[
    "model.d_m",
    "model.num_heads",
    "model.d_ffn",
    "model.num_layers",
    "model.conv_kernel",
    "model.max_t",
    "model.dropout",
    "train.lr",
    "train.batch_size",
    "train.eval_batch_size",
    "train.epochs",
    "train.win_len",
    "train.stride",
    "train.seed",
    "train.balanced",
    "augment.noise_prob",
    "augment.noise_sigma",
    "augment.crop_prob",
    "augment.frame_dropout_prob",
];

fn model_config_from(file: &FileConfig, d_v: usize, seed: u64) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::new(d_v);
    if let Some(v) = file.get_usize("model.d_m")? {
        cfg.d_m = v;
    }
    if let Some(v) = file.get_usize("model.num_heads")? {
        cfg.num_heads = v;
    }
    if cfg.num_heads == 0 || !cfg.d_m.is_multiple_of(cfg.num_heads) {
        return Err(Error::Config(format!(
            "d_m {} must be divisible by num_heads {}",
            cfg.d_m, cfg.num_heads
        )));
    }
    cfg.d_k = cfg.d_m / cfg.num_heads;
    if let Some(v) = file.get_usize("model.d_ffn")? {
        cfg.d_ffn = v;
    }
    if let Some(v) = file.get_usize("model.num_layers")? {
        cfg.num_layers = v;
    }
    if let Some(v) = file.get_usize("model.conv_kernel")? {
        cfg.conv_kernel = v;
    }
    if let Some(v) = file.get_usize("model.max_t")? {
        cfg.max_t = v;
    }
    if let Some(v) = file.get_f64("model.dropout")? {
        cfg.dropout_rate = v;
    }
    cfg.seed = seed;
    cfg.validate()?;
    Ok(cfg)
}

fn train_config_from(
    file: &FileConfig,
    task: Task,
    epochs_flag: Option<u32>,
    max_t: usize,
    seed: u64,
) -> Result<TrainConfig> {
    let mut tc = TrainConfig {
        task,
        seed,
        ..TrainConfig::default()
    };
    // Evaluation windows the full model context; defaulting the training
    // window to the same keeps train and eval aligned.
    tc.win_len = file.get_usize("train.win_len")?.unwrap_or(max_t);
    tc.stride = file
        .get_usize("train.stride")?
        .unwrap_or_else(|| (tc.win_len / 2).max(1));
    if let Some(v) = file.get_f64("train.lr")? {
        tc.lr = v;
    }
    if let Some(v) = file.get_usize("train.batch_size")? {
        tc.batch_size = v;
    }
    if let Some(v) = file.get_usize("train.eval_batch_size")? {
        tc.eval_batch_size = v;
    }
    if let Some(v) = file.get_u32("train.epochs")? {
        tc.epochs = v;
    }
    if let Some(v) = epochs_flag {
        tc.epochs = v;
    }
    if let Some(v) = file.get_bool("train.balanced")? {
        tc.balanced = v;
    }
    let mut augment = AugmentPolicy::default();
    if let Some(v) = file.get_f64("augment.noise_prob")? {
        augment.noise_prob = v;
    }
    if let Some(v) = file.get_f64("augment.noise_sigma")? {
        augment.noise_sigma = v;
    }
    if let Some(v) = file.get_f64("augment.crop_prob")? {
        augment.crop_prob = v;
    }
    if let Some(v) = file.get_f64("augment.frame_dropout_prob")? {
        augment.frame_dropout_prob = v;
    }
    augment.validate()?;
    tc.augment = augment;
    Ok(tc)
}

fn load_split(path: &Path) -> Result<LoadedDataset> {
    load_dataset(&parse_manifest(path)?)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => parse_config_file(path)?,
        None => FileConfig::default(),
    };
    file.check_known(TRAIN_KEYS)?;
    let task = Task::parse(&args.task)?;
    let seed = resolve_seed(None, file.get_u64("train.seed")?)?;

    let train_ds = load_split(&args.train_manifest)?;
    let val_ds = load_split(&args.val_manifest)?;

    let model_cfg = model_config_from(&file, train_ds.d_v, seed)?;
    let train_cfg = train_config_from(&file, task, args.epochs, model_cfg.max_t, seed)?;

    echo_effective(
        "model.",
        &[
            ("d_v".into(), model_cfg.d_v.to_string()),
            ("d_m".into(), model_cfg.d_m.to_string()),
            ("num_heads".into(), model_cfg.num_heads.to_string()),
            ("d_k".into(), model_cfg.d_k.to_string()),
            ("d_ffn".into(), model_cfg.d_ffn.to_string()),
            ("num_layers".into(), model_cfg.num_layers.to_string()),
            ("conv_kernel".into(), model_cfg.conv_kernel.to_string()),
            ("max_t".into(), model_cfg.max_t.to_string()),
            ("dropout".into(), model_cfg.dropout_rate.to_string()),
        ],
    );
    echo_effective(
        "train.",
        &[
            ("task".into(), task.name().to_string()),
            ("epochs".into(), train_cfg.epochs.to_string()),
            ("batch_size".into(), train_cfg.batch_size.to_string()),
            ("eval_batch_size".into(), train_cfg.eval_batch_size.to_string()),
            ("win_len".into(), train_cfg.win_len.to_string()),
            ("stride".into(), train_cfg.stride.to_string()),
            ("lr".into(), train_cfg.lr.to_string()),
            ("seed".into(), train_cfg.seed.to_string()),
            ("balanced".into(), train_cfg.balanced.to_string()),
        ],
    );
    echo_effective(
        "augment.",
        &[
            ("noise_prob".into(), train_cfg.augment.noise_prob.to_string()),
            ("noise_sigma".into(), train_cfg.augment.noise_sigma.to_string()),
            ("crop_prob".into(), train_cfg.augment.crop_prob.to_string()),
            (
                "frame_dropout_prob".into(),
                train_cfg.augment.frame_dropout_prob.to_string(),
            ),
        ],
    );

    let outcome = fit(&model_cfg, &train_cfg, &train_ds, &val_ds, Some(&args.out))?;
    println!("best_epoch={}", outcome.best.best_epoch);
    println!(
        "best_{}={:.6}",
        outcome.best.best_metric, outcome.best.best_score
    );
    println!("checkpoint={}", args.out.join("best.afck").display());
    println!("log={}", args.out.join("train.log").display());
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ck = decode_checkpoint(&read_input(&args.checkpoint)?)?;
    let ds = load_split(&args.manifest)?;
    if ds.d_v != ck.config.d_v {
        return Err(Error::Config(format!(
            "checkpoint expects d_v {} but manifest data has dim {}",
            ck.config.d_v, ds.d_v
        )));
    }
    let report = evaluate(
        &ck.config,
        &ck.params,
        &ds,
        ck.config.max_t,
        ck.config.max_t,
        16,
    )?;
    print!("{}", report.to_flat());
    Ok(())
}

// ── predict ─────────────────────────────────────────────────────────

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let ck = decode_checkpoint(&read_input(&args.checkpoint)?)?;
    let paths: Vec<PathBuf> = args.features.split(',').map(PathBuf::from).collect();
    if paths.is_empty() || paths.len() > 2 {
        return Err(Error::Config(
            "expected one or two comma-separated feature paths".into(),
        ));
    }
    for p in &paths {
        if !p.exists() {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                p.display()
            )));
        }
    }
    let mut features = read_feature_file(&paths[0])?;
    for p in &paths[1..] {
        let next = read_feature_file(p)?;
        features = merge_streams(&features, &next)?;
    }
    if features.dim != ck.config.d_v {
        return Err(Error::Config(format!(
            "checkpoint expects d_v {} but features have dim {}",
            ck.config.d_v, features.dim
        )));
    }
    let predictions = predict_sequence(&ck.config, &ck.params, &features)?;
    write_label_file(&args.out, &predictions)?;
    println!("predictions={}", args.out.display());
    println!("frames={}", predictions.len());
    Ok(())
}

// ── inspect ─────────────────────────────────────────────────────────

fn stats(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (min, max, sum / n as f64)
    }
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let bytes = read_input(&args.file)?;
    if bytes.starts_with(b"AFSQ") {
        let seq = decode_feature_bytes(&bytes)?;
        println!("format=afsq");
        println!("version=1");
        println!("video_id={}", seq.video_id);
        println!("frames={}", seq.len());
        println!("dim={}", seq.dim);
        let (min, max, mean) = stats(seq.features.iter().copied());
        println!("feature_min={min:.6}");
        println!("feature_max={max:.6}");
        println!("feature_mean={mean:.6}");
        return Ok(());
    }
    if bytes.starts_with(b"AFCK") {
        let ck = decode_checkpoint(&bytes)?;
        println!("format=afck");
        println!("version=1");
        println!("epoch={}", ck.epoch);
        println!("global_step={}", ck.global_step);
        println!("best_metric={}", ck.best_metric);
        println!("best_score={:.6}", ck.best_score);
        println!("best_epoch={}", ck.best_epoch);
        println!("adam_t={}", ck.adam.t);
        let named = ck.params.named();
        println!("parameters={}", named.len());
        let mut all = Vec::new();
        for (name, p) in &named {
            let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            println!("param.{name}={}", dims.join("x"));
            all.extend_from_slice(&p.data);
        }
        let (min, max, mean) = stats(all.into_iter());
        println!("param_min={min:.6}");
        println!("param_max={max:.6}");
        println!("param_mean={mean:.6}");
        return Ok(());
    }
    if bytes.starts_with(b"#affectlabels") {
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::format(e.utf8_error().valid_up_to() as u64, "label file is not UTF-8"))?;
        let set = decode_label_text(&text)?;
        println!("format=labels");
        println!("version=1");
        println!("frames={}", set.len());
        println!(
            "va_frames={}",
            set.va.mask.iter().filter(|&&m| m).count()
        );
        println!(
            "expr_frames={}",
            set.expr.mask.iter().filter(|&&m| m).count()
        );
        println!(
            "au_frames={}",
            set.au.mask.iter().filter(|&&m| m).count()
        );
        let mut hist = [0usize; EXPR_CLASSES];
        for i in 0..set.len() {
            if set.expr.mask[i] {
                hist[set.expr.classes[i] as usize] += 1;
            }
        }
        for (c, n) in hist.iter().enumerate() {
            println!("expr_class_{c}={n}");
        }
        return Ok(());
    }
    Err(Error::Config(format!(
        "unknown format in {}: not an AFSQ, AFCK, or label file",
        args.file.display()
    )))
}
