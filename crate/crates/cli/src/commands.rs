use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use inkrnn::classifier::{ClassifierModel, Example, NetSpec};
use inkrnn::data_io::{
    builtin_templates, checkpoint_paths, load_checkpoint, quality_report, read_jsonl, render_svg, save_checkpoint, synthesize_corpus,
    write_jsonl, Corpus, SynthConfig,
};
use inkrnn::generator::{GenConfig, GenExample, GenModel};
use inkrnn::ink::{preprocess as preprocess_ink, to_gen_tokens, to_line_features, InkSequence, PenState, PreprocessConfig};
use inkrnn::optim::{EpochRecord, OptConfig};
use inkrnn::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::{EvalArgs, OptArgs, PreprocessArgs, PresetName, QualityArgs, SampleArgs, SynthArgs, TrainClfArgs, TrainGenArgs};

const CLASSIFIER_KIND: &str = "classifier";
const GENERATOR_KIND: &str = "generator";

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn preset_config(p: PresetName) -> (&'static str, PreprocessConfig) {
    match p {
        PresetName::Recognition => ("recognition", PreprocessConfig::RECOGNITION),
        PresetName::Generation => ("generation", PreprocessConfig::GENERATION),
    }
}

fn mean_points(samples: &[InkSequence]) -> f64 {
    samples.iter().map(|s| s.len()).sum::<usize>() as f64 / samples.len().max(1) as f64
}

pub fn preprocess(seed: u64, a: PreprocessArgs) -> Result<Value> {
    let (name, cfg) = preset_config(a.preset);
    let corpus = read_jsonl(&a.input)?;
    let processed = corpus
        .samples
        .iter()
        .map(|s| preprocess_ink(s, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let before = mean_points(&corpus.samples);
    let after = mean_points(&processed);
    write_jsonl(&Corpus::new(processed, corpus.classes, corpus.split)?, &a.out)?;
    Ok(json!({
        "seed": seed,
        "preset": name,
        "dist_factor": cfg.dist_factor,
        "cos_threshold": cfg.cos_threshold,
        "samples": corpus.len(),
        "mean_points_before": before,
        "mean_points_after": after,
        "mean_length_reduction": if before > 0.0 { 1.0 - after / before } else { 0.0 },
        "out": a.out,
    }))
}

pub fn synth(seed: u64, a: SynthArgs) -> Result<Value> {
    let templates = builtin_templates();
    if a.classes == 0 || a.classes > templates.len() {
        return Err(Error::InvalidConfig(format!(
            "{} classes requested; {} templates are built in",
            a.classes,
            templates.len()
        )));
    }
    let cfg = SynthConfig {
        noise: a.noise,
        scale_range: (a.min_scale, a.max_scale),
        max_rotation_deg: a.max_rotation,
        resample_step: (a.resample_step > 0.0).then_some(a.resample_step),
        step_jitter: a.step_jitter,
    };
    let used = &templates[..a.classes];
    let corpus = synthesize_corpus(used, a.per_class, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    write_jsonl(&corpus, &a.out)?;
    Ok(json!({
        "seed": seed,
        "classes": a.classes,
        "per_class": a.per_class,
        "samples": corpus.len(),
        "templates": used.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
        "config": cfg,
        "out": a.out,
    }))
}

fn opt_config(mut cfg: OptConfig, a: &OptArgs) -> Result<OptConfig> {
    if a.jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    cfg.max_epochs = a.epochs.unwrap_or(cfg.max_epochs);
    cfg.batch_size = a.batch.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.beta1 = a.beta1.unwrap_or(cfg.beta1);
    cfg.beta2 = a.beta2.unwrap_or(cfg.beta2);
    cfg.eps = a.eps.unwrap_or(cfg.eps);
    cfg.patience = a.patience.unwrap_or(cfg.patience);
    cfg.decay = a.decay.unwrap_or(cfg.decay);
    cfg.min_lr = a.min_lr.unwrap_or(cfg.min_lr);
    cfg.validate()?;
    Ok(cfg)
}

fn read_corpus(input: Option<&PathBuf>, dry_run: bool) -> Result<Option<Corpus>> {
    match input {
        Some(p) => read_jsonl(p).map(Some),
        None if dry_run => Ok(None),
        None => Err(Error::InvalidConfig("--in is required unless --dry-run is given".into())),
    }
}

fn labelled(s: &InkSequence) -> Result<usize> {
    s.label
        .ok_or_else(|| Error::InvalidConfig("training and evaluation samples need a label".into()))
}

fn progress(quiet: bool) -> impl FnMut(&EpochRecord) {
    let start = Instant::now();
    move |r: &EpochRecord| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.6}  metric {:.6}  lr {:.2e}  {:.1}s",
                r.epoch,
                r.loss,
                r.metric,
                r.lr,
                start.elapsed().as_secs_f64()
            );
        }
    }
}

fn write_checkpoint(base: Option<&PathBuf>, kind: &str, config: Value, params: &inkrnn::numcore::ParamSet) -> Result<Value> {
    let Some(base) = base else {
        return Ok(Value::Null);
    };
    save_checkpoint(base, kind, config, params)?;
    let (manifest, blob) = checkpoint_paths(base);
    Ok(json!({ "manifest": manifest, "blob": blob }))
}

fn recognition_examples(corpus: &Corpus, preprocessed: bool) -> Result<Vec<Example>> {
    corpus
        .samples
        .iter()
        .map(|s| {
            let ink = if preprocessed {
                s.clone()
            } else {
                preprocess_ink(s, &PreprocessConfig::RECOGNITION)?
            };
            Ok(Example {
                feats: to_line_features(&ink)?,
                label: labelled(s)?,
            })
        })
        .collect()
}

pub fn train_clf(seed: u64, a: TrainClfArgs) -> Result<Value> {
    let corpus = read_corpus(a.input.as_ref(), a.dry_run)?;
    let classes = a.classes.or(corpus.as_ref().map(|c| c.classes)).unwrap_or(10);
    let mut spec = NetSpec::preset(&a.arch, classes).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown classifier preset {}; expected one of {:?}", a.arch, NetSpec::PRESETS))
    })?;
    // Data or an explicit flag fix the output size even for full-scale presets.
    if a.classes.is_some() || corpus.is_some() {
        spec.classes = classes;
    }
    if let Some(h) = &a.hidden {
        spec.hidden = h.clone();
    }
    spec.full_dim = a.full_dim.unwrap_or(spec.full_dim);
    if let Some(c) = &a.cell {
        spec.cell = serde_json::from_value(json!(c))?;
    }
    spec.dropout_pool = a.dropout_pool.unwrap_or(spec.dropout_pool);
    spec.dropout_input = a.dropout_input.unwrap_or(spec.dropout_input);
    spec.validate()?;
    let defaults = if a.arch == "desk-clf" {
        OptConfig {
            max_epochs: 40,
            ..OptConfig::default()
        }
    } else {
        OptConfig::default()
    };
    let opt = opt_config(defaults, &a.opt)?;
    let mut report = json!({
        "seed": seed,
        "preset": a.arch,
        "arch": spec.to_string(),
        "spec": spec,
        "optimizer": opt,
        "jobs": a.opt.jobs,
    });
    let Some(corpus) = corpus.filter(|_| !a.dry_run) else {
        return Ok(report);
    };
    let examples = recognition_examples(&corpus, a.preprocessed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierModel::new(&spec, &mut rng)?;
    let start = Instant::now();
    let history = model.train(&examples, &opt, &mut rng, progress(a.quiet))?;
    let seconds = start.elapsed().as_secs_f64();
    let checkpoint = write_checkpoint(a.checkpoint.as_ref(), CLASSIFIER_KIND, serde_json::to_value(&spec)?, &model.params)?;
    report["samples"] = json!(examples.len());
    report["history"] = json!(history);
    report["train_accuracy"] = json!(history.last().map(|r| r.metric));
    report["seconds"] = json!(seconds);
    report["checkpoint"] = checkpoint;
    Ok(report)
}

pub fn train_gen(seed: u64, a: TrainGenArgs) -> Result<Value> {
    let corpus = read_corpus(a.input.as_ref(), a.dry_run)?;
    let classes = a.classes.or(corpus.as_ref().map(|c| c.classes)).unwrap_or(10);
    let mut cfg = GenConfig::preset(&a.arch, classes).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown generator preset {}; expected one of {:?}", a.arch, GenConfig::PRESETS))
    })?;
    if a.classes.is_some() || corpus.is_some() {
        cfg.classes = classes;
    }
    cfg.embed_dim = a.embed_dim.unwrap_or(cfg.embed_dim);
    cfg.transform_dim = a.transform_dim.unwrap_or(cfg.transform_dim);
    cfg.hidden_dim = a.hidden_dim.unwrap_or(cfg.hidden_dim);
    cfg.output_dim = a.output_dim.unwrap_or(cfg.output_dim);
    cfg.mixtures = a.mixtures.unwrap_or(cfg.mixtures);
    cfg.dropout = a.dropout.unwrap_or(cfg.dropout);
    if let Some(w) = &a.weights {
        cfg.loss_weights = [w[0], w[1], w[2]];
    }
    cfg.max_len = a.max_len.unwrap_or(cfg.max_len);
    cfg.validate()?;
    let defaults = if a.arch == "desk-gen" {
        OptConfig {
            lr: 0.003,
            max_epochs: 80,
            ..OptConfig::default()
        }
    } else {
        OptConfig::default()
    };
    let opt = opt_config(defaults, &a.opt)?;
    let mut report = json!({
        "seed": seed,
        "preset": a.arch,
        "config": cfg,
        "optimizer": opt,
        "jobs": a.opt.jobs,
    });
    let Some(corpus) = corpus.filter(|_| !a.dry_run) else {
        return Ok(report);
    };
    let examples = corpus
        .samples
        .iter()
        .map(|s| {
            let ink = if a.preprocessed {
                s.clone()
            } else {
                preprocess_ink(s, &PreprocessConfig::GENERATION)?
            };
            Ok(GenExample {
                tokens: to_gen_tokens(&ink)?,
                class_id: labelled(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GenModel::new(&cfg, &mut rng)?;
    let start = Instant::now();
    let history = model.train(&examples, &opt, &mut rng, progress(a.quiet))?;
    let seconds = start.elapsed().as_secs_f64();
    let checkpoint = write_checkpoint(a.checkpoint.as_ref(), GENERATOR_KIND, serde_json::to_value(&cfg)?, &model.params)?;
    report["samples"] = json!(examples.len());
    report["history"] = json!(history);
    report["seconds"] = json!(seconds);
    report["checkpoint"] = checkpoint;
    Ok(report)
}

fn load_classifier(path: &Path) -> Result<ClassifierModel> {
    let ck = load_checkpoint(path)?;
    if ck.kind != CLASSIFIER_KIND {
        return Err(Error::Config(format!("{} holds a {}, not a classifier", path.display(), ck.kind)));
    }
    ClassifierModel::from_params(&serde_json::from_value(ck.config)?, ck.params)
}

fn load_generator(path: &Path) -> Result<GenModel> {
    let ck = load_checkpoint(path)?;
    if ck.kind != GENERATOR_KIND {
        return Err(Error::Config(format!("{} holds a {}, not a generator", path.display(), ck.kind)));
    }
    GenModel::from_params(&serde_json::from_value(ck.config)?, ck.params)
}

pub fn eval(seed: u64, a: EvalArgs) -> Result<Value> {
    let model = load_classifier(&a.checkpoint)?;
    let corpus = read_jsonl(&a.input)?;
    let examples = recognition_examples(&corpus, a.preprocessed)?;
    let rep = model.evaluate(&examples, a.ensemble, a.p, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut out = json!({
        "seed": seed,
        "arch": model.spec().to_string(),
        "samples": examples.len(),
        "ensemble": a.ensemble,
        "p": a.p,
        "accuracy": rep.accuracy,
        "per_class_accuracy": rep.per_class_accuracy,
    });
    if a.confusion {
        out["confusion"] = json!(rep.confusion);
    }
    Ok(out)
}

pub fn sample(seed: u64, a: SampleArgs) -> Result<Value> {
    let model = load_generator(&a.checkpoint)?;
    let max_len = a.max_len.unwrap_or(model.config().max_len);
    if let Some(dir) = &a.svg_out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    let mut entries = Vec::with_capacity(a.n);
    for i in 0..a.n {
        let s = model.sample_character(a.class, &mut rng, max_len)?;
        let end_of_char = s.tokens.last().map(|t| t.pen) == Some(PenState::End);
        let points: Vec<(f64, f64, u32)> = s.ink.points().iter().map(|p| (p.x, p.y, p.stroke)).collect();
        lines.push_str(&serde_json::to_string(&json!({
            "label": a.class,
            "points": points,
            "truncated": s.truncated,
            "end_of_char": end_of_char,
        }))?);
        lines.push('\n');
        let svg = match &a.svg_out {
            Some(dir) => {
                let path = dir.join(format!("class{}_{i:03}.svg", a.class));
                fs::write(&path, render_svg(&s.ink)?).map_err(|e| io_error(&path, e))?;
                Some(path)
            }
            None => None,
        };
        entries.push(json!({
            "index": i,
            "points": s.ink.len(),
            "strokes": s.ink.stroke_count(),
            "tokens": s.tokens.len(),
            "truncated": s.truncated,
            "end_of_char": end_of_char,
            "svg": svg,
        }));
    }
    if let Some(out) = &a.out {
        let mut f = fs::File::create(out).map_err(|e| io_error(out, e))?;
        f.write_all(lines.as_bytes()).map_err(|e| io_error(out, e))?;
    }
    let k = 5.min(model.config().classes - 1);
    Ok(json!({
        "seed": seed,
        "class": a.class,
        "n": a.n,
        "max_len": max_len,
        "truncated": entries.iter().filter(|e| e["truncated"] == true).count(),
        "nearest_classes": model.nearest_neighbors(a.class, k)?,
        "samples": entries,
        "out": a.out,
    }))
}

pub fn quality(seed: u64, a: QualityArgs) -> Result<Value> {
    let gen = load_generator(&a.gen)?;
    let clf = load_classifier(&a.clf)?;
    let classes = a.classes.unwrap_or_else(|| (0..clf.spec().classes).collect());
    let rep = quality_report(&gen, &clf, &classes, a.n_per_class, a.worst, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut out = serde_json::to_value(&rep)?;
    out["seed"] = json!(seed);
    out["n_per_class"] = json!(a.n_per_class);
    Ok(out)
}
