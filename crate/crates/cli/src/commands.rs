use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use speechbreath::audio::load_wav;
use speechbreath::dataset::{
    load_saliency_inputs, load_split, to_canonical_rate, utterance_features,
    DatasetOptions, EmbeddingPattern, FeatureSpec, MODEL_FRAME_RATE_HZ,
};
use speechbreath::eval::{detect_breath_events, evaluate_estimates, rr_from_events, segments_csv, segment_id, trace_csv};
use speechbreath::fsio::write_atomic;
use speechbreath::manifest::{load_manifest, Manifest, Split};
use speechbreath::model::{forward, load_checkpoint, predict, save_checkpoint, BranchConfig};
use speechbreath::saliency::{saliency_scores, top_fraction};
use speechbreath::synth::{synth_corpus, MANIFEST_NAME};
use speechbreath::training::train_with;
use speechbreath::{FeatureMatrix, ModelConfig, ModelParams, RespirationTrace, Segment};

use crate::args::{EvalArgs, PredictArgs, SaliencyArgs, SynthArgs, TrainArgs};
use crate::config::{set, RunConfig};
use crate::CliError;

pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const HISTORY_NAME: &str = "history.jsonl";

/// Input recipe stored beside a checkpoint so later commands rebuild the same features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecipe {
    pub features: String,
    pub selection: Option<Vec<usize>>,
    pub segment_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub fraction: f64,
    pub dims: usize,
    pub indices: Vec<usize>,
}

pub fn recipe_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("features.json")
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(speechbreath::Error::from)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(speechbreath::Error::from)?);
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} does not exist", path.display())))
    }
}

fn open_manifest(path: &Path) -> Result<Manifest, CliError> {
    let path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    require_file(&path, "manifest")?;
    Ok(load_manifest(&path)?)
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(|e: speechbreath::Error| CliError::Usage(e.to_string()))
}

fn parse_features(s: &str) -> Result<FeatureSpec, CliError> {
    s.parse().map_err(|e: speechbreath::Error| CliError::Usage(e.to_string()))
}

fn load_model(checkpoint: &Path) -> Result<(ModelParams, FeatureRecipe), CliError> {
    require_file(checkpoint, "checkpoint")?;
    let params = load_checkpoint(checkpoint)?;
    let recipe_file = recipe_path(checkpoint);
    require_file(&recipe_file, "feature recipe")?;
    let recipe: FeatureRecipe = read_json(&recipe_file)?;
    Ok((params, recipe))
}

fn check_branch_dims(params: &ModelParams, recipe: &FeatureRecipe, found: &[usize]) -> Result<(), CliError> {
    let expected: Vec<usize> = params.config().branches.iter().map(|b| b.input_dims).collect();
    if expected != found {
        return Err(CliError::Data(format!(
            "checkpoint expects branch dims {expected:?} ({}), data provides {found:?}",
            recipe.features
        )));
    }
    Ok(())
}

fn segment_dims(segments: &[Segment]) -> Vec<usize> {
    segments
        .first()
        .map(|s| s.features.iter().map(FeatureMatrix::dims).collect())
        .unwrap_or_default()
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let mut cfg = rc.synth.clone();
    set(&mut cfg.n_utterances, args.n_utterances);
    set(&mut cfg.utterance_s, args.utterance_s);
    set(&mut cfg.utterances_per_speaker, args.utterances_per_speaker);
    set(&mut cfg.val_fraction, args.val_fraction);
    set(&mut cfg.test_fraction, args.test_fraction);
    cfg.seed = rc.seed(args.seed, cfg.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    prepare_out_dir(&args.common.out_dir)?;
    let manifest = synth_corpus(&cfg, &args.common.out_dir)?;
    let count = |s| manifest.split(s).count();
    print_json(&serde_json::json!({
        "manifest": args.common.out_dir.join(MANIFEST_NAME),
        "train": count(Split::Train),
        "val": count(Split::Val),
        "test": count(Split::Test),
    }))
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let manifest = open_manifest(&rc.manifest(args.manifest.as_deref())?)?;
    let features = args.features.clone().unwrap_or_else(|| rc.data.features.clone());
    let spec = parse_features(&features)?;
    let selection = match args.selection.as_ref().or(rc.data.selection.as_ref()) {
        Some(p) => {
            require_file(p, "selection file")?;
            if spec.embedding_pattern().is_none() {
                return Err(CliError::Usage("--selection needs emb or fused features".into()));
            }
            Some(read_json::<SelectionFile>(p)?.indices)
        }
        None => None,
    };
    let mut segment_s = rc.data.segment_s;
    set(&mut segment_s, args.segment_s);
    let mut speed_factors = rc.data.speed_factors.clone();
    set(&mut speed_factors, args.speed_factors.clone());

    let mut model = rc.model.clone();
    set(&mut model.lstm_layers, args.lstm_layers);
    set(&mut model.lstm_units, args.lstm_units);
    set(&mut model.embed_units, args.embed_units);
    set(&mut model.conv_width, args.conv_width);
    let mut tcfg = rc.train.clone();
    set(&mut tcfg.lr, args.lr);
    set(&mut tcfg.batch_size, args.batch_size);
    set(&mut tcfg.max_epochs, args.max_epochs);
    set(&mut tcfg.patience, args.patience);
    tcfg.seed = rc.seed(args.seed, tcfg.seed);
    tcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let opts = DatasetOptions {
        features: spec,
        selection: selection.clone(),
        segment_s,
        speed_factors,
    };
    let train_set = load_split(&manifest, Split::Train, &opts)?;
    let val_set = load_split(&manifest, Split::Val, &opts)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CliError::Data(format!(
            "{} train and {} val segments; both splits need at least one",
            train_set.len(),
            val_set.len()
        )));
    }
    log::info!("{} train segments, {} val segments", train_set.len(), val_set.len());

    let mcfg = ModelConfig {
        branches: segment_dims(&train_set)
            .into_iter()
            .map(|d| BranchConfig::with_width(d, model.conv_width))
            .collect(),
        lstm_layers: model.lstm_layers,
        lstm_units: model.lstm_units,
        embed_units: model.embed_units,
        seed: tcfg.seed,
    };
    mcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let (params, history) = train_with(&mcfg, &tcfg, &train_set, &val_set, |_| {})?;
    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    let checkpoint = out.join(CHECKPOINT_NAME);
    save_checkpoint(&params, &checkpoint)?;
    write_json(
        &recipe_path(&checkpoint),
        &FeatureRecipe {
            features,
            selection,
            segment_s,
        },
    )?;
    write_atomic(&out.join(HISTORY_NAME), history.to_jsonl()?.as_bytes())?;
    let best = history.best();
    print_json(&serde_json::json!({
        "checkpoint": checkpoint,
        "epochs": history.epochs.len(),
        "best_epoch": history.best_epoch,
        "best_val_loss": best.map(|b| b.val_loss),
        "param_count": mcfg.param_count(),
    }))
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let manifest = open_manifest(&rc.manifest(args.manifest.as_deref())?)?;
    let split = parse_split(&args.split)?;
    let (params, recipe) = load_model(&args.checkpoint)?;
    let opts = DatasetOptions {
        features: parse_features(&recipe.features)?,
        selection: recipe.selection.clone(),
        segment_s: recipe.segment_s,
        speed_factors: Vec::new(),
    };
    let segments = load_split(&manifest, split, &opts)?;
    if segments.is_empty() {
        return Err(CliError::Data(format!("split {split} has no segments")));
    }
    check_branch_dims(&params, &recipe, &segment_dims(&segments))?;
    let estimates = predict(&params, &segments)?;
    let evaluation = evaluate_estimates(&segments, &estimates)?;

    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    write_json(&out.join("metrics.json"), &evaluation.report)?;
    write_atomic(&out.join("segments.csv"), &segments_csv(&evaluation.segments)?)?;
    if args.traces {
        let dir = out.join("traces");
        prepare_out_dir(&dir)?;
        for (s, est) in segments.iter().zip(&estimates) {
            let name = format!("{}.csv", segment_id(s));
            write_atomic(&dir.join(name), &trace_csv(s.target.values(), est)?)?;
        }
    }
    print_json(&evaluation.report)
}

pub fn saliency(args: SaliencyArgs) -> Result<(), CliError> {
    let rc = RunConfig::load(args.common.config.as_deref())?;
    let manifest = open_manifest(&rc.manifest(args.manifest.as_deref())?)?;
    let split = parse_split(&args.split)?;
    let pattern: EmbeddingPattern = args
        .emb
        .parse()
        .map_err(|e: speechbreath::Error| CliError::Usage(e.to_string()))?;
    if let Some(p) = args.fractions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(CliError::Usage(format!("fraction {p} must be in (0, 1]")));
    }
    let inputs = load_saliency_inputs(&manifest, split, &pattern)?;
    if inputs.is_empty() {
        return Err(CliError::Data(format!("split {split} has no utterances")));
    }
    let report = saliency_scores(&inputs)?;

    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    write_json(&out.join("saliency.json"), &report)?;
    let mut written = Vec::new();
    for &p in &args.fractions {
        let indices = top_fraction(&report, p)?;
        let path = out.join(format!("selection_{p:.2}.json"));
        write_json(
            &path,
            &SelectionFile {
                fraction: p,
                dims: report.dims,
                indices,
            },
        )?;
        written.push(path);
    }
    print_json(&serde_json::json!({
        "dims": report.dims,
        "n_utterances": report.n_utterances,
        "selections": written,
    }))
}

pub fn predict_cmd(args: PredictArgs) -> Result<(), CliError> {
    RunConfig::load(args.common.config.as_deref())?;
    let (params, recipe) = load_model(&args.checkpoint)?;
    require_file(&args.wav, "audio")?;
    let mut spec = parse_features(&recipe.features)?;
    if let Some(emb) = &args.emb {
        require_file(emb, "embedding file")?;
        let pattern = EmbeddingPattern(emb.to_string_lossy().into_owned());
        spec = match spec {
            FeatureSpec::Mfb => {
                log::warn!("checkpoint uses mfb features; ignoring --emb");
                FeatureSpec::Mfb
            }
            FeatureSpec::Embedding(_) => FeatureSpec::Embedding(pattern),
            FeatureSpec::Fused(_) => FeatureSpec::Fused(pattern),
        };
    }
    let audio = to_canonical_rate(load_wav(&args.wav)?)?;
    let branches = utterance_features(&audio, &args.wav, &spec, recipe.selection.as_deref())?;
    let frames = branches.iter().map(FeatureMatrix::frames).min().unwrap_or(0);
    let branches: Vec<FeatureMatrix> = branches.into_iter().map(|b| b.truncated(frames)).collect();
    let dims: Vec<usize> = branches.iter().map(FeatureMatrix::dims).collect();
    check_branch_dims(&params, &recipe, &dims)?;
    let estimate = forward(&params, &branches)?;
    let trace = RespirationTrace::new(estimate, MODEL_FRAME_RATE_HZ)?;
    let events = detect_breath_events(&trace)?;

    let mut csv = String::from("frame,time_s,estimate\n");
    for (i, v) in trace.values().iter().enumerate() {
        csv.push_str(&format!("{i},{},{v}\n", i as f64 / MODEL_FRAME_RATE_HZ));
    }
    let out = &args.common.out_dir;
    prepare_out_dir(out)?;
    write_atomic(&out.join("trace.csv"), csv.as_bytes())?;
    let summary = serde_json::json!({
        "rr_bpm": rr_from_events(&events),
        "inhale_times_s": events.inhale_times_s(),
    });
    write_json(&out.join("prediction.json"), &summary)?;
    print_json(&summary)
}
