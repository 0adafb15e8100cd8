use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::info;
use rationalift::checkpoint;
use rationalift::config::RunConfig;
use rationalift::evaluation::{degeneration_report, predict, RationaleMetrics};
use rationalift::model::build_model;
use rationalift::training::{
    pretrain_skewed_generator, pretrain_skewed_predictor, train_observed, EpochRecord, SkewKind, TrainOutcome,
};
use serde::Serialize;

use crate::output::{self, JsonLines, RunManifest, Status};
use crate::{ModeArg, RunArgs, SkewArgs, SkewKindArg};

/// Reported when some grid cells diverged.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

pub fn parse_set(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Defaults, then the config file, then `--set`, then the dedicated flags.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    if let Some(path) = &args.config {
        if !path.is_file() {
            bail!("config file {} does not exist", path.display());
        }
    }
    let mut overrides = parse_set(&args.set)?;
    let flags = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("lr_gen", args.lr_gen.map(|v| v.to_string())),
        ("lr_pred", args.lr_pred.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("share_depth", args.share_depth.map(|v| v.to_string())),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    let mut cfg = RunConfig::resolve(args.config.as_deref(), &overrides)?;
    if let Some(mode) = args.mode {
        cfg.model.share_depth = match mode {
            ModeArg::Fr => cfg.model.num_layers,
            ModeArg::Rnp => 0,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mode_name(cfg: &RunConfig) -> String {
    match cfg.model.share_depth {
        0 => "rnp".into(),
        d if d == cfg.model.num_layers => "fr".into(),
        d => format!("share{d}"),
    }
}

#[derive(Serialize)]
struct SplitMetrics {
    dev: RationaleMetrics,
    annotation: Option<RationaleMetrics>,
}

#[derive(Serialize)]
struct FinalMetrics {
    best_epoch: Option<usize>,
    epochs: usize,
    /// Metrics of the selected epoch.
    dev: Option<RationaleMetrics>,
    annotation: Option<RationaleMetrics>,
    /// Metrics after the last epoch.
    last: Option<SplitMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pre_acc: Option<f64>,
}

fn final_metrics(outcome: &TrainOutcome, pre_acc: Option<f64>) -> FinalMetrics {
    let best: Option<&EpochRecord> = outcome.best_record();
    let last = outcome.history.records.last();
    FinalMetrics {
        best_epoch: outcome.best_epoch,
        epochs: outcome.history.len(),
        dev: best.map(|r| r.dev),
        annotation: best.and_then(|r| r.annotation),
        last: last.map(|r| SplitMetrics { dev: r.dev, annotation: r.annotation }),
        pre_acc,
    }
}

fn execute(command: &str, args: &RunArgs, skew: Option<(SkewKind, f64)>) -> Result<()> {
    let cfg = resolve(args)?;
    let skew_cfg = skew.map(|(kind, k)| cfg.skew_config(kind, k));
    if let Some(s) = &skew_cfg {
        s.validate()?;
    }
    let out_dir: PathBuf = args.out.clone().unwrap_or_else(|| {
        let tag = match skew {
            Some((SkewKind::SkewedGenerator, _)) => "-generator",
            Some((SkewKind::SkewedPredictor, _)) => "-predictor",
            None => "",
        };
        output::output_root().join(format!("{command}{tag}-{}-seed{}", mode_name(&cfg), cfg.train.seed))
    });
    output::prepare_dir(&out_dir)?;
    let mut manifest = RunManifest::new(command, &out_dir, &cfg);
    manifest.skew = skew_cfg;
    let config_path = out_dir.join(output::CONFIG);
    std::fs::write(&config_path, cfg.to_text()).with_context(|| format!("cannot write {}", config_path.display()))?;
    manifest.artifacts.config = Some(config_path);
    manifest.save()?;

    let result = run_pipeline(&cfg, &mut manifest);
    if let Err(err) = &result {
        manifest.status = Status::Failed;
        manifest.error = Some(format!("{err:#}"));
        manifest.save()?;
    }
    result
}

fn run_pipeline(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let out_dir = manifest.out_dir.clone();
    let (corpus, _) = cfg.corpus()?;
    let embeddings = cfg.embeddings(&corpus.vocab)?;
    let mut model = build_model(&cfg.model, &corpus.vocab, &embeddings, cfg.train.seed)?;
    info!(
        "{} train / {} dev examples, vocabulary {}, {} trainable parameters",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.vocab.len(),
        model.param_count().trainable
    );

    if let Some(skew) = manifest.skew {
        let outcome = match skew.kind {
            SkewKind::SkewedPredictor => pretrain_skewed_predictor(&mut model, &corpus, &skew)?,
            SkewKind::SkewedGenerator => pretrain_skewed_generator(&mut model, &corpus, &skew, cfg.train.max_len)?,
        };
        info!("pretraining: {} epochs, {} batches, accuracy {:.4}", outcome.epochs, outcome.batches, outcome.pre_acc);
        if skew.kind == SkewKind::SkewedGenerator {
            manifest.pre_acc = Some(outcome.pre_acc);
        }
        manifest.skew_outcome = Some(outcome);
        manifest.save()?;
    }

    let metrics_path = out_dir.join(output::METRICS);
    let mut metrics = JsonLines::create(&metrics_path)?;
    manifest.artifacts.metrics = Some(metrics_path);
    let outcome = train_observed(model, &corpus, &cfg.train, |record, _| {
        metrics
            .push(record)
            .map_err(|e| rationalift::Error::Config(format!("cannot write metrics: {e:#}")))
    })?;

    let run_echo = serde_json::to_value(cfg)?;
    let ckpt = out_dir.join(output::CHECKPOINT);
    checkpoint::save(&ckpt, &outcome.model, &corpus.vocab, &run_echo)?;
    let last = out_dir.join(output::LAST_CHECKPOINT);
    checkpoint::save(&last, &outcome.last, &corpus.vocab, &run_echo)?;
    manifest.artifacts.checkpoint = Some(ckpt);
    manifest.artifacts.last_checkpoint = Some(last);

    let final_path = out_dir.join(output::FINAL);
    output::write_json(&final_path, &final_metrics(&outcome, manifest.pre_acc))?;
    manifest.artifacts.final_metrics = Some(final_path);

    let reports = out_dir.join(output::REPORTS);
    let scored = corpus.annotation.as_ref().unwrap_or(&corpus.dev);
    let masks = reports.join(format!("masks_{}.jsonl", scored.split));
    predict(&outcome.model, scored, &corpus.vocab, cfg.train.eval_batch_size, cfg.train.max_len).write_mask_dump(&masks)?;
    manifest.artifacts.reports.push(masks);
    let selection: Vec<_> = outcome.history.records.iter().map(|r| r.selection).collect();
    let degeneration = reports.join("degeneration.json");
    output::write_json(&degeneration, &degeneration_report(&selection))?;
    manifest.artifacts.reports.push(degeneration);

    manifest.best_epoch = outcome.best_epoch;
    manifest.status = Status::Complete;
    manifest.save()?;
    if let Some(r) = outcome.best_record() {
        let f1 = r.annotation.and_then(|a| a.f1).or(r.dev.f1);
        println!(
            "best epoch {}: dev acc {:.4}, S {:.4}, F1 {}",
            r.epoch,
            r.dev.accuracy,
            r.dev.sparsity,
            f1.map_or("-".into(), |f| format!("{f:.4}"))
        );
    }
    println!("outputs in {}", out_dir.display());
    Ok(())
}

pub fn train(args: &RunArgs) -> Result<()> {
    execute("train", args, None)
}

pub fn skew(args: &SkewArgs) -> Result<()> {
    let kind = match args.kind {
        SkewKindArg::Predictor => SkewKind::SkewedPredictor,
        SkewKindArg::Generator => SkewKind::SkewedGenerator,
    };
    execute("skew", &args.run, Some((kind, args.k)))
}
