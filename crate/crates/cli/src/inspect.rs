use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rationalift::checkpoint::{self, Checkpoint};
use rationalift::config::{DataSource, RunConfig};
use rationalift::data::{Dataset, TokenClass};
use rationalift::evaluation::{
    evaluate, insertion_probe, lemma3_probe, predict, render_probe_html, render_rationales, text_token_classes,
    uninformative_rationale_probe, ProbeTokens, RenderFormat,
};
use rationalift::training::Corpus;

use crate::output::{self, RunManifest, Status};
use crate::run::parse_set;
use crate::{CheckpointArgs, EvalArgs, FormatArg, ProbeArgs, ProbeKind, RenderArgs, SplitArg};

struct Loaded {
    ckpt: Checkpoint,
    cfg: RunConfig,
    corpus: Corpus,
    /// Indexed by checkpoint vocabulary id.
    classes: Vec<TokenClass>,
}

fn load(args: &CheckpointArgs) -> Result<Loaded> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let overrides = parse_set(&args.set)?;
    let cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                bail!("config file {} does not exist", path.display());
            }
            RunConfig::resolve(Some(path), &overrides)?
        }
        None => {
            let mut cfg: RunConfig = if ckpt.run.is_null() {
                RunConfig::default()
            } else {
                serde_json::from_value(ckpt.run.clone()).context("checkpoint carries an unreadable run config")?
            };
            for (k, v) in &overrides {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            cfg
        }
    };
    let (corpus, partition) = cfg.corpus()?;
    let classes = match (&partition, cfg.data.source) {
        (Some(p), DataSource::Synth) => p.id_classes(&ckpt.vocab),
        _ => text_token_classes(&ckpt.vocab),
    };
    Ok(Loaded { ckpt, cfg, corpus, classes })
}

fn split<'a>(corpus: &'a Corpus, which: SplitArg) -> Result<&'a Dataset> {
    match which {
        SplitArg::Train => Ok(&corpus.train),
        SplitArg::Dev => Ok(&corpus.dev),
        SplitArg::Annotation => corpus.annotation.as_ref().ok_or_else(|| anyhow!("no annotation split configured")),
    }
}

fn format(f: FormatArg) -> RenderFormat {
    match f {
        FormatArg::Ansi => RenderFormat::Ansi,
        FormatArg::Html => RenderFormat::Html,
    }
}

fn report_name(f: FormatArg) -> &'static str {
    match f {
        FormatArg::Ansi => "rationales.txt",
        FormatArg::Html => "rationales.html",
    }
}

fn out_dir(args: &CheckpointArgs, default: &str) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| output::output_root().join(default));
    output::prepare_dir(&dir)?;
    Ok(dir)
}

fn finish(mut manifest: RunManifest, reports: Vec<PathBuf>) -> Result<()> {
    manifest.artifacts.checkpoint = None;
    manifest.artifacts.reports = reports;
    manifest.status = Status::Complete;
    manifest.save()
}

fn render_split(l: &Loaded, data: &Dataset, n: usize, fmt: FormatArg) -> String {
    let preds = predict(&l.ckpt.model, data, &l.ckpt.vocab, l.cfg.train.eval_batch_size, l.cfg.train.max_len);
    render_rationales(&data.examples, &preds.masks, n, format(fmt))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let l = load(&args.ckpt)?;
    let data = split(&l.corpus, args.split)?;
    let dir = out_dir(&args.ckpt, &format!("eval-{}", data.split))?;
    let manifest = RunManifest::new("eval", &dir, &l.cfg);
    manifest.save()?;
    let t = &l.cfg.train;
    let (metrics, preds) = evaluate(&l.ckpt.model, data, &l.ckpt.vocab, t.eval_batch_size, t.max_len, t.averaging)?;
    let metrics_path = dir.join(format!("metrics_{}.json", data.split));
    output::write_json(&metrics_path, &metrics)?;
    let masks = dir.join(output::REPORTS).join(format!("masks_{}.jsonl", data.split));
    preds.write_mask_dump(&masks)?;
    let mut reports = vec![metrics_path, masks];
    if let Some(n) = args.render {
        let path = dir.join(output::REPORTS).join(report_name(args.format));
        std::fs::write(&path, render_rationales(&data.examples, &preds.masks, n, format(args.format)))?;
        reports.push(path);
    }
    finish(manifest, reports)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn render(args: &RenderArgs) -> Result<()> {
    let l = load(&args.ckpt)?;
    let data = split(&l.corpus, args.split)?;
    let dir = out_dir(&args.ckpt, "render")?;
    let manifest = RunManifest::new("render", &dir, &l.cfg);
    manifest.save()?;
    let text = render_split(&l, data, args.n, args.format);
    let path = dir.join(output::REPORTS).join(report_name(args.format));
    std::fs::write(&path, &text)?;
    finish(manifest, vec![path.clone()])?;
    if args.format == FormatArg::Ansi {
        print!("{text}");
    } else {
        println!("{}", path.display());
    }
    Ok(())
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn default_sentences(l: &Loaded) -> Vec<Vec<String>> {
    let fixed = ["good . , smell", "good , . smell"];
    if fixed.iter().flat_map(|s| s.split_whitespace()).all(|w| l.ckpt.vocab.id(w).is_some()) {
        return fixed.iter().map(|s| words(s)).collect();
    }
    let data = l.corpus.annotation.as_ref().unwrap_or(&l.corpus.dev);
    data.examples.iter().take(20).map(|e| e.tokens.clone()).collect()
}

pub fn probe(args: &ProbeArgs) -> Result<()> {
    let l = load(&args.ckpt)?;
    let name = match args.probe {
        ProbeKind::Lemma3 => "lemma3",
        ProbeKind::Insertion => "insertion",
        ProbeKind::Uninformative => "uninformative",
    };
    let dir = out_dir(&args.ckpt, &format!("probe-{name}"))?;
    let manifest = RunManifest::new("probe", &dir, &l.cfg);
    manifest.save()?;
    let reports_dir = dir.join(output::REPORTS);
    let json_path = reports_dir.join(format!("probe_{name}.json"));
    let model = &l.ckpt.model;
    let vocab = &l.ckpt.vocab;
    let mut reports = vec![json_path.clone()];
    match args.probe {
        ProbeKind::Lemma3 => {
            let sentences: Vec<Vec<String>> = if args.sentences.is_empty() {
                default_sentences(&l)
            } else {
                args.sentences.iter().map(|s| words(s)).collect()
            };
            let report = lemma3_probe(model, vocab, &sentences, &ProbeTokens::from_classes(vocab, &l.classes))?;
            output::write_json(&json_path, &report)?;
            let html = reports_dir.join("probe_lemma3.html");
            std::fs::write(&html, render_probe_html(&report))?;
            reports.push(html);
            for v in &report.views {
                println!(
                    "{} encoder: uninformative {:.4}, informative {:.4}, ratio {:.4}",
                    v.view, v.mean_uninformative, v.mean_informative, v.ratio
                );
            }
        }
        ProbeKind::Insertion => {
            let token = match &args.token {
                Some(t) => t.clone(),
                None => vocab
                    .tokens()
                    .iter()
                    .zip(&l.classes)
                    .skip(2)
                    .find(|(_, c)| matches!(c, TokenClass::Filler | TokenClass::Punctuation))
                    .map(|(t, _)| t.clone())
                    .ok_or_else(|| anyhow!("no uninformative token in the vocabulary; pass --token"))?,
            };
            let data = l.corpus.annotation.as_ref().unwrap_or(&l.corpus.dev);
            let take = args.limit.min(data.len());
            let report = insertion_probe(model, vocab, &data.examples[..take], &token, None)?;
            output::write_json(&json_path, &report)?;
            println!("inserting {:?}: median output shift {:.6} over {} examples", report.token, report.median, take);
        }
        ProbeKind::Uninformative => {
            let data = split(&l.corpus, SplitArg::Annotation)?;
            let span = args.span.unwrap_or(l.cfg.data.synth.span_length);
            let report = uninformative_rationale_probe(model, vocab, data, &l.classes, span, args.limit)?;
            output::write_json(&json_path, &report)?;
            println!(
                "filler-only median {:.6}, opposite-class gold median {:.6}, ratio {:.4}",
                report.filler_median, report.informative_median, report.ratio
            );
        }
    }
    finish(manifest, reports)
}
