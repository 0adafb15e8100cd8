use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use log::info;
use rationalift::evaluation::median_of;
use rationalift::training::{GridCell, GridResult};
use serde::Serialize;

use crate::output::{self, RunManifest, Status};
use crate::run::{resolve, NumericFailure};
use crate::GridArgs;

struct Job {
    gen: f64,
    pred: f64,
    seed: u64,
    dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum JobState {
    Skipped,
    Ran,
    Diverged,
}

fn cell_dir(root: &Path, gen: f64, pred: f64, seed: u64) -> PathBuf {
    root.join("cells").join(format!("gen{gen}_pred{pred}_seed{seed}"))
}

fn is_complete(dir: &Path) -> bool {
    RunManifest::load(dir).is_ok_and(|m| m.status == Status::Complete)
}

fn run_job(job: &Job, config: &Path) -> Result<JobState> {
    if is_complete(&job.dir) {
        info!("skipping completed cell {}", job.dir.display());
        return Ok(JobState::Skipped);
    }
    std::fs::create_dir_all(&job.dir)?;
    let log_path = job.dir.join("log.txt");
    let log = std::fs::File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?;
    let exe = std::env::current_exe().context("cannot locate own executable")?;
    let status = Command::new(exe)
        .arg("train")
        .arg("--config")
        .arg(config)
        .args(["--set", &format!("lr_gen={}", job.gen)])
        .args(["--set", &format!("lr_pred={}", job.pred)])
        .args(["--seed", &job.seed.to_string()])
        .arg("--out")
        .arg(&job.dir)
        .stdout(Stdio::from(log.try_clone()?))
        .stderr(Stdio::from(log))
        .status()
        .context("cannot start child run")?;
    match status.code() {
        Some(0) => Ok(JobState::Ran),
        Some(3) => Ok(JobState::Diverged),
        _ => bail!("cell {} failed, see {}", job.dir.display(), log_path.display()),
    }
}

/// Selected-epoch annotation F1, dev F1 without annotations; NaN if unavailable.
fn cell_f1(dir: &Path) -> f64 {
    let text = std::fs::read_to_string(dir.join(output::FINAL)).unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
    ["annotation", "dev"]
        .iter()
        .find_map(|k| v[k]["F1"].as_f64())
        .unwrap_or(f64::NAN)
}

fn render_table(result: &GridResult) -> String {
    let mut s = String::from("median F1 (rows: lr_gen, columns: lr_pred)\n\n");
    let _ = write!(s, "{:>12}", "gen \\ pred");
    for p in &result.pred_rates {
        let _ = write!(s, "{p:>12}");
    }
    s.push('\n');
    for (gi, g) in result.gen_rates.iter().enumerate() {
        let _ = write!(s, "{g:>12}");
        for pi in 0..result.pred_rates.len() {
            let _ = write!(s, "{:>12.4}", result.cell(gi, pi).median_f1);
        }
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct GridManifest<'a> {
    command: &'static str,
    args: Vec<String>,
    config_text: String,
    gen_rates: &'a [f64],
    pred_rates: &'a [f64],
    seeds: &'a [u64],
    cells: Vec<(PathBuf, JobState)>,
    csv: PathBuf,
    table: PathBuf,
}

pub fn grid(args: &GridArgs) -> Result<()> {
    if args.gen_rates.is_empty() || args.pred_rates.is_empty() || args.seeds.is_empty() {
        bail!("rate and seed lists must be non-empty");
    }
    if args.gen_rates.iter().chain(&args.pred_rates).any(|r| !(*r > 0.0)) {
        bail!("learning rates must be positive");
    }
    let cfg = resolve(&args.run)?;
    let root = args.run.out.clone().unwrap_or_else(|| output::output_root().join("grid"));
    std::fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    let config = root.join(output::CONFIG);
    std::fs::write(&config, cfg.to_text())?;

    let jobs: Vec<Job> = args
        .gen_rates
        .iter()
        .flat_map(|&gen| args.pred_rates.iter().map(move |&pred| (gen, pred)))
        .flat_map(|(gen, pred)| args.seeds.iter().map(move |&seed| (gen, pred, seed)))
        .map(|(gen, pred, seed)| Job { gen, pred, seed, dir: cell_dir(&root, gen, pred, seed) })
        .collect();
    let states = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.max(1).min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() || failure.lock().expect("lock").is_some() {
                    break;
                }
                match run_job(&jobs[i], &config) {
                    Ok(state) => states.lock().expect("lock")[i] = Some(state),
                    Err(e) => *failure.lock().expect("lock") = Some(e),
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let states: Vec<JobState> = states.into_inner().expect("lock").into_iter().map(|s| s.expect("every job ran")).collect();

    let per_cell = args.seeds.len();
    let cells = jobs
        .chunks(per_cell)
        .map(|chunk| {
            let f1: Vec<f64> = chunk.iter().map(|j| cell_f1(&j.dir)).collect();
            GridCell { lr_gen: chunk[0].gen, lr_pred: chunk[0].pred, median_f1: median_of(&f1), f1 }
        })
        .collect();
    let result = GridResult {
        gen_rates: args.gen_rates.clone(),
        pred_rates: args.pred_rates.clone(),
        seeds: args.seeds.clone(),
        cells,
    };
    let csv = root.join("grid.csv");
    std::fs::write(&csv, result.to_csv())?;
    let table_path = root.join("grid.txt");
    let table = render_table(&result);
    std::fs::write(&table_path, &table)?;
    output::write_json(
        &root.join(output::MANIFEST),
        &GridManifest {
            command: "grid",
            args: std::env::args().skip(1).collect(),
            config_text: cfg.to_text(),
            gen_rates: &result.gen_rates,
            pred_rates: &result.pred_rates,
            seeds: &result.seeds,
            cells: jobs.iter().map(|j| j.dir.clone()).zip(states.iter().copied()).collect(),
            csv,
            table: table_path,
        },
    )?;
    print!("{table}");
    let diverged = states.iter().filter(|s| **s == JobState::Diverged).count();
    if diverged > 0 {
        return Err(NumericFailure(format!("{diverged} grid runs diverged")).into());
    }
    Ok(())
}
