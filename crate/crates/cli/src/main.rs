//! `groundcheck`: generate data, train, run the suite and report.
//!
//! Every command writes the resolved configuration to `config.json` in its
//! output directory. Failures print one JSON object to stderr,
//! `{"error": {"kind": ..., "message": ...}}`, and exit with status 1
//! (2 for command-line usage errors).

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use groundcheck_core::metrics::{self, PredictionRecord};
use groundcheck_core::model::Checkpoint;
use groundcheck_core::runner::report::load_report;
use groundcheck_core::runner::suite::{compare_runs, model_config, records_for};
use groundcheck_core::runner::{emit_report, finetune_observed, pretrain, run_suite, EpochLog};
use groundcheck_core::synthcp::{generate, DatasetBundle, Split};
use serde::Serialize;

use config::*;

#[derive(Parser)]
#[command(name = "groundcheck", version, about = "Grounding-loss ablations on synthetic changing-priors VQA data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bundle to dataset.jsonl.
    Generate(GenerateArgs),
    /// Train a baseline model with bce.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint with hint, scr, zero-out or plain bce.
    Finetune(FinetuneArgs),
    /// Run the full grid of cells and seeds and write the report.
    Suite(SuiteArgs),
    /// Re-render report files from a report.json.
    Report(ReportArgs),
    /// Significance and overlap between two prediction files.
    Stats(StatsArgs),
}

#[derive(Debug)]
pub struct CliError {
    kind: String,
    message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        CliError { kind: kind.into(), message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::new("io", format!("{}: {e}", path.display()))
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "error": { "kind": self.kind, "message": self.message } })
    }
}

impl From<groundcheck_core::Error> for CliError {
    fn from(e: groundcheck_core::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("json", e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn prepare_dir(dir: &Path, config: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_text(&dir.join("config.json"), groundcheck_core::json::to_string_pretty(config)? + "\n")
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    DatasetBundle::load(path).map_err(|e| match e {
        groundcheck_core::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })
}

fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    metrics::write_records(std::io::BufWriter::new(file), records)?;
    Ok(())
}

fn write_log(path: &Path, rows: &[(String, EpochLog)]) -> Result<()> {
    let mut text = String::from("run_id,epoch,phase,loss,method_loss,eval_accuracy\n");
    for (id, l) in rows {
        text.push_str(&format!("{id},{},{},{},{},{}\n", l.epoch, l.phase, l.loss, l.method_loss, l.eval_accuracy));
    }
    write_text(path, text)
}

fn cmd_generate(r: GenerateRun) -> Result<serde_json::Value> {
    let bundle = generate(&r.dataset, r.seed)?;
    prepare_dir(&r.out, &r)?;
    let path = r.out.join("dataset.jsonl");
    bundle.save(&path)?;
    let (train_oracle, test_oracle) = groundcheck_core::synthcp::modal_oracle_accuracy(&bundle);
    Ok(serde_json::json!({
        "dataset": path,
        "instances": Split::ALL.iter().map(|&s| (s.as_str(), bundle.split(s).len())).collect::<BTreeMap<_, _>>(),
        "modal_oracle_accuracy": { "train": train_oracle, "test": test_oracle },
    }))
}

fn cmd_pretrain(r: PretrainRun) -> Result<serde_json::Value> {
    let bundle = load_bundle(&r.data)?;
    prepare_dir(&r.out, &r)?;
    let (tr, ev) = r.bundle.splits();
    let mcfg = model_config(&bundle, &r.pretrain);
    let run_id = format!("{}-pretrain-s{}", r.bundle.as_str(), r.seed);
    let outcome = pretrain(&r.pretrain, &mcfg, bundle.split(tr), bundle.split(ev), r.seed, &run_id)?;
    outcome.checkpoint.save(&r.out.join("checkpoint.json"))?;
    let mut records = records_for(&outcome.checkpoint, bundle.split(tr), "baseline", tr)?;
    records.extend(records_for(&outcome.checkpoint, bundle.split(ev), "baseline", ev)?);
    write_predictions(&r.out.join("predictions.csv"), &records)?;
    let log: Vec<(String, EpochLog)> = outcome.log.iter().map(|l| (run_id.clone(), l.clone())).collect();
    write_log(&r.out.join("log.csv"), &log)?;
    Ok(serde_json::json!({
        "checkpoint": r.out.join("checkpoint.json"),
        "epochs": outcome.log.len(),
        "final_loss": outcome.log.last().map(|l| l.loss),
        tr.as_str(): metrics::accuracy(&records.iter().filter(|x| x.split == tr.as_str()).cloned().collect::<Vec<_>>())?.overall,
        ev.as_str(): outcome.log.last().map(|l| l.eval_accuracy),
    }))
}

fn all_split_records(ck: &Checkpoint, bundle: &DatasetBundle, label: &str) -> groundcheck_core::Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for s in Split::ALL {
        out.extend(records_for(ck, bundle.split(s), label, s)?);
    }
    Ok(out)
}

fn cmd_finetune(r: FinetuneRun) -> Result<serde_json::Value> {
    let bundle = load_bundle(&r.data)?;
    let start = Checkpoint::load(&r.checkpoint).map_err(|e| match e {
        groundcheck_core::Error::Io(io) => CliError::io(&r.checkpoint, io),
        other => other.into(),
    })?;
    prepare_dir(&r.out, &r)?;
    let seed = r.seed.unwrap_or(start.seed);
    let label = match (r.finetune.loss.method.as_str(), r.finetune.cue_variant) {
        (m, Some(v)) => format!("{m}_{}", v.as_str()),
        (m, None) => m.to_string(),
    };
    let run_id = format!("{}-{label}-s{seed}", r.bundle.as_str());
    let (tr, ev) = r.bundle.splits();
    let epochs_dir = r.out.join("epochs");
    if r.dump_every_epoch {
        fs::create_dir_all(&epochs_dir).map_err(|e| CliError::io(&epochs_dir, e))?;
    }
    let mut on_epoch = |log: &EpochLog, params: &groundcheck_core::model::Parameters| -> groundcheck_core::Result<()> {
        if r.dump_every_epoch {
            let ck = Checkpoint { params: params.clone(), epoch: start.epoch + log.epoch, ..start.clone() };
            let recs = all_split_records(&ck, &bundle, &label)?;
            let path = epochs_dir.join(format!("predictions_epoch{}.csv", log.epoch));
            metrics::write_records(std::io::BufWriter::new(fs::File::create(path)?), &recs)?;
        }
        Ok(())
    };
    let outcome = finetune_observed(&start, &r.finetune, bundle.split(tr), bundle.split(ev), seed, &run_id, &mut on_epoch)?;
    outcome.checkpoint.save(&r.out.join("checkpoint.json"))?;
    let records = all_split_records(&outcome.checkpoint, &bundle, &label)?;
    write_predictions(&r.out.join("predictions.csv"), &records)?;
    let log: Vec<(String, EpochLog)> = outcome.log.iter().map(|l| (run_id.clone(), l.clone())).collect();
    write_log(&r.out.join("log.csv"), &log)?;
    let mut acc = BTreeMap::new();
    for s in Split::ALL {
        let recs: Vec<PredictionRecord> = records.iter().filter(|x| x.split == s.as_str()).cloned().collect();
        acc.insert(s.as_str(), metrics::accuracy(&recs)?.overall);
    }
    Ok(serde_json::json!({
        "checkpoint": r.out.join("checkpoint.json"),
        "reporting_epoch": outcome.reporting_epoch,
        "accuracy": acc,
    }))
}

fn cmd_suite(r: SuiteRun) -> Result<serde_json::Value> {
    let bundle = load_bundle(&r.data)?;
    prepare_dir(&r.out, &r)?;
    let out = run_suite(&bundle, &r.suite)?;
    let files = emit_report(&out.report, &r.out)?;
    if r.write_predictions {
        write_predictions(&r.out.join("predictions.csv"), &out.records())?;
    }
    let mut log = Vec::new();
    for ((kind, seed), entries) in &out.pretrain_logs {
        log.extend(entries.iter().map(|l| (format!("{}-baseline-s{seed}", kind.as_str()), l.clone())));
    }
    for ((kind, cell), runs) in &out.runs {
        for (seed, run) in r.suite.seeds.iter().zip(runs) {
            if let Ok(run) = run {
                log.extend(run.log.iter().map(|l| (format!("{}-{cell}-s{seed}", kind.as_str()), l.clone())));
            }
        }
    }
    write_log(&r.out.join("log.csv"), &log)?;
    let failed: Vec<String> = out
        .report
        .accuracy
        .iter()
        .filter(|row| !row.failures.is_empty())
        .map(|row| format!("{}/{}", row.bundle.as_str(), row.cell))
        .collect();
    Ok(serde_json::json!({ "files": files, "cells": out.report.accuracy.len(), "failed_cells": failed }))
}

fn cmd_report(r: ReportRun) -> Result<serde_json::Value> {
    let report = load_report(&r.report).map_err(|e| match e {
        groundcheck_core::Error::Io(io) => CliError::io(&r.report, io),
        other => other.into(),
    })?;
    prepare_dir(&r.out, &r)?;
    let files = emit_report(&report, &r.out)?;
    Ok(serde_json::json!({ "files": files }))
}

fn read_runs(path: &Path, split: &str) -> Result<(String, BTreeMap<String, Vec<PredictionRecord>>)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut runs: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    let mut label = None;
    for rec in metrics::read_records(std::io::BufReader::new(file))? {
        if rec.split == split {
            label.get_or_insert_with(|| rec.variant.clone());
            runs.entry(rec.run_id.clone()).or_default().push(rec);
        }
    }
    let label = label.ok_or_else(|| CliError::new("empty_input", format!("{}: no {split} records", path.display())))?;
    Ok((label, runs))
}

fn cmd_stats(r: StatsRun) -> Result<serde_json::Value> {
    let (la, ra) = read_runs(&r.a, &r.split)?;
    let (lb, rb) = read_runs(&r.b, &r.split)?;
    let sa: Vec<&[PredictionRecord]> = ra.values().map(Vec::as_slice).collect();
    let sb: Vec<&[PredictionRecord]> = rb.values().map(Vec::as_slice).collect();
    let n = sa[0].len();
    let subsets = r.subsets.unwrap_or_else(|| metrics::default_subset_count(n));
    let cmp = compare_runs(&la, &lb, &sa, &sb, subsets, r.seed)?;
    let mean_acc = |runs: &[&[PredictionRecord]]| -> Result<f64> {
        let mut s = 0.0;
        for run in runs {
            s += metrics::accuracy(run)?.overall;
        }
        Ok(s / runs.len() as f64)
    };
    let value = serde_json::json!({
        "runs": sa.len(),
        "instances": n,
        "subsets": subsets,
        "accuracy": { "a": mean_acc(&sa)?, "b": mean_acc(&sb)? },
        "comparison": cmp,
    });
    if let Some(out) = &r.out {
        prepare_dir(out, &r)?;
        write_text(&out.join("stats.json"), groundcheck_core::json::to_string_pretty(&value)? + "\n")?;
    }
    Ok(value)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a.resolve()?),
        Command::Pretrain(a) => cmd_pretrain(a.resolve()?),
        Command::Finetune(a) => cmd_finetune(a.resolve()?),
        Command::Suite(a) => cmd_suite(a.resolve()?),
        Command::Report(a) => cmd_report(a.resolve()?),
        Command::Stats(a) => cmd_stats(a.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::new("usage", e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            // A closed stdout (e.g. piped into `head`) is not a failure.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
