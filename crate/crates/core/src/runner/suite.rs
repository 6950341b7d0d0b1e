//! The experiment grid: pretrain per seed, fine-tune every cell, then reduce
//! the per-seed outputs into an [`ExperimentReport`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{self, FinetuneConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::Method;
use crate::metrics::{self, PredictionRecord, StatResult};
use crate::model::{Checkpoint, ModelConfig};
use crate::synthcp::{AnswerType, CueVariant, DatasetBundle, GenerationConfig, Instance, Split, SubsetMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    /// Shifted priors: train vs test.
    Shifted,
    /// Matched priors: control_train vs control_val.
    Control,
}

impl BundleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BundleKind::Shifted => "shifted",
            BundleKind::Control => "control",
        }
    }

    pub fn splits(self) -> (Split, Split) {
        match self {
            BundleKind::Shifted => (Split::Train, Split::Test),
            BundleKind::Control => (Split::ControlTrain, Split::ControlVal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub label: String,
    pub finetune: FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    pub pretrain: PretrainConfig,
    /// Fine-tuning cells on the shifted bundle.
    pub cells: Vec<CellSpec>,
    /// Fine-tuning cells on the control bundle.
    pub control_cells: Vec<CellSpec>,
    /// Subset count for the significance protocol; `min(500, n/10)` when absent.
    pub subset_count: Option<usize>,
    pub stats_seed: u64,
}

impl SuiteConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one seed".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in self.cells.iter().chain(&self.control_cells) {
            c.finetune.validate(k)?;
            if c.label == BASELINE {
                return Err(Error::Config(format!("cell label {BASELINE:?} is reserved")));
            }
        }
        for c in &self.cells {
            if !seen.insert(&c.label) {
                return Err(Error::Config(format!("duplicate cell label {:?}", c.label)));
            }
        }
        seen.clear();
        for c in &self.control_cells {
            if !seen.insert(&c.label) {
                return Err(Error::Config(format!("duplicate control cell label {:?}", c.label)));
            }
        }
        Ok(())
    }
}

pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(deserialize_with = "crate::json::f64_or_nan")]
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for one seed).
    #[serde(deserialize_with = "crate::json::f64_or_nan")]
    pub std: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 { f64::NAN } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stat { mean, std, n, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub bundle: BundleKind,
    pub cell: String,
    pub method: Method,
    pub variant: Option<CueVariant>,
    pub subset_fraction: Option<f64>,
    pub subset_mode: Option<SubsetMode>,
    pub train: Stat,
    /// Test accuracy on the shifted bundle, validation accuracy on the control bundle.
    pub eval: Stat,
    /// Over seeds where it is defined.
    pub cpig: Option<Stat>,
    pub reporting_epochs: Vec<usize>,
    /// Per-seed failure messages; a failed cell has no statistics.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub welch: StatResult,
    pub paired: StatResult,
    /// Pooled over seeds.
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub cell: String,
    /// Mean over cue-annotated test instances, per seed.
    pub rho: Stat,
    /// Instances with a defined correlation, summed over seeds.
    pub n_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTypeRow {
    pub cell: String,
    pub answer_type: AnswerType,
    pub test: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub subset_fraction: f64,
    pub train: Stat,
    pub test: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset_seed: u64,
    pub dataset_config: GenerationConfig,
    pub suite: SuiteConfig,
    pub subset_count: usize,
    pub accuracy: Vec<AccuracyRow>,
    pub significance: Vec<Comparison>,
    pub spearman: Vec<SpearmanRow>,
    pub answer_types: Vec<AnswerTypeRow>,
    pub subset_sweep: Vec<SweepRow>,
}

impl ExperimentReport {
    pub fn row(&self, bundle: BundleKind, cell: &str) -> Option<&AccuracyRow> {
        self.accuracy.iter().find(|r| r.bundle == bundle && r.cell == cell)
    }

    pub fn comparison(&self, a: &str, b: &str) -> Option<&Comparison> {
        self.significance.iter().find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }
}

/// Per-seed output of one cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub cpig: Option<f64>,
    pub spearman: Option<f64>,
    pub spearman_defined: usize,
    pub by_type: BTreeMap<AnswerType, f64>,
    pub reporting_epoch: usize,
    pub log: Vec<train::EpochLog>,
    pub train_records: Vec<PredictionRecord>,
    pub eval_records: Vec<PredictionRecord>,
}

/// Everything a suite run produces. `report` is the deterministic summary.
pub struct SuiteOutput {
    pub report: ExperimentReport,
    /// Keyed by (bundle, cell), one entry per seed (`Err` on failure).
    pub runs: BTreeMap<(BundleKind, String), Vec<std::result::Result<CellRun, String>>>,
    pub pretrain_logs: BTreeMap<(BundleKind, u64), Vec<train::EpochLog>>,
}

impl SuiteOutput {
    /// All prediction records in a stable order.
    pub fn records(&self) -> Vec<PredictionRecord> {
        let mut out = Vec::new();
        for runs in self.runs.values() {
            for run in runs.iter().flatten() {
                out.extend(run.train_records.iter().cloned());
                out.extend(run.eval_records.iter().cloned());
            }
        }
        out
    }
}

pub fn model_config(bundle: &DatasetBundle, p: &PretrainConfig) -> ModelConfig {
    ModelConfig {
        d: bundle.config().d,
        vocab: bundle.header.vocab_size,
        answers: bundle.n_answers(),
        hidden: p.hidden,
        activation: p.activation,
        project_activation: p.project_activation,
    }
}

fn run_id(bundle: BundleKind, cell: &str, seed: u64) -> String {
    format!("{}-{}-s{}", bundle.as_str(), cell, seed)
}

fn evaluate_cell(
    ck: &Checkpoint,
    bundle: &DatasetBundle,
    kind: BundleKind,
    cell: &str,
    seed: u64,
    reporting_epoch: usize,
    log: Vec<train::EpochLog>,
) -> Result<CellRun> {
    let (tr_split, ev_split) = kind.splits();
    let id = run_id(kind, cell, seed);
    let (train_records, _) = train::predict_records(ck, bundle.split(tr_split), &id, cell, tr_split.as_str())?;
    let eval_instances = bundle.split(ev_split);
    let (eval_records, gt_sens) = train::predict_records(ck, eval_instances, &id, cell, ev_split.as_str())?;
    let acc_eval = metrics::accuracy(&eval_records)?;
    let (rho_sum, rho_n) = eval_instances
        .iter()
        .zip(&gt_sens)
        .filter(|(i, _)| i.has_cues)
        .filter_map(|(i, s)| metrics::spearman(s, &i.gt_relevance).ok().flatten())
        .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
    Ok(CellRun {
        train_accuracy: metrics::accuracy(&train_records)?.overall,
        eval_accuracy: acc_eval.overall,
        cpig: metrics::cpig(&eval_records, eval_instances)?,
        spearman: (rho_n > 0).then(|| rho_sum / rho_n as f64),
        spearman_defined: rho_n,
        by_type: acc_eval.by_answer_type,
        reporting_epoch,
        log,
        train_records,
        eval_records,
    })
}

fn bundle_cells(cfg: &SuiteConfig, kind: BundleKind) -> &[CellSpec] {
    match kind {
        BundleKind::Shifted => &cfg.cells,
        BundleKind::Control => &cfg.control_cells,
    }
}

pub fn run_suite(bundle: &DatasetBundle, cfg: &SuiteConfig) -> Result<SuiteOutput> {
    cfg.validate(bundle.config().k)?;
    let mcfg = model_config(bundle, &cfg.pretrain);
    let mut kinds = vec![BundleKind::Shifted];
    if !cfg.control_cells.is_empty() {
        kinds.push(BundleKind::Control);
    }

    let pre_tasks: Vec<(BundleKind, u64)> = kinds.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    let pretrained: Vec<Result<train::TrainOutcome>> = pre_tasks
        .par_iter()
        .map(|&(kind, seed)| {
            let (tr, ev) = kind.splits();
            train::pretrain(&cfg.pretrain, &mcfg, bundle.split(tr), bundle.split(ev), seed, &run_id(kind, BASELINE, seed))
        })
        .collect();
    let mut bases: BTreeMap<(BundleKind, u64), train::TrainOutcome> = BTreeMap::new();
    for (task, out) in pre_tasks.iter().zip(pretrained) {
        // Without a pretrained model nothing downstream can run.
        bases.insert(*task, out?);
    }

    struct Task<'a> {
        kind: BundleKind,
        seed: u64,
        cell: Option<&'a CellSpec>,
    }
    let mut tasks = Vec::new();
    for &kind in &kinds {
        for &seed in &cfg.seeds {
            tasks.push(Task { kind, seed, cell: None });
            for c in bundle_cells(cfg, kind) {
                tasks.push(Task { kind, seed, cell: Some(c) });
            }
        }
    }
    let results: Vec<std::result::Result<CellRun, String>> = tasks
        .par_iter()
        .map(|t| {
            let base = &bases[&(t.kind, t.seed)];
            let (tr, ev) = t.kind.splits();
            let run = || -> Result<CellRun> {
                match t.cell {
                    None => evaluate_cell(&base.checkpoint, bundle, t.kind, BASELINE, t.seed, 0, vec![]),
                    Some(c) => {
                        let out = train::finetune(
                            &base.checkpoint,
                            &c.finetune,
                            bundle.split(tr),
                            bundle.split(ev),
                            t.seed,
                            &run_id(t.kind, &c.label, t.seed),
                        )?;
                        evaluate_cell(&out.checkpoint, bundle, t.kind, &c.label, t.seed, out.reporting_epoch, out.log)
                    }
                }
            };
            run().map_err(|e| e.to_string())
        })
        .collect();

    let mut runs: BTreeMap<(BundleKind, String), Vec<std::result::Result<CellRun, String>>> = BTreeMap::new();
    for (t, r) in tasks.iter().zip(results) {
        let label = t.cell.map_or(BASELINE.to_string(), |c| c.label.clone());
        runs.entry((t.kind, label)).or_default().push(r);
    }
    let report = reduce(bundle, cfg, &runs)?;
    let pretrain_logs = bases.into_iter().map(|(k, v)| (k, v.log)).collect();
    Ok(SuiteOutput { report, runs, pretrain_logs })
}

fn ok_runs(runs: &[std::result::Result<CellRun, String>]) -> Option<Vec<&CellRun>> {
    runs.iter().map(|r| r.as_ref().ok()).collect()
}

fn reduce(
    bundle: &DatasetBundle,
    cfg: &SuiteConfig,
    runs: &BTreeMap<(BundleKind, String), Vec<std::result::Result<CellRun, String>>>,
) -> Result<ExperimentReport> {
    let n_test = bundle.test.len();
    let subset_count = cfg.subset_count.unwrap_or_else(|| metrics::default_subset_count(n_test));

    let mut ordered: Vec<(BundleKind, Option<&CellSpec>)> = vec![(BundleKind::Shifted, None)];
    ordered.extend(cfg.cells.iter().map(|c| (BundleKind::Shifted, Some(c))));
    if !cfg.control_cells.is_empty() {
        ordered.push((BundleKind::Control, None));
        ordered.extend(cfg.control_cells.iter().map(|c| (BundleKind::Control, Some(c))));
    }

    let label = |c: Option<&CellSpec>| c.map_or(BASELINE.to_string(), |c| c.label.clone());
    let mut accuracy = Vec::new();
    let mut spearman = Vec::new();
    let mut answer_types = Vec::new();
    let mut subset_sweep = Vec::new();
    for &(kind, cell) in &ordered {
        let name = label(cell);
        let seeds = &runs[&(kind, name.clone())];
        let failures: Vec<String> = seeds.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
        let good: Vec<&CellRun> = seeds.iter().filter_map(|r| r.as_ref().ok()).collect();
        let ft = cell.map(|c| &c.finetune);
        let method = ft.map_or(Method::Baseline, |f| f.loss.method);
        let uses_subset = matches!(method, Method::ZeroOut) || (method == Method::Baseline && ft.is_some());
        let cpigs: Vec<f64> = good.iter().filter_map(|r| r.cpig).collect();
        accuracy.push(AccuracyRow {
            bundle: kind,
            cell: name.clone(),
            method,
            variant: ft.and_then(|f| f.cue_variant).filter(|_| matches!(method, Method::Hint | Method::Scr)),
            subset_fraction: ft.filter(|_| uses_subset).map(|f| f.subset_fraction),
            subset_mode: ft.filter(|_| uses_subset).map(|f| f.subset_mode),
            train: Stat::of(good.iter().map(|r| r.train_accuracy).collect()),
            eval: Stat::of(good.iter().map(|r| r.eval_accuracy).collect()),
            cpig: (!cpigs.is_empty()).then(|| Stat::of(cpigs)),
            reporting_epochs: good.iter().map(|r| r.reporting_epoch).collect(),
            failures: failures.clone(),
        });
        if kind != BundleKind::Shifted || !failures.is_empty() {
            continue;
        }
        let rhos: Vec<f64> = good.iter().filter_map(|r| r.spearman).collect();
        spearman.push(SpearmanRow {
            cell: name.clone(),
            rho: Stat::of(rhos),
            n_defined: good.iter().map(|r| r.spearman_defined).sum(),
        });
        for t in AnswerType::ALL {
            let vals: Vec<f64> = good.iter().filter_map(|r| r.by_type.get(&t).copied()).collect();
            if !vals.is_empty() {
                answer_types.push(AnswerTypeRow { cell: name.clone(), answer_type: t, test: Stat::of(vals) });
            }
        }
        if let Some(f) = ft.filter(|f| f.loss.method == Method::ZeroOut && f.subset_mode == SubsetMode::Fixed) {
            subset_sweep.push(SweepRow {
                cell: name.clone(),
                subset_fraction: f.subset_fraction,
                train: Stat::of(good.iter().map(|r| r.train_accuracy).collect()),
                test: Stat::of(good.iter().map(|r| r.eval_accuracy).collect()),
            });
        }
    }
    subset_sweep.sort_by(|a, b| a.subset_fraction.total_cmp(&b.subset_fraction));

    // Significance: every pair within a method and every cell against the baseline.
    let mut pairs: Vec<(String, String)> = Vec::new();
    let shifted: Vec<&CellSpec> = cfg.cells.iter().collect();
    for (i, a) in shifted.iter().enumerate() {
        for b in &shifted[i + 1..] {
            if a.finetune.loss.method == b.finetune.loss.method {
                pairs.push((a.label.clone(), b.label.clone()));
            }
        }
    }
    for c in &shifted {
        pairs.push((c.label.clone(), BASELINE.to_string()));
    }
    let mut significance = Vec::new();
    for (a, b) in pairs {
        let (Some(ra), Some(rb)) =
            (ok_runs(&runs[&(BundleKind::Shifted, a.clone())]), ok_runs(&runs[&(BundleKind::Shifted, b.clone())]))
        else {
            continue;
        };
        let ra: Vec<&[PredictionRecord]> = ra.iter().map(|r| r.eval_records.as_slice()).collect();
        let rb: Vec<&[PredictionRecord]> = rb.iter().map(|r| r.eval_records.as_slice()).collect();
        significance.push(compare_runs(&a, &b, &ra, &rb, subset_count, cfg.stats_seed)?);
    }

    Ok(ExperimentReport {
        dataset_seed: bundle.header.seed,
        dataset_config: bundle.header.config.clone(),
        suite: cfg.clone(),
        subset_count,
        accuracy,
        significance,
        spearman,
        answer_types,
        subset_sweep,
    })
}

/// Convenience for single runs: records for `instances` under `label`.
/// Welch and paired t-tests on subset accuracy samples, plus correctness
/// overlap pooled over runs paired in order (run i of `a` with run i of `b`).
pub fn compare_runs(
    a: &str,
    b: &str,
    runs_a: &[&[PredictionRecord]],
    runs_b: &[&[PredictionRecord]],
    subset_count: usize,
    seed: u64,
) -> Result<Comparison> {
    if runs_a.len() != runs_b.len() {
        return Err(Error::Alignment(format!("{} runs against {}", runs_a.len(), runs_b.len())));
    }
    let sa = metrics::subset_accuracy_samples(runs_a, subset_count, seed)?;
    let sb = metrics::subset_accuracy_samples(runs_b, subset_count, seed)?;
    let (mut same, mut total) = (0.0, 0.0);
    for (x, y) in runs_a.iter().zip(runs_b) {
        let n = x.len() as f64;
        same += metrics::overlap(x, y)? * n / 100.0;
        total += n;
    }
    Ok(Comparison {
        a: a.to_string(),
        b: b.to_string(),
        welch: metrics::welch_t_test(&sa, &sb)?,
        paired: metrics::paired_t_test(&sa, &sb)?,
        overlap: 100.0 * same / total,
    })
}

pub fn records_for(ck: &Checkpoint, instances: &[Instance], label: &str, split: Split) -> Result<Vec<PredictionRecord>> {
    Ok(train::predict_records(ck, instances, &ck.run_id, label, split.as_str())?.0)
}
