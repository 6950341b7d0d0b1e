//! Resolved per-command configurations. Each command starts from its
//! defaults or from `--config FILE` (the same JSON it echoes as
//! `config.json`), then applies any flags given on the command line.

use std::path::{Path, PathBuf};

use clap::Args;
use groundcheck_core::losses::Method;
use groundcheck_core::model::Activation;
use groundcheck_core::runner::suite::BundleKind;
use groundcheck_core::runner::{profile, FinetuneConfig, PretrainConfig, Selection, SuiteConfig};
use groundcheck_core::synthcp::{CueVariant, GenerationConfig, SubsetMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Parse a snake_case enum value, accepting dashes for underscores.
pub fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn required(p: &Path, flag: &str) -> Result<(), CliError> {
    if p.as_os_str().is_empty() {
        return Err(CliError::new("config", format!("{flag} is required (flag or config file)")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateRun {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: GenerationConfig,
}

impl Default for GenerateRun {
    fn default() -> Self {
        GenerateRun { seed: 0, out: PathBuf::new(), dataset: GenerationConfig::default() }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON config file (same shape as the echoed config.json).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_control: Option<usize>,
    #[arg(long)]
    n_control_val: Option<usize>,
    /// Regions per image.
    #[arg(long)]
    k: Option<usize>,
    /// Region feature dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    question_types: Option<usize>,
    #[arg(long)]
    answers_per_type: Option<usize>,
    /// 0 keeps test priors equal to train, 1 moves each head answer fully.
    #[arg(long)]
    shift_strength: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    cue_fraction: Option<f64>,
    #[arg(long)]
    prior_skew: Option<f64>,
    #[arg(long)]
    question_length: Option<usize>,
    #[arg(long)]
    filler_tokens: Option<usize>,
}

impl GenerateArgs {
    pub fn resolve(self) -> Result<GenerateRun, CliError> {
        let mut r: GenerateRun = load_or_default(self.config.as_deref())?;
        let d = &mut r.dataset;
        set(&mut r.out, self.out);
        set(&mut r.seed, self.seed);
        set(&mut d.n_train, self.n_train);
        set(&mut d.n_test, self.n_test);
        set(&mut d.n_control, self.n_control);
        if self.n_control_val.is_some() {
            d.n_control_val = self.n_control_val;
        }
        set(&mut d.k, self.k);
        set(&mut d.d, self.d);
        set(&mut d.n_question_types, self.question_types);
        set(&mut d.answers_per_type, self.answers_per_type);
        set(&mut d.shift_strength, self.shift_strength);
        set(&mut d.noise, self.noise);
        set(&mut d.cue_fraction, self.cue_fraction);
        set(&mut d.prior_skew, self.prior_skew);
        set(&mut d.question_length, self.question_length);
        set(&mut d.n_filler_tokens, self.filler_tokens);
        required(&r.out, "--out")?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// Which split pair to train and evaluate on.
    pub bundle: BundleKind,
    pub pretrain: PretrainConfig,
}

impl Default for PretrainRun {
    fn default() -> Self {
        PretrainRun {
            data: PathBuf::new(),
            out: PathBuf::new(),
            seed: 0,
            bundle: BundleKind::Shifted,
            pretrain: profile::desk().pretrain,
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// dataset.jsonl written by `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// shifted (train/test) or control (control_train/control_val).
    #[arg(long, value_parser = enum_arg::<BundleKind>)]
    bundle: Option<BundleKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_parser = enum_arg::<Activation>)]
    activation: Option<Activation>,
    #[arg(long)]
    project_activation: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl PretrainArgs {
    pub fn resolve(self) -> Result<PretrainRun, CliError> {
        let mut r: PretrainRun = load_or_default(self.config.as_deref())?;
        set(&mut r.data, self.data);
        set(&mut r.out, self.out);
        set(&mut r.seed, self.seed);
        set(&mut r.bundle, self.bundle);
        let p = &mut r.pretrain;
        set(&mut p.hidden, self.hidden);
        set(&mut p.activation, self.activation);
        set(&mut p.project_activation, self.project_activation);
        set(&mut p.learning_rate, self.learning_rate);
        set(&mut p.momentum, self.momentum);
        set(&mut p.batch_size, self.batch_size);
        set(&mut p.epochs, self.epochs);
        required(&r.data, "--data")?;
        required(&r.out, "--out")?;
        Ok(r)
    }
}

/// The desk profile's settings for `method` (hint/scr with relevant cues).
pub fn method_template(method: Method) -> FinetuneConfig {
    let desk = profile::desk();
    desk.cells
        .iter()
        .chain(&desk.control_cells)
        .find(|c| c.finetune.loss.method == method)
        .map(|c| c.finetune.clone())
        .expect("desk profile covers every method")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneRun {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    /// Seed for cue sampling, subsets and batch order; the checkpoint's seed when absent.
    pub seed: Option<u64>,
    pub bundle: BundleKind,
    pub finetune: FinetuneConfig,
    /// Write predictions after every epoch, not only at the reporting epoch.
    pub dump_every_epoch: bool,
}

impl Default for FinetuneRun {
    fn default() -> Self {
        FinetuneRun {
            data: PathBuf::new(),
            checkpoint: PathBuf::new(),
            out: PathBuf::new(),
            seed: None,
            bundle: BundleKind::Shifted,
            finetune: method_template(Method::Hint),
            dump_every_epoch: true,
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// checkpoint.json written by `pretrain`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = enum_arg::<BundleKind>)]
    bundle: Option<BundleKind>,
    /// hint, scr, zero-out or baseline. Switching method starts from that
    /// method's default settings.
    #[arg(long, value_parser = enum_arg::<Method>)]
    method: Option<Method>,
    /// relevant, irrelevant, fixed-random or variable-random.
    #[arg(long, value_parser = enum_arg::<CueVariant>)]
    variant: Option<CueVariant>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_over_subset: Option<bool>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    subset_fraction: Option<f64>,
    #[arg(long, value_parser = enum_arg::<SubsetMode>)]
    subset_mode: Option<SubsetMode>,
    /// best-eval or last.
    #[arg(long, value_parser = enum_arg::<Selection>)]
    selection: Option<Selection>,
    #[arg(long)]
    phase2_epochs: Option<usize>,
    #[arg(long)]
    phase2_learning_rate: Option<f64>,
    #[arg(long)]
    full_train_bce: Option<bool>,
    #[arg(long)]
    loss_weight: Option<f64>,
    #[arg(long)]
    phase2_weight: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_influential: Option<usize>,
    #[arg(long)]
    n_competitors: Option<usize>,
    #[arg(long)]
    vqa_loss_weight: Option<f64>,
    #[arg(long)]
    normalize_sensitivities: Option<bool>,
    #[arg(long)]
    dump_every_epoch: Option<bool>,
}

impl FinetuneArgs {
    pub fn resolve(self) -> Result<FinetuneRun, CliError> {
        let mut r: FinetuneRun = load_or_default(self.config.as_deref())?;
        set(&mut r.data, self.data);
        set(&mut r.checkpoint, self.checkpoint);
        set(&mut r.out, self.out);
        if self.seed.is_some() {
            r.seed = self.seed;
        }
        set(&mut r.bundle, self.bundle);
        set(&mut r.dump_every_epoch, self.dump_every_epoch);
        if let Some(m) = self.method {
            if m != r.finetune.loss.method {
                r.finetune = method_template(m);
            }
        }
        let f = &mut r.finetune;
        if self.variant.is_some() {
            f.cue_variant = self.variant;
        }
        set(&mut f.learning_rate, self.learning_rate);
        set(&mut f.lr_over_subset, self.lr_over_subset);
        set(&mut f.momentum, self.momentum);
        set(&mut f.batch_size, self.batch_size);
        set(&mut f.epochs, self.epochs);
        set(&mut f.subset_fraction, self.subset_fraction);
        set(&mut f.subset_mode, self.subset_mode);
        set(&mut f.selection, self.selection);
        set(&mut f.phase2_epochs, self.phase2_epochs);
        set(&mut f.phase2_learning_rate, self.phase2_learning_rate);
        set(&mut f.full_train_bce, self.full_train_bce);
        let l = &mut f.loss;
        set(&mut l.loss_weight, self.loss_weight);
        set(&mut l.phase2_weight, self.phase2_weight);
        set(&mut l.lambda, self.lambda);
        set(&mut l.n_influential, self.n_influential);
        set(&mut l.n_competitors, self.n_competitors);
        set(&mut l.vqa_loss_weight, self.vqa_loss_weight);
        set(&mut l.normalize_sensitivities, self.normalize_sensitivities);
        required(&r.data, "--data")?;
        required(&r.checkpoint, "--checkpoint")?;
        required(&r.out, "--out")?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    PaperScale,
    BaselineOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteRun {
    pub data: PathBuf,
    pub out: PathBuf,
    /// Write every run's prediction records to predictions.csv.
    pub write_predictions: bool,
    pub suite: SuiteConfig,
}

impl Default for SuiteRun {
    fn default() -> Self {
        SuiteRun { data: PathBuf::new(), out: PathBuf::new(), write_predictions: true, suite: profile::desk() }
    }
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Starting point when no config file is given: desk, paper-scale or baseline-only.
    #[arg(long, value_parser = enum_arg::<Profile>)]
    profile: Option<Profile>,
    /// Run seeds 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Keep only cells whose label starts with one of these prefixes.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    #[arg(long)]
    subset_count: Option<usize>,
    #[arg(long)]
    stats_seed: Option<u64>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    pretrain_learning_rate: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    write_predictions: Option<bool>,
}

impl SuiteArgs {
    pub fn resolve(self) -> Result<SuiteRun, CliError> {
        if self.config.is_some() && self.profile.is_some() {
            return Err(CliError::new("config", "--profile and --config are exclusive"));
        }
        let mut r: SuiteRun = load_or_default(self.config.as_deref())?;
        match self.profile {
            Some(Profile::Desk) | None => {}
            Some(Profile::PaperScale) => r.suite = profile::paper_scale(),
            Some(Profile::BaselineOnly) => r.suite = profile::baseline_only(0),
        }
        set(&mut r.data, self.data);
        set(&mut r.out, self.out);
        set(&mut r.write_predictions, self.write_predictions);
        let s = &mut r.suite;
        if let Some(n) = self.seeds {
            s.seeds = (0..n).collect();
        }
        if let Some(prefixes) = self.only {
            let keep = |label: &str| prefixes.iter().any(|p| label.starts_with(p.as_str()));
            s.cells.retain(|c| keep(&c.label));
            s.control_cells.retain(|c| keep(&c.label));
        }
        if self.subset_count.is_some() {
            s.subset_count = self.subset_count;
        }
        set(&mut s.stats_seed, self.stats_seed);
        set(&mut s.pretrain.epochs, self.pretrain_epochs);
        set(&mut s.pretrain.learning_rate, self.pretrain_learning_rate);
        set(&mut s.pretrain.hidden, self.hidden);
        required(&r.data, "--data")?;
        required(&r.out, "--out")?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportRun {
    /// report.json from a suite run.
    pub report: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ReportArgs {
    pub fn resolve(self) -> Result<ReportRun, CliError> {
        let mut r: ReportRun = load_or_default(self.config.as_deref())?;
        set(&mut r.report, self.report);
        set(&mut r.out, self.out);
        required(&r.report, "--report")?;
        required(&r.out, "--out")?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsRun {
    /// predictions.csv files; runs are told apart by run_id.
    pub a: PathBuf,
    pub b: PathBuf,
    /// Records from this split only.
    pub split: String,
    /// Subset count; min(500, n/10) when absent.
    pub subsets: Option<usize>,
    pub seed: u64,
    /// Where to write stats.json; stdout only when absent.
    pub out: Option<PathBuf>,
}

impl Default for StatsRun {
    fn default() -> Self {
        StatsRun { a: PathBuf::new(), b: PathBuf::new(), split: "test".into(), subsets: None, seed: 0x5eed, out: None }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    subsets: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl StatsArgs {
    pub fn resolve(self) -> Result<StatsRun, CliError> {
        let mut r: StatsRun = load_or_default(self.config.as_deref())?;
        set(&mut r.a, self.a);
        set(&mut r.b, self.b);
        set(&mut r.split, self.split);
        if self.subsets.is_some() {
            r.subsets = self.subsets;
        }
        set(&mut r.seed, self.seed);
        if self.out.is_some() {
            r.out = self.out;
        }
        required(&r.a, "--a")?;
        required(&r.b, "--b")?;
        Ok(r)
    }
}
