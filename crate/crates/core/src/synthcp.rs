//! Synthetic changing-priors VQA data.
//!
//! Every instance has a question type (the first question token), K region
//! feature vectors and a ground-truth answer. Exactly three regions carry the
//! answer's template vector plus noise; the rest are pure noise. Train and
//! test draw answers from different per-type priors, the control splits both
//! use the train prior.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const TOP_REGIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    YesNo,
    Number,
    Other,
}

impl AnswerType {
    pub const ALL: [AnswerType; 3] = [AnswerType::YesNo, AnswerType::Number, AnswerType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::YesNo => "yesno",
            AnswerType::Number => "number",
            AnswerType::Other => "other",
        }
    }

    /// Question types cycle through the three families.
    pub fn of_question_type(t: usize) -> Self {
        Self::ALL[t % 3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    ControlTrain,
    ControlVal,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Test, Split::ControlTrain, Split::ControlVal];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::ControlTrain => "control_train",
            Split::ControlVal => "control_val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    pub split: Split,
    pub question_tokens: Vec<usize>,
    pub question_type: usize,
    pub regions: Vec<Vec<f64>>,
    pub gt_answer: usize,
    pub answer_type: AnswerType,
    pub gt_relevance: Vec<f64>,
    pub has_cues: bool,
}

impl Instance {
    /// Indices of the three most relevant regions, in descending relevance.
    pub fn top_regions(&self) -> [usize; TOP_REGIONS] {
        let order = argsort_desc(&self.gt_relevance);
        [order[0], order[1], order[2]]
    }
}

/// Indices sorted by descending value, ties broken by lower index.
pub fn argsort_desc(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}

fn default_prior_skew() -> f64 {
    0.3
}
fn default_question_length() -> usize {
    4
}
fn default_filler_tokens() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_control: usize,
    /// Size of the control validation split; `n_test` when absent.
    #[serde(default)]
    pub n_control_val: Option<usize>,
    pub k: usize,
    pub d: usize,
    pub n_question_types: usize,
    pub answers_per_type: usize,
    /// beta: 0 keeps test priors equal to train, 1 moves the head answer fully.
    pub shift_strength: f64,
    /// sigma of the Gaussian region noise.
    pub noise: f64,
    pub cue_fraction: f64,
    /// gamma: tail mass of each per-type prior.
    #[serde(default = "default_prior_skew")]
    pub prior_skew: f64,
    #[serde(default = "default_question_length")]
    pub question_length: usize,
    #[serde(default = "default_filler_tokens")]
    pub n_filler_tokens: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_test: 2000,
            n_control: 5000,
            n_control_val: None,
            k: 8,
            d: 16,
            n_question_types: 6,
            answers_per_type: 7,
            shift_strength: 1.0,
            noise: 1.0,
            cue_fraction: 0.09,
            prior_skew: default_prior_skew(),
            question_length: default_question_length(),
            n_filler_tokens: default_filler_tokens(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 4 {
            return bad("k must be at least 4");
        }
        if self.answers_per_type < 2 {
            return bad("answers_per_type must be at least 2");
        }
        if self.n_train == 0 || self.n_test == 0 || self.n_control == 0 || self.n_control_val == Some(0) {
            return bad("split sizes must be at least 1");
        }
        if self.d == 0 || self.n_question_types == 0 || self.question_length == 0 {
            return bad("d, n_question_types and question_length must be positive");
        }
        if !(0.0..=1.0).contains(&self.shift_strength) {
            return bad("shift_strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.prior_skew) {
            return bad("prior_skew must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cue_fraction) {
            return bad("cue_fraction must lie in [0, 1]");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        if self.question_length > 1 && self.n_filler_tokens == 0 {
            return bad("questions longer than one token need filler tokens");
        }
        Ok(())
    }

    pub fn n_control_val(&self) -> usize {
        self.n_control_val.unwrap_or(self.n_test)
    }

    pub fn vocab_size(&self) -> usize {
        self.n_question_types + self.n_filler_tokens
    }
}

/// Everything in the dataset file except the instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub config: GenerationConfig,
    pub seed: u64,
    pub answer_vocabulary: Vec<String>,
    /// Answer ids allowed for each question type.
    pub answer_sets: Vec<Vec<usize>>,
    /// Unit-norm template vector per answer.
    pub answer_templates: Vec<Vec<f64>>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub header: BundleHeader,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub control_train: Vec<Instance>,
    pub control_val: Vec<Instance>,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::ControlTrain => &self.control_train,
            Split::ControlVal => &self.control_val,
        }
    }

    pub fn n_answers(&self) -> usize {
        self.header.answer_vocabulary.len()
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.header.config
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", crate::json::to_string(&self.header)?)?;
        for split in Split::ALL {
            for inst in self.split(split) {
                writeln!(w, "{}", crate::json::to_string(inst)?)?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let header: BundleHeader = serde_json::from_str(&first)?;
        let mut bundle = DatasetBundle { header, train: vec![], test: vec![], control_train: vec![], control_val: vec![] };
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: Instance =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))?;
            match inst.split {
                Split::Train => bundle.train.push(inst),
                Split::Test => bundle.test.push(inst),
                Split::ControlTrain => bundle.control_train.push(inst),
                Split::ControlVal => bundle.control_val.push(inst),
            }
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Per-type categorical prior: head answer at `head` with mass
/// `(1 - gamma) + gamma / n`, the rest uniform.
fn head_prior(n: usize, head: usize, gamma: f64) -> Vec<f64> {
    let mut p = vec![gamma / n as f64; n];
    p[head] += 1.0 - gamma;
    p
}

/// Answer prior within a type's answer set for the given split.
pub fn type_prior(cfg: &GenerationConfig, set_len: usize, shifted: bool) -> Vec<f64> {
    let train = head_prior(set_len, 0, cfg.prior_skew);
    if !shifted {
        return train;
    }
    let moved = head_prior(set_len, 1, cfg.prior_skew);
    let b = cfg.shift_strength;
    train.iter().zip(&moved).map(|(a, m)| (1.0 - b) * a + b * m).collect()
}

fn build_answer_sets(cfg: &GenerationConfig) -> (Vec<String>, Vec<Vec<usize>>) {
    let mut vocab = vec!["yes".to_string(), "no".to_string()];
    let mut sets = Vec::with_capacity(cfg.n_question_types);
    let mut numbers = 0usize;
    for t in 0..cfg.n_question_types {
        match AnswerType::of_question_type(t) {
            AnswerType::YesNo => sets.push(vec![0, 1]),
            family => {
                let start = vocab.len();
                for j in 0..cfg.answers_per_type {
                    vocab.push(match family {
                        AnswerType::Number => {
                            numbers += 1;
                            (numbers - 1).to_string()
                        }
                        _ => format!("t{t}_{j}"),
                    });
                }
                sets.push((start..vocab.len()).collect());
            }
        }
    }
    (vocab, sets)
}

pub fn generate(cfg: &GenerationConfig, seed: u64) -> Result<DatasetBundle> {
    cfg.validate()?;
    let (answer_vocabulary, answer_sets) = build_answer_sets(cfg);
    let n_answers = answer_vocabulary.len();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut trng = rng::stream(seed, &[0]);
    let answer_templates: Vec<Vec<f64>> = (0..n_answers)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.d).map(|_| normal.sample(&mut trng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let header = BundleHeader {
        config: cfg.clone(),
        seed,
        answer_vocabulary,
        answer_sets,
        answer_templates,
        vocab_size: cfg.vocab_size(),
    };

    let sizes = [cfg.n_train, cfg.n_test, cfg.n_control, cfg.n_control_val()];
    let mut next_id = 0;
    let mut splits = Vec::with_capacity(4);
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let shifted = split == Split::Test;
        splits.push(make_split(&header, split, sizes[i], next_id, shifted, rng::stream(seed, &[1, i as u64]))?);
        next_id += sizes[i];
    }
    let control_val = splits.pop().unwrap();
    let control_train = splits.pop().unwrap();
    let test = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(DatasetBundle { header, train, test, control_train, control_val })
}

fn make_split(
    header: &BundleHeader,
    split: Split,
    n: usize,
    first_id: usize,
    shifted: bool,
    mut rng: rand_chacha::ChaCha8Rng,
) -> Result<Vec<Instance>> {
    let cfg = &header.config;
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let low = Uniform::new(0.0, 0.3).expect("valid range");
    let high = Uniform::new(0.7, 1.0).expect("valid range");
    let samplers: Vec<WeightedIndex<f64>> = header
        .answer_sets
        .iter()
        .map(|s| WeightedIndex::new(type_prior(cfg, s.len(), shifted)).expect("positive weights"))
        .collect();

    let n_cues = (cfg.cue_fraction * n as f64).round() as usize;
    let cue_set: std::collections::HashSet<usize> = index::sample(&mut rng, n, n_cues.min(n)).into_iter().collect();

    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let question_type = rng.random_range(0..cfg.n_question_types);
        let set = &header.answer_sets[question_type];
        let gt_answer = set[samplers[question_type].sample(&mut rng)];
        let mut question_tokens = vec![question_type];
        for _ in 1..cfg.question_length {
            question_tokens.push(cfg.n_question_types + rng.random_range(0..cfg.n_filler_tokens));
        }
        let mut regions: Vec<Vec<f64>> =
            (0..cfg.k).map(|_| (0..cfg.d).map(|_| noise.sample(&mut rng)).collect()).collect();
        let mut gt_relevance: Vec<f64> = (0..cfg.k).map(|_| low.sample(&mut rng)).collect();
        for r in index::sample(&mut rng, cfg.k, TOP_REGIONS) {
            for (x, t) in regions[r].iter_mut().zip(&header.answer_templates[gt_answer]) {
                *x += t;
            }
            gt_relevance[r] = high.sample(&mut rng);
        }
        out.push(Instance {
            id: first_id + j,
            split,
            question_tokens,
            question_type,
            regions,
            gt_answer,
            answer_type: AnswerType::of_question_type(question_type),
            gt_relevance,
            has_cues: cue_set.contains(&j),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueVariant {
    Relevant,
    Irrelevant,
    FixedRandom,
    VariableRandom,
}

impl CueVariant {
    pub const ALL: [CueVariant; 4] =
        [CueVariant::Relevant, CueVariant::Irrelevant, CueVariant::FixedRandom, CueVariant::VariableRandom];

    pub fn as_str(self) -> &'static str {
        match self {
            CueVariant::Relevant => "relevant",
            CueVariant::Irrelevant => "irrelevant",
            CueVariant::FixedRandom => "fixed_random",
            CueVariant::VariableRandom => "variable_random",
        }
    }
}

impl std::str::FromStr for CueVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown cue variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueScores {
    pub instance_id: usize,
    pub scores: Vec<f64>,
    pub variant: CueVariant,
    pub epoch: usize,
}

const FIXED_CUE_TAG: u64 = 0xC0E1;
const VARIABLE_CUE_TAG: u64 = 0xC0E2;

pub fn cue_scores(instance: &Instance, variant: CueVariant, seed: u64, epoch: usize) -> CueScores {
    let k = instance.gt_relevance.len();
    let random = |path: &[u64]| -> Vec<f64> {
        let mut r = rng::stream(seed, path);
        (0..k).map(|_| r.random::<f64>()).collect()
    };
    let scores = match variant {
        CueVariant::Relevant => instance.gt_relevance.clone(),
        CueVariant::Irrelevant => instance.gt_relevance.iter().map(|s| 1.0 - s).collect(),
        CueVariant::FixedRandom => random(&[FIXED_CUE_TAG, instance.id as u64]),
        CueVariant::VariableRandom => random(&[VARIABLE_CUE_TAG, instance.id as u64, epoch as u64]),
    };
    CueScores { instance_id: instance.id, scores, variant, epoch }
}

/// Cue scores for every cue-annotated instance of `instances`.
pub fn assign_cues(instances: &[Instance], variant: CueVariant, seed: u64, epoch: usize) -> Vec<CueScores> {
    instances.iter().filter(|i| i.has_cues).map(|i| cue_scores(i, variant, seed, epoch)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    Fixed,
    Variable,
}

const SUBSET_TAG: u64 = 0x5B5E;

/// `ceil(r * |ids|)` ids drawn from `ids`, returned in ascending order.
/// Fixed mode ignores `epoch`.
pub fn select_loss_subset(ids: &[usize], r: f64, mode: SubsetMode, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Config(format!("subset fraction must lie in (0, 1], got {r}")));
    }
    let n = ids.len();
    let count = ((r * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let count = count.min(n);
    if count == n {
        let mut all = ids.to_vec();
        all.sort_unstable();
        return Ok(all);
    }
    let mut rng = match mode {
        SubsetMode::Fixed => rng::stream(seed, &[SUBSET_TAG]),
        SubsetMode::Variable => rng::stream(seed, &[SUBSET_TAG, 1, epoch as u64]),
    };
    let mut out: Vec<usize> = index::sample(&mut rng, n, count).into_iter().map(|i| ids[i]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Accuracy of the region-blind predictor that answers each question type
/// with its most frequent train answer. Returns percentages on (train, test).
pub fn modal_oracle_accuracy(bundle: &DatasetBundle) -> (f64, f64) {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for inst in &bundle.train {
        *counts.entry((inst.question_type, inst.gt_answer)).or_default() += 1;
    }
    let mut modal: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&(t, a), &c) in &counts {
        let e = modal.entry(t).or_insert((a, 0));
        if c > e.1 {
            *e = (a, c);
        }
    }
    let hit = |xs: &[Instance]| {
        let h = xs.iter().filter(|i| modal.get(&i.question_type).map(|m| m.0) == Some(i.gt_answer)).count();
        100.0 * h as f64 / xs.len().max(1) as f64
    };
    (hit(&bundle.train), hit(&bundle.test))
}
