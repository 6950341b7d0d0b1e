//! Accuracy, agreement, grounding and significance measures over per-instance
//! prediction records.

pub mod special;

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synthcp::{AnswerType, Instance};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: usize,
    pub run_id: String,
    pub variant: String,
    pub split: String,
    pub predicted_answer: usize,
    pub correct: bool,
    /// argmax_i S(a_pred, v_i).
    pub top_sensitive_region: usize,
    pub answer_type: AnswerType,
}

pub const RECORD_HEADER: [&str; 8] =
    ["instance_id", "run_id", "variant", "split", "predicted_answer", "correct", "top_sensitive_region", "answer_type"];

pub fn write_records<W: Write>(w: W, records: &[PredictionRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.instance_id.to_string(),
            r.run_id.clone(),
            r.variant.clone(),
            r.split.clone(),
            r.predicted_answer.to_string(),
            (r.correct as u8).to_string(),
            r.top_sensitive_region.to_string(),
            r.answer_type.as_str().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::Parse(format!("unexpected prediction header {header:?}")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let answer_type = AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str() == &row[7])
            .ok_or_else(|| Error::Parse(format!("unknown answer type {:?}", &row[7])))?;
        let correct = match &row[5] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("correct must be 0 or 1, got {other:?}"))),
        };
        out.push(PredictionRecord {
            instance_id: int(&row[0])?,
            run_id: row[1].to_string(),
            variant: row[2].to_string(),
            split: row[3].to_string(),
            predicted_answer: int(&row[4])?,
            correct,
            top_sensitive_region: int(&row[6])?,
            answer_type,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub overall: f64,
    pub by_answer_type: BTreeMap<AnswerType, f64>,
}

/// Percent correct overall and per answer type.
pub fn accuracy(records: &[PredictionRecord]) -> Result<AccuracySummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to score".into()));
    }
    let mut by: BTreeMap<AnswerType, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = by.entry(r.answer_type).or_default();
        e.0 += r.correct as usize;
        e.1 += 1;
    }
    let hits = records.iter().filter(|r| r.correct).count();
    Ok(AccuracySummary {
        overall: 100.0 * hits as f64 / records.len() as f64,
        by_answer_type: by.into_iter().map(|(t, (h, n))| (t, 100.0 * h as f64 / n as f64)).collect(),
    })
}

fn correctness_by_id(records: &[PredictionRecord]) -> Result<BTreeMap<usize, bool>> {
    let mut m = BTreeMap::new();
    for r in records {
        if m.insert(r.instance_id, r.correct).is_some() {
            return Err(Error::Alignment(format!("instance {} appears twice", r.instance_id)));
        }
    }
    Ok(m)
}

/// Percent of instances on which both sides are correct or both incorrect.
pub fn overlap(a: &[PredictionRecord], b: &[PredictionRecord]) -> Result<f64> {
    let ma = correctness_by_id(a)?;
    let mb = correctness_by_id(b)?;
    if ma.len() != mb.len() || ma.keys().zip(mb.keys()).any(|(x, y)| x != y) {
        return Err(Error::Alignment("record sets cover different instances".into()));
    }
    if ma.is_empty() {
        return Err(Error::EmptyInput("no records to compare".into()));
    }
    let same = ma.values().zip(mb.values()).filter(|(x, y)| x == y).count();
    Ok(100.0 * same as f64 / ma.len() as f64)
}

/// Correctly predicted but improperly grounded: among correct records, the
/// percent whose most sensitive region is outside the instance's top-3
/// relevant regions. `None` when there are no correct records.
pub fn cpig(records: &[PredictionRecord], instances: &[Instance]) -> Result<Option<f64>> {
    let top: HashMap<usize, [usize; 3]> = instances.iter().map(|i| (i.id, i.top_regions())).collect();
    let mut correct = 0usize;
    let mut improper = 0usize;
    for r in records.iter().filter(|r| r.correct) {
        let t = top.get(&r.instance_id).ok_or_else(|| Error::Alignment(format!("no instance {}", r.instance_id)))?;
        correct += 1;
        improper += (!t.contains(&r.top_sensitive_region)) as usize;
    }
    Ok((correct > 0).then(|| 100.0 * improper as f64 / correct as f64))
}

/// Ranks starting at 1, ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties. `Ok(None)` when
/// either input is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("spearman inputs differ in length: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput("spearman needs at least two points".into()));
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    #[serde(deserialize_with = "crate::json::f64_or_nan")]
    pub t: f64,
    #[serde(deserialize_with = "crate::json::f64_or_nan")]
    pub dof: f64,
    /// Two-tailed.
    #[serde(deserialize_with = "crate::json::f64_or_nan")]
    pub p: f64,
    /// Zero variance made the statistic a convention rather than a test.
    pub degenerate: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

fn zero_variance(gap: f64, dof: f64) -> StatResult {
    if gap == 0.0 {
        StatResult { t: 0.0, dof, p: 1.0, degenerate: true }
    } else {
        StatResult { t: gap.signum() * f64::INFINITY, dof, p: 0.0, degenerate: true }
    }
}

/// Unequal-variance two-sample t-test with Welch-Satterthwaite dof.
pub fn welch_t_test(xs: &[f64], ys: &[f64]) -> Result<StatResult> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::EmptyInput("welch test needs at least two samples per side".into()));
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (ax, ay) = (vx / n, vy / m);
    let se2 = ax + ay;
    if se2 == 0.0 {
        return Ok(zero_variance(mx - my, n + m - 2.0));
    }
    let t = (mx - my) / se2.sqrt();
    let dof = se2 * se2 / (ax * ax / (n - 1.0) + ay * ay / (m - 1.0));
    Ok(StatResult { t, dof, p: special::t_two_tailed(t, dof), degenerate: false })
}

/// One-sample t-test on the paired differences `xs[i] - ys[i]`.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<StatResult> {
    if xs.len() != ys.len() {
        return Err(Error::Shape("paired samples differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput("paired test needs at least two pairs".into()));
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let (md, vd) = mean_var(&d);
    if vd == 0.0 {
        return Ok(zero_variance(md, n - 1.0));
    }
    let t = md / (vd / n).sqrt();
    Ok(StatResult { t, dof: n - 1.0, p: special::t_two_tailed(t, n - 1.0), degenerate: false })
}

const PARTITION_TAG: u64 = 0xBA27;

/// Random partition of `ids` into `b` cells whose sizes differ by at most one.
pub fn partition_ids(ids: &[usize], b: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if b == 0 || b > ids.len() {
        return Err(Error::Config(format!("cannot split {} instances into {b} subsets", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut rng::stream(seed, &[PARTITION_TAG]));
    let (base, extra) = (ids.len() / b, ids.len() % b);
    let mut cells = Vec::with_capacity(b);
    let mut start = 0;
    for c in 0..b {
        let len = base + (c < extra) as usize;
        cells.push(shuffled[start..start + len].to_vec());
        start += len;
    }
    Ok(cells)
}

/// Default subset count: `min(500, n / 10)`, at least 1.
pub fn default_subset_count(n: usize) -> usize {
    (n / 10).clamp(1, 500)
}

/// Partition the instances into `b` cells, score each cell per run and
/// average across runs. Values are fractions in [0, 1].
pub fn subset_accuracy_samples(runs: &[&[PredictionRecord]], b: usize, seed: u64) -> Result<Vec<f64>> {
    let first = runs.first().ok_or_else(|| Error::EmptyInput("no runs".into()))?;
    let maps = runs.iter().map(|r| correctness_by_id(r)).collect::<Result<Vec<_>>>()?;
    let ids: Vec<usize> = maps[0].keys().copied().collect();
    for m in &maps[1..] {
        if m.len() != ids.len() || m.keys().zip(&ids).any(|(a, b)| a != b) {
            return Err(Error::Alignment("runs cover different instances".into()));
        }
    }
    debug_assert_eq!(ids.len(), first.len());
    let cells = partition_ids(&ids, b, seed)?;
    Ok(cells
        .iter()
        .map(|cell| {
            let per_run: f64 = maps
                .iter()
                .map(|m| cell.iter().filter(|id| m[id]).count() as f64 / cell.len() as f64)
                .sum();
            per_run / maps.len() as f64
        })
        .collect())
}
