//! Training objectives: BCE, the zero-out regularizer, and the HINT and SCR
//! sensitivity hinges.
//!
//! Sensitivity losses take a `[B, K]` node (one row per instance) and return
//! the mean of the per-instance losses. A single instance is a batch of one.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::synthcp::argsort_desc;

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Hint,
    Scr,
    ZeroOut,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Hint => "hint",
            Method::Scr => "scr",
            Method::ZeroOut => "zero_out",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Method::Baseline, Method::Hint, Method::Scr, Method::ZeroOut]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: Method,
    /// Weight of the method's own term (HINT hinge, SCR phase-1 hinge, or the
    /// zero-target BCE).
    pub loss_weight: f64,
    /// Weight of the SCR phase-2 hinge.
    pub phase2_weight: f64,
    /// Zero-out coefficient lambda.
    pub lambda: f64,
    pub n_influential: usize,
    pub n_competitors: usize,
    pub vqa_loss_weight: f64,
    /// Divide each instance's sensitivities by their mean absolute value
    /// before the hinge.
    pub normalize_sensitivities: bool,
}

impl LossConfig {
    pub fn for_method(method: Method) -> Self {
        let loss_weight = match method {
            Method::Baseline => 0.0,
            Method::Hint => 2.0,
            Method::Scr => 3.0,
            Method::ZeroOut => 2.0,
        };
        Self {
            method,
            loss_weight,
            phase2_weight: 1000.0,
            lambda: 1.0,
            n_influential: 3,
            n_competitors: 5,
            vqa_loss_weight: 1.0,
            normalize_sensitivities: false,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, w) in [
            ("loss_weight", self.loss_weight),
            ("phase2_weight", self.phase2_weight),
            ("lambda", self.lambda),
            ("vqa_loss_weight", self.vqa_loss_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if self.n_influential >= k {
            return Err(Error::Config(format!("n_influential {} must be below K = {k}", self.n_influential)));
        }
        Ok(())
    }
}

/// Mean over all entries of `-[y ln p + (1-y) ln(1-p)]`, p clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(g: &mut Graph, scores: NodeId, targets: &Tensor) -> Result<NodeId> {
    if g.shape(scores) != targets.shape() {
        return Err(Error::Shape(format!("scores {:?} vs targets {:?}", g.shape(scores), targets.shape())));
    }
    if targets.data().iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::Config("targets must lie in [0, 1]".into()));
    }
    let p = g.clamp(scores, PROB_EPS, 1.0 - PROB_EPS)?;
    let y = g.constant(targets.clone());
    let one_minus_y = g.constant(targets.map(|v| 1.0 - v));
    let lp = g.log(p)?;
    let neg_p = g.neg(p)?;
    let q = g.offset(neg_p, 1.0)?;
    let lq = g.log(q)?;
    let a = g.mul(y, lp)?;
    let b = g.mul(one_minus_y, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.neg(m)
}

/// `bce(p, y) + lambda * bce(p, 0)`.
pub fn zero_out_loss(g: &mut Graph, scores: NodeId, targets: &Tensor, lambda: f64) -> Result<NodeId> {
    let main = bce_loss(g, scores, targets)?;
    let zero = bce_loss(g, scores, &Tensor::zeros(targets.shape()))?;
    let z = g.scale(zero, lambda)?;
    g.add(main, z)
}

/// One-hot targets for `answers` over `n_answers`.
pub fn one_hot(answers: &[usize], n_answers: usize) -> Result<Tensor> {
    crate::model::answer_mask(n_answers, answers)
}

/// Divide each row by its mean absolute value (plus a tiny floor).
pub fn normalize_rows(g: &mut Graph, s: NodeId) -> Result<NodeId> {
    let k = g.value(s).dims2().1 as f64;
    let a = g.abs(s)?;
    let total = g.sum_rows(a)?;
    let mean = g.scale(total, 1.0 / k)?;
    let floor = g.offset(mean, 1e-12)?;
    g.div(s, floor)
}

fn as_rows(g: &mut Graph, s: NodeId) -> Result<NodeId> {
    match g.value(s).rank() {
        1 => {
            let k = g.shape(s)[0];
            g.reshape(s, &[1, k])
        }
        2 => Ok(s),
        r => Err(Error::Rank(format!("sensitivities must be rank 1 or 2, got rank {r}"))),
    }
}

/// Mean over rows of `sum_{(i,j)} w[b,(i,j)] * max(0, s[b,j] - s[b,i])`.
/// `weights` is `[B, K*K]` with pair `(i, j)` at column `i*K + j`.
fn weighted_pair_hinge(g: &mut Graph, s: NodeId, weights: Vec<f64>) -> Result<NodeId> {
    let (b, k) = g.value(s).dims2();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(g.scalar(0.0));
    }
    let mut diff = vec![0.0; k * k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let col = i * k + j;
                diff[j * k * k + col] += 1.0;
                diff[i * k * k + col] -= 1.0;
            }
        }
    }
    let dm = g.constant(Tensor::matrix(k, k * k, diff)?);
    let gaps = g.matmul(s, dm)?;
    let hinge = g.relu(gaps)?;
    let w = g.constant(Tensor::matrix(b, k * k, weights)?);
    let weighted = g.mul(hinge, w)?;
    let total = g.sum(weighted)?;
    g.scale(total, 1.0 / b as f64)
}

fn check_cues(g: &Graph, s: NodeId, cues: &[Vec<f64>]) -> Result<(usize, usize)> {
    let (b, k) = g.value(s).dims2();
    if cues.len() != b || cues.iter().any(|c| c.len() != k) {
        return Err(Error::Shape(format!("cue scores do not match sensitivities of shape [{b}, {k}]")));
    }
    Ok((b, k))
}

/// HINT ranking hinge: for every ordered pair with `cue_i > cue_j`, penalize
/// `max(0, s_j - s_i)`; averaged over such pairs, then over instances.
pub fn hint_loss(g: &mut Graph, sens: NodeId, cues: &[Vec<f64>]) -> Result<NodeId> {
    let s = as_rows(g, sens)?;
    let (b, k) = check_cues(g, s, cues)?;
    let mut w = vec![0.0; b * k * k];
    for (r, c) in cues.iter().enumerate() {
        let pairs: Vec<(usize, usize)> =
            (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).filter(|&(i, j)| c[i] > c[j]).collect();
        for &(i, j) in &pairs {
            w[r * k * k + i * k + j] = 1.0 / pairs.len() as f64;
        }
    }
    weighted_pair_hinge(g, s, w)
}

/// Top-`n` regions by cue score, ties to the lower index.
pub fn influential_regions(cues: &[f64], n: usize) -> Vec<usize> {
    let mut top = argsort_desc(cues);
    top.truncate(n);
    top
}

/// SCR phase 1: every influential region should be more sensitive than every
/// non-influential one.
pub fn scr_phase1_loss(g: &mut Graph, sens_gt: NodeId, cues: &[Vec<f64>], n_influential: usize) -> Result<NodeId> {
    let s = as_rows(g, sens_gt)?;
    let (b, k) = check_cues(g, s, cues)?;
    if n_influential >= k {
        return Err(Error::Config(format!("n_influential {n_influential} must be below K = {k}")));
    }
    if n_influential == 0 {
        return Ok(g.scalar(0.0));
    }
    let norm = 1.0 / (n_influential * (k - n_influential)) as f64;
    let mut w = vec![0.0; b * k * k];
    for (r, c) in cues.iter().enumerate() {
        let infl = influential_regions(c, n_influential);
        for &i in &infl {
            for j in (0..k).filter(|j| !infl.contains(j)) {
                w[r * k * k + i * k + j] = norm;
            }
        }
    }
    weighted_pair_hinge(g, s, w)
}

/// The influential region most sensitive for the ground-truth answer.
pub fn scr_anchor_region(sens_gt: &[f64], cues: &[f64], n_influential: usize) -> usize {
    let mut best: Option<usize> = None;
    let mut infl = influential_regions(cues, n_influential);
    infl.sort_unstable();
    for i in infl {
        if best.is_none_or(|b| sens_gt[i] > sens_gt[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}

/// Highest-scoring answers other than `gt`, best first, ties to lower id.
pub fn scr_competitors(scores: &[f64], gt: usize, n: usize) -> Vec<usize> {
    let mut order = argsort_desc(scores);
    order.retain(|&a| a != gt);
    order.truncate(n);
    order
}

/// SCR phase 2. `sens_comp[c]` is a `[B, K]` node holding S(competitor c, v)
/// for each instance; `anchors[b]` is the v* of instance b. Returns the mean
/// over instances of `sum_c max(0, S(c, v*) - S(a_gt, v*)) / n_competitors`.
pub fn scr_phase2_loss(g: &mut Graph, sens_gt: NodeId, sens_comp: &[NodeId], anchors: &[usize]) -> Result<NodeId> {
    if sens_comp.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let s_gt = as_rows(g, sens_gt)?;
    let (b, k) = g.value(s_gt).dims2();
    if anchors.len() != b || anchors.iter().any(|&a| a >= k) {
        return Err(Error::Shape(format!("anchors do not match a [{b}, {k}] sensitivity map")));
    }
    let mut mask = vec![0.0; b * k];
    for (r, &a) in anchors.iter().enumerate() {
        mask[r * k + a] = 1.0;
    }
    let mask = g.constant(Tensor::matrix(b, k, mask)?);
    let mut total: Option<NodeId> = None;
    for &c in sens_comp {
        let s_c = as_rows(g, c)?;
        let diff = g.sub(s_c, s_gt)?;
        let at_anchor = g.mul(diff, mask)?;
        let gap = g.sum_rows(at_anchor)?;
        let h = g.relu(gap)?;
        let h = g.sum(h)?;
        total = Some(match total {
            Some(t) => g.add(t, h)?,
            None => h,
        });
    }
    let n = sens_comp.len() as f64;
    g.scale(total.unwrap(), 1.0 / (n * b as f64))
}
