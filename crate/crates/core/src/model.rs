//! Toy attention VQA predictor and answer-to-region sensitivities.
//!
//! q = mean token embedding, p_i = act(v_i Wp), alpha = softmax_i(a . (p_i * q)),
//! c = sum_i alpha_i p_i, P = sigmoid(W2 act(W1 (c * q) + b1) + b2).
//! Regions are batched as a `[B*K, d]` matrix so one graph serves a minibatch.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng;
use crate::synthcp::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Relu,
}

fn default_hidden() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Softplus
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub vocab: usize,
    pub answers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Apply the activation to projected regions. Without it the region
    /// pathway is linear and the attention logits are the only nonlinearity.
    #[serde(default = "default_true")]
    pub project_activation: bool,
}

impl ModelConfig {
    pub fn new(d: usize, vocab: usize, answers: usize) -> Self {
        Self {
            d,
            vocab,
            answers,
            hidden: default_hidden(),
            activation: default_activation(),
            project_activation: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.vocab == 0 || self.answers == 0 || self.hidden == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 7] =
    ["token_embeddings", "region_projection", "attention_vector", "head_w1", "head_b1", "head_w2", "head_b2"];

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embeddings: Tensor,
    pub region_projection: Tensor,
    pub attention_vector: Tensor,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
}

impl Parameters {
    pub fn tensors(&self) -> [&Tensor; 7] {
        [
            &self.token_embeddings,
            &self.region_projection,
            &self.attention_vector,
            &self.head_w1,
            &self.head_b1,
            &self.head_w2,
            &self.head_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.token_embeddings,
            &mut self.region_projection,
            &mut self.attention_vector,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

const INIT_TAG: u64 = 0x1417;

pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Parameters> {
    cfg.validate()?;
    let s = 1.0 / (cfg.d as f64).sqrt();
    let mut r = rng::stream(seed, &[INIT_TAG]);
    let mut draw = |shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let x = s * (2.0 * r.random::<f64>() - 1.0);
                if x > -s {
                    break x;
                }
            })
            .collect();
        Tensor::new(shape, data).expect("consistent shape")
    };
    Ok(Parameters {
        token_embeddings: draw(&[cfg.vocab, cfg.d]),
        region_projection: draw(&[cfg.d, cfg.d]),
        attention_vector: draw(&[cfg.d]),
        head_w1: draw(&[cfg.d, cfg.hidden]),
        head_b1: draw(&[cfg.hidden]),
        head_w2: draw(&[cfg.hidden, cfg.answers]),
        head_b2: draw(&[cfg.answers]),
    })
}

/// Parameter handles inside one graph.
#[derive(Debug, Clone, Copy)]
pub struct ParamNodes {
    pub token_embeddings: NodeId,
    pub region_projection: NodeId,
    pub attention_vector: NodeId,
    pub head_w1: NodeId,
    pub head_b1: NodeId,
    pub head_w2: NodeId,
    pub head_b2: NodeId,
}

impl ParamNodes {
    /// Add parameters to `g`. With `trainable = false` they become constants.
    pub fn attach(g: &mut Graph, p: &Parameters, trainable: bool) -> Self {
        let mut add = |t: &Tensor| if trainable { g.parameter(t.clone()) } else { g.constant(t.clone()) };
        ParamNodes {
            token_embeddings: add(&p.token_embeddings),
            region_projection: add(&p.region_projection),
            attention_vector: add(&p.attention_vector),
            head_w1: add(&p.head_w1),
            head_b1: add(&p.head_b1),
            head_w2: add(&p.head_w2),
            head_b2: add(&p.head_b2),
        }
    }

    pub fn all(&self) -> [NodeId; 7] {
        [
            self.token_embeddings,
            self.region_projection,
            self.attention_vector,
            self.head_w1,
            self.head_b1,
            self.head_w2,
            self.head_b2,
        ]
    }
}

/// Dense inputs for a minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub k: usize,
    /// `[B, vocab]` token-averaging matrix.
    pub token_weights: Tensor,
    /// `[B*K, d]` stacked region features.
    pub regions: Tensor,
}

impl Batch {
    pub fn new(cfg: &ModelConfig, instances: &[&Instance]) -> Result<Self> {
        let size = instances.len();
        if size == 0 {
            return Err(Error::EmptyInput("batch has no instances".into()));
        }
        let k = instances[0].regions.len();
        let mut tw = vec![0.0; size * cfg.vocab];
        let mut regions = Vec::with_capacity(size * k * cfg.d);
        for (b, inst) in instances.iter().enumerate() {
            if inst.regions.len() != k {
                return Err(Error::Shape(format!("instance {} has {} regions, expected {k}", inst.id, inst.regions.len())));
            }
            if inst.question_tokens.is_empty() {
                return Err(Error::Shape(format!("instance {} has no question tokens", inst.id)));
            }
            let w = 1.0 / inst.question_tokens.len() as f64;
            for &t in &inst.question_tokens {
                if t >= cfg.vocab {
                    return Err(Error::Config(format!("token {t} outside vocabulary of {}", cfg.vocab)));
                }
                tw[b * cfg.vocab + t] += w;
            }
            for r in &inst.regions {
                if r.len() != cfg.d {
                    return Err(Error::Shape(format!("instance {} region has dim {}, expected {}", inst.id, r.len(), cfg.d)));
                }
                regions.extend_from_slice(r);
            }
        }
        Ok(Batch {
            size,
            k,
            token_weights: Tensor::matrix(size, cfg.vocab, tw)?,
            regions: Tensor::matrix(size * k, cfg.d, regions)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B, A]` answer scores.
    pub scores: NodeId,
    /// `[B*K, d]` region input.
    pub regions: NodeId,
    /// `[B, K]` attention weights.
    pub attention: NodeId,
}

fn act(g: &mut Graph, cfg: &ModelConfig, x: NodeId) -> Result<NodeId> {
    match cfg.activation {
        Activation::Softplus => g.softplus(x),
        Activation::Relu => g.relu(x),
    }
}

pub fn forward(g: &mut Graph, cfg: &ModelConfig, p: &ParamNodes, batch: &Batch, regions_grad: bool) -> Result<Forward> {
    let (b, k, d) = (batch.size, batch.k, cfg.d);
    let tw = g.constant(batch.token_weights.clone());
    let q = g.matmul(tw, p.token_embeddings)?;
    let regions = g.input(batch.regions.clone(), regions_grad);
    let mut proj = g.matmul(regions, p.region_projection)?;
    if cfg.project_activation {
        proj = act(g, cfg, proj)?;
    }
    let q_rep = g.repeat_rows(q, k)?;
    let joint = g.mul(proj, q_rep)?;
    let a_col = g.reshape(p.attention_vector, &[d, 1])?;
    let logits = g.matmul(joint, a_col)?;
    let logits = g.reshape(logits, &[b, k])?;
    let attention = g.softmax_rows(logits)?;
    let alpha_col = g.reshape(attention, &[b * k, 1])?;
    let weighted = g.mul(proj, alpha_col)?;
    let context = g.group_sum_rows(weighted, k)?;
    let fused = g.mul(context, q)?;
    let h = g.matmul(fused, p.head_w1)?;
    let h = g.add(h, p.head_b1)?;
    let h = act(g, cfg, h)?;
    let z = g.matmul(h, p.head_w2)?;
    let z = g.add(z, p.head_b2)?;
    let scores = g.sigmoid(z)?;
    Ok(Forward { scores, regions, attention })
}

/// One-hot `[B, A]` selector of `answers[b]` for each row.
pub fn answer_mask(n_answers: usize, answers: &[usize]) -> Result<Tensor> {
    let mut m = vec![0.0; answers.len() * n_answers];
    for (b, &a) in answers.iter().enumerate() {
        if a >= n_answers {
            return Err(Error::Vocabulary(a));
        }
        m[b * n_answers + a] = 1.0;
    }
    Tensor::matrix(answers.len(), n_answers, m)
}

/// `[B, K]` node with S(answers[b], v_i) for each instance of the batch.
/// With `create_graph` the result is differentiable with respect to the
/// parameters.
pub fn sensitivity_node(g: &mut Graph, fwd: &Forward, answers: &[usize], create_graph: bool) -> Result<NodeId> {
    let (rows, n_answers) = g.value(fwd.scores).dims2();
    if answers.len() != rows {
        return Err(Error::Shape(format!("{} answers for a batch of {rows}", answers.len())));
    }
    let mask = g.constant(answer_mask(n_answers, answers)?);
    let picked = g.mul(fwd.scores, mask)?;
    let total = g.sum(picked)?;
    let grad = g.gradient(total, &[fwd.regions], create_graph)?.remove(0);
    let per_region = g.sum_rows(grad.node)?;
    let k = g.shape(fwd.regions)[0] / rows;
    g.reshape(per_region, &[rows, k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerScores {
    pub scores: Vec<f64>,
}

impl AnswerScores {
    /// Highest-scoring answer, ties to the lower id.
    pub fn argmax(&self) -> usize {
        argmax(&self.scores)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub instance_id: usize,
    pub answers: Vec<usize>,
    /// `[|answers|, K]`, entry `(a, i)` is S(answers[a], v_i).
    pub matrix: Tensor,
}

pub fn predict(cfg: &ModelConfig, params: &Parameters, instance: &Instance) -> Result<AnswerScores> {
    let mut g = Graph::new();
    let p = ParamNodes::attach(&mut g, params, false);
    let fwd = forward(&mut g, cfg, &p, &Batch::new(cfg, &[instance])?, false)?;
    Ok(AnswerScores { scores: g.value(fwd.scores).data().to_vec() })
}

/// Attention weights over regions for one instance.
pub fn attention(cfg: &ModelConfig, params: &Parameters, instance: &Instance) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = ParamNodes::attach(&mut g, params, false);
    let fwd = forward(&mut g, cfg, &p, &Batch::new(cfg, &[instance])?, false)?;
    Ok(g.value(fwd.attention).data().to_vec())
}

pub fn sensitivities(
    cfg: &ModelConfig,
    params: &Parameters,
    instance: &Instance,
    answers: &[usize],
) -> Result<SensitivityMap> {
    let k = instance.regions.len();
    let mut rows = Vec::with_capacity(answers.len() * k);
    let mut g = Graph::new();
    let p = ParamNodes::attach(&mut g, params, false);
    let fwd = forward(&mut g, cfg, &p, &Batch::new(cfg, &[instance])?, true)?;
    for &a in answers {
        let s = sensitivity_node(&mut g, &fwd, &[a], false)?;
        rows.extend_from_slice(g.value(s).data());
    }
    Ok(SensitivityMap { instance_id: instance.id, answers: answers.to_vec(), matrix: Tensor::matrix(answers.len(), k, rows)? })
}

/// Scores and, optionally, argmax-answer sensitivities for many instances,
/// evaluated in chunks.
pub struct Evaluation {
    pub scores: Vec<Vec<f64>>,
    pub predicted: Vec<usize>,
    /// S(a_pred, v_i) per instance when requested.
    pub pred_sensitivity: Option<Vec<Vec<f64>>>,
    /// S(a_gt, v_i) per instance when requested.
    pub gt_sensitivity: Option<Vec<Vec<f64>>>,
}

pub fn evaluate_instances(
    cfg: &ModelConfig,
    params: &Parameters,
    instances: &[Instance],
    with_sensitivity: bool,
    chunk: usize,
) -> Result<Evaluation> {
    let mut out = Evaluation {
        scores: Vec::with_capacity(instances.len()),
        predicted: Vec::with_capacity(instances.len()),
        pred_sensitivity: with_sensitivity.then(Vec::new),
        gt_sensitivity: with_sensitivity.then(Vec::new),
    };
    for part in instances.chunks(chunk.max(1)) {
        let refs: Vec<&Instance> = part.iter().collect();
        let mut g = Graph::new();
        let p = ParamNodes::attach(&mut g, params, false);
        let fwd = forward(&mut g, cfg, &p, &Batch::new(cfg, &refs)?, with_sensitivity)?;
        let scores = g.value(fwd.scores).clone();
        let start = out.predicted.len();
        for b in 0..part.len() {
            let row = scores.row(b).to_vec();
            out.predicted.push(argmax(&row));
            out.scores.push(row);
        }
        if with_sensitivity {
            let pred = &out.predicted[start..];
            let s = sensitivity_node(&mut g, &fwd, pred, false)?;
            let sv = g.value(s).clone();
            let gts: Vec<usize> = part.iter().map(|i| i.gt_answer).collect();
            let sg = sensitivity_node(&mut g, &fwd, &gts, false)?;
            let gv = g.value(sg).clone();
            for b in 0..part.len() {
                out.pred_sensitivity.as_mut().unwrap().push(sv.row(b).to_vec());
                out.gt_sensitivity.as_mut().unwrap().push(gv.row(b).to_vec());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub seed: u64,
    pub params: Parameters,
    pub epoch: usize,
    pub run_id: String,
}

impl Checkpoint {
    pub fn to_json(&self) -> serde_json::Value {
        let tensors: BTreeMap<&str, serde_json::Value> =
            PARAM_NAMES.iter().zip(self.params.tensors()).map(|(n, t)| (*n, t.to_json())).collect();
        serde_json::json!({
            "model_config": self.model_config,
            "seed": self.seed,
            "tensors": tensors,
            "epoch": self.epoch,
            "run_id": self.run_id,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let field = |k: &str| v.get(k).ok_or_else(|| Error::Parse(format!("checkpoint is missing {k:?}")));
        let model_config: ModelConfig = serde_json::from_value(field("model_config")?.clone())?;
        let tensors = field("tensors")?;
        let get = |name: &str| -> Result<Tensor> {
            let t = tensors.get(name).ok_or_else(|| Error::Parse(format!("checkpoint is missing tensor {name:?}")))?;
            Tensor::from_json(t)
        };
        let params = Parameters {
            token_embeddings: get(PARAM_NAMES[0])?,
            region_projection: get(PARAM_NAMES[1])?,
            attention_vector: get(PARAM_NAMES[2])?,
            head_w1: get(PARAM_NAMES[3])?,
            head_b1: get(PARAM_NAMES[4])?,
            head_w2: get(PARAM_NAMES[5])?,
            head_b2: get(PARAM_NAMES[6])?,
        };
        let expected = init(&model_config, 0)?;
        for ((name, got), want) in PARAM_NAMES.iter().zip(params.tensors()).zip(expected.tensors()) {
            if got.shape() != want.shape() {
                return Err(Error::Shape(format!("tensor {name} has shape {:?}, expected {:?}", got.shape(), want.shape())));
            }
        }
        Ok(Checkpoint {
            model_config,
            seed: field("seed")?.as_u64().ok_or_else(|| Error::Parse("seed must be an integer".into()))?,
            params,
            epoch: field("epoch")?.as_u64().ok_or_else(|| Error::Parse("epoch must be an integer".into()))? as usize,
            run_id: field("run_id")?.as_str().unwrap_or_default().to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, crate::json::to_string_pretty(&self.to_json())? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}
