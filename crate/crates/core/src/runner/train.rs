//! Pretraining and fine-tuning loops.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, Method};
use crate::metrics::PredictionRecord;
use crate::model::{self, Batch, Checkpoint, ModelConfig, ParamNodes, Parameters};
use crate::rng;
use crate::synthcp::{self, CueVariant, Instance, SubsetMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Epoch with the highest accuracy on the evaluation split.
    BestEval,
    /// The final epoch.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub activation: model::Activation,
    pub project_activation: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub loss: LossConfig,
    /// Required for hint and scr.
    pub cue_variant: Option<CueVariant>,
    pub learning_rate: f64,
    /// Divide the learning rate by the subset fraction.
    pub lr_over_subset: bool,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of train instances fed to baseline and zero-out fine-tuning.
    pub subset_fraction: f64,
    pub subset_mode: SubsetMode,
    pub selection: Selection,
    /// SCR second phase, seeded from the best first-phase epoch.
    pub phase2_epochs: usize,
    pub phase2_learning_rate: f64,
    /// Add a bce term on an equally sized batch drawn from the whole train
    /// split to every hint/scr step.
    pub full_train_bce: bool,
}

impl FinetuneConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        self.loss.validate(k)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.loss.method == Method::Scr && self.phase2_epochs > 0 && !(self.phase2_learning_rate > 0.0) {
            return Err(Error::Config("phase2_learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::Config("subset_fraction must lie in (0, 1]".into()));
        }
        if matches!(self.loss.method, Method::Hint | Method::Scr) && self.cue_variant.is_none() {
            return Err(Error::Config(format!("{} needs a cue variant", self.loss.method.as_str())));
        }
        Ok(())
    }

    fn effective_lr(&self) -> f64 {
        if self.lr_over_subset {
            self.learning_rate / self.subset_fraction
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Epochs completed, starting at 1.
    pub epoch: usize,
    pub phase: usize,
    /// Mean total objective over the epoch's batches.
    pub loss: f64,
    /// Mean of the method's own term (0 for plain bce).
    pub method_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 = untouched input).
    pub reporting_epoch: usize,
}

struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    fn new(lr: f64, momentum: f64, params: &Parameters) -> Self {
        Sgd { lr, momentum, velocity: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect() }
    }

    fn step(&mut self, params: &mut Parameters, grads: &[Tensor]) {
        for ((p, g), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for ((x, &dx), vx) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vx = self.momentum * *vx + dx;
                *x -= self.lr * *vx;
            }
        }
    }
}

/// What the method adds on top of the weighted bce.
#[derive(Clone, Copy)]
struct Objective<'a> {
    loss: &'a LossConfig,
    variant: Option<CueVariant>,
    cue_seed: u64,
    epoch: usize,
    scr_phase2: bool,
}

fn row_scale(g: &mut Graph, s: NodeId) -> Result<NodeId> {
    let k = g.value(s).dims2().1 as f64;
    let a = g.abs(s)?;
    let total = g.sum_rows(a)?;
    let mean = g.scale(total, 1.0 / k)?;
    g.offset(mean, 1e-12)
}

/// Returns (total objective, method term).
fn batch_objective(
    g: &mut Graph,
    mcfg: &ModelConfig,
    p: &ParamNodes,
    insts: &[&Instance],
    extra_bce: Option<&[&Instance]>,
    obj: Objective,
) -> Result<(NodeId, NodeId)> {
    let loss = obj.loss;
    let needs_sens = matches!(loss.method, Method::Hint | Method::Scr);
    let batch = Batch::new(mcfg, insts)?;
    let fwd = model::forward(g, mcfg, p, &batch, needs_sens)?;
    let answers: Vec<usize> = insts.iter().map(|i| i.gt_answer).collect();
    let targets = losses::one_hot(&answers, mcfg.answers)?;
    let bce = losses::bce_loss(g, fwd.scores, &targets)?;
    let mut total = g.scale(bce, loss.vqa_loss_weight)?;
    if let Some(extra) = extra_bce {
        let eb = Batch::new(mcfg, extra)?;
        let ef = model::forward(g, mcfg, p, &eb, false)?;
        let ea: Vec<usize> = extra.iter().map(|i| i.gt_answer).collect();
        let eb = losses::bce_loss(g, ef.scores, &losses::one_hot(&ea, mcfg.answers)?)?;
        let eb = g.scale(eb, loss.vqa_loss_weight)?;
        total = g.add(total, eb)?;
    }
    let cues = || -> Vec<Vec<f64>> {
        let v = obj.variant.expect("validated");
        insts.iter().map(|i| synthcp::cue_scores(i, v, obj.cue_seed, obj.epoch).scores).collect()
    };
    let term = match loss.method {
        Method::Baseline => g.scalar(0.0),
        Method::ZeroOut => {
            let zero = losses::bce_loss(g, fwd.scores, &Tensor::zeros(&[insts.len(), mcfg.answers]))?;
            let weighted = g.scale(zero, loss.lambda)?;
            let w = g.scale(weighted, loss.loss_weight)?;
            total = g.add(total, w)?;
            zero
        }
        Method::Hint => {
            let raw = model::sensitivity_node(g, &fwd, &answers, true)?;
            let s = if loss.normalize_sensitivities { losses::normalize_rows(g, raw)? } else { raw };
            let h = losses::hint_loss(g, s, &cues())?;
            let w = g.scale(h, loss.loss_weight)?;
            total = g.add(total, w)?;
            h
        }
        Method::Scr => {
            let raw = model::sensitivity_node(g, &fwd, &answers, true)?;
            let scale = if loss.normalize_sensitivities { Some(row_scale(g, raw)?) } else { None };
            let s = match scale {
                Some(sc) => g.div(raw, sc)?,
                None => raw,
            };
            let cues = cues();
            let p1 = losses::scr_phase1_loss(g, s, &cues, loss.n_influential)?;
            let w1 = g.scale(p1, loss.loss_weight)?;
            total = g.add(total, w1)?;
            if obj.scr_phase2 && loss.n_competitors > 0 {
                let sv = g.value(raw).clone();
                let scores = g.value(fwd.scores).clone();
                let anchors: Vec<usize> = (0..insts.len())
                    .map(|b| losses::scr_anchor_region(sv.row(b), &cues[b], loss.n_influential))
                    .collect();
                let comps: Vec<Vec<usize>> = (0..insts.len())
                    .map(|b| losses::scr_competitors(scores.row(b), answers[b], loss.n_competitors))
                    .collect();
                let n_comp = comps[0].len();
                let mut comp_nodes = Vec::with_capacity(n_comp);
                for c in 0..n_comp {
                    let which: Vec<usize> = comps.iter().map(|v| v[c]).collect();
                    let sc = model::sensitivity_node(g, &fwd, &which, true)?;
                    comp_nodes.push(match scale {
                        Some(k) => g.div(sc, k)?,
                        None => sc,
                    });
                }
                let p2 = losses::scr_phase2_loss(g, s, &comp_nodes, &anchors)?;
                let w2 = g.scale(p2, loss.phase2_weight)?;
                total = g.add(total, w2)?;
                g.add(p1, p2)?
            } else {
                p1
            }
        }
    };
    Ok((total, term))
}

/// Value of the full training objective on `insts` and its gradient with
/// respect to every parameter tensor, in `PARAM_NAMES` order.
pub fn objective_and_gradient(
    mcfg: &ModelConfig,
    params: &Parameters,
    insts: &[&Instance],
    loss: &LossConfig,
    variant: Option<CueVariant>,
    cue_seed: u64,
    scr_phase2: bool,
) -> Result<(f64, Vec<Tensor>)> {
    if matches!(loss.method, Method::Hint | Method::Scr) && variant.is_none() {
        return Err(Error::Config(format!("{} needs a cue variant", loss.method.as_str())));
    }
    let mut g = Graph::new();
    let p = ParamNodes::attach(&mut g, params, true);
    let obj = Objective { loss, variant, cue_seed, epoch: 0, scr_phase2 };
    let (total, _) = batch_objective(&mut g, mcfg, &p, insts, None, obj)?;
    let grads = g.gradient(total, &p.all(), false)?.into_iter().map(|gr| gr.tensor).collect();
    Ok((g.value(total).item(), grads))
}

/// Percent of `instances` whose argmax answer is the ground truth.
pub fn accuracy_of(mcfg: &ModelConfig, params: &Parameters, instances: &[Instance]) -> Result<f64> {
    let ev = model::evaluate_instances(mcfg, params, instances, false, 512)?;
    let hits = ev.predicted.iter().zip(instances).filter(|(p, i)| **p == i.gt_answer).count();
    Ok(100.0 * hits as f64 / instances.len().max(1) as f64)
}

const ORDER_TAG: u64 = 0x0D3E;

struct EpochResult {
    loss: f64,
    method_loss: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    mcfg: &ModelConfig,
    params: &mut Parameters,
    opt: &mut Sgd,
    train: &[Instance],
    ids: &[usize],
    batch_size: usize,
    order_seed: u64,
    obj: Objective,
    full_train_bce: bool,
) -> Result<EpochResult> {
    let mut order = ids.to_vec();
    order.shuffle(&mut rng::stream(order_seed, &[ORDER_TAG, obj.epoch as u64]));
    let mut extra_order: Vec<usize> = (0..train.len()).collect();
    if full_train_bce {
        extra_order.shuffle(&mut rng::stream(order_seed, &[ORDER_TAG, 1, obj.epoch as u64]));
    }
    let mut extra_pos = 0;
    let (mut loss_sum, mut term_sum, mut batches) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(batch_size) {
        let insts: Vec<&Instance> = chunk.iter().map(|&i| &train[i]).collect();
        let extra: Option<Vec<&Instance>> = full_train_bce.then(|| {
            (0..chunk.len())
                .map(|_| {
                    let i = extra_order[extra_pos % extra_order.len()];
                    extra_pos += 1;
                    &train[i]
                })
                .collect()
        });
        let mut g = Graph::new();
        let p = ParamNodes::attach(&mut g, params, true);
        let (total, term) = batch_objective(&mut g, mcfg, &p, &insts, extra.as_deref(), obj)?;
        let value = g.value(total).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective {value} at epoch {} batch {batches} (first instance {})",
                obj.epoch + 1,
                chunk[0]
            )));
        }
        loss_sum += value;
        term_sum += g.value(term).item();
        batches += 1;
        let grads: Vec<Tensor> = g.gradient(total, &p.all(), false)?.into_iter().map(|gr| gr.tensor).collect();
        opt.step(params, &grads);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters diverged at epoch {} batch {batches}", obj.epoch + 1)));
        }
    }
    let n = batches.max(1) as f64;
    Ok(EpochResult { loss: loss_sum / n, method_loss: term_sum / n })
}

/// Train a fresh model with bce on `train`, logging accuracy on `eval`.
pub fn pretrain(
    cfg: &PretrainConfig,
    mcfg: &ModelConfig,
    train: &[Instance],
    eval: &[Instance],
    seed: u64,
    run_id: &str,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("pretraining needs epochs >= 1, batch_size >= 1 and a positive learning rate".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("no training instances".into()));
    }
    let mut params = model::init(mcfg, seed)?;
    let loss = LossConfig::for_method(Method::Baseline);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, &params);
    let ids: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let obj = Objective { loss: &loss, variant: None, cue_seed: seed, epoch, scr_phase2: false };
        let r = run_epoch(mcfg, &mut params, &mut opt, train, &ids, cfg.batch_size, seed, obj, false)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            phase: 1,
            loss: r.loss,
            method_loss: 0.0,
            eval_accuracy: accuracy_of(mcfg, &params, eval)?,
        });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model_config: mcfg.clone(), seed, params, epoch: cfg.epochs, run_id: run_id.into() },
        log,
        reporting_epoch: cfg.epochs,
    })
}

/// Indices (into `train`) that the method trains on at `epoch`.
fn training_ids(cfg: &FinetuneConfig, train: &[Instance], seed: u64, epoch: usize) -> Result<Vec<usize>> {
    match cfg.loss.method {
        Method::Hint | Method::Scr => Ok((0..train.len()).filter(|&i| train[i].has_cues).collect()),
        Method::Baseline | Method::ZeroOut => {
            let all: Vec<usize> = (0..train.len()).collect();
            synthcp::select_loss_subset(&all, cfg.subset_fraction, cfg.subset_mode, seed, epoch)
        }
    }
}

/// Fine-tune `start` with the configured method. Evaluation accuracy on
/// `eval` is logged every epoch and drives best-epoch selection.
pub fn finetune(
    start: &Checkpoint,
    cfg: &FinetuneConfig,
    train: &[Instance],
    eval: &[Instance],
    seed: u64,
    run_id: &str,
) -> Result<TrainOutcome> {
    finetune_observed(start, cfg, train, eval, seed, run_id, &mut |_, _| Ok(()))
}

/// `finetune` with a callback after every epoch, given that epoch's log entry
/// and parameters (used for per-epoch prediction dumps).
pub fn finetune_observed(
    start: &Checkpoint,
    cfg: &FinetuneConfig,
    train: &[Instance],
    eval: &[Instance],
    seed: u64,
    run_id: &str,
    on_epoch: &mut dyn FnMut(&EpochLog, &Parameters) -> Result<()>,
) -> Result<TrainOutcome> {
    let k = train.first().map_or(0, |i| i.regions.len());
    cfg.validate(k)?;
    let mcfg = &start.model_config;
    if matches!(cfg.loss.method, Method::Hint | Method::Scr) && !train.iter().any(|i| i.has_cues) {
        return Err(Error::Config("no cue-annotated training instances".into()));
    }
    let mut log = Vec::new();
    let phases: Vec<(usize, f64, bool)> = {
        let mut v = vec![(cfg.epochs, cfg.effective_lr(), false)];
        if cfg.loss.method == Method::Scr && cfg.phase2_epochs > 0 {
            v.push((cfg.phase2_epochs, cfg.phase2_learning_rate, true));
        }
        v
    };
    let mut current = start.params.clone();
    let mut reporting_epoch = 0;
    let mut epoch_counter = 0;
    for (phase_idx, &(epochs, lr, scr_phase2)) in phases.iter().enumerate() {
        if epochs == 0 {
            continue;
        }
        let mut params = current.clone();
        let mut opt = Sgd::new(lr, cfg.momentum, &params);
        let mut best: Option<(f64, Parameters, usize)> = None;
        for epoch in 0..epochs {
            let ids = training_ids(cfg, train, seed, epoch)?;
            let obj = Objective { loss: &cfg.loss, variant: cfg.cue_variant, cue_seed: seed, epoch, scr_phase2 };
            let order_seed = rng::derive_seed(seed, &[phase_idx as u64]);
            let r = run_epoch(mcfg, &mut params, &mut opt, train, &ids, cfg.batch_size, order_seed, obj, cfg.full_train_bce)?;
            epoch_counter += 1;
            let acc = accuracy_of(mcfg, &params, eval)?;
            log.push(EpochLog { epoch: epoch_counter, phase: phase_idx + 1, loss: r.loss, method_loss: r.method_loss, eval_accuracy: acc });
            on_epoch(log.last().expect("just pushed"), &params)?;
            if cfg.selection == Selection::BestEval && best.as_ref().is_none_or(|b| acc > b.0) {
                best = Some((acc, params.clone(), epoch_counter));
            }
        }
        match best {
            Some((_, p, e)) => {
                current = p;
                reporting_epoch = e;
            }
            None => {
                current = params;
                reporting_epoch = epoch_counter;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model_config: mcfg.clone(),
            seed: start.seed,
            params: current,
            epoch: start.epoch + reporting_epoch,
            run_id: run_id.into(),
        },
        log,
        reporting_epoch,
    })
}

/// Prediction records plus S(a_gt, v) rows for `instances`.
pub fn predict_records(
    ck: &Checkpoint,
    instances: &[Instance],
    run_id: &str,
    variant: &str,
    split: &str,
) -> Result<(Vec<PredictionRecord>, Vec<Vec<f64>>)> {
    let ev = model::evaluate_instances(&ck.model_config, &ck.params, instances, true, 512)?;
    let sens = ev.pred_sensitivity.expect("requested");
    let records = instances
        .iter()
        .zip(&ev.predicted)
        .zip(&sens)
        .map(|((inst, &pred), s)| PredictionRecord {
            instance_id: inst.id,
            run_id: run_id.to_string(),
            variant: variant.to_string(),
            split: split.to_string(),
            predicted_answer: pred,
            correct: pred == inst.gt_answer,
            top_sensitive_region: model::argmax(s),
            answer_type: inst.answer_type,
        })
        .collect();
    Ok((records, ev.gt_sensitivity.expect("requested")))
}
