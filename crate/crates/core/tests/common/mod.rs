#![allow(dead_code)]

use std::collections::HashMap;

use groundcheck_core::losses::LossConfig;
use groundcheck_core::model::{self, ModelConfig, Parameters};
use groundcheck_core::runner::train::objective_and_gradient;
use groundcheck_core::synthcp::{AnswerType, CueVariant, Instance, Split};
use groundcheck_core::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative agreement with an absolute floor for values near zero.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs || diff <= rel * analytic.abs().max(numeric.abs())
}

/// Central differences of `target` with respect to every entry of `input`,
/// replaying the graph with perturbed bindings.
pub fn numeric_gradient(g: &Graph, bindings: &HashMap<NodeId, Tensor>, input: NodeId, target: NodeId) -> Vec<f64> {
    let base = bindings[&input].clone();
    (0..base.numel())
        .map(|i| {
            let eval = |delta: f64| {
                let mut b = bindings.clone();
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                b.insert(input, t);
                g.evaluate(&b, &[target]).unwrap()[0].item()
            };
            (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect()
}

pub struct RandomGraph {
    pub graph: Graph,
    pub inputs: Vec<NodeId>,
    pub target: NodeId,
    /// Number of ops between the inputs and the target.
    pub ops: usize,
    pub bindings: HashMap<NodeId, Tensor>,
}

const SHAPES: [(usize, usize); 8] = [(1, 1), (1, 4), (2, 2), (2, 3), (3, 2), (2, 4), (4, 2), (1, 8)];

fn uniform_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// A random smooth graph with at most five ops and tensors of at most eight
/// entries, ending in a weighted sum.
pub fn random_graph(seed: u64) -> RandomGraph {
    let mut rng = rng(seed);
    let (r, c) = SHAPES[rng.random_range(0..SHAPES.len())];
    let mut g = Graph::new();
    let x = g.input(uniform_tensor(&mut rng, r, c, -1.5, 1.5), true);
    let y = g.input(uniform_tensor(&mut rng, r, c, -1.5, 1.5), true);
    let mut bindings = HashMap::new();
    bindings.insert(x, g.value(x).clone());
    bindings.insert(y, g.value(y).clone());

    let budget = 5 - 2;
    let mut ops = 0;
    let mut pool = vec![x, y];
    let mut last = x;
    while ops < budget {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let left = budget - ops;
        let choice = rng.random_range(0..10);
        let (node, used) = match choice {
            0 => (g.sigmoid(a).unwrap(), 1),
            1 => (g.softplus(a).unwrap(), 1),
            2 => (g.mul(a, b).unwrap(), 1),
            3 => (g.add(a, b).unwrap(), 1),
            4 => (g.sub(a, b).unwrap(), 1),
            5 => (g.softmax_rows(a).unwrap(), 1),
            6 => {
                let s = g.scale(a, 0.5).unwrap();
                (g.exp(s).unwrap(), 2)
            }
            7 => {
                let e = g.exp(b).unwrap();
                (g.div(a, e).unwrap(), 2)
            }
            8 => {
                let s = g.softplus(a).unwrap();
                (g.log(s).unwrap(), 2)
            }
            _ => {
                let t = g.transpose(b).unwrap();
                let m = g.matmul(a, t).unwrap();
                (g.matmul(m, a).unwrap(), 3)
            }
        };
        if used > left {
            break;
        }
        ops += used;
        pool.push(node);
        last = node;
        if rng.random_bool(0.25) {
            break;
        }
    }
    let w = g.constant(uniform_tensor(&mut rng, r, c, -1.0, 1.0));
    let weighted = g.mul(last, w).unwrap();
    let target = g.sum(weighted).unwrap();
    RandomGraph { graph: g, inputs: vec![x, y], target, ops: ops + 2, bindings }
}

/// A scalar composition of mul, sigmoid, softplus and sum over two vector
/// inputs.
pub fn random_smooth_composition(seed: u64) -> RandomGraph {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=4);
    let mut g = Graph::new();
    let x = g.input(uniform_tensor(&mut rng, 1, n, -1.5, 1.5), true);
    let y = g.input(uniform_tensor(&mut rng, 1, n, -1.5, 1.5), true);
    let mut bindings = HashMap::new();
    bindings.insert(x, g.value(x).clone());
    bindings.insert(y, g.value(y).clone());
    let mut pool = vec![x, y];
    let mut last = x;
    let steps = rng.random_range(2..=4);
    for _ in 0..steps {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let node = match rng.random_range(0..3) {
            0 => g.sigmoid(a).unwrap(),
            1 => g.softplus(a).unwrap(),
            _ => g.mul(a, b).unwrap(),
        };
        pool.push(node);
        last = node;
    }
    // Make sure both inputs reach the target.
    let mixed = g.mul(last, y).unwrap();
    let both = g.add(mixed, x).unwrap();
    let sq = g.mul(both, both).unwrap();
    let target = g.sum(sq).unwrap();
    RandomGraph { graph: g, inputs: vec![x, y], target, ops: steps + 4, bindings }
}


/// A tiny model whose weights are large enough to keep the hinge terms active.
pub fn micro_model() -> (ModelConfig, Parameters, Vec<Instance>) {
    let cfg = ModelConfig { hidden: 3, ..ModelConfig::new(3, 4, 2) };
    let mut p = model::init(&cfg, 9).unwrap();
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= 3.0);
    }
    (cfg, p, micro_instances(21, 3, 2, 3, 4, 2))
}

/// Entries of the full training objective's gradient on the micro model that
/// disagree with central differences beyond 1e-3 relative.
pub fn full_loss_gradient_mismatches(loss: &LossConfig, variant: Option<CueVariant>, phase2: bool) -> Vec<String> {
    let (cfg, p, insts) = micro_model();
    let refs: Vec<&Instance> = insts.iter().collect();
    let (_, grads) = objective_and_gradient(&cfg, &p, &refs, loss, variant, 0, phase2).unwrap();
    let mut bad = Vec::new();
    for (t, grad) in grads.iter().enumerate() {
        for i in 0..grad.numel() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.tensors_mut()[t].data_mut()[i] += delta;
                objective_and_gradient(&cfg, &q, &refs, loss, variant, 0, phase2).unwrap().0
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let analytic = grad.data()[i];
            if !close(analytic, numeric, 1e-3, 1e-7) {
                bad.push(format!("{:?} {} [{i}]: {analytic} vs {numeric}", loss.method, model::PARAM_NAMES[t]));
            }
        }
    }
    bad
}

/// Hand-built instances for micro models (the generator needs K >= 4).
pub fn micro_instances(seed: u64, n: usize, k: usize, d: usize, vocab: usize, answers: usize) -> Vec<Instance> {
    let mut rng = rng(seed);
    (0..n)
        .map(|id| {
            let question_type = rng.random_range(0..vocab);
            Instance {
                id,
                split: Split::Train,
                question_tokens: vec![question_type, rng.random_range(0..vocab)],
                question_type,
                regions: (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
                gt_answer: rng.random_range(0..answers),
                answer_type: AnswerType::Other,
                gt_relevance: (0..k).map(|_| rng.random_range(0.0..1.0)).collect(),
                has_cues: true,
            }
        })
        .collect()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Two-tailed t p-value by integrating the density. With x = sqrt(nu) tan(theta)
/// the density becomes proportional to cos(theta)^(nu - 1) on a finite range.
pub fn t_p_value_oracle(t: f64, nu: f64) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let f = |th: f64| th.cos().max(0.0).powf(nu - 1.0);
    let theta = (t.abs() / nu.sqrt()).atan();
    let total = integrate(&f, 0.0, half_pi, 1e-14);
    let tail = integrate(&f, theta, half_pi, 1e-14);
    (tail / total).clamp(0.0, 1.0)
}

/// Welch statistic and p-value computed from scratch.
pub fn welch_oracle(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (n, m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (n, mx, vx) = stats(xs);
    let (m, my, vy) = stats(ys);
    let se2 = vx / n + vy / m;
    let t = (mx - my) / se2.sqrt();
    let dof = se2 * se2 / ((vx / n).powi(2) / (n - 1.0) + (vy / m).powi(2) / (m - 1.0));
    (t, dof, t_p_value_oracle(t, dof))
}

/// Rank by counting: 1 + (number strictly smaller) + (ties - 1) / 2.
pub fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (rx, ry) = (brute_ranks(xs), brute_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}
