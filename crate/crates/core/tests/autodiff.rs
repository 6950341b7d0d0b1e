mod common;

use std::collections::HashMap;

use common::{close, numeric_gradient, random_graph, random_smooth_composition};
use groundcheck_core::{Error, Graph, Tensor};

#[test]
fn random_graphs_match_central_differences() {
    for seed in 0..100 {
        let mut rg = random_graph(seed);
        assert!(rg.ops <= 5);
        let target = rg.target;
        let inputs = rg.inputs.clone();
        let grads = rg.graph.gradient(target, &inputs, false).unwrap();
        for (gr, &x) in grads.iter().zip(&inputs) {
            let numeric = numeric_gradient(&rg.graph, &rg.bindings, x, target);
            for (a, n) in gr.tensor.data().iter().zip(&numeric) {
                assert!(close(*a, *n, 1e-4, 1e-6), "seed {seed}: analytic {a} vs numeric {n}");
            }
        }
    }
}

#[test]
fn second_order_matches_differences_of_first_order() {
    for seed in 0..100 {
        let mut rg = random_smooth_composition(1000 + seed);
        let target = rg.target;
        let inputs = rg.inputs.clone();
        let first = rg.graph.gradient(target, &inputs, true).unwrap();
        assert!(first.iter().all(|g| g.graph_attached));
        let n = rg.graph.value(inputs[0]).numel();
        for j in 0..n {
            // d/d(inputs) of the j-th component of the gradient wrt x.
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let sel = rg.graph.constant(Tensor::matrix(1, n, e).unwrap());
            let picked = rg.graph.mul(first[0].node, sel).unwrap();
            let component = rg.graph.sum(picked).unwrap();
            let second = rg.graph.gradient(component, &inputs, false).unwrap();
            for (gr, &x) in second.iter().zip(&inputs) {
                let numeric = numeric_gradient(&rg.graph, &rg.bindings, x, component);
                for (a, nu) in gr.tensor.data().iter().zip(&numeric) {
                    assert!(close(*a, *nu, 1e-4, 1e-6), "seed {seed}: analytic {a} vs numeric {nu}");
                }
            }
        }
    }
}

#[test]
fn create_graph_does_not_change_first_order_values() {
    for seed in 0..50 {
        let mut rg = random_graph(500 + seed);
        let (t, inputs) = (rg.target, rg.inputs.clone());
        let plain = rg.graph.gradient(t, &inputs, false).unwrap();
        let attached = rg.graph.gradient(t, &inputs, true).unwrap();
        for (a, b) in plain.iter().zip(&attached) {
            assert_eq!(a.tensor, b.tensor);
            assert!(!a.graph_attached);
        }
    }
}

#[test]
fn evaluation_is_bitwise_repeatable() {
    let rg = random_graph(7);
    let a = rg.graph.evaluate(&rg.bindings, &[rg.target]).unwrap();
    let b = rg.graph.evaluate(&rg.bindings, &[rg.target]).unwrap();
    assert_eq!(a[0].item().to_bits(), b[0].item().to_bits());
    assert_eq!(a[0].item().to_bits(), rg.graph.value(rg.target).item().to_bits());
}

#[test]
fn evaluate_examples() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0), true);
    let sq = g.mul(x, x).unwrap();
    let z = g.input(Tensor::scalar(0.0), false);
    let s = g.sigmoid(z).unwrap();
    let v = g.input(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap(), false);
    let sm = g.softmax_rows(v).unwrap();
    let mut b = HashMap::new();
    b.insert(x, Tensor::scalar(3.0));
    b.insert(z, Tensor::scalar(0.0));
    b.insert(v, Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
    let out = g.evaluate(&b, &[sq, s, sm]).unwrap();
    assert_eq!(out[0].item(), 9.0);
    assert_eq!(out[1].item(), 0.5);
    for p in out[2].data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn evaluate_errors() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0]), false);
    let y = g.sum(x).unwrap();
    let missing = g.evaluate(&HashMap::new(), &[y]).unwrap_err();
    assert!(matches!(missing, Error::UnboundInput(_)), "{missing:?}");
    let mut b = HashMap::new();
    b.insert(x, Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(matches!(g.evaluate(&b, &[y]).unwrap_err(), Error::Shape(_)));
}

#[test]
fn gradient_preconditions() {
    let mut g = Graph::new();
    let frozen = g.input(Tensor::scalar(1.0), false);
    let x = g.input(Tensor::scalar(2.0), true);
    let y = g.mul(x, frozen).unwrap();
    assert!(matches!(g.gradient(y, &[frozen], false).unwrap_err(), Error::Grad(_)));
    let v = g.input(Tensor::vector(vec![1.0, 2.0]), true);
    assert!(matches!(g.gradient(v, &[v], false).unwrap_err(), Error::Rank(_)));
    // Created after the target, so outside its ancestry.
    let later = g.input(Tensor::vector(vec![5.0, 6.0]), true);
    let gr = g.gradient(y, &[later], false).unwrap();
    assert_eq!(gr[0].tensor.data(), &[0.0, 0.0]);
    assert_eq!(gr[0].tensor.shape(), &[2]);
}

#[test]
fn sigmoid_of_dot_matches_differences() {
    let mut rng = common::rng(11);
    use rand::Rng;
    let wv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let vv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let w = g.constant(Tensor::matrix(1, 6, wv).unwrap());
    let v = g.input(Tensor::matrix(6, 1, vv).unwrap(), true);
    let dot = g.matmul(w, v).unwrap();
    let s = g.sigmoid(dot).unwrap();
    let t = g.sum(s).unwrap();
    let gr = g.gradient(t, &[v], false).unwrap();
    let mut b = HashMap::new();
    b.insert(v, g.value(v).clone());
    let numeric = numeric_gradient(&g, &b, v, t);
    for (a, n) in gr[0].tensor.data().iter().zip(&numeric) {
        assert!(close(*a, *n, 1e-4, 1e-6));
    }
}
