mod common;

use common::{brute_ranks, spearman_oracle, welch_oracle};
use groundcheck_core::metrics::{
    self, accuracy, average_ranks, cpig, overlap, partition_ids, read_records, spearman, subset_accuracy_samples,
    welch_t_test, write_records, PredictionRecord,
};
use groundcheck_core::synthcp::{generate, AnswerType, GenerationConfig};
use groundcheck_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn rec(id: usize, correct: bool, top: usize) -> PredictionRecord {
    PredictionRecord {
        instance_id: id,
        run_id: "run".into(),
        variant: "v".into(),
        split: "test".into(),
        predicted_answer: id % 3,
        correct,
        top_sensitive_region: top,
        answer_type: AnswerType::ALL[id % 3],
    }
}

#[test]
fn welch_reference_example() {
    let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert!((r.t + 1.0).abs() < 1e-12);
    assert!((r.dof - 8.0).abs() < 1e-12);
    assert!((r.p - 0.3466).abs() < 1e-4);
    let (_, _, p) = welch_oracle(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!((r.p - p).abs() < 1e-9);
}

#[test]
fn welch_matches_integration_oracle_on_random_samples() {
    let mut rng = common::rng(77);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let m = rng.random_range(2..30);
        let sx = rng.random_range(0.1..3.0);
        let gap = rng.random_range(-2.0..2.0);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * sx).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0) + gap).collect();
        let got = welch_t_test(&xs, &ys).unwrap();
        let (t, dof, p) = welch_oracle(&xs, &ys);
        assert!((got.t - t).abs() <= 1e-10 * t.abs().max(1.0));
        assert!((got.dof - dof).abs() <= 1e-10 * dof);
        assert!((got.p - p).abs() <= 1e-6, "p {} vs {p} (t {t}, dof {dof})", got.p);
    }
}

#[test]
fn welch_degenerate_and_monotone() {
    let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((same.t, same.p), (0.0, 1.0));
    let flat = welch_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
    assert_eq!(flat.p, 1.0);
    let apart = welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
    assert!(apart.degenerate && apart.p == 0.0);
    assert!(matches!(welch_t_test(&[1.0], &[1.0, 2.0]), Err(Error::EmptyInput(_))));
    let base = [0.0, 1.0, 2.0, 3.0];
    let mut last = 1.0;
    for gap in [0.1, 0.5, 1.0, 2.0, 4.0] {
        let ys: Vec<f64> = base.iter().map(|x| x + gap).collect();
        let p = welch_t_test(&base, &ys).unwrap().p;
        assert!(p < last);
        last = p;
    }
}

proptest! {
    #[test]
    fn welch_is_antisymmetric(xs in prop::collection::vec(-5.0..5.0f64, 2..12), ys in prop::collection::vec(-5.0..5.0f64, 2..12)) {
        let a = welch_t_test(&xs, &ys).unwrap();
        let b = welch_t_test(&ys, &xs).unwrap();
        prop_assert_eq!(a.t, -b.t);
        prop_assert_eq!(a.p, b.p);
        prop_assert!((0.0..=1.0).contains(&a.p));
    }

    #[test]
    fn spearman_matches_brute_force(pairs in prop::collection::vec((0u8..6, 0u8..6), 2..20)) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        prop_assert_eq!(average_ranks(&xs), brute_ranks(&xs));
        prop_assert_eq!(spearman(&xs, &ys).unwrap(), spearman_oracle(&xs, &ys));
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(-3.0..3.0f64, 3..15), ys in prop::collection::vec(-3.0..3.0f64, 3..15)) {
        let n = xs.len().min(ys.len());
        let (xs, ys) = (&xs[..n], &ys[..n]);
        let ex: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let cube: Vec<f64> = ys.iter().map(|y| 2.0 * y * y * y - 1.0).collect();
        prop_assert_eq!(spearman(xs, ys).unwrap(), spearman(&ex, &cube).unwrap());
    }

    #[test]
    fn overlap_and_cpig_match_counting(bits in prop::collection::vec((any::<bool>(), any::<bool>(), 0usize..8), 1..1000), seed in 0u64..4) {
        let a: Vec<PredictionRecord> = bits.iter().enumerate().map(|(i, b)| rec(i, b.0, b.2)).collect();
        let b: Vec<PredictionRecord> = bits.iter().enumerate().map(|(i, b)| rec(i, b.1, 0)).collect();
        let same = bits.iter().filter(|b| b.0 == b.1).count();
        prop_assert_eq!(overlap(&a, &b).unwrap(), 100.0 * same as f64 / bits.len() as f64);
        prop_assert_eq!(overlap(&a, &b).unwrap(), overlap(&b, &a).unwrap());
        prop_assert_eq!(overlap(&a, &a).unwrap(), 100.0);

        let bundle = generate(&GenerationConfig { n_train: bits.len(), n_test: 1, n_control: 1, ..Default::default() }, seed).unwrap();
        let mut correct = 0;
        let mut improper = 0;
        for (r, inst) in a.iter().zip(&bundle.train) {
            if r.correct {
                correct += 1;
                let mut order: Vec<usize> = (0..inst.gt_relevance.len()).collect();
                order.sort_by(|&i, &j| inst.gt_relevance[j].total_cmp(&inst.gt_relevance[i]));
                if !order[..3].contains(&r.top_sensitive_region) {
                    improper += 1;
                }
            }
        }
        let expect = (correct > 0).then(|| 100.0 * improper as f64 / correct as f64);
        prop_assert_eq!(cpig(&a, &bundle.train).unwrap(), expect);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert_eq!(cpig(&rev, &bundle.train).unwrap(), expect);
    }
}

#[test]
fn accuracy_examples() {
    let all = vec![rec(0, true, 0), rec(1, true, 0), rec(2, true, 0)];
    let s = accuracy(&all).unwrap();
    assert_eq!(s.overall, 100.0);
    assert!(s.by_answer_type.values().all(|&v| v == 100.0));
    let half = vec![rec(0, true, 0), rec(3, false, 0), rec(6, true, 0), rec(9, false, 0)];
    assert_eq!(accuracy(&half).unwrap().overall, 50.0);
    let mut typed = vec![rec(0, true, 0), rec(3, true, 0), rec(2, false, 0)];
    typed[0].answer_type = AnswerType::YesNo;
    typed[1].answer_type = AnswerType::YesNo;
    typed[2].answer_type = AnswerType::Other;
    let s = accuracy(&typed).unwrap();
    assert_eq!(s.by_answer_type[&AnswerType::YesNo], 100.0);
    assert_eq!(s.by_answer_type[&AnswerType::Other], 0.0);
    assert!((s.overall - 200.0 / 3.0).abs() < 1e-12);
    assert!(matches!(accuracy(&[]), Err(Error::EmptyInput(_))));
}

#[test]
fn overlap_examples_and_alignment() {
    let mk = |bits: &[bool]| bits.iter().enumerate().map(|(i, &b)| rec(i, b, 0)).collect::<Vec<_>>();
    let a = mk(&[true, true, false, false]);
    assert_eq!(overlap(&a, &mk(&[true, false, false, true])).unwrap(), 50.0);
    assert_eq!(overlap(&a, &mk(&[false, false, true, true])).unwrap(), 0.0);
    assert!(matches!(overlap(&a, &a[..3]), Err(Error::Alignment(_))));
}

#[test]
fn cpig_examples() {
    let b = generate(&GenerationConfig { n_train: 10, n_test: 1, n_control: 1, ..Default::default() }, 0).unwrap();
    let mut records: Vec<PredictionRecord> = b.train.iter().map(|i| rec(i.id, true, i.top_regions()[0])).collect();
    assert_eq!(cpig(&records, &b.train).unwrap(), Some(0.0));
    let outside = |i: &groundcheck_core::synthcp::Instance| (0..8).find(|r| !i.top_regions().contains(r)).unwrap();
    for (r, i) in records.iter_mut().zip(&b.train).take(7) {
        r.top_sensitive_region = outside(i);
    }
    assert_eq!(cpig(&records, &b.train).unwrap(), Some(70.0));
    records.iter_mut().for_each(|r| r.correct = false);
    assert_eq!(cpig(&records, &b.train).unwrap(), None);
}

#[test]
fn spearman_examples() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(spearman(&xs, &xs).unwrap(), Some(1.0));
    assert_eq!(spearman(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap(), Some(-1.0));
    let tied = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert_eq!(tied, spearman_oracle(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]));
    assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
}

#[test]
fn subset_samples_protocol() {
    let mut rng = common::rng(3);
    let n = 1003;
    let runs: Vec<Vec<PredictionRecord>> =
        (0..3).map(|_| (0..n).map(|i| rec(i, rng.random_bool(0.4), 0)).collect()).collect();
    let refs: Vec<&[PredictionRecord]> = runs.iter().map(|r| r.as_slice()).collect();
    let overall: f64 = runs.iter().map(|r| accuracy(r).unwrap().overall / 100.0).sum::<f64>() / 3.0;

    let one = subset_accuracy_samples(&refs, 1, 0).unwrap();
    assert_eq!(one.len(), 1);
    assert!((one[0] - overall).abs() < 1e-12);

    let b = 100;
    let cells = partition_ids(&(0..n).collect::<Vec<_>>(), b, 9).unwrap();
    let mut all: Vec<usize> = cells.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
    let sizes: Vec<usize> = cells.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

    let samples = subset_accuracy_samples(&refs, b, 9).unwrap();
    let weighted: f64 = samples.iter().zip(&sizes).map(|(s, &z)| s * z as f64).sum::<f64>() / n as f64;
    assert!((weighted - overall).abs() < 1e-12);

    let perfect: Vec<PredictionRecord> = (0..50).map(|i| rec(i, true, 0)).collect();
    assert!(subset_accuracy_samples(&[&perfect], 10, 0).unwrap().iter().all(|&v| v == 1.0));
    assert!(matches!(subset_accuracy_samples(&[&perfect], 51, 0), Err(Error::Config(_))));
    assert_eq!(metrics::default_subset_count(2000), 200);
    assert_eq!(metrics::default_subset_count(100_000), 500);
}

#[test]
fn prediction_csv_round_trip() {
    let records: Vec<PredictionRecord> = (0..5).map(|i| rec(i, i % 2 == 0, i)).collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "instance_id,run_id,variant,split,predicted_answer,correct,top_sensitive_region,answer_type"
    );
    assert_eq!(text.lines().nth(1).unwrap(), "0,run,v,test,0,1,0,yesno");
    assert_eq!(read_records(buf.as_slice()).unwrap(), records);
}
