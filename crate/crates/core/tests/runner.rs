use groundcheck_core::losses::Method;
use groundcheck_core::runner::report::{load_report, markdown, REPORT_CSV_HEADER};
use groundcheck_core::runner::suite::{model_config, BundleKind, CellSpec, BASELINE};
use groundcheck_core::runner::{emit_report, finetune, pretrain, profile, run_suite, Selection, SuiteConfig};
use groundcheck_core::synthcp::{generate, CueVariant, DatasetBundle, GenerationConfig, Split};
use groundcheck_core::Error;

fn small_bundle() -> DatasetBundle {
    let cfg = GenerationConfig { n_train: 800, n_test: 300, n_control: 800, ..Default::default() };
    generate(&cfg, 11).unwrap()
}

fn small_suite() -> SuiteConfig {
    let mut s = profile::baseline_only(0);
    s.pretrain.epochs = 6;
    s.subset_count = Some(20);
    s
}

fn cell(label: &str, method: Method, variant: Option<CueVariant>) -> CellSpec {
    let base = profile::desk();
    let found = base
        .cells
        .iter()
        .chain(&base.control_cells)
        .find(|c| c.finetune.loss.method == method && c.finetune.cue_variant == variant)
        .unwrap();
    let mut f = found.finetune.clone();
    f.epochs = 2;
    CellSpec { label: label.into(), finetune: f }
}

#[test]
fn baseline_only_suite_has_one_row() {
    let out = run_suite(&small_bundle(), &small_suite()).unwrap();
    let r = &out.report;
    assert_eq!(r.accuracy.len(), 1);
    assert_eq!(r.accuracy[0].cell, BASELINE);
    assert_eq!(r.accuracy[0].bundle, BundleKind::Shifted);
    assert!(r.significance.is_empty());
    assert!(r.subset_sweep.is_empty());
}

#[test]
fn report_files_round_trip_and_self_comparison() {
    let bundle = small_bundle();
    let mut cfg = small_suite();
    cfg.seeds = vec![0, 1];
    cfg.cells = vec![cell("hint_relevant", Method::Hint, Some(CueVariant::Relevant))];
    cfg.control_cells = vec![cell("scr_relevant", Method::Scr, Some(CueVariant::Relevant))];
    let out = run_suite(&bundle, &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.accuracy.len(), 4);
    assert!(r.row(BundleKind::Control, "scr_relevant").is_some());
    let cmp = r.comparison(BASELINE, "hint_relevant").unwrap();
    assert!((0.0..=1.0).contains(&cmp.welch.p));

    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(r, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    assert_eq!(&load_report(&dir.path().join("report.json")).unwrap(), r);

    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), REPORT_CSV_HEADER.to_vec());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * r.accuracy.len());
    let splits: Vec<&str> = rows.iter().map(|row| &row[6]).collect();
    assert_eq!(splits, ["train", "test", "train", "test", "control_train", "control_val", "control_train", "control_val"]);

    let md = markdown(r);
    assert_eq!(md.lines().filter(|l| l.starts_with("## ")).count(), 5);

    // The same records on both sides.
    let recs: Vec<_> = out.runs[&(BundleKind::Shifted, BASELINE.to_string())]
        .iter()
        .map(|run| run.as_ref().unwrap().eval_records.clone())
        .collect();
    let slices: Vec<&[_]> = recs.iter().map(Vec::as_slice).collect();
    let samples = groundcheck_core::metrics::subset_accuracy_samples(&slices, 20, 1).unwrap();
    assert_eq!(groundcheck_core::metrics::welch_t_test(&samples, &samples).unwrap().p, 1.0);
    assert_eq!(groundcheck_core::metrics::overlap(&recs[0], &recs[0]).unwrap(), 100.0);
}

#[test]
fn suite_is_deterministic() {
    let bundle = small_bundle();
    let mut cfg = small_suite();
    cfg.cells = vec![cell("zero_out_fixed_0.01", Method::ZeroOut, None)];
    let a = run_suite(&bundle, &cfg).unwrap();
    let b = run_suite(&bundle, &cfg).unwrap();
    let ja = groundcheck_core::json::to_string_pretty(&a.report).unwrap();
    let jb = groundcheck_core::json::to_string_pretty(&b.report).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn failed_cell_is_marked_and_suite_continues() {
    let mut cfg = small_suite();
    let mut bad = cell("hint_relevant", Method::Hint, Some(CueVariant::Relevant));
    bad.finetune.learning_rate = 1e300;
    cfg.cells = vec![bad, cell("scr_relevant", Method::Scr, Some(CueVariant::Relevant))];
    let out = run_suite(&small_bundle(), &cfg).unwrap();
    let failed = out.report.row(BundleKind::Shifted, "hint_relevant").unwrap();
    assert_eq!(failed.failures.len(), 1);
    assert!(failed.failures[0].contains("non-finite"), "{}", failed.failures[0]);
    assert_eq!(failed.eval.n, 0);
    assert!(out.report.row(BundleKind::Shifted, "scr_relevant").unwrap().failures.is_empty());
    assert!(markdown(&out.report).contains("failed"));
}

#[test]
fn invalid_suites_are_rejected() {
    let bundle = small_bundle();
    let mut cfg = small_suite();
    cfg.cells = vec![cell(BASELINE, Method::Hint, Some(CueVariant::Relevant))];
    assert!(matches!(run_suite(&bundle, &cfg), Err(Error::Config(_))));
    cfg.cells = vec![cell("x", Method::Hint, Some(CueVariant::Relevant)), cell("x", Method::Scr, Some(CueVariant::Relevant))];
    assert!(matches!(run_suite(&bundle, &cfg), Err(Error::Config(_))));
    cfg.cells.clear();
    cfg.seeds.clear();
    assert!(matches!(run_suite(&bundle, &cfg), Err(Error::Config(_))));
}

#[test]
fn unwritable_report_directory_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let report = run_suite(&small_bundle(), &small_suite()).unwrap().report;
    assert!(matches!(emit_report(&report, &blocker.join("sub")), Err(Error::Io(_))));
}

#[test]
fn pretraining_behaviour() {
    let bundle = small_bundle();
    let cfg = small_suite().pretrain;
    let mcfg = model_config(&bundle, &cfg);
    let control = pretrain(&cfg, &mcfg, bundle.split(Split::ControlTrain), bundle.split(Split::ControlVal), 3, "c").unwrap();
    assert!(control.log[1].loss < control.log[0].loss);

    let a = pretrain(&cfg, &mcfg, bundle.split(Split::Train), bundle.split(Split::Test), 3, "s").unwrap();
    let b = pretrain(&cfg, &mcfg, bundle.split(Split::Train), bundle.split(Split::Test), 3, "s").unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    let train = groundcheck_core::runner::train::accuracy_of(&mcfg, &a.checkpoint.params, bundle.split(Split::Train)).unwrap();
    let test = a.log.last().unwrap().eval_accuracy;
    assert!(train > test + 15.0, "train {train} test {test}");

    let mut zero = cfg.clone();
    zero.epochs = 0;
    assert!(matches!(pretrain(&zero, &mcfg, bundle.split(Split::Train), bundle.split(Split::Test), 3, "s"), Err(Error::Config(_))));
}

#[test]
fn finetuning_behaviour() {
    // Desk-sized data and pretraining: zero-out needs a model that has fit the train priors.
    let bundle = generate(&GenerationConfig::default(), 0).unwrap();
    let cfg = profile::desk().pretrain;
    let mcfg = model_config(&bundle, &cfg);
    let (train, test) = (bundle.split(Split::Train), bundle.split(Split::Test));
    let start = pretrain(&cfg, &mcfg, train, test, 5, "p").unwrap().checkpoint;
    let acc = |ck: &groundcheck_core::model::Checkpoint| {
        groundcheck_core::runner::train::accuracy_of(&mcfg, &ck.params, train).unwrap()
    };

    let mut idle = cell("z", Method::ZeroOut, None).finetune;
    idle.epochs = 0;
    let same = finetune(&start, &idle, train, test, 5, "p").unwrap();
    assert_eq!(same.checkpoint, start);
    assert_eq!(same.reporting_epoch, 0);

    let mut zero_out = cell("z", Method::ZeroOut, None).finetune;
    zero_out.subset_fraction = 0.01;
    zero_out.epochs = 8;
    let z = finetune(&start, &zero_out, train, test, 5, "z").unwrap();
    assert!(acc(&z.checkpoint) < acc(&start), "{} vs {}", acc(&z.checkpoint), acc(&start));

    let mut hint = cell("h", Method::Hint, Some(CueVariant::Relevant)).finetune;
    hint.epochs = 4;
    hint.selection = Selection::Last;
    let h = finetune(&start, &hint, train, test, 5, "h").unwrap();
    assert_eq!(h.log.len(), 4);
    assert!(h.log[3].method_loss < h.log[0].method_loss, "{:?}", h.log);
    assert_eq!(h.reporting_epoch, 4);
    assert_eq!(h.checkpoint.epoch, start.epoch + 4);
}
