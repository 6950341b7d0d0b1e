//! Report files: `report.json` (lossless), `report.csv` (one row per cell and
//! split), `report.md` (five tables for reading) and one CSV per section.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::suite::{AccuracyRow, BundleKind, ExperimentReport, Stat, BASELINE};
use crate::error::Result;
use crate::losses::Method;
use crate::synthcp::{CueVariant, SubsetMode};

pub const REPORT_CSV_HEADER: [&str; 12] = [
    "bundle",
    "cell",
    "method",
    "variant",
    "subset_fraction",
    "subset_mode",
    "split",
    "mean",
    "std",
    "n",
    "cpig_mean",
    "cpig_std",
];

/// Write every report file into `dir` (created if missing).
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    fs::write(&json, crate::json::to_string_pretty(report)? + "\n")?;
    let csv = dir.join("report.csv");
    write_csv(report, &csv)?;
    let md = dir.join("report.md");
    fs::write(&md, markdown(report))?;
    let mut out = vec![json, csv, md];
    out.extend(write_sections(report, dir)?);
    Ok(out)
}

fn write_sections(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let sig = dir.join("significance.csv");
    let mut w = csv::Writer::from_path(&sig)?;
    w.write_record(["a", "b", "welch_t", "welch_dof", "welch_p", "paired_t", "paired_dof", "paired_p", "overlap"])?;
    for c in &report.significance {
        w.write_record([
            c.a.clone(),
            c.b.clone(),
            c.welch.t.to_string(),
            c.welch.dof.to_string(),
            c.welch.p.to_string(),
            c.paired.t.to_string(),
            c.paired.dof.to_string(),
            c.paired.p.to_string(),
            c.overlap.to_string(),
        ])?;
    }
    w.flush()?;

    let sp = dir.join("spearman.csv");
    let mut w = csv::Writer::from_path(&sp)?;
    w.write_record(["cell", "mean", "std", "n", "instances"])?;
    for r in &report.spearman {
        w.write_record([r.cell.clone(), r.rho.mean.to_string(), r.rho.std.to_string(), r.rho.n.to_string(), r.n_defined.to_string()])?;
    }
    w.flush()?;

    let at = dir.join("answer_types.csv");
    let mut w = csv::Writer::from_path(&at)?;
    w.write_record(["cell", "answer_type", "mean", "std", "n"])?;
    for r in &report.answer_types {
        w.write_record([
            r.cell.clone(),
            r.answer_type.as_str().to_string(),
            r.test.mean.to_string(),
            r.test.std.to_string(),
            r.test.n.to_string(),
        ])?;
    }
    w.flush()?;

    let sw = dir.join("subset_sweep.csv");
    let mut w = csv::Writer::from_path(&sw)?;
    w.write_record(["cell", "subset_fraction", "train_mean", "train_std", "test_mean", "test_std", "n"])?;
    for r in &report.subset_sweep {
        w.write_record([
            r.cell.clone(),
            r.subset_fraction.to_string(),
            r.train.mean.to_string(),
            r.train.std.to_string(),
            r.test.mean.to_string(),
            r.test.std.to_string(),
            r.test.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![sig, sp, at, sw])
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn mode_str(m: SubsetMode) -> &'static str {
    match m {
        SubsetMode::Fixed => "fixed",
        SubsetMode::Variable => "variable",
    }
}

fn write_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_CSV_HEADER)?;
    for row in &report.accuracy {
        let (tr, ev) = row.bundle.splits();
        for (split, stat, cpig) in [(tr, &row.train, None), (ev, &row.eval, row.cpig.as_ref())] {
            w.write_record([
                row.bundle.as_str().to_string(),
                row.cell.clone(),
                row.method.as_str().to_string(),
                row.variant.map(|v| v.as_str().to_string()).unwrap_or_default(),
                opt_f(row.subset_fraction),
                row.subset_mode.map(|m| mode_str(m).to_string()).unwrap_or_default(),
                split.as_str().to_string(),
                format!("{}", stat.mean),
                format!("{}", stat.std),
                stat.n.to_string(),
                opt_f(cpig.map(|c| c.mean)),
                opt_f(cpig.map(|c| c.std)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pm(s: &Stat) -> String {
    if s.n == 0 {
        "n/a".into()
    } else {
        format!("{:.2} ± {:.2}", s.mean, s.std)
    }
}

fn group_of(row: &AccuracyRow) -> &'static str {
    match (row.method, row.variant) {
        (Method::Baseline, _) => "Baseline",
        (Method::ZeroOut, _) => "Zero-out regularizer",
        (_, Some(CueVariant::Relevant)) => "Relevant cues",
        (_, Some(CueVariant::Irrelevant)) => "Irrelevant cues",
        (_, Some(CueVariant::FixedRandom)) => "Fixed random cues",
        (_, Some(CueVariant::VariableRandom)) => "Variable random cues",
        (_, None) => "Other",
    }
}

const GROUPS: [&str; 6] = [
    "Baseline",
    "Relevant cues",
    "Irrelevant cues",
    "Fixed random cues",
    "Variable random cues",
    "Zero-out regularizer",
];

pub fn markdown(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# Grounding ablation report\n\nDataset seed {}, {} suite seed(s), {} subsets per significance test.\n",
        report.dataset_seed,
        report.suite.seeds.len(),
        report.subset_count
    );

    let _ = writeln!(s, "## Accuracy\n");
    let _ = writeln!(s, "| Group | Cell | Train | Test | CPIG | Seeds |\n|---|---|---|---|---|---|");
    let shifted: Vec<&AccuracyRow> = report.accuracy.iter().filter(|r| r.bundle == BundleKind::Shifted).collect();
    for g in GROUPS {
        for r in shifted.iter().filter(|r| group_of(r) == g) {
            let _ = writeln!(
                s,
                "| {g} | {} | {} | {} | {} | {} |",
                r.cell,
                pm(&r.train),
                pm(&r.eval),
                r.cpig.as_ref().map_or("n/a".into(), pm),
                if r.failures.is_empty() { r.eval.n.to_string() } else { format!("{} (failed: {})", r.eval.n, r.failures.len()) }
            );
        }
    }
    let control: Vec<&AccuracyRow> = report.accuracy.iter().filter(|r| r.bundle == BundleKind::Control).collect();
    if !control.is_empty() {
        let base = control.iter().find(|r| r.cell == BASELINE).map(|r| r.eval.mean);
        let _ = writeln!(s, "\nMatched-prior control:\n\n| Cell | Train | Validation | Change |\n|---|---|---|---|");
        for r in control {
            let change = base.map_or("n/a".into(), |b| format!("{:+.2}", r.eval.mean - b));
            let _ = writeln!(s, "| {} | {} | {} | {change} |", r.cell, pm(&r.train), pm(&r.eval));
        }
    }

    let _ = writeln!(s, "\n## Significance\n");
    let _ = writeln!(s, "| A | B | Welch t | dof | p | Paired p | Overlap % |\n|---|---|---|---|---|---|---|");
    for c in &report.significance {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.1} | {:.3e} | {:.3e} | {:.2} |",
            c.a, c.b, c.welch.t, c.welch.dof, c.welch.p, c.paired.p, c.overlap
        );
    }

    let _ = writeln!(s, "\n## Sensitivity rank correlation\n");
    let _ = writeln!(s, "| Cell | Spearman | Instances |\n|---|---|---|");
    for r in &report.spearman {
        let _ = writeln!(s, "| {} | {} | {} |", r.cell, pm(&r.rho), r.n_defined);
    }

    let _ = writeln!(s, "\n## Accuracy by answer type\n");
    let _ = writeln!(s, "| Cell | Type | Test |\n|---|---|---|");
    for r in &report.answer_types {
        let _ = writeln!(s, "| {} | {} | {} |", r.cell, r.answer_type.as_str(), pm(&r.test));
    }

    let _ = writeln!(s, "\n## Zero-out subset size\n");
    let _ = writeln!(s, "| r | Train | Test |\n|---|---|---|");
    for r in &report.subset_sweep {
        let _ = writeln!(s, "| {} | {} | {} |", r.subset_fraction, pm(&r.train), pm(&r.test));
    }
    s
}
