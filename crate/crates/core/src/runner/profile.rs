//! Ready-made suite configurations.
//!
//! `desk` is tuned for the synthetic data at its default size and runs on a
//! laptop core in minutes. `paper_scale` keeps the published optimizer
//! settings (tiny learning rates, raw sensitivities); on synthetic data those
//! barely move the weights and are kept only for reference runs.

use super::suite::{CellSpec, SuiteConfig};
use super::train::{FinetuneConfig, PretrainConfig, Selection};
use crate::losses::{LossConfig, Method};
use crate::model::Activation;
use crate::synthcp::{CueVariant, SubsetMode};

/// Subset fractions swept for zero-out.
pub const SWEEP_FRACTIONS: [f64; 6] = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0];

pub fn cell_label(method: Method, variant: Option<CueVariant>, r: f64, mode: SubsetMode) -> String {
    match method {
        Method::Hint | Method::Scr => format!("{}_{}", method.as_str(), variant.map_or("none", |v| v.as_str())),
        Method::ZeroOut => {
            let m = match mode {
                SubsetMode::Fixed => "fixed",
                SubsetMode::Variable => "variable",
            };
            format!("zero_out_{m}_{r}")
        }
        Method::Baseline => format!("bce_finetune_{r}"),
    }
}

struct Knobs {
    pretrain: PretrainConfig,
    hint: FinetuneConfig,
    scr: FinetuneConfig,
    zero_out: FinetuneConfig,
    bce: FinetuneConfig,
}

fn base_ft(method: Method, lr: f64, epochs: usize, normalize: bool) -> FinetuneConfig {
    let mut loss = LossConfig::for_method(method);
    loss.normalize_sensitivities = normalize;
    FinetuneConfig {
        loss,
        cue_variant: None,
        learning_rate: lr,
        lr_over_subset: false,
        momentum: 0.0,
        batch_size: 64,
        epochs,
        subset_fraction: 1.0,
        subset_mode: SubsetMode::Fixed,
        selection: Selection::BestEval,
        phase2_epochs: 0,
        phase2_learning_rate: 0.0,
        full_train_bce: false,
    }
}

fn assemble(k: Knobs, seeds: Vec<u64>) -> SuiteConfig {
    let mut cells = Vec::new();
    for (method, tmpl) in [(Method::Hint, &k.hint), (Method::Scr, &k.scr)] {
        for v in CueVariant::ALL {
            let mut f = tmpl.clone();
            f.cue_variant = Some(v);
            cells.push(CellSpec { label: cell_label(method, Some(v), 1.0, SubsetMode::Fixed), finetune: f });
        }
    }
    let zero_out = |r: f64, mode: SubsetMode| {
        let mut f = k.zero_out.clone();
        f.subset_fraction = r;
        f.subset_mode = mode;
        CellSpec { label: cell_label(Method::ZeroOut, None, r, mode), finetune: f }
    };
    for r in SWEEP_FRACTIONS {
        cells.push(zero_out(r, SubsetMode::Fixed));
    }
    cells.push(zero_out(0.01, SubsetMode::Variable));

    let bce = CellSpec { label: "bce_finetune".into(), finetune: k.bce.clone() };
    let control_cells = vec![
        bce,
        cells.iter().find(|c| c.label == "hint_relevant").cloned().expect("hint cell"),
        cells.iter().find(|c| c.label == "scr_relevant").cloned().expect("scr cell"),
        zero_out(0.01, SubsetMode::Fixed),
    ];
    SuiteConfig { seeds, pretrain: k.pretrain, cells, control_cells, subset_count: Some(200), stats_seed: 0x5eed }
}

/// Desk-scale profile.
pub fn desk() -> SuiteConfig {
    let pretrain = PretrainConfig {
        hidden: 32,
        activation: Activation::Softplus,
        project_activation: true,
        learning_rate: 2.0,
        momentum: 0.9,
        batch_size: 64,
        epochs: 40,
    };
    let hint = base_ft(Method::Hint, 0.25, 12, true);
    let mut scr = base_ft(Method::Scr, 0.5, 12, true);
    scr.loss.loss_weight = 1.0;
    let mut zero_out = base_ft(Method::ZeroOut, 0.01, 8, true);
    zero_out.lr_over_subset = true;
    zero_out.selection = Selection::Last;
    let mut bce = base_ft(Method::Baseline, 0.02, 4, true);
    bce.selection = Selection::Last;
    assemble(Knobs { pretrain, hint, scr, zero_out, bce }, (0..5).collect())
}

/// Published optimizer settings.
pub fn paper_scale() -> SuiteConfig {
    let pretrain = PretrainConfig {
        hidden: 32,
        activation: Activation::Softplus,
        project_activation: true,
        learning_rate: 1e-3,
        momentum: 0.0,
        batch_size: 384,
        epochs: 40,
    };
    let mut hint = base_ft(Method::Hint, 2e-5, 12, false);
    hint.batch_size = 384;
    let mut scr = base_ft(Method::Scr, 5e-5, 12, false);
    scr.batch_size = 384;
    scr.phase2_epochs = 12;
    scr.phase2_learning_rate = 1e-4;
    let mut zero_out = base_ft(Method::ZeroOut, 2e-6, 8, false);
    zero_out.batch_size = 384;
    zero_out.lr_over_subset = true;
    zero_out.selection = Selection::Last;
    let mut bce = base_ft(Method::Baseline, 2e-6, 4, false);
    bce.batch_size = 384;
    bce.selection = Selection::Last;
    assemble(Knobs { pretrain, hint, scr, zero_out, bce }, (0..5).collect())
}

/// One seed, baseline only: the smallest valid suite.
pub fn baseline_only(seed: u64) -> SuiteConfig {
    let mut s = desk();
    s.seeds = vec![seed];
    s.cells.clear();
    s.control_cells.clear();
    s
}
