//! The four-row ablation grid: stock model, re-tuned entropy weight,
//! re-tuned weight + activation, and the graph-distance-regularized model.
//!
//! All rows share one seed, so they start from the same initialization
//! stream and differ only in configuration — a paired comparison. Rows train
//! concurrently (one thread each) and the grid prints like the CSV the
//! `ablate` subcommand writes.
//!
//! Run with: `cargo run --release -p gpn --example ablation_grid`

use gpn::cli::{synth_dataset, SynthConfig};
use gpn::data::{leave_out_classes, make_split, SplitSpec};
use gpn::encoder::Activation;
use gpn::model::RegKind;
use gpn::trainer::{run_ablation, standard_ablation, EvalTask, TrainConfig};

fn main() {
    let mut ds = synth_dataset(&SynthConfig { n_per_class: 60, seed: 3, ..SynthConfig::default() });
    leave_out_classes(&mut ds, &[4]);
    make_split(&mut ds, &SplitSpec { train_frac: 0.05, val_frac: 0.15, test_frac: 0.80, seed: 3 });

    let base = TrainConfig { max_epochs: 150, seed: 3, ..TrainConfig::default() };
    let rows = standard_ablation(&base, 1e-5, Activation::Relu, 1e-3, RegKind::RAlpha);
    println!("training {} configurations in parallel...", rows.len());
    let outcomes = run_ablation(&ds, &rows, EvalTask::Ood);

    println!(
        "\n{:<12} {:>9} {:>10} {:>9} {:>10} {:>10} {:>6}",
        "model", "lambda1", "activation", "lambda2", "regularizer", "id_acc", "epi_w"
    );
    for o in &outcomes {
        match &o.result {
            Ok((report, best_epoch)) => {
                let epi = report.epi_w.auroc().map_or("--".into(), |a| format!("{a:.3}"));
                println!(
                    "{:<12} {:>9.0e} {:>10} {:>9.0e} {:>10} {:>10.3} {:>6}   (best epoch {})",
                    o.label,
                    o.cfg.loss.lambda1,
                    format!("{:?}", o.cfg.activation),
                    o.cfg.loss.lambda2,
                    o.cfg.loss.reg_kind.name(),
                    report.id_acc,
                    epi,
                    best_epoch
                );
            }
            Err(e) => println!("{:<12} failed: {e}", o.label),
        }
    }
    println!("\nepi_w = AUROC of the diffused epistemic channel on held-out-class detection");
}
