//! Model parameter persistence: train briefly, write the two-file parameter
//! bundle, reload it, and confirm the reloaded model predicts bit-identically.
//!
//! A trained model is stored as
//!   params.bin   — magic "GPN1" + every tensor as little-endian f64, in
//!                  declaration order
//!   params.json  — manifest: encoder kind/dims/activation, per-class
//!                  training counts, flow depth, diffusion settings, and the
//!                  tensor name/shape table
//!
//! Run with: `cargo run -p gpn --example model_persistence`

use gpn::cli::{load_params, save_params, synth_dataset, SynthConfig};
use gpn::data::{leave_out_classes, make_split, SplitSpec};
use gpn::trainer::{evaluate, train, EvalTask, TrainConfig};

fn main() {
    let mut ds = synth_dataset(&SynthConfig {
        n_per_class: 20,
        num_classes: 3,
        seed: 11,
        ..SynthConfig::default()
    });
    leave_out_classes(&mut ds, &[2]);
    make_split(&mut ds, &SplitSpec { train_frac: 0.3, val_frac: 0.2, test_frac: 0.5, seed: 11 });

    let cfg = TrainConfig { max_epochs: 40, seed: 11, ..TrainConfig::default() };
    let (params, _) = train(&ds, &cfg).expect("training runs");

    let dir = tempfile::tempdir().expect("create temp dir");
    save_params(&params, dir.path()).expect("save parameters");

    for file in ["params.bin", "params.json"] {
        let len = std::fs::metadata(dir.path().join(file)).expect("stat").len();
        println!("{file:<12} {len:>8} bytes");
    }
    let manifest = std::fs::read_to_string(dir.path().join("params.json")).expect("read manifest");
    let preview: String = manifest.lines().take(14).collect::<Vec<_>>().join("\n");
    println!("\nmanifest head:\n{preview}\n  ...");

    let reloaded = load_params(dir.path()).expect("load parameters");

    // Same tensors, bit for bit.
    let originals = params.named();
    let restored = reloaded.named();
    assert_eq!(originals.len(), restored.len());
    for ((name_a, a), (name_b, b)) in originals.iter().zip(restored.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(a.shape, b.shape, "shape drift in {name_a}");
        let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "value drift in {name_a}");
    }
    println!("\nreloaded tensors are bit-identical ({} tensors)", originals.len());

    // And therefore the evaluation is too.
    let before = evaluate(&params, &ds, EvalTask::Ood).expect("evaluate original");
    let after = evaluate(&reloaded, &ds, EvalTask::Ood).expect("evaluate reloaded");
    assert_eq!(before, after);
    println!(
        "evaluation reproduces exactly: id_acc {:.3}, epistemic AUROC {}",
        after.id_acc,
        after.epi_w.auroc().map_or("--".into(), |a| format!("{a:.3}"))
    );
}
