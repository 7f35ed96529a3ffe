//! The on-disk dataset format: save a graph dataset, inspect the files,
//! load it back, and confirm the round trip is exact.
//!
//! A dataset directory holds four plain-text files:
//!   meta.json     — {"num_nodes", "num_features", "num_classes", "name"?}
//!   features.csv  — one row per node, comma-separated feature values
//!   labels.csv    — node_id,label per line
//!   edges.csv     — a,b per line, undirected, no duplicates or self-loops
//!
//! Masks are not stored: loading returns all-false masks, and splits are
//! reproduced from fractions plus a seed instead of shipped as data.
//!
//! Run with: `cargo run -p gpn --example dataset_roundtrip`

use gpn::cli::{synth_dataset, SynthConfig, SynthKind};
use gpn::data::{load_dataset, make_split, save_dataset, SplitSpec};

fn main() {
    let dir = tempfile::tempdir().expect("create temp dir");

    // A small block model, saved and reloaded.
    let ds = synth_dataset(&SynthConfig {
        n_per_class: 10,
        num_classes: 3,
        seed: 5,
        ..SynthConfig::default()
    });
    save_dataset(&ds, dir.path()).expect("save dataset");

    println!("dataset directory:");
    let mut entries: Vec<_> = std::fs::read_dir(dir.path())
        .expect("list dir")
        .map(|e| e.expect("dir entry"))
        .collect();
    entries.sort_by_key(|e| e.file_name());
    for e in &entries {
        let len = e.metadata().expect("metadata").len();
        println!("  {:<14} {:>6} bytes", e.file_name().to_string_lossy(), len);
    }
    let meta = std::fs::read_to_string(dir.path().join("meta.json")).expect("read meta");
    println!("\nmeta.json:\n{meta}");

    let mut loaded = load_dataset(dir.path()).expect("load dataset");
    assert_eq!(loaded.features, ds.features);
    assert_eq!(loaded.labels, ds.labels);
    assert_eq!(loaded.graph.edges(), ds.graph.edges());
    assert_eq!(loaded.num_classes, ds.num_classes);
    println!("round trip exact: features, labels, and edges all match");

    // Masks come back unset; splits are derived, not stored.
    assert!(loaded.train_mask.iter().all(|&b| !b));
    let spec = SplitSpec { train_frac: 0.3, val_frac: 0.2, test_frac: 0.5, seed: 9 };
    make_split(&mut loaded, &spec);
    println!(
        "split with fractions 0.3/0.2/0.5 (seed 9): {} train / {} val / {} test",
        loaded.train_mask.iter().filter(|&&b| b).count(),
        loaded.val_mask.iter().filter(|&&b| b).count(),
        loaded.test_mask.iter().filter(|&&b| b).count(),
    );

    // Same fractions + seed = same split, every time.
    let mut again = load_dataset(dir.path()).expect("load dataset");
    make_split(&mut again, &spec);
    assert_eq!(again.train_mask, loaded.train_mask);
    assert_eq!(again.val_mask, loaded.val_mask);
    assert_eq!(again.test_mask, loaded.test_mask);
    println!("re-deriving the split reproduces identical masks");

    // The second generator: the closed-form linear scenario.
    let clique = synth_dataset(&SynthConfig {
        kind: SynthKind::AppendixC,
        n_per_class: 4,
        seed: 0,
        ..SynthConfig::default()
    });
    println!(
        "\nlinear-scenario generator: {} nodes, {} edges, {} of them held out",
        clique.num_nodes(),
        clique.graph.num_edges(),
        clique.ood_mask.iter().filter(|&&b| b).count()
    );
}
