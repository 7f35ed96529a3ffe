//! Dataset on-disk format, split construction, the left-out-classes OOD
//! protocol, and synthetic graph generators.
//!
//! A dataset directory holds `meta.json` (num_nodes, num_features,
//! num_classes, optional name), `features.csv` (one row of comma-separated
//! reals per node), `labels.csv` (`node_id,label` per line) and `edges.csv`
//! (`src,dst` per line). All indices are 0-based, line endings LF, floats
//! written in shortest round-trip decimal form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::graph::{build_graph, Graph};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("{file} line {line}: {message}")]
    FormatAt {
        file: String,
        line: usize,
        message: String,
    },
}

/// A node-classification graph with features, labels and evaluation masks.
///
/// `labels` always stores one id per node. After [`leave_out_classes`] the
/// in-distribution classes occupy `0..num_classes_id` and the left-out
/// classes the remaining ids up to `num_classes`; before it the two counts
/// coincide. Masks are disjoint, and OOD nodes never carry a train or
/// validation flag.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: Option<String>,
    pub num_features: usize,
    /// Total number of label ids in `labels` (ID plus left-out classes).
    pub num_classes: usize,
    /// Number of in-distribution classes; the model predicts over these.
    pub num_classes_id: usize,
    /// Row-major `num_nodes × num_features`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub graph: Graph,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub ood_mask: Vec<bool>,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// The feature matrix as a constant (non-differentiable) tensor.
    pub fn features_tensor(&self, tape: &Tape) -> Tensor {
        tape.constant(
            vec![self.num_nodes(), self.num_features],
            self.features.clone(),
        )
    }

    /// Training nodes per in-distribution class — the per-class evidence
    /// scale for the flows.
    pub fn train_class_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_classes_id];
        for i in 0..self.num_nodes() {
            if self.train_mask[i] {
                counts[self.labels[i]] += 1.0;
            }
        }
        counts
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    #[serde(default)]
    name: Option<String>,
}

fn read_to_string(dir: &Path, file: &str) -> Result<String, DataError> {
    fs::read_to_string(dir.join(file)).map_err(|source| DataError::Io {
        file: file.to_string(),
        source,
    })
}

fn parse_index(tok: &str, limit: usize, what: &str, file: &str, line: usize) -> Result<usize, DataError> {
    let v: usize = tok.trim().parse().map_err(|_| DataError::FormatAt {
        file: file.into(),
        line,
        message: format!("cannot parse {what} from {tok:?}"),
    })?;
    if v >= limit {
        return Err(DataError::FormatAt {
            file: file.into(),
            line,
            message: format!("{what} {v} out of range 0..{limit}"),
        });
    }
    Ok(v)
}

/// Read a dataset directory. Masks come back unset (all false); apply
/// [`make_split`] and optionally [`leave_out_classes`] afterwards.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta: MetaFile =
        serde_json::from_str(&read_to_string(dir, "meta.json")?).map_err(|e| DataError::Format {
            file: "meta.json".into(),
            message: e.to_string(),
        })?;
    if meta.num_nodes == 0 || meta.num_features == 0 || meta.num_classes == 0 {
        return Err(DataError::Format {
            file: "meta.json".into(),
            message: "num_nodes, num_features and num_classes must all be positive".into(),
        });
    }
    let n = meta.num_nodes;

    let features_text = read_to_string(dir, "features.csv")?;
    let mut features = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0usize;
    for (line0, row) in features_text.lines().enumerate() {
        rows += 1;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != meta.num_features {
            return Err(DataError::FormatAt {
                file: "features.csv".into(),
                line: line0 + 1,
                message: format!("expected {} fields, found {}", meta.num_features, fields.len()),
            });
        }
        for tok in fields {
            let v: f64 = tok.trim().parse().map_err(|_| DataError::FormatAt {
                file: "features.csv".into(),
                line: line0 + 1,
                message: format!("cannot parse feature value from {tok:?}"),
            })?;
            features.push(v);
        }
    }
    if rows != n {
        return Err(DataError::Format {
            file: "features.csv".into(),
            message: format!("expected {n} rows, found {rows}"),
        });
    }

    let labels_text = read_to_string(dir, "labels.csv")?;
    let mut labels = vec![usize::MAX; n];
    for (line0, row) in labels_text.lines().enumerate() {
        let line = line0 + 1;
        let (id_tok, label_tok) = row.split_once(',').ok_or_else(|| DataError::FormatAt {
            file: "labels.csv".into(),
            line,
            message: format!("expected node_id,label, found {row:?}"),
        })?;
        let id = parse_index(id_tok, n, "node id", "labels.csv", line)?;
        let label = parse_index(label_tok, meta.num_classes, "label", "labels.csv", line)?;
        if labels[id] != usize::MAX {
            return Err(DataError::FormatAt {
                file: "labels.csv".into(),
                line,
                message: format!("node {id} labeled twice"),
            });
        }
        labels[id] = label;
    }
    if let Some(missing) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(DataError::Format {
            file: "labels.csv".into(),
            message: format!("node {missing} has no label"),
        });
    }

    let edges_text = read_to_string(dir, "edges.csv")?;
    let mut edge_list = Vec::new();
    for (line0, row) in edges_text.lines().enumerate() {
        let line = line0 + 1;
        let (a, b) = row.split_once(',').ok_or_else(|| DataError::FormatAt {
            file: "edges.csv".into(),
            line,
            message: format!("expected src,dst, found {row:?}"),
        })?;
        edge_list.push((
            parse_index(a, n, "source node", "edges.csv", line)?,
            parse_index(b, n, "target node", "edges.csv", line)?,
        ));
    }
    let graph = build_graph(n, &edge_list).expect("edge endpoints validated above");

    Ok(Dataset {
        name: meta.name,
        num_features: meta.num_features,
        num_classes: meta.num_classes,
        num_classes_id: meta.num_classes,
        features,
        labels,
        graph,
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
        ood_mask: vec![false; n],
    })
}

/// Write the dataset directory format read by [`load_dataset`]. Masks are
/// not part of the format; a round-trip reproduces features, labels and
/// edges exactly (floats are printed in shortest round-trip form).
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    let write = |file: &str, text: String| -> Result<(), DataError> {
        fs::write(dir.join(file), text).map_err(|source| DataError::Io {
            file: file.to_string(),
            source,
        })
    };

    let mut meta = String::from("{\n");
    let _ = write!(
        meta,
        "  \"num_nodes\": {},\n  \"num_features\": {},\n  \"num_classes\": {}",
        ds.num_nodes(),
        ds.num_features,
        ds.num_classes
    );
    if let Some(name) = &ds.name {
        let _ = write!(meta, ",\n  \"name\": {}", serde_json::to_string(name).unwrap());
    }
    meta.push_str("\n}\n");
    write("meta.json", meta)?;

    let mut features = String::new();
    for row in ds.features.chunks(ds.num_features) {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                features.push(',');
            }
            let _ = write!(features, "{v}");
        }
        features.push('\n');
    }
    write("features.csv", features)?;

    let mut labels = String::new();
    for (i, l) in ds.labels.iter().enumerate() {
        let _ = writeln!(labels, "{i},{l}");
    }
    write("labels.csv", labels)?;

    let mut edges = String::new();
    for &(a, b) in ds.graph.edges() {
        let _ = writeln!(edges, "{a},{b}");
    }
    write("edges.csv", edges)?;
    Ok(())
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.05,
            val_frac: 0.15,
            test_frac: 0.80,
            seed: 0,
        }
    }
}

/// Nodes per split for a group of `m`, with at least one training node when
/// `guarantee_train` (per-class stratification) is requested.
fn split_counts(m: usize, spec: &SplitSpec, guarantee_train: bool) -> (usize, usize) {
    let mut n_train = (spec.train_frac * m as f64).round() as usize;
    if guarantee_train {
        n_train = n_train.max(1);
    }
    n_train = n_train.min(m);
    let n_val = ((spec.val_frac * m as f64).round() as usize).min(m - n_train);
    (n_train, n_val)
}

/// Assign stratified train/val/test masks. Classes are shuffled and cut
/// independently (stream keyed by class index), so adding or removing one
/// class never moves another class's nodes. Classes with fewer than 3 nodes
/// cannot be stratified and fall into a globally sampled pool; each such
/// fallback is reported in the returned warning list. OOD-masked nodes are
/// never sampled — they always land in the test mask.
pub fn make_split(ds: &mut Dataset, spec: &SplitSpec) -> Vec<String> {
    let sum = spec.train_frac + spec.val_frac + spec.test_frac;
    assert!(
        spec.train_frac >= 0.0
            && spec.val_frac >= 0.0
            && spec.test_frac >= 0.0
            && (sum - 1.0).abs() < 1e-9,
        "make_split: fractions must be nonnegative and sum to 1, got {sum}"
    );

    let n = ds.num_nodes();
    ds.train_mask = vec![false; n];
    ds.val_mask = vec![false; n];
    ds.test_mask = vec![false; n];
    let mut warnings = Vec::new();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for i in 0..n {
        if ds.ood_mask[i] {
            ds.test_mask[i] = true;
        } else {
            by_class[ds.labels[i]].push(i);
        }
    }

    let mut pool = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 3 {
            warnings.push(format!(
                "class {class} has {} node(s); too few to stratify, sampling globally",
                members.len()
            ));
            pool.extend(members);
            continue;
        }
        let mut rng = SplitMix64::derive(spec.seed, class as u64);
        rng.shuffle(&mut members);
        let (n_train, n_val) = split_counts(members.len(), spec, true);
        for (pos, &node) in members.iter().enumerate() {
            if pos < n_train {
                ds.train_mask[node] = true;
            } else if pos < n_train + n_val {
                ds.val_mask[node] = true;
            } else {
                ds.test_mask[node] = true;
            }
        }
    }

    if !pool.is_empty() {
        let mut rng = SplitMix64::derive(spec.seed, ds.num_classes as u64);
        rng.shuffle(&mut pool);
        let (n_train, n_val) = split_counts(pool.len(), spec, false);
        for (pos, &node) in pool.iter().enumerate() {
            if pos < n_train {
                ds.train_mask[node] = true;
            } else if pos < n_train + n_val {
                ds.val_mask[node] = true;
            } else {
                ds.test_mask[node] = true;
            }
        }
    }
    warnings
}

/// Mark whole classes as out-of-distribution: their nodes stay in the graph
/// (features remain visible) but lose train/validation membership and are
/// forced into the test mask, and labels are re-indexed so in-distribution
/// classes occupy `0..K_ID` and the left-out ones `K_ID..K`. Combined with
/// [`make_split`]'s own forcing, the resulting masks do not depend on which
/// of the two is applied first.
pub fn leave_out_classes(ds: &mut Dataset, ood_classes: &[usize]) {
    assert_eq!(
        ds.num_classes_id, ds.num_classes,
        "leave_out_classes: classes were already left out"
    );
    let mut ood = ood_classes.to_vec();
    ood.sort_unstable();
    ood.dedup();
    assert!(!ood.is_empty(), "leave_out_classes: no classes given");
    assert!(
        ood.len() < ds.num_classes,
        "leave_out_classes: at least one in-distribution class must remain"
    );
    assert!(
        *ood.last().unwrap() < ds.num_classes,
        "leave_out_classes: class {} out of range 0..{}",
        ood.last().unwrap(),
        ds.num_classes
    );

    let k_id = ds.num_classes - ood.len();
    let mut remap = vec![usize::MAX; ds.num_classes];
    let (mut next_id, mut next_ood) = (0, k_id);
    for c in 0..ds.num_classes {
        if ood.binary_search(&c).is_ok() {
            remap[c] = next_ood;
            next_ood += 1;
        } else {
            remap[c] = next_id;
            next_id += 1;
        }
    }

    for i in 0..ds.num_nodes() {
        let is_ood = ood.binary_search(&ds.labels[i]).is_ok();
        ds.labels[i] = remap[ds.labels[i]];
        if is_ood {
            ds.ood_mask[i] = true;
            ds.train_mask[i] = false;
            ds.val_mask[i] = false;
            ds.test_mask[i] = true;
        }
    }
    ds.num_classes_id = k_id;
}

/// The closed-form linear scenario: two in-distribution cliques with
/// constant features `[1,0,0]` and `[-1,0,0]`, plus an OOD clique with
/// features `[0,1,v]`, `v ~ U(-1,1)` drawn per node. Every edge connects
/// same-group nodes, so group homophily is exactly 1.
pub fn synth_appendix_c(n_per_class: usize, seed: u64) -> Dataset {
    assert!(n_per_class >= 2, "synth_appendix_c: need at least 2 nodes per group");
    let n = 3 * n_per_class;
    let mut rng = SplitMix64::new(seed);

    let mut features = Vec::with_capacity(n * 3);
    let mut labels = Vec::with_capacity(n);
    for group in 0..3 {
        for _ in 0..n_per_class {
            match group {
                0 => features.extend_from_slice(&[1.0, 0.0, 0.0]),
                1 => features.extend_from_slice(&[-1.0, 0.0, 0.0]),
                _ => {
                    let v = rng.uniform(-1.0, 1.0);
                    features.extend_from_slice(&[0.0, 1.0, v]);
                }
            }
            labels.push(group);
        }
    }

    let mut edge_list = Vec::new();
    for group in 0..3 {
        let base = group * n_per_class;
        for a in 0..n_per_class {
            for b in a + 1..n_per_class {
                edge_list.push((base + a, base + b));
            }
        }
    }
    let graph = build_graph(n, &edge_list).unwrap();

    let ood_mask: Vec<bool> = (0..n).map(|i| i >= 2 * n_per_class).collect();
    Dataset {
        name: Some("appendix-c".into()),
        num_features: 3,
        num_classes: 3,
        num_classes_id: 2,
        features,
        labels,
        graph,
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
        ood_mask,
    }
}

/// Stochastic block model with Gaussian feature clusters: every same-class
/// node pair is joined with probability `p_in`, every cross-class pair with
/// `p_out`, and node features are the class center plus isotropic noise.
pub fn synth_sbm(
    nodes_per_class: usize,
    k_total: usize,
    p_in: f64,
    p_out: f64,
    centers: &[Vec<f64>],
    noise_sigma: f64,
    seed: u64,
) -> Dataset {
    assert!(nodes_per_class >= 1 && k_total >= 2, "synth_sbm: need >= 2 classes with nodes");
    assert!(
        (0.0..=1.0).contains(&p_in) && (0.0..=1.0).contains(&p_out),
        "synth_sbm: edge probabilities must lie in [0,1]"
    );
    assert_eq!(centers.len(), k_total, "synth_sbm: one center per class");
    let d = centers[0].len();
    assert!(centers.iter().all(|c| c.len() == d), "synth_sbm: centers must share a dimension");
    for a in 0..k_total {
        for b in a + 1..k_total {
            assert_ne!(centers[a], centers[b], "synth_sbm: centers must be distinct");
        }
    }

    let n = nodes_per_class * k_total;
    let mut rng = SplitMix64::new(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for class in 0..k_total {
        for _ in 0..nodes_per_class {
            for &c in &centers[class] {
                features.push(c + noise_sigma * rng.next_normal());
            }
            labels.push(class);
        }
    }

    let mut edge_list = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.next_f64() < p {
                edge_list.push((i, j));
            }
        }
    }
    let graph = build_graph(n, &edge_list).unwrap();

    Dataset {
        name: Some("sbm".into()),
        num_features: d,
        num_classes: k_total,
        num_classes_id: k_total,
        features,
        labels,
        graph,
        train_mask: vec![false; n],
        val_mask: vec![false; n],
        test_mask: vec![false; n],
        ood_mask: vec![false; n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::homophily;
    use tempfile::tempdir;

    fn write_fixture(dir: &Path, meta: &str, features: &str, labels: &str, edges: &str) {
        fs::write(dir.join("meta.json"), meta).unwrap();
        fs::write(dir.join("features.csv"), features).unwrap();
        fs::write(dir.join("labels.csv"), labels).unwrap();
        fs::write(dir.join("edges.csv"), edges).unwrap();
    }

    const PATH_META: &str =
        r#"{"num_nodes": 3, "num_features": 2, "num_classes": 2, "name": "path"}"#;

    #[test]
    fn loads_path_graph_fixture() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            PATH_META,
            "0.5,1.0\n-1.25,0\n3,4.5\n",
            "0,0\n1,1\n2,0\n",
            "0,1\n1,2\n",
        );
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.graph.num_edges(), 2);
        assert_eq!(ds.name.as_deref(), Some("path"));
        assert_eq!(ds.features, vec![0.5, 1.0, -1.25, 0.0, 3.0, 4.5]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert!(ds.train_mask.iter().all(|&b| !b));
        assert_eq!(ds.num_classes_id, 2);
    }

    #[test]
    fn both_edge_directions_collapse_to_one() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            PATH_META,
            "0,0\n0,0\n0,0\n",
            "0,0\n1,1\n2,0\n",
            "0,1\n1,0\n",
        );
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.graph.num_edges(), 1);
    }

    #[test]
    fn out_of_range_label_names_file_and_line() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            PATH_META,
            "0,0\n0,0\n0,0\n",
            "0,0\n1,2\n2,0\n",
            "",
        );
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labels.csv") && err.contains("line 2"), "{err}");
        assert!(err.contains("out of range"), "{err}");
    }

    #[test]
    fn feature_row_count_mismatch_is_reported() {
        let dir = tempdir().unwrap();
        write_fixture(dir.path(), PATH_META, "0,0\n0,0\n", "0,0\n1,1\n2,0\n", "");
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features.csv") && err.contains("expected 3 rows"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("meta.json"), PATH_META).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features.csv"), "{err}");
    }

    #[test]
    fn duplicate_label_and_missing_label_are_errors() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            PATH_META,
            "0,0\n0,0\n0,0\n",
            "0,0\n0,1\n2,0\n",
            "",
        );
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labeled twice"), "{err}");

        write_fixture(
            dir.path(),
            PATH_META,
            "0,0\n0,0\n0,0\n",
            "0,0\n2,0\n2,1\n",
            "",
        );
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("labeled twice") || err.contains("no label"), "{err}");
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let centers = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]];
        let ds = synth_sbm(8, 3, 0.4, 0.1, &centers, 0.37, 99);
        let dir = tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.graph.edges(), ds.graph.edges());
        assert_eq!(back.num_classes, ds.num_classes);
        assert_eq!(back.name, ds.name);
    }

    fn balanced_fixture(n_per_class: usize, k: usize, seed: u64) -> Dataset {
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..k).map(|j| if j == c { 2.0 } else { 0.0 }).collect())
            .collect();
        synth_sbm(n_per_class, k, 0.2, 0.05, &centers, 0.3, seed)
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let mut ds = balanced_fixture(50, 2, 5);
        let spec = SplitSpec { seed: 42, ..SplitSpec::default() };
        let warnings = make_split(&mut ds, &spec);
        assert!(warnings.is_empty());

        // 5% of 50 rounds to 3 per class; 15% rounds to 8.
        for class in 0..2 {
            let train = (0..ds.num_nodes())
                .filter(|&i| ds.labels[i] == class && ds.train_mask[i])
                .count();
            let val = (0..ds.num_nodes())
                .filter(|&i| ds.labels[i] == class && ds.val_mask[i])
                .count();
            assert_eq!(train, 3);
            assert_eq!(val, 8);
        }
        for i in 0..ds.num_nodes() {
            let flags =
                ds.train_mask[i] as u8 + ds.val_mask[i] as u8 + ds.test_mask[i] as u8;
            assert_eq!(flags, 1, "node {i} must land in exactly one split");
        }

        let mut again = balanced_fixture(50, 2, 5);
        make_split(&mut again, &spec);
        assert_eq!(again.train_mask, ds.train_mask);
        assert_eq!(again.val_mask, ds.val_mask);

        let mut other = balanced_fixture(50, 2, 5);
        make_split(&mut other, &SplitSpec { seed: 43, ..spec });
        assert_ne!(other.train_mask, ds.train_mask);
        assert_eq!(
            other.train_mask.iter().filter(|&&b| b).count(),
            ds.train_mask.iter().filter(|&&b| b).count()
        );
    }

    #[test]
    fn tiny_class_falls_back_to_global_pool_with_warning() {
        let centers = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
        let mut ds = synth_sbm(10, 2, 0.3, 0.1, &centers, 0.2, 1);
        // Relabel two nodes into a third class with too few members.
        ds.num_classes = 3;
        ds.num_classes_id = 3;
        ds.labels[0] = 2;
        ds.labels[1] = 2;
        let warnings = make_split(&mut ds, &SplitSpec { seed: 7, ..SplitSpec::default() });
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("class 2"), "{}", warnings[0]);
    }

    #[test]
    fn leave_out_reindexes_and_clears_masks() {
        let mut ds = balanced_fixture(20, 3, 11);
        make_split(&mut ds, &SplitSpec::default());
        let had_train: Vec<usize> = (0..ds.num_nodes())
            .filter(|&i| ds.labels[i] == 1 && ds.train_mask[i])
            .collect();
        assert!(!had_train.is_empty());

        leave_out_classes(&mut ds, &[1]);
        assert_eq!(ds.num_classes_id, 2);
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.ood_mask.iter().filter(|&&b| b).count(), 20);
        for &i in &had_train {
            assert!(!ds.train_mask[i] && ds.ood_mask[i]);
        }
        // Old classes 0,2 -> 0,1; old class 1 -> 2.
        for i in 0..ds.num_nodes() {
            if ds.ood_mask[i] {
                assert_eq!(ds.labels[i], 2);
                assert!(!ds.train_mask[i] && !ds.val_mask[i]);
                assert!(ds.test_mask[i]);
            } else {
                assert!(ds.labels[i] < 2);
            }
        }
    }

    #[test]
    fn split_and_leave_out_commute_on_id_train_mask() {
        let spec = SplitSpec { seed: 21, ..SplitSpec::default() };

        let mut split_first = balanced_fixture(30, 3, 77);
        make_split(&mut split_first, &spec);
        leave_out_classes(&mut split_first, &[2]);

        let mut leave_first = balanced_fixture(30, 3, 77);
        leave_out_classes(&mut leave_first, &[2]);
        make_split(&mut leave_first, &spec);

        assert_eq!(split_first.train_mask, leave_first.train_mask);
        assert_eq!(split_first.val_mask, leave_first.val_mask);
        assert_eq!(split_first.test_mask, leave_first.test_mask);
        // OOD nodes always end up evaluable.
        for i in 0..leave_first.num_nodes() {
            if leave_first.ood_mask[i] {
                assert!(leave_first.test_mask[i]);
            }
        }
    }

    #[test]
    fn appendix_c_scenario_shape() {
        let ds = synth_appendix_c(5, 3);
        assert_eq!(ds.num_nodes(), 15);
        assert_eq!(ds.graph.num_edges(), 30); // 3 cliques of C(5,2)=10
        assert_eq!(ds.num_classes_id, 2);
        for i in 0..5 {
            assert_eq!(&ds.features[i * 3..i * 3 + 3], &[1.0, 0.0, 0.0]);
            let j = 5 + i;
            assert_eq!(&ds.features[j * 3..j * 3 + 3], &[-1.0, 0.0, 0.0]);
            let o = 10 + i;
            assert_eq!(ds.features[o * 3], 0.0);
            assert_eq!(ds.features[o * 3 + 1], 1.0);
            assert!(ds.features[o * 3 + 2].abs() < 1.0);
            assert!(ds.ood_mask[o] && !ds.ood_mask[i] && !ds.ood_mask[j]);
        }
        assert_eq!(homophily(&ds.graph, &ds.labels), 1.0);
    }

    #[test]
    fn appendix_c_third_coordinate_is_centered_uniform() {
        let n = 2000;
        let ds = synth_appendix_c(n, 999);
        let vs: Vec<f64> = (2 * n..3 * n).map(|i| ds.features[i * 3 + 2]).collect();
        let mean = vs.iter().sum::<f64>() / n as f64;
        // SE of the mean of U(-1,1) is sqrt(1/3/n).
        assert!(mean.abs() < 3.0 * (1.0 / 3.0 / n as f64).sqrt() + 1e-9, "mean {mean}");
        assert!(vs.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn sbm_homophily_limits() {
        let centers = vec![vec![3.0, 0.0], vec![0.0, 3.0]];
        let pure = synth_sbm(40, 2, 0.3, 0.0, &centers, 0.2, 5);
        assert_eq!(homophily(&pure.graph, &pure.labels), 1.0);

        // p_in == p_out: expected homophily is the same-class pair fraction
        // (n-1)/(Kn-1), with binomial noise around it.
        let k = 4;
        let n_per = 100;
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..2).map(|j| if j == c % 2 { c as f64 } else { -(c as f64) }).collect())
            .collect();
        let flat = synth_sbm(n_per, k, 0.05, 0.05, &centers, 0.1, 8);
        let h = homophily(&flat.graph, &flat.labels);
        let q = (n_per as f64 - 1.0) / ((k * n_per) as f64 - 1.0);
        let edges = flat.graph.num_edges() as f64;
        let sigma = (q * (1.0 - q) / edges).sqrt();
        assert!((h - q).abs() < 3.0 * sigma, "homophily {h}, expected {q} (sigma {sigma})");
    }

    #[test]
    fn sbm_is_deterministic_per_seed() {
        let centers = vec![vec![1.0], vec![-1.0]];
        let a = synth_sbm(15, 2, 0.2, 0.05, &centers, 0.4, 31);
        let b = synth_sbm(15, 2, 0.2, 0.05, &centers, 0.4, 31);
        assert_eq!(a.features, b.features);
        assert_eq!(a.graph.edges(), b.graph.edges());
        let c = synth_sbm(15, 2, 0.2, 0.05, &centers, 0.4, 32);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn train_class_counts_follow_the_mask() {
        let mut ds = balanced_fixture(50, 2, 5);
        make_split(&mut ds, &SplitSpec { seed: 42, ..SplitSpec::default() });
        assert_eq!(ds.train_class_counts(), vec![3.0, 3.0]);
    }
}
