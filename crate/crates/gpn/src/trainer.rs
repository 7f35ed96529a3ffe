//! Full-graph training: Adam with decoupled weight decay, early stopping on
//! validation cross-entropy, and the threaded ablation harness.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::dirichlet::expected_probs;
use crate::encoder::Activation;
use crate::graph::normalize;
use crate::metrics::{eval_misclassification, eval_ood, EvalError, EvalReport};
use crate::model::{total_loss_terms, ForwardOutput, LossConfig, ModelParams, RegKind};
use crate::rng::SplitMix64;

/// Which feature encoder a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mlp,
    Linear,
}

/// Everything a training run depends on. Serializes to/from the flat JSON
/// config file; unknown keys are rejected and omitted keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub loss: LossConfig,
    pub activation: Activation,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub flow_layers: usize,
    pub teleport: f64,
    pub ppr_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            max_epochs: 2000,
            patience: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            loss: LossConfig::default(),
            activation: Activation::Relu,
            seed: 0,
            encoder: EncoderKind::Mlp,
            hidden_dim: 16,
            latent_dim: 4,
            flow_layers: 8,
            teleport: 0.1,
            ppr_layers: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        assert!(self.patience >= 1, "patience must be at least 1");
        assert!(self.max_epochs >= 1, "max_epochs must be at least 1");
        assert!(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            "Adam betas must lie in [0,1)"
        );
        assert!(self.adam_eps > 0.0, "adam_eps must be positive");
        assert!(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay must be finite and nonnegative"
        );
        assert!(
            self.teleport > 0.0 && self.teleport <= 1.0,
            "teleport must lie in (0,1], got {}",
            self.teleport
        );
        assert!(
            self.hidden_dim >= 1 && self.latent_dim >= 1,
            "encoder dimensions must be positive"
        );
        self.loss.validate();
    }

    /// Fresh model parameters for `ds`, seeded by this config.
    pub fn build_model(&self, ds: &Dataset) -> ModelParams {
        let mut rng = SplitMix64::new(self.seed);
        let counts = ds.train_class_counts();
        match self.encoder {
            EncoderKind::Mlp => ModelParams::init_mlp(
                ds.num_features,
                self.hidden_dim,
                self.latent_dim,
                &counts,
                self.flow_layers,
                self.activation,
                self.teleport,
                self.ppr_layers,
                &mut rng,
            ),
            EncoderKind::Linear => ModelParams::init_linear(
                ds.num_features,
                self.latent_dim,
                &counts,
                self.flow_layers,
                self.teleport,
                self.ppr_layers,
                &mut rng,
            ),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error(
        "non-finite loss at epoch {epoch} (uce {uce}, entropy {entropy}, regularizer {reg})"
    )]
    NonFiniteLoss { epoch: usize, uce: f64, entropy: f64, reg: f64 },
    #[error("non-finite gradient in {tensor} at epoch {epoch}")]
    NonFiniteGrad { tensor: String, epoch: usize },
}

/// Adam moment accumulators, aligned with `ModelParams::named()` order.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        let sizes: Vec<usize> = params.named().iter().map(|(_, p)| p.data.len()).collect();
        AdamState {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction; weight decay is decoupled and
/// applied multiplicatively before the moment update. A non-finite gradient
/// aborts the step and returns the offending tensor's name.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<(), String> {
    let named = params.named_mut();
    assert_eq!(named.len(), grads.len(), "adam_step: one gradient per parameter tensor");
    for ((name, p), g) in named.iter().zip(grads) {
        assert_eq!(p.data.len(), g.len(), "adam_step: gradient shape mismatch for {name}");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(name.clone());
        }
    }

    state.step += 1;
    let bias1 = 1.0 - cfg.adam_beta1.powi(state.step as i32);
    let bias2 = 1.0 - cfg.adam_beta2.powi(state.step as i32);
    for (slot, (_, p)) in named.into_iter().enumerate() {
        let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
        for (i, &g) in grads[slot].iter().enumerate() {
            if cfg.weight_decay > 0.0 {
                p.data[i] *= 1.0 - cfg.lr * cfg.weight_decay;
            }
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
            p.data[i] -= cfg.lr * (m[i] / bias1) / ((v[i] / bias2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Mean negative log expected probability of the true class over the
/// validation mask — the model-selection criterion.
pub fn validation_ce(out: &ForwardOutput, y: &[usize], val_mask: &[bool]) -> f64 {
    let probs = expected_probs(&out.alpha).values();
    let k = out.alpha.shape()[1];
    let (mut total, mut count) = (0.0, 0usize);
    for (i, &in_val) in val_mask.iter().enumerate() {
        if in_val {
            total -= probs[i * k + y[i]].ln();
            count += 1;
        }
    }
    assert!(count > 0, "validation_ce: empty validation mask");
    total / count as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ce: f64,
}

/// Per-epoch log of a run. `best_epoch` is 1-based and points at the first
/// epoch attaining the minimal validation cross-entropy.
#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub elapsed_secs: f64,
}

impl TrainHistory {
    /// CSV rendering (`epoch,train_loss,val_ce`); floats use shortest
    /// round-trip form so identical runs produce identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_ce\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_ce);
        }
        out
    }
}

/// Train on the dataset's train mask, selecting the epoch with the lowest
/// validation cross-entropy. Stops early after `patience` epochs without
/// strict improvement. Deterministic given the config seed.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory), TrainError> {
    cfg.validate();
    assert!(
        ds.train_mask.iter().any(|&b| b) && ds.val_mask.iter().any(|&b| b),
        "train: dataset needs nonempty train and validation masks; run make_split first"
    );
    for i in 0..ds.num_nodes() {
        assert!(
            !(ds.ood_mask[i] && (ds.train_mask[i] || ds.val_mask[i])),
            "train: OOD node {i} appears in the train or validation mask"
        );
        if ds.train_mask[i] || ds.val_mask[i] {
            assert!(
                ds.labels[i] < ds.num_classes_id,
                "train: node {i} carries a left-out label {}",
                ds.labels[i]
            );
        }
    }

    let start = Instant::now();
    let mut params = cfg.build_model(ds);
    let adj = normalize(&ds.graph);
    let mut state = AdamState::new(&params);

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let tape = Tape::new();
        let x = ds.features_tensor(&tape);
        let out = params.forward(&tape, &x, &adj, true);
        let (loss, terms) =
            total_loss_terms(&out, &ds.labels, &ds.train_mask, &ds.graph, &cfg.loss);
        let train_loss = loss.values()[0];
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                uce: terms.uce,
                entropy: terms.entropy_sum,
                reg: terms.reg,
            });
        }
        let val_ce = validation_ce(&out, &ds.labels, &ds.val_mask);
        records.push(EpochRecord { epoch, train_loss, val_ce });

        if best.as_ref().is_none_or(|(b, _, _)| val_ce < *b) {
            best = Some((val_ce, epoch, params.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }

        loss.backward();
        let grads: Vec<Vec<f64>> = out
            .params
            .iter()
            .map(|p| p.grad().expect("trainable leaves accumulate gradients"))
            .collect();
        adam_step(&mut params, &grads, &mut state, cfg)
            .map_err(|tensor| TrainError::NonFiniteGrad { tensor, epoch })?;
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok((
        best_params,
        TrainHistory { records, best_epoch, elapsed_secs: start.elapsed().as_secs_f64() },
    ))
}

/// Which detection protocol an evaluation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Ood,
    Misc,
}

/// Forward the model once and score the dataset's test mask. OOD detection
/// treats left-out nodes as positives; misclassification detection runs on
/// the in-distribution part of the test mask only.
pub fn evaluate(
    params: &ModelParams,
    ds: &Dataset,
    task: EvalTask,
) -> Result<EvalReport, EvalError> {
    let tape = Tape::new();
    let x = ds.features_tensor(&tape);
    let adj = normalize(&ds.graph);
    let out = params.forward(&tape, &x, &adj, false);
    match task {
        EvalTask::Ood => eval_ood(&out, &ds.labels, &ds.ood_mask, &ds.test_mask),
        EvalTask::Misc => {
            let id_test: Vec<bool> = (0..ds.num_nodes())
                .map(|i| ds.test_mask[i] && !ds.ood_mask[i])
                .collect();
            eval_misclassification(&out, &ds.labels, &id_test)
        }
    }
}

/// One labeled configuration in an ablation grid.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub cfg: TrainConfig,
}

/// A grid row's result: the evaluation report and best epoch, or the
/// training/evaluation failure that stopped it.
#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub label: String,
    pub cfg: TrainConfig,
    pub result: Result<(EvalReport, usize), String>,
}

/// The four-row grid of the evaluation protocol: stock baseline, re-tuned
/// entropy weight, re-tuned weight plus activation, and the full
/// distance-regularized model. Every row keeps the base seed, so within one
/// grid the rows share their initialization stream and differ only in
/// configuration — a paired comparison; repeat the grid across seeds for
/// spread.
pub fn standard_ablation(
    base: &TrainConfig,
    tuned_lambda1: f64,
    tuned_activation: Activation,
    tuned_lambda2: f64,
    reg_kind: RegKind,
) -> Vec<AblationRow> {
    let defaults = LossConfig::default();
    let specs = [
        ("GPN", defaults.lambda1, Activation::Relu, 0.0, RegKind::None),
        ("GPN-CE", tuned_lambda1, Activation::Relu, 0.0, RegKind::None),
        ("GPN-CE-ACT", tuned_lambda1, tuned_activation, 0.0, RegKind::None),
        ("GPN-CE-GD", tuned_lambda1, tuned_activation, tuned_lambda2, reg_kind),
    ];
    specs
        .into_iter()
        .map(|(label, lambda1, activation, lambda2, kind)| {
            let mut cfg = base.clone();
            cfg.activation = activation;
            cfg.loss = LossConfig { lambda1, lambda2, reg_kind: kind };
            AblationRow { label: label.to_string(), cfg }
        })
        .collect()
}

/// Train and evaluate every row, one thread per row. Failures are recorded
/// in the row's outcome; the rest of the grid still completes.
pub fn run_ablation(ds: &Dataset, rows: &[AblationRow], task: EvalTask) -> Vec<AblationOutcome> {
    let results: Vec<Result<(EvalReport, usize), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = rows
            .iter()
            .map(|row| {
                scope.spawn(move || match train(ds, &row.cfg) {
                    Ok((params, history)) => match evaluate(&params, ds, task) {
                        Ok(report) => Ok((report, history.best_epoch)),
                        Err(e) => Err(format!("evaluation failed: {e}")),
                    },
                    Err(e) => Err(format!("training failed: {e}")),
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("row thread panicked".into())))
            .collect()
    });
    rows.iter()
        .zip(results)
        .map(|(row, result)| AblationOutcome {
            label: row.label.clone(),
            cfg: row.cfg.clone(),
            result,
        })
        .collect()
}
