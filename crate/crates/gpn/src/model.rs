//! The full model: encode features, score latents with per-class flows,
//! diffuse evidence over the graph, and assemble the training objective
//! (uncertain cross-entropy, entropy reward, distance regularizer).

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamTensor, Tape, Tensor};
use crate::dirichlet::{dirichlet_entropy, kl_dirichlet, uce};
use crate::encoder::{Activation, EncoderParams, LiftedEncoder};
use crate::flow::{feature_evidence, ClassFlow, LiftedClassFlow};
use crate::graph::{ppr_diffuse, Graph, NormalizedAdjacency};
use crate::rng::SplitMix64;

/// Which distance regularizer the objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegKind {
    /// Squared latent distances over edges.
    #[serde(rename = "r_d")]
    RD,
    /// Symmetric Dirichlet KL over edges, on pre-diffusion concentrations.
    #[serde(rename = "r_alpha")]
    RAlpha,
    /// No distance term.
    #[serde(rename = "none")]
    None,
}

impl RegKind {
    pub fn name(self) -> &'static str {
        match self {
            RegKind::RD => "r_d",
            RegKind::RAlpha => "r_alpha",
            RegKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<RegKind> {
        [RegKind::RD, RegKind::RAlpha, RegKind::None].into_iter().find(|k| k.name() == s)
    }
}

/// Objective weights: `total = UCE - lambda1 * entropy + lambda2 * reg`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub reg_kind: RegKind,
}

impl Default for LossConfig {
    /// Baseline objective: UCE with the customary small entropy weight and
    /// no distance term.
    fn default() -> Self {
        LossConfig { lambda1: 1e-4, lambda2: 0.0, reg_kind: RegKind::None }
    }
}

impl LossConfig {
    pub fn validate(&self) {
        assert!(
            self.lambda1.is_finite() && self.lambda1 >= 0.0,
            "lambda1 must be finite and nonnegative, got {}",
            self.lambda1
        );
        assert!(
            self.lambda2.is_finite() && self.lambda2 >= 0.0,
            "lambda2 must be finite and nonnegative, got {}",
            self.lambda2
        );
    }
}

/// All learned state plus the diffusion protocol.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// One flow per class, indexed by class id.
    pub flows: Vec<ClassFlow>,
    pub teleport: f64,
    pub ppr_layers: usize,
}

impl ModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init_mlp(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        class_counts: &[f64],
        flow_layers: usize,
        activation: Activation,
        teleport: f64,
        ppr_layers: usize,
        rng: &mut SplitMix64,
    ) -> ModelParams {
        let encoder = EncoderParams::init_mlp(input_dim, hidden_dim, latent_dim, activation, rng);
        ModelParams::with_encoder(encoder, class_counts, flow_layers, teleport, ppr_layers, rng)
    }

    pub fn init_linear(
        input_dim: usize,
        latent_dim: usize,
        class_counts: &[f64],
        flow_layers: usize,
        teleport: f64,
        ppr_layers: usize,
        rng: &mut SplitMix64,
    ) -> ModelParams {
        let encoder = EncoderParams::init_linear(input_dim, latent_dim, rng);
        ModelParams::with_encoder(encoder, class_counts, flow_layers, teleport, ppr_layers, rng)
    }

    pub fn with_encoder(
        encoder: EncoderParams,
        class_counts: &[f64],
        flow_layers: usize,
        teleport: f64,
        ppr_layers: usize,
        rng: &mut SplitMix64,
    ) -> ModelParams {
        assert!(!class_counts.is_empty(), "need at least one class");
        let latent = encoder.latent_dim();
        let flows = class_counts
            .iter()
            .map(|&n_k| ClassFlow::init(latent, flow_layers, n_k, rng))
            .collect();
        ModelParams { encoder, flows, teleport, ppr_layers }
    }

    pub fn num_classes(&self) -> usize {
        self.flows.len()
    }

    pub fn class_counts(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.class_count).collect()
    }

    /// All parameter tensors, named, in a stable order (encoder first, then
    /// flows by class and layer). Training and persistence both key on this
    /// order.
    pub fn named(&self) -> Vec<(String, &ParamTensor)> {
        let mut v = self.encoder.named();
        for (k, f) in self.flows.iter().enumerate() {
            v.extend(f.named(k));
        }
        v
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut ParamTensor)> {
        let mut v = self.encoder.named_mut();
        for (k, f) in self.flows.iter_mut().enumerate() {
            v.extend(f.named_mut(k));
        }
        v
    }

    pub fn lift(&self, tape: &Tape, trainable: bool) -> LiftedModel {
        LiftedModel {
            encoder: self.encoder.lift(tape, trainable),
            flows: self.flows.iter().map(|f| f.lift(tape, trainable)).collect(),
        }
    }

    /// Full forward pass. `trainable` decides whether the lifted parameters
    /// record gradients.
    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        adj: &NormalizedAdjacency,
        trainable: bool,
    ) -> ForwardOutput {
        let lifted = self.lift(tape, trainable);
        forward_lifted(x, adj, &lifted, self.teleport, self.ppr_layers)
    }
}

/// Model parameters lifted onto one tape.
pub struct LiftedModel {
    pub encoder: LiftedEncoder,
    pub flows: Vec<LiftedClassFlow>,
}

impl LiftedModel {
    /// Lifted tensors aligned with `ModelParams::named`.
    pub fn params(&self) -> Vec<Tensor> {
        let mut v = self.encoder.params();
        for f in &self.flows {
            v.extend(f.params());
        }
        v
    }

    /// Mutable handles in the same order, for substituting single tensors
    /// (gradient checks perturb one parameter at a time).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = match &mut self.encoder {
            LiftedEncoder::Mlp { w1, b1, w2, b2, .. } => vec![w1, b1, w2, b2],
            LiftedEncoder::Linear { w } => vec![w],
        };
        for f in &mut self.flows {
            for l in &mut f.layers {
                v.push(&mut l.z0);
                v.push(&mut l.beta_raw);
            }
        }
        v
    }
}

/// Everything downstream consumers need from one pass.
pub struct ForwardOutput {
    /// Latent positions, `[N, L]`.
    pub z: Tensor,
    /// Pre-diffusion evidence, `[N, K]`.
    pub beta_feat: Tensor,
    /// Pre-diffusion concentrations (`beta_feat + 1`), `[N, K]`.
    pub alpha_feat: Tensor,
    /// Post-diffusion concentrations, `[N, K]`.
    pub alpha: Tensor,
    /// Lifted parameter tensors aligned with `ModelParams::named`, for
    /// reading gradients after `backward`.
    pub params: Vec<Tensor>,
}

/// Forward pass on already-lifted parameters:
/// encode, per-class evidence, PPR diffusion, `alpha = diffused + 1`.
pub fn forward_lifted(
    x: &Tensor,
    adj: &NormalizedAdjacency,
    lifted: &LiftedModel,
    teleport: f64,
    ppr_layers: usize,
) -> ForwardOutput {
    assert_eq!(
        x.shape()[0],
        adj.num_nodes(),
        "forward: {} feature rows for {} graph nodes",
        x.shape()[0],
        adj.num_nodes()
    );
    let z = lifted.encoder.encode(x);
    let (beta_feat, alpha_feat) = feature_evidence(&z, &lifted.flows);
    let beta_aggr = ppr_diffuse(&beta_feat, adj, teleport, ppr_layers);
    let alpha = beta_aggr.add_scalar(1.0);
    ForwardOutput { z, beta_feat, alpha_feat, alpha, params: lifted.params() }
}

fn edge_endpoints(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    g.edges().iter().map(|&(a, b)| (a, b)).unzip()
}

/// Squared latent distance summed over undirected edges (each once):
/// `sum_{(i,j) in E} ||z_i - z_j||^2`. Built from gather/sub/square, so the
/// gradient is smooth even where endpoints coincide.
pub fn r_distance(z: &Tensor, g: &Graph) -> Tensor {
    assert_eq!(z.shape()[0], g.num_nodes(), "r_distance: row count != node count");
    if g.num_edges() == 0 {
        return z.tape().scalar(0.0);
    }
    let (src, dst) = edge_endpoints(g);
    z.gather_rows(&src).sub(&z.gather_rows(&dst)).square().sum()
}

/// Symmetric Dirichlet KL summed over undirected edges (each once, both
/// directions inside): `sum_{(i,j) in E} KL(a_i || a_j) + KL(a_j || a_i)`.
pub fn r_alpha(alpha_feat: &Tensor, g: &Graph) -> Tensor {
    assert_eq!(alpha_feat.shape()[0], g.num_nodes(), "r_alpha: row count != node count");
    if g.num_edges() == 0 {
        return alpha_feat.tape().scalar(0.0);
    }
    let (src, dst) = edge_endpoints(g);
    let ai = alpha_feat.gather_rows(&src);
    let aj = alpha_feat.gather_rows(&dst);
    kl_dirichlet(&ai, &aj).sum().add(&kl_dirichlet(&aj, &ai).sum())
}

/// Scalar objective
/// `UCE(alpha, y) - lambda1 * sum_{i in mask} H(Dir(alpha_i)) + lambda2 * R`
/// with `R` chosen by `reg_kind` (`r_d` on latents, `r_alpha` on
/// pre-diffusion concentrations). Zero-weight terms are skipped outright.
pub fn total_loss(
    out: &ForwardOutput,
    labels: &[usize],
    train_mask: &[bool],
    g: &Graph,
    cfg: &LossConfig,
) -> Tensor {
    let (loss, _) = total_loss_terms(out, labels, train_mask, g, cfg);
    loss
}

/// Values of the individual objective terms, for logging and failure reports.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub uce: f64,
    pub entropy_sum: f64,
    pub reg: f64,
}

/// As [`total_loss`], also reporting each term's value.
pub fn total_loss_terms(
    out: &ForwardOutput,
    labels: &[usize],
    train_mask: &[bool],
    g: &Graph,
    cfg: &LossConfig,
) -> (Tensor, LossTerms) {
    cfg.validate();
    let uce_term = uce(&out.alpha, labels, train_mask);
    let mut terms =
        LossTerms { uce: uce_term.scalar_value(), entropy_sum: 0.0, reg: 0.0 };
    let mut loss = uce_term;

    if cfg.lambda1 != 0.0 {
        let train_idx: Vec<usize> =
            (0..train_mask.len()).filter(|&i| train_mask[i]).collect();
        let entropy = dirichlet_entropy(&out.alpha.gather_rows(&train_idx)).sum();
        terms.entropy_sum = entropy.scalar_value();
        loss = loss.add(&entropy.scale(-cfg.lambda1));
    }

    if cfg.lambda2 != 0.0 {
        let reg = match cfg.reg_kind {
            RegKind::RD => Some(r_distance(&out.z, g)),
            RegKind::RAlpha => Some(r_alpha(&out.alpha_feat, g)),
            RegKind::None => None,
        };
        if let Some(reg) = reg {
            terms.reg = reg.scalar_value();
            loss = loss.add(&reg.scale(cfg.lambda2));
        }
    }
    (loss, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::graph::{build_graph, normalize};

    fn six_node_setup() -> (Graph, Vec<f64>, Vec<usize>, Vec<bool>) {
        let g = build_graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)]).unwrap();
        let mut rng = SplitMix64::new(123);
        let x: Vec<f64> = (0..18).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let labels = vec![0, 0, 0, 1, 1, 1];
        let mask = vec![true, true, false, true, true, false];
        (g, x, labels, mask)
    }

    fn small_model(activation: Activation, teleport: f64, seed: u64) -> ModelParams {
        let mut rng = SplitMix64::new(seed);
        ModelParams::init_mlp(3, 4, 2, &[3.0, 3.0], 2, activation, teleport, 4, &mut rng)
    }

    #[test]
    fn full_teleport_makes_diffusion_a_no_op() {
        let (g, x, _, _) = six_node_setup();
        let adj = normalize(&g);
        let model = small_model(Activation::Gelu, 1.0, 7);
        let tape = Tape::new();
        let xt = tape.constant(vec![6, 3], x);
        let out = model.forward(&tape, &xt, &adj, false);
        assert_eq!(out.alpha.values(), out.alpha_feat.values());
    }

    #[test]
    fn single_node_graph_diffusion_is_identity() {
        let g = build_graph(1, &[]).unwrap();
        let adj = normalize(&g);
        let model = small_model(Activation::Relu, 0.3, 9);
        let tape = Tape::new();
        let xt = tape.constant(vec![1, 3], vec![0.2, -0.4, 0.9]);
        let out = model.forward(&tape, &xt, &adj, false);
        for (a, b) in out.alpha.values().iter().zip(out.alpha_feat.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn concentrations_stay_at_least_one_and_finite() {
        let (g, x, _, _) = six_node_setup();
        let adj = normalize(&g);
        let model = small_model(Activation::HardTanh, 0.1, 21);
        let tape = Tape::new();
        let xt = tape.constant(vec![6, 3], x);
        let out = model.forward(&tape, &xt, &adj, false);
        for &v in &out.alpha.values() {
            assert!(v.is_finite() && v >= 1.0, "alpha entry {v}");
        }
        for &v in &out.alpha_feat.values() {
            assert!(v.is_finite() && v >= 1.0, "alpha_feat entry {v}");
        }
    }

    #[test]
    fn latent_distance_regularizer_closed_forms() {
        let tape = Tape::new();
        let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();

        let same = tape.constant(vec![3, 2], vec![0.4, -0.2, 0.4, -0.2, 0.4, -0.2]);
        assert_eq!(r_distance(&same, &g).scalar_value(), 0.0);

        let one_edge = build_graph(2, &[(0, 1)]).unwrap();
        let z = tape.constant(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(r_distance(&z, &one_edge).scalar_value(), 2.0);

        let z = tape.constant(vec![3, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(r_distance(&z, &g).scalar_value(), 4.0);
    }

    #[test]
    fn concentration_regularizer_closed_forms() {
        let tape = Tape::new();
        let one_edge = build_graph(2, &[(0, 1)]).unwrap();

        let same = tape.constant(vec![2, 2], vec![2.0, 1.0, 2.0, 1.0]);
        assert!(r_alpha(&same, &one_edge).scalar_value().abs() < 1e-15);

        // Mirrored rows: symmetric KL is twice the one-way divergence.
        let mirrored = tape.constant(vec![2, 2], vec![2.0, 1.0, 1.0, 2.0]);
        let total = r_alpha(&mirrored, &one_edge).scalar_value();
        let a = tape.constant(vec![1, 2], vec![2.0, 1.0]);
        let b = tape.constant(vec![1, 2], vec![1.0, 2.0]);
        let one_way = kl_dirichlet(&a, &b).scalar_value();
        assert!(total > 0.0);
        assert!((total - 2.0 * one_way).abs() < 1e-12);

        // KL([2,1]||[1,1]) + KL([1,1]||[2,1]) = (ln 2 - 1/2) + (1 - ln 2) = 1/2.
        let pair = tape.constant(vec![2, 2], vec![2.0, 1.0, 1.0, 1.0]);
        assert!((r_alpha(&pair, &one_edge).scalar_value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_reduce_to_plain_uce() {
        let (g, x, labels, mask) = six_node_setup();
        let adj = normalize(&g);
        let model = small_model(Activation::Gelu, 0.2, 33);
        let tape = Tape::new();
        let xt = tape.constant(vec![6, 3], x);
        let out = model.forward(&tape, &xt, &adj, false);
        let loss =
            total_loss(&out, &labels, &mask, &g, &LossConfig {
                lambda1: 0.0,
                lambda2: 0.0,
                reg_kind: RegKind::RD,
            });
        let bare = uce(&out.alpha, &labels, &mask);
        assert_eq!(loss.scalar_value(), bare.scalar_value());
    }

    #[test]
    fn loss_is_invariant_under_node_relabeling() {
        let (g, x, labels, mask) = six_node_setup();
        let adj = normalize(&g);
        let model = small_model(Activation::LogSigmoid, 0.15, 41);
        let cfg = LossConfig { lambda1: 1e-3, lambda2: 1e-2, reg_kind: RegKind::RAlpha };

        let tape = Tape::new();
        let xt = tape.constant(vec![6, 3], x.clone());
        let out = model.forward(&tape, &xt, &adj, false);
        let base = total_loss(&out, &labels, &mask, &g, &cfg).scalar_value();

        let perm = [3, 5, 0, 1, 4, 2]; // old -> new
        let mut px = vec![0.0; 18];
        let mut plabels = vec![0; 6];
        let mut pmask = vec![false; 6];
        for old in 0..6 {
            let new = perm[old];
            px[new * 3..new * 3 + 3].copy_from_slice(&x[old * 3..old * 3 + 3]);
            plabels[new] = labels[old];
            pmask[new] = mask[old];
        }
        let pedges: Vec<(usize, usize)> =
            g.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let pg = build_graph(6, &pedges).unwrap();
        let padj = normalize(&pg);
        let tape = Tape::new();
        let xt = tape.constant(vec![6, 3], px);
        let out = model.forward(&tape, &xt, &padj, false);
        let permuted = total_loss(&out, &plabels, &pmask, &pg, &cfg).scalar_value();

        assert!(
            (base - permuted).abs() <= 1e-12 * base.abs().max(1.0),
            "{base} vs {permuted}"
        );
    }

    #[test]
    fn regularizers_vanish_only_on_edgewise_identical_rows() {
        let tape = Tape::new();
        let g = build_graph(4, &[(0, 1), (2, 3)]).unwrap();
        // Components may differ from each other; within an edge rows match.
        let z = tape.constant(vec![4, 2], vec![1.0, 0.0, 1.0, 0.0, -2.0, 1.0, -2.0, 1.0]);
        assert_eq!(r_distance(&z, &g).scalar_value(), 0.0);
        let z = tape.constant(vec![4, 2], vec![1.0, 0.0, 1.0, 0.1, -2.0, 1.0, -2.0, 1.0]);
        assert!(r_distance(&z, &g).scalar_value() > 0.0);
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let (g, x, labels, mask) = six_node_setup();
        let adj = normalize(&g);
        let model = small_model(Activation::Gelu, 0.2, 57);
        let cfg = LossConfig { lambda1: 1e-3, lambda2: 1e-2, reg_kind: RegKind::RD };

        let named = model.named();
        for target in 0..named.len() {
            let point = named[target].1.clone();
            let report = check_gradients(
                |tape, t| {
                    let mut lifted = model.lift(tape, false);
                    *lifted.params_mut()[target] = t.clone();
                    let xt = tape.constant(vec![6, 3], x.clone());
                    let out =
                        forward_lifted(&xt, &adj, &lifted, model.teleport, model.ppr_layers);
                    total_loss(&out, &labels, &mask, &g, &cfg)
                },
                &point,
                1e-3,
            );
            assert!(report.ok, "param {} ({}): {report}", target, named[target].0);
        }
    }
}
