//! Per-class radial normalizing flows: latent log-densities via
//! change-of-variables, and class-count-scaled evidence.
//!
//! Layers map latent points toward the standard-normal base distribution
//! (the normalizing direction), so density evaluation composes forward and
//! never inverts anything.

use crate::autodiff::{ParamTensor, Tape, Tensor};
use crate::rng::SplitMix64;
use crate::special::softplus_inv;

/// Fixed radial-flow smoothing constant.
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Log-densities are clamped to this symmetric range before exponentiation;
/// outside it the clamp is a straight-through constant (zero gradient).
pub const LOG_DENSITY_CLAMP: f64 = 30.0;

/// One radial layer `z' = z + beta * (z - z0) / (gamma_f + ||z - z0||)`.
/// The effective `beta = -gamma_f + softplus(beta_raw)` keeps the layer
/// invertible for any raw value.
#[derive(Clone, Debug)]
pub struct RadialLayer {
    /// Reference point, `[L]`.
    pub z0: ParamTensor,
    /// Unconstrained scale, single entry.
    pub beta_raw: ParamTensor,
    /// Smoothing constant, fixed (not trained), > 0.
    pub gamma_f: f64,
}

impl RadialLayer {
    /// Identity-start layer: `z0 ~ N(0, 1)`, `beta_raw = softplus^{-1}(gamma_f)`
    /// so the effective beta starts at zero.
    pub fn init(latent_dim: usize, rng: &mut SplitMix64) -> RadialLayer {
        let z0 = (0..latent_dim).map(|_| rng.next_normal()).collect();
        RadialLayer {
            z0: ParamTensor::new(vec![latent_dim], z0),
            beta_raw: ParamTensor::scalar(softplus_inv(DEFAULT_GAMMA)),
            gamma_f: DEFAULT_GAMMA,
        }
    }
}

/// A class-conditional flow plus the training-node count that scales its
/// density into evidence.
#[derive(Clone, Debug)]
pub struct ClassFlow {
    pub layers: Vec<RadialLayer>,
    pub class_count: f64,
}

impl ClassFlow {
    pub fn init(
        latent_dim: usize,
        num_layers: usize,
        class_count: f64,
        rng: &mut SplitMix64,
    ) -> ClassFlow {
        assert!(class_count >= 0.0, "class_count must be nonnegative");
        let layers = (0..num_layers).map(|_| RadialLayer::init(latent_dim, rng)).collect();
        ClassFlow { layers, class_count }
    }

    pub fn named(&self, class: usize) -> Vec<(String, &ParamTensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("flow.{class}.{i}.z0"), &l.z0),
                    (format!("flow.{class}.{i}.beta_raw"), &l.beta_raw),
                ]
            })
            .collect()
    }

    pub fn named_mut(&mut self, class: usize) -> Vec<(String, &mut ParamTensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("flow.{class}.{i}.z0"), &mut l.z0),
                    (format!("flow.{class}.{i}.beta_raw"), &mut l.beta_raw),
                ]
            })
            .collect()
    }

    pub fn lift(&self, tape: &Tape, trainable: bool) -> LiftedClassFlow {
        let lift_param = |p: &ParamTensor| {
            if trainable {
                tape.leaf_from(p)
            } else {
                tape.constant_from(p)
            }
        };
        LiftedClassFlow {
            layers: self
                .layers
                .iter()
                .map(|l| LiftedRadialLayer {
                    z0: lift_param(&l.z0),
                    beta_raw: lift_param(&l.beta_raw),
                    gamma_f: l.gamma_f,
                })
                .collect(),
            class_count: self.class_count,
        }
    }
}

#[derive(Clone)]
pub struct LiftedRadialLayer {
    pub z0: Tensor,
    pub beta_raw: Tensor,
    pub gamma_f: f64,
}

#[derive(Clone)]
pub struct LiftedClassFlow {
    pub layers: Vec<LiftedRadialLayer>,
    pub class_count: f64,
}

impl LiftedClassFlow {
    /// Lifted tensors in the same order as `ClassFlow::named`.
    pub fn params(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.z0.clone(), l.beta_raw.clone()])
            .collect()
    }
}

/// Apply one radial layer to a batch of rows. Returns the transformed rows
/// and the per-row log-|det Jacobian|
/// `(L-1) ln(1 + beta h) + ln(1 + beta gamma h^2)` with `h = 1/(gamma + r)`.
pub fn radial_apply(z: &Tensor, layer: &LiftedRadialLayer) -> (Tensor, Tensor) {
    assert!(layer.gamma_f > 0.0, "radial_apply: gamma_f must be positive");
    let latent = z.shape()[1];
    assert_eq!(layer.z0.shape(), vec![latent], "radial_apply: z0 dimension mismatch");

    let beta = layer.beta_raw.softplus().add_scalar(-layer.gamma_f);
    let diff = z.add_row(&layer.z0.neg());
    let r = diff.row_norms();
    let h = r.add_scalar(layer.gamma_f).recip();
    let beta_h = h.mul_scalar(&beta);

    let moved = z.add(&diff.mul_col(&beta_h));
    let radial_term = beta_h.add_scalar(1.0).ln().scale((latent - 1) as f64);
    let normal_term = h.square().mul_scalar(&beta).scale(layer.gamma_f).add_scalar(1.0).ln();
    (moved, radial_term.add(&normal_term))
}

/// Per-row log-density `ln N(T(z); 0, I) + sum of layer log-dets` where `T`
/// composes the flow's layers. Differentiable in `z` and all parameters.
pub fn log_density(z: &Tensor, flow: &LiftedClassFlow) -> Tensor {
    let latent = z.shape()[1] as f64;
    let mut point = z.clone();
    let mut logdet: Option<Tensor> = None;
    for layer in &flow.layers {
        let (next, ld) = radial_apply(&point, layer);
        point = next;
        logdet = Some(match logdet {
            Some(acc) => acc.add(&ld),
            None => ld,
        });
    }
    let base = point
        .square()
        .sum_rows()
        .scale(-0.5)
        .add_scalar(-0.5 * latent * (2.0 * std::f64::consts::PI).ln());
    match logdet {
        Some(acc) => base.add(&acc),
        None => base,
    }
}

/// Evidence pass over all classes:
/// `beta_feat[i][k] = N_k * exp(clamp(log p(z_i | k)))`, `alpha_feat = beta_feat + 1`.
pub fn feature_evidence(z: &Tensor, flows: &[LiftedClassFlow]) -> (Tensor, Tensor) {
    assert!(!flows.is_empty(), "feature_evidence: need at least one class flow");
    let tape = z.tape();
    let columns: Vec<Tensor> = flows
        .iter()
        .map(|flow| {
            log_density(z, flow)
                .clamp(-LOG_DENSITY_CLAMP, LOG_DENSITY_CLAMP)
                .exp()
                .scale(flow.class_count)
        })
        .collect();
    let beta_feat = tape.concat_cols(&columns.iter().collect::<Vec<_>>());
    let alpha_feat = beta_feat.add_scalar(1.0);
    (beta_feat, alpha_feat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::special::softplus;

    fn layer(z0: Vec<f64>, beta_raw: f64) -> RadialLayer {
        RadialLayer {
            z0: ParamTensor::new(vec![z0.len()], z0),
            beta_raw: ParamTensor::scalar(beta_raw),
            gamma_f: DEFAULT_GAMMA,
        }
    }

    fn lift_layers(tape: &Tape, layers: Vec<RadialLayer>, count: f64) -> LiftedClassFlow {
        ClassFlow { layers, class_count: count }.lift(tape, false)
    }

    #[test]
    fn identity_start_leaves_points_and_logdet_untouched() {
        let tape = Tape::new();
        let flow = lift_layers(&tape, vec![layer(vec![0.4, -1.2], softplus_inv(1.0))], 1.0);
        let z = tape.leaf(vec![2, 2], vec![1.0, 2.0, -0.5, 0.3], false);
        let (moved, logdet) = radial_apply(&z, &flow.layers[0]);
        for (a, b) in moved.values().iter().zip(z.values()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(logdet.values().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn at_the_reference_point_logdet_collapses() {
        let tape = Tape::new();
        let beta_raw = 1.3;
        let beta = softplus(beta_raw) - DEFAULT_GAMMA;
        let flow = lift_layers(&tape, vec![layer(vec![0.7, -0.2, 1.1], beta_raw)], 1.0);
        let z = tape.leaf(vec![1, 3], vec![0.7, -0.2, 1.1], false);
        let (moved, logdet) = radial_apply(&z, &flow.layers[0]);
        assert_eq!(moved.values(), z.values());
        let want = 3.0 * (1.0 + beta / DEFAULT_GAMMA).ln();
        assert!((logdet.values()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn logdet_matches_a_numerical_jacobian() {
        let tape = Tape::new();
        let flow = lift_layers(&tape, vec![layer(vec![0.3, -0.8, 0.5], 1.7)], 1.0);
        let z_point = [0.9, 0.4, -1.3];
        let forward = |p: &[f64]| -> Vec<f64> {
            let t = Tape::new();
            let lifted = ClassFlow {
                layers: vec![layer(vec![0.3, -0.8, 0.5], 1.7)],
                class_count: 1.0,
            }
            .lift(&t, false);
            let z = t.leaf(vec![1, 3], p.to_vec(), false);
            radial_apply(&z, &lifted.layers[0]).0.values()
        };
        let step = 1e-6;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(3, 3);
        for j in 0..3 {
            let mut plus = z_point.to_vec();
            let mut minus = z_point.to_vec();
            plus[j] += step;
            minus[j] -= step;
            let (fp, fm) = (forward(&plus), forward(&minus));
            for i in 0..3 {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        let numeric = jac.determinant().abs().ln();
        let z = tape.leaf(vec![1, 3], z_point.to_vec(), false);
        let analytic = radial_apply(&z, &flow.layers[0]).1.values()[0];
        assert!((numeric - analytic).abs() < 1e-5, "{numeric} vs {analytic}");
    }

    #[test]
    fn zero_layer_density_is_standard_normal() {
        let tape = Tape::new();
        let flow = lift_layers(&tape, vec![], 1.0);
        let z = tape.leaf(vec![1, 2], vec![0.0, 0.0], false);
        let lp = log_density(&z, &flow).values()[0];
        assert!((lp - (-(2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
    }

    fn quadrature_mass(layers: Vec<RadialLayer>) -> f64 {
        let tape = Tape::new();
        let flow = lift_layers(&tape, layers, 1.0);
        let step: f64 = 0.05;
        let half: f64 = 6.0;
        let ticks: Vec<f64> = {
            let n = (2.0 * half / step).round() as usize;
            (0..=n).map(|i| -half + i as f64 * step).collect()
        };
        let mut points = Vec::with_capacity(ticks.len() * ticks.len() * 2);
        for &x in &ticks {
            for &y in &ticks {
                points.push(x);
                points.push(y);
            }
        }
        let n_rows = points.len() / 2;
        let z = tape.leaf(vec![n_rows, 2], points, false);
        let lp = log_density(&z, &flow).values();
        lp.iter().map(|v| v.exp()).sum::<f64>() * step * step
    }

    #[test]
    fn zero_layer_density_integrates_to_one() {
        let mass = quadrature_mass(vec![]);
        assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
    }

    #[test]
    fn one_layer_density_integrates_to_one() {
        let mass = quadrature_mass(vec![layer(vec![0.6, -0.4], 1.9)]);
        assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    }

    #[test]
    fn layers_are_numerically_invertible() {
        // Recover z from z' by solving the scalar radius equation
        // r' = r (1 + beta/(gamma + r)), which is strictly increasing in r.
        let mut rng = SplitMix64::new(31);
        for case in 0..100 {
            let latent = if case % 2 == 0 { 2 } else { 3 };
            let z0: Vec<f64> = (0..latent).map(|_| rng.next_normal()).collect();
            let beta_raw = rng.uniform(-2.0, 3.0);
            let l = layer(z0.clone(), beta_raw);
            let beta = softplus(beta_raw) - DEFAULT_GAMMA;
            let z: Vec<f64> = (0..latent).map(|_| rng.next_normal() * 2.0).collect();

            let tape = Tape::new();
            let flow = lift_layers(&tape, vec![layer(z0.clone(), beta_raw)], 1.0);
            let zt = tape.leaf(vec![1, latent], z.clone(), false);
            let moved = radial_apply(&zt, &flow.layers[0]).0.values();

            let r_target: f64 = moved
                .iter()
                .zip(&z0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let f = |r: f64| r * (1.0 + beta / (l.gamma_f + r)) - r_target;
            let (mut lo, mut hi) = (0.0, r_target + beta.abs() + 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r = 0.5 * (lo + hi);
            let scale = 1.0 / (1.0 + beta / (l.gamma_f + r));
            let recovered: Vec<f64> =
                moved.iter().zip(&z0).map(|(a, b)| b + (a - b) * scale).collect();
            let err: f64 = recovered
                .iter()
                .zip(&z)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-8, "case {case}: inversion error {err}");
        }
    }

    #[test]
    fn density_gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(55);
        let z0a: Vec<f64> = (0..3).map(|_| rng.next_normal()).collect();
        let z0b: Vec<f64> = (0..3).map(|_| rng.next_normal()).collect();
        let mk_layers = || vec![layer(z0a.clone(), 0.9), layer(z0b.clone(), -0.4)];

        let z_point = ParamTensor::new(vec![2, 3], (0..6).map(|_| rng.next_normal()).collect());
        let r = check_gradients(
            |tape, z| {
                let flow = ClassFlow { layers: mk_layers(), class_count: 1.0 }.lift(tape, false);
                log_density(z, &flow).sum()
            },
            &z_point,
            1e-4,
        );
        assert!(r.ok, "wrt z: {r}");

        let z_fixed: Vec<f64> = (0..6).map(|_| rng.next_normal()).collect();
        let r = check_gradients(
            |tape, z0| {
                let mut flow =
                    ClassFlow { layers: mk_layers(), class_count: 1.0 }.lift(tape, false);
                flow.layers[0].z0 = z0.clone();
                let z = tape.leaf(vec![2, 3], z_fixed.clone(), false);
                log_density(&z, &flow).sum()
            },
            &ParamTensor::new(vec![3], z0a.clone()),
            1e-4,
        );
        assert!(r.ok, "wrt z0: {r}");

        let r = check_gradients(
            |tape, beta_raw| {
                let mut flow =
                    ClassFlow { layers: mk_layers(), class_count: 1.0 }.lift(tape, false);
                flow.layers[1].beta_raw = beta_raw.clone();
                let z = tape.leaf(vec![2, 3], z_fixed.clone(), false);
                log_density(&z, &flow).sum()
            },
            &ParamTensor::scalar(-0.4),
            1e-4,
        );
        assert!(r.ok, "wrt beta_raw: {r}");
    }

    #[test]
    fn evidence_scales_with_class_counts() {
        let tape = Tape::new();
        let flows = vec![
            lift_layers(&tape, vec![], 100.0),
            lift_layers(&tape, vec![], 0.0),
        ];
        let z = tape.leaf(vec![1, 2], vec![0.0, 0.0], false);
        let (beta, alpha) = feature_evidence(&z, &flows);
        let want = 100.0 / (2.0 * std::f64::consts::PI);
        assert!((beta.values()[0] - want).abs() < 1e-10);
        assert_eq!(beta.values()[1], 0.0);
        assert_eq!(alpha.values()[1], 1.0);
        assert!(alpha.values().iter().all(|&v| v >= 1.0));
    }

    #[test]
    fn doubling_the_class_count_doubles_evidence_exactly() {
        let tape = Tape::new();
        let mk = |count: f64| lift_layers(&tape, vec![layer(vec![0.2, 0.1], 0.8)], count);
        let z = tape.leaf(vec![3, 2], vec![0.1, 0.2, -1.0, 0.5, 2.0, -0.3], false);
        let (b1, _) = feature_evidence(&z, &[mk(7.0)]);
        let (b2, _) = feature_evidence(&z, &[mk(14.0)]);
        for (a, b) in b1.values().iter().zip(b2.values()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn far_points_hit_the_log_density_clamp() {
        let tape = Tape::new();
        let flow = lift_layers(&tape, vec![], 50.0);
        let z = tape.leaf(vec![1, 2], vec![30.0, 0.0], false);
        let raw = log_density(&z, &flow).values()[0];
        assert!(raw < -230.0, "raw log-density {raw} should be far below the clamp");
        let (beta, _) = feature_evidence(&z, &[flow]);
        let want = 50.0 * (-LOG_DENSITY_CLAMP).exp();
        assert!((beta.values()[0] - want).abs() < 1e-18);
    }
}
