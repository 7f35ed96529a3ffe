//! Dirichlet-distribution calculus on the tape: uncertain cross-entropy,
//! differential entropy, KL divergence, expected probabilities, and the
//! scalar uncertainty channels derived from concentration parameters.
//!
//! All tensor-valued ops take an `N x K` concentration matrix and return
//! per-row results (length-`N` vectors) or a scalar, so a single-row matrix
//! covers the one-distribution case.

use crate::autodiff::Tensor;

fn assert_concentrations(alpha: &Tensor, op: &str) {
    assert_eq!(alpha.shape().len(), 2, "{op}: alpha must be an N x K matrix");
    // NaN/inf must reach the caller's non-finite-loss handling, so only
    // genuinely nonpositive entries (a sign error) trip this check.
    assert!(
        alpha.values().iter().all(|&v| !(v <= 0.0)),
        "{op}: concentration entries must be strictly positive"
    );
}

/// Uncertain cross-entropy `sum_{i in mask} (digamma(a_i0) - digamma(a_iy))`,
/// summed (not averaged) over the masked nodes. Differentiable w.r.t. alpha.
pub fn uce(alpha: &Tensor, labels: &[usize], mask: &[bool]) -> Tensor {
    assert_concentrations(alpha, "uce");
    let (n, k) = (alpha.shape()[0], alpha.shape()[1]);
    assert_eq!(labels.len(), n, "uce: {} labels for {} rows", labels.len(), n);
    assert_eq!(mask.len(), n, "uce: {} mask entries for {} rows", mask.len(), n);
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    for &i in &idx {
        assert!(labels[i] < k, "uce: node {i} has label {} outside 0..{k}", labels[i]);
    }
    let picked: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let rows = alpha.gather_rows(&idx);
    rows.sum_rows().digamma().sub(&rows.take_per_row(&picked).digamma()).sum()
}

/// Differential entropy of `Dir(alpha)` per row:
/// `log B(alpha) + (a0 - K) digamma(a0) - sum_k (a_k - 1) digamma(a_k)`.
pub fn dirichlet_entropy(alpha: &Tensor) -> Tensor {
    assert_concentrations(alpha, "dirichlet_entropy");
    let k = alpha.shape()[1] as f64;
    let a0 = alpha.sum_rows();
    let log_b = alpha.ln_gamma().sum_rows().sub(&a0.ln_gamma());
    let strength_term = a0.add_scalar(-k).mul(&a0.digamma());
    let per_class = alpha.add_scalar(-1.0).mul(&alpha.digamma()).sum_rows();
    log_b.add(&strength_term).sub(&per_class)
}

/// `KL(Dir(a) || Dir(b))` per row, in closed exponential-family form.
/// Differentiable in both arguments.
pub fn kl_dirichlet(a: &Tensor, b: &Tensor) -> Tensor {
    assert_concentrations(a, "kl_dirichlet");
    assert_concentrations(b, "kl_dirichlet");
    assert_eq!(a.shape(), b.shape(), "kl_dirichlet: shape mismatch");
    let a0 = a.sum_rows();
    let b0 = b.sum_rows();
    let log_norm = a0.ln_gamma().sub(&a.ln_gamma().sum_rows())
        .add(&b.ln_gamma().sum_rows().sub(&b0.ln_gamma()));
    // sum_k (a_k - b_k)(digamma(a_k) - digamma(a0))
    //   = sum_k (a_k - b_k) digamma(a_k) - (a0 - b0) digamma(a0)
    let diff = a.sub(b);
    let cross = diff.mul(&a.digamma()).sum_rows().sub(&a0.sub(&b0).mul(&a0.digamma()));
    log_norm.add(&cross)
}

/// Expected class probabilities `p_ik = a_ik / a_i0`; rows sum to 1.
pub fn expected_probs(alpha: &Tensor) -> Tensor {
    assert_concentrations(alpha, "expected_probs");
    alpha.mul_col(&alpha.sum_rows().recip())
}

/// Which scalar uncertainty to extract from a concentration matrix.
/// Larger score always means more uncertain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncertaintyChannel {
    /// Negative largest expected class probability.
    Alea,
    /// Negative Dirichlet strength (row sum); separates out-of-distribution
    /// nodes because unfamiliar inputs collect little evidence.
    EpiOod,
    /// Negative largest concentration entry; suited to misclassification
    /// detection.
    EpiMisc,
}

/// Per-node uncertainty scores. Plain values, not tracked on the tape:
/// scores feed ranking metrics, never the loss.
pub fn uncertainty_scores(alpha: &Tensor, channel: UncertaintyChannel) -> Vec<f64> {
    assert_concentrations(alpha, "uncertainty_scores");
    let (n, k) = (alpha.shape()[0], alpha.shape()[1]);
    let v = alpha.values();
    (0..n)
        .map(|i| {
            let row = &v[i * k..(i + 1) * k];
            let a0: f64 = row.iter().sum();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            match channel {
                UncertaintyChannel::Alea => -(max / a0),
                UncertaintyChannel::EpiOod => -a0,
                UncertaintyChannel::EpiMisc => -max,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, ParamTensor, Tape};
    use crate::rng::SplitMix64;
    use crate::special::digamma;

    fn scalar_of(t: &Tensor) -> f64 {
        t.scalar_value()
    }

    fn row(tape: &Tape, data: Vec<f64>) -> Tensor {
        let k = data.len();
        tape.leaf(vec![1, k], data, false)
    }

    #[test]
    fn uce_matches_digamma_recurrences() {
        let tape = Tape::new();
        let a = row(&tape, vec![1.0, 1.0]);
        assert!((scalar_of(&uce(&a, &[0], &[true])) - 1.0).abs() < 1e-12);

        let a = row(&tape, vec![2.0, 1.0, 1.0]);
        let want = 0.5 + 1.0 / 3.0;
        assert!((scalar_of(&uce(&a, &[0], &[true])) - want).abs() < 1e-12);

        let a = tape.leaf(vec![2, 2], vec![3.0, 1.0, 1.0, 3.0], false);
        let want = 2.0 * (digamma(4.0) - digamma(3.0));
        assert!((scalar_of(&uce(&a, &[0, 1], &[true, true])) - want).abs() < 1e-12);
        assert!((want - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uce_ignores_unmasked_rows_and_empty_mask_is_zero() {
        let tape = Tape::new();
        let a = tape.leaf(vec![2, 2], vec![2.0, 1.0, 50.0, 1.0], false);
        let only_first = uce(&a, &[0, 0], &[true, false]);
        assert!((scalar_of(&only_first) - (digamma(3.0) - digamma(2.0))).abs() < 1e-12);
        let none = uce(&a, &[0, 0], &[false, false]);
        assert_eq!(scalar_of(&none), 0.0);
    }

    #[test]
    #[should_panic(expected = "label 3 outside 0..2")]
    fn uce_rejects_invalid_masked_label() {
        let tape = Tape::new();
        let a = row(&tape, vec![1.0, 1.0]);
        let _ = uce(&a, &[3], &[true]);
    }

    #[test]
    fn uce_strictly_decreases_as_true_class_evidence_grows() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..100 {
            let k = 2 + rng.next_below(5);
            let y = rng.next_below(k);
            let base: Vec<f64> = (0..k).map(|_| rng.uniform(0.5, 5.0)).collect();
            let mut bumped = base.clone();
            bumped[y] += rng.uniform(0.1, 2.0);
            let tape = Tape::new();
            let lo = scalar_of(&uce(&row(&tape, base), &[y], &[true]));
            let hi = scalar_of(&uce(&row(&tape, bumped), &[y], &[true]));
            assert!(hi < lo, "uce must fall when true-class evidence rises: {hi} !< {lo}");
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let tape = Tape::new();
        assert!(scalar_of(&dirichlet_entropy(&row(&tape, vec![1.0, 1.0]))).abs() < 1e-12);
        let h = scalar_of(&dirichlet_entropy(&row(&tape, vec![1.0, 1.0, 1.0])));
        assert!((h - (-(2.0f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_maximized_by_the_symmetric_row() {
        // Over rows with fixed strength a0 = 6 and K = 3, the symmetric row
        // (2,2,2) has the largest entropy.
        let tape = Tape::new();
        let best = scalar_of(&dirichlet_entropy(&row(&tape, vec![2.0, 2.0, 2.0])));
        let mut a = 0.25;
        while a < 5.75 {
            let mut b = 0.25;
            while a + b < 5.75 {
                let c = 6.0 - a - b;
                let h = scalar_of(&dirichlet_entropy(&row(&tape, vec![a, b, c])));
                assert!(h <= best + 1e-12, "entropy({a},{b},{c}) = {h} exceeds {best}");
                b += 0.25;
            }
            a += 0.25;
        }
    }

    #[test]
    fn entropy_matches_monte_carlo_estimate() {
        // H(Dir(alpha)) = -E[ln pdf(x)]; estimate with 10^6 draws.
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let alpha = [2.0, 2.0];
        let tape = Tape::new();
        let closed = scalar_of(&dirichlet_entropy(&row(&tape, alpha.to_vec())));

        let dir = rand_distr::Dirichlet::new(&alpha).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ln_b: f64 = alpha.iter().map(|&a| statrs::function::gamma::ln_gamma(a)).sum::<f64>()
            - statrs::function::gamma::ln_gamma(alpha.iter().sum());
        let samples = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let x = dir.sample(&mut rng);
            let ln_pdf = -ln_b
                + alpha.iter().zip(&x).map(|(&a, &xi)| (a - 1.0) * xi.ln()).sum::<f64>();
            sum += -ln_pdf;
            sum_sq += ln_pdf * ln_pdf;
        }
        let mean = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
        let se = (var / samples as f64).sqrt();
        assert!(
            (closed - mean).abs() < 3.0 * se,
            "closed {closed} vs MC {mean} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn kl_closed_forms_and_positivity() {
        let tape = Tape::new();
        let a = row(&tape, vec![1.7, 0.4, 2.2]);
        assert!(scalar_of(&kl_dirichlet(&a, &a)).abs() < 1e-12);

        let a = row(&tape, vec![2.0, 1.0]);
        let b = row(&tape, vec![1.0, 1.0]);
        let want = 2.0f64.ln() - 0.5;
        assert!((scalar_of(&kl_dirichlet(&a, &b)) - want).abs() < 1e-12);

        let mut rng = SplitMix64::new(3);
        for _ in 0..50 {
            let k = 2 + rng.next_below(4);
            let av: Vec<f64> = (0..k).map(|_| rng.uniform(0.2, 6.0)).collect();
            let bv: Vec<f64> = (0..k).map(|_| rng.uniform(0.2, 6.0)).collect();
            if av == bv {
                continue;
            }
            let kl = scalar_of(&kl_dirichlet(&row(&tape, av), &row(&tape, bv)));
            assert!(kl > 0.0, "KL between distinct Dirichlets must be positive, got {kl}");
        }
    }

    #[test]
    fn kl_matches_monte_carlo_expectation() {
        // KL(a||b) = E_a[ln p_a(x) - ln p_b(x)].
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let (av, bv) = ([2.0, 1.0], [1.0, 1.0]);
        let tape = Tape::new();
        let closed =
            scalar_of(&kl_dirichlet(&row(&tape, av.to_vec()), &row(&tape, bv.to_vec())));

        let ln_b = |alpha: &[f64]| -> f64 {
            alpha.iter().map(|&a| statrs::function::gamma::ln_gamma(a)).sum::<f64>()
                - statrs::function::gamma::ln_gamma(alpha.iter().sum())
        };
        let dir = rand_distr::Dirichlet::new(&av).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let x = dir.sample(&mut rng);
            let term = -ln_b(&av) + ln_b(&bv)
                + av.iter()
                    .zip(&bv)
                    .zip(&x)
                    .map(|((&a, &b), &xi)| (a - b) * xi.ln())
                    .sum::<f64>();
            sum += term;
            sum_sq += term * term;
        }
        let mean = sum / samples as f64;
        let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
        let se = (var / samples as f64).sqrt();
        assert!((closed - mean).abs() < 3.0 * se, "closed {closed} vs MC {mean} +/- {se}");
    }

    #[test]
    fn expected_probs_normalizes_rows() {
        let tape = Tape::new();
        let p = expected_probs(&tape.leaf(vec![2, 2], vec![1.0, 1.0, 3.0, 1.0], false));
        let v = p.values();
        assert_eq!(v[0], 0.5);
        assert_eq!(v[1], 0.5);
        assert!((v[2] - 0.75).abs() < 1e-15);
        assert!((v[3] - 0.25).abs() < 1e-15);

        let mut rng = SplitMix64::new(8);
        let data: Vec<f64> = (0..40).map(|_| rng.uniform(0.1, 9.0)).collect();
        let p = expected_probs(&tape.leaf(vec![10, 4], data, false));
        for i in 0..10 {
            let s: f64 = p.values()[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uncertainty_channel_values() {
        let tape = Tape::new();
        let a = row(&tape, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::Alea), vec![-0.25]);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::EpiOod), vec![-4.0]);

        let a = row(&tape, vec![1000.0, 1000.0, 1000.0, 1000.0]);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::Alea), vec![-0.25]);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::EpiOod), vec![-4000.0]);

        let a = row(&tape, vec![5.0, 1.0]);
        assert!((uncertainty_scores(&a, UncertaintyChannel::Alea)[0] + 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::EpiOod), vec![-6.0]);
        assert_eq!(uncertainty_scores(&a, UncertaintyChannel::EpiMisc), vec![-5.0]);
    }

    #[test]
    fn scaling_evidence_moves_epistemic_but_not_aleatoric_scores() {
        let mut rng = SplitMix64::new(21);
        let tape = Tape::new();
        for _ in 0..20 {
            let k = 2 + rng.next_below(4);
            let base: Vec<f64> = (0..k).map(|_| rng.uniform(0.3, 4.0)).collect();
            let c = rng.uniform(1.5, 10.0);
            let scaled: Vec<f64> = base.iter().map(|&v| v * c).collect();
            let a = row(&tape, base);
            let b = row(&tape, scaled);
            let alea_a = uncertainty_scores(&a, UncertaintyChannel::Alea)[0];
            let alea_b = uncertainty_scores(&b, UncertaintyChannel::Alea)[0];
            assert!((alea_a - alea_b).abs() < 1e-12);
            let epi_a = uncertainty_scores(&a, UncertaintyChannel::EpiOod)[0];
            let epi_b = uncertainty_scores(&b, UncertaintyChannel::EpiOod)[0];
            assert!(epi_b < epi_a);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = ParamTensor::new(vec![2, 3], vec![1.3, 0.7, 2.1, 0.9, 1.1, 3.0]);
        let r = check_gradients(|_, a| uce(a, &[0, 2], &[true, true]), &p, 1e-4);
        assert!(r.ok, "uce: {r}");
        let r = check_gradients(|_, a| dirichlet_entropy(a).sum(), &p, 1e-4);
        assert!(r.ok, "entropy: {r}");

        let fixed = ParamTensor::new(vec![2, 3], vec![0.8, 1.6, 1.2, 2.0, 0.6, 1.4]);
        let r = check_gradients(
            |tape, a| {
                let b = tape.constant_from(&fixed);
                kl_dirichlet(a, &b).sum()
            },
            &p,
            1e-4,
        );
        assert!(r.ok, "kl first arg: {r}");
        let r = check_gradients(
            |tape, b| {
                let a = tape.constant_from(&fixed);
                kl_dirichlet(&a, b).sum()
            },
            &p,
            1e-4,
        );
        assert!(r.ok, "kl second arg: {r}");
    }
}
