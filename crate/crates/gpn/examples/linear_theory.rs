//! The closed-form linear scenario: distance regularization provably forces
//! the encoder weights that respond to unseen feature directions toward zero.
//!
//! Three cliques of nodes: two in-distribution groups with features
//! `[±1, 0, 0]` and one held-out group with features `[0, 1, v]`. A linear
//! encoder can only place the held-out group away from the others by using
//! its second/third weight columns — exactly the columns the latent edge-
//! distance regularizer penalizes. Training with and without the regularizer
//! from identical initializations shows those columns collapsing and
//! held-out detection becoming perfect.
//!
//! Run with: `cargo run --release -p gpn --example linear_theory`

use gpn::cli::cmd_theory_check;

fn main() {
    println!(
        "{:<6} {:>18} {:>16} {:>12} {:>10}",
        "seed", "unregularized ‖W‖", "regularized ‖W‖", "shrink", "verdict"
    );
    let mut all_passed = true;
    for seed in 0..3 {
        let outcome = cmd_theory_check(None, seed).expect("scenario runs");
        let shrink = outcome.unregularized_norm / outcome.regularized_norm.max(1e-300);
        println!(
            "{:<6} {:>18.6} {:>16.3e} {:>11.1e}x {:>10}",
            outcome.seed,
            outcome.unregularized_norm,
            outcome.regularized_norm,
            shrink,
            if outcome.passed { "shrunk" } else { "NOT shrunk" }
        );
        if let (Some(u), Some(r)) = (outcome.unregularized_auroc, outcome.regularized_auroc) {
            println!("       held-out AUROC: unregularized {u:.3} → regularized {r:.3}");
        }
        all_passed &= outcome.passed;
    }
    assert!(all_passed, "regularized norm failed to shrink on some seed");
    println!("\n‖W‖ is the norm of the weight rows that map the held-out feature directions;");
    println!("the regularizer drives it toward zero, pinning held-out nodes at the origin");
    println!("where they receive near-zero evidence from every class flow.");
}
