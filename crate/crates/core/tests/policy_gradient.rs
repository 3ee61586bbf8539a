//! The transmitter policy gradient, including the batch power normalization,
//! against central differences of the objective it differentiates.

use proptest::prelude::*;
use qfeedback::rng::{stream, Stream};
use qfeedback::transceiver::{ExplorationPolicy, Transmitter};
use rand::Rng;

/// `Σ_k w_k log π(x̃_k | x_k(τ))` with the batch re-normalized at `τ`.
fn objective(tx: &Transmitter, messages: &[usize], perturbed: &[qfeedback::channels::ComplexSymbol], weights: &[f64], power: f64, policy: &ExplorationPolicy) -> f64 {
    let batch = tx.transmit(messages, power).unwrap();
    batch
        .symbols
        .iter()
        .zip(perturbed)
        .zip(weights)
        .map(|((&x, &xt), w)| w * policy.log_density(xt, x).unwrap())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn policy_gradient_matches_central_differences(seed in 0u64..10_000, batch_len in 1usize..12, power in 0.05f64..2.0) {
        let mut rng = stream(seed, Stream::Evaluation);
        let tx = Transmitter::new(16, &mut rng).unwrap();
        let policy = ExplorationPolicy::for_power(power, 1e-2).unwrap();
        let messages: Vec<usize> = (0..batch_len).map(|_| rng.random_range(0..16)).collect();
        let batch = tx.transmit(&messages, power).unwrap();
        let perturbed = policy.perturb(&batch.symbols, &mut rng);
        let weights: Vec<f64> = (0..batch_len).map(|_| rng.random::<f64>()).collect();
        let analytic = tx.policy_gradient(&batch, &perturbed, &weights, &policy).unwrap().to_flat();

        let base = tx.network().parameters();
        let h = 1e-6;
        for _ in 0..6 {
            let i = rng.random_range(0..base.len());
            let mut shifted = tx.clone();
            let mut p = base.clone();
            p[i] += h;
            shifted.network_mut().set_parameters(&p).unwrap();
            let up = objective(&shifted, &messages, &perturbed, &weights, power, &policy);
            p[i] -= 2.0 * h;
            shifted.network_mut().set_parameters(&p).unwrap();
            let down = objective(&shifted, &messages, &perturbed, &weights, power, &policy);
            let numeric = (up - down) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-3);
            prop_assert!((analytic[i] - numeric).abs() / scale < 1e-4, "param {i}: {} vs {numeric}", analytic[i]);
        }
    }
}
