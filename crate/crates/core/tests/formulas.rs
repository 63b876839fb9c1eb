use proptest::prelude::*;
use qke_core::protocol::{compute_f, compute_mu, net_key_rate, predicted_rbit, ProtocolError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

/// Blocks fail with probability `r_blk`; a failed block has each bit wrong
/// with probability `q`. Returns the bit error rate over blocks whose `mu`
/// sampled bits all agree, divided by the unsampled bit error rate.
fn simulate_f(q: f64, r_blk: f64, mu: usize, blocks: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut wrong) = (0usize, 0usize);
    for _ in 0..blocks {
        if !rng.random_bool(r_blk) {
            accepted += 1;
            continue;
        }
        if (0..mu).any(|_| rng.random_bool(q)) {
            continue;
        }
        accepted += 1;
        // a key bit outside the sample
        if rng.random_bool(q) {
            wrong += 1;
        }
    }
    (wrong as f64 / accepted as f64) / (q * r_blk)
}

#[test]
fn sampling_factor_example() {
    let direct = 0.5f64.powi(9) / (0.99 + 0.5f64.powi(9) * 0.01);
    assert!(close(compute_f(0.5, 0.01, 9), direct, 1e-12));
    assert!(close(direct, 1.9726e-3, 2e-4));
    assert_eq!(compute_f(0.3, 0.4, 0), 1.0);
    assert_eq!(compute_f(1.0, 0.4, 2), 0.0);

    // coarser parameters so the Monte Carlo has events to count
    let (q, r_blk, mu) = (0.5, 0.2, 3);
    let sim = simulate_f(q, r_blk, mu, 2_000_000, 11);
    assert!(
        close(sim, compute_f(q, r_blk, mu), 0.03),
        "{sim} vs {}",
        compute_f(q, r_blk, mu)
    );
}

#[test]
fn predicted_rbit_examples() {
    let direct = 0.4 * 0.6f64.powi(5) * 0.002 / (0.98 + 0.6f64.powi(5) * 0.002);
    let got = predicted_rbit(0.02, 0.018, 0.4, 5);
    assert!(close(got, direct, 1e-12));
    assert!(close(got, 6.345e-5, 1e-3));
    assert!(close(predicted_rbit(0.3, 0.0, 0.25, 0), 0.25 * 0.3, 1e-12));
    assert_eq!(predicted_rbit(0.3, 0.3, 0.25, 7), 0.0);
}

#[test]
fn predicted_rbit_matches_conditional_process() {
    // blocks: ok, detected (aborted), or residual with bits wrong at rate p2
    let (r_blk, p1, p2, mu) = (0.3, 0.1, 0.4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut accepted, mut wrong) = (0usize, 0usize);
    for _ in 0..2_000_000 {
        let u: f64 = rng.random();
        if u < p1 {
            continue;
        }
        if u < r_blk {
            if (0..mu).any(|_| rng.random_bool(p2)) {
                continue;
            }
            accepted += 1;
            wrong += rng.random_bool(p2) as usize;
        } else {
            accepted += 1;
        }
    }
    let sim = wrong as f64 / accepted as f64;
    assert!(close(sim, predicted_rbit(r_blk, p1, p2, mu), 0.02));
}

#[test]
fn sample_size_examples() {
    assert_eq!(compute_mu(1e-6, 0.01, 0.009, 0.5), Ok(9));
    let oracle = (0..).find(|&mu| predicted_rbit(0.01, 0.009, 0.5, mu) < 1e-6).unwrap();
    assert_eq!(oracle, 9);
    assert_eq!(compute_mu(1e-6, 0.3, 0.1, 5e-7), Ok(0));
    assert_eq!(compute_mu(1e-6, 0.3, 0.3, 0.5), Ok(0));
    assert_eq!(compute_mu(1e-6, 0.3, 0.1, 1.0), Err(ProtocolError::DegenerateLogBase));
}

#[test]
fn net_rate_examples() {
    let r = net_key_rate(0.0, 0.0, 0.0, 0, 570, 1, 1057).unwrap();
    assert_eq!(format!("{r:.4}"), "0.5383");
    let r = net_key_rate(0.0, 0.0, 0.0, 0, 571, 32, 1023).unwrap();
    assert_eq!(format!("{r:.4}"), "0.5269");
    let r = net_key_rate(0.05, 0.05, 0.37, 10, 570, 1, 1057).unwrap();
    assert!(close(r, 0.95 * 559.0 / 1057.0, 1e-12));
    assert_eq!(format!("{r:.4}"), "0.5024");
    assert!(matches!(
        net_key_rate(0.0, 0.0, 0.0, 8, 10, 3, 20),
        Err(ProtocolError::NoKey { .. })
    ));
}

proptest! {
    #[test]
    fn sample_size_is_minimal(
        r_blk in 1e-4f64..0.99,
        p1_frac in 0.0f64..0.999,
        p2 in 1e-3f64..0.999,
        eps_exp in -8.0f64..-2.0,
    ) {
        let p1 = r_blk * p1_frac;
        let eps = 10f64.powf(eps_exp);
        let mu = compute_mu(eps, r_blk, p1, p2).unwrap();
        prop_assert!(predicted_rbit(r_blk, p1, p2, mu) < eps || p2 <= eps);
        if mu > 0 {
            prop_assert!(predicted_rbit(r_blk, p1, p2, mu - 1) >= eps);
        }
    }

    #[test]
    fn prediction_falls_with_sample_size(
        r_blk in 0.0f64..1.0,
        p1_frac in 0.0f64..1.0,
        p2 in 0.0f64..1.0,
        mu in 0usize..200,
    ) {
        let p1 = r_blk * p1_frac;
        prop_assert!(predicted_rbit(r_blk, p1, p2, mu + 1) <= predicted_rbit(r_blk, p1, p2, mu));
        prop_assert!(predicted_rbit(r_blk, p1, p2, mu) <= p2);
    }

    #[test]
    fn f_is_a_fraction(q in 0.0f64..1.0, r_blk in 0.0f64..0.999, mu in 0usize..64) {
        let f = compute_f(q, r_blk, mu);
        prop_assert!((0.0..=1.0 / (1.0 - r_blk) + 1e-12).contains(&f));
    }
}
