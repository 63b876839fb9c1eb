use proptest::prelude::*;
use qke_core::fingeom::{build_parity_check, CodeSpec, Family};
use qke_core::protocol::{sift, Protocol, ProtocolConfig, Status};
use qke_core::{BitVector, EaCssCode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn code(family: Family, s: u32) -> EaCssCode {
    EaCssCode::self_paired(build_parity_check(&CodeSpec::new(family, 2, s)).unwrap()).unwrap()
}

fn pg73() -> &'static EaCssCode {
    static CODE: OnceLock<EaCssCode> = OnceLock::new();
    CODE.get_or_init(|| code(Family::Pg1, 3))
}

fn random_bits(rng: &mut impl Rng, len: usize) -> BitVector {
    BitVector::from_bits((0..len).map(|_| rng.random_bool(0.5)))
}

#[test]
fn planted_single_errors_reconcile() {
    let code = code(Family::Eg1, 2);
    let proto = Protocol::new(&code, ProtocolConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..code.n {
        let a = random_bits(&mut rng, code.n);
        let b = &a ^ &BitVector::from_indices(code.n, [i]);
        let kappa = random_bits(&mut rng, code.c);
        let orig = proto.run_original(&a, &b, &kappa, 0.05).unwrap();
        assert_eq!(orig.k_a, orig.k_b);
        let out = proto.run_improved(&a, &b, &kappa, 2, 0.05, &mut rng).unwrap();
        assert_eq!(out.status, Status::Ok);
        assert_eq!(out.k_a, out.k_b);
    }
}

#[test]
fn preshared_key_enters_linearly() {
    let code = pg73();
    let proto = Protocol::new(code, ProtocolConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_bits(&mut rng, code.n);
    let k1 = BitVector::zeros(code.c);
    let k2 = BitVector::from_bits([true]);
    let x = proto.run_original(&a, &a, &k1, 0.05).unwrap();
    let y = proto.run_original(&a, &a, &k2, 0.05).unwrap();
    let shift = code.e1.mul_vec(&BitVector::zeros(code.n).concat(&(&k1 ^ &k2))).unwrap();
    assert_eq!(&x.k_a ^ &y.k_a, shift);
}

#[test]
fn undecodable_block_aborts_before_sampling() {
    let code = pg73();
    let proto = Protocol::new(code, ProtocolConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seen = 0;
    for _ in 0..200 {
        let a = random_bits(&mut rng, code.n);
        let b = random_bits(&mut rng, code.n);
        let out = proto
            .run_improved(&a, &b, &BitVector::zeros(code.c), 5, 0.05, &mut rng)
            .unwrap();
        if out.status == Status::AbortSyndrome {
            seen += 1;
            assert!(!out.kappa_consumed && out.k_a.is_none());
            let names: Vec<_> = out.transcript.names().collect();
            assert_eq!(names, ["syndrome", "syndrome_check"]);
            assert!(!out.reconciliation.unwrap().converged);
        }
    }
    assert!(seen > 50, "{seen}");
}

#[test]
fn full_sample_catches_every_wrong_key() {
    let code = pg73();
    let proto = Protocol::new(code, ProtocolConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut caught = 0;
    for _ in 0..2000 {
        let a = random_bits(&mut rng, code.n);
        let e = BitVector::from_bits((0..code.n).map(|_| rng.random_bool(0.07)));
        let b = &a ^ &e;
        let out = proto
            .run_improved(&a, &b, &BitVector::zeros(code.c), code.m, 0.07, &mut rng)
            .unwrap();
        let rec = out.reconciliation.as_ref().unwrap();
        if rec.converged && !rec.key_difference.is_zero() {
            assert_eq!(out.status, Status::AbortSample);
            caught += 1;
        }
        if out.status == Status::Ok {
            assert!(rec.key_difference.is_zero());
            assert_eq!(out.k_a.as_ref().unwrap().len(), 0);
        }
    }
    assert!(caught > 10, "{caught}");
}

#[test]
fn sift_estimate_is_unbiased() {
    let config = ProtocolConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (trials, n, pe) = (2000, 1057, 0.05);
    let mut sum = 0.0;
    let mut disclosed = 0usize;
    let mut kept = 0;
    for _ in 0..trials {
        let r = sift(&config, n, pe, &mut rng);
        if r.status == Status::AbortSift {
            continue;
        }
        assert_eq!(r.status, Status::Ok);
        kept += 1;
        assert_eq!(r.a_hat.len(), n);
        assert!(r.disclosed as f64 >= config.delta * n as f64);
        sum += r.estimated_error;
        disclosed += r.disclosed;
    }
    let mean = sum / kept as f64;
    let sigma = (pe * (1.0 - pe) / disclosed as f64).sqrt();
    assert!((mean - pe).abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
}

/// P(Binomial(trials, 1/2) < needed), summed exactly.
fn binomial_half_below(trials: usize, needed: usize) -> f64 {
    let mut pmf = 0.5f64.powi(trials as i32);
    let mut total = 0.0;
    for k in 0..needed {
        total += pmf;
        pmf *= (trials - k) as f64 / (k + 1) as f64;
    }
    total
}

#[test]
fn sift_shortfall_matches_binomial_tail() {
    let config = ProtocolConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, runs) = (273, 10_000);
    let raw = ((2.0 + 3.0 * config.delta) * n as f64).ceil() as usize;
    let needed = ((1.0 + config.delta) * n as f64).ceil() as usize;
    let expected = binomial_half_below(raw, needed);
    let aborts = (0..runs)
        .filter(|_| sift(&config, n, 0.0, &mut rng).status == Status::AbortSift)
        .count();
    let rate = aborts as f64 / runs as f64;
    let sigma = (expected * (1.0 - expected) / runs as f64).sqrt();
    assert!(
        (rate - expected).abs() < 3.0 * sigma,
        "rate {rate}, expected {expected}"
    );
    // the margin grows like sqrt(n)
    assert!(binomial_half_below(2431, 1163) < 0.02);
}

#[test]
fn sift_aborts_on_noisy_channel() {
    let config = ProtocolConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = sift(&config, 1057, 0.25, &mut rng);
    assert_eq!(r.status, Status::AbortEstimation);
    assert!(r.estimated_error > config.estimation_abort_threshold);
}

#[test]
fn session_transcript_ignores_preshared_key() {
    let code = code(Family::Pg1, 3);
    let proto = Protocol::new(&code, ProtocolConfig::default());
    for seed in 0..300 {
        let run = |kappa: bool| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            proto
                .run_session(0.06, &BitVector::from_bits([kappa]), 4, &mut rng)
                .unwrap()
        };
        let (x, y) = (run(false), run(true));
        assert_eq!(x.status, y.status);
        assert_eq!(x.transcript.to_string(), y.transcript.to_string());
        assert_eq!(x.kappa_consumed, x.status == Status::Ok);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn padded_syndromes_preserve_the_difference(seed in any::<u64>()) {
        let code = pg73();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bits(&mut rng, code.n);
        let b = random_bits(&mut rng, code.n);
        let zero = BitVector::zeros(code.c);
        let s_a = code.h1p.mul_vec(&a.concat(&zero)).unwrap();
        let s_b = code.h1p.mul_vec(&b.concat(&zero)).unwrap();
        let diff = &a ^ &b;
        prop_assert_eq!(&s_a ^ &s_b, code.h1p.mul_vec(&diff.concat(&zero)).unwrap());
        prop_assert_eq!(&s_a ^ &s_b, code.t1.mul_vec(&code.reduced1.mul_vec(&diff).unwrap()).unwrap());
    }

    #[test]
    fn key_bits_follow_e1_columns(seed in any::<u64>(), i in 0usize..73) {
        let code = pg73();
        let proto = Protocol::new(code, ProtocolConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bits(&mut rng, code.n);
        let mut flipped = a.clone();
        flipped.flip(i);
        let kappa = BitVector::zeros(code.c);
        let x = proto.run_original(&a, &a, &kappa, 0.05).unwrap().k_a;
        let y = proto.run_original(&flipped, &flipped, &kappa, 0.05).unwrap().k_a;
        let column = BitVector::from_bits((0..code.m).map(|r| code.e1.get(r, i)));
        prop_assert_eq!(&x ^ &y, column);
    }

    #[test]
    fn agreement_whenever_estimate_is_right(seed in any::<u64>()) {
        let code = pg73();
        let proto = Protocol::new(code, ProtocolConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_bits(&mut rng, code.n);
        let e = BitVector::from_bits((0..code.n).map(|_| rng.random_bool(0.04)));
        let b = &a ^ &e;
        let kappa = random_bits(&mut rng, code.c);
        let out = proto.run_improved(&a, &b, &kappa, 3, 0.04, &mut rng).unwrap();
        let rec = out.reconciliation.as_ref().unwrap();
        let consistent = code.reduced1.mul_vec(&rec.e_hat).unwrap() == code.reduced1.mul_vec(&e).unwrap();
        prop_assert_eq!(rec.converged, consistent);
        prop_assert_eq!(out.status == Status::AbortSyndrome, !consistent);
        if out.status == Status::Ok && rec.e_hat == e {
            prop_assert_eq!(out.k_a, out.k_b);
        }
    }
}
