//! Key expansion post-processing: sifting and channel estimation over a
//! simulated binary symmetric channel, the original reconciliation (which
//! consumes the preshared key up front), the improved one (syndrome check and
//! sampled key comparison before the preshared key is touched), and the rate
//! formulas used to pick the sample size.
//!
//! Both parties run in-process. Everything one of them would send over the
//! public channel is appended to a [`Transcript`].

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::eaqecc::EaCssCode;
use crate::gf2::BitVector;
use crate::spa::{Decoder, SpaError, TannerGraph, DEFAULT_MAX_ITER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sample size {mu} exceeds key length {m}")]
    SampleTooLarge { mu: usize, m: usize },
    #[error("sample size formula is undefined when every residual block error damages every bit")]
    DegenerateLogBase,
    #[error("no sample size reaches the error threshold")]
    Unreachable,
    #[error("key would be empty or negative: m = {m}, c = {c}, mu = {mu}")]
    NoKey { m: usize, c: usize, mu: usize },
    #[error(transparent)]
    Decoder(#[from] SpaError),
}

fn check_len(what: &'static str, v: &BitVector, expected: usize) -> Result<(), ProtocolError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(ProtocolError::Length {
            what,
            expected,
            got: v.len(),
        })
    }
}

/// Decoder crossover probability when none is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorMode {
    /// The channel estimate from sifting, clamped to a usable range.
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    /// Sifting overhead: Alice sends (2 + 3δ)n qubits.
    pub delta: f64,
    /// Target bit error rate of the final key.
    pub epsilon: f64,
    /// Estimated channel error above which the run aborts.
    pub estimation_abort_threshold: f64,
    pub prior: PriorMode,
    pub max_iter: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            epsilon: 1e-6,
            estimation_abort_threshold: 0.12,
            prior: PriorMode::Estimate,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Range the channel estimate is clamped to before it is handed to the decoder.
pub const PRIOR_RANGE: (f64, f64) = (1e-3, 0.499);

pub fn clamp_prior(p: f64) -> f64 {
    p.clamp(PRIOR_RANGE.0, PRIOR_RANGE.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AliceToBob => "A>B",
            Direction::BobToAlice => "B>A",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub name: &'static str,
    pub direction: Direction,
    pub payload: BitVector,
}

/// Every public announcement of a run, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn announce(&mut self, name: &'static str, direction: Direction, payload: BitVector) {
        self.messages.push(Message {
            name,
            direction,
            payload,
        });
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.messages.iter().map(|m| m.name)
    }
}

/// One line per message: `name direction hex`, where `hex` packs the payload
/// bits little-endian (`-` for an empty payload).
impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.messages {
            let hex = if m.payload.is_empty() {
                "-".to_string()
            } else {
                hex::encode(m.payload.to_bytes())
            };
            writeln!(f, "{} {} {}", m.name, m.direction, hex)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    AbortSift,
    AbortEstimation,
    AbortSyndrome,
    AbortSample,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::AbortSift => "abort_sift",
            Status::AbortEstimation => "abort_estimation",
            Status::AbortSyndrome => "abort_syndrome",
            Status::AbortSample => "abort_sample",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    pub a_hat: BitVector,
    pub b_hat: BitVector,
    /// Mismatch fraction over the disclosed pairs.
    pub estimated_error: f64,
    pub disclosed: usize,
    /// `Ok`, `AbortSift` or `AbortEstimation`.
    pub status: Status,
    pub transcript: Transcript,
}

/// Simulates preparation, measurement, sifting and error estimation.
///
/// Each of the (2 + 3δ)n raw positions survives when the two random bases
/// agree; a surviving bit reaches Bob flipped with probability `pe`. Alice
/// picks the n block positions among the survivors at random, and all other
/// survivors are disclosed for estimation.
pub fn sift<R: Rng + ?Sized>(config: &ProtocolConfig, n: usize, pe: f64, rng: &mut R) -> SiftResult {
    let raw = ((2.0 + 3.0 * config.delta) * n as f64).ceil() as usize;
    let needed = ((1.0 + config.delta) * n as f64).ceil() as usize;
    let a = BitVector::from_bits((0..raw).map(|_| rng.random_bool(0.5)));
    let alpha = BitVector::from_bits((0..raw).map(|_| rng.random_bool(0.5)));
    let gamma = BitVector::from_bits((0..raw).map(|_| rng.random_bool(0.5)));
    let mut b = a.clone();
    for i in 0..raw {
        let flipped = if alpha.get(i) == gamma.get(i) {
            pe > 0.0 && rng.random_bool(pe)
        } else {
            // a wrong-basis measurement is a fair coin; the position is discarded anyway
            rng.random_bool(0.5)
        };
        if flipped {
            b.flip(i);
        }
    }
    let mut transcript = Transcript::default();
    transcript.announce("bases", Direction::AliceToBob, alpha.clone());
    let discarded = &alpha ^ &gamma;
    transcript.announce("discarded", Direction::BobToAlice, discarded.clone());
    let survivors: Vec<usize> = (0..raw).filter(|&i| !discarded.get(i)).collect();

    let aborted = |status, transcript| SiftResult {
        a_hat: BitVector::zeros(0),
        b_hat: BitVector::zeros(0),
        estimated_error: f64::NAN,
        disclosed: 0,
        status,
        transcript,
    };
    if survivors.len() < needed {
        return aborted(Status::AbortSift, transcript);
    }

    let mut chosen: Vec<usize> = sample(rng, survivors.len(), n)
        .into_iter()
        .map(|i| survivors[i])
        .collect();
    chosen.sort_unstable();
    let block_mask = BitVector::from_indices(raw, chosen.iter().copied());
    transcript.announce("block_positions", Direction::AliceToBob, block_mask.clone());
    let disclosed: Vec<usize> = survivors.iter().copied().filter(|&i| !block_mask.get(i)).collect();
    let est_a = a.select(&disclosed);
    let est_b = b.select(&disclosed);
    let estimated_error = est_a.hamming_distance(&est_b) as f64 / disclosed.len() as f64;
    transcript.announce("estimation_bits", Direction::AliceToBob, est_a);
    transcript.announce("estimation_bits", Direction::BobToAlice, est_b);
    if estimated_error > config.estimation_abort_threshold {
        return SiftResult {
            estimated_error,
            disclosed: disclosed.len(),
            ..aborted(Status::AbortEstimation, transcript)
        };
    }
    SiftResult {
        a_hat: a.select(&chosen),
        b_hat: b.select(&chosen),
        estimated_error,
        disclosed: disclosed.len(),
        status: Status::Ok,
        transcript,
    }
}

/// Output of the syndrome-to-correction map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BetaOutput {
    /// `E1 · (ê; 0)`, length m.
    pub correction: BitVector,
    pub e_hat: BitVector,
    pub converged: bool,
}

/// What the simulation knows about a reconciliation beyond the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reconciliation {
    pub converged: bool,
    pub e_hat: BitVector,
    /// Alice's pre-key XOR Bob's pre-key, before sampling (length m).
    pub key_difference: BitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyOutcome {
    pub status: Status,
    /// Present iff `status == Ok`; length m - μ.
    pub k_a: Option<BitVector>,
    pub k_b: Option<BitVector>,
    pub mu_used: usize,
    /// True iff the preshared key entered the computation.
    pub kappa_consumed: bool,
    pub transcript: Transcript,
    /// Absent when the run stopped before reconciliation.
    pub reconciliation: Option<Reconciliation>,
    /// Channel estimate from sifting, when sifting was simulated.
    pub estimated_error: Option<f64>,
}

/// Keys produced by the original protocol, which never aborts after sifting.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalOutcome {
    pub k_a: BitVector,
    pub k_b: BitVector,
    pub transcript: Transcript,
    pub reconciliation: Reconciliation,
}

/// A code prepared for running the protocol.
#[derive(Debug, Clone)]
pub struct Protocol<'c> {
    code: &'c EaCssCode,
    graph: TannerGraph,
    config: ProtocolConfig,
}

impl<'c> Protocol<'c> {
    pub fn new(code: &'c EaCssCode, config: ProtocolConfig) -> Self {
        Self {
            code,
            graph: TannerGraph::new(&code.h1.matrix),
            config,
        }
    }

    pub fn code(&self) -> &'c EaCssCode {
        self.code
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn graph(&self) -> &TannerGraph {
        &self.graph
    }

    /// Decoder prior for a run whose channel estimate is `estimate`.
    pub fn prior_for(&self, estimate: f64) -> f64 {
        match self.config.prior {
            PriorMode::Estimate => clamp_prior(estimate),
            PriorMode::Fixed(p) => p,
        }
    }

    /// `H1' · (x; tail)`.
    fn syndrome(&self, x: &BitVector, tail: &BitVector) -> BitVector {
        self.code.h1p.mul_vec(&x.concat(tail)).expect("lengths checked")
    }

    /// `E1 · (x; tail)`.
    fn key(&self, x: &BitVector, tail: &BitVector) -> BitVector {
        self.code.e1.mul_vec(&x.concat(tail)).expect("lengths checked")
    }

    /// Turns an augmented syndrome into a key correction: undo `T1`, decode on
    /// the original sparse matrix, and map the error estimate through `E1`.
    pub fn beta(&self, s: &BitVector, prior: f64) -> Result<BetaOutput, ProtocolError> {
        check_len("syndrome", s, self.code.r1())?;
        let reduced = self.code.t1_inv.mul_vec(s).expect("lengths checked");
        let full = self.code.expand_syndrome(&reduced);
        let out = Decoder::new(&self.graph).decode(&full, prior, self.config.max_iter)?;
        let correction = self.key(&out.error_estimate, &BitVector::zeros(self.code.c));
        Ok(BetaOutput {
            correction,
            e_hat: out.error_estimate,
            converged: out.converged,
        })
    }

    fn check_inputs(&self, a_hat: &BitVector, b_hat: &BitVector, kappa: &BitVector) -> Result<(), ProtocolError> {
        check_len("Alice's block", a_hat, self.code.n)?;
        check_len("Bob's block", b_hat, self.code.n)?;
        check_len("preshared key", kappa, self.code.c)
    }

    /// Reconciliation that mixes the preshared key into the announced syndrome.
    pub fn run_original(
        &self,
        a_hat: &BitVector,
        b_hat: &BitVector,
        kappa: &BitVector,
        prior: f64,
    ) -> Result<OriginalOutcome, ProtocolError> {
        self.check_inputs(a_hat, b_hat, kappa)?;
        let mut transcript = Transcript::default();
        let s_a = self.syndrome(a_hat, kappa);
        transcript.announce("syndrome", Direction::AliceToBob, s_a.clone());
        let k_a = self.key(a_hat, kappa);
        let s_b = self.syndrome(b_hat, kappa);
        let beta = self.beta(&(&s_a ^ &s_b), prior)?;
        let k_b = &self.key(b_hat, kappa) ^ &beta.correction;
        let key_difference = &k_a ^ &k_b;
        Ok(OriginalOutcome {
            k_a,
            k_b,
            transcript,
            reconciliation: Reconciliation {
                converged: beta.converged,
                e_hat: beta.e_hat,
                key_difference,
            },
        })
    }

    /// Reconciliation with the syndrome check and a sampled comparison of `mu`
    /// key bits, both before the preshared key is used.
    pub fn run_improved<R: Rng + ?Sized>(
        &self,
        a_hat: &BitVector,
        b_hat: &BitVector,
        kappa: &BitVector,
        mu: usize,
        prior: f64,
        rng: &mut R,
    ) -> Result<KeyOutcome, ProtocolError> {
        let mut transcript = Transcript::default();
        self.improved_into(a_hat, b_hat, kappa, mu, prior, rng, &mut transcript)
    }

    #[allow(clippy::too_many_arguments)]
    fn improved_into<R: Rng + ?Sized>(
        &self,
        a_hat: &BitVector,
        b_hat: &BitVector,
        kappa: &BitVector,
        mu: usize,
        prior: f64,
        rng: &mut R,
        transcript: &mut Transcript,
    ) -> Result<KeyOutcome, ProtocolError> {
        self.check_inputs(a_hat, b_hat, kappa)?;
        let (m, c) = (self.code.m, self.code.c);
        if mu > m {
            return Err(ProtocolError::SampleTooLarge { mu, m });
        }
        let zero_tail = BitVector::zeros(c);
        let s_a = self.syndrome(a_hat, &zero_tail);
        transcript.announce("syndrome", Direction::AliceToBob, s_a.clone());
        let s_b = self.syndrome(b_hat, &zero_tail);
        let s = &s_a ^ &s_b;
        let beta = self.beta(&s, prior)?;

        // Bob's own check: the estimate must reproduce the reduced syndrome
        let reduced = self.code.t1_inv.mul_vec(&s).expect("lengths checked");
        let consistent = self.code.reduced1.mul_vec(&beta.e_hat).expect("lengths checked") == reduced;
        debug_assert_eq!(consistent, beta.converged);
        transcript.announce(
            "syndrome_check",
            Direction::BobToAlice,
            BitVector::from_bits([consistent]),
        );

        let pre_a = self.key(a_hat, &zero_tail);
        let pre_b = &self.key(b_hat, &zero_tail) ^ &beta.correction;
        let reconciliation = Reconciliation {
            converged: consistent,
            e_hat: beta.e_hat,
            key_difference: &pre_a ^ &pre_b,
        };
        let stopped = |status, transcript: &Transcript, reconciliation| KeyOutcome {
            status,
            k_a: None,
            k_b: None,
            mu_used: mu,
            kappa_consumed: false,
            transcript: transcript.clone(),
            reconciliation: Some(reconciliation),
            estimated_error: None,
        };
        if !consistent {
            return Ok(stopped(Status::AbortSyndrome, transcript, reconciliation));
        }

        let mut positions = sample(rng, m, mu).into_vec();
        positions.sort_unstable();
        transcript.announce(
            "sample_positions",
            Direction::AliceToBob,
            BitVector::from_indices(m, positions.iter().copied()),
        );
        transcript.announce("sample_bits", Direction::AliceToBob, pre_a.select(&positions));
        let agree = pre_a.select(&positions) == pre_b.select(&positions);
        transcript.announce("sample_verdict", Direction::BobToAlice, BitVector::from_bits([agree]));
        if !agree {
            return Ok(stopped(Status::AbortSample, transcript, reconciliation));
        }

        let pad = self.key(&BitVector::zeros(self.code.n), kappa);
        let sampled = BitVector::from_indices(m, positions.iter().copied());
        let kept: Vec<usize> = (0..m).filter(|&i| !sampled.get(i)).collect();
        Ok(KeyOutcome {
            status: Status::Ok,
            k_a: Some((&pre_a ^ &pad).select(&kept)),
            k_b: Some((&pre_b ^ &pad).select(&kept)),
            mu_used: mu,
            kappa_consumed: true,
            transcript: transcript.clone(),
            reconciliation: Some(reconciliation),
            estimated_error: None,
        })
    }

    /// A full improved run: sifting and estimation over a channel with
    /// crossover `pe`, then reconciliation with the prior from the estimate.
    pub fn run_session<R: Rng + ?Sized>(
        &self,
        pe: f64,
        kappa: &BitVector,
        mu: usize,
        rng: &mut R,
    ) -> Result<KeyOutcome, ProtocolError> {
        check_len("preshared key", kappa, self.code.c)?;
        let sifted = sift(&self.config, self.code.n, pe, rng);
        let mut transcript = sifted.transcript;
        if sifted.status != Status::Ok {
            return Ok(KeyOutcome {
                status: sifted.status,
                k_a: None,
                k_b: None,
                mu_used: mu,
                kappa_consumed: false,
                transcript,
                reconciliation: None,
                estimated_error: Some(sifted.estimated_error),
            });
        }
        let prior = self.prior_for(sifted.estimated_error);
        let mut out = self.improved_into(&sifted.a_hat, &sifted.b_hat, kappa, mu, prior, rng, &mut transcript)?;
        out.estimated_error = Some(sifted.estimated_error);
        Ok(out)
    }
}

/// Measured error statistics feeding the rate formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    /// Fraction of blocks whose error estimate is wrong.
    pub r_blk: f64,
    /// Key bit error rate of the original protocol.
    pub r_bit: f64,
    /// Fraction of blocks stopped by the syndrome check.
    pub p1: f64,
    /// Mean fraction of damaged key bits in blocks that pass the syndrome check wrongly.
    pub p2: f64,
    /// `r_bit / r_blk`.
    pub q: f64,
}

/// Factor by which sampling `mu` key bits scales the key bit error rate, when a
/// block error damages each bit with probability `q`.
pub fn compute_f(q: f64, r_blk: f64, mu: usize) -> f64 {
    let pass = (1.0 - q).powi(mu as i32);
    pass / (1.0 - r_blk + pass * r_blk)
}

/// Key bit error rate left after the syndrome check and a sample of `mu` bits.
pub fn predicted_rbit(r_blk: f64, p1: f64, p2: f64, mu: usize) -> f64 {
    let residual = r_blk - p1;
    if residual <= 0.0 {
        return 0.0;
    }
    let slipped = (1.0 - p2).powi(mu as i32) * residual;
    p2 * slipped / (1.0 - r_blk + slipped)
}

/// Smallest `mu` for which [`predicted_rbit`] drops below `epsilon`, from the
/// closed form and then confirmed (and corrected by one step if rounding
/// disagrees) against the prediction itself.
pub fn compute_mu(epsilon: f64, r_blk: f64, p1: f64, p2: f64) -> Result<usize, ProtocolError> {
    let residual = r_blk - p1;
    if p2 <= epsilon || residual <= 0.0 {
        return Ok(0);
    }
    if p2 >= 1.0 {
        return Err(ProtocolError::DegenerateLogBase);
    }
    let ratio = epsilon * (1.0 - r_blk) / ((p2 - epsilon) * residual);
    if ratio <= 0.0 {
        return Err(ProtocolError::Unreachable);
    }
    let raw = (ratio.ln() / (1.0 - p2).ln()).ceil();
    let mut mu = if raw <= 0.0 { 0 } else { raw as usize };
    while mu > 0 && predicted_rbit(r_blk, p1, p2, mu - 1) < epsilon {
        mu -= 1;
    }
    while predicted_rbit(r_blk, p1, p2, mu) >= epsilon {
        mu += 1;
    }
    Ok(mu)
}

/// Smallest `mu <= cap` meeting the threshold by direct search, or `cap` if none does.
pub fn search_mu(epsilon: f64, r_blk: f64, p1: f64, p2: f64, cap: usize) -> usize {
    (0..=cap)
        .find(|&mu| predicted_rbit(r_blk, p1, p2, mu) < epsilon)
        .unwrap_or(cap)
}

/// Fresh key bits per channel bit after aborts, the preshared key and the sample.
pub fn net_key_rate(
    r_blk: f64,
    p1: f64,
    p2: f64,
    mu: usize,
    m: usize,
    c: usize,
    n: usize,
) -> Result<f64, ProtocolError> {
    if m < c + mu {
        return Err(ProtocolError::NoKey { m, c, mu });
    }
    let accepted = 1.0 - r_blk + (1.0 - p2).powi(mu as i32) * (r_blk - p1);
    Ok(accepted * (m - c - mu) as f64 / n as f64)
}
