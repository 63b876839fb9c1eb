//! Monte Carlo estimation of the reconciliation statistics, sample-size and
//! rate selection, sweep CSV output, and code parameter tables.
//!
//! Every trial draws from its own ChaCha8 stream (seed, stream = point and
//! trial index), so results do not depend on the number of worker threads.

use std::io::{self, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eaqecc::{nominal_params, CodeError, CodeParams, EaCssCode};
use crate::fingeom::{build_parity_check, CodeSpec, Family, GeometryError};
use crate::gf2::BitVector;
use crate::protocol::{
    clamp_prior, compute_mu, net_key_rate, predicted_rbit, search_mu, PriorMode, Protocol, ProtocolConfig,
    ProtocolError, RateInputs, Status,
};

/// Keeps the replayed sampling draws independent of the trial draws.
const SAMPLE_SALT: u64 = 0x5a5a_0f0f_3c3c_9696;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Original,
    Improved,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Mode::Original),
            "improved" => Ok(Mode::Improved),
            other => Err(format!("unknown mode {other:?} (expected original or improved)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub pe_start: f64,
    pub pe_end: f64,
    pub pe_step: f64,
    pub trials: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub mode: Mode,
    pub max_iter: usize,
    /// Decoder prior; `Estimate` uses the true crossover, clamped.
    pub prior: PriorMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let protocol = ProtocolConfig::default();
        Self {
            pe_start: 0.01,
            pe_end: 0.05,
            pe_step: 0.01,
            trials: 1000,
            seed: 1,
            epsilon: protocol.epsilon,
            mode: Mode::Improved,
            max_iter: protocol.max_iter,
            prior: PriorMode::Estimate,
        }
    }
}

impl SweepConfig {
    /// Crossover probabilities from start to end inclusive (with a little slack for rounding).
    pub fn points(&self) -> Vec<f64> {
        if self.pe_step <= 0.0 {
            return vec![self.pe_start];
        }
        let count = ((self.pe_end - self.pe_start) / self.pe_step + 1e-9).floor().max(0.0) as usize + 1;
        (0..count).map(|i| self.pe_start + i as f64 * self.pe_step).collect()
    }
}

/// A converged decode with the wrong error estimate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub trial: usize,
    pub key_difference: BitVector,
}

/// Raw counts from one batch of trials at a single crossover probability.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialStats {
    pub trials: usize,
    /// Key length m.
    pub key_bits: usize,
    /// Decoder estimate differs from the true error (aborted or not).
    pub block_errors: usize,
    /// Decoder did not reproduce the syndrome.
    pub syndrome_aborts: usize,
    /// Damaged key bits over every block error.
    pub damaged_bits: usize,
    /// Damaged key bits of each block error, in no particular order.
    pub block_error_damage: Vec<usize>,
    pub residuals: Vec<Residual>,
}

impl TrialStats {
    fn merge(mut self, other: TrialStats) -> TrialStats {
        self.trials += other.trials;
        self.key_bits = self.key_bits.max(other.key_bits);
        self.block_errors += other.block_errors;
        self.syndrome_aborts += other.syndrome_aborts;
        self.damaged_bits += other.damaged_bits;
        self.block_error_damage.extend(other.block_error_damage);
        self.residuals.extend(other.residuals);
        self
    }

    pub fn residual_damaged_bits(&self) -> usize {
        self.residuals.iter().map(|r| r.key_difference.weight()).sum()
    }

    pub fn rates(&self) -> RateInputs {
        let t = self.trials.max(1) as f64;
        let m = self.key_bits.max(1) as f64;
        let r_blk = self.block_errors as f64 / t;
        let r_bit = self.damaged_bits as f64 / (t * m);
        let p2 = if self.residuals.is_empty() {
            0.0
        } else {
            self.residual_damaged_bits() as f64 / (self.residuals.len() as f64 * m)
        };
        RateInputs {
            r_blk,
            r_bit,
            p1: self.syndrome_aborts as f64 / t,
            p2,
            q: if r_blk > 0.0 { r_bit / r_blk } else { 0.0 },
        }
    }

    /// Binomial standard error of the block error rate.
    pub fn r_blk_se(&self) -> f64 {
        binomial_se(self.rates().r_blk, self.trials)
    }

    pub fn p1_se(&self) -> f64 {
        binomial_se(self.rates().p1, self.trials)
    }

    /// Standard error of the bit error rate, treating blocks as the independent unit.
    pub fn r_bit_se(&self) -> f64 {
        if self.trials < 2 {
            return 0.0;
        }
        let m = self.key_bits.max(1) as f64;
        let mean = self.rates().r_bit;
        // blocks without errors contribute zero damage
        let mut sq = (self.trials - self.block_errors) as f64 * mean * mean;
        sq += self
            .block_error_damage
            .iter()
            .map(|&d| (d as f64 / m - mean).powi(2))
            .sum::<f64>();
        (sq / ((self.trials - 1) as f64 * self.trials as f64)).sqrt()
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 40) | trial as u64);
    rng
}

fn sample_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    trial_rng(seed ^ SAMPLE_SALT, point, trial)
}

/// Runs `trials` blocks through reconciliation at crossover `pe`.
///
/// Alice's block is uniform and Bob's differs by an i.i.d. error. In original
/// mode the original protocol runs; otherwise the improved one with no
/// sampling, since the sample size is chosen from these statistics afterwards.
pub fn estimate_rates(
    protocol: &Protocol<'_>,
    mode: Mode,
    pe: f64,
    trials: usize,
    seed: u64,
    point: usize,
) -> Result<TrialStats, ProtocolError> {
    let code = protocol.code();
    let prior = match protocol.config().prior {
        PriorMode::Estimate => clamp_prior(pe),
        PriorMode::Fixed(p) => p,
    };
    let kappa = BitVector::zeros(code.c);
    let empty = TrialStats {
        key_bits: code.m,
        ..TrialStats::default()
    };
    (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<TrialStats, ProtocolError> {
            let mut rng = trial_rng(seed, point, trial);
            let a = BitVector::from_bits((0..code.n).map(|_| rng.random_bool(0.5)));
            let e = BitVector::from_bits((0..code.n).map(|_| pe > 0.0 && rng.random_bool(pe)));
            let b = &a ^ &e;
            let rec = match mode {
                Mode::Original => protocol.run_original(&a, &b, &kappa, prior)?.reconciliation,
                Mode::Improved => {
                    let out = protocol.run_improved(&a, &b, &kappa, 0, prior, &mut rng)?;
                    debug_assert!(matches!(out.status, Status::Ok | Status::AbortSyndrome));
                    out.reconciliation.expect("reconciliation always runs here")
                }
            };
            let mut stats = TrialStats {
                trials: 1,
                key_bits: code.m,
                ..TrialStats::default()
            };
            if rec.e_hat != e {
                let damage = rec.key_difference.weight();
                stats.block_errors = 1;
                stats.damaged_bits = damage;
                stats.block_error_damage.push(damage);
                if rec.converged {
                    stats.residuals.push(Residual {
                        trial,
                        key_difference: rec.key_difference,
                    });
                } else {
                    stats.syndrome_aborts = 1;
                }
            }
            Ok(stats)
        })
        .try_reduce(|| empty.clone(), |x, y| Ok(x.merge(y)))
        .map(|mut s| {
            s.residuals.sort_by_key(|r| r.trial);
            s
        })
}

/// Sample size, predicted key error and net rate for measured statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuChoice {
    pub mu: usize,
    pub predicted_rbit: f64,
    pub r_net: f64,
    /// The closed form was undefined and the minimum came from direct search.
    pub searched: bool,
}

/// Picks the smallest sample size meeting `epsilon`, capped at `m - c` (no key
/// left), and the resulting net rate. A code with `m < c + mu` reports rate 0.
pub fn choose_mu_and_rate(rates: &RateInputs, params: &CodeParams, epsilon: f64) -> MuChoice {
    let cap = params.m.saturating_sub(params.c);
    let (mu, searched) = match compute_mu(epsilon, rates.r_blk, rates.p1, rates.p2) {
        Ok(mu) => (mu.min(cap), false),
        Err(_) => (search_mu(epsilon, rates.r_blk, rates.p1, rates.p2, cap), true),
    };
    MuChoice {
        mu,
        predicted_rbit: predicted_rbit(rates.r_blk, rates.p1, rates.p2, mu),
        r_net: net_key_rate(rates.r_blk, rates.p1, rates.p2, mu, params.m, params.c, params.n).unwrap_or(0.0),
        searched,
    }
}

/// Outcome of replaying the sample comparison with a chosen sample size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleReplay {
    pub sample_aborts: usize,
    /// Trials that end with a key.
    pub accepted: usize,
    /// Damaged bits left in accepted keys.
    pub damaged_bits: usize,
    /// Total bits in accepted keys.
    pub key_bits: usize,
}

impl SampleReplay {
    pub fn bit_error_rate(&self) -> f64 {
        if self.key_bits == 0 {
            0.0
        } else {
            self.damaged_bits as f64 / self.key_bits as f64
        }
    }
}

/// Draws `mu` sample positions for every residual block and counts which pass.
pub fn replay_sampling(stats: &TrialStats, mu: usize, seed: u64, point: usize) -> SampleReplay {
    let m = stats.key_bits;
    let mut replay = SampleReplay::default();
    for r in &stats.residuals {
        let mut rng = sample_rng(seed, point, r.trial);
        let caught = sample(&mut rng, m, mu).into_iter().any(|i| r.key_difference.get(i));
        if caught {
            replay.sample_aborts += 1;
        } else {
            replay.damaged_bits += r.key_difference.weight();
        }
    }
    replay.accepted = stats.trials - stats.syndrome_aborts - replay.sample_aborts;
    replay.key_bits = replay.accepted * (m - mu);
    replay
}

/// One row of sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub pe: f64,
    pub stats: TrialStats,
    pub rates: RateInputs,
    pub mu: usize,
    pub rbit_hat_pred: f64,
    pub rbit_hat_meas: f64,
    pub r_net: f64,
    pub abort_rate: f64,
    pub replay: Option<SampleReplay>,
    pub mu_searched: bool,
}

pub const CSV_HEADER: &str = "pe,trials,r_blk,r_bit,p1,p2,q,mu,rbit_hat_pred,rbit_hat_meas,r_net,abort_rate";

impl SweepPoint {
    pub fn csv_row(&self) -> String {
        let r = &self.rates;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.pe,
            self.stats.trials,
            r.r_blk,
            r.r_bit,
            r.p1,
            r.p2,
            r.q,
            self.mu,
            self.rbit_hat_pred,
            self.rbit_hat_meas,
            self.r_net,
            self.abort_rate
        )
    }
}

/// Evaluates one crossover probability.
pub fn sweep_point(
    protocol: &Protocol<'_>,
    config: &SweepConfig,
    pe: f64,
    point: usize,
) -> Result<SweepPoint, ProtocolError> {
    let stats = estimate_rates(protocol, config.mode, pe, config.trials, config.seed, point)?;
    let rates = stats.rates();
    let params = protocol.code().params();
    Ok(match config.mode {
        Mode::Original => SweepPoint {
            pe,
            rates,
            mu: 0,
            rbit_hat_pred: rates.r_bit,
            rbit_hat_meas: rates.r_bit,
            r_net: params.r_net,
            abort_rate: 0.0,
            replay: None,
            mu_searched: false,
            stats,
        },
        Mode::Improved => {
            let choice = choose_mu_and_rate(&rates, &params, config.epsilon);
            let replay = replay_sampling(&stats, choice.mu, config.seed, point);
            SweepPoint {
                pe,
                rates,
                mu: choice.mu,
                rbit_hat_pred: choice.predicted_rbit,
                rbit_hat_meas: replay.bit_error_rate(),
                r_net: choice.r_net,
                abort_rate: (stats.syndrome_aborts + replay.sample_aborts) as f64 / stats.trials.max(1) as f64,
                replay: Some(replay),
                mu_searched: choice.searched,
                stats,
            }
        }
    })
}

/// Runs every point of the sweep in order.
pub fn run_sweep(code: &EaCssCode, config: &SweepConfig) -> Result<Vec<SweepPoint>, ProtocolError> {
    let protocol = Protocol::new(
        code,
        ProtocolConfig {
            epsilon: config.epsilon,
            max_iter: config.max_iter,
            prior: config.prior,
            ..ProtocolConfig::default()
        },
    );
    config
        .points()
        .into_iter()
        .enumerate()
        .map(|(i, pe)| sweep_point(&protocol, config, pe, i))
        .collect()
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{}", p.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableSet {
    /// Unsplit PG1(2, s) codes.
    Table1,
    /// Splits of EG1(2, 5).
    Table2,
    /// Splits of PG1(2, 5).
    Table3,
}

impl std::str::FromStr for TableSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table1" => Ok(TableSet::Table1),
            "table2" => Ok(TableSet::Table2),
            "table3" => Ok(TableSet::Table3),
            other => Err(format!("unknown table {other:?} (expected table1, table2 or table3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub spec: CodeSpec,
    pub params: CodeParams,
}

pub const TABLE_HEADER: &str = "family,p,s,c_sp,r_sp,n,m,c,r_net";

impl TableRow {
    pub fn csv_row(&self) -> String {
        let (s, p) = (&self.spec, &self.params);
        format!(
            "{},{},{},{},{},{},{},{},{:.4}",
            s.family, s.p, s.s, s.c_sp, s.r_sp, p.n, p.m, p.c, p.r_net
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Self-paired parameters of one code.
pub fn table_row(spec: CodeSpec) -> Result<TableRow, TableError> {
    let h = build_parity_check(&spec)?;
    Ok(TableRow {
        spec,
        params: nominal_params(&h.matrix, &h.matrix)?,
    })
}

/// Rows of a parameter table.
///
/// The split tables list every split with positive net rate and length at
/// most `max_n`. For each column factor, row factors are tried upward until
/// the rank reaches n/2 (so m <= c); that rank test stops early.
pub fn emit_tables(set: TableSet, max_n: usize) -> Result<Vec<TableRow>, TableError> {
    let base = match set {
        TableSet::Table1 => {
            return (2..=6)
                .map(|s| CodeSpec::new(Family::Pg1, 2, s))
                .filter(|spec| points_of(spec) <= max_n)
                .map(table_row)
                .collect();
        }
        TableSet::Table2 => CodeSpec::new(Family::Eg1, 2, 5),
        TableSet::Table3 => CodeSpec::new(Family::Pg1, 2, 5),
    };
    let unsplit = build_parity_check(&base)?;
    let n0 = unsplit.n();
    let mut rows = Vec::new();
    for c_sp in 1..=unsplit.max_col_weight() {
        if n0 * c_sp > max_n {
            break;
        }
        for r_sp in 1.. {
            let spec = base.split(c_sp, r_sp);
            let h = match build_parity_check(&spec) {
                Ok(h) => h,
                Err(GeometryError::SplitFactor { .. }) => break,
                Err(e) => return Err(e.into()),
            };
            let n = h.n();
            if 2 * h.matrix.rank_capped(n.div_ceil(2)) >= n {
                break;
            }
            let params = nominal_params(&h.matrix, &h.matrix)?;
            if params.m > params.c {
                rows.push(TableRow { spec, params });
            }
        }
    }
    Ok(rows)
}

fn points_of(spec: &CodeSpec) -> usize {
    let q = 1usize << spec.s;
    let points = ((1usize << (3 * spec.s)) - 1) / (q - 1);
    points * spec.c_sp
}

pub fn write_table_csv<W: Write>(rows: &[TableRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, m: usize, c: usize) -> CodeParams {
        CodeParams {
            n,
            m,
            c,
            r_net: (m as f64 - c as f64) / n as f64,
        }
    }

    #[test]
    fn points_include_end() {
        let cfg = SweepConfig {
            pe_start: 0.01,
            pe_end: 0.05,
            pe_step: 0.01,
            ..SweepConfig::default()
        };
        assert_eq!(cfg.points().len(), 5);
    }

    #[test]
    fn mu_capped_without_key() {
        let rates = RateInputs {
            r_blk: 1.0,
            r_bit: 0.5,
            p1: 0.5,
            p2: 0.5,
            q: 0.5,
        };
        let choice = choose_mu_and_rate(&rates, &params(100, 30, 10), 1e-6);
        assert_eq!(choice.mu, 20);
        assert_eq!(choice.r_net, 0.0);
        assert!(choice.searched);
    }

    #[test]
    fn all_aborts_need_no_sample() {
        let rates = RateInputs {
            r_blk: 1.0,
            r_bit: 0.5,
            p1: 1.0,
            p2: 0.0,
            q: 0.5,
        };
        let choice = choose_mu_and_rate(&rates, &params(1057, 570, 1), 1e-6);
        assert_eq!(choice.mu, 0);
        assert_eq!(choice.predicted_rbit, 0.0);
        assert_eq!(choice.r_net, 0.0);
    }

    #[test]
    fn table1_small() {
        let rows = emit_tables(TableSet::Table1, 300).unwrap();
        let got: Vec<_> = rows.iter().map(|r| (r.params.n, r.params.m, r.params.c)).collect();
        // classical dimensions 11, 45, 191: m = n + c - 2(n - k)
        assert_eq!(got, vec![(21, 2, 1), (73, 18, 1), (273, 110, 1)]);
    }
}
