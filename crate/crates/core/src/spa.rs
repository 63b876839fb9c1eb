//! Syndrome-driven sum-product decoding.
//!
//! Messages are log-likelihood ratios (positive favours "no error"). The check
//! update is the tanh rule, |r| = 2 atanh(Π tanh(|q|/2)) over the other edges
//! of the check (the full product divided by the edge's own factor), with the sign
//! flipped for every check whose syndrome bit is set. Messages are stored per
//! edge in check-major order so the transcendental maps run over contiguous
//! slices; they use their own single-precision exp/log so they vectorize.

use thiserror::Error;

use crate::gf2::{BitMatrix, BitVector};

/// Bound on every message magnitude.
pub const LLR_CLAMP: f32 = 30.0;

/// Iteration cap used throughout the protocol.
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaError {
    #[error("crossover probability {0} outside (0, 0.5)")]
    BadPrior(f64),
    #[error("syndrome has {got} bits, graph has {expected} checks")]
    SyndromeLength { expected: usize, got: usize },
    #[error("max_iter must be at least 1")]
    NoIterations,
}

/// Sparse bipartite graph of a parity-check matrix.
#[derive(Debug, Clone)]
pub struct TannerGraph {
    n_vars: usize,
    n_checks: usize,
    /// Edges of check `c` are `check_start[c]..check_start[c + 1]`.
    check_start: Vec<usize>,
    edge_var: Vec<u32>,
    edge_check: Vec<u32>,
    /// Edge ids incident to variable `v` are `var_edges[var_start[v]..var_start[v + 1]]`.
    var_start: Vec<usize>,
    var_edges: Vec<u32>,
}

impl TannerGraph {
    pub fn new(h: &BitMatrix) -> Self {
        let (n_checks, n_vars) = h.shape();
        let mut check_start = Vec::with_capacity(n_checks + 1);
        let mut edge_var = Vec::new();
        let mut edge_check = Vec::new();
        check_start.push(0);
        for c in 0..n_checks {
            for v in h.row_ones(c) {
                edge_var.push(v as u32);
                edge_check.push(c as u32);
            }
            check_start.push(edge_var.len());
        }
        let mut var_start = vec![0usize; n_vars + 1];
        for &v in &edge_var {
            var_start[v as usize + 1] += 1;
        }
        for v in 0..n_vars {
            var_start[v + 1] += var_start[v];
        }
        let mut fill = var_start.clone();
        let mut var_edges = vec![0u32; edge_var.len()];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[fill[v as usize]] = e as u32;
            fill[v as usize] += 1;
        }
        Self {
            n_vars,
            n_checks,
            check_start,
            edge_var,
            edge_check,
            var_start,
            var_edges,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_checks(&self) -> usize {
        self.n_checks
    }

    pub fn edges(&self) -> usize {
        self.edge_var.len()
    }

    /// Variables attached to check `c`, in increasing order.
    pub fn check_vars(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.edge_var[self.check_start[c]..self.check_start[c + 1]]
            .iter()
            .map(|&v| v as usize)
    }

    /// Checks attached to variable `v`, in increasing order.
    pub fn var_checks(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.var_edges[self.var_start[v]..self.var_start[v + 1]]
            .iter()
            .map(|&e| self.edge_check[e as usize] as usize)
    }

    pub fn check_degree(&self, c: usize) -> usize {
        self.check_start[c + 1] - self.check_start[c]
    }

    pub fn var_degree(&self, v: usize) -> usize {
        self.var_start[v + 1] - self.var_start[v]
    }

    /// `H · x`.
    pub fn syndrome(&self, x: &BitVector) -> BitVector {
        assert_eq!(x.len(), self.n_vars, "vector length must equal the number of variables");
        BitVector::from_bits((0..self.n_checks).map(|c| self.check_vars(c).filter(|&v| x.get(v)).count() % 2 == 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResult {
    pub error_estimate: BitVector,
    /// True iff `H · error_estimate` equals the target syndrome.
    pub converged: bool,
    /// Message-passing iterations run; 0 when the prior alone already matched.
    pub iterations: usize,
}

/// Decoder with reusable message buffers for one graph.
#[derive(Debug, Clone)]
pub struct Decoder<'g> {
    graph: &'g TannerGraph,
    v2c: Vec<f32>,
    c2v: Vec<f32>,
    scratch: Vec<f32>,
    totals: Vec<f32>,
    hard: Vec<bool>,
    target: Vec<bool>,
}

impl<'g> Decoder<'g> {
    pub fn new(graph: &'g TannerGraph) -> Self {
        let e = graph.edges();
        Self {
            graph,
            v2c: vec![0.0; e],
            c2v: vec![0.0; e],
            scratch: vec![0.0; e],
            totals: vec![0.0; graph.n_vars],
            hard: vec![false; graph.n_vars],
            target: vec![false; graph.n_checks],
        }
    }

    pub fn graph(&self) -> &'g TannerGraph {
        self.graph
    }

    /// Flooding sum-product decoding of the error pattern with syndrome `s`,
    /// assuming independent bit errors with probability `p`.
    pub fn decode(&mut self, s: &BitVector, p: f64, max_iter: usize) -> Result<DecodeResult, SpaError> {
        let g = self.graph;
        if !(p > 0.0 && p < 0.5) {
            return Err(SpaError::BadPrior(p));
        }
        if s.len() != g.n_checks {
            return Err(SpaError::SyndromeLength {
                expected: g.n_checks,
                got: s.len(),
            });
        }
        if max_iter == 0 {
            return Err(SpaError::NoIterations);
        }
        let prior = (((1.0 - p) / p).ln() as f32).min(LLR_CLAMP);
        for (c, t) in self.target.iter_mut().enumerate() {
            *t = s.get(c);
        }
        self.hard.iter_mut().for_each(|h| *h = false);
        if !self.target.iter().any(|&t| t) {
            return Ok(self.result(true, 0));
        }
        self.v2c.iter_mut().for_each(|q| *q = prior);
        for it in 1..=max_iter {
            self.check_update();
            self.variable_update(prior);
            if self.satisfied() {
                return Ok(self.result(true, it));
            }
        }
        Ok(self.result(false, max_iter))
    }

    fn check_update(&mut self) {
        let g = self.graph;
        self.scratch.copy_from_slice(&self.v2c);
        map_in_place(&mut self.scratch, |q| tanh_half(q.abs()).max(TANH_FLOOR));
        for c in 0..g.n_checks {
            let range = g.check_start[c]..g.check_start[c + 1];
            let q = &self.v2c[range.clone()];
            let t = &mut self.scratch[range.clone()];
            // four independent accumulators keep the multiplications pipelined
            let mut acc = [1.0f32; 4];
            for chunk in t.chunks(4) {
                for (a, &x) in acc.iter_mut().zip(chunk) {
                    *a *= x;
                }
            }
            let product = (acc[0] * acc[1]) * (acc[2] * acc[3]);
            self.c2v[range].fill(product);
            // outgoing sign: parity of the other signs and the syndrome bit;
            // it is carried on the stored tanh value
            let parity = q.iter().fold(self.target[c] as u32, |a, &x| a ^ (x.to_bits() >> 31));
            for (x, &qx) in t.iter_mut().zip(q) {
                let flip = (parity ^ (qx.to_bits() >> 31)) << 31;
                *x = f32::from_bits(x.to_bits() ^ flip);
            }
        }
        // the product over the other edges is the check product divided by the own factor
        zip_map_in_place(&mut self.c2v, &self.scratch, |product, signed| {
            let others = product / signed;
            atanh_twice(others.abs()).min(LLR_CLAMP).copysign(others)
        });
    }

    fn variable_update(&mut self, prior: f32) {
        let g = self.graph;
        self.totals.iter_mut().for_each(|t| *t = prior);
        for (&v, &r) in g.edge_var.iter().zip(&self.c2v) {
            self.totals[v as usize] += r;
        }
        for ((q, &v), &r) in self.v2c.iter_mut().zip(&g.edge_var).zip(&self.c2v) {
            *q = (self.totals[v as usize] - r).clamp(-LLR_CLAMP, LLR_CLAMP);
        }
        for (h, &t) in self.hard.iter_mut().zip(&self.totals) {
            *h = t < 0.0;
        }
    }

    fn satisfied(&self) -> bool {
        let g = self.graph;
        (0..g.n_checks).all(|c| {
            let mut parity = self.target[c];
            for &v in &g.edge_var[g.check_start[c]..g.check_start[c + 1]] {
                parity ^= self.hard[v as usize];
            }
            !parity
        })
    }

    fn result(&self, converged: bool, iterations: usize) -> DecodeResult {
        DecodeResult {
            error_estimate: BitVector::from_bits(self.hard.iter().copied()),
            converged,
            iterations,
        }
    }
}

/// One-shot decode; see [`Decoder::decode`].
pub fn decode_syndrome(g: &TannerGraph, s: &BitVector, p: f64, max_iter: usize) -> Result<DecodeResult, SpaError> {
    Decoder::new(g).decode(s, p, max_iter)
}

const P_GAP: f32 = 5.960_464_5e-8;
/// Smallest tanh factor; keeps the division by a check's own factor finite.
const TANH_FLOOR: f32 = 1e-18;
const LN2: f32 = std::f32::consts::LN_2;
const LN2_HI: f32 = 0.693_145_75;
const LN2_LO: f32 = 1.428_606_8e-6;
const LOG2E: f32 = std::f32::consts::LOG2_E;
const ROUND_MAGIC: f32 = 12_582_912.0;

/// e^{-x} for x in [0, 80], good to a few ulp.
#[inline(always)]
fn exp_neg(x: f32) -> f32 {
    // adding 1.5·2^23 leaves round(x·log2 e) in the low mantissa bits
    let shifted = x * LOG2E + ROUND_MAGIC;
    let k = shifted.to_bits().wrapping_sub(ROUND_MAGIC.to_bits()) as i32;
    let kf = shifted - ROUND_MAGIC;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    // Taylor series of e^{-r}, |r| <= ln 2 / 2
    let mut y = 1.0 / 40320.0;
    y = y * -r + 1.0 / 5040.0;
    y = y * -r + 1.0 / 720.0;
    y = y * -r + 1.0 / 120.0;
    y = y * -r + 1.0 / 24.0;
    y = y * -r + 1.0 / 6.0;
    y = y * -r + 0.5;
    y = y * -r + 1.0;
    y = y * -r + 1.0;
    y * f32::from_bits(((127 - k) as u32) << 23)
}

/// atanh(z) / z for |z| < 1/3, as a series in z².
#[inline(always)]
fn atanh_ratio(z2: f32) -> f32 {
    let mut s = 1.0 / 13.0;
    s = s * z2 + 1.0 / 11.0;
    s = s * z2 + 1.0 / 9.0;
    s = s * z2 + 1.0 / 7.0;
    s = s * z2 + 1.0 / 5.0;
    s = s * z2 + 1.0 / 3.0;
    s * z2 + 1.0
}

/// Natural log of a positive normal float.
#[inline(always)]
fn ln_pos(x: f32) -> f32 {
    let bits = x.to_bits();
    let e = ((bits >> 23) & 0xff) as i32 - 127;
    let m = f32::from_bits((bits & 0x007f_ffff) | 0x3f80_0000);
    // ln m = 2 atanh z with z = (m - 1)/(m + 1) in [0, 1/3)
    let z = (m - 1.0) / (m + 1.0);
    e as f32 * LN2 + 2.0 * z * atanh_ratio(z * z)
}

/// tanh(x/2) for x >= 0.
#[inline(always)]
fn tanh_half(x: f32) -> f32 {
    let x = x.min(80.0);
    let e = exp_neg(x);
    let general = (1.0 - e) / (1.0 + e);
    // near zero 1 - e cancels, so use the Taylor series of tanh h
    let h = 0.5 * x;
    let h2 = h * h;
    let mut poly = 62.0 / 2835.0;
    poly = poly * -h2 + 17.0 / 315.0;
    poly = poly * -h2 + 2.0 / 15.0;
    poly = poly * -h2 + 1.0 / 3.0;
    let small = h * (1.0 - h2 * poly);
    if x < 0.5 {
        small
    } else {
        general
    }
}

/// 2 atanh(p) for p in [0, 1], saturating above. Single precision cannot resolve p closer to 1
/// than 2^-24, so the result saturates near 17.3.
#[inline(always)]
fn atanh_twice(p: f32) -> f32 {
    let p = p.min(1.0);
    let series = 2.0 * p * atanh_ratio(p * p);
    let general = ln_pos((1.0 + p) / (1.0 - p).max(P_GAP));
    if p < 1.0 / 3.0 {
        series
    } else {
        general
    }
}

#[inline(always)]
fn map_slice(xs: &mut [f32], f: impl Fn(f32) -> f32) {
    for x in xs.iter_mut() {
        *x = f(*x);
    }
}

#[inline(always)]
fn zip_map_slice(xs: &mut [f32], ys: &[f32], f: impl Fn(f32, f32) -> f32) {
    for (x, &y) in xs.iter_mut().zip(ys) {
        *x = f(*x, y);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn map_slice_avx2(xs: &mut [f32], f: impl Fn(f32) -> f32) {
    map_slice(xs, f)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn zip_map_slice_avx2(xs: &mut [f32], ys: &[f32], f: impl Fn(f32, f32) -> f32) {
    zip_map_slice(xs, ys, f)
}

fn wide_vectors() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// Applies `f` elementwise, with 8-wide vectors when the CPU has them.
fn map_in_place(xs: &mut [f32], f: impl Fn(f32) -> f32) {
    #[cfg(target_arch = "x86_64")]
    if wide_vectors() {
        // SAFETY: the required target features were detected at runtime.
        return unsafe { map_slice_avx2(xs, f) };
    }
    map_slice(xs, f)
}

fn zip_map_in_place(xs: &mut [f32], ys: &[f32], f: impl Fn(f32, f32) -> f32) {
    #[cfg(target_arch = "x86_64")]
    if wide_vectors() {
        // SAFETY: the required target features were detected at runtime.
        return unsafe { zip_map_slice_avx2(xs, ys, f) };
    }
    zip_map_slice(xs, ys, f)
}
