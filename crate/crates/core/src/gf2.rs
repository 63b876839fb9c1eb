//! Dense linear algebra over GF(2).
//!
//! Rows are packed into 64-bit words, row-major. Every elimination routine picks
//! the first available pivot scanning columns left to right, so transforms and
//! bases come out identical from run to run.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use thiserror::Error;

const WORD_BITS: usize = 64;

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[inline]
fn tail_mask(bits: usize) -> u64 {
    match bits % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[inline]
fn test_bit(words: &[u64], i: usize) -> bool {
    (words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
}

#[inline]
fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

/// Index of the lowest set bit below `limit`, if any.
fn first_one(words: &[u64], limit: usize) -> Option<usize> {
    for (w, &word) in words.iter().enumerate() {
        if word != 0 {
            let bit = w * WORD_BITS + word.trailing_zeros() as usize;
            return (bit < limit).then_some(bit);
        }
    }
    None
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch in {op}: {left:?} against {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix of size {size}x{size} is singular (rank {rank})")]
    Singular { rank: usize, size: usize },
    #[error("row {row} of the starting set depends on the rows before it")]
    DependentRows { row: usize },
    #[error("row {row} of the starting set is not contained in the row space of the target")]
    NotContained { row: usize },
}

/// A fixed-length vector over GF(2).
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut v = Self::zeros(0);
        for b in bits {
            if v.len.is_multiple_of(WORD_BITS) {
                v.words.push(0);
            }
            if b {
                v.words[v.len / WORD_BITS] |= 1 << (v.len % WORD_BITS);
            }
            v.len += 1;
        }
        v
    }

    /// Vector of length `len` with ones exactly at `ones`.
    pub fn from_indices<I: IntoIterator<Item = usize>>(len: usize, ones: I) -> Self {
        let mut v = Self::zeros(len);
        for i in ones {
            v.set(i, true);
        }
        v
    }

    /// Builds a vector from raw words; bits past `len` are cleared.
    pub fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.resize(words_for(len), 0);
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        Self { len, words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        test_bit(&self.words, i)
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / WORD_BITS] ^= 1 << (i % WORD_BITS);
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * WORD_BITS + bit)
            })
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| test_bit(&self.words, i))
    }

    /// Inner product over GF(2).
    pub fn dot(&self, other: &BitVector) -> bool {
        assert_eq!(self.len, other.len, "dot product of vectors with different lengths");
        self.words
            .iter()
            .zip(&other.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1
            == 1
    }

    pub fn hamming_distance(&self, other: &BitVector) -> usize {
        assert_eq!(self.len, other.len, "distance between vectors with different lengths");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// `self` followed by `tail`.
    pub fn concat(&self, tail: &BitVector) -> BitVector {
        let mut out = BitVector::zeros(self.len + tail.len);
        out.words[..self.words.len()].copy_from_slice(&self.words);
        for i in tail.iter_ones() {
            out.set(self.len + i, true);
        }
        out
    }

    /// Copy of bits `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> BitVector {
        assert!(start <= end && end <= self.len, "slice {start}..{end} out of range");
        BitVector::from_bits((start..end).map(|i| test_bit(&self.words, i)))
    }

    /// Bits at the given positions, in order.
    pub fn select(&self, positions: &[usize]) -> BitVector {
        BitVector::from_bits(positions.iter().map(|&i| self.get(i)))
    }

    /// Little-endian byte packing of the bits (bit `i` is bit `i % 8` of byte `i / 8`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        bytes.truncate(self.len.div_ceil(8));
        bytes
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Self {
        let mut words = vec![0u64; words_for(len)];
        for (i, &b) in bytes.iter().enumerate().take(len.div_ceil(8)) {
            words[i / 8] |= u64::from(b) << (8 * (i % 8));
        }
        Self::from_words(len, words)
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl BitXorAssign<&BitVector> for BitVector {
    fn bitxor_assign(&mut self, rhs: &BitVector) {
        assert_eq!(self.len, rhs.len, "xor of vectors with different lengths");
        xor_into(&mut self.words, &rhs.words);
    }
}

impl BitXor<&BitVector> for &BitVector {
    type Output = BitVector;

    fn bitxor(self, rhs: &BitVector) -> BitVector {
        let mut out = self.clone();
        out ^= rhs;
        out
    }
}

/// A dense matrix over GF(2) with bit-packed rows.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Stacks row vectors; every vector must have length `cols`.
    pub fn from_rows(cols: usize, rows: &[BitVector]) -> Result<Self, Gf2Error> {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Gf2Error::DimensionMismatch {
                    op: "from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            m.row_words_mut(i).copy_from_slice(r.words());
        }
        Ok(m)
    }

    /// Parses rows written as strings of `0`/`1`; other characters are ignored.
    pub fn from_strs(rows: &[&str]) -> Self {
        let parsed: Vec<BitVector> = rows
            .iter()
            .map(|r| BitVector::from_bits(r.chars().filter(|c| *c == '0' || *c == '1').map(|c| c == '1')))
            .collect();
        let cols = parsed.first().map_or(0, BitVector::len);
        Self::from_rows(cols, &parsed).expect("ragged rows")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(
            r < self.rows && c < self.cols,
            "({r}, {c}) out of range for {:?}",
            self.shape()
        );
        test_bit(self.row_words(r), c)
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(
            r < self.rows && c < self.cols,
            "({r}, {c}) out of range for {:?}",
            self.shape()
        );
        let mask = 1u64 << (c % WORD_BITS);
        let w = &mut self.data[r * self.stride + c / WORD_BITS];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    pub fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector::from_words(self.cols, self.row_words(r).to_vec())
    }

    pub fn set_row(&mut self, r: usize, v: &BitVector) {
        assert_eq!(v.len(), self.cols, "row length mismatch");
        self.row_words_mut(r).copy_from_slice(v.words());
    }

    pub fn row_ones(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(r).iter().enumerate().flat_map(|(w, &word)| {
            let mut rest = word;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(w * WORD_BITS + bit)
            })
        })
    }

    pub fn row_weight(&self, r: usize) -> usize {
        self.row_words(r).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn row_weights(&self) -> Vec<usize> {
        (0..self.rows).map(|r| self.row_weight(r)).collect()
    }

    pub fn col_weights(&self) -> Vec<usize> {
        let mut weights = vec![0; self.cols];
        for r in 0..self.rows {
            for c in self.row_ones(r) {
                weights[c] += 1;
            }
        }
        weights
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols && *self == Self::identity(self.rows)
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * self.stride);
        head[lo * self.stride..(lo + 1) * self.stride].swap_with_slice(&mut tail[..self.stride]);
    }

    /// `row[dst] ^= row[src]`, touching only words from `from_word` on.
    #[inline]
    fn xor_row_from(&mut self, dst: usize, src: usize, from_word: usize) {
        debug_assert_ne!(dst, src);
        let s = self.stride;
        if dst < src {
            let (head, tail) = self.data.split_at_mut(src * s);
            xor_into(&mut head[dst * s + from_word..(dst + 1) * s], &tail[from_word..s]);
        } else {
            let (head, tail) = self.data.split_at_mut(dst * s);
            xor_into(&mut tail[from_word..s], &head[src * s + from_word..(src + 1) * s]);
        }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            let (w, bit) = (r / WORD_BITS, 1u64 << (r % WORD_BITS));
            for c in self.row_ones(r) {
                t.data[c * t.stride + w] |= bit;
            }
        }
        t
    }

    pub fn select_rows(&self, rows: &[usize]) -> BitMatrix {
        let mut m = BitMatrix::zeros(rows.len(), self.cols);
        for (i, &r) in rows.iter().enumerate() {
            m.row_words_mut(i).copy_from_slice(self.row_words(r));
        }
        m
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> BitMatrix {
        assert!(
            start <= end && end <= self.rows,
            "row block {start}..{end} out of range"
        );
        BitMatrix {
            rows: end - start,
            cols: self.cols,
            stride: self.stride,
            data: self.data[start * self.stride..end * self.stride].to_vec(),
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn col_block(&self, start: usize, end: usize) -> BitMatrix {
        assert!(
            start <= end && end <= self.cols,
            "column block {start}..{end} out of range"
        );
        let mut m = BitMatrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            for c in self.row_ones(r).filter(|&c| c >= start && c < end) {
                m.set(r, c - start, true);
            }
        }
        m
    }

    /// Stacks matrices vertically.
    pub fn vstack(blocks: &[&BitMatrix]) -> Result<BitMatrix, Gf2Error> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Gf2Error::DimensionMismatch {
                    op: "vstack",
                    left: (rows, cols),
                    right: b.shape(),
                });
            }
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(BitMatrix {
            rows,
            cols,
            stride: words_for(cols),
            data,
        })
    }

    /// `(left | right)`.
    pub fn hstack(left: &BitMatrix, right: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if left.rows != right.rows {
            return Err(Gf2Error::DimensionMismatch {
                op: "hstack",
                left: left.shape(),
                right: right.shape(),
            });
        }
        let mut m = BitMatrix::zeros(left.rows, left.cols + right.cols);
        for r in 0..left.rows {
            m.row_words_mut(r)[..left.stride].copy_from_slice(left.row_words(r));
            for c in right.row_ones(r) {
                m.set(r, left.cols + c, true);
            }
        }
        Ok(m)
    }

    /// Matrix product over GF(2), using eight-bit lookup tables of row combinations
    /// of `rhs` (the "four Russians" method).
    pub fn mul(&self, rhs: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != rhs.rows {
            return Err(Gf2Error::DimensionMismatch {
                op: "mul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = BitMatrix::zeros(self.rows, rhs.cols);
        let s = rhs.stride;
        if s == 0 || self.rows == 0 {
            return Ok(out);
        }
        let mut table = vec![0u64; 256 * s];
        for block in (0..self.cols).step_by(8) {
            let width = (self.cols - block).min(8);
            // table[idx] = XOR of rhs rows block + b for each set bit b of idx.
            for idx in 1usize..(1 << width) {
                let low = idx.trailing_zeros() as usize;
                let prev = idx & (idx - 1);
                let (done, rest) = table.split_at_mut(idx * s);
                let dst = &mut rest[..s];
                dst.copy_from_slice(&done[prev * s..(prev + 1) * s]);
                xor_into(dst, rhs.row_words(block + low));
            }
            let (w, shift) = (block / WORD_BITS, block % WORD_BITS);
            for r in 0..self.rows {
                let idx = ((self.data[r * self.stride + w] >> shift) & 0xff) as usize;
                if idx != 0 {
                    xor_into(&mut out.data[r * s..(r + 1) * s], &table[idx * s..(idx + 1) * s]);
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product `self · v`.
    pub fn mul_vec(&self, v: &BitVector) -> Result<BitVector, Gf2Error> {
        if self.cols != v.len() {
            return Err(Gf2Error::DimensionMismatch {
                op: "mul_vec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        let mut out = BitVector::zeros(self.rows);
        for r in 0..self.rows {
            let parity = self
                .row_words(r)
                .iter()
                .zip(v.words())
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
            if parity & 1 == 1 {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// GF(2) rank.
    pub fn rank(&self) -> usize {
        let mut basis = RowBasis::new(self.cols);
        for r in 0..self.rows {
            if basis.rank() == self.cols {
                break;
            }
            basis.insert(self.row_words(r));
        }
        basis.rank()
    }

    /// Rank, stopping as soon as it reaches `cap`.
    pub fn rank_capped(&self, cap: usize) -> usize {
        let mut basis = RowBasis::new(self.cols);
        for r in 0..self.rows {
            if basis.rank() >= cap {
                break;
            }
            basis.insert(self.row_words(r));
        }
        basis.rank()
    }

    /// Reduces `self` in place to reduced row echelon form, considering only pivot
    /// columns below `pivot_limit`. Pivot rows end up first, in column order.
    /// Returns the pivot columns.
    pub fn rref_in_place(&mut self, pivot_limit: usize) -> Vec<usize> {
        let limit = pivot_limit.min(self.cols);
        let mut pivots = Vec::new();
        let mut next = 0;
        for col in 0..limit {
            if next == self.rows {
                break;
            }
            let Some(p) = (next..self.rows).find(|&r| test_bit(self.row_words(r), col)) else {
                continue;
            };
            self.swap_rows(p, next);
            let from = col / WORD_BITS;
            for r in 0..self.rows {
                if r != next && test_bit(self.row_words(r), col) {
                    self.xor_row_from(r, next, from);
                }
            }
            pivots.push(col);
            next += 1;
        }
        pivots
    }

    /// Reduced row echelon form `R` together with the invertible `P` such that
    /// `P · self = R`.
    pub fn rref_with_transform(&self) -> (BitMatrix, BitMatrix, Vec<usize>) {
        let mut aug = BitMatrix::hstack(self, &BitMatrix::identity(self.rows)).expect("square identity");
        let pivots = aug.rref_in_place(self.cols);
        let reduced = aug.col_block(0, self.cols);
        let transform = aug.col_block(self.cols, self.cols + self.rows);
        (reduced, transform, pivots)
    }

    /// Inverse of a square nonsingular matrix (Gauss-Jordan).
    pub fn invert(&self) -> Result<BitMatrix, Gf2Error> {
        if self.rows != self.cols {
            return Err(Gf2Error::DimensionMismatch {
                op: "invert",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = BitMatrix::identity(n);
        for col in 0..n {
            let Some(p) = (col..n).find(|&r| test_bit(a.row_words(r), col)) else {
                return Err(Gf2Error::Singular {
                    rank: self.rank(),
                    size: n,
                });
            };
            a.swap_rows(p, col);
            inv.swap_rows(p, col);
            let from = col / WORD_BITS;
            for r in 0..n {
                if r != col && test_bit(a.row_words(r), col) {
                    a.xor_row_from(r, col, from);
                    inv.xor_row_from(r, col, 0);
                }
            }
        }
        Ok(inv)
    }

    /// Basis of the right kernel `{x : self · x = 0}`, one basis vector per row.
    /// The basis vector for a free column `f` has a one at `f` and is supported
    /// otherwise on pivot columns.
    pub fn kernel_basis(&self) -> BitMatrix {
        let mut reduced = self.clone();
        let pivots = reduced.rref_in_place(self.cols);
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let free: Vec<usize> = (0..self.cols).filter(|&c| !is_pivot[c]).collect();
        let pivot_rows = reduced.row_block(0, pivots.len()).transpose();
        let mut basis = BitMatrix::zeros(free.len(), self.cols);
        for (i, &f) in free.iter().enumerate() {
            basis.set(i, f, true);
            for r in pivot_rows.row_ones(f).collect::<Vec<_>>() {
                basis.set(i, pivots[r], true);
            }
        }
        basis
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        if self.rows <= 64 && self.cols <= 128 {
            for r in 0..self.rows {
                writeln!(f, "  {}", self.row(r))?;
            }
        }
        Ok(())
    }
}

/// Outcome of offering a vector to a [`RowBasis`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Insertion {
    /// The vector was independent and is now part of the basis.
    Added,
    /// The vector reduced to zero on the pivot columns; carries the residual.
    Dependent(Vec<u64>),
}

/// An echelon basis grown one row at a time.
///
/// Each stored row has a distinct pivot (its lowest set bit) and is zero at the
/// pivots of the rows stored before it, so a single forward pass reduces any
/// vector. Pivots are restricted to columns below `pivot_limit`, which lets the
/// columns past it carry bookkeeping (for example which input rows were combined).
#[derive(Debug, Clone)]
pub struct RowBasis {
    width: usize,
    pivot_limit: usize,
    stride: usize,
    rows: Vec<u64>,
    pivots: Vec<usize>,
}

impl RowBasis {
    pub fn new(width: usize) -> Self {
        Self::with_pivot_limit(width, width)
    }

    pub fn with_pivot_limit(width: usize, pivot_limit: usize) -> Self {
        Self {
            width,
            pivot_limit: pivot_limit.min(width),
            stride: words_for(width),
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// Reduces `v` against every stored row.
    pub fn reduce(&self, v: &mut [u64]) {
        debug_assert_eq!(v.len(), self.stride);
        for (k, &p) in self.pivots.iter().enumerate() {
            if test_bit(v, p) {
                let from = p / WORD_BITS;
                xor_into(
                    &mut v[from..],
                    &self.rows[k * self.stride + from..(k + 1) * self.stride],
                );
            }
        }
    }

    /// True when `v` lies in the span of the basis (on the pivot columns).
    pub fn contains(&self, v: &[u64]) -> bool {
        let mut r = v.to_vec();
        self.reduce(&mut r);
        first_one(&r, self.pivot_limit).is_none()
    }

    pub fn insert(&mut self, v: &[u64]) -> Insertion {
        let mut r = v.to_vec();
        self.reduce(&mut r);
        match first_one(&r, self.pivot_limit) {
            Some(p) => {
                self.rows.extend_from_slice(&r);
                self.pivots.push(p);
                Insertion::Added
            }
            None => Insertion::Dependent(r),
        }
    }
}

/// Extends the independent rows of `start` with rows taken greedily (in order)
/// from `target` until together they span the row space of `target`.
///
/// Requires the rows of `start` to be independent and to lie in the row space
/// of `target`. Returns the chosen rows of `target`.
pub fn complete_basis(start: &BitMatrix, target: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    if start.cols() != target.cols() {
        return Err(Gf2Error::DimensionMismatch {
            op: "complete_basis",
            left: start.shape(),
            right: target.shape(),
        });
    }
    let mut target_basis = RowBasis::new(target.cols());
    for r in 0..target.rows() {
        target_basis.insert(target.row_words(r));
    }
    let mut basis = RowBasis::new(start.cols());
    for r in 0..start.rows() {
        if !target_basis.contains(start.row_words(r)) {
            return Err(Gf2Error::NotContained { row: r });
        }
        if basis.insert(start.row_words(r)) != Insertion::Added {
            return Err(Gf2Error::DependentRows { row: r });
        }
    }
    let mut chosen = Vec::new();
    for r in 0..target.rows() {
        if basis.rank() == target_basis.rank() {
            break;
        }
        if basis.insert(target.row_words(r)) == Insertion::Added {
            chosen.push(r);
        }
    }
    Ok(target.select_rows(&chosen))
}

/// Two-sided normal form of a product matrix.
#[derive(Debug, Clone)]
pub struct Normalization {
    pub t1: BitMatrix,
    pub t2: BitMatrix,
    /// Rank of the normalised matrix.
    pub c: usize,
}

/// Finds nonsingular `T1` (r1 x r1) and `T2` (r2 x r2) with
/// `T1 · M · T2ᵀ = [[0, 0], [0, I_c]]`, where `c = rank(M)`.
///
/// `M` is row-reduced (recording the row operations), the surviving pivot rows
/// are column-reduced by row-reducing their transpose, and finally the identity
/// block is rotated to the bottom-right corner.
pub fn normalize_product(m: &BitMatrix, r1: usize, r2: usize) -> Result<Normalization, Gf2Error> {
    if m.shape() != (r1, r2) {
        return Err(Gf2Error::DimensionMismatch {
            op: "normalize_product",
            left: m.shape(),
            right: (r1, r2),
        });
    }
    let (reduced, row_ops, pivots) = m.rref_with_transform();
    let c = pivots.len();
    let (_, col_ops, col_pivots) = reduced.row_block(0, c).transpose().rref_with_transform();
    debug_assert_eq!(col_pivots, (0..c).collect::<Vec<_>>());

    let rotate = |t: &BitMatrix, k: usize| {
        let n = t.rows();
        let order: Vec<usize> = (k..n).chain(0..k).collect();
        t.select_rows(&order)
    };
    Ok(Normalization {
        t1: rotate(&row_ops, c),
        t2: rotate(&col_ops, c),
        c,
    })
}

/// The block matrix `[[0, 0], [0, I_c]]` of shape r1 x r2.
pub fn corner_identity(r1: usize, r2: usize, c: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(r1, r2);
    for i in 0..c {
        m.set(r1 - c + i, r2 - c + i, true);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> BitMatrix {
        BitMatrix::from_fn(rows, cols, |_, _| rng.random_bool(0.5))
    }

    fn random_invertible(rng: &mut ChaCha8Rng, n: usize) -> BitMatrix {
        loop {
            let m = random_matrix(rng, n, n);
            if m.rank() == n {
                return m;
            }
        }
    }

    /// Rank by plain elimination on `Vec<Vec<bool>>`, independent of the packed code.
    fn naive_rank(m: &BitMatrix) -> usize {
        let mut rows: Vec<Vec<bool>> = (0..m.rows())
            .map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect())
            .collect();
        let mut rank = 0;
        for c in 0..m.cols() {
            if let Some(p) = (rank..rows.len()).find(|&r| rows[r][c]) {
                rows.swap(p, rank);
                let pivot = rows[rank].clone();
                for (r, row) in rows.iter_mut().enumerate() {
                    if r != rank && row[c] {
                        row.iter_mut().zip(&pivot).for_each(|(x, y)| *x ^= y);
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    fn naive_mul(a: &BitMatrix, b: &BitMatrix) -> BitMatrix {
        BitMatrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).fold(false, |acc, k| acc ^ (a.get(i, k) & b.get(k, j)))
        })
    }

    #[test]
    fn identity_products() {
        let i3 = BitMatrix::identity(3);
        assert_eq!(i3.mul(&i3).unwrap(), i3);
        let a = BitMatrix::from_strs(&["101", "011"]);
        assert!(a.mul(&BitMatrix::zeros(3, 4)).unwrap().is_zero());
    }

    #[test]
    fn mul_rejects_nonconformable() {
        let err = BitMatrix::zeros(2, 3).mul(&BitMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Gf2Error::DimensionMismatch { op: "mul", .. }));
    }

    #[test]
    fn mul_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (r, k, c) in [(1, 1, 1), (5, 9, 3), (70, 130, 65), (17, 200, 129)] {
            let a = random_matrix(&mut rng, r, k);
            let b = random_matrix(&mut rng, k, c);
            assert_eq!(a.mul(&b).unwrap(), naive_mul(&a, &b));
        }
    }

    #[test]
    fn rank_basics() {
        assert_eq!(BitMatrix::identity(5).rank(), 5);
        assert_eq!(BitMatrix::zeros(4, 7).rank(), 0);
        assert_eq!(BitMatrix::from_strs(&["110", "011", "101"]).rank(), 2);
    }

    #[test]
    fn rank_matches_naive_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (r, c) = (rng.random_range(1..90), rng.random_range(1..90));
            let mut m = random_matrix(&mut rng, r, c);
            // force some dependencies
            if r > 2 {
                let mut sum = m.row(0);
                sum ^= &m.row(1);
                m.set_row(r - 1, &sum);
            }
            assert_eq!(m.rank(), naive_rank(&m));
        }
    }

    #[test]
    fn invert_identity_and_permutation() {
        assert_eq!(BitMatrix::identity(4).invert().unwrap(), BitMatrix::identity(4));
        let perm = [2usize, 0, 3, 1];
        let p = BitMatrix::from_fn(4, 4, |r, c| perm[r] == c);
        assert_eq!(p.invert().unwrap(), p.transpose());
    }

    #[test]
    fn invert_random_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let a = random_invertible(&mut rng, 64);
        let inv = a.invert().unwrap();
        assert!(a.mul(&inv).unwrap().is_identity());
        assert!(inv.mul(&a).unwrap().is_identity());
    }

    #[test]
    fn invert_reports_rank_deficiency() {
        let m = BitMatrix::from_strs(&["110", "011", "101"]);
        assert_eq!(m.invert().unwrap_err(), Gf2Error::Singular { rank: 2, size: 3 });
    }

    #[test]
    fn kernel_basis_examples() {
        assert_eq!(BitMatrix::identity(3).kernel_basis().rows(), 0);
        let a = BitMatrix::from_strs(&["110"]);
        let k = a.kernel_basis();
        assert_eq!(k.rows(), 2);
        assert_eq!(k.rank(), 2);
        for r in 0..k.rows() {
            assert!(!k.row(r).dot(&a.row(0)));
        }
    }

    #[test]
    fn complete_basis_examples() {
        let k = BitMatrix::from_strs(&["110", "011"]);
        let s = BitMatrix::from_strs(&["101"]);
        let e = complete_basis(&s, &k).unwrap();
        assert_eq!(e, BitMatrix::from_strs(&["110"]));

        let e = complete_basis(&k, &k).unwrap();
        assert_eq!(e.rows(), 0);

        let e = complete_basis(&BitMatrix::zeros(0, 3), &BitMatrix::identity(3)).unwrap();
        assert_eq!(e, BitMatrix::identity(3));
    }

    #[test]
    fn complete_basis_errors() {
        let k = BitMatrix::from_strs(&["110", "011"]);
        let outside = BitMatrix::from_strs(&["100"]);
        assert_eq!(
            complete_basis(&outside, &k).unwrap_err(),
            Gf2Error::NotContained { row: 0 }
        );
        let repeated = BitMatrix::from_strs(&["110", "110"]);
        assert_eq!(
            complete_basis(&repeated, &k).unwrap_err(),
            Gf2Error::DependentRows { row: 1 }
        );
    }

    #[test]
    fn normalize_zero_and_identity() {
        let n = normalize_product(&BitMatrix::zeros(3, 4), 3, 4).unwrap();
        assert_eq!(n.c, 0);
        assert!(n.t1.is_identity() && n.t2.is_identity());

        let n = normalize_product(&BitMatrix::identity(5), 5, 5).unwrap();
        assert_eq!(n.c, 5);
        let normal =
            n.t1.mul(&BitMatrix::identity(5))
                .unwrap()
                .mul(&n.t2.transpose())
                .unwrap();
        assert_eq!(normal, corner_identity(5, 5, 5));
    }

    #[test]
    fn normalize_rejects_wrong_shape() {
        assert!(normalize_product(&BitMatrix::zeros(3, 4), 4, 3).is_err());
    }

    fn check_normal_form(m: &BitMatrix) {
        let (r1, r2) = m.shape();
        let n = normalize_product(m, r1, r2).unwrap();
        assert_eq!(n.c, naive_rank(m));
        assert_eq!(n.t1.rank(), r1);
        assert_eq!(n.t2.rank(), r2);
        let normal = n.t1.mul(m).unwrap().mul(&n.t2.transpose()).unwrap();
        assert_eq!(normal, corner_identity(r1, r2, n.c));
    }

    #[test]
    fn normalize_random_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = rng.random_range(5..60);
            let (r1, r2) = (rng.random_range(1..30), rng.random_range(1..30));
            let h1 = random_matrix(&mut rng, r1, n);
            let h2 = random_matrix(&mut rng, r2, n);
            check_normal_form(&h1.mul(&h2.transpose()).unwrap());
        }
    }

    #[test]
    fn bytes_and_display_round_trip() {
        let v = BitVector::from_indices(13, [0, 5, 12]);
        assert_eq!(v.to_string(), "1000010000001");
        assert_eq!(BitVector::from_bytes(13, &v.to_bytes()), v);
        assert_eq!(
            v.concat(&BitVector::from_indices(2, [1])).to_string(),
            "100001000000101"
        );
        assert_eq!(v.slice(4, 7).to_string(), "010");
    }

    #[test]
    #[should_panic(expected = "different lengths")]
    fn xor_requires_equal_lengths() {
        let mut a = BitVector::zeros(3);
        a ^= &BitVector::zeros(4);
    }

    fn arb_matrix(max: usize) -> impl Strategy<Value = BitMatrix> {
        (1..max, 1..max).prop_flat_map(|(r, c)| {
            proptest::collection::vec(any::<bool>(), r * c)
                .prop_map(move |bits| BitMatrix::from_fn(r, c, |i, j| bits[i * c + j]))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transpose_is_involution(m in arb_matrix(150)) {
            prop_assert_eq!(m.transpose().transpose(), m);
        }

        #[test]
        fn rank_of_transpose(m in arb_matrix(200)) {
            prop_assert_eq!(m.rank(), m.transpose().rank());
        }

        #[test]
        fn product_laws(seed in any::<u64>(), a in 1usize..40, b in 1usize..40, c in 1usize..40, d in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, a, b);
            let y = random_matrix(&mut rng, b, c);
            let z = random_matrix(&mut rng, c, d);
            prop_assert_eq!(x.mul(&y).unwrap().mul(&z).unwrap(), x.mul(&y.mul(&z).unwrap()).unwrap());
            prop_assert_eq!(x.mul(&y).unwrap().transpose(), y.transpose().mul(&x.transpose()).unwrap());
        }

        #[test]
        fn invert_is_two_sided(seed in any::<u64>(), n in 1usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, n, n);
            if let Ok(inv) = m.invert() {
                prop_assert!(inv.mul(&m).unwrap().is_identity());
            } else {
                prop_assert!(m.rank() < n);
            }
        }

        #[test]
        fn kernel_is_annihilated(m in arb_matrix(100)) {
            let k = m.kernel_basis();
            prop_assert_eq!(k.rows(), m.cols() - m.rank());
            prop_assert_eq!(k.rank(), k.rows());
            prop_assert!(m.mul(&k.transpose()).unwrap().is_zero());
        }

        #[test]
        fn completion_spans_target(seed in any::<u64>(), rows in 1usize..40, cols in 1usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = random_matrix(&mut rng, rows, cols);
            // start from an independent subset of combinations of target rows
            let mixed = random_matrix(&mut rng, rows / 2 + 1, rows).mul(&target).unwrap();
            let mut basis = RowBasis::new(cols);
            let keep: Vec<usize> = (0..mixed.rows()).filter(|&r| basis.insert(mixed.row_words(r)) == Insertion::Added).collect();
            let start = mixed.select_rows(&keep);
            let e = complete_basis(&start, &target).unwrap();
            prop_assert_eq!(e.rows() + start.rows(), target.rank());
            prop_assert_eq!(BitMatrix::vstack(&[&start, &e]).unwrap().rank(), target.rank());
        }

        #[test]
        fn normal_form_holds(seed in any::<u64>(), r1 in 1usize..40, r2 in 1usize..40, n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h1 = random_matrix(&mut rng, r1, n);
            let h2 = random_matrix(&mut rng, r2, n);
            check_normal_form(&h1.mul(&h2.transpose()).unwrap());
        }
    }
}
