//! Finite-geometry LDPC parity-check matrices.
//!
//! Points of EG(p, 2^s) are the nonzero elements of GF(2^{ps}); point `α^i` is
//! column `i`. Points of PG(p, 2^s) are the classes `(α^i)` of nonzero elements
//! of GF(2^{(p+1)s}) modulo the subfield GF(2^s)*; class `(α^i)` is column `i`.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::gf2::BitMatrix;

/// Primitive polynomials for GF(2^m), m = 1..=24, as bit masks including x^m.
const PRIMITIVE_POLYS: [u32; 24] = [
    0x3,       // x + 1
    0x7,       // x^2 + x + 1
    0xB,       // x^3 + x + 1
    0x13,      // x^4 + x + 1
    0x25,      // x^5 + x^2 + 1
    0x43,      // x^6 + x + 1
    0x89,      // x^7 + x^3 + 1
    0x11D,     // x^8 + x^4 + x^3 + x^2 + 1
    0x211,     // x^9 + x^4 + 1
    0x409,     // x^10 + x^3 + 1
    0x805,     // x^11 + x^2 + 1
    0x1053,    // x^12 + x^6 + x^4 + x + 1
    0x201B,    // x^13 + x^4 + x^3 + x + 1
    0x4443,    // x^14 + x^10 + x^6 + x + 1
    0x8003,    // x^15 + x + 1
    0x1100B,   // x^16 + x^12 + x^3 + x + 1
    0x20009,   // x^17 + x^3 + 1
    0x40081,   // x^18 + x^7 + 1
    0x80027,   // x^19 + x^5 + x^2 + x + 1
    0x100009,  // x^20 + x^3 + 1
    0x200005,  // x^21 + x^2 + 1
    0x400003,  // x^22 + x + 1
    0x800021,  // x^23 + x^5 + 1
    0x1000087, // x^24 + x^7 + x^2 + x + 1
];

pub const MAX_FIELD_DEGREE: u32 = 24;

/// Largest parity-check matrix (in bits) that `build_parity_check` will allocate.
const MAX_MATRIX_BITS: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("field degree {0} is outside the supported range 1..={MAX_FIELD_DEGREE}")]
    UnsupportedDegree(u32),
    #[error("polynomial {poly:#x} is not primitive for degree {m}")]
    NotPrimitive { m: u32, poly: u32 },
    #[error("unsupported geometry: {0}")]
    Unsupported(String),
    #[error("{what} splitting factor {factor} outside 1..={max}")]
    SplitFactor {
        what: &'static str,
        factor: usize,
        max: usize,
    },
    #[error("malformed alist data: {0}")]
    Alist(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Exponent and logarithm tables of GF(2^m) for a fixed primitive element α.
#[derive(Debug, Clone)]
pub struct FieldTable {
    m: u32,
    primitive_poly: u32,
    /// `exp[i] = α^i` for `i` in `0..order`.
    exp: Vec<u32>,
    /// `log[x]` for nonzero `x`; `log[0]` is unused.
    log: Vec<u32>,
}

impl FieldTable {
    pub fn new(m: u32) -> Result<Self, GeometryError> {
        if !(1..=MAX_FIELD_DEGREE).contains(&m) {
            return Err(GeometryError::UnsupportedDegree(m));
        }
        Self::with_polynomial(m, PRIMITIVE_POLYS[m as usize - 1])
    }

    pub fn with_polynomial(m: u32, poly: u32) -> Result<Self, GeometryError> {
        if !(1..=MAX_FIELD_DEGREE).contains(&m) {
            return Err(GeometryError::UnsupportedDegree(m));
        }
        let size = 1usize << m;
        let order = size - 1;
        let mut exp = Vec::with_capacity(order);
        let mut log = vec![u32::MAX; size];
        let mut x: u32 = 1;
        for i in 0..order {
            if log[x as usize] != u32::MAX {
                return Err(GeometryError::NotPrimitive { m, poly });
            }
            exp.push(x);
            log[x as usize] = i as u32;
            // x <- x·α in polynomial basis
            x <<= 1;
            if x & (1 << m) != 0 {
                x ^= poly;
            }
        }
        if x != 1 {
            return Err(GeometryError::NotPrimitive { m, poly });
        }
        Ok(Self {
            m,
            primitive_poly: poly,
            exp,
            log,
        })
    }

    pub fn degree(&self) -> u32 {
        self.m
    }

    pub fn primitive_poly(&self) -> u32 {
        self.primitive_poly
    }

    /// Multiplicative order of α, `2^m - 1`.
    pub fn order(&self) -> usize {
        self.exp.len()
    }

    /// `α^i` for any exponent (reduced modulo the order).
    #[inline]
    pub fn exp(&self, i: usize) -> u32 {
        self.exp[i % self.exp.len()]
    }

    /// Discrete logarithm of a nonzero element.
    #[inline]
    pub fn log(&self, x: u32) -> usize {
        assert!(x != 0, "log of zero");
        self.log[x as usize] as usize
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp(self.log(a) + self.log(b))
        }
    }
}

/// Builds GF(2^m) from the embedded primitive polynomial of degree `m`.
pub fn build_field(m: u32) -> Result<FieldTable, GeometryError> {
    FieldTable::new(m)
}

/// Lines of EG(p, 2^s) not passing through the origin, each as sorted point indices.
///
/// Lines come in cyclic order: multiplication by `α` maps lines to lines, and
/// each orbit is emitted as `L, αL, α²L, ...` starting from its first member in
/// direction order (see [`eg_lines_by_direction`]). For p = 2 there is a single
/// orbit, so the incidence matrix is circulant.
pub fn enumerate_lines_eg(p: u32, s: u32) -> Result<Vec<Vec<usize>>, GeometryError> {
    let by_dir = eg_lines_by_direction(p, s)?;
    let order = (1usize << (p * s)) - 1;
    let mut emitted: HashSet<Vec<usize>> = HashSet::with_capacity(by_dir.len());
    let mut lines = Vec::with_capacity(by_dir.len());
    for start in by_dir {
        if emitted.contains(&start) {
            continue;
        }
        let mut line = start;
        loop {
            emitted.insert(line.clone());
            let mut next: Vec<usize> = line.iter().map(|&x| (x + 1) % order).collect();
            next.sort_unstable();
            lines.push(line);
            if emitted.contains(&next) {
                break;
            }
            line = next;
        }
    }
    Ok(lines)
}

/// EG lines ordered by direction `α^j` (j below `(2^{ps}-1)/(2^s-1)`, one
/// representative per one-dimensional subspace) and then by smallest point.
fn eg_lines_by_direction(p: u32, s: u32) -> Result<Vec<Vec<usize>>, GeometryError> {
    check_geometry(p, s)?;
    let field = build_field(p * s)?;
    let order = field.order();
    let q = 1usize << s;
    let step = order / (q - 1);
    let mut lines = Vec::new();
    let mut visited = vec![false; order];
    for dir in 0..step {
        visited.iter_mut().for_each(|v| *v = false);
        // nonzero multiples of the direction vector
        let span: Vec<u32> = (0..q - 1).map(|k| field.exp(dir + k * step)).collect();
        for a in 0..order {
            if visited[a] || a % step == dir {
                continue;
            }
            let base = field.exp(a);
            let mut line: Vec<usize> = std::iter::once(a)
                .chain(span.iter().map(|&t| field.log(base ^ t)))
                .collect();
            line.sort_unstable();
            for &pt in &line {
                visited[pt] = true;
            }
            lines.push(line);
        }
    }
    Ok(lines)
}

/// All lines of PG(p, 2^s), each as sorted point indices, in lexicographic order.
pub fn enumerate_lines_pg(p: u32, s: u32) -> Result<Vec<Vec<usize>>, GeometryError> {
    check_geometry(p, s)?;
    let field = build_field((p + 1) * s)?;
    let order = field.order();
    let q = 1usize << s;
    let n = order / (q - 1);
    // nonzero elements of the subfield GF(2^s): η^k with η = α^n
    let subfield: Vec<u32> = (0..q - 1).map(|k| field.exp(k * n)).collect();
    let mut covered = vec![false; n * n];
    let mut lines = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if covered[i * n + j] {
                continue;
            }
            let (ai, aj) = (field.exp(i), field.exp(j));
            let mut line: Vec<usize> = vec![i, j];
            line.extend(subfield.iter().map(|&t| field.log(aj ^ field.mul(t, ai)) % n));
            line.sort_unstable();
            line.dedup();
            debug_assert_eq!(line.len(), q + 1);
            for (x, &u) in line.iter().enumerate() {
                for &v in &line[x + 1..] {
                    covered[u * n + v] = true;
                }
            }
            lines.push(line);
        }
    }
    Ok(lines)
}

fn check_geometry(p: u32, s: u32) -> Result<(), GeometryError> {
    if p < 2 || s < 1 {
        return Err(GeometryError::Unsupported(format!(
            "need p >= 2 and s >= 1, got p = {p}, s = {s}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Eg1,
    Eg2,
    Pg1,
    Pg2,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Eg1 => "EG1",
            Family::Eg2 => "EG2",
            Family::Pg1 => "PG1",
            Family::Pg2 => "PG2",
        })
    }
}

impl FromStr for Family {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eg1" => Ok(Family::Eg1),
            "eg2" => Ok(Family::Eg2),
            "pg1" => Ok(Family::Pg1),
            "pg2" => Ok(Family::Pg2),
            other => Err(GeometryError::Unsupported(format!("unknown family {other:?}"))),
        }
    }
}

/// A finite-geometry code family member with its splitting factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeSpec {
    pub family: Family,
    pub p: u32,
    pub s: u32,
    pub c_sp: usize,
    pub r_sp: usize,
}

impl CodeSpec {
    pub fn new(family: Family, p: u32, s: u32) -> Self {
        Self {
            family,
            p,
            s,
            c_sp: 1,
            r_sp: 1,
        }
    }

    pub fn split(self, c_sp: usize, r_sp: usize) -> Self {
        Self { c_sp, r_sp, ..self }
    }
}

impl fmt::Display for CodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{},{},{})", self.family, self.p, self.s, self.c_sp, self.r_sp)
    }
}

impl FromStr for CodeSpec {
    type Err = GeometryError;

    /// Parses the `Display` form, e.g. `PG1(2,5,1,1)`; the splitting factors may be omitted.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::Unsupported(format!("cannot parse code spec {text:?}"));
        let (family, rest) = text.trim().split_once('(').ok_or_else(bad)?;
        let args: Vec<usize> = rest
            .trim_end_matches(')')
            .split(',')
            .map(|a| a.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (p, s, c_sp, r_sp) = match args[..] {
            [p, s] => (p, s, 1, 1),
            [p, s, c, r] => (p, s, c, r),
            _ => return Err(bad()),
        };
        Ok(CodeSpec {
            family: family.parse()?,
            p: u32::try_from(p).map_err(|_| bad())?,
            s: u32::try_from(s).map_err(|_| bad())?,
            c_sp,
            r_sp,
        })
    }
}

/// A parity-check matrix (rows are checks, columns are code bits) with its weights.
#[derive(Debug, Clone)]
pub struct ParityCheck {
    pub matrix: BitMatrix,
    pub spec: CodeSpec,
    pub row_weights: Vec<usize>,
    pub col_weights: Vec<usize>,
}

impl ParityCheck {
    pub fn new(matrix: BitMatrix, spec: CodeSpec) -> Self {
        Self {
            row_weights: matrix.row_weights(),
            col_weights: matrix.col_weights(),
            matrix,
            spec,
        }
    }

    /// Number of code bits.
    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn checks(&self) -> usize {
        self.matrix.rows()
    }

    pub fn max_row_weight(&self) -> usize {
        self.row_weights.iter().copied().max().unwrap_or(0)
    }

    pub fn max_col_weight(&self) -> usize {
        self.col_weights.iter().copied().max().unwrap_or(0)
    }

    /// Writes the matrix in alist format: column and row counts, maximum weights,
    /// per-column and per-row weights, then 1-based row indices of each column
    /// and column indices of each row.
    pub fn write_alist<W: Write>(&self, mut out: W) -> io::Result<()> {
        let transposed = self.matrix.transpose();
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "{} {}", self.n(), self.checks())?;
        writeln!(out, "{} {}", self.max_col_weight(), self.max_row_weight())?;
        writeln!(out, "{}", join(&mut self.col_weights.iter().copied()))?;
        writeln!(out, "{}", join(&mut self.row_weights.iter().copied()))?;
        for c in 0..self.n() {
            writeln!(out, "{}", join(&mut transposed.row_ones(c).map(|r| r + 1)))?;
        }
        for r in 0..self.checks() {
            writeln!(out, "{}", join(&mut self.matrix.row_ones(r).map(|c| c + 1)))?;
        }
        Ok(())
    }

    /// Reads alist data (zero padding in the index lists is accepted and skipped).
    /// Only the per-row lists are used to fill the matrix; the per-column lists
    /// are checked against them.
    pub fn read_alist<R: BufRead>(input: R, spec: CodeSpec) -> Result<Self, GeometryError> {
        let mut numbers = Vec::new();
        for line in input.lines() {
            for tok in line?.split_whitespace() {
                numbers.push(
                    tok.parse::<usize>()
                        .map_err(|_| GeometryError::Alist(format!("bad token {tok:?}")))?,
                );
            }
        }
        let mut it = numbers.into_iter();
        let mut next = |what: &str| {
            it.next()
                .ok_or_else(|| GeometryError::Alist(format!("truncated at {what}")))
        };
        let (n, m) = (next("n")?, next("m")?);
        // maximum weights are implied by the lists
        next("max column weight")?;
        next("max row weight")?;
        let col_w: Vec<usize> = (0..n).map(|_| next("column weights")).collect::<Result<_, _>>()?;
        let row_w: Vec<usize> = (0..m).map(|_| next("row weights")).collect::<Result<_, _>>()?;
        let mut by_col = BitMatrix::zeros(n, m);
        for (c, &w) in col_w.iter().enumerate() {
            // zeros padding a list up to the maximum weight are skipped
            let mut seen = 0;
            while seen < w {
                let r = next("column lists")?;
                if r == 0 {
                    continue;
                }
                if r > m {
                    return Err(GeometryError::Alist(format!("row index {r} out of range")));
                }
                by_col.set(c, r - 1, true);
                seen += 1;
            }
        }
        let mut matrix = BitMatrix::zeros(m, n);
        for (r, &w) in row_w.iter().enumerate() {
            let mut seen = 0;
            while seen < w {
                let c = next("row lists")?;
                if c == 0 {
                    continue;
                }
                if c > n {
                    return Err(GeometryError::Alist(format!("column index {c} out of range")));
                }
                matrix.set(r, c - 1, true);
                seen += 1;
            }
        }
        if matrix.transpose() != by_col {
            return Err(GeometryError::Alist("row and column lists disagree".into()));
        }
        Ok(ParityCheck::new(matrix, spec))
    }
}

fn incidence(lines: &[Vec<usize>], points: usize) -> BitMatrix {
    let mut m = BitMatrix::zeros(lines.len(), points);
    for (r, line) in lines.iter().enumerate() {
        for &pt in line {
            m.set(r, pt, true);
        }
    }
    m
}

/// Builds the parity-check matrix of `spec`: the unsplit family matrix followed by
/// column and row splitting when the factors exceed one.
pub fn build_parity_check(spec: &CodeSpec) -> Result<ParityCheck, GeometryError> {
    check_geometry(spec.p, spec.s)?;
    let degree = match spec.family {
        Family::Eg1 | Family::Eg2 => spec.p * spec.s,
        Family::Pg1 | Family::Pg2 => (spec.p + 1) * spec.s,
    };
    if degree > MAX_FIELD_DEGREE {
        return Err(GeometryError::UnsupportedDegree(degree));
    }
    let q = 1u64 << spec.s;
    let (points, lines_count) = match spec.family {
        Family::Eg1 | Family::Eg2 => {
            let n = (1u64 << degree) - 1;
            (n, ((1u64 << ((spec.p - 1) * spec.s)) - 1) * n / (q - 1))
        }
        Family::Pg1 | Family::Pg2 => {
            let n = ((1u64 << degree) - 1) / (q - 1);
            (n, n * (n - 1) / (q * (q + 1)))
        }
    };
    let bits = points * lines_count * (spec.c_sp as u64) * (spec.r_sp as u64);
    if bits > MAX_MATRIX_BITS {
        return Err(GeometryError::Unsupported(format!(
            "{spec} needs a {lines_count}x{points} base matrix, too large"
        )));
    }
    let (lines, points) = match spec.family {
        Family::Eg1 | Family::Eg2 => (enumerate_lines_eg(spec.p, spec.s)?, points as usize),
        Family::Pg1 | Family::Pg2 => (enumerate_lines_pg(spec.p, spec.s)?, points as usize),
    };
    let h1 = incidence(&lines, points);
    let base = match spec.family {
        Family::Eg1 | Family::Pg1 => h1,
        Family::Eg2 | Family::Pg2 => h1.transpose(),
    };
    let unsplit = ParityCheck::new(
        base,
        CodeSpec {
            c_sp: 1,
            r_sp: 1,
            ..*spec
        },
    );
    if spec.c_sp == 1 && spec.r_sp == 1 {
        Ok(unsplit)
    } else {
        split(&unsplit, spec.c_sp, spec.r_sp)
    }
}

/// Column splitting by `c_sp`, then row splitting by `r_sp`.
///
/// The ones of each original column, taken in increasing row order, are dealt
/// round-robin to its `c_sp` new columns (placed next to each other), so the
/// first `ρ_c mod c_sp` new columns get `⌊ρ_c/c_sp⌋ + 1` ones. Rows are then
/// split the same way in increasing column order.
pub fn split(h: &ParityCheck, c_sp: usize, r_sp: usize) -> Result<ParityCheck, GeometryError> {
    let rho_c = h.max_col_weight();
    if c_sp < 1 || c_sp > rho_c.max(1) {
        return Err(GeometryError::SplitFactor {
            what: "column",
            factor: c_sp,
            max: rho_c,
        });
    }
    let cols_split = split_columns(&h.matrix, c_sp);
    let rho_r = cols_split.row_weights().into_iter().max().unwrap_or(0);
    if r_sp < 1 || r_sp > rho_r.max(1) {
        return Err(GeometryError::SplitFactor {
            what: "row",
            factor: r_sp,
            max: rho_r,
        });
    }
    let matrix = split_columns(&cols_split.transpose(), r_sp).transpose();
    Ok(ParityCheck::new(
        matrix,
        CodeSpec {
            c_sp: h.spec.c_sp * c_sp,
            r_sp: h.spec.r_sp * r_sp,
            ..h.spec
        },
    ))
}

fn split_columns(m: &BitMatrix, factor: usize) -> BitMatrix {
    if factor == 1 {
        return m.clone();
    }
    let mut out = BitMatrix::zeros(m.rows(), m.cols() * factor);
    let mut dealt = vec![0usize; m.cols()];
    for r in 0..m.rows() {
        for c in m.row_ones(r) {
            out.set(r, c * factor + dealt[c] % factor, true);
            dealt[c] += 1;
        }
    }
    out
}
