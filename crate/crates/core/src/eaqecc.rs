//! Entanglement-assisted CSS structure built from a pair of classical parity checks.
//!
//! Finite-geometry matrices have many redundant rows. All of the algebra here
//! runs on an independent subset of rows (`reduced1`, `reduced2`), while the
//! original matrices are kept for the decoder together with the map that
//! expands a reduced syndrome back to the full one.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::fingeom::{CodeSpec, GeometryError, ParityCheck};
use crate::gf2::{
    complete_basis, corner_identity, normalize_product, BitMatrix, BitVector, Gf2Error, Insertion, RowBasis,
};

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("parity checks have different lengths: {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Algebra(#[from] Gf2Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A complete entanglement-assisted CSS code.
///
/// Row blocks of `n1` are `[h1p; e1; f1]`; `n2 = n1⁻ᵀ` splits into `[f2; e2; h2pp]`.
/// Every matrix on the augmented side has `n + c` columns, the last `c` of which
/// belong to the receiver's half of the shared ebits.
#[derive(Debug, Clone)]
pub struct EaCssCode {
    pub h1: ParityCheck,
    pub h2: ParityCheck,
    pub n: usize,
    pub m: usize,
    pub c: usize,
    /// Independent rows of `h1` (indices into the original matrix).
    pub rows1: Vec<usize>,
    pub rows2: Vec<usize>,
    pub reduced1: BitMatrix,
    pub reduced2: BitMatrix,
    /// `h1 = expand1 · reduced1`; lifts a reduced syndrome to the original checks.
    pub expand1: BitMatrix,
    pub t1: BitMatrix,
    pub t2: BitMatrix,
    pub t1_inv: BitMatrix,
    pub h1p: BitMatrix,
    pub h2p: BitMatrix,
    pub e1: BitMatrix,
    pub f1: BitMatrix,
    pub n1: BitMatrix,
    pub f2: BitMatrix,
    pub e2: BitMatrix,
    pub h2pp: BitMatrix,
}

/// Nominal code parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeParams {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    /// `(m - c) / n`, the key rate before any error-rate correction.
    pub r_net: f64,
}

/// Picks independent rows greedily in row order.
fn independent_rows(h: &BitMatrix) -> Vec<usize> {
    let mut basis = RowBasis::new(h.cols());
    (0..h.rows())
        .filter(|&r| basis.insert(h.row_words(r)) == Insertion::Added)
        .collect()
}

/// Coefficients expressing every row of `h` over the rows `selected`, as a
/// `h.rows() x selected.len()` matrix.
fn expansion_map(h: &BitMatrix, selected: &[usize]) -> BitMatrix {
    let (n, r) = (h.cols(), selected.len());
    let mut basis = RowBasis::with_pivot_limit(n + r, n);
    let tagged = |row: usize, tag: Option<usize>| {
        let mut v = h.row(row).concat(&BitVector::zeros(r));
        if let Some(t) = tag {
            v.set(n + t, true);
        }
        v
    };
    for (k, &row) in selected.iter().enumerate() {
        let added = basis.insert(tagged(row, Some(k)).words());
        debug_assert_eq!(added, Insertion::Added);
    }
    let mut map = BitMatrix::zeros(h.rows(), r);
    for row in 0..h.rows() {
        let mut v = tagged(row, None).words().to_vec();
        basis.reduce(&mut v);
        let residual = BitVector::from_words(n + r, v);
        for k in residual.iter_ones().filter(|&i| i >= n) {
            map.set(row, k - n, true);
        }
    }
    map
}

/// Code parameters from ranks alone, without building the encoding matrices.
pub fn nominal_params(h1: &BitMatrix, h2: &BitMatrix) -> Result<CodeParams, CodeError> {
    let n = h1.cols();
    if h2.cols() != n {
        return Err(CodeError::LengthMismatch(n, h2.cols()));
    }
    let reduced1 = h1.select_rows(&independent_rows(h1));
    let reduced2 = h2.select_rows(&independent_rows(h2));
    let c = reduced1.mul(&reduced2.transpose())?.rank();
    let m = n + c - reduced1.rows() - reduced2.rows();
    Ok(CodeParams {
        n,
        m,
        c,
        r_net: (m as f64 - c as f64) / n as f64,
    })
}

/// `(t · h | j)` where `j` puts an identity in the bottom `c` rows of `c` extra columns.
fn augment(t: &BitMatrix, h: &BitMatrix, c: usize) -> Result<BitMatrix, Gf2Error> {
    let left = t.mul(h)?;
    let r = left.rows();
    BitMatrix::hstack(&left, &corner_identity(r, c, c))
}

impl EaCssCode {
    /// Builds the code from two parity checks of equal length.
    pub fn build(h1: ParityCheck, h2: ParityCheck) -> Result<Self, CodeError> {
        let n = h1.n();
        if h2.n() != n {
            return Err(CodeError::LengthMismatch(n, h2.n()));
        }
        let rows1 = independent_rows(&h1.matrix);
        let rows2 = independent_rows(&h2.matrix);
        let reduced1 = h1.matrix.select_rows(&rows1);
        let reduced2 = h2.matrix.select_rows(&rows2);
        let (r1, r2) = (rows1.len(), rows2.len());
        let expand1 = expansion_map(&h1.matrix, &rows1);

        let product = reduced1.mul(&reduced2.transpose())?;
        let norm = normalize_product(&product, r1, r2)?;
        let c = norm.c;
        let t1_inv = norm.t1.invert()?;
        let h1p = augment(&norm.t1, &reduced1, c)?;
        let h2p = augment(&norm.t2, &reduced2, c)?;

        let kernel = h2p.kernel_basis();
        let e1 = complete_basis(&h1p, &kernel)?;
        let m = e1.rows();
        let upper = BitMatrix::vstack(&[&h1p, &e1])?;
        let f1 = complete_basis(&upper, &BitMatrix::identity(n + c))?;
        let n1 = BitMatrix::vstack(&[&upper, &f1])?;
        let n2 = n1.invert()?.transpose();
        let f2 = n2.row_block(0, r1);
        let e2 = n2.row_block(r1, r1 + m);
        let h2pp = n2.row_block(r1 + m, n + c);

        Ok(Self {
            h1,
            h2,
            n,
            m,
            c,
            rows1,
            rows2,
            reduced1,
            reduced2,
            expand1,
            t1: norm.t1,
            t2: norm.t2,
            t1_inv,
            h1p,
            h2p,
            e1,
            f1,
            n1,
            f2,
            e2,
            h2pp,
        })
    }

    /// The self-paired code `H1 = H2 = h`.
    pub fn self_paired(h: ParityCheck) -> Result<Self, CodeError> {
        Self::build(h.clone(), h)
    }

    pub fn params(&self) -> CodeParams {
        CodeParams {
            n: self.n,
            m: self.m,
            c: self.c,
            r_net: (self.m as f64 - self.c as f64) / self.n as f64,
        }
    }

    /// Number of independent rows of `h1`.
    pub fn r1(&self) -> usize {
        self.rows1.len()
    }

    pub fn r2(&self) -> usize {
        self.rows2.len()
    }

    /// Lifts a syndrome of `reduced1` to the original checks of `h1`.
    pub fn expand_syndrome(&self, reduced: &BitVector) -> BitVector {
        self.expand1
            .mul_vec(reduced)
            .expect("syndrome length matches reduced rows")
    }

    /// Runs every algebraic check; failures are report entries, not errors.
    pub fn verify(&self) -> VerifyReport {
        let mut report = VerifyReport::default();
        let (n, c, m, r1, r2) = (self.n, self.c, self.m, self.r1(), self.r2());
        let w = n + c;
        let dims = [
            ("h1p", self.h1p.shape(), (r1, w)),
            ("h2p", self.h2p.shape(), (r2, w)),
            ("e1", self.e1.shape(), (m, w)),
            ("f1", self.f1.shape(), (r2, w)),
            ("f2", self.f2.shape(), (r1, w)),
            ("e2", self.e2.shape(), (m, w)),
            ("h2pp", self.h2pp.shape(), (r2, w)),
            ("n1", self.n1.shape(), (w, w)),
        ];
        let bad: Vec<String> = dims
            .iter()
            .filter(|(_, got, want)| got != want)
            .map(|(name, got, want)| format!("{name} is {got:?}, expected {want:?}"))
            .collect();
        report.push("block dimensions", bad.is_empty(), bad.join("; "));
        if !bad.is_empty() {
            return report;
        }

        let normal = self
            .t1
            .mul(&self.reduced1)
            .and_then(|a| a.mul(&self.reduced2.transpose()))
            .and_then(|a| a.mul(&self.t2.transpose()));
        report.push(
            "T1·H1·H2ᵀ·T2ᵀ has the corner identity form",
            normal.is_ok_and(|x| x == corner_identity(r1, r2, c)),
            String::new(),
        );

        let cross = self.h1p.mul(&self.h2p.transpose()).expect("shapes checked");
        report.push(
            "H1'·H2'ᵀ = 0",
            cross.is_zero(),
            format!("{} nonzero entries", cross.count_ones()),
        );

        let n2 = BitMatrix::vstack(&[&self.f2, &self.e2, &self.h2pp]).expect("shapes checked");
        let duality = self.n1.mul(&n2.transpose()).expect("shapes checked");
        report.push("N1·N2ᵀ = I", duality.is_identity(), String::new());

        let rank = self.n1.rank();
        report.push("N1 full rank", rank == w, format!("rank {rank} of {w}"));

        let kernel_dim = w - self.h2p.rank();
        let upper = BitMatrix::vstack(&[&self.h1p, &self.e1]).expect("shapes checked");
        let upper_rank = upper.rank();
        let inside = self.h2p.mul(&upper.transpose()).expect("shapes checked").is_zero();
        report.push(
            "rows of H1' and E1 form a basis of ker H2'",
            inside && upper_rank == kernel_dim,
            format!("rank {upper_rank}, kernel dimension {kernel_dim}, contained {inside}"),
        );

        let rank_pp = self.h2pp.rank();
        let rank_p = self.h2p.rank();
        let joint = BitMatrix::vstack(&[&self.h2pp, &self.h2p])
            .expect("shapes checked")
            .rank();
        report.push(
            "rowspace H2'' = rowspace H2'",
            rank_pp == rank_p && joint == rank_p,
            format!("ranks {rank_pp}, {rank_p}, joint {joint}"),
        );

        let lifted = self.expand1.mul(&self.reduced1).expect("shapes checked");
        report.push(
            "syndrome expansion reproduces H1",
            lifted == self.h1.matrix,
            String::new(),
        );
        report
    }
}

/// One line of a [`VerifyReport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name, passed, detail });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            write!(f, "{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name)?;
            if !c.detail.is_empty() {
                write!(f, " ({})", c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Writes a dense matrix: an ASCII header line `rows cols`, then each row as
/// `ceil(cols / 8)` bytes, bit `j` of a row in bit `j % 8` of byte `j / 8`.
pub fn write_dense<W: Write>(m: &BitMatrix, mut out: W) -> io::Result<()> {
    writeln!(out, "{} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        out.write_all(&m.row(r).to_bytes())?;
    }
    out.flush()
}

pub fn read_dense<R: BufRead>(mut input: R) -> Result<BitMatrix, CodeError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| CodeError::Bundle(format!("bad dense header {header:?}")))
        })
        .collect::<Result<_, _>>()?;
    let [rows, cols] = dims[..] else {
        return Err(CodeError::Bundle(format!("bad dense header {header:?}")));
    };
    let stride = cols.div_ceil(8);
    let mut buf = vec![0u8; stride];
    let mut m = BitMatrix::zeros(rows, cols);
    for r in 0..rows {
        input.read_exact(&mut buf)?;
        m.set_row(r, &BitVector::from_bytes(cols, &buf));
    }
    Ok(m)
}

const MANIFEST: &str = "manifest.txt";

/// Saves the code as a directory: `h1.alist`, `h2.alist`, `t1.bin`, `h1p.bin`,
/// `e1.bin` and a `key = value` manifest.
pub fn save_bundle(code: &EaCssCode, dir: &Path) -> Result<(), CodeError> {
    fs::create_dir_all(dir)?;
    code.h1
        .write_alist(BufWriter::new(fs::File::create(dir.join("h1.alist"))?))?;
    code.h2
        .write_alist(BufWriter::new(fs::File::create(dir.join("h2.alist"))?))?;
    for (name, m) in [("t1.bin", &code.t1), ("h1p.bin", &code.h1p), ("e1.bin", &code.e1)] {
        write_dense(m, BufWriter::new(fs::File::create(dir.join(name))?))?;
    }
    let p = code.params();
    let manifest = format!(
        "n = {}\nm = {}\nc = {}\nr_net = {:.4}\nh1 = {}\nh2 = {}\n",
        p.n, p.m, p.c, p.r_net, code.h1.spec, code.h2.spec
    );
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn manifest_value<'a>(text: &'a str, key: &str) -> Result<&'a str, CodeError> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
        .ok_or_else(|| CodeError::Bundle(format!("manifest has no {key}")))
}

/// Loads a bundle by rebuilding the code from its parity checks, and checks the
/// stored matrices and parameters against the rebuilt ones.
pub fn load_bundle(dir: &Path) -> Result<EaCssCode, CodeError> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let spec = |key| -> Result<CodeSpec, CodeError> { Ok(manifest_value(&manifest, key)?.parse()?) };
    let open =
        |name: &str| -> Result<BufReader<fs::File>, CodeError> { Ok(BufReader::new(fs::File::open(dir.join(name))?)) };
    let h1 = ParityCheck::read_alist(open("h1.alist")?, spec("h1")?)?;
    let h2 = ParityCheck::read_alist(open("h2.alist")?, spec("h2")?)?;
    let code = EaCssCode::build(h1, h2)?;
    for (key, value) in [("n", code.n), ("m", code.m), ("c", code.c)] {
        let stored: usize = manifest_value(&manifest, key)?
            .parse()
            .map_err(|_| CodeError::Bundle(format!("bad manifest value for {key}")))?;
        if stored != value {
            return Err(CodeError::Bundle(format!("manifest {key} = {stored}, rebuilt {value}")));
        }
    }
    for (name, m) in [("t1.bin", &code.t1), ("h1p.bin", &code.h1p), ("e1.bin", &code.e1)] {
        if read_dense(open(name)?)? != *m {
            return Err(CodeError::Bundle(format!("{name} differs from the rebuilt code")));
        }
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingeom::{build_parity_check, Family};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code(family: Family, s: u32) -> EaCssCode {
        let h = build_parity_check(&CodeSpec::new(family, 2, s)).unwrap();
        EaCssCode::self_paired(h).unwrap()
    }

    #[test]
    fn small_pg_codes() {
        // self-paired PG planes need a single ebit
        for (s, n, m) in [(2, 21, 2), (3, 73, 18)] {
            let code = code(Family::Pg1, s);
            let p = code.params();
            assert_eq!((p.n, p.m, p.c), (n, m, 1));
            assert!(code.verify().all_passed(), "{}", code.verify());
        }
    }

    #[test]
    fn parameters_follow_ranks() {
        let code = code(Family::Eg1, 3);
        let rank = code.h1.matrix.rank();
        let c = code.h1.matrix.mul(&code.h2.matrix.transpose()).unwrap().rank();
        assert_eq!(code.c, c);
        assert_eq!(code.m, code.n + c - 2 * rank);
        assert!(code.verify().all_passed());
        assert_eq!(nominal_params(&code.h1.matrix, &code.h2.matrix).unwrap(), code.params());
    }

    #[test]
    fn zeroed_e1_row_fails_basis_check() {
        let mut code = code(Family::Pg1, 3);
        code.e1.set_row(0, &BitVector::zeros(code.n + code.c));
        let report = code.verify();
        assert!(!report.all_passed());
        assert!(!report.get("rows of H1' and E1 form a basis of ker H2'").unwrap().passed);
    }

    #[test]
    fn mismatched_lengths() {
        let a = build_parity_check(&CodeSpec::new(Family::Pg1, 2, 2)).unwrap();
        let b = build_parity_check(&CodeSpec::new(Family::Eg1, 2, 2)).unwrap();
        assert!(matches!(EaCssCode::build(a, b), Err(CodeError::LengthMismatch(21, 15))));
    }

    #[test]
    fn zero_padding_adds_nothing() {
        let code = code(Family::Pg1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let e = BitVector::from_bits((0..code.n).map(|_| rng.random_bool(0.1)));
            let padded = e.concat(&BitVector::zeros(code.c));
            let lhs = code.h1p.mul_vec(&padded).unwrap();
            let rhs = code.t1.mul_vec(&code.reduced1.mul_vec(&e).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
            let full = code.h1.matrix.mul_vec(&e).unwrap();
            assert_eq!(code.expand_syndrome(&code.t1_inv.mul_vec(&lhs).unwrap()), full);
        }
    }

    #[test]
    fn dense_round_trip() {
        let m = BitMatrix::from_strs(&["1011001", "0000000", "1111111"]);
        let mut buf = Vec::new();
        write_dense(&m, &mut buf).unwrap();
        assert_eq!(read_dense(&buf[..]).unwrap(), m);
        assert!(read_dense(&b"3\n"[..]).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = std::env::temp_dir().join(format!("qke-bundle-{}", std::process::id()));
        let code = code(Family::Pg1, 2);
        save_bundle(&code, &dir).unwrap();
        let back = load_bundle(&dir).unwrap();
        assert_eq!(back.params(), code.params());
        assert_eq!(back.e1, code.e1);
        let mut text = fs::read_to_string(dir.join(MANIFEST)).unwrap();
        text = text.replace("m = 2", "m = 3");
        fs::write(dir.join(MANIFEST), text).unwrap();
        assert!(load_bundle(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
