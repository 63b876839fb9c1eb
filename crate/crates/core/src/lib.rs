//! Finite-geometry LDPC codes for entanglement-assisted quantum key expansion.
//!
//! - [`gf2`]: packed dense linear algebra over GF(2)
//! - [`fingeom`]: Euclidean and projective geometry LDPC matrices, with splitting
//! - [`eaqecc`]: the entanglement-assisted CSS construction built from a pair of parity checks
//! - [`spa`]: syndrome-based sum-product decoding
//! - [`protocol`]: the original and improved key-expansion post-processing and its rate formulas
//! - [`sim`]: Monte Carlo rate estimation, code tables and CSV output

pub mod eaqecc;
pub mod fingeom;
pub mod gf2;
pub mod protocol;
pub mod sim;
pub mod spa;

pub use eaqecc::{load_bundle, nominal_params, save_bundle, CodeError, CodeParams, EaCssCode, VerifyReport};
pub use fingeom::{build_field, build_parity_check, split, CodeSpec, Family, FieldTable, ParityCheck};
pub use gf2::{complete_basis, normalize_product, BitMatrix, BitVector, Gf2Error};
pub use spa::{decode_syndrome, DecodeResult, Decoder, TannerGraph};
