//! Finite-dimensional models of vector-valued weighted Bergman spaces.
//!
//! The crate realizes the Hilbert space `A^2_alpha(B^n; C^d)` of C^d-valued
//! holomorphic functions on the unit ball that are square-integrable against
//! the normalized weight `(1 - |z|^2)^alpha`, truncated to polynomials of
//! total degree `<= N`. On top of that model it provides:
//!
//! * Möbius geometry of the ball ([`geometry`]),
//! * quadrature rules realizing the weighted measure ([`quadrature`]),
//! * the monomial orthonormal basis and reproducing kernels ([`basis`]),
//! * matrix symbols and their catalog ([`symbols`]),
//! * truncated Toeplitz operators and unitary conjugations ([`operators`]),
//! * matrix-valued Berezin transforms and boundary-decay profiles ([`berezin`]),
//! * compactness diagnostics: singular spectra, Hilbert–Schmidt norms,
//!   kernel truncations, Schur-test bounds, and a four-way boundary-decay
//!   equivalence suite ([`compactness`]).
//!
//! Everything is deterministic: random inputs are seeded, quadrature sums are
//! fixed-order, and parallel callers receive results collected by index.

pub mod basis;
pub mod berezin;
pub mod compactness;
pub mod error;
pub mod geometry;
pub mod operators;
pub mod quadrature;
pub mod symbols;

pub use error::{CoreError, Result};
pub use geometry::{BallPoint, SpaceParams};
