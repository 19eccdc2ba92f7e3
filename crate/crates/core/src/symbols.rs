//! Bounded matrix-valued symbols on the ball: the test catalog, pointwise
//! algebra, and Möbius composition.
//!
//! A symbol is an essentially bounded map `u : B^n -> C^(d x d)` carrying a
//! declared sup bound `sup_z ||u(z)||_op <= sup_bound`. Constructors produce
//! honest bounds for the catalog families; consumers spot-check the bound
//! opportunistically wherever they evaluate the symbol anyway.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{moebius, BallPoint, SpaceParams};

type EvalFn = dyn Fn(&BallPoint) -> DMatrix<Complex64> + Send + Sync;

/// A bounded matrix symbol with a declared operator-norm sup bound.
#[derive(Clone)]
pub struct MatrixSymbol {
    label: String,
    n: usize,
    d: usize,
    sup_bound: f64,
    radial: bool,
    /// Largest angular frequency the symbol excites (`None` when unbounded
    /// or unknown, as after Möbius composition); drives aliasing budgets.
    angular_degree: Option<usize>,
    /// Suggested angular sample count when the spectrum is unbounded;
    /// Möbius composition sets it from the pole sharpness at `z`.
    angular_hint: Option<usize>,
    /// Radius of a circle `|w| = r` where radial smoothness may fail
    /// (``0`` marks a point singularity at the origin). Assembly splits
    /// its radial panels there; Möbius composition moves an origin kink
    /// to the circle through the composition point.
    radial_kink: Option<f64>,
    eval: Arc<EvalFn>,
}

impl fmt::Debug for MatrixSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixSymbol")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("sup_bound", &self.sup_bound)
            .field("radial", &self.radial)
            .field("angular_degree", &self.angular_degree)
            .finish_non_exhaustive()
    }
}

/// One monomial term `coeff * w^a conj(w)^b |w|^(2c)` of a polynomial
/// symbol.
#[derive(Debug, Clone)]
pub struct PolyTerm {
    /// Holomorphic exponents `a` (one entry per variable).
    pub w_pow: [usize; 2],
    /// Antiholomorphic exponents `b`.
    pub w_conj_pow: [usize; 2],
    /// Power of `|w|^2`.
    pub abs_sq_pow: usize,
    /// Matrix coefficient.
    pub coeff: DMatrix<Complex64>,
}

fn operator_norm(a: &DMatrix<Complex64>) -> f64 {
    a.clone().singular_values().max()
}

impl MatrixSymbol {
    /// The constant symbol `u = a`.
    pub fn constant(params: &SpaceParams, a: DMatrix<Complex64>) -> Result<Self> {
        check_square(params, &a)?;
        let bound = operator_norm(&a);
        Ok(Self {
            label: "constant".into(),
            n: params.n,
            d: params.d,
            sup_bound: bound,
            radial: true,
            angular_degree: Some(0),
            angular_hint: None,
            radial_kink: None,
            eval: Arc::new(move |_| a.clone()),
        })
    }

    /// The identity symbol `u = I_d`.
    pub fn identity(params: &SpaceParams) -> Self {
        let d = params.d;
        Self {
            label: "identity".into(),
            n: params.n,
            d,
            sup_bound: 1.0,
            radial: true,
            angular_degree: Some(0),
            angular_hint: None,
            radial_kink: None,
            eval: Arc::new(move |_| DMatrix::identity(d, d)),
        }
    }

    /// A matrix polynomial in `w`, `conj(w)`, and `|w|^2`.
    pub fn polynomial(params: &SpaceParams, terms: Vec<PolyTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(CoreError::InvalidExpression(
                "polynomial symbol needs at least one term".into(),
            ));
        }
        for t in &terms {
            check_square(params, &t.coeff)?;
            if params.n == 1 && (t.w_pow[1] != 0 || t.w_conj_pow[1] != 0) {
                return Err(CoreError::InvalidExpression(
                    "second-variable exponents in a one-variable symbol".into(),
                ));
            }
        }
        // Each monomial has modulus at most one on the ball, so the term
        // norms sum to a valid (if lossy) sup bound.
        let bound: f64 = terms.iter().map(|t| operator_norm(&t.coeff)).sum();
        let radial = terms.iter().all(|t| t.w_pow == t.w_conj_pow);
        let angular = terms
            .iter()
            .map(|t| {
                let a = t.w_pow[0] + t.w_pow[1];
                let b = t.w_conj_pow[0] + t.w_conj_pow[1];
                a.max(b)
            })
            .max();
        let n = params.n;
        let d = params.d;
        Ok(Self {
            label: "polynomial".into(),
            n,
            d,
            sup_bound: bound,
            radial,
            angular_degree: angular,
            angular_hint: None,
            radial_kink: None,
            eval: Arc::new(move |w: &BallPoint| {
                let mut out = DMatrix::zeros(d, d);
                for t in &terms {
                    let mut scalar = Complex64::new(w.norm_sqr().powi(t.abs_sq_pow as i32), 0.0);
                    for i in 0..n {
                        scalar *= w.coords()[i].powu(t.w_pow[i] as u32);
                        scalar *= w.coords()[i].conj().powu(t.w_conj_pow[i] as u32);
                    }
                    out += &t.coeff * scalar;
                }
                out
            }),
        })
    }

    /// The boundary-vanishing symbol `(1 - |w|^2)^exponent * a`,
    /// `exponent > 0`.
    pub fn boundary_vanishing(
        params: &SpaceParams,
        exponent: f64,
        a: DMatrix<Complex64>,
    ) -> Result<Self> {
        check_square(params, &a)?;
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(CoreError::InvalidParams(format!(
                "boundary-vanishing exponent must be positive, got {exponent}"
            )));
        }
        let bound = operator_norm(&a);
        Ok(Self {
            label: format!("boundary-vanishing({exponent})"),
            n: params.n,
            d: params.d,
            sup_bound: bound,
            radial: true,
            angular_degree: Some(0),
            angular_hint: None,
            radial_kink: None,
            eval: Arc::new(move |w: &BallPoint| {
                &a * Complex64::new((1.0 - w.norm_sqr()).powf(exponent), 0.0)
            }),
        })
    }

    /// The rotation symbol `a * (w/|w|)^frequency` (one variable only);
    /// constant in the radius, a pure angular frequency.
    pub fn rotation(params: &SpaceParams, frequency: i64, a: DMatrix<Complex64>) -> Result<Self> {
        check_square(params, &a)?;
        if params.n != 1 {
            return Err(CoreError::UnsupportedDimension(params.n));
        }
        let bound = operator_norm(&a);
        Ok(Self {
            label: format!("rotation({frequency})"),
            n: 1,
            d: params.d,
            sup_bound: bound,
            radial: frequency == 0,
            angular_degree: Some(frequency.unsigned_abs() as usize),
            angular_hint: None,
            radial_kink: if frequency == 0 { None } else { Some(0.0) },
            eval: Arc::new(move |w: &BallPoint| {
                let z = w.coords()[0];
                let phase = if z.norm() == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    (z / z.norm()).powi(frequency as i32)
                };
                &a * phase
            }),
        })
    }

    /// Ambient complex dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Matrix size `d`.
    pub fn matrix_dim(&self) -> usize {
        self.d
    }

    /// Declared bound on `sup_w ||u(w)||_op`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    /// Whether the symbol depends on `w` through `|w|` alone (one
    /// variable) or matched holomorphic/antiholomorphic powers (two).
    pub fn is_radial(&self) -> bool {
        self.radial
    }

    /// Largest angular frequency excited, when known.
    pub fn angular_degree(&self) -> Option<usize> {
        self.angular_degree
    }

    /// Suggested angular sample count for unbounded spectra.
    pub fn angular_hint(&self) -> Option<usize> {
        self.angular_hint
    }

    /// Radius of a circle where radial smoothness may fail, when known
    /// (``0`` marks a point singularity at the origin).
    pub fn radial_kink(&self) -> Option<f64> {
        self.radial_kink
    }

    /// Wraps a custom evaluator with caller-declared metadata; the sup
    /// bound is trusted here and checked opportunistically downstream.
    pub fn from_evaluator(
        params: &SpaceParams,
        label: impl Into<String>,
        sup_bound: f64,
        radial: bool,
        angular_degree: Option<usize>,
        eval: impl Fn(&BallPoint) -> DMatrix<Complex64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            n: params.n,
            d: params.d,
            sup_bound,
            radial,
            angular_degree,
            angular_hint: None,
            radial_kink: None,
            eval: Arc::new(eval),
        }
    }

    /// Descriptive label for logs and reports.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Pointwise value `u(w)`.
    pub fn evaluate(&self, w: &BallPoint) -> DMatrix<Complex64> {
        (self.eval)(w)
    }

    /// The composed symbol `u ∘ phi_z`; the sup bound survives because
    /// the automorphism maps the ball onto itself.
    pub fn compose_moebius(&self, z: &BallPoint) -> Result<Self> {
        if z.dim() != self.n {
            return Err(CoreError::DimensionMismatch {
                expected: self.n,
                got: z.dim(),
            });
        }
        let base = self.clone();
        let at = *z;
        let trivial = z.norm_sqr() == 0.0;
        Ok(Self {
            label: format!("compose({}, phi)", self.label),
            n: self.n,
            d: self.d,
            sup_bound: self.sup_bound,
            radial: self.radial && trivial,
            angular_degree: if trivial { self.angular_degree } else { None },
            angular_hint: if trivial {
                self.angular_hint
            } else {
                let needed = (64.0 / (1.0 - z.abs()).max(1e-4)).ceil() as usize;
                Some(needed.max(self.angular_hint.unwrap_or(0)))
            },
            // An origin kink moves to the circle through the composition
            // point; a kink on a positive-radius circle maps to an
            // off-center circle no single radius describes, so it is
            // dropped and left to raw resolution.
            radial_kink: match self.radial_kink {
                k if trivial => k,
                Some(s) if s == 0.0 => Some(z.abs()),
                _ => None,
            },
            eval: Arc::new(move |w: &BallPoint| {
                let mapped = moebius(&at, w)
                    .expect("automorphism keeps quadrature nodes inside the ball");
                base.evaluate(&mapped)
            }),
        })
    }

    /// The reflected symbol `w -> u(-w)`.
    pub fn reflected(&self) -> Self {
        let base = self.clone();
        Self {
            label: format!("reflect({})", self.label),
            eval: Arc::new(move |w: &BallPoint| base.evaluate(&w.negated())),
            ..self.clone()
        }
    }

    /// The pointwise adjoint `w -> u(w)^*`.
    pub fn adjoint(&self) -> Self {
        let base = self.clone();
        Self {
            label: format!("adjoint({})", self.label),
            eval: Arc::new(move |w: &BallPoint| base.evaluate(w).adjoint()),
            ..self.clone()
        }
    }

    /// The pointwise product `w -> u(w) v(w)`; sup bounds multiply.
    pub fn pointwise_product(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.d != other.d {
            return Err(CoreError::Incompatible(format!(
                "symbol shapes ({}, {}) vs ({}, {})",
                self.n, self.d, other.n, other.d
            )));
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Self {
            label: format!("product({}, {})", self.label, other.label),
            n: self.n,
            d: self.d,
            sup_bound: self.sup_bound * other.sup_bound,
            radial: self.radial && other.radial,
            angular_degree: match (self.angular_degree, other.angular_degree) {
                (Some(x), Some(y)) => Some(x + y),
                _ => None,
            },
            angular_hint: match (self.angular_hint, other.angular_hint) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (h, None) | (None, h) => h,
            },
            radial_kink: match (self.radial_kink, other.radial_kink) {
                (k, None) | (None, k) => k,
                (Some(x), Some(y)) if x == y => Some(x),
                // Two distinct kink circles cannot be marked with one
                // radius; fall back to raw resolution.
                _ => None,
            },
            eval: Arc::new(move |w: &BallPoint| a.evaluate(w) * b.evaluate(w)),
        })
    }
}

fn check_square(params: &SpaceParams, a: &DMatrix<Complex64>) -> Result<()> {
    if a.nrows() != params.d || a.ncols() != params.d {
        return Err(CoreError::DimensionMismatch {
            expected: params.d,
            got: a.nrows().max(a.ncols()),
        });
    }
    Ok(())
}

// ─── Serializable catalog descriptions ───

/// A complex matrix as nested `[re, im]` pairs, row-major.
pub type MatrixData = Vec<Vec<[f64; 2]>>;

/// One term of a serialized polynomial symbol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSpec {
    /// Holomorphic exponents, one per variable (missing = zero).
    #[serde(default)]
    pub w: Vec<usize>,
    /// Antiholomorphic exponents.
    #[serde(default)]
    pub w_conj: Vec<usize>,
    /// Power of `|w|^2`.
    #[serde(default)]
    pub abs_sq: usize,
    /// Matrix coefficient.
    pub matrix: MatrixData,
}

/// Serializable description of a catalog symbol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SymbolSpec {
    /// Constant matrix.
    Constant {
        /// The value.
        matrix: MatrixData,
    },
    /// The identity matrix.
    Identity,
    /// Polynomial in `w`, `conj(w)`, `|w|^2`.
    Polynomial {
        /// The terms, summed.
        terms: Vec<TermSpec>,
    },
    /// `(1 - |w|^2)^exponent * matrix`.
    BoundaryVanishing {
        /// Decay exponent, positive.
        exponent: f64,
        /// The matrix factor.
        matrix: MatrixData,
    },
    /// `matrix * (w/|w|)^frequency`, one variable.
    Rotation {
        /// Angular frequency.
        frequency: i64,
        /// The matrix factor.
        matrix: MatrixData,
    },
}

/// Decodes row-major `[re, im]` data into a `d x d` matrix.
pub fn matrix_from_data(d: usize, data: &MatrixData) -> Result<DMatrix<Complex64>> {
    if data.len() != d || data.iter().any(|row| row.len() != d) {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: data.len(),
        });
    }
    Ok(DMatrix::from_fn(d, d, |i, j| {
        Complex64::new(data[i][j][0], data[i][j][1])
    }))
}

/// Encodes a matrix as row-major `[re, im]` data.
pub fn matrix_to_data(a: &DMatrix<Complex64>) -> MatrixData {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect())
        .collect()
}

impl SymbolSpec {
    /// Instantiates the described symbol for the given parameters.
    ///
    /// # Errors
    /// Shape mismatches and invalid family parameters.
    pub fn build(&self, params: &SpaceParams) -> Result<MatrixSymbol> {
        match self {
            SymbolSpec::Constant { matrix } => {
                MatrixSymbol::constant(params, matrix_from_data(params.d, matrix)?)
            }
            SymbolSpec::Identity => Ok(MatrixSymbol::identity(params)),
            SymbolSpec::Polynomial { terms } => {
                let built = terms
                    .iter()
                    .map(|t| {
                        let mut w_pow = [0usize; 2];
                        let mut w_conj_pow = [0usize; 2];
                        if t.w.len() > 2 || t.w_conj.len() > 2 {
                            return Err(CoreError::InvalidExpression(
                                "at most two exponents per term".into(),
                            ));
                        }
                        w_pow[..t.w.len()].copy_from_slice(&t.w);
                        w_conj_pow[..t.w_conj.len()].copy_from_slice(&t.w_conj);
                        Ok(PolyTerm {
                            w_pow,
                            w_conj_pow,
                            abs_sq_pow: t.abs_sq,
                            coeff: matrix_from_data(params.d, &t.matrix)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                MatrixSymbol::polynomial(params, built)
            }
            SymbolSpec::BoundaryVanishing { exponent, matrix } => MatrixSymbol::boundary_vanishing(
                params,
                *exponent,
                matrix_from_data(params.d, matrix)?,
            ),
            SymbolSpec::Rotation { frequency, matrix } => {
                MatrixSymbol::rotation(params, *frequency, matrix_from_data(params.d, matrix)?)
            }
        }
    }
}
