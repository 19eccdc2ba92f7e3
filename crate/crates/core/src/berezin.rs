//! The matrix-valued Berezin transform, its Moebius covariance, and
//! boundary-decay profiling.
//!
//! The transform of an operator `T` at a point `z` is the `d x d` matrix
//! with entries `<T (k_z e_j), k_z e_i>`, where `k_z` is the normalized
//! reproducing-kernel section. Two routes are implemented:
//!
//! * the **kernel route** ([`berezin`]) pairs the truncated normalized
//!   kernel through the operator matrix; it carries the kernel-expansion
//!   tail and refuses points where that tail exceeds the basis gate;
//! * the **composition route** ([`berezin_composition`]) reads the same
//!   quantity off the constant-coefficient block of the conjugated
//!   operator, using `U_z(const e) = k_z e`. No kernel expansion enters,
//!   so it stays accurate arbitrarily close to the boundary; this is the
//!   route boundary profiles ride on.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::basis::{MultiIndex, TruncatedSpace};
use crate::error::{CoreError, Result};
use crate::geometry::{moebius, BallPoint};
use crate::operators::{
    apply_uz, conjugate_tz, evaluate_expression, OperatorExpression, Provenance,
    TruncatedOperator,
};

/// The transform value at one point, with the kernel-expansion tail that
/// was accepted when forming it.
#[derive(Debug, Clone)]
pub struct BerezinValue {
    matrix: DMatrix<Complex64>,
    z: BallPoint,
    tail_bound: f64,
}

impl BerezinValue {
    /// The `d x d` transform matrix.
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// The evaluation point.
    pub fn z(&self) -> &BallPoint {
        &self.z
    }

    /// Kernel-expansion truncation error carried from the basis.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Largest pairing over unit vectors: the spectral norm of the
    /// transform matrix.
    pub fn sup_pairing(&self) -> f64 {
        spectral_norm(&self.matrix)
    }
}

/// Spectral norm of a dense complex matrix.
pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Berezin transform of `t` at `z` through the kernel route: entry
/// `(i, j)` is `<T (k_z e_j), k_z e_i>` with the truncated normalized
/// kernel section. Exact for the identity (the section columns are
/// orthonormal) and for constant symbols.
///
/// # Errors
/// Tail gate: the kernel expansion at `z` must satisfy the basis tail
/// limit; dimension mismatches propagate.
pub fn berezin(t: &TruncatedOperator, z: &BallPoint) -> Result<BerezinValue> {
    let space = t.space();
    let kc = space.kernel_coefficients(z)?;
    let unit = kc.unit_coeffs();
    let v = kernel_section_columns(space, &unit);
    let matrix = v.adjoint() * (t.matrix() * &v);
    Ok(BerezinValue {
        matrix,
        z: z.clone(),
        tail_bound: kc.tail_bound,
    })
}

/// Columns `j = 0..d` holding the coefficients of `section e_j` for a
/// scalar coefficient vector `section`.
fn kernel_section_columns(space: &TruncatedSpace, scalar: &DVector<Complex64>) -> DMatrix<Complex64> {
    let d = space.params().d;
    let mut v = DMatrix::from_element(space.dim(), d, Complex64::new(0.0, 0.0));
    for s in 0..space.dim_scalar() {
        for j in 0..d {
            v[(space.flat_index(s, j), j)] = scalar[s];
        }
    }
    v
}

/// Berezin transform at `z` through the composition route: the constant
/// block of the factorwise-conjugated expression. Since
/// `U_z(const e) = k_z e`, the entry `<T_z(const e_j), const e_i>` equals
/// `<T(k_z e_j), k_z e_i>` with the full (untruncated) kernel section, so
/// no tail gate applies; accuracy is set by the assembly quadrature.
///
/// # Errors
/// Assembly errors propagate.
pub fn berezin_composition(
    space: &Arc<TruncatedSpace>,
    expr: &OperatorExpression,
    z: &BallPoint,
) -> Result<DMatrix<Complex64>> {
    let conjugated = evaluate_expression(space, &expr.compose_moebius(z)?)?;
    Ok(constant_block(space, conjugated.matrix()))
}

/// Top-left `d x d` block: rows/columns of the constant basis section
/// (scalar index zero occupies flat indices `0..d`).
pub(crate) fn constant_block(space: &TruncatedSpace, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let d = space.params().d;
    DMatrix::from_fn(d, d, |i, j| m[(i, j)])
}

/// Outcome of the covariance sweep `B(T)(phi_z(lambda)) = B(T_z)(lambda)`.
#[derive(Debug, Clone)]
pub struct CovarianceReport {
    /// Max over the surviving grid of the spectral norm of the two-route
    /// difference (equivalently the max pairing over unit vectors).
    pub max_gap: f64,
    /// Grid points evaluated.
    pub checked: usize,
    /// Grid points dropped because `lambda` or `phi_z(lambda)` failed the
    /// kernel tail gate.
    pub skipped: usize,
}

/// Checks the covariance identity at `z` over a grid of probe points:
/// the transform of the conjugated operator at `lambda` against the
/// transform of the original at `phi_z(lambda)`. Grid points whose kernel
/// tail (at either end) exceeds the basis gate are skipped and counted.
///
/// # Errors
/// Conjugation errors propagate; all probe points excluded is an error.
pub fn covariance_check(
    t: &TruncatedOperator,
    z: &BallPoint,
    grid: &[BallPoint],
) -> Result<CovarianceReport> {
    if grid.is_empty() {
        return Err(CoreError::InvalidParams("empty covariance grid".into()));
    }
    let (tz, _) = conjugate_tz(t, z)?;
    let mut max_gap = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    for lambda in grid {
        let mapped = moebius(z, lambda)?;
        let both = berezin(&tz, lambda).and_then(|a| berezin(t, &mapped).map(|b| (a, b)));
        match both {
            Ok((a, b)) => {
                max_gap = max_gap.max(spectral_norm(&(a.matrix() - b.matrix())));
                checked += 1;
            }
            Err(CoreError::TailBound { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if checked == 0 {
        return Err(CoreError::InvalidParams(
            "covariance grid entirely excluded by the kernel tail gate".into(),
        ));
    }
    Ok(CovarianceReport {
        max_gap,
        checked,
        skipped,
    })
}

/// The boundary functional profiled along a radial ray.
#[derive(Debug, Clone)]
pub enum DecayQuantity {
    /// Spectral norm of the transform matrix (sup of `|<B e, h>|` over
    /// unit vectors).
    BerezinSup,
    /// Norm over unit inputs `e` of the pairing
    /// `<T_z(const e), p_eta e_h>` for one monomial test vector.
    WeakPairing {
        /// Monomial multi-index of the test vector.
        eta: MultiIndex,
        /// Coordinate slot of the test vector.
        h: usize,
    },
    /// Max of [`DecayQuantity::WeakPairing`] over all monomials of order
    /// at most `max_order` and all slots.
    WeakPairingMax {
        /// Largest monomial order included.
        max_order: usize,
    },
    /// `L^p` norm of `T_z(const e)` for the given basis slot `e`.
    PNorm {
        /// Integrability exponent, `> 1`.
        p: f64,
        /// Coordinate slot of the constant section.
        e: usize,
    },
}

/// Values of a boundary functional along `z = r * direction`.
#[derive(Debug, Clone)]
pub struct DecayProfile {
    /// Unit direction in `C^n`.
    pub direction: Vec<Complex64>,
    /// The radii actually evaluated (strictly increasing).
    pub radii: Vec<f64>,
    /// Functional values, aligned with `radii`.
    pub values: Vec<f64>,
    /// Kernel-expansion tail at each evaluated radius, carried so a
    /// reader can tell where the truncated basis stops resolving the
    /// kernel section (the composition route stays valid past it).
    pub tails: Vec<f64>,
    /// Log-log slope of `values` against `1 - r^2` over the last decade
    /// of `1 - r^2`, when at least three positive values land there.
    pub fitted_exponent: Option<f64>,
    /// Radii dropped at the end of the ray because the kernel route's
    /// tail gate failed (always zero on the composition route).
    pub excluded: usize,
}

impl DecayProfile {
    /// Serializable summary used by report writers.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "direction": self
                .direction
                .iter()
                .map(|c| vec![c.re, c.im])
                .collect::<Vec<_>>(),
            "radii": self.radii,
            "values": self.values,
            "tails": self.tails,
            "fitted_exponent": self.fitted_exponent,
            "excluded": self.excluded,
        })
    }
}

/// Profiles a boundary functional of `t` along `z = r * direction`.
///
/// Expression-backed operators ride the composition route, which is valid
/// at every requested radius; the kernel tail is still recorded per point
/// as honesty metadata. Opaque operators fall back to kernel-section
/// pairings and the profile truncates (with a count) at the first radius
/// whose tail exceeds the basis gate.
///
/// # Errors
/// Radii must be strictly increasing and below `1 - 1e-3`; the direction
/// must be a unit vector of the right dimension; on the kernel route,
/// all radii excluded is an error.
pub fn decay_profile(
    t: &TruncatedOperator,
    direction: &[Complex64],
    radii: &[f64],
    quantity: &DecayQuantity,
) -> Result<DecayProfile> {
    let space = Arc::clone(t.space());
    validate_ray(&space, direction, radii)?;
    validate_quantity(&space, quantity)?;

    let mut used = Vec::with_capacity(radii.len());
    let mut values = Vec::with_capacity(radii.len());
    let mut tails = Vec::with_capacity(radii.len());
    let mut excluded = 0usize;

    for (pos, &r) in radii.iter().enumerate() {
        let coords: Vec<Complex64> = direction.iter().map(|c| c * r).collect();
        let z = BallPoint::new(&coords)?;
        let tail = space.kernel_coefficients_unchecked(&z)?.tail_bound;
        let value = match t.provenance() {
            Provenance::Expression(expr) => Some(composition_value(&space, expr, &z, quantity)?),
            Provenance::Opaque(_) => match kernel_route_value(t, &z, quantity) {
                Ok(v) => Some(v),
                Err(CoreError::TailBound { .. }) => None,
                Err(e) => return Err(e),
            },
        };
        match value {
            Some(v) => {
                used.push(r);
                values.push(v);
                tails.push(tail);
            }
            None => {
                // Tails grow with the radius along a ray: every later
                // radius fails the same gate.
                excluded = radii.len() - pos;
                break;
            }
        }
    }
    if values.is_empty() {
        return Err(CoreError::TailBound {
            tail: f64::NAN,
            degree: space.degree(),
            allowed: crate::basis::KERNEL_TAIL_LIMIT,
        });
    }
    let fitted_exponent = fit_last_decade(&used, &values);
    Ok(DecayProfile {
        direction: direction.to_vec(),
        radii: used,
        values,
        tails,
        fitted_exponent,
        excluded,
    })
}

fn validate_ray(space: &TruncatedSpace, direction: &[Complex64], radii: &[f64]) -> Result<()> {
    if direction.len() != space.params().n {
        return Err(CoreError::DimensionMismatch {
            expected: space.params().n,
            got: direction.len(),
        });
    }
    let norm: f64 = direction.iter().map(|c| c.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidParams(format!(
            "profile direction must be a unit vector, |dir|^2 = {norm}"
        )));
    }
    if radii.is_empty() {
        return Err(CoreError::InvalidParams("empty radius list".into()));
    }
    for pair in radii.windows(2) {
        if pair[1] <= pair[0] {
            return Err(CoreError::InvalidParams(format!(
                "radii must increase strictly, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let last = radii[radii.len() - 1];
    if !(0.0..1.0 - 1e-3 + 1e-15).contains(&last) || radii[0] <= 0.0 {
        return Err(CoreError::InvalidParams(format!(
            "radii must lie in (0, 1 - 1e-3], got extremes {} and {last}",
            radii[0]
        )));
    }
    Ok(())
}

fn validate_quantity(space: &TruncatedSpace, quantity: &DecayQuantity) -> Result<()> {
    let d = space.params().d;
    match quantity {
        DecayQuantity::BerezinSup | DecayQuantity::WeakPairingMax { .. } => Ok(()),
        DecayQuantity::WeakPairing { eta, h } => {
            if *h >= d {
                return Err(CoreError::DimensionMismatch { expected: d, got: *h });
            }
            if space.position(eta).is_none() {
                return Err(CoreError::InvalidParams(format!(
                    "test monomial order {} outside the truncation",
                    eta.order()
                )));
            }
            Ok(())
        }
        DecayQuantity::PNorm { p, e } => {
            if *p <= 1.0 {
                return Err(CoreError::InvalidParams(format!("need p > 1, got {p}")));
            }
            if *e >= d {
                return Err(CoreError::DimensionMismatch { expected: d, got: *e });
            }
            Ok(())
        }
    }
}

/// Functional value through the conjugated-expression matrix.
fn composition_value(
    space: &Arc<TruncatedSpace>,
    expr: &OperatorExpression,
    z: &BallPoint,
    quantity: &DecayQuantity,
) -> Result<f64> {
    let conjugated = evaluate_expression(space, &expr.compose_moebius(z)?)?;
    let m = conjugated.matrix();
    let d = space.params().d;
    Ok(match quantity {
        DecayQuantity::BerezinSup => spectral_norm(&constant_block(space, m)),
        DecayQuantity::WeakPairing { eta, h } => {
            let pos = space.position(eta).expect("validated");
            pairing_row_norm(space, m, pos, *h)
        }
        DecayQuantity::WeakPairingMax { max_order } => {
            let mut best = 0.0f64;
            for (pos, idx) in space.indices().iter().enumerate() {
                if idx.order() > *max_order {
                    continue;
                }
                for h in 0..d {
                    best = best.max(pairing_row_norm(space, m, pos, h));
                }
            }
            best
        }
        DecayQuantity::PNorm { p, e } => {
            let col = m.column(space.flat_index(0, *e)).into_owned();
            pnorm_of_coeffs(space, &col, *p)
        }
    })
}

/// Norm over unit inputs of `<T_z(const e), p_eta e_h>`: the Euclidean
/// norm of the row entries `[(eta, h), (0, c)]` over input slots `c`.
pub(crate) fn pairing_row_norm(space: &TruncatedSpace, m: &DMatrix<Complex64>, pos: usize, h: usize) -> f64 {
    let d = space.params().d;
    let row = space.flat_index(pos, h);
    (0..d)
        .map(|c| m[(row, space.flat_index(0, c))].norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Quadrature `L^p` norm of the polynomial section with the given
/// coefficients.
pub(crate) fn pnorm_of_coeffs(space: &TruncatedSpace, coeffs: &DVector<Complex64>, p: f64) -> f64 {
    space
        .rule()
        .integrate_real(|w| {
            space
                .evaluate(coeffs, w)
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
                .powf(0.5 * p)
        })
        .powf(1.0 / p)
}

/// Functional value for an opaque matrix: everything goes through the
/// truncated kernel section, so the basis tail gate applies.
fn kernel_route_value(
    t: &TruncatedOperator,
    z: &BallPoint,
    quantity: &DecayQuantity,
) -> Result<f64> {
    let space = t.space();
    let d = space.params().d;
    match quantity {
        DecayQuantity::BerezinSup => Ok(berezin(t, z)?.sup_pairing()),
        DecayQuantity::WeakPairing { eta, h } => {
            weak_pairing_kernel(t, z, space.position(eta).expect("validated"), *h)
        }
        DecayQuantity::WeakPairingMax { max_order } => {
            let mut best = 0.0f64;
            for (pos, idx) in space.indices().iter().enumerate() {
                if idx.order() > *max_order {
                    continue;
                }
                for h in 0..d {
                    best = best.max(weak_pairing_kernel(t, z, pos, h)?);
                }
            }
            Ok(best)
        }
        DecayQuantity::PNorm { p, e } => {
            let kc = space.kernel_coefficients(z)?;
            let unit = kc.unit_coeffs();
            let v = kernel_section_columns(space, &unit);
            let image = (t.matrix() * v.column(*e)).into_owned();
            // || (T k_z e) o phi_z * k_z ||_p: the conjugated image
            // evaluated pointwise, integrated by quadrature.
            let section = apply_uz(space, &image, z)?;
            Ok(space
                .rule()
                .integrate_real(|w| {
                    section
                        .evaluate(w)
                        .iter()
                        .map(|c| c.norm_sqr())
                        .sum::<f64>()
                        .powf(0.5 * p)
                })
                .powf(1.0 / p))
        }
    }
}

/// `|<T_z(const e), p_eta e_h>|` over unit `e` via kernel-section
/// pairings: `<T(k_z e_c), U_z(p_eta e_h)>` for each slot `c`.
fn weak_pairing_kernel(t: &TruncatedOperator, z: &BallPoint, pos: usize, h: usize) -> Result<f64> {
    let space = t.space();
    let d = space.params().d;
    let kc = space.kernel_coefficients(z)?;
    let unit = kc.unit_coeffs();
    let v = kernel_section_columns(space, &unit);
    let images = t.matrix() * &v;

    let mut test = DVector::from_element(space.dim(), Complex64::new(0.0, 0.0));
    test[space.flat_index(pos, h)] = Complex64::new(1.0, 0.0);
    let section = apply_uz(space, &test, z)?;

    let mut sum = 0.0f64;
    for c in 0..d {
        let coeffs = images.column(c).into_owned();
        let pairing = space.rule().integrate(|w| {
            let f = space.evaluate(&coeffs, w);
            let g = section.evaluate(w);
            f.iter().zip(g.iter()).map(|(a, b)| a * b.conj()).sum()
        });
        sum += pairing.norm_sqr();
    }
    Ok(sum.sqrt())
}

/// Least-squares slope of `ln(values)` against `ln(1 - r^2)` over the
/// points whose `1 - r^2` lies within one decade of its minimum. Needs
/// at least three strictly positive values there.
pub fn fit_last_decade(radii: &[f64], values: &[f64]) -> Option<f64> {
    let xs: Vec<f64> = radii.iter().map(|r| 1.0 - r * r).collect();
    let x_min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (x, v) in xs.iter().zip(values) {
        if *x <= 10.0 * x_min && *v > 0.0 {
            lx.push(x.ln());
            ly.push(v.ln());
        }
    }
    fit_loglog_prepared(&lx, &ly)
}

/// Least-squares slope of `ln y` against `ln x`; `None` without at least
/// three positive points.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Option<f64> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (a, b) in x.iter().zip(y) {
        if *a > 0.0 && *b > 0.0 {
            lx.push(a.ln());
            ly.push(b.ln());
        }
    }
    fit_loglog_prepared(&lx, &ly)
}

fn fit_loglog_prepared(lx: &[f64], ly: &[f64]) -> Option<f64> {
    if lx.len() < 3 {
        return None;
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Twelve radii geometric in `1 - r` from `0.5` to `0.999`.
pub fn default_radii() -> Vec<f64> {
    let count = 12usize;
    let first = 0.5f64;
    let last = 0.001f64;
    (0..count)
        .map(|k| 1.0 - first * (last / first).powf(k as f64 / (count - 1) as f64))
        .collect()
}

/// Deterministic unit directions: 8 phases on the circle for `n = 1`,
/// 16 spread points on the unit sphere of `C^2` for `n = 2`.
pub fn default_directions(n: usize) -> Vec<Vec<Complex64>> {
    match n {
        1 => (0..8)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
                vec![Complex64::from_polar(1.0, theta)]
            })
            .collect(),
        _ => (0..16)
            .map(|k| {
                let a = (k as f64 + 0.5) / 16.0;
                let polar = 0.5 * std::f64::consts::PI * a;
                vec![
                    Complex64::from_polar(polar.cos(), 2.0 * std::f64::consts::PI * 3.0 * a),
                    Complex64::from_polar(polar.sin(), 2.0 * std::f64::consts::PI * 5.0 * a),
                ]
            })
            .collect(),
    }
}
