//! Orthonormal monomial bases of the truncated spaces and reproducing
//! kernels.
//!
//! The truncation keeps vector-valued polynomials `sum c_(beta,j) p_beta e_j`
//! with `|beta| <= N`, where `p_beta = w^beta / gamma_beta` and
//! `gamma_beta = ||w^beta||`. Normalization constants are computed by
//! quadrature and cross-checked against the closed product form
//!
//! ```text
//! gamma_beta^2 = beta! / prod_{k=0}^{|beta|-1} (n + 1 + alpha + k),
//! ```
//!
//! so the basis carries its own certificate: a Gram matrix within 1e-9 of
//! the identity and a bounded deviation between the two gamma routes.
//!
//! Kernels follow the closed forms
//! `K_z(w) = (1 - <w,z>)^(-(n+1+alpha))` and
//! `k_z = (1 - |z|^2)^((n+1+alpha)/2) K_z`, with coefficient expansions in
//! the truncated basis carrying an explicit truncation tail bound.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::geometry::{hermitian_inner, in_metric_ball, moebius, BallPoint, SpaceParams};
use crate::quadrature::QuadratureRule;

/// Largest admissible truncation tail for kernel expansions.
pub const KERNEL_TAIL_LIMIT: f64 = 1e-6;

/// A monomial exponent in one or two complex variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MultiIndex {
    n: usize,
    k: [usize; 2],
}

impl MultiIndex {
    /// A one-variable exponent.
    pub fn one_dim(m: usize) -> Self {
        Self { n: 1, k: [m, 0] }
    }

    /// A two-variable exponent.
    pub fn two_dim(k1: usize, k2: usize) -> Self {
        Self {
            n: 2,
            k: [k1, k2],
        }
    }

    /// Number of variables.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Total degree `|beta|`.
    pub fn order(&self) -> usize {
        self.k[0] + self.k[1]
    }

    /// Exponent of the `i`-th variable.
    pub fn component(&self, i: usize) -> usize {
        self.k[i]
    }

    /// Evaluates the plain monomial `w^beta`.
    pub fn monomial(&self, w: &BallPoint) -> Complex64 {
        debug_assert_eq!(w.dim(), self.n);
        let mut v = w.coords()[0].powu(self.k[0] as u32);
        if self.n == 2 {
            v *= w.coords()[1].powu(self.k[1] as u32);
        }
        v
    }
}

/// The graded-lexicographic index list: grades ascending, and within a
/// grade the first exponent ascending.
pub fn enumerate_indices(n: usize, degree: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=degree {
        match n {
            1 => out.push(MultiIndex::one_dim(total)),
            2 => {
                for k1 in 0..=total {
                    out.push(MultiIndex::two_dim(k1, total - k1));
                }
            }
            _ => unreachable!("dimensions restricted at construction"),
        }
    }
    out
}

/// A position in the vector-valued basis: a monomial and a coordinate slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisIndex {
    /// Monomial exponent.
    pub multi: MultiIndex,
    /// Coordinate slot in `{0, .., d-1}`.
    pub slot: usize,
}

/// Coefficients of the truncated kernel section `Pi(k_z e)` in the
/// orthonormal basis, together with the truncation tail.
#[derive(Debug, Clone)]
pub struct KernelCoefficients {
    /// Scalar coefficients over the monomial list; the vector-valued
    /// section `k_z e_j` places these in slot `j`.
    pub coeffs: DVector<Complex64>,
    /// Mass missing beyond the truncation:
    /// `1 - ||Pi k_z||^2 = (1-|z|^2)^(n+1+alpha) sum_{|beta|>N} |z^beta|^2/gamma^2`.
    pub tail_bound: f64,
}

impl KernelCoefficients {
    /// Norm of the truncated section, `sqrt(1 - tail_bound)`.
    pub fn truncated_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Coefficients rescaled to unit norm (the truncated-normalized
    /// kernel section), used where exact unit vectors are required.
    pub fn unit_coeffs(&self) -> DVector<Complex64> {
        let norm = self.truncated_norm();
        self.coeffs.map(|c| c / norm)
    }
}

/// The truncated model space: basis ordering, normalizations, the rule
/// that built it, and its consistency certificates.
#[derive(Debug)]
pub struct TruncatedSpace {
    params: SpaceParams,
    degree: usize,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
    gammas: Vec<f64>,
    gammas_closed: Vec<f64>,
    gamma_deviation: f64,
    gram_residual: f64,
    rule: QuadratureRule,
}

/// Builds the truncated space of degree `N` over `rule`, computing the
/// normalizations numerically and verifying the basis certificates.
///
/// # Errors
/// Rejects parameter/rule mismatches and insufficient resolution; fails
/// when the numeric gammas drift from the closed form beyond
/// `max(1e-9, 20 * est_error)` or the Gram residual exceeds 1e-9.
pub fn build_space(
    params: &SpaceParams,
    degree: usize,
    rule: QuadratureRule,
) -> Result<TruncatedSpace> {
    if rule.params().n != params.n
        || rule.params().alpha != params.alpha
        || rule.params().d != params.d
    {
        return Err(CoreError::Incompatible(format!(
            "rule built for (n, alpha, d) = ({}, {}, {}), space wants ({}, {}, {})",
            rule.params().n,
            rule.params().alpha,
            rule.params().d,
            params.n,
            params.alpha,
            params.d
        )));
    }
    if degree == 0 {
        return Err(CoreError::InvalidParams(
            "truncation degree must be at least 1".into(),
        ));
    }
    // Radial exactness for all Gram products needs Gauss panels of at
    // least degree N in u = r^2; angular grids must separate every
    // frequency difference occurring in the basis range (plus a margin
    // for low-degree symbol factors during assembly).
    match params.n {
        1 => {
            if rule.resolution() < 2 * degree + 1 {
                return Err(CoreError::ResolutionTooSmall {
                    got: rule.resolution(),
                    min: 2 * degree + 1,
                });
            }
        }
        2 => {
            if let Some(adeg) = rule.max_exact_angular_degree() {
                if 2 * adeg + 1 < degree + 5 {
                    return Err(CoreError::ResolutionTooSmall {
                        got: rule.resolution(),
                        min: 4 * (degree + 5),
                    });
                }
            }
        }
        _ => unreachable!("dimensions restricted at construction"),
    }

    let indices = enumerate_indices(params.n, degree);
    let dim_scalar = indices.len();

    // Numeric normalizations: gamma^2 = integral |w^beta|^2 dv_alpha,
    // accumulated for all indices in one pass over the nodes.
    let mut sums = vec![(0.0f64, 0.0f64); dim_scalar]; // Kahan pairs
    let mut monomials = vec![Complex64::new(0.0, 0.0); dim_scalar];
    rule.for_each_node(|w, wt| {
        raw_monomial_row(&indices, degree, w, &mut monomials);
        for (s, m) in monomials.iter().enumerate() {
            let (sum, carry) = &mut sums[s];
            let y = wt * m.norm_sqr() - *carry;
            let t = *sum + y;
            *carry = (t - *sum) - y;
            *sum = t;
        }
    });
    let gammas: Vec<f64> = sums.iter().map(|(s, _)| s.sqrt()).collect();

    // Independent oracle: the closed product form of the same norms.
    let gammas_closed: Vec<f64> = indices
        .iter()
        .map(|beta| closed_gamma(params, beta))
        .collect();
    let mut gamma_deviation = 0.0f64;
    for (s, (num, closed)) in gammas.iter().zip(&gammas_closed).enumerate() {
        if !(num.is_finite() && *num > 0.0) {
            return Err(CoreError::NonFinite(format!(
                "normalization at index {s} is {num}"
            )));
        }
        gamma_deviation = gamma_deviation.max((num / closed - 1.0).abs());
    }
    let allowed = (20.0 * rule.est_error()).max(1e-9);
    if gamma_deviation > allowed {
        return Err(CoreError::GammaDeviation {
            degree,
            deviation: gamma_deviation,
            allowed,
        });
    }

    // Full Gram matrix of the normalized scalar basis, chunked through
    // dense products; must be the identity to 1e-9.
    let gram = {
        let mut g = DMatrix::<Complex64>::zeros(dim_scalar, dim_scalar);
        let chunk = 4096;
        let mut cols: Vec<(DVector<Complex64>, f64)> = Vec::with_capacity(chunk);
        let flush = |cols: &mut Vec<(DVector<Complex64>, f64)>,
                     g: &mut DMatrix<Complex64>| {
            if cols.is_empty() {
                return;
            }
            let mut b = DMatrix::<Complex64>::zeros(dim_scalar, cols.len());
            let mut bw = DMatrix::<Complex64>::zeros(dim_scalar, cols.len());
            for (j, (col, wt)) in cols.iter().enumerate() {
                b.column_mut(j).copy_from(col);
                bw.column_mut(j).copy_from(&(col * Complex64::new(*wt, 0.0)));
            }
            g.gemm(
                Complex64::new(1.0, 0.0),
                &bw,
                &b.adjoint(),
                Complex64::new(1.0, 0.0),
            );
            cols.clear();
        };
        let mut row = vec![Complex64::new(0.0, 0.0); dim_scalar];
        rule.for_each_node(|w, wt| {
            raw_monomial_row(&indices, degree, w, &mut row);
            let col = DVector::from_iterator(
                dim_scalar,
                row.iter().zip(&gammas).map(|(m, g)| m / g),
            );
            cols.push((col, wt));
            if cols.len() == chunk {
                flush(&mut cols, &mut g);
            }
        });
        flush(&mut cols, &mut g);
        g
    };
    let mut gram_residual = 0.0f64;
    for s in 0..dim_scalar {
        for t in 0..dim_scalar {
            let expect = if s == t { 1.0 } else { 0.0 };
            gram_residual = gram_residual.max((gram[(s, t)] - expect).norm());
        }
    }
    if gram_residual > 1e-9 {
        return Err(CoreError::GramDeviation {
            residual: gram_residual,
            allowed: 1e-9,
        });
    }

    let position = indices
        .iter()
        .enumerate()
        .map(|(s, b)| (*b, s))
        .collect();
    Ok(TruncatedSpace {
        params: *params,
        degree,
        indices,
        position,
        gammas,
        gammas_closed,
        gamma_deviation,
        gram_residual,
        rule,
    })
}

/// Closed form of `||w^beta||`: `sqrt(beta! / prod_k (n+1+alpha+k))`.
fn closed_gamma(params: &SpaceParams, beta: &MultiIndex) -> f64 {
    let mut num = 1.0f64;
    for i in 0..params.n {
        for j in 1..=beta.component(i) {
            num *= j as f64;
        }
    }
    let mut den = 1.0f64;
    for k in 0..beta.order() {
        den *= params.kernel_exponent() + k as f64;
    }
    (num / den).sqrt()
}

/// Writes the plain monomial values `w^beta` for every listed index,
/// using shared power tables over the coordinates.
fn raw_monomial_row(
    indices: &[MultiIndex],
    degree: usize,
    w: &BallPoint,
    out: &mut [Complex64],
) {
    debug_assert_eq!(indices.len(), out.len());
    let mut pow1 = Vec::with_capacity(degree + 1);
    let mut pow2 = Vec::with_capacity(degree + 1);
    let one = Complex64::new(1.0, 0.0);
    pow1.push(one);
    pow2.push(one);
    for k in 0..degree {
        pow1.push(pow1[k] * w.coords()[0]);
        if w.dim() == 2 {
            pow2.push(pow2[k] * w.coords()[1]);
        }
    }
    for (s, beta) in indices.iter().enumerate() {
        out[s] = if beta.dim() == 1 {
            pow1[beta.component(0)]
        } else {
            pow1[beta.component(0)] * pow2[beta.component(1)]
        };
    }
}

impl TruncatedSpace {
    /// Space parameters.
    pub fn params(&self) -> &SpaceParams {
        &self.params
    }

    /// Truncation degree `N`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The quadrature rule the space was certified against.
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Monomial list in the fixed graded-lexicographic order.
    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    /// Number of scalar monomials.
    pub fn dim_scalar(&self) -> usize {
        self.indices.len()
    }

    /// Full dimension `d * dim_scalar` of the vector-valued truncation.
    pub fn dim(&self) -> usize {
        self.params.d * self.dim_scalar()
    }

    /// Position of a monomial in the ordering.
    pub fn position(&self, beta: &MultiIndex) -> Option<usize> {
        self.position.get(beta).copied()
    }

    /// Flat coefficient index of `(scalar position, slot)`: slots vary
    /// fastest, so index = `s * d + slot`.
    pub fn flat_index(&self, scalar: usize, slot: usize) -> usize {
        debug_assert!(slot < self.params.d);
        scalar * self.params.d + slot
    }

    /// Numeric normalization `gamma_beta` at a scalar position.
    pub fn gamma(&self, scalar: usize) -> f64 {
        self.gammas[scalar]
    }

    /// Closed-form oracle value of the same normalization.
    pub fn gamma_closed(&self, scalar: usize) -> f64 {
        self.gammas_closed[scalar]
    }

    /// Largest relative gap between the two gamma routes.
    pub fn gamma_deviation(&self) -> f64 {
        self.gamma_deviation
    }

    /// Largest entrywise deviation of the quadrature Gram matrix from the
    /// identity.
    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// Values of the normalized scalar basis `p_beta(w)` in basis order.
    pub fn scalar_row(&self, w: &BallPoint, out: &mut [Complex64]) {
        raw_monomial_row(&self.indices, self.degree, w, out);
        for (v, g) in out.iter_mut().zip(&self.gammas) {
            *v /= *g;
        }
    }

    /// Evaluates a coefficient vector as a `C^d`-valued function.
    pub fn evaluate(&self, coeffs: &DVector<Complex64>, w: &BallPoint) -> DVector<Complex64> {
        debug_assert_eq!(coeffs.len(), self.dim());
        let d = self.params.d;
        let mut row = vec![Complex64::new(0.0, 0.0); self.dim_scalar()];
        self.scalar_row(w, &mut row);
        let mut out = DVector::from_element(d, Complex64::new(0.0, 0.0));
        for (s, p) in row.iter().enumerate() {
            for j in 0..d {
                out[j] += coeffs[self.flat_index(s, j)] * p;
            }
        }
        out
    }

    /// Coefficients of the truncated normalized-kernel section together
    /// with the truncation tail.
    ///
    /// # Errors
    /// Fails when the tail exceeds [`KERNEL_TAIL_LIMIT`] (the point is too
    /// close to the boundary for the active truncation degree).
    pub fn kernel_coefficients(&self, z: &BallPoint) -> Result<KernelCoefficients> {
        let kc = self.kernel_coefficients_unchecked(z)?;
        if kc.tail_bound > KERNEL_TAIL_LIMIT {
            return Err(CoreError::TailBound {
                tail: kc.tail_bound,
                degree: self.degree,
                allowed: KERNEL_TAIL_LIMIT,
            });
        }
        Ok(kc)
    }

    /// As [`TruncatedSpace::kernel_coefficients`] without the tail gate;
    /// used by callers that filter or report the tail themselves.
    ///
    /// # Errors
    /// Dimension mismatch only.
    pub fn kernel_coefficients_unchecked(&self, z: &BallPoint) -> Result<KernelCoefficients> {
        if z.dim() != self.params.n {
            return Err(CoreError::DimensionMismatch {
                expected: self.params.n,
                got: z.dim(),
            });
        }
        let kappa = self.params.kernel_exponent();
        let scale = (1.0 - z.norm_sqr()).powf(0.5 * kappa);
        let mut row = vec![Complex64::new(0.0, 0.0); self.dim_scalar()];
        raw_monomial_row(&self.indices, self.degree, z, &mut row);
        let coeffs = DVector::from_iterator(
            self.dim_scalar(),
            row.iter()
                .zip(&self.gammas)
                .map(|(m, g)| scale * m.conj() / g),
        );
        let mass: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        Ok(KernelCoefficients {
            coeffs,
            tail_bound: (1.0 - mass).max(0.0),
        })
    }

    /// Serializable description of the built space and its certificates.
    pub fn manifest_json(&self) -> serde_json::Value {
        serde_json::json!({
            "params": {
                "n": self.params.n,
                "alpha": self.params.alpha,
                "d": self.params.d,
            },
            "degree": self.degree,
            "dim_scalar": self.dim_scalar(),
            "dim": self.dim(),
            "indices": self.indices,
            "gamma": self.gammas,
            "gamma_deviation": self.gamma_deviation,
            "gram_residual": self.gram_residual,
            "rule": {
                "scheme_tag": self.rule.scheme(),
                "resolution": self.rule.resolution(),
                "seed": self.rule.seed(),
                "est_error": self.rule.est_error(),
            },
        })
    }

    /// Ratio of the sup of `||f||_p^p` over the metric ball `D(lambda, r)`
    /// to the bound `(1-|lambda|^2)^(-(n+1+alpha))
    /// integral_{D(lambda,2r)} ||f||_p^p dv_alpha`, for `f` given by
    /// coefficients in this space. The sup uses a dense image grid of the
    /// metric ball; the integral restricts this space's rule.
    ///
    /// # Errors
    /// Requires `r > 0`, `p >= 1`, and a matching coefficient length.
    pub fn subharmonic_bound_check(
        &self,
        coeffs: &DVector<Complex64>,
        lambda: &BallPoint,
        r: f64,
        p: f64,
    ) -> Result<f64> {
        if !(r > 0.0 && r.is_finite()) || p < 1.0 {
            return Err(CoreError::InvalidParams(format!(
                "need r > 0 and p >= 1, got r = {r}, p = {p}"
            )));
        }
        if coeffs.len() != self.dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim(),
                got: coeffs.len(),
            });
        }
        let pnorm_p = |v: &DVector<Complex64>| -> f64 {
            v.iter().map(|c| c.norm().powf(p)).sum()
        };

        // Sup over D(lambda, r) = phi_lambda({|v| < tanh r}) by a dense
        // polar image grid (plus the center).
        let s = r.tanh();
        let mut sup = pnorm_p(&self.evaluate(coeffs, lambda));
        let radial_steps = 24;
        let ang_steps = 48;
        for i in 1..=radial_steps {
            let rho = s * i as f64 / radial_steps as f64 * (1.0 - 1e-12);
            for a in 0..ang_steps {
                let theta = 2.0 * std::f64::consts::PI * a as f64 / ang_steps as f64;
                let dir = Complex64::new(0.0, theta).exp();
                let v = match self.params.n {
                    1 => BallPoint::one_dim(rho * dir)?,
                    _ => {
                        // Two angular sheets suffice for a sup estimate.
                        let phase2 = Complex64::new(0.0, 2.3 * theta).exp();
                        let c1 = rho * dir * (0.5f64).sqrt();
                        let c2 = rho * phase2 * (0.5f64).sqrt();
                        BallPoint::new(&[c1, c2])?
                    }
                };
                let w = moebius(lambda, &v)?;
                sup = sup.max(pnorm_p(&self.evaluate(coeffs, &w)));
            }
        }

        // Integral over D(lambda, 2r) by restricting the rule.
        let mut integral = 0.0;
        self.rule.for_each_node(|w, wt| {
            if in_metric_ball(lambda, 2.0 * r, w).unwrap_or(false) {
                integral += wt * pnorm_p(&self.evaluate(coeffs, w));
            }
        });
        let kappa = self.params.kernel_exponent();
        let bound = (1.0 - lambda.norm_sqr()).powf(-kappa) * integral;
        Ok(sup / bound)
    }
}

// ─── Reproducing kernels ───

/// The reproducing kernel `K_z(w) = (1 - <w,z>)^(-(n+1+alpha))`, the
/// function satisfying `<f, K_z> = f(z)`.
///
/// # Errors
/// Dimension mismatches; an overflow guard rejects `|1 - <w,z>| < 1e-14`.
pub fn kernel_value(z: &BallPoint, w: &BallPoint, params: &SpaceParams) -> Result<Complex64> {
    if z.dim() != params.n || w.dim() != params.n {
        return Err(CoreError::DimensionMismatch {
            expected: params.n,
            got: if z.dim() != params.n { z.dim() } else { w.dim() },
        });
    }
    let base = Complex64::new(1.0, 0.0) - hermitian_inner(w, z);
    if base.norm() < 1e-14 {
        return Err(CoreError::BoundaryProximity {
            abs: base.norm(),
            margin: 1e-14,
        });
    }
    Ok(base.powf(-params.kernel_exponent()))
}

/// The normalized kernel `k_z(w) = (1-|z|^2)^((n+1+alpha)/2) K_z(w)`,
/// of unit norm in the full space.
///
/// # Errors
/// As [`kernel_value`].
pub fn kernel_k(z: &BallPoint, w: &BallPoint, params: &SpaceParams) -> Result<Complex64> {
    let scale = (1.0 - z.norm_sqr()).powf(0.5 * params.kernel_exponent());
    Ok(scale * kernel_value(z, w, params)?)
}
