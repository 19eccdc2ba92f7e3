//! Points of the open unit ball in C^n and its Möbius geometry.
//!
//! The ball `B^n = { z in C^n : |z| < 1 }` carries the involutive Möbius
//! automorphisms `phi_z` exchanging `z` and the origin:
//!
//! ```text
//! n = 1:   phi_z(w) = (z - w) / (1 - conj(z) w)
//! n >= 2:  phi_z(w) = (z - P_z w - s_z Q_z w) / (1 - <w, z>)
//! ```
//!
//! where `<w, z> = sum_i w_i conj(z_i)` (linear in the first slot),
//! `P_z` is the orthogonal projection onto the line through `z`,
//! `Q_z = I - P_z`, and `s_z = sqrt(1 - |z|^2)`.
//!
//! Two identities anchor everything downstream:
//!
//! ```text
//! 1 - |phi_z(w)|^2 = (1 - |z|^2)(1 - |w|^2) / |1 - <w, z>|^2
//! phi_z(phi_z(w)) = w
//! ```
//!
//! The pseudo-hyperbolic metric is `rho(z, w) = |phi_z(w)|` and the Bergman
//! metric is `beta = atanh(rho)`; metric balls `D(z, r)` are taken in `beta`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Constructor tolerance: points with `|z|^2 >= 1 - BALL_MEMBERSHIP_TOL` are rejected.
pub const BALL_MEMBERSHIP_TOL: f64 = 1e-14;

/// Operations that degenerate at the boundary reject `|z| > 1 - BOUNDARY_MARGIN`.
pub const BOUNDARY_MARGIN: f64 = 1e-12;

/// Parameters of a weighted Bergman space `A^2_alpha(B^n; C^d)`.
///
/// `n` is the complex dimension of the ball (1 or 2), `alpha > -1` the weight
/// exponent of the probability measure `dv_alpha ~ (1 - |z|^2)^alpha dV`, and
/// `d >= 1` the number of vector components carried by each function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceParams {
    pub n: usize,
    pub alpha: f64,
    pub d: usize,
}

impl SpaceParams {
    /// Validated constructor.
    ///
    /// # Errors
    /// Rejects `n` outside `{1, 2}`, `alpha <= -1`, non-finite `alpha`, and `d = 0`.
    pub fn new(n: usize, alpha: f64, d: usize) -> Result<Self> {
        if n == 0 || n > 2 {
            return Err(CoreError::UnsupportedDimension(n));
        }
        if !alpha.is_finite() || alpha <= -1.0 {
            return Err(CoreError::InvalidParams(format!(
                "weight exponent alpha must be finite and > -1, got {alpha}"
            )));
        }
        if d == 0 {
            return Err(CoreError::InvalidParams(
                "vector dimension d must be >= 1".into(),
            ));
        }
        Ok(Self { n, alpha, d })
    }

    /// The kernel exponent `n + 1 + alpha` that governs reproducing kernels.
    pub fn kernel_exponent(&self) -> f64 {
        self.n as f64 + 1.0 + self.alpha
    }
}

/// A point of the open unit ball `B^n`, `n <= 2`.
///
/// Stored inline so that quadrature loops over hundreds of thousands of nodes
/// stay allocation-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallPoint {
    n: usize,
    coords: [Complex64; 2],
}

impl BallPoint {
    /// Builds a point after checking membership `|z|^2 < 1 - 1e-14`.
    ///
    /// # Errors
    /// Rejects wrong coordinate counts, unsupported dimensions, and points at
    /// or outside the boundary.
    pub fn new(coords: &[Complex64]) -> Result<Self> {
        let n = coords.len();
        if n == 0 || n > 2 {
            return Err(CoreError::UnsupportedDimension(n));
        }
        let mut c = [Complex64::new(0.0, 0.0); 2];
        c[..n].copy_from_slice(coords);
        let p = Self { n, coords: c };
        let nsq = p.norm_sqr();
        if !nsq.is_finite() || nsq >= 1.0 - BALL_MEMBERSHIP_TOL {
            return Err(CoreError::OutsideBall { norm_sqr: nsq });
        }
        Ok(p)
    }

    /// One-dimensional convenience constructor.
    pub fn one_dim(z: Complex64) -> Result<Self> {
        Self::new(&[z])
    }

    /// The origin of `B^n`.
    pub fn origin(n: usize) -> Result<Self> {
        if n == 0 || n > 2 {
            return Err(CoreError::UnsupportedDimension(n));
        }
        Ok(Self {
            n,
            coords: [Complex64::new(0.0, 0.0); 2],
        })
    }

    /// Internal constructor for points produced by validated arithmetic
    /// (quadrature nodes, Möbius images); skips the membership check.
    pub(crate) fn new_unchecked(n: usize, coords: [Complex64; 2]) -> Self {
        Self { n, coords }
    }

    /// Complex dimension of the ambient ball.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Coordinate slice of length `dim()`.
    pub fn coords(&self) -> &[Complex64] {
        &self.coords[..self.n]
    }

    /// Squared Euclidean norm `|z|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.coords().iter().map(|c| c.norm_sqr()).sum()
    }

    /// Euclidean norm `|z|`.
    pub fn abs(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// The reflected point `-z`.
    pub fn negated(&self) -> Self {
        let mut c = self.coords;
        for v in &mut c[..self.n] {
            *v = -*v;
        }
        Self { n: self.n, coords: c }
    }
}

/// Hermitian inner product `<w, z> = sum_i w_i conj(z_i)`, linear in `w`.
pub fn hermitian_inner(w: &BallPoint, z: &BallPoint) -> Complex64 {
    debug_assert_eq!(w.n, z.n, "mixed ambient dimensions");
    w.coords()
        .iter()
        .zip(z.coords())
        .map(|(a, b)| a * b.conj())
        .sum()
}

/// Möbius automorphism `phi_z(w)` of the unit ball.
///
/// `phi_z` is an involution with `phi_z(0) = z` and `phi_z(z) = 0`.
///
/// # Errors
/// Rejects mismatched dimensions.
pub fn moebius(z: &BallPoint, w: &BallPoint) -> Result<BallPoint> {
    if z.n != w.n {
        return Err(CoreError::DimensionMismatch {
            expected: z.n,
            got: w.n,
        });
    }
    let denom = Complex64::new(1.0, 0.0) - hermitian_inner(w, z);
    if z.n == 1 {
        let img = (z.coords[0] - w.coords[0]) / denom;
        return Ok(BallPoint::new_unchecked(1, [img, Complex64::new(0.0, 0.0)]));
    }
    let zsq = z.norm_sqr();
    if zsq == 0.0 {
        return Ok(w.negated());
    }
    let s = (1.0 - zsq).sqrt();
    let proj = hermitian_inner(w, z) / zsq;
    let mut out = [Complex64::new(0.0, 0.0); 2];
    for i in 0..z.n {
        let p = proj * z.coords[i]; // P_z w
        let q = w.coords[i] - p; // Q_z w
        out[i] = (z.coords[i] - p - s * q) / denom;
    }
    Ok(BallPoint::new_unchecked(z.n, out))
}

/// The quantity `1 - |phi_z(w)|^2` through the cancellation-free product form
/// `(1 - |z|^2)(1 - |w|^2) / |1 - <w, z>|^2`.
///
/// # Errors
/// Rejects mismatched dimensions.
pub fn one_minus_phi_sqr(z: &BallPoint, w: &BallPoint) -> Result<f64> {
    if z.n != w.n {
        return Err(CoreError::DimensionMismatch {
            expected: z.n,
            got: w.n,
        });
    }
    let denom = Complex64::new(1.0, 0.0) - hermitian_inner(w, z);
    Ok((1.0 - z.norm_sqr()) * (1.0 - w.norm_sqr()) / denom.norm_sqr())
}

/// Pseudo-hyperbolic distance `rho(z, w) = |phi_z(w)| in [0, 1)`.
pub fn rho(z: &BallPoint, w: &BallPoint) -> Result<f64> {
    Ok(moebius(z, w)?.abs())
}

/// Bergman metric `beta(z, w) = atanh(rho(z, w)) = (1/2) log((1+rho)/(1-rho))`.
pub fn beta_metric(z: &BallPoint, w: &BallPoint) -> Result<f64> {
    Ok(rho(z, w)?.atanh())
}

/// Membership in the Bergman-metric ball `D(center, radius)`.
pub fn in_metric_ball(center: &BallPoint, radius: f64, z: &BallPoint) -> Result<bool> {
    Ok(beta_metric(center, z)? < radius)
}

/// Rejects points with `|z| > 1 - 1e-12`, used by boundary-sensitive callers.
pub fn reject_near_boundary(z: &BallPoint) -> Result<()> {
    let abs = z.abs();
    if abs > 1.0 - BOUNDARY_MARGIN {
        return Err(CoreError::BoundaryProximity {
            abs,
            margin: BOUNDARY_MARGIN,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn p1(re: f64, im: f64) -> BallPoint {
        BallPoint::one_dim(c(re, im)).unwrap()
    }

    #[test]
    fn space_params_validation() {
        assert!(SpaceParams::new(1, 0.0, 1).is_ok());
        assert!(SpaceParams::new(2, 2.5, 3).is_ok());
        assert!(matches!(
            SpaceParams::new(3, 0.0, 1),
            Err(CoreError::UnsupportedDimension(3))
        ));
        assert!(SpaceParams::new(1, -1.0, 1).is_err());
        assert!(SpaceParams::new(1, f64::NAN, 1).is_err());
        assert!(SpaceParams::new(1, 0.0, 0).is_err());
    }

    #[test]
    fn ball_point_rejects_boundary() {
        assert!(BallPoint::one_dim(c(1.0, 0.0)).is_err());
        assert!(BallPoint::one_dim(c(0.0, 1.0 - 1e-16)).is_err());
        assert!(BallPoint::one_dim(c(0.999_999, 0.0)).is_ok());
        assert!(BallPoint::new(&[c(0.8, 0.0), c(0.7, 0.0)]).is_err()); // |z|^2 = 1.13
        assert!(BallPoint::new(&[c(0.6, 0.0), c(0.6, 0.0)]).is_ok());
    }

    #[test]
    fn moebius_disk_value() {
        // phi_{0.5}(0.25) = (0.5 - 0.25) / (1 - 0.125) = 2/7.
        let img = moebius(&p1(0.5, 0.0), &p1(0.25, 0.0)).unwrap();
        assert_abs_diff_eq!(img.coords()[0].re, 2.0 / 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(img.coords()[0].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn moebius_swaps_center_and_origin() {
        for z in [p1(0.5, 0.0), p1(-0.3, 0.4), p1(0.0, 0.9)] {
            let at_zero = moebius(&z, &BallPoint::origin(1).unwrap()).unwrap();
            assert_abs_diff_eq!(at_zero.coords()[0].re, z.coords()[0].re, epsilon = 1e-15);
            assert_abs_diff_eq!(at_zero.coords()[0].im, z.coords()[0].im, epsilon = 1e-15);
            let at_self = moebius(&z, &z).unwrap();
            assert!(at_self.abs() < 1e-15);
        }
        let z2 = BallPoint::new(&[c(0.3, 0.1), c(-0.2, 0.4)]).unwrap();
        assert!(moebius(&z2, &z2).unwrap().abs() < 1e-15);
        let back = moebius(&z2, &BallPoint::origin(2).unwrap()).unwrap();
        for (a, b) in back.coords().iter().zip(z2.coords()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-15);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-15);
        }
    }

    #[test]
    fn one_minus_phi_sqr_value() {
        // z = 0.5, w = 0.25i: (0.75)(0.9375)/|1 - 0.125i|^2 = 9/13.
        let v = one_minus_phi_sqr(&p1(0.5, 0.0), &p1(0.0, 0.25)).unwrap();
        assert_abs_diff_eq!(v, 9.0 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn product_form_matches_direct_evaluation() {
        let pts = [
            (p1(0.5, 0.0), p1(0.0, 0.25)),
            (p1(-0.7, 0.1), p1(0.3, -0.55)),
            (p1(0.0, 0.0), p1(0.9, 0.3)),
        ];
        for (z, w) in pts {
            let direct = 1.0 - moebius(&z, &w).unwrap().norm_sqr();
            let product = one_minus_phi_sqr(&z, &w).unwrap();
            assert_abs_diff_eq!(direct, product, epsilon = 1e-13);
        }
    }

    #[test]
    fn rho_and_beta_values() {
        let z = BallPoint::origin(1).unwrap();
        let w = p1(0.5, 0.0);
        assert_abs_diff_eq!(rho(&z, &w).unwrap(), 0.5, epsilon = 1e-15);
        // atanh(1/2) = (1/2) ln 3.
        assert_abs_diff_eq!(
            beta_metric(&z, &w).unwrap(),
            0.549_306_144_334_054_8,
            epsilon = 1e-15
        );
    }

    #[test]
    fn metric_ball_membership() {
        let center = BallPoint::origin(1).unwrap();
        let radius = 0.5f64.atanh(); // ball of pseudo-hyperbolic radius 1/2
        assert!(in_metric_ball(&center, radius, &p1(0.49, 0.0)).unwrap());
        assert!(!in_metric_ball(&center, radius, &p1(0.51, 0.0)).unwrap());
    }

    #[test]
    fn boundary_rejection_margin() {
        assert!(reject_near_boundary(&p1(0.999_999_999_999_5, 0.0)).is_err());
        assert!(reject_near_boundary(&p1(0.999, 0.0)).is_ok());
    }

    /// Comparability of (1-|a|^2), (1-|z|^2), |1-<z,a>| on metric balls.
    ///
    /// For z = phi_a(zeta) with |zeta| <= s the exact envelopes are
    ///   (1-|z|^2)/(1-|a|^2)    in [(1-s)/(1+s), 1/(1-s)^2]
    ///   |1-<z,a>|/(1-|a|^2)    in [1/(1+s), 1/(1-s)]
    /// and sampled ratios must stay inside them.
    #[test]
    fn comparability_on_metric_balls() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [1usize, 2] {
            for r in [0.5f64, 1.0, 2.0] {
                let s = r.tanh();
                let lo_one = (1.0 - s) / (1.0 + s) - 1e-9;
                let hi_one = 1.0 / ((1.0 - s) * (1.0 - s)) + 1e-9;
                let lo_pair = 1.0 / (1.0 + s) - 1e-9;
                let hi_pair = 1.0 / (1.0 - s) + 1e-9;
                for _ in 0..1000 {
                    let a = random_point(&mut rng, n, 0.95);
                    let zeta = random_point(&mut rng, n, s * 0.999);
                    let z = moebius(&a, &zeta).unwrap();
                    debug_assert!(rho(&a, &z).unwrap() <= s + 1e-12);
                    let ratio_one = (1.0 - z.norm_sqr()) / (1.0 - a.norm_sqr());
                    assert!(
                        ratio_one >= lo_one && ratio_one <= hi_one,
                        "(1-|z|^2)/(1-|a|^2) = {ratio_one} outside [{lo_one}, {hi_one}] at r = {r}, n = {n}"
                    );
                    let pairing = (Complex64::new(1.0, 0.0) - hermitian_inner(&z, &a)).norm();
                    let ratio_pair = pairing / (1.0 - a.norm_sqr());
                    assert!(
                        ratio_pair >= lo_pair && ratio_pair <= hi_pair,
                        "|1-<z,a>|/(1-|a|^2) = {ratio_pair} outside [{lo_pair}, {hi_pair}] at r = {r}, n = {n}"
                    );
                }
            }
        }
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, max_abs: f64) -> BallPoint {
        // Rejection-sample a point of |z| <= max_abs.
        loop {
            let mut coords = [Complex64::new(0.0, 0.0); 2];
            for c in coords.iter_mut().take(n) {
                *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let p = BallPoint::new_unchecked(n, coords);
            if p.abs() <= max_abs {
                return p;
            }
        }
    }

    fn disk_point_strategy(max_abs: f64) -> impl Strategy<Value = BallPoint> {
        (-max_abs..max_abs, -max_abs..max_abs)
            .prop_filter_map("inside the disk", move |(re, im)| {
                let z = Complex64::new(re, im);
                (z.norm() < max_abs).then(|| BallPoint::one_dim(z).unwrap())
            })
    }

    proptest! {
        /// phi_z is an involution on the disk.
        #[test]
        fn moebius_involution(z in disk_point_strategy(0.9), w in disk_point_strategy(0.9)) {
            let once = moebius(&z, &w).unwrap();
            let twice = moebius(&z, &once).unwrap();
            prop_assert!((twice.coords()[0] - w.coords()[0]).norm() < 1e-12);
        }

        /// rho and beta are symmetric in their arguments.
        #[test]
        fn metric_symmetry(z in disk_point_strategy(0.95), w in disk_point_strategy(0.95)) {
            let a = rho(&z, &w).unwrap();
            let b = rho(&w, &z).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a < 1.0);
            let ba = beta_metric(&z, &w).unwrap();
            let bb = beta_metric(&w, &z).unwrap();
            prop_assert!((ba - bb).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// Involution in two complex dimensions.
        #[test]
        fn moebius_involution_ball2(
            re1 in -0.6f64..0.6, im1 in -0.6f64..0.6,
            re2 in -0.6f64..0.6, im2 in -0.6f64..0.6,
            wre1 in -0.6f64..0.6, wim1 in -0.6f64..0.6,
            wre2 in -0.6f64..0.6, wim2 in -0.6f64..0.6,
        ) {
            let z = [c(re1, im1), c(re2, im2)];
            let w = [c(wre1, wim1), c(wre2, wim2)];
            prop_assume!(z.iter().map(|v| v.norm_sqr()).sum::<f64>() < 0.8);
            prop_assume!(w.iter().map(|v| v.norm_sqr()).sum::<f64>() < 0.8);
            let zp = BallPoint::new(&z).unwrap();
            let wp = BallPoint::new(&w).unwrap();
            let once = moebius(&zp, &wp).unwrap();
            // 1 - |phi_z(w)|^2 matches the product form.
            let direct = 1.0 - once.norm_sqr();
            let product = one_minus_phi_sqr(&zp, &wp).unwrap();
            prop_assert!((direct - product).abs() < 1e-12);
            let twice = moebius(&zp, &once).unwrap();
            for (a, b) in twice.coords().iter().zip(wp.coords()) {
                prop_assert!((a - b).norm() < 1e-11);
            }
        }
    }
}
