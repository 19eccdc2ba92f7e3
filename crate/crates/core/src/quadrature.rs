//! Quadrature rules realizing the normalized weighted measures on `B^n`.
//!
//! The target measure is `dv_alpha = c_alpha (1 - |z|^2)^alpha dV`, normalized
//! so the ball has mass one. Rules store positive weights that sum to one;
//! the closed-form constant `c_alpha` appears only as a consistency check.
//!
//! Two schemes are provided:
//!
//! * `disk-tensor` (n = 1): Gauss panels in the radial variable `u = r^2`
//!   tensored with an equispaced angular grid. The radial axis is graded
//!   toward the boundary (panel breaks at r = 0.9, 0.99, 0.999) and the last
//!   panel uses a Gauss–Jacobi rule that integrates the weight
//!   `(1 - u)^alpha` exactly, so boundary-peaked integrands are resolved.
//!   The angular grid integrates trigonometric monomials exactly, which makes
//!   monomial orthogonality on the disk exact up to rounding.
//!
//! * `ball2-montecarlo` (n = 2): a randomized rank-1 lattice in the radial
//!   pair `(u, s) = (|w|^2, |w_2|^2/|w|^2)` — with `u` drawn through the
//!   inverse distribution function of the exact radial density — tensored
//!   with equispaced grids in the two torus angles. Torus symmetry is exact;
//!   the lattice part carries an honest two-level error estimate and a
//!   recorded seed.
//!
//! The special integrals of kernel type,
//!
//! ```text
//! F_{s,t}(z) = integral (1 - |w|^2)^t / |1 - <w, z>|^s          dv(w)
//! J_{c,t}(z) = integral (1 - |w|)^t  / |1 - <z, w>|^(n+1+t+c)   dv_alpha(w)
//! ```
//!
//! (`dv` the normalized unweighted volume) are evaluated by dedicated graded
//! grids whose angular resolution adapts to `|z|`, so boundary growth rates
//! can be profiled up to `|z| = 0.999`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{hermitian_inner, BallPoint, SpaceParams};

/// Default seed for randomized schemes when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 1_234_567;

/// Radial panel breaks (in `r = |w|`) of the boundary-graded disk rule.
const RADIAL_BREAKS: [f64; 5] = [0.9, 0.96, 0.99, 0.996, 0.999];

/// Identifier of the quadrature scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeTag {
    /// Graded Gauss panels in radius tensored with an equispaced angle (n = 1).
    #[serde(rename = "disk-tensor")]
    DiskTensor,
    /// Randomized radial lattice tensored with exact torus angles (n = 2).
    #[serde(rename = "ball2-montecarlo")]
    Ball2MonteCarlo,
    /// Explicit node/weight list, typically deserialized from JSON.
    #[serde(rename = "explicit")]
    Explicit,
}

/// Internal layout of a rule; exposes the tensor structure to fast paths.
#[derive(Debug, Clone)]
enum Structure {
    DiskTensor {
        /// Radial nodes `r_k` (in (0,1)), boundary-graded.
        radii: Vec<f64>,
        /// Radial weights, summing to one.
        radial_weights: Vec<f64>,
        /// Number of equispaced angular nodes.
        angular: usize,
    },
    Ball2 {
        /// Lattice points `(u, s)`; `u = |w|^2` follows the exact radial law.
        us: Vec<(f64, f64)>,
        /// Angular node counts for the two torus factors.
        m1: usize,
        m2: usize,
    },
    Explicit {
        nodes: Vec<BallPoint>,
        weights: Vec<f64>,
    },
}

/// A positive quadrature rule for `dv_alpha` on `B^n` with total mass one.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    params: SpaceParams,
    scheme: SchemeTag,
    resolution: usize,
    seed: Option<u64>,
    est_error: f64,
    structure: Structure,
}

impl QuadratureRule {
    /// Space parameters the rule was built for.
    pub fn params(&self) -> &SpaceParams {
        &self.params
    }

    /// Scheme identifier.
    pub fn scheme(&self) -> SchemeTag {
        self.scheme
    }

    /// Resolution parameter used to build the rule.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Recorded seed (randomized schemes only).
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Two-level error estimate for smooth integrands.
    pub fn est_error(&self) -> f64 {
        self.est_error
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        match &self.structure {
            Structure::DiskTensor { radii, angular, .. } => radii.len() * angular,
            Structure::Ball2 { us, m1, m2 } => us.len() * m1 * m2,
            Structure::Explicit { nodes, .. } => nodes.len(),
        }
    }

    /// True when the rule has no nodes (never the case for built rules).
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest monomial degree whose torus harmonics the angular grids
    /// integrate exactly, when the rule has tensor structure.
    pub fn max_exact_angular_degree(&self) -> Option<usize> {
        match &self.structure {
            Structure::DiskTensor { angular, .. } => Some((angular - 1) / 2),
            Structure::Ball2 { m1, m2, .. } => Some((m1.min(m2) - 1) / 2),
            Structure::Explicit { .. } => None,
        }
    }

    /// Visits every `(node, weight)` pair in a fixed deterministic order.
    pub fn for_each_node(&self, mut visit: impl FnMut(&BallPoint, f64)) {
        match &self.structure {
            Structure::DiskTensor {
                radii,
                radial_weights,
                angular,
            } => {
                let phases = unit_circle(*angular);
                for (r, rw) in radii.iter().zip(radial_weights) {
                    let w = rw / *angular as f64;
                    for ph in &phases {
                        let node =
                            BallPoint::new_unchecked(1, [r * ph, Complex64::new(0.0, 0.0)]);
                        visit(&node, w);
                    }
                }
            }
            Structure::Ball2 { us, m1, m2 } => {
                let p1 = unit_circle(*m1);
                let p2 = unit_circle(*m2);
                let w = 1.0 / (us.len() * m1 * m2) as f64;
                for &(u, s) in us {
                    let r1 = (u * (1.0 - s)).sqrt();
                    let r2 = (u * s).sqrt();
                    for a in &p1 {
                        for b in &p2 {
                            let node = BallPoint::new_unchecked(2, [r1 * a, r2 * b]);
                            visit(&node, w);
                        }
                    }
                }
            }
            Structure::Explicit { nodes, weights } => {
                for (node, w) in nodes.iter().zip(weights) {
                    visit(node, *w);
                }
            }
        }
    }

    /// Weighted sum `sum_k w_k f(z_k)` approximating the integral of `f`
    /// against `dv_alpha`. The summation order is fixed and compensated,
    /// so rounding stays near machine precision even for large rules.
    pub fn integrate(&self, f: impl Fn(&BallPoint) -> Complex64) -> Complex64 {
        let mut re = Kahan::default();
        let mut im = Kahan::default();
        self.for_each_node(|node, w| {
            let v = w * f(node);
            re.add(v.re);
            im.add(v.im);
        });
        Complex64::new(re.total(), im.total())
    }

    /// Real-valued variant of [`QuadratureRule::integrate`].
    pub fn integrate_real(&self, f: impl Fn(&BallPoint) -> f64) -> f64 {
        let mut acc = Kahan::default();
        self.for_each_node(|node, w| acc.add(w * f(node)));
        acc.total()
    }

    /// Integrates a `C^d`-valued integrand component-wise.
    pub fn integrate_vector(
        &self,
        d: usize,
        f: impl Fn(&BallPoint) -> DVector<Complex64>,
    ) -> DVector<Complex64> {
        let mut acc = DVector::from_element(d, Complex64::new(0.0, 0.0));
        self.for_each_node(|node, w| {
            let v = f(node);
            debug_assert_eq!(v.len(), d);
            acc.axpy(Complex64::new(w, 0.0), &v, Complex64::new(1.0, 0.0));
        });
        acc
    }

    /// Tensor structure of a disk rule: `(radii, radial weights, angular count)`.
    pub(crate) fn disk_tensor(&self) -> Option<(&[f64], &[f64], usize)> {
        match &self.structure {
            Structure::DiskTensor {
                radii,
                radial_weights,
                angular,
            } => Some((radii, radial_weights, *angular)),
            _ => None,
        }
    }

    /// Serializes the rule with explicit node and weight lists.
    ///
    /// # Errors
    /// Refuses rules beyond two million nodes.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        if self.len() > 2_000_000 {
            return Err(CoreError::InvalidParams(format!(
                "rule with {} nodes is too large to serialize",
                self.len()
            )));
        }
        let mut nodes = Vec::with_capacity(self.len());
        let mut weights = Vec::with_capacity(self.len());
        self.for_each_node(|node, w| {
            nodes.push(
                node.coords()
                    .iter()
                    .map(|c| [c.re, c.im])
                    .collect::<Vec<_>>(),
            );
            weights.push(w);
        });
        Ok(serde_json::json!({
            "scheme_tag": self.scheme,
            "params": {
                "n": self.params.n,
                "alpha": self.params.alpha,
                "d": self.params.d,
                "resolution": self.resolution,
                "seed": self.seed,
            },
            "nodes": nodes,
            "weights": weights,
            "est_error": self.est_error,
        }))
    }

    /// Reconstructs a rule from its JSON form as an explicit node list.
    ///
    /// # Errors
    /// Rejects malformed JSON, mismatched lengths, and invalid nodes.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Params {
            n: usize,
            alpha: f64,
            d: usize,
            resolution: usize,
            seed: Option<u64>,
        }
        #[derive(Deserialize)]
        struct Wire {
            scheme_tag: SchemeTag,
            params: Params,
            nodes: Vec<Vec<[f64; 2]>>,
            weights: Vec<f64>,
            est_error: f64,
        }
        let wire: Wire = serde_json::from_value(value.clone())
            .map_err(|e| CoreError::InvalidParams(format!("malformed rule JSON: {e}")))?;
        if wire.nodes.len() != wire.weights.len() {
            return Err(CoreError::InvalidParams(format!(
                "node/weight length mismatch: {} vs {}",
                wire.nodes.len(),
                wire.weights.len()
            )));
        }
        let params = SpaceParams::new(wire.params.n, wire.params.alpha, wire.params.d)?;
        let nodes = wire
            .nodes
            .iter()
            .map(|c| {
                let coords: Vec<Complex64> =
                    c.iter().map(|p| Complex64::new(p[0], p[1])).collect();
                BallPoint::new(&coords)
            })
            .collect::<Result<Vec<_>>>()?;
        let _ = wire.scheme_tag;
        Ok(Self {
            params,
            scheme: SchemeTag::Explicit,
            resolution: wire.params.resolution,
            seed: wire.params.seed,
            est_error: wire.est_error,
            structure: Structure::Explicit {
                nodes,
                weights: wire.weights,
            },
        })
    }
}

/// Compensated (Kahan) accumulator for long deterministic sums.
#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum
    }
}

/// Equispaced unit-circle samples `exp(2 pi i j / m)`, `j = 0..m`.
fn unit_circle(m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
            let (s, c) = theta.sin_cos();
            Complex64::new(c, s)
        })
        .collect()
}

// ─── Gauss rules via the tridiagonal eigenproblem ───

/// Nodes and weights of the `k`-point Gauss–Legendre rule on `[-1, 1]`.
pub(crate) fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_jacobi(k, 0.0)
}

/// Nodes and weights of the `k`-point Gauss rule for the weight
/// `(1 - x)^a` on `[-1, 1]` (Jacobi weight with second exponent zero),
/// computed from the symmetric tridiagonal recurrence matrix.
pub(crate) fn gauss_jacobi(k: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1, "need at least one node");
    assert!(a > -1.0, "Jacobi exponent must exceed -1");
    // Monic three-term recurrence for the weight (1-x)^a (1+x)^0.
    let diag: Vec<f64> = (0..k)
        .map(|i| {
            if i == 0 {
                -a / (a + 2.0)
            } else {
                let j = i as f64;
                -a * a / ((2.0 * j + a) * (2.0 * j + a + 2.0))
            }
        })
        .collect();
    let offdiag: Vec<f64> = (1..k)
        .map(|i| {
            let j = i as f64;
            let b = if i == 1 {
                4.0 * (a + 1.0) / ((a + 2.0) * (a + 2.0) * (a + 3.0))
            } else {
                4.0 * j * j * (j + a) * (j + a)
                    / ((2.0 * j + a) * (2.0 * j + a) * (2.0 * j + a + 1.0) * (2.0 * j + a - 1.0))
            };
            b.sqrt()
        })
        .collect();
    // Zeroth moment of the weight: 2^(a+1) / (a+1).
    let mu0 = 2f64.powf(a + 1.0) / (a + 1.0);

    let mut m = DMatrix::<f64>::zeros(k, k);
    for (i, v) in diag.iter().enumerate() {
        m[(i, i)] = *v;
    }
    for (i, v) in offdiag.iter().enumerate() {
        m[(i, i + 1)] = *v;
        m[(i + 1, i)] = *v;
    }
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let first = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * first * first)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite nodes"));
    pairs.into_iter().unzip()
}

// ─── Radial profiles on [0, 1] in the variable r = |w| ───

/// Radial quadrature for the density proportional to
/// `2 r^(2n-1) (1 - r^2)^a dr` on `[0, 1]`, graded toward `r = 1`.
///
/// Interior panels use Gauss–Legendre in `r` with the density folded in
/// (working in `r` keeps factors like `(1 + r)^t` analytic everywhere);
/// the last panel (beyond `r = 0.999`) uses Gauss–Jacobi so the `(1-r)^a`
/// branch of the weight is integrated exactly. Returned weights are
/// normalized to sum to one; `raw_mass` is the unnormalized total.
pub(crate) struct RadialProfile {
    /// Nodes `r_k` in `(0, 1)`.
    pub r: Vec<f64>,
    /// Normalized weights.
    pub w: Vec<f64>,
    /// Unnormalized mass, to compare with `B(n, a+1)`.
    pub raw_mass: f64,
}

pub(crate) fn radial_profile(ball_dim: usize, a: f64, per_panel: &[usize; 6]) -> RadialProfile {
    radial_profile_impl(ball_dim, a, per_panel, None)
}

/// The stock radial rule with its interior panels additionally split at
/// `kink`, so an integrand that is smooth away from the circle `|w| = kink`
/// is piecewise-analytic on every panel. Returns `None` when the split
/// would be degenerate (outside the interior panels, or on an existing
/// edge), in which case the stock rule already has an edge there.
pub(crate) fn radial_profile_split(
    ball_dim: usize,
    a: f64,
    per_panel: &[usize; 6],
    kink: f64,
) -> Option<RadialProfile> {
    let last = *RADIAL_BREAKS.last().expect("non-empty break list");
    if !(kink > 1e-9 && kink < last - 1e-9) {
        return None;
    }
    if RADIAL_BREAKS.iter().any(|b| (b - kink).abs() < 1e-9) {
        return None;
    }
    Some(radial_profile_impl(ball_dim, a, per_panel, Some(kink)))
}

fn radial_profile_impl(
    ball_dim: usize,
    a: f64,
    per_panel: &[usize; 6],
    split: Option<f64>,
) -> RadialProfile {
    let mut r_nodes = Vec::new();
    let mut w_nodes = Vec::new();
    let power = (2 * ball_dim - 1) as i32; // r^(2n-1) factor of the density

    // Interior panels: Gauss–Legendre with the density folded in. A split
    // radius divides its containing panel in two, each keeping the full
    // point count: Gauss handles endpoint kinks far better than interior
    // ones, and the split sides are analytic for the integrands marking one.
    let mut edges = vec![0.0];
    edges.extend_from_slice(&RADIAL_BREAKS);
    let mut panels: Vec<(f64, f64, usize)> = Vec::new();
    for p in 0..RADIAL_BREAKS.len() {
        let (lo, hi) = (edges[p], edges[p + 1]);
        match split {
            Some(s) if s > lo && s < hi => {
                panels.push((lo, s, per_panel[p]));
                panels.push((s, hi, per_panel[p]));
            }
            _ => panels.push((lo, hi, per_panel[p])),
        }
    }
    for (lo, hi, count) in panels {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let (x, wt) = gauss_legendre(count);
        for (xi, wi) in x.iter().zip(&wt) {
            let r = mid + half * xi;
            r_nodes.push(r);
            w_nodes.push(half * wi * 2.0 * r.powi(power) * (1.0 - r * r).powf(a));
        }
    }
    // Boundary panel: Gauss–Jacobi integrates the (1-r)^a branch exactly;
    // the analytic remainder 2 r^(2n-1) (1+r)^a is folded in.
    let lo = *RADIAL_BREAKS.last().expect("non-empty break list");
    let scale = 0.5 * (1.0 - lo);
    let (x, wt) = gauss_jacobi(per_panel[5], a);
    for (xi, wi) in x.iter().zip(&wt) {
        let r = lo + scale * (xi + 1.0);
        r_nodes.push(r);
        w_nodes.push(scale.powf(a + 1.0) * wi * 2.0 * r.powi(power) * (1.0 + r).powf(a));
    }

    let mut raw = Kahan::default();
    for w in &w_nodes {
        raw.add(*w);
    }
    let raw_mass = raw.total();
    for w in &mut w_nodes {
        *w /= raw_mass;
    }
    RadialProfile {
        r: r_nodes,
        w: w_nodes,
        raw_mass,
    }
}

/// `B(n, a+1) = integral_0^1 u^(n-1) (1-u)^a du` for n in {1, 2}.
pub(crate) fn radial_mass(ball_dim: usize, a: f64) -> f64 {
    match ball_dim {
        1 => 1.0 / (a + 1.0),
        2 => 1.0 / ((a + 1.0) * (a + 2.0)),
        _ => unreachable!("dimensions restricted at construction"),
    }
}

pub(crate) fn panel_counts(resolution: usize) -> [usize; 6] {
    let inner = resolution.max(4);
    let outer = (resolution / 2).max(6);
    [inner, outer, outer, outer, outer, outer]
}

// ─── Rule builders ───

/// Builds the standard rule for `params` with the default seed.
///
/// # Errors
/// See [`build_rule_seeded`].
pub fn build_rule(params: &SpaceParams, resolution: usize) -> Result<QuadratureRule> {
    build_rule_seeded(params, resolution, DEFAULT_SEED)
}

/// Builds the standard rule for `params`; `seed` feeds the randomized
/// n = 2 scheme and is ignored for the deterministic disk rule.
///
/// # Errors
/// Rejects `resolution < 4`; for n = 1 also fails when the two-level
/// comparison cannot certify `est_error <= 1e-10`.
pub fn build_rule_seeded(
    params: &SpaceParams,
    resolution: usize,
    seed: u64,
) -> Result<QuadratureRule> {
    if resolution < 4 {
        return Err(CoreError::ResolutionTooSmall {
            got: resolution,
            min: 4,
        });
    }
    match params.n {
        1 => {
            let rule = build_disk_rule(params, resolution, 4 * resolution);
            let coarse = build_disk_rule(params, (3 * resolution / 4).max(4), 4 * resolution);
            let est = certify_disk(params, &rule, &coarse).max(1e-15);
            if est > 1e-10 {
                return Err(CoreError::QuadratureInstability {
                    context: format!(
                        "disk rule at resolution {resolution} failed to certify 1e-10"
                    ),
                    est_error: est,
                });
            }
            Ok(QuadratureRule { est_error: est, ..rule })
        }
        2 => {
            let rule = build_ball2_rule(params, resolution, seed);
            let coarse = build_ball2_rule(params, (resolution / 2).max(4), seed ^ 0x9E37);
            let est = estimate_ball2(params, &rule, &coarse).max(1e-15);
            Ok(QuadratureRule { est_error: est, ..rule })
        }
        n => Err(CoreError::UnsupportedDimension(n)),
    }
}

// ─── Closed-form probes for error estimation ───

/// `integral |w|^(2k) dv_alpha` on the disk: `prod_{j=1}^{k} j / (j+1+alpha)`.
fn disk_moment(alpha: f64, k: usize) -> f64 {
    (1..=k).fold(1.0, |m, j| m * j as f64 / (j as f64 + 1.0 + alpha))
}

/// `E[u^k]` for the n = 2 radial law `~ u (1-u)^alpha`:
/// `prod_{j=2}^{k+1} j / (j+1+alpha)`.
fn ball2_u_moment(alpha: f64, k: usize) -> f64 {
    (1..=k).fold(1.0, |m, j| m * (j as f64 + 1.0) / (j as f64 + 2.0 + alpha))
}

/// `integral |1 - b conj(w)|^(-4) dv_alpha` on the disk, by the expansion
/// `sum_k (k+1)^2 b^(2k) integral |w|^(2k) dv_alpha`.
fn pole4_disk(alpha: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    let mut moment = 1.0;
    let mut bpow = 1.0;
    for k in 0..600 {
        let term = (k as f64 + 1.0) * (k as f64 + 1.0) * bpow * moment;
        acc += term;
        if term < 1e-18 * acc {
            break;
        }
        moment *= (k as f64 + 1.0) / (k as f64 + 2.0 + alpha);
        bpow *= b * b;
    }
    acc
}

/// `integral |1 - b conj(w_1)|^(-2) dv_alpha` on `B^2`, by the expansion
/// `sum_k b^(2k) E[u^k] / (k+1)`.
fn pole2_ball2(alpha: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    let mut bpow = 1.0;
    for k in 0..600 {
        let term = bpow * ball2_u_moment(alpha, k) / (k as f64 + 1.0);
        acc += term;
        if term < 1e-18 * acc {
            break;
        }
        bpow *= b * b;
    }
    acc
}

/// Error estimate for the disk rule: exact-value deviations on moment and
/// kernel-pole probes, plus a radial two-level comparison at shared angular
/// resolution. All probes are of the kernel–polynomial type the rule serves.
fn certify_disk(params: &SpaceParams, fine: &QuadratureRule, coarse: &QuadratureRule) -> f64 {
    let alpha = params.alpha;
    let pole = |z: &BallPoint| {
        let d = (Complex64::new(1.0, 0.0) - 0.7 * z.coords()[0].conj()).norm_sqr();
        1.0 / (d * d)
    };
    let closed_checks = [
        (fine.integrate_real(|_| 1.0) - 1.0).abs(),
        (fine.integrate_real(|z| z.norm_sqr()) - disk_moment(alpha, 1)).abs(),
        (fine.integrate_real(|z| z.norm_sqr().powi(8)) - disk_moment(alpha, 8)).abs(),
        (fine.integrate_real(&pole) - pole4_disk(alpha, 0.7)).abs(),
    ];
    let raw = radial_profile(1, alpha, &panel_counts(fine.resolution)).raw_mass;
    let mass_check = (raw / radial_mass(1, alpha) - 1.0).abs();
    let two_level = [
        (fine.integrate_real(&pole) - coarse.integrate_real(&pole)).abs(),
        (fine.integrate_real(|z| (1.0 - z.norm_sqr()).powi(2) * z.norm_sqr())
            - coarse.integrate_real(|z| (1.0 - z.norm_sqr()).powi(2) * z.norm_sqr()))
        .abs(),
    ];
    closed_checks
        .into_iter()
        .chain([mass_check])
        .chain(two_level)
        .fold(0.0, f64::max)
}

/// Honest error estimate for the randomized n = 2 rule: exact-value
/// deviations on moments and a kernel pole, plus a two-level comparison.
fn estimate_ball2(params: &SpaceParams, fine: &QuadratureRule, coarse: &QuadratureRule) -> f64 {
    let alpha = params.alpha;
    let pole = |z: &BallPoint| {
        1.0 / (Complex64::new(1.0, 0.0) - 0.5 * z.coords()[0].conj()).norm_sqr()
    };
    let quartic = |z: &BallPoint| z.coords()[1].norm_sqr().powi(2);
    let closed_checks = [
        (fine.integrate_real(|_| 1.0) - 1.0).abs(),
        (fine.integrate_real(|z| z.coords()[0].norm_sqr()) - ball2_u_moment(alpha, 1) / 2.0)
            .abs(),
        (fine.integrate_real(|z| z.norm_sqr().powi(2)) - ball2_u_moment(alpha, 2)).abs(),
        (fine.integrate_real(&pole) - pole2_ball2(alpha, 0.5)).abs(),
    ];
    let two_level = [
        (fine.integrate_real(&pole) - coarse.integrate_real(&pole)).abs(),
        (fine.integrate_real(&quartic) - coarse.integrate_real(&quartic)).abs(),
    ];
    closed_checks
        .into_iter()
        .chain(two_level)
        .fold(0.0, f64::max)
}

/// Disk rule with an explicit angular count; used by callers that must
/// resolve integrands peaked near the boundary (the angular grid needs
/// roughly `64 / (1 - |z|)` nodes to resolve a kernel pole at `z`).
pub(crate) fn build_disk_rule(
    params: &SpaceParams,
    resolution: usize,
    angular: usize,
) -> QuadratureRule {
    let radial = radial_profile(1, params.alpha, &panel_counts(resolution));
    let angular = angular.max(8);
    QuadratureRule {
        params: *params,
        scheme: SchemeTag::DiskTensor,
        resolution,
        seed: None,
        est_error: f64::NAN, // set by callers that certify
        structure: Structure::DiskTensor {
            radii: radial.r,
            radial_weights: radial.w,
            angular,
        },
    }
}

/// Angular node count that resolves kernel poles at distance `1 - z_abs`
/// from the integration circle.
pub(crate) fn adaptive_angular(z_abs: f64, floor: usize, cap: usize) -> usize {
    let needed = (64.0 / (1.0 - z_abs).max(1e-4)).ceil() as usize;
    needed.clamp(floor, cap).next_multiple_of(8)
}

/// Inverse distribution function of the density `~ u (1 - u)^a` on `[0, 1]`,
/// whose distribution function is `1 - (a+2)(1-u)^(a+1) + (a+1)(1-u)^(a+2)`.
pub(crate) fn inverse_radial_cdf_ball2(a: f64, target: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&target));
    let cdf = |u: f64| {
        let v = 1.0 - u;
        1.0 - (a + 2.0) * v.powf(a + 1.0) + (a + 1.0) * v.powf(a + 2.0)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // Bisection: 60 halvings give ~1e-18 resolution, plenty below weights.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn fibonacci_at_least(k: usize) -> (usize, usize) {
    let (mut a, mut b) = (1usize, 2usize);
    while b < k {
        let next = a + b;
        a = b;
        b = next;
    }
    (a, b) // (generator, count)
}

fn build_ball2_rule(params: &SpaceParams, resolution: usize, seed: u64) -> QuadratureRule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = (rng.gen::<f64>(), rng.gen::<f64>());
    let (gen_vec, count) = fibonacci_at_least((resolution * resolution / 4).max(64));
    let us: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let x1 = (i as f64 / count as f64 + shift.0).fract();
            let x2 = (i as f64 * gen_vec as f64 / count as f64 + shift.1).fract();
            let u = inverse_radial_cdf_ball2(params.alpha, x1);
            (u, x2)
        })
        .collect();
    let m = ((resolution / 4).max(8) + 1) | 1; // odd angular counts
    QuadratureRule {
        params: *params,
        scheme: SchemeTag::Ball2MonteCarlo,
        resolution,
        seed: Some(seed),
        est_error: f64::NAN,
        structure: Structure::Ball2 { us, m1: m, m2: m },
    }
}

// ─── Change of variables ───

/// Result of the Möbius change-of-variables identity check.
#[derive(Debug, Clone, Copy)]
pub struct ChangeOfVariables {
    /// `integral f dv_alpha`.
    pub plain: Complex64,
    /// `integral (f o phi_z) |k_z|^2 dv_alpha`.
    pub transformed: Complex64,
    /// `|plain - transformed|`.
    pub discrepancy: f64,
}

/// Checks `integral f dv_alpha = integral (f o phi_z) |k_z|^2 dv_alpha`,
/// with `k_z` the normalized reproducing kernel; both sides use `rule`.
///
/// # Errors
/// Propagates dimension mismatches from the Möbius map.
pub fn change_of_variables_check(
    rule: &QuadratureRule,
    z: &BallPoint,
    f: impl Fn(&BallPoint) -> Complex64,
) -> Result<ChangeOfVariables> {
    let kappa = rule.params().kernel_exponent();
    let one_minus_zsq = 1.0 - z.norm_sqr();
    let plain = rule.integrate(&f);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut failure: Option<CoreError> = None;
    rule.for_each_node(|w, wt| {
        if failure.is_some() {
            return;
        }
        match crate::geometry::moebius(z, w) {
            Ok(img) => {
                let denom = Complex64::new(1.0, 0.0) - hermitian_inner(w, z);
                let kz_sq = (one_minus_zsq / denom.norm_sqr()).powf(kappa);
                acc += wt * kz_sq * f(&img);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ChangeOfVariables {
        plain,
        transformed: acc,
        discrepancy: (plain - acc).norm(),
    })
}

// ─── Special integrals F and J ───

/// `F_{s,t}(z)`: integral of `(1-|w|^2)^t / |1 - <w,z>|^s` against the
/// normalized unweighted volume. Bounded iff `s < n+1+t`; grows like
/// `(1-|z|^2)^(n+1+t-s)` when `s > n+1+t`.
///
/// # Errors
/// Requires `t > -1` and `s >= 0`.
pub fn f_integral(n: usize, s: f64, t: f64, z: &BallPoint, resolution: usize) -> Result<f64> {
    if t <= -1.0 {
        return Err(CoreError::InvalidParams(format!(
            "F integral requires t > -1, got {t}"
        )));
    }
    if s < 0.0 {
        return Err(CoreError::InvalidParams(format!(
            "F integral requires s >= 0, got {s}"
        )));
    }
    if z.dim() != n {
        return Err(CoreError::DimensionMismatch {
            expected: n,
            got: z.dim(),
        });
    }
    // Fold (1-|w|^2)^t into the measure: integrate |1 - <w,z>|^{-s} against
    // the normalized t-weighted measure, then restore the mass ratio.
    let factor = radial_mass(n, t) / radial_mass(n, 0.0);
    let mean = kernel_power_mean(n, t, s, z, resolution, 0.0)?;
    Ok(factor * mean)
}

/// `J_{c,t}(z)`: integral of `(1-|w|)^t / |1 - <z,w>|^(n+1+t+c)` against
/// `dv_alpha`. Bounded for `c < 0`, `t > -1`.
///
/// # Errors
/// Requires `t > -1` and `alpha + t > -1`.
pub fn j_integral(
    params: &SpaceParams,
    c: f64,
    t: f64,
    z: &BallPoint,
    resolution: usize,
) -> Result<f64> {
    if t <= -1.0 {
        return Err(CoreError::InvalidParams(format!(
            "J integral requires t > -1, got {t}"
        )));
    }
    let a = params.alpha + t;
    if a <= -1.0 {
        return Err(CoreError::InvalidParams(format!(
            "J integral requires alpha + t > -1, got {a}"
        )));
    }
    if z.dim() != params.n {
        return Err(CoreError::DimensionMismatch {
            expected: params.n,
            got: z.dim(),
        });
    }
    // (1-|w|)^t = (1-|w|^2)^t (1+|w|)^{-t}: the first factor joins the
    // weight (Jacobi exponent alpha+t); the analytic remainder is folded in.
    let s = params.n as f64 + 1.0 + t + c;
    let factor = radial_mass(params.n, a) / radial_mass(params.n, params.alpha);
    let mean = kernel_power_mean(params.n, a, s, z, resolution, -t)?;
    Ok(factor * mean)
}

/// Mean of `(1+|w|)^(smooth_pow) |1 - <w,z>|^(-s)` against the normalized
/// `(1-|w|^2)^a`-weighted measure, with `|z|`-adaptive angular grids.
fn kernel_power_mean(
    n: usize,
    a: f64,
    s: f64,
    z: &BallPoint,
    resolution: usize,
    smooth_pow: f64,
) -> Result<f64> {
    match n {
        1 => {
            let radial = radial_profile(1, a, &panel_counts(resolution));
            let m = adaptive_angular(z.abs(), 4 * resolution, 1 << 17);
            let phases = unit_circle(m);
            let zc = z.coords()[0].conj();
            let mut acc = Kahan::default();
            for (r, rw) in radial.r.iter().zip(&radial.w) {
                let smooth = (1.0 + r).powf(smooth_pow);
                let mut ring = Kahan::default();
                for ph in &phases {
                    let denom = Complex64::new(1.0, 0.0) - zc * (r * ph);
                    ring.add(denom.norm_sqr().powf(-0.5 * s));
                }
                acc.add(rw * smooth * ring.total() / m as f64);
            }
            Ok(acc.total())
        }
        2 => {
            let params = SpaceParams::new(2, a, 1)?;
            let rule = build_ball2_rule(&params, resolution, DEFAULT_SEED);
            let mut acc = 0.0;
            rule.for_each_node(|w, wt| {
                let ip = Complex64::new(1.0, 0.0) - hermitian_inner(w, z);
                let smooth = (1.0 + w.abs()).powf(smooth_pow);
                acc += wt * smooth * ip.norm_sqr().powf(-0.5 * s);
            });
            Ok(acc)
        }
        n => Err(CoreError::UnsupportedDimension(n)),
    }
}
