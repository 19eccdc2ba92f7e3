//! Experiment configuration: JSON schema, defaults, command-line
//! overrides, and the digest stamped into every output file.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use bergman_core::basis::{build_space, TruncatedSpace};
use bergman_core::compactness::SuiteConfig;
use bergman_core::geometry::SpaceParams;
use bergman_core::operators::OperatorExpression;
use bergman_core::quadrature::build_rule_seeded;
use bergman_core::symbols::SymbolSpec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// Schur-test section of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchurSection {
    /// Run the Schur bound check during `special` (needs an expression).
    pub run: bool,
    /// Hölder exponent.
    pub p: f64,
    /// Weight exponent; `null` picks the window midpoint.
    pub epsilon: Option<f64>,
    /// Inner radius of the adjoint-side shell.
    pub shell_radius: f64,
    /// Grid radii for both inequality sweeps.
    pub grid_radii: usize,
    /// Grid angles for both inequality sweeps.
    pub grid_angles: usize,
    /// Both ratios must stay at or below this.
    pub max_ratio: f64,
    /// Refinement gaps above this flag numerical instability.
    pub max_refinement_gap: f64,
}

impl Default for SchurSection {
    fn default() -> Self {
        Self {
            run: false,
            p: 1.1,
            epsilon: None,
            shell_radius: 0.7,
            grid_radii: 10,
            grid_angles: 10,
            max_ratio: 1.05,
            max_refinement_gap: 1e-2,
        }
    }
}

/// Special-integral section: which `F` and `J` tables to produce.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecialSection {
    /// Kernel-power exponents for the `F` table.
    pub s_list: Vec<f64>,
    /// Boundary-weight exponents shared by both tables.
    pub t_list: Vec<f64>,
    /// Growth offsets for the `J` table.
    pub c_list: Vec<f64>,
    /// Probe radii approaching the boundary.
    pub radii: Vec<f64>,
}

impl Default for SpecialSection {
    fn default() -> Self {
        Self {
            s_list: vec![2.0, 4.0],
            t_list: vec![1.0],
            c_list: vec![-0.5],
            radii: (0..8)
                .map(|k| 1.0 - 0.1 * (0.001f64 / 0.1).powf(k as f64 / 7.0))
                .collect(),
        }
    }
}

/// Profile section: which boundary functional `profile` sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// `"berezin-sup"`, `"weak-pairing"`, or `"pnorm"`.
    pub quantity: String,
    /// Exponent for the `pnorm` quantity.
    pub p: f64,
    /// Largest test-vector order for `weak-pairing`.
    pub max_order: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            quantity: "berezin-sup".into(),
            p: 3.0,
            max_order: 4,
        }
    }
}

/// Optional overrides of the equivalence-suite thresholds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    /// Deepest singular index compared across degrees.
    pub sigma_k_max: Option<usize>,
    /// Allowed relative drift of matched singular values.
    pub sigma_drift_tol: Option<f64>,
    /// Rank threshold as a fraction of the leading singular value.
    pub rank_eps_fraction: Option<f64>,
    /// Outer/inner ratio at or below which a profile decays.
    pub decay_ratio: Option<f64>,
    /// Outer/inner ratio at or above which a profile persists.
    pub persist_ratio: Option<f64>,
}

/// The complete experiment configuration. Every field has a default, so
/// an empty document (or no `--config` at all) is a valid experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Complex ball dimension.
    pub n: usize,
    /// Weight exponent, `> -1`.
    pub alpha: f64,
    /// Matrix dimension of the target space.
    pub d: usize,
    /// Truncation degrees, ascending.
    pub degrees: Vec<usize>,
    /// Base quadrature resolution (raised automatically with the degree).
    pub resolution: usize,
    /// Seed for random draws and the randomized two-dimensional rule.
    pub seed: u64,
    /// Named symbols available to the expression.
    pub catalog: BTreeMap<String, SymbolSpec>,
    /// Operator document `{"sum": [{"product": ["id", ...]}, ...]}`.
    pub expression: Option<serde_json::Value>,
    /// Profile radii (defaults to a boundary-approaching ladder).
    pub radii: Option<Vec<f64>>,
    /// Ray directions as `[re, im]` pairs per coordinate.
    pub directions: Option<Vec<Vec<[f64; 2]>>>,
    /// Integrability exponents for the suite's `L^p` condition.
    pub p_list: Vec<f64>,
    /// Largest test-vector order for the suite's weak-pairing condition.
    pub weak_max_order: usize,
    /// Schur-test options.
    pub schur: SchurSection,
    /// Special-integral options.
    pub special: SpecialSection,
    /// Profile options.
    pub profile: ProfileSection,
    /// Equivalence-suite threshold overrides.
    pub suite: SuiteSection,
    /// Multiplies every baseline tolerance of `verify-lemmas`.
    pub tolerance_scale: f64,
    /// Replaces every tolerance of `verify-lemmas` outright when set.
    pub tolerance_override: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 1,
            alpha: 0.0,
            d: 2,
            degrees: vec![16],
            resolution: 40,
            seed: 7,
            catalog: BTreeMap::new(),
            expression: None,
            radii: None,
            directions: None,
            p_list: vec![2.0, 4.0],
            weak_max_order: 6,
            schur: SchurSection::default(),
            special: SpecialSection::default(),
            profile: ProfileSection::default(),
            suite: SuiteSection::default(),
            tolerance_scale: 1.0,
            tolerance_override: None,
        }
    }
}

impl ExperimentConfig {
    /// Loads a configuration file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Failure::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    Failure::Config(format!("malformed config {}: {e}", p.display()))
                })
            }
        }
    }

    /// Basic shape validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), Failure> {
        if self.degrees.is_empty() {
            return Err(Failure::Config("degrees must be nonempty".into()));
        }
        if self.degrees.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Failure::Config("degrees must increase strictly".into()));
        }
        Ok(())
    }

    /// Hex digest of the effective configuration, stamped into outputs.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The space parameters of the experiment.
    pub fn params(&self) -> Result<SpaceParams, Failure> {
        Ok(SpaceParams::new(self.n, self.alpha, self.d)?)
    }

    /// Builds the truncated space at the given degree, raising the
    /// resolution to what the construction certificates demand.
    pub fn space_at(&self, degree: usize) -> Result<Arc<TruncatedSpace>, Failure> {
        let params = self.params()?;
        let floor = match params.n {
            1 => 2 * degree + 1,
            _ => 4 * (degree + 5),
        };
        let resolution = self.resolution.max(floor).next_multiple_of(8);
        let rule = build_rule_seeded(&params, resolution, self.seed)?;
        Ok(Arc::new(build_space(&params, degree, rule)?))
    }

    /// Instantiates the catalog and resolves the expression document.
    pub fn build_expression(&self) -> Result<OperatorExpression, Failure> {
        let params = self.params()?;
        let doc = self.expression.as_ref().ok_or_else(|| {
            Failure::Config(
                "this command needs an \"expression\" document and a \"catalog\" in the config"
                    .into(),
            )
        })?;
        let mut catalog = HashMap::new();
        for (id, spec) in &self.catalog {
            catalog.insert(id.clone(), spec.build(&params)?);
        }
        Ok(OperatorExpression::from_json(doc, &catalog)?)
    }

    /// Profile radii: configured or the default boundary ladder.
    pub fn profile_radii(&self) -> Vec<f64> {
        self.radii
            .clone()
            .unwrap_or_else(bergman_core::berezin::default_radii)
    }

    /// Ray directions: configured or the default spread for `n`.
    pub fn ray_directions(&self) -> Result<Vec<Vec<Complex64>>, Failure> {
        match &self.directions {
            None => Ok(bergman_core::berezin::default_directions(self.n)),
            Some(raw) => {
                let mut dirs = Vec::with_capacity(raw.len());
                for coords in raw {
                    if coords.len() != self.n {
                        return Err(Failure::Config(format!(
                            "direction has {} coordinates, space has n = {}",
                            coords.len(),
                            self.n
                        )));
                    }
                    dirs.push(
                        coords
                            .iter()
                            .map(|[re, im]| Complex64::new(*re, *im))
                            .collect(),
                    );
                }
                Ok(dirs)
            }
        }
    }

    /// Assembles the equivalence-suite configuration.
    pub fn suite_config(&self) -> Result<SuiteConfig, Failure> {
        let mut sc = SuiteConfig::standard(self.n);
        sc.degrees = self.degrees.clone();
        sc.resolution = self.resolution;
        if let Some(r) = &self.radii {
            sc.radii = r.clone();
        }
        sc.directions = self.ray_directions()?;
        sc.p_list = self.p_list.clone();
        sc.weak_max_order = self.weak_max_order;
        sc.seed = self.seed;
        if let Some(v) = self.suite.sigma_k_max {
            sc.sigma_k_max = v;
        }
        if let Some(v) = self.suite.sigma_drift_tol {
            sc.sigma_drift_tol = v;
        }
        if let Some(v) = self.suite.rank_eps_fraction {
            sc.rank_eps_fraction = v;
        }
        if let Some(v) = self.suite.decay_ratio {
            sc.decay_ratio = v;
        }
        if let Some(v) = self.suite.persist_ratio {
            sc.persist_ratio = v;
        }
        Ok(sc)
    }
}
