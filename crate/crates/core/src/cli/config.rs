//! Experiment configuration: JSON, unknown keys rejected, every field
//! optional with the defaults below.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::adjoint::{IntegrandBasis, PathFeature, RidgePolicy};
use crate::error::{Error, Result};

/// Names of the identity checks a run can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    ItoIsometry,
    Centering,
    ClarkOcone,
    VarianceIdentity,
    Adjointness,
    Malliavin,
    FbmCovariance,
    StableCharfn,
    MixedGenerator,
    Kolmogorov,
    Dupire,
    GridRefinement,
}

impl CheckName {
    pub const ALL: [CheckName; 12] = [
        CheckName::ItoIsometry,
        CheckName::Centering,
        CheckName::ClarkOcone,
        CheckName::VarianceIdentity,
        CheckName::Adjointness,
        CheckName::Malliavin,
        CheckName::FbmCovariance,
        CheckName::StableCharfn,
        CheckName::MixedGenerator,
        CheckName::Kolmogorov,
        CheckName::Dupire,
        CheckName::GridRefinement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::ItoIsometry => "ito_isometry",
            CheckName::Centering => "centering",
            CheckName::ClarkOcone => "clark_ocone",
            CheckName::VarianceIdentity => "variance_identity",
            CheckName::Adjointness => "adjointness",
            CheckName::Malliavin => "malliavin",
            CheckName::FbmCovariance => "fbm_covariance",
            CheckName::StableCharfn => "stable_charfn",
            CheckName::MixedGenerator => "mixed_generator",
            CheckName::Kolmogorov => "kolmogorov",
            CheckName::Dupire => "dupire",
            CheckName::GridRefinement => "grid_refinement",
        }
    }

    /// Checks that integrate against the configured driver and therefore
    /// need it to be a process they support.
    fn supports(self, driver: &DriverConfig) -> bool {
        match self {
            CheckName::ItoIsometry | CheckName::Centering => !matches!(driver, DriverConfig::Fbm { .. }),
            CheckName::ClarkOcone
            | CheckName::VarianceIdentity
            | CheckName::Adjointness
            | CheckName::Malliavin
            | CheckName::GridRefinement => matches!(driver, DriverConfig::Brownian {}),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { horizon: default_horizon(), steps: default_steps() }
    }
}

fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    256
}
fn default_paths() -> usize {
    100_000
}
fn default_seed() -> u64 {
    7
}
fn one() -> f64 {
    1.0
}

/// Process driving the stochastic-integration checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    Brownian {},
    Fbm {
        hurst: f64,
    },
    Stable {
        gamma: f64,
        #[serde(default = "one")]
        c_gamma: f64,
    },
    Poisson {
        rate: f64,
        #[serde(default = "one")]
        jump_size: f64,
    },
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig::Brownian {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub features: Vec<PathFeature>,
    #[serde(default)]
    pub ridge: RidgePolicy,
}

fn default_bins() -> usize {
    16
}
fn default_degree() -> usize {
    3
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { bins: default_bins(), degree: default_degree(), features: Vec::new(), ridge: RidgePolicy::Auto }
    }
}

impl BasisConfig {
    pub fn basis(&self) -> Result<IntegrandBasis> {
        Ok(IntegrandBasis::new(self.bins, self.degree)?.with_features(self.features.clone()))
    }
}

/// Multiplies the default tolerance of every report of one check. Factors
/// above 1 loosen the check and need `override: true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverride {
    pub factor: f64,
    #[serde(default, rename = "override")]
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_report")]
    pub report: PathBuf,
    /// Wall-clock times and thread count; defaults to `<report>.meta.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    /// One CSV row per identity report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_csv: Option<PathBuf>,
}

fn default_report() -> PathBuf {
    PathBuf::from("report.json")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { report: default_report(), metadata: None, summary_csv: None }
    }
}

impl OutputConfig {
    pub fn metadata_path(&self) -> PathBuf {
        self.metadata.clone().unwrap_or_else(|| self.report.with_extension("meta.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default = "default_suite")]
    pub suite: Vec<CheckName>,
    #[serde(default)]
    pub tolerance_overrides: BTreeMap<CheckName, ToleranceOverride>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_suite() -> Vec<CheckName> {
    CheckName::ALL.to_vec()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output.report = base.join(&cfg.output.report);
        cfg.output.metadata = cfg.output.metadata.map(|p| base.join(p));
        cfg.output.summary_csv = cfg.output.summary_csv.map(|p| base.join(p));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.horizon.is_finite() && g.horizon > 0.0) {
            return Err(invalid("grid.horizon", "must be positive and finite"));
        }
        if !(1..=65_536).contains(&g.steps) {
            return Err(invalid("grid.steps", "must lie in [1, 65536]"));
        }
        if !(2..=10_000_000).contains(&self.paths) {
            return Err(invalid("paths", "must lie in [2, 10^7]"));
        }
        match self.driver {
            DriverConfig::Brownian {} => {}
            DriverConfig::Fbm { hurst } => {
                if !(hurst > 0.0 && hurst < 1.0) {
                    return Err(invalid("driver.hurst", format!("{hurst} outside (0, 1)")));
                }
            }
            DriverConfig::Stable { gamma, c_gamma } => {
                if !(gamma > 0.0 && gamma < 2.0) {
                    return Err(invalid("driver.gamma", format!("{gamma} outside (0, 2)")));
                }
                if !(c_gamma > 0.0 && c_gamma.is_finite()) {
                    return Err(invalid("driver.c_gamma", format!("{c_gamma} must be positive")));
                }
            }
            DriverConfig::Poisson { rate, jump_size } => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(invalid("driver.rate", format!("{rate} must be positive")));
                }
                if !(jump_size.is_finite() && jump_size != 0.0) {
                    return Err(invalid("driver.jump_size", format!("{jump_size} must be finite and non-zero")));
                }
            }
        }
        self.basis.basis()?.validate().map_err(|e| match e {
            Error::InvalidParameter { field, reason } => invalid(&format!("basis.{field}"), reason),
            other => other,
        })?;
        if self.basis.bins > g.steps {
            return Err(invalid("basis.bins", "more bins than time steps"));
        }
        if let RidgePolicy::Fixed(r) = self.basis.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(invalid("basis.ridge", "fixed ridge must be non-negative"));
            }
        }
        if self.suite.is_empty() {
            return Err(invalid("suite", "select at least one check"));
        }
        for (i, c) in self.suite.iter().enumerate() {
            if self.suite[..i].contains(c) {
                return Err(invalid("suite", format!("`{}` listed twice", c.as_str())));
            }
            if !c.supports(&self.driver) {
                return Err(invalid("driver", format!("check `{}` does not support this driver", c.as_str())));
            }
        }
        if self.suite.contains(&CheckName::GridRefinement) && (g.steps % 4 != 0 || self.basis.bins > g.steps / 4) {
            return Err(invalid("grid.steps", "grid_refinement needs steps divisible by 4 and at least 4 * bins"));
        }
        for (c, o) in &self.tolerance_overrides {
            let field = format!("tolerance_overrides.{}", c.as_str());
            if !(o.factor > 0.0 && o.factor.is_finite()) {
                return Err(invalid(&field, "factor must be positive and finite"));
            }
            if o.factor > 1.0 && !o.confirmed {
                return Err(invalid(&field, "loosening a tolerance requires \"override\": true"));
            }
        }
        Ok(())
    }

    pub fn tolerance_factor(&self, check: CheckName) -> f64 {
        self.tolerance_overrides.get(&check).map_or(1.0, |o| o.factor)
    }
}

/// Hand-written JSON schema of [`ExperimentConfig`].
pub fn schema() -> serde_json::Value {
    let checks: Vec<&str> = CheckName::ALL.iter().map(|c| c.as_str()).collect();
    serde_json::json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "ExperimentConfig",
        "type": "object",
        "additionalProperties": false,
        "properties": {
            "master_seed": { "type": "integer", "minimum": 0, "default": 7 },
            "grid": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "horizon": { "type": "number", "exclusiveMinimum": 0, "default": 1.0 },
                    "steps": { "type": "integer", "minimum": 1, "maximum": 65536, "default": 256 }
                }
            },
            "paths": { "type": "integer", "minimum": 2, "maximum": 10000000, "default": 100000 },
            "driver": {
                "oneOf": [
                    { "type": "object", "additionalProperties": false, "required": ["process"],
                      "properties": { "process": { "const": "brownian" } } },
                    { "type": "object", "additionalProperties": false, "required": ["process", "hurst"],
                      "properties": { "process": { "const": "fbm" },
                                      "hurst": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1 } } },
                    { "type": "object", "additionalProperties": false, "required": ["process", "gamma"],
                      "properties": { "process": { "const": "stable" },
                                      "gamma": { "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2 },
                                      "c_gamma": { "type": "number", "exclusiveMinimum": 0, "default": 1.0 } } },
                    { "type": "object", "additionalProperties": false, "required": ["process", "rate"],
                      "properties": { "process": { "const": "poisson" },
                                      "rate": { "type": "number", "exclusiveMinimum": 0 },
                                      "jump_size": { "type": "number", "default": 1.0 } } }
                ],
                "default": { "process": "brownian" }
            },
            "basis": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "bins": { "type": "integer", "minimum": 1, "default": 16 },
                    "degree": { "type": "integer", "minimum": 0, "maximum": 12, "default": 3 },
                    "features": {
                        "type": "array",
                        "items": { "oneOf": [
                            { "enum": ["running_max", "running_integral"] },
                            { "type": "object", "additionalProperties": false, "required": ["step"],
                              "properties": { "step": { "type": "number" } } },
                            { "type": "object", "additionalProperties": false, "required": ["hinge"],
                              "properties": { "hinge": { "type": "number" } } }
                        ] },
                        "default": []
                    },
                    "ridge": {
                        "oneOf": [
                            { "const": "auto" },
                            { "type": "object", "additionalProperties": false, "required": ["fixed"],
                              "properties": { "fixed": { "type": "number", "minimum": 0 } } }
                        ],
                        "default": "auto"
                    }
                }
            },
            "suite": {
                "type": "array",
                "items": { "enum": checks },
                "uniqueItems": true,
                "minItems": 1,
                "default": checks
            },
            "tolerance_overrides": {
                "type": "object",
                "propertyNames": { "enum": checks },
                "additionalProperties": {
                    "type": "object",
                    "additionalProperties": false,
                    "required": ["factor"],
                    "properties": {
                        "factor": { "type": "number", "exclusiveMinimum": 0 },
                        "override": { "type": "boolean", "default": false,
                                      "description": "required when factor > 1" }
                    }
                }
            },
            "output": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "report": { "type": "string", "default": "report.json" },
                    "metadata": { "type": "string", "description": "default: <report>.meta.json" },
                    "summary_csv": { "type": "string" }
                }
            }
        }
    })
}
