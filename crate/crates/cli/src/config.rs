//! Run configuration as one versioned JSON document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wellplan::design::RenormalizeMode;
use wellplan::estimator::FitConfig;
use wellplan::graph::HybridParams;
use wellplan::ingest::DEFAULT_THRESHOLD_MG_L;
use wellplan::simulate::SimulationSpec;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub inputs: Inputs,
    pub threshold_mg_l: f64,
    pub graph: HybridParams,
    pub fit: FitConfig,
    pub rho_grid: RhoGrid,
    pub sizing: SizingConfig,
    pub design: DesignConfig,
    pub simulate: SimulationSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            inputs: Inputs::default(),
            threshold_mg_l: DEFAULT_THRESHOLD_MG_L,
            graph: HybridParams::default(),
            fit: FitConfig::default(),
            rho_grid: RhoGrid::default(),
            sizing: SizingConfig::default(),
            design: DesignConfig::default(),
            simulate: SimulationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Test records CSV.
    pub observations: Option<PathBuf>,
    /// Candidate wells CSV.
    pub candidates: Option<PathBuf>,
    /// County boundaries GeoJSON.
    pub counties: Option<PathBuf>,
}

/// The penalty values tried during model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhoGrid {
    /// `count` log-spaced values over `[rho_max / span, rho_max]`.
    Auto {
        count: usize,
        span: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for RhoGrid {
    fn default() -> Self {
        RhoGrid::Auto { count: 30, span: 1e3 }
    }
}

/// Which sample size drives the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMethod {
    #[default]
    Jeffreys,
    Wilson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizingConfig {
    /// Acceptance half-width as a fraction of each cluster's probability.
    pub delta_fraction: f64,
    pub confidences: Vec<f64>,
    pub include_boundary_terms: bool,
    /// Level whose sample sizes the design uses.
    pub design_confidence: f64,
    pub design_method: SizeMethod,
}

impl Default for SizingConfig {
    fn default() -> Self {
        SizingConfig {
            delta_fraction: 0.1,
            confidences: vec![0.90, 0.95, 0.99],
            include_boundary_terms: false,
            design_confidence: 0.95,
            design_method: SizeMethod::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Kernel bandwidth in km; the rule of thumb when absent.
    pub bandwidth_km: Option<f64>,
    /// Grid cell size in km; window diameter / 256 when absent.
    pub cell_km: Option<f64>,
    pub renormalize: RenormalizeMode,
    pub seed: u64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig { bandwidth_km: None, cell_km: None, renormalize: RenormalizeMode::Off, seed: 1 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")))
            }
            None => return Err(CliError::Config("missing schema_version".into())),
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // relative input paths are taken from the config file's directory
        let base = path.parent().unwrap_or(Path::new(""));
        for p in
            [&mut cfg.inputs.observations, &mut cfg.inputs.candidates, &mut cfg.inputs.counties].into_iter().flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if !(self.sizing.delta_fraction > 0.0 && self.sizing.delta_fraction < 1.0) {
            return bad(format!("delta_fraction {} outside (0, 1)", self.sizing.delta_fraction));
        }
        if self.sizing.confidences.is_empty() {
            return bad("at least one confidence level is required".into());
        }
        for &c in self.sizing.confidences.iter().chain([&self.sizing.design_confidence]) {
            if !(c > 0.0 && c < 1.0) {
                return bad(format!("confidence {c} outside (0, 1)"));
            }
        }
        if !self.sizing.confidences.iter().any(|&c| (c - self.sizing.design_confidence).abs() < 1e-12) {
            return bad(format!(
                "design_confidence {} is not among the sizing confidences",
                self.sizing.design_confidence
            ));
        }
        if !(self.threshold_mg_l > 0.0 && self.threshold_mg_l.is_finite()) {
            return bad(format!("threshold {} must be positive", self.threshold_mg_l));
        }
        match &self.rho_grid {
            RhoGrid::Auto { count, span } => {
                if *count == 0 || span.is_nan() || *span < 1.0 {
                    return bad("automatic rho grid needs count >= 1 and span >= 1".into());
                }
            }
            RhoGrid::Explicit { values } => {
                if values.is_empty() || values.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
                    return bad("explicit rho grid needs nonnegative values".into());
                }
            }
        }
        for v in [self.design.bandwidth_km, self.design.cell_km].into_iter().flatten() {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("design length {v} must be positive"));
            }
        }
        self.fit.validate()?;
        Ok(())
    }

    /// Canonical serialization used for the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
