use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coxph::{ModelFormula, TieMethod};
use crate::dataset::SchemaOptions;
use crate::diagnostics::{TimeTransform, DEVIANCE_FLAG};
use crate::error::{Error, Result};
use crate::gof::PMode;
use crate::nonparam::WilcoxonVariant;
use crate::parametric::Family;

pub const DEFAULT_FORMULA: &str = "age_at_implant + initial_side + sqrt(n_revisions)";

/// Everything `run_pipeline` needs besides the data. Loaded from TOML or
/// JSON; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub schema: SchemaOptions,
    /// Variable whose levels define the analysis groups.
    pub group_by: String,
    pub seed: u64,
    pub conf_level: f64,
    pub km: KmConfig,
    pub rank_tests: RankTestConfig,
    pub parametric: ParametricConfig,
    pub gof: GofConfig,
    pub cox: CoxConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            schema: SchemaOptions::default(),
            group_by: "gender".to_string(),
            seed: 0,
            conf_level: 0.95,
            km: KmConfig::default(),
            rank_tests: RankTestConfig::default(),
            parametric: ParametricConfig::default(),
            gof: GofConfig::default(),
            cox: CoxConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmConfig {
    pub enabled: bool,
}

impl Default for KmConfig {
    fn default() -> Self {
        KmConfig { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankTestConfig {
    pub enabled: bool,
    /// Unset: Mann–Whitney when both groups are uncensored, Gehan otherwise.
    pub wilcoxon: Option<WilcoxonVariant>,
}

impl Default for RankTestConfig {
    fn default() -> Self {
        RankTestConfig {
            enabled: true,
            wilcoxon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParametricConfig {
    pub enabled: bool,
    pub families: Vec<Family>,
    pub grid_size: usize,
}

impl Default for ParametricConfig {
    fn default() -> Self {
        ParametricConfig {
            enabled: true,
            families: vec![Family::Weibull3P, Family::Lognormal3P],
            grid_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GofConfig {
    pub enabled: bool,
    pub p_mode: PMode,
    pub replicates: usize,
    /// Chi-square bin count; automatic when unset.
    pub bins: Option<usize>,
}

impl Default for GofConfig {
    fn default() -> Self {
        GofConfig {
            enabled: true,
            p_mode: PMode::Asymptotic,
            replicates: 1000,
            bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoxConfig {
    pub enabled: bool,
    /// Formula for groups without an entry in `formulas`.
    pub formula: String,
    /// Per-group formulas keyed by group label.
    pub formulas: BTreeMap<String, String>,
    pub reference_levels: BTreeMap<String, String>,
    pub ties: TieMethod,
    pub stepwise: bool,
    pub alpha: f64,
}

impl Default for CoxConfig {
    fn default() -> Self {
        CoxConfig {
            enabled: true,
            formula: DEFAULT_FORMULA.to_string(),
            formulas: BTreeMap::new(),
            reference_levels: BTreeMap::new(),
            ties: TieMethod::Efron,
            stepwise: false,
            alpha: 0.05,
        }
    }
}

impl CoxConfig {
    /// Parsed formula for `group`, with the configured reference levels.
    pub fn formula_for(&self, group: &str) -> Result<ModelFormula> {
        let text = self.formulas.get(group).unwrap_or(&self.formula);
        let mut f: ModelFormula = text.parse()?;
        f.reference_levels
            .extend(self.reference_levels.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub transform: TimeTransform,
    pub deviance_threshold: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: true,
            transform: TimeTransform::Km,
            deviance_threshold: DEVIANCE_FLAG,
        }
    }
}

impl RunConfig {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.group_by.trim().is_empty() {
            return bad("group_by must name a variable");
        }
        if !(self.conf_level > 0.0 && self.conf_level < 1.0) {
            return bad("conf_level must lie in (0, 1)");
        }
        if self.parametric.families.is_empty() {
            return bad("parametric.families is empty");
        }
        if self.parametric.grid_size < 2 {
            return bad("parametric.grid_size must be at least 2");
        }
        if self.gof.p_mode == PMode::Bootstrap && self.gof.replicates == 0 {
            return bad("gof.replicates must be positive");
        }
        if !(self.cox.alpha > 0.0 && self.cox.alpha < 1.0) {
            return bad("cox.alpha must lie in (0, 1)");
        }
        if !(self.diagnostics.deviance_threshold > 0.0) {
            return bad("diagnostics.deviance_threshold must be positive");
        }
        self.cox.formula.parse::<ModelFormula>()?;
        for f in self.cox.formulas.values() {
            f.parse::<ModelFormula>()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configuration serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
