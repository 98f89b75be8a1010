//! Training configuration.

use serde::{Deserialize, Serialize};

use crate::engine::{Accel, EngineConfig, MomentumFormula};
use crate::error::{Error, Result};

/// Update schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// All filters, then all codes.
    TwoBlock,
    /// Filter `k`, then code set `k`, for `k = 1..K`.
    MultiBlock,
}

/// Filter-side majorizer for the two-block scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMajorizer {
    /// Support row sums of the absolute cross-spectral circulants.
    CrossRowSum,
    /// Per-filter peak of the bounding spectrum, times identity.
    ScaledIdentity,
    /// Support row sums of the absolute bounding circulant.
    SigmaRowSum,
}

/// Code-side majorizer for the two-block scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeMajorizer {
    /// Row sums of the absolute cross-spectral circulants.
    CrossRowSum,
    /// Row sums of the absolute bounding circulant.
    SigmaRowSum,
    /// `diag(|Γ^T||Γ|1)` of the whole code operator.
    AbsGram,
}

/// Majorizer pairing. The named presets fix the scheme they belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MajorizerDesign {
    #[serde(rename = "m-i")]
    MI,
    #[serde(rename = "m-ii")]
    MII,
    #[serde(rename = "m-iii")]
    MIII,
    #[serde(rename = "m-iv")]
    MIV,
    /// The only multi-block design.
    #[serde(rename = "m-v")]
    MV,
    /// Any two-block pairing.
    Custom { filter: FilterMajorizer, code: CodeMajorizer },
}

impl MajorizerDesign {
    /// Filter and code majorizers for the two-block scheme; `None` for `MV`.
    pub fn two_block_pair(self) -> Option<(FilterMajorizer, CodeMajorizer)> {
        use CodeMajorizer as C;
        use FilterMajorizer as F;
        match self {
            MajorizerDesign::MI => Some((F::ScaledIdentity, C::SigmaRowSum)),
            MajorizerDesign::MII => Some((F::SigmaRowSum, C::SigmaRowSum)),
            MajorizerDesign::MIII => Some((F::SigmaRowSum, C::CrossRowSum)),
            MajorizerDesign::MIV => Some((F::CrossRowSum, C::CrossRowSum)),
            MajorizerDesign::MV => None,
            MajorizerDesign::Custom { filter, code } => Some((filter, code)),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CdlConfig {
    pub num_filters: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    /// Sparsity weight.
    pub alpha: f64,
    pub scheme: Scheme,
    pub majorizer: MajorizerDesign,
    pub accel: Accel,
    pub momentum: MomentumFormula,
    /// Relative-change tolerance of the stopping rule.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub delta: f64,
    pub omega: f64,
    /// Contrast-enhancement weight; `None` trains the plain model.
    pub ace_gamma: Option<f64>,
    /// Assert the majorized descent inequality after every block step.
    pub check_majorization: bool,
}

impl Default for CdlConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        CdlConfig {
            num_filters: 8,
            filter_h: 5,
            filter_w: 5,
            alpha: 0.1,
            scheme: Scheme::MultiBlock,
            majorizer: MajorizerDesign::MV,
            accel: engine.accel,
            momentum: engine.momentum,
            tol: engine.tol,
            max_iter: engine.max_iter,
            seed: 0,
            delta: engine.delta,
            omega: engine.omega,
            ace_gamma: None,
            check_majorization: false,
        }
    }
}

impl CdlConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_filters == 0 {
            return fail("num_filters must be at least 1".into());
        }
        if self.filter_h == 0 || self.filter_w == 0 {
            return fail("filter shape must be non-empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.tol >= 0.0) {
            return fail(format!("tol must be nonnegative, got {}", self.tol));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return fail(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(-1.0..=0.0).contains(&self.omega) {
            return fail(format!("omega must lie in [-1, 0], got {}", self.omega));
        }
        if let Some(g) = self.ace_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return fail(format!("ace_gamma must be positive, got {g}"));
            }
        }
        match (self.scheme, self.majorizer) {
            (Scheme::MultiBlock, MajorizerDesign::MV) => Ok(()),
            (Scheme::MultiBlock, m) => fail(format!("majorizer {m:?} belongs to the two-block scheme")),
            (Scheme::TwoBlock, MajorizerDesign::MV) => fail("majorizer m-v belongs to the multi-block scheme".into()),
            (Scheme::TwoBlock, _) => Ok(()),
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            accel: self.accel,
            momentum: self.momentum,
            delta: self.delta,
            omega: self.omega,
            max_iter: self.max_iter,
            tol: self.tol,
            objective_guard: false,
            check_majorization: self.check_majorization,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CdlConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = CdlConfig {
            scheme: Scheme::TwoBlock,
            majorizer: MajorizerDesign::Custom { filter: FilterMajorizer::SigmaRowSum, code: CodeMajorizer::AbsGram },
            ace_gamma: Some(2.0),
            ..CdlConfig::default()
        };
        let back = CdlConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn presets_parse() {
        let cfg = CdlConfig::from_toml("scheme = \"two-block\"\nmajorizer = \"m-iii\"\naccel = \"reo\"\n").unwrap();
        assert_eq!(cfg.majorizer, MajorizerDesign::MIII);
        assert_eq!(cfg.accel, Accel::ReO);
        assert_eq!(cfg.num_filters, 8);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(CdlConfig::from_toml("num_filter = 3\n").is_err());
    }

    #[test]
    fn pairing_enforced() {
        assert!(CdlConfig::from_toml("scheme = \"two-block\"\nmajorizer = \"m-v\"\n").is_err());
        assert!(CdlConfig::from_toml("scheme = \"multi-block\"\nmajorizer = \"m-ii\"\n").is_err());
        assert!(CdlConfig::from_toml("alpha = 0.0\n").is_err());
    }
}
