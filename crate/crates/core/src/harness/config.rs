use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{EwcError, Result};
use crate::hedge::SelectionMode;
use crate::offline::SeparatorFitConfig;
use crate::simulation::PopulationSpec;

/// Every policy the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    /// Hedge over loss-guided K-Means centroids.
    Ewc,
    /// Hedge over L2 K-Means centroids.
    EwcL2,
    LinUcb,
    Ftl,
    OracleFtl,
    OracleCluster,
    OracleTheta,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Ewc,
        PolicyKind::EwcL2,
        PolicyKind::LinUcb,
        PolicyKind::Ftl,
        PolicyKind::OracleFtl,
        PolicyKind::OracleCluster,
        PolicyKind::OracleTheta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ewc => "ewc",
            PolicyKind::EwcL2 => "ewc-l2",
            PolicyKind::LinUcb => "linucb",
            PolicyKind::Ftl => "ftl",
            PolicyKind::OracleFtl => "oracle-ftl",
            PolicyKind::OracleCluster => "oracle-cluster",
            PolicyKind::OracleTheta => "oracle-theta",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = EwcError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| EwcError::UnknownPolicy(s.trim().to_string()))
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = EwcError;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(value: PolicyKind) -> Self {
        value.name().to_string()
    }
}

/// Parses a comma-separated policy list such as `ewc,linucb,ftl`.
pub fn parse_policy_list(list: &str) -> Result<Vec<PolicyKind>> {
    let policies = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()?;
    if policies.is_empty() {
        return Err(EwcError::Config("policy list is empty".into()));
    }
    Ok(policies)
}

/// Parses a seed list: comma-separated values and inclusive ranges, e.g. `1,2,5-9`.
pub fn parse_seed_list(list: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || EwcError::Config(format!("invalid seed `{part}`"));
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
            if lo > hi {
                return Err(bad());
            }
            seeds.extend(lo..=hi);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(EwcError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset CSV to use instead of generating one per seed.
    pub dataset: Option<PathBuf>,
    /// Inline population specification.
    pub population: Option<PopulationSpec>,
    /// Population specification file, used when `population` is absent.
    pub population_file: Option<PathBuf>,
    pub n_test: usize,
    pub n_train: usize,
    pub t_test: usize,
    pub t_train: usize,
    pub policies: Vec<PolicyKind>,
    pub k: usize,
    /// Hedge learning rate; `sqrt(8 ln K / T)` when unset.
    pub eta: Option<f64>,
    pub selection: SelectionMode,
    /// LinUCB exploration width; derived from `linucb_delta` when unset.
    pub linucb_alpha: Option<f64>,
    pub linucb_delta: f64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub separator: SeparatorFitConfig,
    pub max_iters: usize,
    /// Weight of one-class users in centroid means.
    pub degenerate_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            population: None,
            population_file: None,
            n_test: 800,
            n_train: 1200,
            t_test: 40,
            t_train: 40,
            policies: vec![
                PolicyKind::Ewc,
                PolicyKind::LinUcb,
                PolicyKind::Ftl,
                PolicyKind::OracleFtl,
                PolicyKind::OracleCluster,
                PolicyKind::OracleTheta,
            ],
            k: 6,
            eta: None,
            selection: SelectionMode::Sample,
            linucb_alpha: None,
            linucb_delta: 0.1,
            seeds: (0..10).collect(),
            out: PathBuf::from("out"),
            separator: SeparatorFitConfig::default(),
            max_iters: 100,
            degenerate_weight: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                EwcError::Config(format!("config file {} not found", path.display()))
            }
            _ => EwcError::io(path, e),
        })?;
        serde_json::from_str(&text).map_err(|source| EwcError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(EwcError::Config("at least one policy is required".into()));
        }
        if self.k == 0 {
            return Err(EwcError::Config("K must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(EwcError::Config("at least one seed is required".into()));
        }
        if self.dataset.is_none()
            && (self.n_test == 0 || self.n_train == 0 || self.t_test == 0 || self.t_train == 0)
        {
            return Err(EwcError::Config("user and round counts must be at least 1".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(EwcError::Config(format!("eta must be positive, got {eta}")));
            }
        }
        if let Some(alpha) = self.linucb_alpha {
            if !(alpha.is_finite() && alpha >= 0.0) {
                return Err(EwcError::Config(format!("alpha must be nonnegative, got {alpha}")));
            }
        }
        if !(self.linucb_delta > 0.0 && self.linucb_delta < 1.0) {
            return Err(EwcError::Config("linucb_delta must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 {
            return Err(EwcError::Config("max_iters must be at least 1".into()));
        }
        if !(self.degenerate_weight.is_finite() && self.degenerate_weight >= 0.0) {
            return Err(EwcError::Config("degenerate_weight must be nonnegative".into()));
        }
        self.separator.validate()?;
        if let Some(p) = &self.population {
            p.validate()?;
        }
        Ok(())
    }

    /// The population used for generation and for the Oracle Cluster means.
    pub fn resolve_population(&self) -> Result<Option<PopulationSpec>> {
        if let Some(p) = &self.population {
            p.validate()?;
            return Ok(Some(p.clone()));
        }
        if let Some(path) = &self.population_file {
            return PopulationSpec::from_json_file(path).map(Some);
        }
        if self.dataset.is_some() {
            return Ok(None);
        }
        Ok(Some(PopulationSpec::default()))
    }

    /// Short SHA-256 fingerprint of the serialized config.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
