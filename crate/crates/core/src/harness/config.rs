//! JSON run configuration and dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Result, SimError};
use crate::objectives::{linear_spectrum, random_centers, FederationSpec};
use crate::params::{Algorithm, HyperParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    #[serde(rename = "N")]
    pub num_clients: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    #[serde(rename = "K_true")]
    pub true_clusters: usize,
    pub cluster_center_spread: f64,
    pub within_cluster_spread: f64,
    pub noise_sigma: f64,
    pub hessian_eig_min: f64,
    pub hessian_eig_max: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub eta_c: f64,
    pub eta_s: f64,
    pub tau: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    #[serde(rename = "M")]
    pub participants: usize,
}

/// How MIFA treats round 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MifaMode {
    /// Start from an all-zero table with an ordinary sampled first round.
    #[default]
    ColdStart,
    /// Every client participates in round 0.
    FullFirstRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    pub name: Algorithm,
    /// Number of server clusters for ClusterFedVARP; defaults to `K_true`.
    #[serde(rename = "K", default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub mifa_mode: MifaMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub hyper: HyperConfig,
    pub algo: AlgoConfig,
    pub log_every: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::ReadConfig {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Loads `path` and applies `key=value` overrides in order.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::load(path)?.with_overrides(overrides)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Applies dotted-path overrides such as `hyper.M=5`. Only keys of the
    /// schema may be named. The value is parsed as JSON, falling back to a
    /// bare string (`algo.name=fedvarp`).
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self)?;
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| SimError::config(format!("override {item:?} is not key=value")))?;
            set_path(&mut tree, path.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: RunConfig = serde_json::from_value(tree)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.federation;
        self.hyper_params()?;
        if f.dim == 0 {
            return Err(SimError::config("federation.d must be at least 1"));
        }
        if f.true_clusters == 0 || f.true_clusters > f.num_clients {
            return Err(SimError::config(
                "federation.K_true must satisfy 1 <= K_true <= N",
            ));
        }
        if !f.num_clients.is_multiple_of(f.true_clusters) {
            return Err(SimError::config(format!(
                "federation.N={} must be divisible by K_true={}",
                f.num_clients, f.true_clusters
            )));
        }
        for (name, v) in [
            ("cluster_center_spread", f.cluster_center_spread),
            ("within_cluster_spread", f.within_cluster_spread),
            ("noise_sigma", f.noise_sigma),
            ("hessian_eig_min", f.hessian_eig_min),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::config(format!(
                    "federation.{name} must be finite and >= 0"
                )));
            }
        }
        if !(f.hessian_eig_max.is_finite()
            && f.hessian_eig_max > 0.0
            && f.hessian_eig_max >= f.hessian_eig_min)
        {
            return Err(SimError::config(
                "federation.hessian_eig_max must be positive and >= hessian_eig_min",
            ));
        }
        if let Some(k) = self.algo.clusters {
            if k == 0 || k > f.num_clients {
                return Err(SimError::config(format!(
                    "algo.K={k} must satisfy 1 <= K <= N"
                )));
            }
        }
        if self.log_every == 0 {
            return Err(SimError::config("log_every must be at least 1"));
        }
        Ok(())
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let h = &self.hyper;
        HyperParams::new(
            h.eta_c,
            h.eta_s,
            h.tau,
            h.rounds,
            h.participants,
            self.federation.num_clients,
        )
    }

    /// Server cluster count used by ClusterFedVARP.
    pub fn server_clusters(&self) -> usize {
        self.algo.clusters.unwrap_or(self.federation.true_clusters)
    }

    /// Generator spec: centres drawn from the federation seed, Hessian
    /// spectrum evenly spaced on `[eig_min, eig_max]`.
    pub fn federation_spec(&self) -> FederationSpec {
        let f = &self.federation;
        FederationSpec {
            num_clients: f.num_clients,
            dim: f.dim,
            cluster_centers: random_centers(
                f.seed,
                f.true_clusters,
                f.dim,
                f.cluster_center_spread,
            ),
            within_cluster_spread: f.within_cluster_spread,
            noise_sigma: f.noise_sigma,
            hessian_eigs: linear_spectrum(f.dim, f.hessian_eig_min, f.hessian_eig_max),
            seed: f.seed,
            equal_size: true,
        }
    }
}

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(tree: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        let obj = node.as_object_mut().ok_or_else(|| {
            SimError::config(format!(
                "override path {path:?}: {key:?} is not inside an object"
            ))
        })?;
        let child = obj.get_mut(key).ok_or_else(|| {
            SimError::config(format!("override path {path:?}: unknown key {key:?}"))
        })?;
        if parts.peek().is_none() {
            if child.is_object() {
                return Err(SimError::config(format!(
                    "override path {path:?} names a section, not a value"
                )));
            }
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(SimError::config("empty override path"))
}
