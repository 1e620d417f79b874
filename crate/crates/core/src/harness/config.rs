//! Flat TOML run configuration.
//!
//! ```toml
//! n = 3
//! b = 2
//! mu1 = 2.0
//! mu2 = 1.0
//! p = 0.5
//! lambda = 0.7          # or alpha = 0.3 and beta = 1.0
//! policy.kind = "pod"   # jsq | jiq | i1f | pod
//! policy.d = 2
//! policy.pod_sampling = "without_replacement"
//! seed = 7
//! horizon = 1e5         # simulation only
//! warmup = 2.5e4
//! batches = 32
//! initial_state = "empty"   # or "near_equilibrium", or a flat count vector
//! sweep.n_grid = [250, 1000, 4000]
//! sweep.policies = ["jsq", "pod:2"]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoxianParams, HeavyTraffic, SystemConfig};
use crate::policy::{PodSampling, PolicyKind};
use crate::sim::{InitialState, SimConfig, DEFAULT_BATCHES};

pub const DEFAULT_HORIZON: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: String,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub pod_sampling: Option<PodSampling>,
}

impl PolicySection {
    pub fn build(&self) -> Result<PolicyKind> {
        let pod_only = || Error::Config(format!("policy.d and policy.pod_sampling only apply to pod, not {:?}", self.kind));
        let simple = |p: PolicyKind| if self.d.is_some() || self.pod_sampling.is_some() { Err(pod_only()) } else { Ok(p) };
        match self.kind.to_ascii_lowercase().as_str() {
            "jsq" => simple(PolicyKind::Jsq),
            "jiq" => simple(PolicyKind::Jiq),
            "i1f" => simple(PolicyKind::I1f),
            "pod" => Ok(PolicyKind::Pod {
                d: self.d.ok_or_else(|| Error::Config("policy.kind = \"pod\" needs policy.d".into()))?,
                sampling: self.pod_sampling.unwrap_or_default(),
            }),
            other => Err(Error::Config(format!("unknown policy kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_grid: Vec<usize>,
    /// Policy shorthands such as `jsq` or `pod:2`; defaults to `policy`.
    #[serde(default)]
    pub policies: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub b: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub p: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    pub policy: PolicySection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default)]
    pub batches: Option<usize>,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

/// Parses `jsq`, `jiq`, `i1f`, `pod:<d>` or `pod:<d>:with_replacement`.
pub fn parse_policy(s: &str) -> Result<PolicyKind> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let (kind, d, sampling) = match parts.as_slice() {
        [k] => (*k, None, None),
        [k, d] => (*k, Some(*d), None),
        [k, d, s] => (*k, Some(*d), Some(*s)),
        _ => return Err(Error::Config(format!("cannot parse policy {s:?}"))),
    };
    let d = d
        .map(|d| d.parse::<usize>().map_err(|_| Error::Config(format!("bad sample size in {s:?}"))))
        .transpose()?;
    let pod_sampling = match sampling {
        None => None,
        Some("with_replacement") => Some(PodSampling::WithReplacement),
        Some("without_replacement") => Some(PodSampling::WithoutReplacement),
        Some(other) => return Err(Error::Config(format!("unknown pod sampling {other:?}"))),
    };
    PolicySection { kind: kind.into(), d, pod_sampling }.build()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn coxian(&self) -> Result<CoxianParams> {
        CoxianParams::new(self.mu1, self.mu2, self.p)
    }

    pub fn heavy_traffic(&self) -> Result<Option<HeavyTraffic>> {
        match (self.lambda, self.alpha, self.beta) {
            (Some(_), Some(_), _) => Err(Error::Config("give either lambda or alpha (with beta), not both".into())),
            (Some(_), None, Some(_)) => Err(Error::Config("beta needs alpha".into())),
            (None, Some(a), beta) => Ok(Some(HeavyTraffic::new(a, beta.unwrap_or(1.0))?)),
            (Some(_), None, None) => Ok(None),
            (None, None, _) => Err(Error::Config("one of lambda or alpha is required".into())),
        }
    }

    /// The system at `n` servers under `policy`.
    pub fn system_at(&self, n: usize, policy: PolicyKind) -> Result<SystemConfig> {
        let cox = self.coxian()?;
        match self.heavy_traffic()? {
            Some(ht) => SystemConfig::with_heavy_traffic(n, self.b, ht, cox, policy),
            None => SystemConfig::new(n, self.b, self.lambda.expect("checked"), cox, policy),
        }
    }

    pub fn system(&self) -> Result<SystemConfig> {
        self.system_at(self.n, self.policy.build()?)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon.unwrap_or(DEFAULT_HORIZON),
            warmup: self.warmup,
            seed: self.seed,
            stream: 0,
            batches: self.batches.unwrap_or(DEFAULT_BATCHES),
            initial_state: self.initial_state.clone().unwrap_or(InitialState::Empty),
        }
    }

    pub fn sweep_policies(&self) -> Result<Vec<PolicyKind>> {
        match self.sweep.as_ref().and_then(|s| s.policies.as_ref()) {
            Some(list) if list.is_empty() => Err(Error::Config("sweep.policies is empty".into())),
            Some(list) => list.iter().map(|s| parse_policy(s)).collect(),
            None => Ok(vec![self.policy.build()?]),
        }
    }
}
