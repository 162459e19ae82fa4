//! Run configuration for the CLI: defaults, optional JSON config file, and
//! flag overrides, resolved in that order.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmp::RmpParams;
use crate::sim::{Family, SimConfig};

/// One suite invocation. `family` may be a single family name or `all`;
/// `params` holds RmpParams overrides by field name.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: String,
    pub episodes: u64,
    pub seed: u64,
    pub policy: String,
    pub dcp_rmp: bool,
    pub params: BTreeMap<String, f64>,
    pub tick_rate: f64,
    pub horizon: u64,
    pub noise_sigma: f64,
    pub reports: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub log_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let sim = SimConfig::default();
        RunConfig {
            family: "all".into(),
            episodes: 20,
            seed: 0,
            policy: "interpolator".into(),
            dcp_rmp: false,
            params: BTreeMap::new(),
            tick_rate: sim.tick_rate,
            horizon: sim.horizon,
            noise_sigma: sim.noise_sigma,
            reports: None,
            summary: None,
            log_trajectory: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::invalid("episodes must be >= 1"));
        }
        self.families()?;
        if !matches!(self.policy.as_str(), "interpolator" | "repulsive") {
            return Err(Error::invalid(format!("unknown policy '{}'", self.policy)));
        }
        self.rmp_params()?;
        self.sim_config().validate()
    }

    /// The families this run covers, in fixed benchmark order.
    pub fn families(&self) -> Result<Vec<Family>> {
        if self.family == "all" {
            Ok(Family::ALL.to_vec())
        } else {
            Ok(vec![Family::from_str(&self.family)?])
        }
    }

    /// Defaults plus the configured overrides.
    pub fn rmp_params(&self) -> Result<RmpParams> {
        let mut p = RmpParams::default();
        for (name, value) in &self.params {
            p.set_field(name, *value)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            tick_rate: self.tick_rate,
            horizon: self.horizon,
            noise_sigma: self.noise_sigma,
            log_trajectory: self.log_trajectory,
            ..SimConfig::default()
        }
    }
}
