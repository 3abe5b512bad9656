//! Declarative run configuration (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::EnvSpec;
use crate::limits::SpatialInit;
use crate::lookdown::SelectionSpec;
use crate::scaling::{ScalingSchedule, SchedulePoint};
use crate::spatial::{Probe, TorusGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LfvsfeLookdown,
    LfvsfeProjected,
    Feller,
    FellerRe,
    KrFeller,
    KrFellerRe,
    BbmreDirect,
    BbmreLookdown,
    SbmreLookdown,
    Slfvfs,
    SlfvfsLookdown,
    MytnikBrw,
}

impl ModelKind {
    pub fn is_spatial(&self) -> bool {
        matches!(
            self,
            ModelKind::BbmreDirect
                | ModelKind::BbmreLookdown
                | ModelKind::SbmreLookdown
                | ModelKind::Slfvfs
                | ModelKind::SlfvfsLookdown
                | ModelKind::MytnikBrw
        )
    }
}

/// Model parameters. Each model reads the fields it needs and rejects the
/// run when one is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// `N`: population scale, or the approximation level of the branching walk.
    pub n: Option<f64>,
    pub j: Option<f64>,
    pub k: Option<f64>,
    pub m: Option<f64>,
    pub s_big: Option<f64>,
    pub s_hat: Option<f64>,
    pub u: Option<f64>,
    pub s: Option<f64>,
    pub r: Option<f64>,
    pub x0: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub lambda: Option<f64>,
    pub ceiling: Option<f64>,
    pub dt: Option<f64>,
    pub guard: Option<f64>,
    pub n0: Option<usize>,
    pub kappa: Option<f64>,
    pub frozen: Option<i8>,
    pub selection: Option<SelectionSpec>,
    pub init: Option<SpatialInit>,
}

fn default_n_obs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub replicates: usize,
    pub horizon: f64,
    #[serde(default = "default_n_obs")]
    pub n_obs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub schedule: Option<ScalingSchedule>,
    #[serde(default)]
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub grid: Option<TorusGrid>,
    #[serde(default)]
    pub probes: Vec<Probe>,
    /// Probe values of `N` for schedule validation.
    #[serde(default)]
    pub probe_ns: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.n_obs < 1 {
            return Err(Error::Config("n_obs must be >= 1".into()));
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(e) = &self.env {
            e.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical TOML text; the provenance block stores it verbatim.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `(N, J, K, M, S, Ŝ, u, s, r)` from the schedule at `params.n`, or from
    /// the raw parameters.
    pub fn schedule_point(&self) -> Result<SchedulePoint> {
        let p = &self.params;
        let n = need(p.n, "params.n")?;
        if let Some(s) = &self.schedule {
            return Ok(s.at(n));
        }
        Ok(SchedulePoint {
            n,
            j: need(p.j, "params.j")?,
            k: need(p.k, "params.k")?,
            m: p.m.unwrap_or(1.0),
            s_big: p.s_big.unwrap_or(1.0),
            s_hat: p.s_hat.unwrap_or(0.0),
            u: need(p.u, "params.u")?,
            s: p.s.unwrap_or(0.0),
            r: p.r.unwrap_or(1.0),
            dim: self.grid.map(|g| g.dim).unwrap_or(1),
        })
    }

    pub fn selection(&self) -> SelectionSpec {
        self.params
            .selection
            .or_else(|| self.schedule.as_ref().map(|s| s.selection))
            .unwrap_or_else(SelectionSpec::neutral)
    }
}

pub(crate) fn need<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
model = "feller"
replicates = 4
horizon = 1.0

[params]
a = 0.5
b = 0.0
x0 = 1.0
dt = 0.01
"#;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.model, ModelKind::Feller);
        assert_eq!(c.n_obs, 10);
        let bad = BASIC.replace("dt = 0.01", "dt = 0.01\ndtt = 1");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = BASIC.replace("horizon = 1.0", "horizon = 1.0\ncolour = 2");
        assert!(RunConfig::from_toml(&bad).is_err());
        let bad = BASIC.replace("replicates = 4", "replicates = 0");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn canonical_form_roundtrips() {
        let c = RunConfig::from_toml(BASIC).unwrap();
        let back = RunConfig::from_toml(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }
}
