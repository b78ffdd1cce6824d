use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FieldSpec, Forcing, TimeProfile};
use crate::geometry::{CellGeometry, Epsilon, Rect};
use crate::hom::HomScaling;
use crate::noise::{NoiseConfig, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsBlock {
    pub nu: f64,
    pub b: f64,
    pub sigma_b: f64,
    pub scaling: HomScaling,
    pub forcing: Forcing,
    pub u0: FieldSpec,
    pub t_final: f64,
    pub dt: f64,
}

impl Default for PhysicsBlock {
    fn default() -> Self {
        Self {
            nu: 1.0,
            b: 1.0,
            sigma_b: -1.0,
            scaling: HomScaling::Derived,
            forcing: Forcing {
                terms: vec![
                    (FieldSpec::sine([1, 1], [1.0, 1.0]), TimeProfile::Constant),
                    (FieldSpec::sine([2, 1], [2.0, -1.0]), TimeProfile::Constant),
                ],
            },
            u0: FieldSpec::sine([1, 1], [1.0, 0.5]),
            t_final: 0.25,
            dt: 1e-3,
        }
    }
}

impl PhysicsBlock {
    pub fn steps(&self) -> Result<usize> {
        let s = self.t_final / self.dt;
        let n = s.round();
        if !(self.dt > 0.0) || !(self.t_final > 0.0) || (s - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Config(format!("T = {} is not a multiple of dt = {}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.steps()?)
    }
}

/// Mesh sizes. `cell_h` is relative to the unit cell (absolute size `eps * cell_h`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshBlock {
    pub cell_h: f64,
    pub hom_h: f64,
}

impl Default for MeshBlock {
    fn default() -> Self {
        Self { cell_h: 1.0 / 12.0, hom_h: 1.0 / 32.0 }
    }
}

/// Everything a study needs; the JSON schema is documented in the README.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Rect,
    pub geometry: CellGeometry,
    pub noise: NoiseConfig,
    pub physics: PhysicsBlock,
    pub epsilons: Vec<Epsilon>,
    pub mesh: MeshBlock,
    pub samples: usize,
    /// Leading samples used for the energy certificate.
    pub certificate_samples: usize,
    /// Precomputed tensor (JSON from `stokes-homog tensor`); computed when absent.
    pub tensor_file: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: Rect::unit(),
            geometry: CellGeometry::new(0.25, 32),
            noise: NoiseConfig::default(),
            physics: PhysicsBlock::default(),
            epsilons: [4, 8, 16].into_iter().map(|n| Epsilon::new(n).expect("valid")).collect(),
            mesh: MeshBlock::default(),
            samples: 16,
            certificate_samples: 16,
            tensor_file: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // relative file references resolve against the config's directory
        if let (Some(t), Some(dir)) = (&cfg.tensor_file, path.parent()) {
            if t.is_relative() {
                cfg.tensor_file = Some(dir.join(t));
            }
        }
        if let Some(t) = &cfg.tensor_file {
            if !t.exists() {
                return Err(Error::Config(format!("tensor file {} does not exist", t.display())));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.physics.grid()?;
        if !(self.mesh.cell_h > 0.0 && self.mesh.hom_h > 0.0) {
            return Err(Error::Config("mesh sizes must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("at least one Monte-Carlo sample is required".into()));
        }
        if !(self.physics.nu > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.physics.nu)));
        }
        let mut sorted = self.epsilons.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.epsilons.len() {
            return Err(Error::Config("epsilon list contains duplicates".into()));
        }
        Ok(())
    }

    /// Seeds of the coupled Monte-Carlo paths (shared by every eps and by the homogenized run).
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.samples as u64).map(|s| (self.noise.seed << 20) + s).collect()
    }

    /// Epsilons from coarse to fine.
    pub fn sweep(&self) -> Vec<Epsilon> {
        let mut e = self.epsilons.clone();
        e.sort();
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.physics.steps().unwrap(), 250);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c = RunConfig::from_json(r#"{"epsilons": ["1/4", 8], "samples": 4}"#).unwrap();
        assert_eq!(c.epsilons.len(), 2);
        assert_eq!(c.samples, 4);
        assert_eq!(c.physics, PhysicsBlock::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_json(r#"{"epsilons": ["0.3"]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"physics": {"t_final": 0.25, "dt": 0.003}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"epsilons": [4, 4]}"#).is_err());
    }

    #[test]
    fn seeds_are_disjoint_across_base_seeds() {
        let mut a = RunConfig::default();
        let b = a.seeds();
        a.noise.seed = 2;
        assert!(a.seeds().iter().all(|s| !b.contains(s)));
    }
}
