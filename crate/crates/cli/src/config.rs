//! Experiment configuration. Parsing is strict: unknown fields are errors.

use std::path::{Path, PathBuf};

use grauert_core::quadrature::MIN_RESOLUTION;
use grauert_core::{ManifoldKind, ModelManifold};
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GeometryChecks,
    CircleZeros,
    NormGrowth,
    Husimi,
    ZeroCurrent,
    RandomOnbSphere,
    TorusCounterexample,
    NodalProbe,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::GeometryChecks => "geometry-checks",
            Experiment::CircleZeros => "circle-zeros",
            Experiment::NormGrowth => "norm-growth",
            Experiment::Husimi => "husimi",
            Experiment::ZeroCurrent => "zero-current",
            Experiment::RandomOnbSphere => "random-onb-sphere",
            Experiment::TorusCounterexample => "torus-counterexample",
            Experiment::NodalProbe => "nodal-probe",
        }
    }

    /// Manifolds the experiment is defined on.
    fn supports(self, kind: ManifoldKind) -> bool {
        use ManifoldKind::*;
        match self {
            Experiment::GeometryChecks => true,
            Experiment::CircleZeros | Experiment::Husimi => kind == Circle,
            Experiment::NormGrowth | Experiment::ZeroCurrent | Experiment::NodalProbe => {
                matches!(kind, Circle | RoundSphere)
            }
            Experiment::RandomOnbSphere => kind == RoundSphere,
            Experiment::TorusCounterexample => kind == FlatTorus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldName {
    Circle,
    FlatTorus,
    RoundSphere,
    Hyperboloid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub kind: ManifoldName,
    pub dim: usize,
}

impl ManifoldConfig {
    pub fn build(&self) -> Result<ModelManifold, LabError> {
        let kind = match self.kind {
            ManifoldName::Circle => ManifoldKind::Circle,
            ManifoldName::FlatTorus => ManifoldKind::FlatTorus,
            ManifoldName::RoundSphere => ManifoldKind::RoundSphere,
            ManifoldName::Hyperboloid => ManifoldKind::Hyperboloid,
        };
        ModelManifold::new(kind, self.dim).map_err(|e| LabError::Config(format!("manifold: {e}")))
    }

    pub fn label(&self) -> String {
        let name = match self.kind {
            ManifoldName::Circle => "circle",
            ManifoldName::FlatTorus => "flat-torus",
            ManifoldName::RoundSphere => "round-sphere",
            ManifoldName::Hyperboloid => "hyperboloid",
        };
        format!("{name}{}", self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_radial: usize,
    pub n_base: usize,
    pub n_fiber: usize,
}

/// Raw config as written by the user. Everything but `experiment`,
/// `manifold` and `output_dir` has an experiment-specific default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub manifold: ManifoldConfig,
    /// Mode sweep: `k` on the circle and torus, `l` on the sphere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<u32>>,
    /// Number of random bases (consecutive seeds) per mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    pub output_dir: PathBuf,
}

/// A config with every default filled in; this is what the manifest records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub experiment: Experiment,
    pub manifold: ManifoldConfig,
    pub modes: Vec<u32>,
    pub samples: u32,
    pub epsilon: f64,
    pub delta: f64,
    pub grid: GridConfig,
    pub seed: u64,
    pub clip_floor: f64,
    pub fd_step: f64,
    pub output_dir: PathBuf,
}

fn grid(n_radial: usize, n_base: usize, n_fiber: usize) -> GridConfig {
    GridConfig {
        n_radial,
        n_base,
        n_fiber,
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<Resolved, LabError> {
        use Experiment::*;
        use ManifoldName::*;
        let manifold = self.manifold.build()?;
        if !self.experiment.supports(manifold.kind) {
            return Err(LabError::Config(format!(
                "{} is not defined on {}",
                self.experiment.name(),
                self.manifold.label()
            )));
        }
        let sphere = self.manifold.kind == RoundSphere;
        let (modes, eps, delta, g): (Vec<u32>, f64, f64, GridConfig) = match self.experiment {
            GeometryChecks => (vec![], 0.4, 0.0, grid(2, 4, 4)),
            CircleZeros => (vec![5, 10, 20, 40, 50], 0.2, 0.0, grid(2, 4, 4)),
            NormGrowth if sphere => (vec![10, 20, 40], 0.45, 0.05, grid(9, 48, 88)),
            NormGrowth => (vec![5, 10, 20, 40], 0.45, 0.05, grid(9, 328, 4)),
            Husimi => (vec![5, 10, 20, 40], 0.45, 0.05, grid(24, 512, 4)),
            ZeroCurrent if sphere => (vec![10, 20, 30], 0.4, 0.1, grid(12, 24, 16)),
            ZeroCurrent => (vec![5, 10, 20, 40], 0.3, 0.0, grid(12, 512, 4)),
            RandomOnbSphere => (vec![20, 30, 50], 0.4, 0.1, grid(12, 24, 16)),
            TorusCounterexample => (vec![1, 2], 0.4, 0.1, grid(12, 256, 24)),
            NodalProbe if sphere => (vec![10, 20, 40], 0.0, 0.0, grid(2, 240, 4)),
            NodalProbe => (vec![5, 10, 20, 40], 0.0, 0.0, grid(2, 1024, 4)),
        };
        let samples_default = match self.experiment {
            GeometryChecks => 100,
            RandomOnbSphere => 20,
            NodalProbe if sphere => 5,
            _ => 1,
        };
        let r = Resolved {
            experiment: self.experiment,
            manifold: self.manifold,
            modes: self.modes.clone().unwrap_or(modes),
            samples: self.samples.unwrap_or(samples_default),
            epsilon: self.epsilon.unwrap_or(eps),
            delta: self.delta.unwrap_or(delta),
            grid: self.grid.unwrap_or(g),
            seed: self.seed,
            clip_floor: self.clip_floor.unwrap_or(grauert_core::currents::DEFAULT_CLIP_FLOOR),
            fd_step: self.fd_step.unwrap_or(grauert_core::currents::DEFAULT_FD_STEP),
            output_dir: self.output_dir.clone(),
        };
        r.validate(&manifold)?;
        Ok(r)
    }
}

impl Resolved {
    fn validate(&self, manifold: &ModelManifold) -> Result<(), LabError> {
        let bad = |msg: String| Err(LabError::Config(msg));
        if self.experiment != Experiment::GeometryChecks && self.modes.is_empty() {
            return bad("modes must not be empty".into());
        }
        if self.modes.contains(&0) {
            return bad("modes must be positive".into());
        }
        // Trend checks read the modes in order.
        if self.modes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("modes must be strictly increasing".into());
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon < manifold.tube_radius) {
            return bad(format!("epsilon {} outside [0, {})", self.epsilon, manifold.tube_radius));
        }
        if !(self.delta >= 0.0 && (self.delta < self.epsilon || self.epsilon == 0.0 && self.delta == 0.0)) {
            return bad(format!("delta {} must lie in [0, epsilon)", self.delta));
        }
        let g = self.grid;
        if g.n_radial < 2 || g.n_base < MIN_RESOLUTION || g.n_fiber < MIN_RESOLUTION {
            return bad(format!(
                "grid resolutions must be at least (2, {MIN_RESOLUTION}, {MIN_RESOLUTION}), got ({}, {}, {})",
                g.n_radial, g.n_base, g.n_fiber
            ));
        }
        if !(self.clip_floor.is_finite() && self.clip_floor < 0.0) {
            return bad(format!("clip_floor {} must be a negative log value", self.clip_floor));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1e-1) {
            return bad(format!("fd_step {} outside (0, 0.1)", self.fd_step));
        }
        Ok(())
    }

    pub fn manifold(&self) -> ModelManifold {
        self.manifold.build().expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"experiment": "circle-zeros", "manifold": {"kind": "circle", "dim": 1}, "output_dir": "out"}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
        let typo = r#"{"experiment": "circle-zeros", "manifold": {"kind": "circle", "dim": 1}, "output_dir": "out", "epsilno": 0.2}"#;
        assert!(matches!(ExperimentConfig::from_json(typo), Err(LabError::Config(_))));
        let nested = r#"{"experiment": "husimi", "manifold": {"kind": "circle", "dim": 1, "radius": 2}, "output_dir": "out"}"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "norm-growth", "manifold": {"kind": "round-sphere", "dim": 2}, "output_dir": "o"}"#,
        )
        .unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.modes, vec![10, 20, 40]);
        let mut bad = cfg.clone();
        bad.delta = Some(0.5);
        assert!(bad.resolve().is_err());
        let mut wrong = cfg;
        wrong.experiment = Experiment::Husimi;
        assert!(wrong.resolve().is_err());
    }

    #[test]
    fn hyperboloid_radius_is_enforced() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "geometry-checks", "manifold": {"kind": "hyperboloid", "dim": 2}, "epsilon": 2.5, "output_dir": "o"}"#,
        )
        .unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn modes_must_increase() {
        let json = |modes: &str| {
            format!(r#"{{"experiment": "husimi", "manifold": {{"kind": "circle", "dim": 1}}, "output_dir": "o", "modes": {modes}}}"#)
        };
        assert!(ExperimentConfig::from_json(&json("[5, 10]")).unwrap().resolve().is_ok());
        assert!(ExperimentConfig::from_json(&json("[10, 5]")).unwrap().resolve().is_err());
        assert!(ExperimentConfig::from_json(&json("[5, 5]")).unwrap().resolve().is_err());
    }
}
