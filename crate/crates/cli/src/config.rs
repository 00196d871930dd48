//! Experiment configuration (JSON) and the built-in phantom presets.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use cspapi::csdesign::StructureSpec;
use cspapi::geometry::{make_sensor_geometry, DiscSpec, ImageGrid, SensorGeometry, TimeGrid};
use cspapi::recon::{Boundary, TvOptions};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Number of detectors.
    pub n: usize,
    /// Detection radius `R`.
    #[serde(rename = "R")]
    pub radius: f64,
    /// Angular coverage `Ω` in radians.
    #[serde(rename = "Omega")]
    pub coverage: f64,
    /// Time samples on `[0, 2R]`.
    pub q: usize,
    /// Image side length in pixels.
    pub n_r: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n: 64,
            radius: 1.0,
            coverage: TAU,
            q: 512,
            n_r: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    pub b: usize,
    pub g: usize,
    pub group_count: usize,
    pub m0: usize,
    /// Column-subset size of the SIN objective.
    pub k: usize,
    pub n_iter: usize,
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    /// Design one group and place it on every diagonal block.
    pub share_design: bool,
    /// Minimum SIN of the unoptimised comparator.
    pub comparator_min_sin: f64,
    pub comparator_max_draws: usize,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            b: 4,
            g: 4,
            group_count: 4,
            m0: 12,
            k: 4,
            n_iter: 100,
            seed: 1,
            share_design: false,
            comparator_min_sin: 1e-3,
            comparator_max_draws: 100_000,
        }
    }
}

impl StructureConfig {
    pub fn spec(&self) -> CliResult<StructureSpec> {
        Ok(StructureSpec::new(self.b, self.g, self.group_count, self.m0)?)
    }

    /// Layout of a single diagonal block.
    pub fn group_spec(&self) -> CliResult<StructureSpec> {
        Ok(StructureSpec::new(self.b, self.g, 1, self.m0)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// One inverse-square-root disc: nearly constant circular means along each arc.
    Sparse,
    /// Several overlapping discs of both profiles.
    Nonsparse,
}

impl Preset {
    pub fn discs(self) -> Vec<DiscSpec<f64>> {
        match self {
            Preset::Sparse => vec![DiscSpec::inverse_sqrt([0.3, 0.2], 0.15, 0.15)],
            Preset::Nonsparse => vec![
                DiscSpec::inverse_sqrt([0.3, 0.2], 0.15, 0.15),
                DiscSpec::inverse_sqrt([-0.35, -0.1], 0.25, 0.2),
                DiscSpec::uniform([0.0, -0.5], 0.2, 0.8),
                DiscSpec::uniform([-0.2, 0.45], 0.12, 1.0),
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Sparse => "sparse",
            Preset::Nonsparse => "nonsparse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub preset: Option<Preset>,
    pub discs: Vec<DiscSpec<f64>>,
    /// Sub-pixel samples per axis when rendering the discs.
    pub supersample: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            preset: Some(Preset::Sparse),
            discs: Vec::new(),
            supersample: 8,
        }
    }
}

impl PhantomConfig {
    pub fn resolved_discs(&self) -> CliResult<Vec<DiscSpec<f64>>> {
        match (self.preset, self.discs.is_empty()) {
            (Some(p), true) => Ok(p.discs()),
            (None, _) => Ok(self.discs.clone()),
            (Some(_), false) => Err(CliError::Config("phantom takes either a preset or a disc list, not both".into())),
        }
    }

    pub fn label(&self) -> String {
        self.preset.map_or_else(|| format!("{} discs", self.discs.len()), |p| p.name().to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    /// `λ = lambda_factor · ‖YT‖∞`; defaults to 1e-6 on exact data and 1e-3 on noisy data.
    pub lambda_factor: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub boundary: Boundary,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            lambda_factor: None,
            max_iter: 2000,
            tol: 1e-8,
            boundary: Boundary::Circular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub structure: StructureConfig,
    pub phantom: PhantomConfig,
    /// Relative ℓ² error of the noise added to the compressed data.
    pub noise: f64,
    pub tv: TvConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            structure: StructureConfig::default(),
            phantom: PhantomConfig::default(),
            noise: 0.0,
            tv: TvConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let spec = self.structure.spec()?;
        if spec.n() != self.geometry.n {
            return Err(CliError::Dimension(format!(
                "b·g·group_count = {} must equal the detector count n = {}",
                spec.n(),
                self.geometry.n
            )));
        }
        if self.structure.k == 0 || self.structure.k > spec.n0() {
            return Err(CliError::Config(format!("k = {} must lie in 1..={}", self.structure.k, spec.n0())));
        }
        if self.structure.n_iter == 0 {
            return Err(CliError::Config("n_iter must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(CliError::Config(format!("noise level must be nonnegative, got {}", self.noise)));
        }
        if self.phantom.supersample == 0 {
            return Err(CliError::Config("supersample must be at least 1".into()));
        }
        self.sensor_geometry()?;
        self.time_grid()?;
        self.image_grid()?;
        self.phantom.resolved_discs()?;
        self.tv_options(1.0).validate()?;
        Ok(())
    }

    pub fn sensor_geometry(&self) -> CliResult<SensorGeometry<f64>> {
        let g = &self.geometry;
        Ok(make_sensor_geometry(g.n, g.radius, g.coverage)?)
    }

    pub fn time_grid(&self) -> CliResult<TimeGrid<f64>> {
        Ok(TimeGrid::new(self.geometry.q, self.geometry.radius)?)
    }

    pub fn image_grid(&self) -> CliResult<ImageGrid<f64>> {
        Ok(ImageGrid::new(self.geometry.n_r, self.geometry.radius)?)
    }

    pub fn lambda_factor(&self) -> f64 {
        self.tv
            .lambda_factor
            .unwrap_or(if self.noise > 0.0 { 1e-3 } else { 1e-6 })
    }

    /// Solver options for data whose transformed peak is `peak`.
    pub fn tv_options(&self, peak: f64) -> TvOptions<f64> {
        let lambda = if peak > 0.0 { self.lambda_factor() * peak } else { self.lambda_factor() };
        TvOptions {
            lambda,
            max_iter: self.tv.max_iter,
            tol: self.tv.tol,
            boundary: self.tv.boundary,
            track_objective: false,
        }
    }

    pub fn label(&self) -> String {
        if self.noise > 0.0 {
            format!("{} (noise {})", self.phantom.label(), self.noise)
        } else {
            format!("{} (exact)", self.phantom.label())
        }
    }
}

/// Randomised stages of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Design(usize),
    Comparator(usize),
    Noise(Variant),
}

/// Measurement matrices compared in every experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Optimized,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Optimized, Variant::Random];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Optimized => "optimized",
            Variant::Random => "random",
        }
    }
}

/// Seed of one stage: the first word of the ChaCha stream selected by the stage.
pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    let stream = match stage {
        Stage::Design(g) => 0x100 + g as u64,
        Stage::Comparator(g) => 0x200 + g as u64,
        Stage::Noise(Variant::Optimized) => 0x300,
        Stage::Noise(Variant::Random) => 0x301,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_hardware() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.structure.spec().unwrap().n(), 64);
        assert_eq!(cfg.lambda_factor(), 1e-6);
        assert_eq!(ExperimentConfig { noise: 0.1, ..cfg }.lambda_factor(), 1e-3);
    }

    #[test]
    fn partial_json_falls_back_to_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"structure": {"m0": 10}, "phantom": {"preset": "nonsparse"}}"#).unwrap();
        assert_eq!(cfg.structure.m0, 10);
        assert_eq!(cfg.structure.b, 4);
        assert_eq!(cfg.phantom.preset, Some(Preset::Nonsparse));
        assert_eq!(cfg.geometry.q, 512);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn inconsistent_layout_is_a_dimension_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.geometry.n = 60;
        assert!(matches!(cfg.validate(), Err(CliError::Dimension(_))));
    }

    #[test]
    fn preset_and_discs_are_exclusive() {
        let mut cfg = ExperimentConfig::default();
        cfg.phantom.discs = Preset::Sparse.discs();
        assert!(cfg.validate().is_err());
        cfg.phantom.preset = None;
        cfg.validate().unwrap();
    }

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let stages = [
            Stage::Design(0),
            Stage::Design(1),
            Stage::Comparator(0),
            Stage::Noise(Variant::Optimized),
            Stage::Noise(Variant::Random),
        ];
        let seeds: Vec<u64> = stages.iter().map(|&s| stage_seed(7, s)).collect();
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
        assert_eq!(stage_seed(7, Stage::Design(1)), seeds[1]);
        assert_ne!(stage_seed(8, Stage::Design(1)), seeds[1]);
    }
}
