//! Run configurations and the models they describe.

use crate::conditional::{ConditionalConfig, ConditionalSampler};
use crate::discrete::{discrete_blocks, discrete_condition, simulate_discrete, LatticeSpec};
use crate::error::{Error, Result};
use crate::model::{
    canonicalize_observations, EmpiricalPredictive, Observations, Shape, ShapeFamily, Tabulated, Tolerances,
};
use crate::shapes::{build_br_family, build_smith_family, BrShapeConfig, BrownResnickLaw};
use crate::uncond::{replicate_rng, simulate_max_field, SimWindow, DEFAULT_RELATIVE_FLOOR};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

fn default_eps() -> f64 {
    1e-6
}

fn default_relative_floor() -> f64 {
    DEFAULT_RELATIVE_FLOOR
}

fn default_n_shapes() -> usize {
    250
}

fn default_br_full() -> BrShapeConfig {
    BrShapeConfig { half_width: 20.0, step: 0.1 }
}

fn default_pitch() -> f64 {
    1.0
}

/// A tabulated shape given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedConfig {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Gaussian density shape.
    Smith {},
    /// `n_shapes` sampled shapes on the `family` grid generate the data;
    /// atoms below the data and unconditional fields use fresh shapes on
    /// the wider `full` grid.
    BrownResnick {
        #[serde(default = "default_n_shapes")]
        n_shapes: usize,
        #[serde(default)]
        family: BrShapeConfig,
        #[serde(default = "default_br_full")]
        full: BrShapeConfig,
    },
    /// Atoms on the lattice `pitch * {lo, ..., hi}`.
    Discrete {
        #[serde(default = "default_pitch")]
        pitch: f64,
        lo: i64,
        hi: i64,
        shapes: Vec<TabulatedConfig>,
        probs: Vec<f64>,
    },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Smith {}
    }
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Smith {} => "smith",
            ModelConfig::BrownResnick { .. } => "brown_resnick",
            ModelConfig::Discrete { .. } => "discrete",
        }
    }

    /// Builds the model; sampled families draw from a stream derived from `seed`.
    pub fn build(&self, seed: u64) -> Result<Model> {
        match self {
            ModelConfig::Smith {} => Ok(Model::Smith { family: build_smith_family() }),
            ModelConfig::BrownResnick { n_shapes, family, full } => {
                family.validate().map_err(|e| config_err("model.family", e))?;
                full.validate().map_err(|e| config_err("model.full", e))?;
                if *n_shapes == 0 {
                    return Err(Error::Config { path: "model.n_shapes".into(), message: "must be at least 1".into() });
                }
                let mut rng = replicate_rng(derive_seed(seed, "family"), 0);
                let fam = build_br_family(*n_shapes, family, &mut rng)?;
                Ok(Model::BrownResnick { family: fam, full: BrownResnickLaw { config: full.clone() } })
            }
            ModelConfig::Discrete { pitch, lo, hi, shapes, probs } => {
                if shapes.is_empty() || shapes.len() != probs.len() {
                    return Err(Error::Config {
                        path: "model.probs".into(),
                        message: "need one probability per shape".into(),
                    });
                }
                let mut built = Vec::with_capacity(shapes.len());
                let mut radius: f64 = 0.0;
                for (k, s) in shapes.iter().enumerate() {
                    let t = Tabulated::new(s.knots.clone(), s.values.clone())
                        .map_err(|e| config_err(&format!("model.shapes[{k}]"), e))?;
                    let (a, b) = t.hull();
                    radius = radius.max(a.abs()).max(b.abs());
                    built.push(Shape::Tabulated(t));
                }
                let family = ShapeFamily::new(built, probs.clone(), radius, 1e-6)?;
                Ok(Model::Discrete { spec: LatticeSpec::new(*pitch, *lo, *hi, family)? })
            }
        }
    }
}

fn config_err(path: &str, e: Error) -> Error {
    Error::Config { path: path.into(), message: e.to_string() }
}

/// A built model.
#[derive(Debug)]
pub enum Model {
    Smith { family: ShapeFamily },
    BrownResnick { family: ShapeFamily, full: BrownResnickLaw },
    Discrete { spec: LatticeSpec },
}

impl Model {
    /// The family generating the data in the conditional sampler.
    pub fn family(&self) -> &ShapeFamily {
        match self {
            Model::Smith { family } | Model::BrownResnick { family, .. } => family,
            Model::Discrete { spec } => spec.family(),
        }
    }

    /// One unconditional field at `sites`.
    pub fn simulate<R: Rng + ?Sized>(&self, sites: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Model::Smith { family } => {
                let w = SimWindow::covering(sites, family.support_radius());
                Ok(simulate_max_field(family, sites, &w, rng)?.values)
            }
            Model::BrownResnick { full, .. } => {
                let w = SimWindow::covering(sites, full.config.half_width);
                Ok(simulate_max_field(full, sites, &w, rng)?.values)
            }
            Model::Discrete { spec } => {
                for &t in sites {
                    spec.lattice_index(t)?;
                }
                Ok(simulate_discrete(spec, sites, rng).values)
            }
        }
    }

    /// `n_draws` conditional values at `t0` given `obs`.
    pub fn predictive(
        &self,
        obs: &Observations,
        t0: f64,
        config: ConditionalConfig,
        n_draws: usize,
        seed: u64,
    ) -> Result<EmpiricalPredictive> {
        match self {
            Model::Smith { family } => {
                ConditionalSampler::new(obs, family, family, config)?.predictive(t0, n_draws, seed)
            }
            Model::BrownResnick { family, full } => {
                ConditionalSampler::new(obs, family, full, config)?.predictive(t0, n_draws, seed)
            }
            Model::Discrete { spec } => discrete_condition(spec, obs, t0, n_draws, seed),
        }
    }

    /// Scenario structure of `obs` as pretty JSON.
    pub fn scenario_json(&self, obs: &Observations, config: ConditionalConfig) -> Result<String> {
        match self {
            Model::Smith { family } => ConditionalSampler::new(obs, family, family, config)?.table().to_json(),
            Model::BrownResnick { family, full } => {
                ConditionalSampler::new(obs, family, full, config)?.table().to_json()
            }
            Model::Discrete { spec } => Ok(serde_json::to_string_pretty(&discrete_blocks(spec, obs)?)?),
        }
    }

    /// Conditional paths over `grid` (lattice sites only for the lattice model).
    pub fn paths(
        &self,
        obs: &Observations,
        grid: &[f64],
        config: ConditionalConfig,
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            Model::Smith { family } => ConditionalSampler::new(obs, family, family, config)?.paths(grid, n, seed),
            Model::BrownResnick { family, full } => {
                ConditionalSampler::new(obs, family, full, config)?.paths(grid, n, seed)
            }
            Model::Discrete { spec } => {
                let blocks = discrete_blocks(spec, obs)?;
                for &t in grid {
                    spec.lattice_index(t)?;
                }
                Ok((0..n)
                    .map(|k| {
                        crate::discrete::discrete_conditional_draw(
                            spec,
                            obs,
                            &blocks,
                            grid,
                            &mut replicate_rng(seed, k as u64),
                        )
                    })
                    .collect())
            }
        }
    }
}

/// Independent seed for the named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// `simulate`: unconditional fields at `sites`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub seed: u64,
    pub sites: Vec<f64>,
    pub n: usize,
}

/// Evaluation grid `from, from + step, ..., to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub from: f64,
    pub to: f64,
    pub step: f64,
    pub n: usize,
}

impl PathConfig {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.to >= self.from) {
            return Err(Error::Config { path: "paths".into(), message: "need step > 0 and to >= from".into() });
        }
        let m = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        Ok((0..=m).map(|k| self.from + k as f64 * self.step).collect())
    }
}

/// `condition`: predictive at `t0` given `values` at `sites`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub seed: u64,
    pub sites: Vec<f64>,
    pub values: Vec<f64>,
    pub t0: f64,
    pub draws: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_relative_floor")]
    pub relative_floor: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub paths: Option<PathConfig>,
}

impl ConditionConfig {
    pub fn conditional(&self) -> ConditionalConfig {
        ConditionalConfig { eps: self.eps, relative_floor: self.relative_floor, tolerances: self.tolerances }
    }

    pub fn observations(&self) -> Result<Observations> {
        canonicalize_observations(&self.sites, &self.values)
    }
}

/// `validate`: family diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Reads a JSON config; every failure is an `Error::Config` naming the
/// offending key where there is one.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}

pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Config { path, message: format!("{inner} (line {}, column {})", inner.line(), inner.column()) }
    })
}

/// SHA-256 of the config bytes, hex encoded.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_condition_config() {
        let c: ConditionConfig =
            parse_config(r#"{"seed": 1, "sites": [-1, 1], "values": [1, 1], "t0": 0, "draws": 10}"#).unwrap();
        assert_eq!(c.model, ModelConfig::Smith {});
        assert_eq!(c.eps, 1e-6);
        assert!(c.paths.is_none());
    }

    #[test]
    fn unknown_and_bad_keys_name_the_path() {
        let e = parse_config::<ConditionConfig>(
            r#"{"seed": 1, "sites": [0], "values": [1], "t0": 0, "draws": 10, "extra": 3}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
        assert!(e.to_string().contains("extra"), "{e}");
        let e = parse_config::<SimulateConfig>(r#"{"seed": 1, "sites": [0], "n": -4}"#).unwrap_err();
        match e {
            Error::Config { path, .. } => assert_eq!(path, "n"),
            other => panic!("{other:?}"),
        }
        let e = parse_config::<ValidateConfig>(r#"{"model": {"kind": "brown_resnick", "n_shape": 3}}"#).unwrap_err();
        assert!(e.to_string().contains("n_shape"), "{e}");
    }

    #[test]
    fn model_configs_build() {
        let m: ModelConfig = parse_config(r#"{"kind": "brown_resnick", "n_shapes": 5}"#).unwrap();
        match m.build(3).unwrap() {
            Model::BrownResnick { family, full } => {
                assert_eq!(family.len(), 5);
                assert_eq!(full.config.half_width, 20.0);
            }
            other => panic!("{other:?}"),
        }
        let d: ModelConfig = parse_config(
            r#"{"kind": "discrete", "lo": -3, "hi": 3,
                "shapes": [{"knots": [0, 1], "values": [0.6, 0.4]}, {"knots": [1, 2, 3], "values": [0.3, 0.2, 0.5]}],
                "probs": [0.5, 0.5]}"#,
        )
        .unwrap();
        let model = d.build(0).unwrap();
        let mut rng = replicate_rng(1, 0);
        assert_eq!(model.simulate(&[0.0, 1.0], &mut rng).unwrap().len(), 2);
        assert!(matches!(model.simulate(&[0.5], &mut rng), Err(Error::OffLattice(_))));
    }

    #[test]
    fn seeds_and_hashes() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_eq!(config_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn path_grid() {
        let p = PathConfig { from: -1.0, to: 1.0, step: 0.5, n: 2 };
        assert_eq!(p.grid().unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }
}
