//! Conditional simulation given exact observations: scenario choice, the
//! generating atoms, and an independent draw of the atoms below the data.

use crate::error::{Error, Result};
use crate::geometry::Envelope;
use crate::model::{Atom, EmpiricalPredictive, Observations, ShapeFamily, Tolerances};
use crate::scenario::{
    enumerate_feasible_blocks, enumerate_scenarios, scenario_probabilities, GeneratorSampler, ScenarioTable,
};
use crate::shapes::ShapeLaw;
use crate::uncond::{
    replicate_rng, simulate_points_below, BelowStop, SimWindow, StopDiagnostics, DEFAULT_RELATIVE_FLOOR,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Settings of the conditional sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalConfig {
    /// Grouping tolerance for multi-index blocks.
    pub eps: f64,
    /// Atoms below the data are dropped once `u * sup` is under this
    /// fraction of the smallest observation.
    pub relative_floor: f64,
    pub tolerances: Tolerances,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        ConditionalConfig { eps: 1e-6, relative_floor: DEFAULT_RELATIVE_FLOOR, tolerances: Tolerances::default() }
    }
}

/// One conditional draw at a set of evaluation sites.
#[derive(Debug, Clone)]
pub struct ConditionalDraw {
    pub values: Vec<f64>,
    pub scenario: usize,
    pub generators: Vec<Atom>,
    pub below_count: usize,
    pub stop: StopDiagnostics,
}

/// Conditional sampler for fixed observations. The generating atoms come
/// from `family`; the atoms below the data come from `below`, which is the
/// same family for the exact method and a continuous shape law for the
/// hybrid method.
#[derive(Debug)]
pub struct ConditionalSampler<'a, L: ShapeLaw> {
    obs: &'a Observations,
    family: &'a ShapeFamily,
    below: &'a L,
    generators: GeneratorSampler<'a>,
    table: ScenarioTable,
    config: ConditionalConfig,
}

impl<'a, L: ShapeLaw> ConditionalSampler<'a, L> {
    pub fn new(
        obs: &'a Observations,
        family: &'a ShapeFamily,
        below: &'a L,
        config: ConditionalConfig,
    ) -> Result<Self> {
        let env = Envelope::new(obs, family, config.tolerances)?;
        let set = enumerate_feasible_blocks(&env, config.eps)?;
        let scenarios =
            scenario_probabilities(enumerate_scenarios(&set.blocks, obs.len(), config.tolerances.max_free)?)?;
        let table = ScenarioTable::new(obs, config.eps, &set, scenarios.clone());
        let generators = GeneratorSampler::new(&env, set, scenarios)?;
        Ok(ConditionalSampler { obs, family, below, generators, table, config })
    }

    pub fn table(&self) -> &ScenarioTable {
        &self.table
    }

    pub fn observations(&self) -> &Observations {
        self.obs
    }

    fn window(&self, eval_sites: &[f64]) -> SimWindow {
        let mut all = self.obs.sites().to_vec();
        all.extend_from_slice(eval_sites);
        SimWindow::covering(&all, self.below.support_radius().max(self.family.support_radius()))
    }

    fn obs_index(&self, t: f64) -> Option<usize> {
        let sites = self.obs.sites();
        let k = sites.partition_point(|&s| s < t);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .find(|&i| i < sites.len() && (sites[i] - t).abs() <= 1e-12 * (1.0 + t.abs()))
    }

    /// Draws the process at `eval_sites` given the observations.
    pub fn draw<R: Rng + ?Sized>(&self, eval_sites: &[f64], rng: &mut R) -> Result<ConditionalDraw> {
        // Separate streams for the two independent parts.
        let mut rng_gen = ChaCha8Rng::seed_from_u64(rng.random());
        let mut rng_below = ChaCha8Rng::seed_from_u64(rng.random());

        let scenario = self.generators.sample_scenario(&mut rng_gen);
        let generators = self.generators.sample_generators(scenario, &mut rng_gen)?;
        let initial: Vec<f64> = eval_sites
            .iter()
            .map(|&t| generators.iter().map(|a| a.u * self.family.eval(a.shape_id, t - a.s)).fold(0.0, f64::max))
            .collect();
        let zmin = self.obs.values().iter().copied().fold(f64::INFINITY, f64::min);
        let stop = BelowStop { eval_sites, initial: &initial, floor: self.config.relative_floor * zmin };
        let window = self.window(eval_sites);
        let below = simulate_points_below(self.below, self.obs, &window, &stop, &mut rng_below)?;
        let mut values = below.eval_values;
        for (v, &t) in values.iter_mut().zip(eval_sites) {
            if let Some(i) = self.obs_index(t) {
                *v = self.obs.value(i);
            }
        }
        Ok(ConditionalDraw { values, scenario, generators, below_count: below.atoms.len(), stop: below.stop })
    }

    /// `n_draws` independent conditional values at `t0`; draw `k` uses
    /// stream `k` of `seed`.
    pub fn predictive(&self, t0: f64, n_draws: usize, seed: u64) -> Result<EmpiricalPredictive> {
        if n_draws == 0 {
            return Err(Error::InvalidCount(0));
        }
        let draws = (0..n_draws)
            .into_par_iter()
            .map(|k| self.draw(&[t0], &mut replicate_rng(seed, k as u64)).map(|d| d.values[0]))
            .collect::<Result<Vec<f64>>>()?;
        EmpiricalPredictive::new(t0, draws)
    }

    /// `n_draws` conditional paths over `grid`.
    pub fn paths(&self, grid: &[f64], n_draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        (0..n_draws)
            .into_par_iter()
            .map(|k| self.draw(grid, &mut replicate_rng(seed, k as u64)).map(|d| d.values))
            .collect()
    }
}

/// One conditional draw using the family itself for both parts.
pub fn conditional_draw<R: Rng + ?Sized>(
    obs: &Observations,
    family: &ShapeFamily,
    eval_sites: &[f64],
    config: ConditionalConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(ConditionalSampler::new(obs, family, family, config)?.draw(eval_sites, rng)?.values)
}

/// Generating atoms from the finite family `approx`, atoms below the data
/// from the continuous law `full`.
pub fn hybrid_draw<L: ShapeLaw, R: Rng + ?Sized>(
    obs: &Observations,
    approx: &ShapeFamily,
    full: &L,
    eval_sites: &[f64],
    config: ConditionalConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(ConditionalSampler::new(obs, approx, full, config)?.draw(eval_sites, rng)?.values)
}

/// Empirical quantile, lower type: the `floor(q (M - 1))`-th order statistic.
pub fn conditional_quantile(pred: &EmpiricalPredictive, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must be in (0, 1), got {q}")));
    }
    Ok(lower_quantile(&pred.draws, q))
}

pub(crate) fn lower_quantile(draws: &[f64], q: f64) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    s[(q * (s.len() - 1) as f64).floor() as usize]
}

/// Paths as wide CSV: a header of grid locations, then one row per draw.
pub fn write_paths_csv<W: Write>(grid: &[f64], paths: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(grid.iter().map(|t| t.to_string()))?;
    for p in paths {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonicalize_observations;
    use crate::shapes::build_smith_family;

    #[test]
    fn interpolates_observations() {
        let fam = build_smith_family();
        let obs = canonicalize_observations(&[-1.0, 1.0], &[1.0, 2.5]).unwrap();
        let s = ConditionalSampler::new(&obs, &fam, &fam, ConditionalConfig::default()).unwrap();
        let mut rng = replicate_rng(1, 0);
        for _ in 0..200 {
            let d = s.draw(&[-1.0, 0.0, 1.0], &mut rng).unwrap();
            assert_eq!(d.values[0], 1.0);
            assert_eq!(d.values[2], 2.5);
            assert!(d.values[1] > 0.0);
        }
    }

    #[test]
    fn generator_lower_bound() {
        let fam = build_smith_family();
        let obs = canonicalize_observations(&[0.0], &[1e6]).unwrap();
        let s = ConditionalSampler::new(&obs, &fam, &fam, ConditionalConfig::default()).unwrap();
        let mut rng = replicate_rng(2, 0);
        let grid = [-0.1, 0.1];
        for _ in 0..100 {
            let d = s.draw(&grid, &mut rng).unwrap();
            let a = d.generators[0];
            for (k, &t) in grid.iter().enumerate() {
                assert!(d.values[k] >= a.u * fam.eval(0, t - a.s));
                assert!(d.values[k] > 1e4);
            }
        }
    }

    #[test]
    fn hybrid_with_same_family_matches_exact() {
        let fam = build_smith_family();
        let obs = canonicalize_observations(&[-1.0, 1.0], &[1.0, 2.5]).unwrap();
        let cfg = ConditionalConfig::default();
        let a = conditional_draw(&obs, &fam, &[0.3], cfg, &mut replicate_rng(3, 1)).unwrap();
        let b = hybrid_draw(&obs, &fam, &fam, &[0.3], cfg, &mut replicate_rng(3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predictive_point_mass_at_site() {
        let fam = build_smith_family();
        let obs = canonicalize_observations(&[-1.0, 1.0], &[1.0, 2.5]).unwrap();
        let s = ConditionalSampler::new(&obs, &fam, &fam, ConditionalConfig::default()).unwrap();
        let p = s.predictive(-1.0, 50, 4).unwrap();
        assert!(p.draws.iter().all(|&v| v == 1.0));
        for q in [0.1, 0.5, 0.9] {
            assert_eq!(conditional_quantile(&p, q).unwrap(), 1.0);
        }
        let one = s.predictive(0.0, 1, 4).unwrap();
        assert_eq!(one.draws.len(), 1);
        assert!(matches!(s.predictive(0.0, 0, 4), Err(Error::InvalidCount(0))));
        // Same seed, same sample regardless of scheduling.
        assert_eq!(s.predictive(0.0, 20, 9).unwrap(), s.predictive(0.0, 20, 9).unwrap());
    }

    #[test]
    fn quantiles() {
        let p = EmpiricalPredictive::new(0.0, vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(conditional_quantile(&p, 0.5).unwrap(), 2.0);
        assert!(conditional_quantile(&p, 1.0).is_err());
        let mut rng = replicate_rng(6, 0);
        let d: Vec<f64> = (0..10_000).map(|_| -1.0 / rng.random::<f64>().ln()).collect();
        let p = EmpiricalPredictive::new(0.0, d).unwrap();
        let m = conditional_quantile(&p, 0.5).unwrap();
        assert!((m - 1.0 / std::f64::consts::LN_2).abs() < 0.05);
    }

    #[test]
    fn paths_csv_layout() {
        let fam = build_smith_family();
        let obs = canonicalize_observations(&[0.0], &[1.0]).unwrap();
        let s = ConditionalSampler::new(&obs, &fam, &fam, ConditionalConfig::default()).unwrap();
        let grid = [-1.0, 0.0, 1.0];
        let paths = s.paths(&grid, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&grid, &paths, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("1")));
    }
}
