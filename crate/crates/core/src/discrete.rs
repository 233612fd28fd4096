//! The process restricted to a lattice `pZ`: atoms only at lattice points,
//! which makes it a max-linear model with exact conditional weights. Also a
//! brute-force rejection oracle for conditioning.

use crate::error::{Error, Result};
use crate::model::{EmpiricalPredictive, Observations, Scenario, ShapeFamily};
use crate::uncond::replicate_rng;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

/// Relative tolerance for "this atom hits this observation exactly".
pub const HIT_TOL: f64 = 1e-9;

/// Lattice pitch, atom index range and shape family.
#[derive(Debug, Clone)]
pub struct LatticeSpec {
    pitch: f64,
    lo: i64,
    hi: i64,
    family: ShapeFamily,
}

impl LatticeSpec {
    pub fn new(pitch: f64, lo: i64, hi: i64, family: ShapeFamily) -> Result<LatticeSpec> {
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidArgument(format!("lattice pitch must be positive, got {pitch}")));
        }
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty lattice window {lo}..={hi}")));
        }
        Ok(LatticeSpec { pitch, lo, hi, family })
    }

    /// Window wide enough that every atom able to reach one of `sites` is included.
    pub fn covering(pitch: f64, family: ShapeFamily, sites: &[f64]) -> Result<LatticeSpec> {
        let r = family.support_radius();
        let a = sites.iter().copied().fold(f64::INFINITY, f64::min) - r;
        let b = sites.iter().copied().fold(f64::NEG_INFINITY, f64::max) + r;
        LatticeSpec::new(pitch, (a / pitch).floor() as i64, (b / pitch).ceil() as i64, family)
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn family(&self) -> &ShapeFamily {
        &self.family
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }

    /// Columns of the max-linear representation, `(k, f)` with `k` major.
    pub fn columns(&self) -> Vec<(i64, usize)> {
        self.indices().flat_map(|k| (0..self.family.len()).map(move |f| (k, f))).collect()
    }

    pub fn location(&self, k: i64) -> f64 {
        self.pitch * k as f64
    }

    /// Lattice index of `t`, or `OffLattice`.
    pub fn lattice_index(&self, t: f64) -> Result<i64> {
        let k = (t / self.pitch).round();
        if (t - k * self.pitch).abs() > 1e-9 * self.pitch.max(t.abs()) {
            return Err(Error::OffLattice(t));
        }
        Ok(k as i64)
    }

    fn shape_at(&self, f: usize, t: f64, k: i64) -> f64 {
        self.family.eval(f, t - self.location(k))
    }

    /// Checks `Σ_{k,f} P(f) f(t - pk) = 1` at each site.
    pub fn check_normalization(&self, sites: &[f64]) -> Result<()> {
        let a = maxlinear_coefficients(self, sites);
        for row in &a {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > self.family.normalization_tol() {
                return Err(Error::Normalization { integral: s, tolerance: self.family.normalization_tol() });
            }
        }
        Ok(())
    }
}

/// `a[i][c] = P(f) f(t_i - p k)` for column `c = (k, f)` of `spec.columns()`.
pub fn maxlinear_coefficients(spec: &LatticeSpec, sites: &[f64]) -> Vec<Vec<f64>> {
    let cols = spec.columns();
    sites.iter().map(|&t| cols.iter().map(|&(k, f)| spec.family.prob(f) * spec.shape_at(f, t, k)).collect()).collect()
}

/// Coefficient matrix as CSV, one row per site, columns labelled `k:f`.
pub fn write_coefficients_csv<W: Write>(spec: &LatticeSpec, sites: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["site".to_string()];
    header.extend(spec.columns().iter().map(|(k, f)| format!("{k}:{f}")));
    w.write_record(&header)?;
    for (t, row) in sites.iter().zip(maxlinear_coefficients(spec, sites)) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One unconditional draw: values at the sites and the generating column of each.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDraw {
    pub values: Vec<f64>,
    pub argmax: Vec<(i64, usize)>,
}

fn frechet<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    1.0 / e
}

/// Exact unconditional draw of the lattice process at `sites`.
pub fn simulate_discrete<R: Rng + ?Sized>(spec: &LatticeSpec, sites: &[f64], rng: &mut R) -> DiscreteDraw {
    let mut values = vec![0.0; sites.len()];
    let mut argmax = vec![(0, 0); sites.len()];
    for (k, f) in spec.columns() {
        let u = spec.family.prob(f) * frechet(rng);
        for (i, &t) in sites.iter().enumerate() {
            let v = u * spec.shape_at(f, t, k);
            if v > values[i] {
                values[i] = v;
                argmax[i] = (k, f);
            }
        }
    }
    DiscreteDraw { values, argmax }
}

/// A lattice atom `(k, f)` able to generate a block at level `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticeCandidate {
    pub k: i64,
    pub shape_id: usize,
    pub y: f64,
    /// `P(f) / y`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteBlock {
    pub members: Vec<usize>,
    pub candidates: Vec<LatticeCandidate>,
    pub weight: f64,
}

/// Blocks, the minimal-block scenarios and the per-column constraint levels.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteBlocks {
    pub blocks: Vec<DiscreteBlock>,
    pub scenarios: Vec<Scenario>,
    /// `min_i z_i / f(t_i - pk)` per column of `spec.columns()` (infinite if
    /// the column touches no observation).
    pub ceilings: Vec<f64>,
}

impl DiscreteBlocks {
    pub fn joint_probability(&self, members: &[usize]) -> f64 {
        self.scenarios
            .iter()
            .filter(|s| s.blocks.iter().any(|&b| self.blocks[b].members == members))
            .map(|s| s.prob)
            .sum()
    }
}

/// Exact block weights and the scenarios with the fewest blocks.
pub fn discrete_blocks(spec: &LatticeSpec, obs: &Observations) -> Result<DiscreteBlocks> {
    for &t in obs.sites() {
        spec.lattice_index(t)?;
    }
    let cols = spec.columns();
    let mut ceilings = Vec::with_capacity(cols.len());
    let mut by_members: BTreeMap<Vec<usize>, Vec<LatticeCandidate>> = BTreeMap::new();
    for &(k, f) in &cols {
        let curve: Vec<f64> = obs
            .sites()
            .iter()
            .zip(obs.values())
            .map(|(&t, &z)| {
                let v = spec.shape_at(f, t, k);
                if v > 0.0 {
                    z / v
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let y = curve.iter().copied().fold(f64::INFINITY, f64::min);
        ceilings.push(y);
        if !y.is_finite() {
            continue;
        }
        let members: Vec<usize> = (0..obs.len()).filter(|&i| curve[i] <= y * (1.0 + HIT_TOL)).collect();
        let weight = spec.family.prob(f) / y;
        by_members.entry(members).or_default().push(LatticeCandidate { k, shape_id: f, y, weight });
    }
    let blocks: Vec<DiscreteBlock> = by_members
        .into_iter()
        .map(|(members, candidates)| {
            let weight = candidates.iter().map(|c| c.weight).sum();
            DiscreteBlock { members, candidates, weight }
        })
        .collect();

    // Partitions into feasible blocks; keep those with the fewest blocks.
    let n = obs.len();
    let mut by_lowest: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (b, block) in blocks.iter().enumerate() {
        by_lowest[block.members[0]].push(b);
    }
    let mut all = Vec::new();
    fn rec(
        blocks: &[DiscreteBlock],
        by_lowest: &[Vec<usize>],
        taken: &mut Vec<bool>,
        chosen: &mut Vec<usize>,
        weight: f64,
        out: &mut Vec<Scenario>,
    ) {
        let Some(i) = taken.iter().position(|&t| !t) else {
            out.push(Scenario { blocks: chosen.clone(), weight, prob: 0.0 });
            return;
        };
        for &b in &by_lowest[i] {
            let m = &blocks[b].members;
            if m.iter().any(|&j| taken[j]) {
                continue;
            }
            m.iter().for_each(|&j| taken[j] = true);
            chosen.push(b);
            rec(blocks, by_lowest, taken, chosen, weight * blocks[b].weight, out);
            chosen.pop();
            m.iter().for_each(|&j| taken[j] = false);
        }
    }
    rec(&blocks, &by_lowest, &mut vec![false; n], &mut Vec::new(), 1.0, &mut all);
    let fewest = all
        .iter()
        .map(|s| s.blocks.len())
        .min()
        .ok_or_else(|| Error::Infeasible("observations cannot be generated by lattice atoms".into()))?;
    let mut scenarios: Vec<Scenario> = all.into_iter().filter(|s| s.blocks.len() == fewest).collect();
    let total: f64 = scenarios.iter().map(|s| s.weight).sum();
    for s in &mut scenarios {
        s.prob = s.weight / total;
    }
    Ok(DiscreteBlocks { blocks, scenarios, ceilings })
}

fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let v = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        acc += w;
        last = k;
        if v < acc {
            return k;
        }
    }
    last
}

/// One conditional draw of the lattice process at `eval_sites`.
pub fn discrete_conditional_draw<R: Rng + ?Sized>(
    spec: &LatticeSpec,
    obs: &Observations,
    blocks: &DiscreteBlocks,
    eval_sites: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let cols = spec.columns();
    let sc = &blocks.scenarios[pick(blocks.scenarios.iter().map(|s| s.prob), rng)];
    let mut fixed: Vec<Option<f64>> = vec![None; cols.len()];
    let nf = spec.family.len();
    for &b in &sc.blocks {
        let block = &blocks.blocks[b];
        let c = block.candidates[pick(block.candidates.iter().map(|c| c.weight), rng)];
        fixed[(c.k - spec.lo) as usize * nf + c.shape_id] = Some(c.y);
    }
    let mut values = vec![0.0f64; eval_sites.len()];
    for (c, &(k, f)) in cols.iter().enumerate() {
        let u = match fixed[c] {
            Some(y) => y,
            None => {
                let p = spec.family.prob(f);
                let e: f64 = rng.sample(Exp1);
                // Fréchet with scale p, conditioned to stay below the ceiling.
                1.0 / (1.0 / blocks.ceilings[c] + e / p)
            }
        };
        for (v, &t) in values.iter_mut().zip(eval_sites) {
            *v = v.max(u * spec.shape_at(f, t, k));
        }
    }
    for (v, &t) in values.iter_mut().zip(eval_sites) {
        if let Some(i) = obs.sites().iter().position(|&s| s == t) {
            *v = obs.value(i);
        }
    }
    values
}

/// `n_draws` conditional values at `t0`; draw `k` uses stream `k` of `seed`.
pub fn discrete_condition(
    spec: &LatticeSpec,
    obs: &Observations,
    t0: f64,
    n_draws: usize,
    seed: u64,
) -> Result<EmpiricalPredictive> {
    if n_draws == 0 {
        return Err(Error::InvalidCount(0));
    }
    let blocks = discrete_blocks(spec, obs)?;
    let draws = (0..n_draws)
        .into_par_iter()
        .map(|k| discrete_conditional_draw(spec, obs, &blocks, &[t0], &mut replicate_rng(seed, k as u64))[0])
        .collect();
    EmpiricalPredictive::new(t0, draws)
}

/// Smallest acceptance rate tolerated by the oracle, checked once at least
/// `MIN_TRIALS` draws were made.
pub const MIN_ACCEPTANCE: f64 = 1e-6;
pub const MIN_TRIALS: u64 = 1_000_000;
const CHUNK: u64 = 20_000;

/// Accepted values at `t0` of unconditional draws whose observations fall in
/// `(z_i, z_i (1 + delta)]`.
pub fn rejection_oracle(
    spec: &LatticeSpec,
    obs: &Observations,
    delta: f64,
    t0: f64,
    n_accepted: usize,
    seed: u64,
) -> Result<EmpiricalPredictive> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("box width must be positive, got {delta}")));
    }
    if n_accepted == 0 {
        return Err(Error::InvalidCount(0));
    }
    let mut sites = obs.sites().to_vec();
    sites.push(t0);
    let n = obs.len();
    let batch = rayon::current_num_threads().max(1) as u64 * 4;
    let mut accepted = Vec::with_capacity(n_accepted);
    let mut trials = 0u64;
    let mut chunk = 0u64;
    while accepted.len() < n_accepted {
        let found: Vec<Vec<f64>> = (chunk..chunk + batch)
            .into_par_iter()
            .map(|c| {
                let mut rng = replicate_rng(seed, c);
                let mut out = Vec::new();
                for _ in 0..CHUNK {
                    let d = simulate_discrete(spec, &sites, &mut rng);
                    let inside = (0..n).all(|i| {
                        let (v, z) = (d.values[i], obs.value(i));
                        v > z && v <= z * (1.0 + delta)
                    });
                    if inside {
                        out.push(d.values[n]);
                    }
                }
                out
            })
            .collect();
        chunk += batch;
        trials += batch * CHUNK;
        for f in found {
            accepted.extend(f);
        }
        let rate = accepted.len() as f64 / trials as f64;
        if trials >= MIN_TRIALS && rate < MIN_ACCEPTANCE {
            return Err(Error::AcceptanceTooLow { rate, min: MIN_ACCEPTANCE });
        }
    }
    accepted.truncate(n_accepted);
    EmpiricalPredictive::new(t0, accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{canonicalize_observations, Shape, Tabulated};
    use crate::uncond::frechet_ks;

    fn two_point_shape() -> Shape {
        Shape::Tabulated(Tabulated::new(vec![0.0, 1.0], vec![0.6, 0.4]).unwrap())
    }

    fn three_point_shape() -> Shape {
        Shape::Tabulated(Tabulated::new(vec![1.0, 2.0, 3.0], vec![0.3, 0.2, 0.5]).unwrap())
    }

    fn single_spec() -> LatticeSpec {
        let fam = ShapeFamily::new(vec![two_point_shape()], vec![1.0], 3.0, 1e-9).unwrap();
        LatticeSpec::new(1.0, -3, 3, fam).unwrap()
    }

    pub(crate) fn two_shape_spec() -> LatticeSpec {
        let fam = ShapeFamily::new(vec![two_point_shape(), three_point_shape()], vec![0.5, 0.5], 3.0, 1e-9).unwrap();
        LatticeSpec::new(1.0, -3, 3, fam).unwrap()
    }

    #[test]
    fn singleton_weight() {
        let spec = single_spec();
        let obs = canonicalize_observations(&[0.0], &[2.0]).unwrap();
        let b = discrete_blocks(&spec, &obs).unwrap();
        assert_eq!(b.blocks.len(), 1);
        assert!((b.blocks[0].weight - 0.5).abs() < 1e-15);
        assert_eq!(b.blocks[0].candidates.len(), 2);
    }

    #[test]
    fn pair_hit_weight() {
        let spec = single_spec();
        let obs = canonicalize_observations(&[0.0, 1.0], &[1.2, 0.8]).unwrap();
        let b = discrete_blocks(&spec, &obs).unwrap();
        let pair = b.blocks.iter().find(|bl| bl.members == [0, 1]).unwrap();
        assert_eq!(pair.candidates.len(), 1);
        assert!((pair.weight - 0.5).abs() < 1e-12);
        // One block beats two singletons.
        assert_eq!(b.scenarios.len(), 1);
        assert!((b.joint_probability(&[0, 1]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn off_lattice_and_infeasible() {
        let spec = single_spec();
        let obs = canonicalize_observations(&[0.5], &[1.0]).unwrap();
        assert!(matches!(discrete_blocks(&spec, &obs), Err(Error::OffLattice(_))));
        // Site far outside every atom's reach.
        let obs = canonicalize_observations(&[50.0], &[1.0]).unwrap();
        assert!(matches!(discrete_blocks(&spec, &obs), Err(Error::Infeasible(_))));
    }

    #[test]
    fn coefficients_and_row_sums() {
        let spec = single_spec();
        let a = maxlinear_coefficients(&spec, &[0.0]);
        let cols = spec.columns();
        for (c, &(k, _)) in cols.iter().enumerate() {
            let want = match k {
                0 => 0.6,
                -1 => 0.4,
                _ => 0.0,
            };
            assert_eq!(a[0][c], want);
        }
        let spec2 = two_shape_spec();
        let a2 = maxlinear_coefficients(&spec2, &[0.0, 1.0, 2.0]);
        for row in &a2 {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let c2 = spec2.columns();
        let idx = c2.iter().position(|&c| c == (0, 0)).unwrap();
        assert_eq!(a2[0][idx], 0.3);
        spec2.check_normalization(&[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_coefficients_csv(&spec2, &[0.0], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("site,-3:0,-3:1"));
    }

    #[test]
    fn discrete_margins_are_frechet() {
        let spec = two_shape_spec();
        let mut rng = replicate_rng(21, 0);
        let z: Vec<f64> = (0..10_000).map(|_| simulate_discrete(&spec, &[0.0], &mut rng).values[0]).collect();
        assert!(frechet_ks(&z).unwrap() < 0.025);
    }

    #[test]
    fn conditional_interpolates_and_uses_both_candidates() {
        let spec = two_shape_spec();
        let obs = canonicalize_observations(&[0.0, 1.0], &[1.2, 0.8]).unwrap();
        let b = discrete_blocks(&spec, &obs).unwrap();
        let pair = b.blocks.iter().find(|bl| bl.members == [0, 1]).unwrap();
        assert_eq!(pair.candidates.len(), 2);
        assert!((pair.weight - (0.5 / 2.0 + 0.5 / 4.0)).abs() < 1e-12);
        let p = discrete_condition(&spec, &obs, 0.0, 100, 1).unwrap();
        assert!(p.draws.iter().all(|&v| v == 1.2));
        // At t0 = 2 the second candidate puts mass at 4 * 0.5 = 2.
        let p = discrete_condition(&spec, &obs, 2.0, 20_000, 2).unwrap();
        let at2 = p.draws.iter().filter(|&&v| v == 2.0).count() as f64 / 20_000.0;
        assert!(at2 > 0.25 && at2 <= 1.0 / 3.0 + 0.02, "{at2}");
    }

    #[test]
    fn oracle_accepts_everything_for_huge_boxes() {
        let spec = two_shape_spec();
        let obs = canonicalize_observations(&[0.0], &[1e-12]).unwrap();
        let p = rejection_oracle(&spec, &obs, 1e30, 1.0, 10_000, 3).unwrap();
        assert!(frechet_ks(&p.draws).unwrap() < 0.025);
        let bad = canonicalize_observations(&[0.0], &[1e9]).unwrap();
        assert!(matches!(rejection_oracle(&spec, &bad, 1e-9, 1.0, 10, 3), Err(Error::AcceptanceTooLow { .. })));
    }

    #[test]
    fn generating_partition_is_minimal() {
        let spec = two_shape_spec();
        let sites = [-1.0, 0.0, 1.0, 2.0];
        let mut rng = replicate_rng(22, 0);
        let mut misses = 0;
        let trials = 500;
        for _ in 0..trials {
            let d = simulate_discrete(&spec, &sites, &mut rng);
            let obs = canonicalize_observations(&sites, &d.values).unwrap();
            let b = discrete_blocks(&spec, &obs).unwrap();
            let mut truth = d.argmax.clone();
            truth.sort();
            truth.dedup();
            let fewest = b.scenarios[0].blocks.len();
            if truth.len() != fewest {
                misses += 1;
            }
        }
        assert!(misses as f64 <= 0.01 * trials as f64, "{misses}");
    }
}
