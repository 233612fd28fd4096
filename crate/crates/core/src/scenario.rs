//! Feasible blocks, scenario enumeration and probabilities, and sampling of
//! the atoms that generate the observations.

use crate::error::{Error, Result};
use crate::geometry::{group_by_tolerance, Envelope, RegionSampler, SingletonRegion};
use crate::model::{Atom, Block, CandidatePoint, Observations, Scenario, ShapeFamily};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// One pair root together with the tolerance group at that location.
#[derive(Debug, Clone)]
struct Hit {
    shape_id: usize,
    x0: f64,
    y: f64,
    group: Vec<usize>,
    pair: (usize, usize),
}

/// All feasible blocks for one set of observations.
#[derive(Debug, Clone, Serialize)]
pub struct BlockSet {
    pub blocks: Vec<Block>,
    pub singleton_regions: Vec<SingletonRegion>,
    /// `(i, j, x)` of skipped tangential pair contacts.
    pub tangencies: Vec<(usize, usize, f64)>,
    /// Largest relative change of candidate probabilities inside a forced
    /// block when the weights are computed from a different index pair.
    pub labelling_spread: f64,
}

impl BlockSet {
    pub fn forced(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.forced)
    }
}

fn pair_hits(env: &Envelope, eps: f64) -> Vec<Hit> {
    let n = env.obs().len();
    let eff = eps.max(env.tolerances().slack);
    let mut hits = Vec::new();
    for f in 0..env.family().len() {
        for i in 0..n {
            for j in i + 1..n {
                for &x0 in env.pair_roots(f, i, j) {
                    let v = env.curves_at(f, x0);
                    let group = group_by_tolerance(&v, eff);
                    if !(group.contains(&i) && group.contains(&j)) {
                        continue;
                    }
                    let y = group.iter().map(|&k| v[k]).fold(f64::INFINITY, f64::min);
                    hits.push(Hit { shape_id: f, x0, y, group, pair: (i, j) });
                }
            }
        }
    }
    hits
}

/// Groups hits of one block and shape into distinct locations: neighbouring
/// hits belong to the same location when the group at their midpoint is
/// still the block.
fn cluster_hits<'h>(env: &Envelope, eps: f64, mut hits: Vec<&'h Hit>) -> Vec<Vec<&'h Hit>> {
    hits.sort_by(|a, b| a.x0.total_cmp(&b.x0));
    let eff = eps.max(env.tolerances().slack);
    let mut clusters: Vec<Vec<&Hit>> = Vec::new();
    for h in hits {
        if let Some(last) = clusters.last_mut() {
            let prev = last[last.len() - 1];
            let mid = 0.5 * (prev.x0 + h.x0);
            let g = group_by_tolerance(&env.curves_at(h.shape_id, mid), eff);
            if g == h.group {
                last.push(h);
                continue;
            }
        }
        clusters.push(vec![h]);
    }
    clusters
}

fn candidate_from_cluster(env: &Envelope, cluster: &[&Hit]) -> Result<CandidatePoint> {
    let mut sorted: Vec<&&Hit> = cluster.iter().collect();
    sorted.sort_by_key(|h| h.pair);
    let mut last_err = None;
    for h in sorted {
        let mut p = CandidatePoint { x0: h.x0, y0: h.y, shape_id: h.shape_id, weight: 0.0 };
        match env.pair_point_weight(&p, h.pair.0, h.pair.1) {
            Ok(w) => {
                p.weight = w;
                return Ok(p);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Infeasible("empty candidate cluster".into())))
}

/// Relative spread of the candidate probabilities of a block when computed
/// from each index pair of its members.
fn block_labelling_spread(env: &Envelope, block: &Block) -> f64 {
    if block.candidates.len() < 2 {
        return 0.0;
    }
    let m = &block.members;
    let mut reference: Option<Vec<f64>> = None;
    let mut spread: f64 = 0.0;
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            let ws: Option<Vec<f64>> =
                block.candidates.iter().map(|c| env.pair_point_weight(c, m[a], m[b]).ok()).collect();
            let Some(ws) = ws else { continue };
            let total: f64 = ws.iter().sum();
            let probs: Vec<f64> = ws.iter().map(|w| w / total).collect();
            match &reference {
                None => reference = Some(probs),
                Some(r) => {
                    for (p, q) in probs.iter().zip(r) {
                        spread = spread.max((p - q).abs() / q.max(1e-300));
                    }
                }
            }
        }
    }
    spread
}

/// Keeps the maximal forced blocks; overlapping forced blocks with neither
/// containing the other are a conflict.
pub fn resolve_forced(blocks: Vec<Block>) -> Result<Vec<Block>> {
    let forced: Vec<&Block> = blocks.iter().filter(|b| b.forced).collect();
    let subset = |a: &[usize], b: &[usize]| a.iter().all(|x| b.contains(x));
    let mut dropped = vec![false; forced.len()];
    for (p, a) in forced.iter().enumerate() {
        for (q, b) in forced.iter().enumerate() {
            if p == q || a.members == b.members {
                continue;
            }
            let overlap = a.members.iter().any(|x| b.members.contains(x));
            if !overlap {
                continue;
            }
            if subset(&a.members, &b.members) {
                dropped[p] = true;
            } else if !subset(&b.members, &a.members) {
                return Err(Error::Conflict { a: a.members.clone(), b: b.members.clone() });
            }
        }
    }
    let keep: Vec<Vec<usize>> =
        forced.iter().zip(&dropped).filter(|(_, &d)| !d).map(|(b, _)| b.members.clone()).collect();
    Ok(blocks.into_iter().filter(|b| !b.forced || keep.contains(&b.members)).collect())
}

/// Singleton, pair and forced blocks for the observations behind `env`.
/// `eps` is the grouping tolerance (0 groups only numerical ties).
pub fn enumerate_feasible_blocks(env: &Envelope, eps: f64) -> Result<BlockSet> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("grouping tolerance must be >= 0, got {eps}")));
    }
    let n = env.obs().len();
    let mut blocks = Vec::new();
    let mut singleton_regions = Vec::with_capacity(n);
    for i in 0..n {
        let region = env.singleton_region_and_weight(i);
        if region.weight > 0.0 {
            blocks.push(Block { members: vec![i], candidates: Vec::new(), weight: region.weight, forced: false });
        }
        singleton_regions.push(region);
    }

    let hits = pair_hits(env, eps);
    let mut tangencies = Vec::new();
    let mut by_block: BTreeMap<Vec<usize>, Vec<CandidatePoint>> = BTreeMap::new();
    let mut forced_hits: BTreeMap<(Vec<usize>, usize), Vec<&Hit>> = BTreeMap::new();
    for h in &hits {
        if h.group.len() == 2 {
            let mut p = CandidatePoint { x0: h.x0, y0: h.y, shape_id: h.shape_id, weight: 0.0 };
            match env.pair_point_weight(&p, h.pair.0, h.pair.1) {
                Ok(w) => {
                    p.weight = w;
                    by_block.entry(h.group.clone()).or_default().push(p);
                }
                Err(_) => {
                    log::warn!("tangency between curves {} and {} at x = {}", h.pair.0, h.pair.1, h.x0);
                    tangencies.push((h.pair.0, h.pair.1, h.x0));
                }
            }
        } else {
            forced_hits.entry((h.group.clone(), h.shape_id)).or_default().push(h);
        }
    }
    for ((members, _), group_hits) in forced_hits {
        for cluster in cluster_hits(env, eps, group_hits) {
            let p = candidate_from_cluster(env, &cluster)?;
            by_block.entry(members.clone()).or_default().push(p);
        }
    }
    for (members, candidates) in by_block {
        let weight = candidates.iter().map(|c| c.weight).sum();
        let forced = members.len() >= 3;
        blocks.push(Block { members, candidates, weight, forced });
    }
    let blocks = resolve_forced(blocks)?;
    let mut labelling_spread: f64 = 0.0;
    for b in blocks.iter().filter(|b| b.forced) {
        let s = block_labelling_spread(env, b);
        if s > 1e-6 {
            log::warn!("candidate probabilities of block {:?} depend on the labelling (spread {s:e})", b.members);
        }
        labelling_spread = labelling_spread.max(s);
    }
    Ok(BlockSet { blocks, singleton_regions, tangencies, labelling_spread })
}

/// Every partition of the indices into blocks: forced blocks always, the rest
/// covered by feasible pairs and singletons in all possible ways. Weights are
/// products over non-forced blocks.
pub fn enumerate_scenarios(blocks: &[Block], n: usize, max_free: usize) -> Result<Vec<Scenario>> {
    let mut taken = vec![false; n];
    let mut base = Vec::new();
    for (k, b) in blocks.iter().enumerate().filter(|(_, b)| b.forced) {
        for &m in &b.members {
            if m >= n || taken[m] {
                return Err(Error::Conflict { a: b.members.clone(), b: vec![m] });
            }
            taken[m] = true;
        }
        base.push(k);
    }
    let free = taken.iter().filter(|&&t| !t).count();
    if free > max_free {
        return Err(Error::TooManyFreeIndices { free, cap: max_free });
    }
    let mut single = vec![None; n];
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in blocks.iter().enumerate().filter(|(_, b)| !b.forced) {
        if b.members.iter().any(|&m| m >= n) {
            return Err(Error::InvalidArgument(format!("block {:?} outside {n} indices", b.members)));
        }
        match b.members[..] {
            [i] => single[i] = Some(k),
            [i, j] if !taken[i] && !taken[j] => pairs[i.min(j)].push((i.max(j), k)),
            _ => {}
        }
    }
    for i in (0..n).filter(|&i| !taken[i]) {
        let paired = pairs[i].iter().any(|&(j, _)| !taken[j])
            || (0..i).any(|h| pairs[h].iter().any(|&(j, _)| j == i) && !taken[h]);
        if single[i].is_none() && !paired {
            return Err(Error::Infeasible(format!("observation {i} cannot be generated by any feasible block")));
        }
    }

    struct Walk<'a> {
        blocks: &'a [Block],
        single: Vec<Option<usize>>,
        pairs: Vec<Vec<(usize, usize)>>,
        out: Vec<Scenario>,
    }
    fn rec(w: &mut Walk, taken: &mut [bool], chosen: &mut Vec<usize>, weight: f64) {
        let Some(i) = taken.iter().position(|&t| !t) else {
            let mut blocks = chosen.clone();
            blocks.sort_unstable();
            w.out.push(Scenario { blocks, weight, prob: 0.0 });
            return;
        };
        taken[i] = true;
        if let Some(k) = w.single[i] {
            chosen.push(k);
            let bw = w.blocks[k].weight;
            rec(w, taken, chosen, weight * bw);
            chosen.pop();
        }
        for idx in 0..w.pairs[i].len() {
            let (j, k) = w.pairs[i][idx];
            if taken[j] {
                continue;
            }
            taken[j] = true;
            chosen.push(k);
            let bw = w.blocks[k].weight;
            rec(w, taken, chosen, weight * bw);
            chosen.pop();
            taken[j] = false;
        }
        taken[i] = false;
    }
    let mut walk = Walk { blocks, single, pairs, out: Vec::new() };
    let mut chosen = base;
    rec(&mut walk, &mut taken, &mut chosen, 1.0);
    if walk.out.is_empty() {
        return Err(Error::Infeasible("no partition of the observations into feasible blocks".into()));
    }
    Ok(walk.out)
}

/// Normalizes scenario weights into probabilities.
pub fn scenario_probabilities(mut scenarios: Vec<Scenario>) -> Result<Vec<Scenario>> {
    let total: f64 = scenarios.iter().map(|s| s.weight).sum();
    if scenarios.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::Infeasible(format!("scenario weights sum to {total}")));
    }
    for s in &mut scenarios {
        s.prob = s.weight / total;
    }
    Ok(scenarios)
}

/// Blocks, scenarios and their probabilities for one conditioning problem.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioTable {
    pub sites: Vec<f64>,
    pub values: Vec<f64>,
    pub eps: f64,
    pub blocks: Vec<Block>,
    pub scenarios: Vec<Scenario>,
    pub tangencies: Vec<(usize, usize, f64)>,
    pub labelling_spread: f64,
}

impl ScenarioTable {
    pub fn new(obs: &Observations, eps: f64, set: &BlockSet, scenarios: Vec<Scenario>) -> ScenarioTable {
        ScenarioTable {
            sites: obs.sites().to_vec(),
            values: obs.values().to_vec(),
            eps,
            blocks: set.blocks.clone(),
            scenarios,
            tangencies: set.tangencies.clone(),
            labelling_spread: set.labelling_spread,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Probability that the observations in `members` share one atom.
    pub fn joint_probability(&self, members: &[usize]) -> f64 {
        self.scenarios
            .iter()
            .filter(|s| s.blocks.iter().any(|&k| self.blocks[k].members == members))
            .map(|s| s.prob)
            .sum()
    }
}

/// Per-shape masses and samplers of one singleton region.
type SingleRegions = (Vec<f64>, Vec<Option<RegionSampler>>);

/// Samplers for the generating atoms of every block.
#[derive(Debug, Clone)]
pub struct GeneratorSampler<'a> {
    obs: &'a Observations,
    family: &'a ShapeFamily,
    pub set: BlockSet,
    pub scenarios: Vec<Scenario>,
    scenario_cdf: Vec<f64>,
    /// Per observation: cumulative shape masses and region samplers.
    singles: Vec<Option<SingleRegions>>,
}

impl<'a> GeneratorSampler<'a> {
    pub fn new(env: &Envelope<'a>, set: BlockSet, scenarios: Vec<Scenario>) -> Result<GeneratorSampler<'a>> {
        let obs = env.obs();
        let family = env.family();
        let mut singles = vec![None; obs.len()];
        for b in set.blocks.iter().filter(|b| b.is_singleton()) {
            let i = b.members[0];
            let region = &set.singleton_regions[i];
            let mut acc = 0.0;
            let mut cdf = Vec::with_capacity(family.len());
            let mut samplers = Vec::with_capacity(family.len());
            for r in &region.per_shape {
                let mass = family.prob(r.shape_id) * r.integral;
                acc += mass;
                cdf.push(acc);
                samplers
                    .push((mass > 0.0).then(|| RegionSampler::new(family.shape(r.shape_id), obs.site(i), &r.region)));
            }
            singles[i] = Some((cdf, samplers));
        }
        let mut acc = 0.0;
        let scenario_cdf = scenarios
            .iter()
            .map(|s| {
                acc += s.prob;
                acc
            })
            .collect();
        Ok(GeneratorSampler { obs, family, set, scenarios, scenario_cdf, singles })
    }

    pub fn sample_scenario<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.scenario_cdf[self.scenario_cdf.len() - 1];
        let v = rng.random::<f64>() * total;
        self.scenario_cdf.partition_point(|&c| c <= v).min(self.scenarios.len() - 1)
    }

    /// Generating atoms of one scenario, one atom per block.
    pub fn sample_generators<R: Rng + ?Sized>(&self, scenario: usize, rng: &mut R) -> Result<Vec<Atom>> {
        let sc = &self.scenarios[scenario];
        let mut atoms = Vec::with_capacity(sc.blocks.len());
        for &k in &sc.blocks {
            atoms.push(self.sample_block(k, rng)?);
        }
        Ok(atoms)
    }

    pub fn sample_block<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Atom> {
        let block = &self.set.blocks[k];
        if block.is_singleton() {
            let i = block.members[0];
            let Some((cdf, samplers)) = &self.singles[i] else {
                return Err(Error::EmptyRegion(block.members.clone()));
            };
            let total = cdf.last().copied().unwrap_or(0.0);
            if !(total > 0.0) {
                return Err(Error::EmptyRegion(block.members.clone()));
            }
            let v = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= v).min(cdf.len() - 1);
            let shape_id = self.set.singleton_regions[i].per_shape[f].shape_id;
            let shape = self.family.shape(shape_id);
            let s = samplers[f]
                .as_ref()
                .and_then(|smp| smp.sample(shape, rng))
                .ok_or_else(|| Error::EmptyRegion(block.members.clone()))?;
            let fv = self.family.eval(shape_id, self.obs.site(i) - s);
            if !(fv > 0.0) {
                return Err(Error::EmptyRegion(block.members.clone()));
            }
            return Ok(Atom { s, u: self.obs.value(i) / fv, shape_id });
        }
        if !(block.weight > 0.0) || block.candidates.is_empty() {
            return Err(Error::EmptyRegion(block.members.clone()));
        }
        let v = rng.random::<f64>() * block.weight;
        let mut acc = 0.0;
        let mut pick = block.candidates.len() - 1;
        for (c, cand) in block.candidates.iter().enumerate() {
            acc += cand.weight;
            if v < acc {
                pick = c;
                break;
            }
        }
        let c = block.candidates[pick];
        // Level from the block's own curves so no atom exceeds the data.
        let u = block
            .members
            .iter()
            .map(|&i| self.obs.value(i) / self.family.eval(c.shape_id, self.obs.site(i) - c.x0))
            .fold(f64::INFINITY, f64::min);
        Ok(Atom { s: c.x0, u, shape_id: c.shape_id })
    }
}
