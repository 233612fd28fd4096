//! Unconditional simulation of the max field and of the free atoms lying
//! strictly below the observation curves.

use crate::error::{Error, Result};
use crate::model::{Atom, Observations, Shape};
use crate::shapes::{DrawnShape, ShapeLaw};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

/// Interval of atom locations and the level below which atoms are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimWindow {
    pub a: f64,
    pub b: f64,
    pub u_floor: f64,
}

impl SimWindow {
    /// The smallest window from which atoms can reach any of `sites`.
    pub fn covering(sites: &[f64], radius: f64) -> SimWindow {
        let lo = sites.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sites.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SimWindow { a: lo - radius, b: hi + radius, u_floor: 0.0 }
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    fn check(&self, sites: &[f64], radius: f64) -> Result<()> {
        let need = SimWindow::covering(sites, radius);
        if !(self.a < self.b) || self.a > need.a || self.b < need.b || !(self.u_floor >= 0.0) {
            return Err(Error::WindowTooSmall { a: self.a, b: self.b, need_a: need.a, need_b: need.b });
        }
        Ok(())
    }
}

/// Why and where atom generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopDiagnostics {
    pub atoms_generated: usize,
    /// Level of the first atom not used.
    pub stop_level: f64,
    /// No discarded atom could contribute more than this at any site.
    pub truncation_bound: f64,
}

/// Poisson atoms in decreasing order of level: `u_k = |W| / Γ_k`.
struct LevelStream {
    width: f64,
    gamma: f64,
}

impl LevelStream {
    fn new(width: f64) -> Self {
        LevelStream { width, gamma: 0.0 }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.gamma += rng.sample::<f64, _>(Exp1);
        self.width / self.gamma
    }
}

const MAX_ATOMS: usize = 50_000_000;

/// An unconditional draw of the field at a set of sites.
#[derive(Debug, Clone)]
pub struct FieldDraw {
    pub values: Vec<f64>,
    /// Every generated atom. `shape_id` refers to the family for finite laws
    /// and to `fresh_shapes` for laws that sample new shapes.
    pub atoms: Vec<Atom>,
    pub fresh_shapes: Vec<Shape>,
    /// For each site, the index into `atoms` of the atom attaining the maximum.
    pub argmax: Vec<usize>,
    pub stop: StopDiagnostics,
}

/// Simulates `Z(t) = max u f(t - s)` at `sites`, generating atoms until no
/// further atom can change any site value.
pub fn simulate_max_field<L, R>(law: &L, sites: &[f64], window: &SimWindow, rng: &mut R) -> Result<FieldDraw>
where
    L: ShapeLaw,
    R: Rng + ?Sized,
{
    let radius = law.support_radius();
    let sup = law.sup_bound();
    if !(sup > 0.0) {
        return Err(Error::DegenerateFamily);
    }
    if sites.is_empty() {
        return Err(Error::InvalidArgument("no evaluation sites".into()));
    }
    window.check(sites, radius)?;
    let mut values = vec![0.0; sites.len()];
    let mut argmax = vec![usize::MAX; sites.len()];
    let mut atoms = Vec::new();
    let mut fresh_shapes = Vec::new();
    let mut levels = LevelStream::new(window.width());
    let mut min_value = 0.0;
    loop {
        let u = levels.next(rng);
        if u * sup <= min_value || u < window.u_floor || atoms.len() >= MAX_ATOMS {
            let stop = StopDiagnostics { atoms_generated: atoms.len(), stop_level: u, truncation_bound: u * sup };
            return Ok(FieldDraw { values, atoms, fresh_shapes, argmax, stop });
        }
        let s = window.a + window.width() * rng.random::<f64>();
        let drawn = law.draw(rng);
        let shape = drawn.shape();
        let mut touched = false;
        for (k, &t) in sites.iter().enumerate() {
            let v = u * shape.eval_truncated(t - s, radius);
            if v > values[k] {
                values[k] = v;
                argmax[k] = atoms.len();
                touched = true;
            }
        }
        let shape_id = match drawn {
            DrawnShape::Member(id, _) => id,
            DrawnShape::Fresh(sh) => {
                fresh_shapes.push(sh);
                fresh_shapes.len() - 1
            }
        };
        atoms.push(Atom { s, u, shape_id });
        if touched {
            min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
}

/// Field values only, for `n` independent replicates with per-replicate RNG
/// streams derived from `seed`.
pub fn simulate_fields<L: ShapeLaw>(law: &L, sites: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let window = SimWindow::covering(sites, law.support_radius());
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            simulate_max_field(law, sites, &window, &mut rng).map(|d| d.values)
        })
        .collect()
}

/// Deterministic RNG stream `stream` of `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stopping rule for `simulate_points_below`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BelowStop<'a> {
    /// Sites whose running maxima drive the stop; may be empty.
    pub eval_sites: &'a [f64],
    /// Starting maxima at `eval_sites` (e.g. from the critical atoms).
    pub initial: &'a [f64],
    /// Stop once `u * sup_bound` falls below this, even if the eval maxima are lower.
    pub floor: f64,
}

/// Relative floor used when a caller has no evaluation sites.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-4;

/// Atoms of one draw strictly below every observation curve.
#[derive(Debug, Clone)]
pub struct BelowDraw {
    pub atoms: Vec<Atom>,
    pub fresh_shapes: Vec<Shape>,
    /// Running maxima at the eval sites, starting from `BelowStop::initial`.
    pub eval_values: Vec<f64>,
    pub stop: StopDiagnostics,
}

/// Draws the atoms of an unconditional process that satisfy
/// `u f(t_i - s) < z_i` for every observation.
pub fn simulate_points_below<L, R>(
    law: &L,
    obs: &Observations,
    window: &SimWindow,
    stop: &BelowStop<'_>,
    rng: &mut R,
) -> Result<BelowDraw>
where
    L: ShapeLaw,
    R: Rng + ?Sized,
{
    let radius = law.support_radius();
    let sup = law.sup_bound();
    if !(sup > 0.0) {
        return Err(Error::DegenerateFamily);
    }
    if stop.eval_sites.len() != stop.initial.len() {
        return Err(Error::InvalidArgument("eval sites and initial maxima differ in length".into()));
    }
    if stop.eval_sites.is_empty() && !(stop.floor > 0.0) {
        return Err(Error::InvalidArgument("need eval sites or a positive floor to stop".into()));
    }
    let mut all_sites: Vec<f64> = obs.sites().to_vec();
    all_sites.extend_from_slice(stop.eval_sites);
    window.check(&all_sites, radius)?;

    let mut eval_values = stop.initial.to_vec();
    let min_eval = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().copied().fold(f64::INFINITY, f64::min) };
    let mut threshold = stop.floor.max(min_eval(&eval_values));
    let mut atoms = Vec::new();
    let mut fresh_shapes = Vec::new();
    let mut generated = 0usize;
    let mut levels = LevelStream::new(window.width());
    loop {
        let u = levels.next(rng);
        if u * sup <= threshold || u < window.u_floor || generated >= MAX_ATOMS {
            let stop = StopDiagnostics { atoms_generated: generated, stop_level: u, truncation_bound: u * sup };
            return Ok(BelowDraw { atoms, fresh_shapes, eval_values, stop });
        }
        generated += 1;
        let s = window.a + window.width() * rng.random::<f64>();
        let drawn = law.draw(rng);
        let shape = drawn.shape();
        let below = obs.sites().iter().zip(obs.values()).all(|(&t, &z)| u * shape.eval_truncated(t - s, radius) < z);
        if !below {
            continue;
        }
        let mut touched = false;
        for (k, &t) in stop.eval_sites.iter().enumerate() {
            let v = u * shape.eval_truncated(t - s, radius);
            if v > eval_values[k] {
                eval_values[k] = v;
                touched = true;
            }
        }
        if touched {
            threshold = stop.floor.max(min_eval(&eval_values));
        }
        let shape_id = match drawn {
            DrawnShape::Member(id, _) => id,
            DrawnShape::Fresh(sh) => {
                fresh_shapes.push(sh);
                fresh_shapes.len() - 1
            }
        };
        atoms.push(Atom { s, u, shape_id });
    }
}

/// Kolmogorov-Smirnov distance between the sample and `exp(-1/z)`.
pub fn frechet_ks(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("Fréchet samples must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = (-1.0 / x).exp();
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}
