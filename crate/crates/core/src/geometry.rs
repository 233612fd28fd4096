//! Conditioning geometry: the lower envelope of the curves
//! `x ↦ z_i / f(t_i - x)`, pairwise curve intersections, the regions where a
//! single curve is on the envelope, and the limiting weights of each.

use crate::error::{Error, Result};
use crate::model::{CandidatePoint, Observations, Shape, ShapeFamily, Tabulated, Tolerances};
use crate::numeric::{bisect, gk15, integrate};
use rand::Rng;
use serde::Serialize;

/// Observations together with a family: evaluates the curves and their
/// lower envelope, and caches all pairwise curve intersections.
#[derive(Debug, Clone)]
pub struct Envelope<'a> {
    obs: &'a Observations,
    family: &'a ShapeFamily,
    tol: Tolerances,
    /// `roots[f][i * n + j]` (i < j): sorted roots of
    /// `f(t_i - x)/z_i - f(t_j - x)/z_j` where both curves are finite.
    roots: Vec<Vec<Vec<f64>>>,
}

/// Envelope value at one location and the indices attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub y: f64,
    pub argmin: Vec<usize>,
}

/// Exact pair intersections on the envelope, plus the locations of
/// tangential contacts that were skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScan {
    pub points: Vec<CandidatePoint>,
    pub tangencies: Vec<f64>,
}

/// The part of one curve's projection where it alone forms the envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionIntegralResult {
    pub shape_id: usize,
    /// Disjoint sorted intervals of locations `x`.
    pub region: Vec<(f64, f64)>,
    /// `∫_region f(t_i - x) dx`.
    pub integral: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingletonRegion {
    pub index: usize,
    pub per_shape: Vec<RegionIntegralResult>,
    /// `Σ_f P(f) ∫_{D_i^f} f(t_i - x) dx / z_i²`.
    pub weight: f64,
}

/// Support of `x ↦ f(t - x)` for a shape truncated at `radius`.
fn curve_domain(shape: &Shape, t: f64, radius: f64) -> (f64, f64) {
    let (ulo, uhi) = match shape {
        Shape::Tabulated(tab) => {
            let (a, b) = tab.hull();
            (a.max(-radius), b.min(radius))
        }
        Shape::Analytic(_) => (-radius, radius),
    };
    (t - uhi, t - ulo)
}

fn sign_changes(vals: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in vals {
        if v == 0.0 {
            count += 1;
            last = 0.0;
            continue;
        }
        if last != 0.0 && last.signum() != v.signum() {
            count += 1;
        }
        last = v;
    }
    count
}

impl<'a> Envelope<'a> {
    pub fn new(obs: &'a Observations, family: &'a ShapeFamily, tol: Tolerances) -> Result<Self> {
        let n = obs.len();
        let mut env = Envelope { obs, family, tol, roots: Vec::with_capacity(family.len()) };
        for f in 0..family.len() {
            let mut per = vec![Vec::new(); n * n];
            for i in 0..n {
                for j in i + 1..n {
                    per[i * n + j] = env.compute_pair_roots(f, i, j)?;
                }
            }
            env.roots.push(per);
        }
        Ok(env)
    }

    pub fn obs(&self) -> &'a Observations {
        self.obs
    }

    pub fn family(&self) -> &'a ShapeFamily {
        self.family
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// `z_i / f(t_i - x)`, infinite where the shape vanishes.
    #[inline]
    pub fn curve(&self, i: usize, f: usize, x: f64) -> f64 {
        let v = self.family.eval(f, self.obs.site(i) - x);
        if v > 0.0 {
            self.obs.value(i) / v
        } else {
            f64::INFINITY
        }
    }

    pub fn curves_at(&self, f: usize, x: f64) -> Vec<f64> {
        (0..self.obs.len()).map(|i| self.curve(i, f, x)).collect()
    }

    /// `min_i z_i / f(t_i - x)` and every index within the relative slack of it.
    pub fn envelope_value(&self, f: usize, x: f64) -> EnvelopePoint {
        let c = self.curves_at(f, x);
        let y = c.iter().copied().fold(f64::INFINITY, f64::min);
        if !y.is_finite() {
            return EnvelopePoint { y, argmin: Vec::new() };
        }
        let cut = y * (1.0 + self.tol.slack);
        let argmin = c.iter().enumerate().filter(|(_, &v)| v <= cut).map(|(k, _)| k).collect();
        EnvelopePoint { y, argmin }
    }

    /// `f(t_i - x)/z_i - f(t_j - x)/z_j`.
    #[inline]
    fn pair_gap(&self, f: usize, i: usize, j: usize, x: f64) -> f64 {
        let fam = self.family;
        fam.eval(f, self.obs.site(i) - x) / self.obs.value(i) - fam.eval(f, self.obs.site(j) - x) / self.obs.value(j)
    }

    fn pair_domain(&self, f: usize, i: usize, j: usize) -> Option<(f64, f64)> {
        let shape = self.family.shape(f);
        let r = self.family.support_radius();
        let (a1, b1) = curve_domain(shape, self.obs.site(i), r);
        let (a2, b2) = curve_domain(shape, self.obs.site(j), r);
        let (lo, hi) = (a1.max(a2), b1.min(b2));
        (lo < hi).then_some((lo, hi))
    }

    fn compute_pair_roots(&self, f: usize, i: usize, j: usize) -> Result<Vec<f64>> {
        let Some((lo, hi)) = self.pair_domain(f, i, j) else {
            return Ok(Vec::new());
        };
        match self.family.shape(f) {
            Shape::Tabulated(tab) => self.tabulated_pair_roots(tab, f, i, j, lo, hi),
            Shape::Analytic(_) => Ok(self.scanned_pair_roots(f, i, j, lo, hi)),
        }
    }

    /// Sign-change scan refined by bisection. The grid is doubled until the
    /// number of sign changes is the same for two consecutive doublings.
    fn scanned_pair_roots(&self, f: usize, i: usize, j: usize, lo: f64, hi: f64) -> Vec<f64> {
        let g = |x: f64| self.pair_gap(f, i, j, x);
        let sample = |n: usize| -> (Vec<f64>, Vec<f64>) {
            let xs: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
            let vs = xs.iter().map(|&x| g(x)).collect();
            (xs, vs)
        };
        let mut n = self.tol.scan_points.max(16);
        let (mut xs, mut vs) = sample(n);
        let mut counts = vec![sign_changes(&vs)];
        while n < (1 << 22) {
            let k = counts.len();
            if k >= 3 && counts[k - 1] == counts[k - 2] && counts[k - 2] == counts[k - 3] {
                break;
            }
            n *= 2;
            (xs, vs) = sample(n);
            counts.push(sign_changes(&vs));
        }
        let scale = 1.0 / self.obs.value(i).min(self.obs.value(j));
        let xtol = 1e-15 * (1.0 + lo.abs().max(hi.abs()));
        let mut roots = Vec::new();
        for k in 0..xs.len() {
            if vs[k] == 0.0 {
                roots.push(xs[k]);
                continue;
            }
            if k + 1 < xs.len() && vs[k + 1] != 0.0 && vs[k].signum() != vs[k + 1].signum() {
                let x0 = bisect(g, xs[k], xs[k + 1], xtol);
                if g(x0).abs() <= self.tol.root_tol * scale {
                    roots.push(x0);
                }
            }
        }
        roots
    }

    /// Both curves are piecewise linear in `x`; solve segment by segment.
    fn tabulated_pair_roots(
        &self,
        tab: &Tabulated,
        f: usize,
        i: usize,
        j: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Vec<f64>> {
        let (ti, tj) = (self.obs.site(i), self.obs.site(j));
        let mut bps: Vec<f64> = vec![lo, hi];
        for &k in tab.knots() {
            for x in [ti - k, tj - k] {
                if x > lo && x < hi {
                    bps.push(x);
                }
            }
        }
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let gs: Vec<f64> = bps.iter().map(|&x| self.pair_gap(f, i, j, x)).collect();
        let mut roots: Vec<f64> = Vec::new();
        for k in 0..bps.len() {
            if gs[k] == 0.0 {
                if k + 1 < bps.len() && gs[k + 1] == 0.0 {
                    return Err(Error::IntervalIntersection { i, j, x: bps[k] });
                }
                if roots.last() != Some(&bps[k]) {
                    roots.push(bps[k]);
                }
                continue;
            }
            if k + 1 < bps.len() && gs[k + 1] != 0.0 && gs[k].signum() != gs[k + 1].signum() {
                let (a, b) = (bps[k], bps[k + 1]);
                let x0 = a - gs[k] * (b - a) / (gs[k + 1] - gs[k]);
                roots.push(x0.clamp(a, b));
            }
        }
        Ok(roots)
    }

    /// Cached roots of the pair `(i, j)` for shape `f`.
    pub fn pair_roots(&self, f: usize, i: usize, j: usize) -> &[f64] {
        let n = self.obs.len();
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        &self.roots[f][a * n + b]
    }

    /// `|z_i f'(t_j - x0) - z_j f'(t_i - x0)|`.
    pub fn derivative_gap(&self, f: usize, i: usize, j: usize, x0: f64) -> f64 {
        let fam = self.family;
        let (ti, tj) = (self.obs.site(i), self.obs.site(j));
        let (zi, zj) = (self.obs.value(i), self.obs.value(j));
        (zi * fam.eval_derivative(f, tj - x0) - zj * fam.eval_derivative(f, ti - x0)).abs()
    }

    /// Limiting weight `P(f) / (y0² |z_i f'(t_j - x0) - z_j f'(t_i - x0)|)`.
    pub fn pair_point_weight(&self, point: &CandidatePoint, i: usize, j: usize) -> Result<f64> {
        let gap = self.derivative_gap(point.shape_id, i, j, point.x0);
        if gap < self.tol.tangency_tol {
            return Err(Error::Tangency { i, j, x: point.x0 });
        }
        Ok(self.family.prob(point.shape_id) / (point.y0 * point.y0 * gap))
    }

    /// Intersections of curves `i` and `j` lying on the envelope, with every
    /// other curve strictly above.
    pub fn find_pair_intersections(&self, i: usize, j: usize) -> Result<PairScan> {
        if i == j || i >= self.obs.len() || j >= self.obs.len() {
            return Err(Error::InvalidArgument(format!("bad index pair ({i}, {j})")));
        }
        let mut points = Vec::new();
        let mut tangencies = Vec::new();
        for f in 0..self.family.len() {
            for &x0 in self.pair_roots(f, i, j) {
                let c = self.curves_at(f, x0);
                let y0 = c[i].min(c[j]);
                if !y0.is_finite() {
                    continue;
                }
                let clear = c.iter().enumerate().all(|(k, &v)| k == i || k == j || v > y0 * (1.0 + self.tol.slack));
                if !clear {
                    log::debug!("pair ({i},{j}) root at {x0} is not strictly on the envelope; dropped");
                    continue;
                }
                let mut p = CandidatePoint { x0, y0, shape_id: f, weight: 0.0 };
                match self.pair_point_weight(&p, i, j) {
                    Ok(w) => {
                        p.weight = w;
                        points.push(p);
                    }
                    Err(_) => {
                        log::warn!("tangency between curves {i} and {j} at x = {x0}");
                        tangencies.push(x0);
                    }
                }
            }
        }
        Ok(PairScan { points, tangencies })
    }

    /// Region where curve `i` alone forms the envelope, per shape, and the
    /// singleton weight `c_i`.
    pub fn singleton_region_and_weight(&self, i: usize) -> SingletonRegion {
        let n = self.obs.len();
        let r = self.family.support_radius();
        let zi = self.obs.value(i);
        let mut per_shape = Vec::with_capacity(self.family.len());
        let mut weight = 0.0;
        for f in 0..self.family.len() {
            let shape = self.family.shape(f);
            let (lo, hi) = curve_domain(shape, self.obs.site(i), r);
            let mut bps = vec![lo, hi];
            for j in (0..n).filter(|&j| j != i) {
                bps.extend(self.pair_roots(f, i, j).iter().copied().filter(|&x| x > lo && x < hi));
                let (a, b) = curve_domain(shape, self.obs.site(j), r);
                bps.extend([a, b].into_iter().filter(|&x| x > lo && x < hi));
            }
            bps.sort_by(f64::total_cmp);
            bps.dedup();
            let mut region: Vec<(f64, f64)> = Vec::new();
            for w in bps.windows(2) {
                let (a, b) = (w[0], w[1]);
                if !(b > a) {
                    continue;
                }
                let m = 0.5 * (a + b);
                let own = self.curve(i, f, m);
                let alone = own.is_finite() && (0..n).all(|j| j == i || own < self.curve(j, f, m));
                if !alone {
                    continue;
                }
                match region.last_mut() {
                    Some(last) if last.1 == a => last.1 = b,
                    _ => region.push((a, b)),
                }
            }
            let (mut integral, mut error) = (0.0, 0.0);
            let ti = self.obs.site(i);
            for &(a, b) in &region {
                match shape {
                    Shape::Tabulated(tab) => integral += tab.integral(ti - b, ti - a),
                    Shape::Analytic(s) => {
                        let q = integrate(|x| s.value(ti - x), a, b, self.tol.quad_tol * 1e-2, self.tol.quad_tol);
                        integral += q.value;
                        error += q.error;
                    }
                }
            }
            weight += self.family.prob(f) * integral / (zi * zi);
            per_shape.push(RegionIntegralResult { shape_id: f, region, integral, error });
        }
        SingletonRegion { index: i, per_shape, weight }
    }
}

/// Indices whose curve value is within the tolerance of the envelope value:
/// `v_i < min(y + ε, y (1 + ε))`, or `v_i <= y` when `ε = 0`.
pub fn group_by_tolerance(curve_values: &[f64], eps: f64) -> Vec<usize> {
    let y = curve_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !y.is_finite() {
        return Vec::new();
    }
    let keep = |v: f64| if eps > 0.0 { v < (y + eps).min(y * (1.0 + eps)) } else { v <= y };
    curve_values.iter().enumerate().filter(|(_, &v)| keep(v)).map(|(k, _)| k).collect()
}

/// Draws locations with density proportional to `f(t_i - x)` on a region.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    t: f64,
    /// `(a, b, mass)` sub-panels with cumulative masses.
    panels: Vec<(f64, f64, f64)>,
    cumulative: Vec<f64>,
    tabulated: bool,
}

const PANELS_PER_UNIT: f64 = 16.0;

impl RegionSampler {
    pub fn new(shape: &Shape, t: f64, region: &[(f64, f64)]) -> RegionSampler {
        let mut panels = Vec::new();
        match shape {
            Shape::Tabulated(tab) => {
                for &(a, b) in region {
                    let mut cuts: Vec<f64> = tab.knots().iter().map(|k| t - k).filter(|&x| x > a && x < b).collect();
                    cuts.push(a);
                    cuts.push(b);
                    cuts.sort_by(f64::total_cmp);
                    for w in cuts.windows(2) {
                        let m = tab.integral(t - w[1], t - w[0]);
                        panels.push((w[0], w[1], m));
                    }
                }
            }
            Shape::Analytic(s) => {
                let g = |x: f64| s.value(t - x);
                for &(a, b) in region {
                    let k = ((b - a) * PANELS_PER_UNIT).ceil().max(1.0) as usize;
                    for p in 0..k {
                        let pa = a + (b - a) * p as f64 / k as f64;
                        let pb = if p + 1 == k { b } else { a + (b - a) * (p + 1) as f64 / k as f64 };
                        panels.push((pa, pb, gk15(&g, pa, pb).0));
                    }
                }
            }
        }
        let mut acc = 0.0;
        let cumulative = panels
            .iter()
            .map(|p| {
                acc += p.2;
                acc
            })
            .collect();
        RegionSampler { t, panels, cumulative, tabulated: matches!(shape, Shape::Tabulated(_)) }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, shape: &Shape, rng: &mut R) -> Option<f64> {
        let total = self.total();
        if !(total > 0.0) {
            return None;
        }
        let target = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= target).min(self.panels.len() - 1);
        let before = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        let (a, b, mass) = self.panels[k];
        let m = (target - before).clamp(0.0, mass);
        let t = self.t;
        if self.tabulated {
            // Linear density on [a, b]: solve the quadratic CDF exactly.
            let fa = shape.value(t - a);
            let fb = shape.value(t - b);
            let w = b - a;
            let slope = (fb - fa) / w;
            let disc = (fa * fa + 2.0 * slope * m).max(0.0);
            let denom = fa + disc.sqrt();
            let s = if denom > 0.0 { 2.0 * m / denom } else { 0.0 };
            return Some((a + s).clamp(a, b));
        }
        let g = |x: f64| shape.value(t - x);
        let cdf = |x: f64| gk15(&g, a, x).0 - m;
        let (mut lo, mut hi) = (a, b);
        let mut x = a + (b - a) * if mass > 0.0 { m / mass } else { 0.5 };
        for _ in 0..60 {
            let fx = cdf(x);
            if fx.abs() <= 1e-14 * mass.max(1e-300) {
                break;
            }
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = g(x);
            let newton = x - fx / d;
            x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        Some(x)
    }
}
