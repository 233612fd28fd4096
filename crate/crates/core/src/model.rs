//! Domain vocabulary shared by every module: shapes and shape families,
//! Poisson atoms, observations, blocks, scenarios and empirical predictives.

use crate::error::{Error, Result};
use crate::numeric::integrate;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Numerical tolerances used throughout geometry and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative tolerance on root locations and curve values.
    pub root_tol: f64,
    /// Absolute/relative tolerance for adaptive quadrature.
    pub quad_tol: f64,
    /// Pair intersections with a derivative term below this are tangencies.
    pub tangency_tol: f64,
    /// Relative margin by which curves outside a block must clear the envelope.
    pub slack: f64,
    /// Initial number of scan points for sign-change root search.
    pub scan_points: usize,
    /// Maximum number of free (non-forced) indices in scenario enumeration.
    pub max_free: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { root_tol: 1e-10, quad_tol: 1e-8, tangency_tol: 1e-8, slack: 1e-9, scan_points: 4096, max_free: 12 }
    }
}

/// A closed-form shape function with its derivative.
pub trait AnalyticShape: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// An upper bound of `value` over the real line.
    fn sup(&self) -> f64;
}

/// Polygonal shape through `(xs[k], ys[k])`, zero outside `[xs[0], xs[last]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidFamily(
                "tabulated shape needs at least two (x, value) pairs of equal length".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidFamily("tabulated grid must be strictly increasing".into()));
        }
        if ys.iter().any(|y| !(y.is_finite() && *y >= 0.0)) || xs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidFamily("tabulated values must be finite and nonnegative".into()));
        }
        Ok(Tabulated { xs, ys })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("nonempty"))
    }

    /// Index `k` with `xs[k] <= x < xs[k+1]`, or `None` outside the hull.
    /// The right end knot maps to the last segment.
    fn segment(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.hull();
        if !(x >= lo && x <= hi) {
            return None;
        }
        let k = self.xs.partition_point(|&k| k <= x);
        Some(k.saturating_sub(1).min(self.xs.len() - 2))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.segment(x) {
            None => 0.0,
            Some(k) => {
                let (x0, x1) = (self.xs[k], self.xs[k + 1]);
                if x == x0 {
                    return self.ys[k];
                }
                if x == x1 {
                    return self.ys[k + 1];
                }
                let w = (x - x0) / (x1 - x0);
                self.ys[k] + w * (self.ys[k + 1] - self.ys[k])
            }
        }
    }

    fn slope(&self, k: usize) -> f64 {
        (self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k])
    }

    /// Polygonal slope; the mean of the one-sided slopes at knots (the slope
    /// outside the hull counts as 0).
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let (lo, hi) = self.hull();
        if x < lo || x > hi {
            return 0.0;
        }
        let k = self.xs.partition_point(|&k| k < x);
        if k < n && self.xs[k] == x {
            let left = if k == 0 { 0.0 } else { self.slope(k - 1) };
            let right = if k + 1 == n { 0.0 } else { self.slope(k) };
            return 0.5 * (left + right);
        }
        self.slope(k - 1)
    }

    /// Exact integral of the polygon over `[a, b]` (clipped to the hull).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.hull();
        let a = a.max(lo);
        let b = b.min(hi);
        if !(b > a) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        let mut fl = self.value(a);
        let start = self.xs.partition_point(|&k| k <= a);
        for &knot in &self.xs[start..] {
            if knot >= b {
                break;
            }
            let fk = self.value(knot);
            total += 0.5 * (fl + fk) * (knot - left);
            left = knot;
            fl = fk;
        }
        total + 0.5 * (fl + self.value(b)) * (b - left)
    }

    pub fn max_value(&self) -> f64 {
        self.ys.iter().copied().fold(0.0, f64::max)
    }
}

/// One shape function `R -> [0, ∞)`.
#[derive(Debug, Clone)]
pub enum Shape {
    Analytic(Arc<dyn AnalyticShape>),
    Tabulated(Tabulated),
}

impl Shape {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Shape::Analytic(a) => a.value(x),
            Shape::Tabulated(t) => t.value(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Shape::Analytic(a) => a.derivative(x),
            Shape::Tabulated(t) => t.derivative(x),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Shape::Analytic(a) => a.sup(),
            Shape::Tabulated(t) => t.max_value(),
        }
    }

    pub fn as_tabulated(&self) -> Option<&Tabulated> {
        match self {
            Shape::Tabulated(t) => Some(t),
            Shape::Analytic(_) => None,
        }
    }

    /// Value with the truncation convention: zero outside `[-radius, radius]`.
    #[inline]
    pub fn eval_truncated(&self, x: f64, radius: f64) -> f64 {
        if x.abs() > radius {
            0.0
        } else {
            self.value(x)
        }
    }

    #[inline]
    pub fn derivative_truncated(&self, x: f64, radius: f64) -> f64 {
        if x.abs() > radius {
            0.0
        } else {
            self.derivative(x)
        }
    }

    /// Integral over `[a, b]` ∩ `[-radius, radius]`.
    pub fn integral(&self, a: f64, b: f64, radius: f64, quad_tol: f64) -> f64 {
        let a = a.max(-radius);
        let b = b.min(radius);
        if !(b > a) {
            return 0.0;
        }
        match self {
            Shape::Tabulated(t) => t.integral(a, b),
            Shape::Analytic(s) => integrate(|x| s.value(x), a, b, quad_tol * 1e-2, quad_tol).value,
        }
    }
}

/// A finite family of shapes with selection probabilities.
#[derive(Debug, Clone)]
pub struct ShapeFamily {
    shapes: Vec<Shape>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    support_radius: f64,
    sup_bound: f64,
    normalization_tol: f64,
}

impl ShapeFamily {
    /// Builds a family. `normalization_tol` is the tolerance `validate_family`
    /// applies to the expected integral.
    pub fn new(shapes: Vec<Shape>, probs: Vec<f64>, support_radius: f64, normalization_tol: f64) -> Result<Self> {
        if shapes.is_empty() || shapes.len() != probs.len() {
            return Err(Error::InvalidFamily("need one probability per shape and at least one shape".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidFamily("shape probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidFamily(format!("shape probabilities sum to {total}, not 1")));
        }
        if !(support_radius.is_finite() && support_radius > 0.0) {
            return Err(Error::InvalidFamily("support radius must be positive and finite".into()));
        }
        let sup_bound = shapes.iter().map(Shape::sup).fold(0.0, f64::max);
        let cumulative = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(ShapeFamily { shapes, probs, cumulative, support_radius, sup_bound, normalization_tol })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn shape(&self, id: usize) -> &Shape {
        &self.shapes[id]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    /// Shape index for a uniform variate `v` in `[0, 1)`.
    pub fn index_for(&self, v: f64) -> usize {
        let target = v * self.cumulative[self.cumulative.len() - 1];
        self.cumulative.partition_point(|&c| c <= target).min(self.shapes.len() - 1)
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn normalization_tol(&self) -> f64 {
        self.normalization_tol
    }

    /// `f_id(x)` under the truncation convention.
    #[inline]
    pub fn eval(&self, id: usize, x: f64) -> f64 {
        self.shapes[id].eval_truncated(x, self.support_radius)
    }

    #[inline]
    pub fn eval_derivative(&self, id: usize, x: f64) -> f64 {
        self.shapes[id].derivative_truncated(x, self.support_radius)
    }

    /// `Σ_k p_k ∫ f_k`, each integral over the support window.
    pub fn expected_integral(&self, quad_tol: f64) -> f64 {
        let r = self.support_radius;
        self.shapes.iter().zip(&self.probs).map(|(s, p)| p * s.integral(-r, r, r, quad_tol)).sum()
    }
}

/// What `validate_family` found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyDiagnostics {
    pub n_shapes: usize,
    pub expected_integral: f64,
    pub normalization_tol: f64,
    pub sup_bound: f64,
    /// Largest tabulated or sampled shape value; never exceeds `sup_bound`.
    pub max_observed: f64,
    pub support_radius: f64,
    /// Largest shape value found at the edge of the support window.
    pub edge_value: f64,
    pub warnings: Vec<String>,
}

/// Checks normalization, the sup bound and the support window of a family.
pub fn validate_family(family: &ShapeFamily) -> Result<FamilyDiagnostics> {
    let d = family_diagnostics(family);
    if (d.expected_integral - 1.0).abs() > d.normalization_tol {
        return Err(Error::Normalization { integral: d.expected_integral, tolerance: d.normalization_tol });
    }
    Ok(d)
}

/// Same checks as `validate_family`, with a normalization failure reported
/// as a warning.
pub fn family_diagnostics(family: &ShapeFamily) -> FamilyDiagnostics {
    let quad_tol = 1e-10;
    let integral = family.expected_integral(quad_tol);
    let r = family.support_radius();
    let mut max_observed: f64 = 0.0;
    let mut edge_value: f64 = 0.0;
    for shape in family.shapes() {
        match shape {
            Shape::Tabulated(t) => {
                max_observed = max_observed.max(t.max_value());
                edge_value = edge_value.max(t.value(-r)).max(t.value(r));
            }
            Shape::Analytic(a) => {
                let n = 2001;
                for k in 0..n {
                    let x = -r + 2.0 * r * k as f64 / (n - 1) as f64;
                    max_observed = max_observed.max(a.value(x));
                }
                edge_value = edge_value.max(a.value(-r)).max(a.value(r));
            }
        }
    }
    let mut warnings = Vec::new();
    if max_observed > family.sup_bound() * (1.0 + 1e-12) {
        warnings.push(format!("shape value {max_observed} exceeds sup bound {}", family.sup_bound()));
    }
    if edge_value > 1e-3 * family.sup_bound() {
        warnings.push(format!("shapes reach {edge_value:e} at the truncation radius {r}"));
    }
    let tol = family.normalization_tol();
    if (integral - 1.0).abs() > tol {
        warnings.push(format!("expected shape integral {integral} is off 1 by more than {tol}"));
    }
    FamilyDiagnostics {
        n_shapes: family.len(),
        expected_integral: integral,
        normalization_tol: tol,
        sup_bound: family.sup_bound(),
        max_observed,
        support_radius: r,
        edge_value,
        warnings,
    }
}

/// One Poisson point `(s, u, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub s: f64,
    pub u: f64,
    pub shape_id: usize,
}

/// Conditioning data, sorted by site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observations {
    sites: Vec<f64>,
    values: Vec<f64>,
    /// `original[k]` is the caller's index of the k-th sorted observation.
    original: Vec<usize>,
}

impl Observations {
    pub fn sites(&self) -> &[f64] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site(&self, i: usize) -> f64 {
        self.sites[i]
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Same sites, every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Observations {
        Observations {
            sites: self.sites.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            original: self.original.clone(),
        }
    }
}

/// Sorts observations by site, keeping the permutation.
pub fn canonicalize_observations(sites: &[f64], values: &[f64]) -> Result<Observations> {
    if sites.len() != values.len() {
        return Err(Error::InvalidObservations(format!("{} sites but {} values", sites.len(), values.len())));
    }
    if sites.is_empty() {
        return Err(Error::InvalidObservations("need at least one observation".into()));
    }
    for (&s, &v) in sites.iter().zip(values) {
        if !s.is_finite() {
            return Err(Error::InvalidObservations(format!("site {s} is not finite")));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveValue { site: s, value: v });
        }
    }
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].total_cmp(&sites[b]));
    for w in order.windows(2) {
        if sites[w[0]] == sites[w[1]] {
            return Err(Error::DuplicateSite(sites[w[0]]));
        }
    }
    Ok(Observations {
        sites: order.iter().map(|&k| sites[k]).collect(),
        values: order.iter().map(|&k| values[k]).collect(),
        original: order,
    })
}

/// A point of a multi-index intersection set, with its limiting weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidatePoint {
    pub x0: f64,
    pub y0: f64,
    pub shape_id: usize,
    pub weight: f64,
}

/// A set of observation indices produced by one atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    /// Sorted, 0-based indices into the sorted observations.
    pub members: Vec<usize>,
    /// Candidate generating points (empty for singletons, whose generator
    /// ranges over a region).
    pub candidates: Vec<CandidatePoint>,
    pub weight: f64,
    /// True for blocks of three or more indices.
    pub forced: bool,
}

impl Block {
    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }
}

/// A partition of the observation indices into blocks (by index into the
/// owning block list) with its weight and normalized probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub blocks: Vec<usize>,
    pub weight: f64,
    pub prob: f64,
}

/// A sample representing a predictive distribution at one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalPredictive {
    pub site: f64,
    pub draws: Vec<f64>,
}

impl EmpiricalPredictive {
    pub fn new(site: f64, draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(EmpiricalPredictive { site, draws })
    }

    /// The same predictive on the log (Gumbel) scale.
    pub fn log_scale(&self) -> EmpiricalPredictive {
        EmpiricalPredictive { site: self.site, draws: self.draws.iter().map(|d| d.ln()).collect() }
    }
}
