//! Concrete shape families: the Gaussian (Smith) shape, tabulated shapes,
//! the Brown-Resnick random shape and empirical N-shape families.

use crate::error::{Error, Result};
use crate::model::{AnalyticShape, Shape, ShapeFamily, Tabulated};
use crate::numeric::INV_SQRT_2PI;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::Arc;

/// Gaussian density with given center and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub center: f64,
    pub sigma: f64,
}

impl Gaussian {
    pub fn standard() -> Self {
        Gaussian { center: 0.0, sigma: 1.0 }
    }
}

impl AnalyticShape for Gaussian {
    fn value(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        INV_SQRT_2PI / self.sigma * (-0.5 * z * z).exp()
    }

    fn derivative(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sigma;
        -z / self.sigma * self.value(x)
    }

    fn sup(&self) -> f64 {
        INV_SQRT_2PI / self.sigma
    }
}

/// A constant multiple of another analytic shape.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub factor: f64,
    pub inner: Arc<dyn AnalyticShape>,
}

impl AnalyticShape for Scaled {
    fn value(&self, x: f64) -> f64 {
        self.factor * self.inner.value(x)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.factor * self.inner.derivative(x)
    }

    fn sup(&self) -> f64 {
        self.factor * self.inner.sup()
    }
}

pub const SMITH_SUPPORT_RADIUS: f64 = 6.0;

/// Smith's process: the single deterministic shape `φ`.
pub fn build_smith_family() -> ShapeFamily {
    ShapeFamily::new(vec![Shape::Analytic(Arc::new(Gaussian::standard()))], vec![1.0], SMITH_SUPPORT_RADIUS, 1e-3)
        .expect("the Smith family is valid")
}

/// Draws shapes for the atoms of an unconditional simulation.
pub trait ShapeLaw: Sync {
    /// Every shape vanishes outside `[-radius, radius]`.
    fn support_radius(&self) -> f64;
    /// Upper bound on every shape value.
    fn sup_bound(&self) -> f64;
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawnShape<'_>;
}

pub enum DrawnShape<'a> {
    /// A member of a finite family, by index.
    Member(usize, &'a Shape),
    /// A freshly sampled shape.
    Fresh(Shape),
}

impl DrawnShape<'_> {
    pub fn shape(&self) -> &Shape {
        match self {
            DrawnShape::Member(_, s) => s,
            DrawnShape::Fresh(s) => s,
        }
    }
}

impl ShapeLaw for ShapeFamily {
    fn support_radius(&self) -> f64 {
        ShapeFamily::support_radius(self)
    }

    fn sup_bound(&self) -> f64 {
        ShapeFamily::sup_bound(self)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawnShape<'_> {
        let id = if self.len() == 1 { 0 } else { self.index_for(rng.random::<f64>()) };
        DrawnShape::Member(id, self.shape(id))
    }
}

/// Grid for Brown-Resnick shapes: `{-half_width, ..., half_width}` in steps
/// of `step`. The grid always contains 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrShapeConfig {
    pub half_width: f64,
    pub step: f64,
}

impl Default for BrShapeConfig {
    fn default() -> Self {
        BrShapeConfig { half_width: 5.0, step: 0.1 }
    }
}

impl BrShapeConfig {
    pub fn knots_per_side(&self) -> usize {
        (self.half_width / self.step).round() as usize
    }

    pub fn grid(&self) -> Vec<f64> {
        let m = self.knots_per_side() as i64;
        (-m..=m).map(|k| k as f64 * self.step).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.half_width >= self.step) {
            return Err(Error::InvalidArgument("Brown-Resnick grid needs 0 < step <= half_width".into()));
        }
        let m = self.half_width / self.step;
        if (m - m.round()).abs() > 1e-9 {
            return Err(Error::InvalidArgument("half_width must be a multiple of step".into()));
        }
        Ok(())
    }
}

/// Values of `R` on one side of the origin at knots `step, 2*step, ...`:
/// the norm of a 3-d Brownian motion with drift 1/2 in its first component.
fn bessel_side<R: Rng + ?Sized>(n: usize, step: f64, rng: &mut R, out: &mut Vec<f64>) {
    let sd = step.sqrt();
    let (mut w1, mut w2, mut w3) = (0.0f64, 0.0f64, 0.0f64);
    for k in 1..=n {
        w1 += sd * rng.sample::<f64, _>(StandardNormal);
        w2 += sd * rng.sample::<f64, _>(StandardNormal);
        w3 += sd * rng.sample::<f64, _>(StandardNormal);
        let drifted = w1 + 0.5 * k as f64 * step;
        out.push((drifted * drifted + w2 * w2 + w3 * w3).sqrt());
    }
}

/// One Brown-Resnick shape `t ↦ exp(-R(t)) / 2` on the configured grid,
/// polygonal in between and zero outside.
pub fn sample_br_shape<R: Rng + ?Sized>(config: &BrShapeConfig, rng: &mut R) -> Tabulated {
    let m = config.knots_per_side();
    let mut left = Vec::with_capacity(m);
    let mut right = Vec::with_capacity(m);
    bessel_side(m, config.step, rng, &mut left);
    bessel_side(m, config.step, rng, &mut right);
    let mut ys = Vec::with_capacity(2 * m + 1);
    ys.extend(left.iter().rev().map(|r| 0.5 * (-r).exp()));
    ys.push(0.5);
    ys.extend(right.iter().map(|r| 0.5 * (-r).exp()));
    Tabulated::new(config.grid(), ys).expect("grid is increasing and values positive")
}

/// The (grid-approximated) Brown-Resnick shape law: every draw is a fresh
/// random shape.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownResnickLaw {
    pub config: BrShapeConfig,
}

impl ShapeLaw for BrownResnickLaw {
    fn support_radius(&self) -> f64 {
        self.config.half_width
    }

    fn sup_bound(&self) -> f64 {
        0.5
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawnShape<'_> {
        DrawnShape::Fresh(Shape::Tabulated(sample_br_shape(&self.config, rng)))
    }
}

/// Normalization tolerance for families built from sampled shapes.
pub const SAMPLED_NORMALIZATION_TOL: f64 = 5e-2;

/// `N` independent draws of `sampler`, each with probability `1/N`.
pub fn build_empirical_family<R, F>(n: usize, support_radius: f64, mut sampler: F, rng: &mut R) -> Result<ShapeFamily>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Shape,
{
    if n == 0 {
        return Err(Error::InvalidCount(0));
    }
    let shapes: Vec<Shape> = (0..n).map(|_| sampler(rng)).collect();
    let p = 1.0 / n as f64;
    let mut probs = vec![p; n];
    // Keep the sum exactly representable as 1 within the family's check.
    let rest: f64 = probs[1..].iter().sum();
    probs[0] = 1.0 - rest;
    ShapeFamily::new(shapes, probs, support_radius, SAMPLED_NORMALIZATION_TOL)
}

/// Empirical family of `n` Brown-Resnick shapes.
pub fn build_br_family<R: Rng + ?Sized>(n: usize, config: &BrShapeConfig, rng: &mut R) -> Result<ShapeFamily> {
    config.validate()?;
    build_empirical_family(n, config.half_width, |r| Shape::Tabulated(sample_br_shape(config, r)), rng)
}

/// Reads a tabulated shape from two-column CSV `x,value` (a header row is optional).
pub fn read_tabulated_csv<R: Read>(reader: R) -> Result<Tabulated> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::InvalidFamily(format!("line {}: expected two columns", line + 1)));
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ if line == 0 => continue,
            _ => return Err(Error::InvalidFamily(format!("line {}: not numeric", line + 1))),
        }
    }
    Tabulated::new(xs, ys)
}

pub fn write_tabulated_csv<W: Write>(shape: &Tabulated, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "value"])?;
    for (x, y) in shape.knots().iter().zip(shape.values()) {
        w.write_record([format!("{x}"), format!("{y}")])?;
    }
    w.flush()?;
    Ok(())
}
