//! C ABI over `m3cond`.
//!
//! Objects are opaque handles created by `m3_*_new` style functions and
//! released with the matching `*_free`. Every fallible call returns an
//! `M3Status`; on failure `m3_last_error_message` describes the error for the
//! calling thread. Output buffers are supplied by the caller.

use m3cond::conditional::{ConditionalConfig, ConditionalSampler};
use m3cond::model::{canonicalize_observations, Observations, Shape, ShapeFamily, Tabulated};
use m3cond::scenario::ScenarioTable;
use m3cond::shapes::{build_br_family, build_smith_family, BrShapeConfig, BrownResnickLaw};
use m3cond::uncond::{replicate_rng, simulate_fields};
use m3cond::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Normalization = 3,
    InvalidObservations = 4,
    Tangency = 5,
    IntervalIntersection = 6,
    Conflict = 7,
    Infeasible = 8,
    TooManyFreeIndices = 9,
    EmptyRegion = 10,
    Simulation = 11,
    SingularCovariance = 12,
    Other = 98,
    Panic = 99,
}

fn status_of(e: &Error) -> M3Status {
    match e {
        Error::Normalization { .. } => M3Status::Normalization,
        Error::DuplicateSite(_) | Error::NonPositiveValue { .. } | Error::InvalidObservations(_) => {
            M3Status::InvalidObservations
        }
        Error::Tangency { .. } => M3Status::Tangency,
        Error::IntervalIntersection { .. } => M3Status::IntervalIntersection,
        Error::Conflict { .. } => M3Status::Conflict,
        Error::Infeasible(_) => M3Status::Infeasible,
        Error::TooManyFreeIndices { .. } => M3Status::TooManyFreeIndices,
        Error::EmptyRegion(_) => M3Status::EmptyRegion,
        Error::WindowTooSmall { .. } | Error::DegenerateFamily => M3Status::Simulation,
        Error::SingularCovariance => M3Status::SingularCovariance,
        Error::InvalidFamily(_) | Error::InvalidCount(_) | Error::InvalidArgument(_) | Error::OffLattice(_) => {
            M3Status::InvalidArgument
        }
        _ => M3Status::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (M3Status, String)>) -> M3Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => M3Status::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            M3Status::Panic
        }
    }
}

fn lib(e: Error) -> (M3Status, String) {
    (status_of(&e), format!("{}: {e}", e.name()))
}

fn null(what: &str) -> (M3Status, String) {
    (M3Status::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (M3Status, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (M3Status, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread; valid until the next
/// failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn m3_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A shape family, optionally paired with a continuous Brown-Resnick law for
/// atoms below the data.
pub struct M3Family {
    family: ShapeFamily,
    below: Option<BrownResnickLaw>,
}

fn boxed<T>(v: T, out: *mut *mut T) -> Result<(), (M3Status, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(v)) };
    Ok(())
}

/// Gaussian-shape (Smith) family.
#[no_mangle]
pub extern "C" fn m3_family_smith(out: *mut *mut M3Family) -> M3Status {
    guard(|| boxed(M3Family { family: build_smith_family(), below: None }, out))
}

/// `n_shapes` Brown-Resnick shapes on `{-half_width, ..., half_width}` with
/// spacing `step`; atoms below the data use fresh shapes on a grid of half
/// width `below_half_width`, or the family itself when that is 0.
#[no_mangle]
pub extern "C" fn m3_family_brown_resnick(
    n_shapes: usize,
    half_width: f64,
    step: f64,
    below_half_width: f64,
    seed: u64,
    out: *mut *mut M3Family,
) -> M3Status {
    guard(|| {
        let cfg = BrShapeConfig { half_width, step };
        let family = build_br_family(n_shapes, &cfg, &mut replicate_rng(seed, 0)).map_err(lib)?;
        let below = if below_half_width > 0.0 {
            let full = BrShapeConfig { half_width: below_half_width, step };
            full.validate().map_err(lib)?;
            Some(BrownResnickLaw { config: full })
        } else {
            None
        };
        boxed(M3Family { family, below }, out)
    })
}

/// Family of `n_shapes` piecewise-linear shapes. Shape `k` has `lens[k]`
/// knots; `knots` and `values` hold all shapes back to back.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn m3_family_tabulated(
    knots: *const f64,
    values: *const f64,
    lens: *const usize,
    n_shapes: usize,
    probs: *const f64,
    support_radius: f64,
    normalization_tol: f64,
    out: *mut *mut M3Family,
) -> M3Status {
    guard(|| {
        let lens = slice(lens, n_shapes, "lens")?;
        let total: usize = lens.iter().sum();
        let knots = slice(knots, total, "knots")?;
        let values = slice(values, total, "values")?;
        let probs = slice(probs, n_shapes, "probs")?;
        let mut shapes = Vec::with_capacity(n_shapes);
        let mut at = 0;
        for &l in lens {
            let t = Tabulated::new(knots[at..at + l].to_vec(), values[at..at + l].to_vec()).map_err(lib)?;
            shapes.push(Shape::Tabulated(t));
            at += l;
        }
        let family = ShapeFamily::new(shapes, probs.to_vec(), support_radius, normalization_tol).map_err(lib)?;
        boxed(M3Family { family, below: None }, out)
    })
}

/// # Safety
/// `family` must come from an `m3_family_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn m3_family_free(family: *mut M3Family) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Number of shapes in the family.
///
/// # Safety
/// `family` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn m3_family_len(family: *const M3Family, out: *mut usize) -> M3Status {
    guard(|| {
        let f = family.as_ref().ok_or_else(|| null("family"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = f.family.len();
        Ok(())
    })
}

/// `n` unconditional fields at `sites`, row-major into `out` (`n * n_sites`).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn m3_simulate(
    family: *const M3Family,
    sites: *const f64,
    n_sites: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> M3Status {
    guard(|| {
        let f = family.as_ref().ok_or_else(|| null("family"))?;
        let sites = slice(sites, n_sites, "sites")?;
        let out = slice_mut(out, n * n_sites, "out")?;
        let fields = match &f.below {
            Some(law) => simulate_fields(law, sites, n, seed),
            None => simulate_fields(&f.family, sites, n, seed),
        }
        .map_err(lib)?;
        for (row, field) in out.chunks_mut(n_sites.max(1)).zip(&fields) {
            row.copy_from_slice(field);
        }
        Ok(())
    })
}

/// Conditioning data with its scenario table.
pub struct M3Conditioner {
    family: ShapeFamily,
    below: Option<BrownResnickLaw>,
    obs: Observations,
    config: ConditionalConfig,
    table: ScenarioTable,
}

impl M3Conditioner {
    fn with_sampler<T>(&self, f: impl FnOnce(SamplerRef<'_>) -> Result<T, Error>) -> Result<T, Error> {
        match &self.below {
            Some(law) => f(SamplerRef::Br(ConditionalSampler::new(&self.obs, &self.family, law, self.config)?)),
            None => f(SamplerRef::Family(ConditionalSampler::new(&self.obs, &self.family, &self.family, self.config)?)),
        }
    }
}

enum SamplerRef<'a> {
    Family(ConditionalSampler<'a, ShapeFamily>),
    Br(ConditionalSampler<'a, BrownResnickLaw>),
}

impl SamplerRef<'_> {
    fn predictive(&self, t0: f64, n: usize, seed: u64) -> Result<Vec<f64>, Error> {
        match self {
            SamplerRef::Family(s) => s.predictive(t0, n, seed).map(|p| p.draws),
            SamplerRef::Br(s) => s.predictive(t0, n, seed).map(|p| p.draws),
        }
    }

    fn paths(&self, grid: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>, Error> {
        match self {
            SamplerRef::Family(s) => s.paths(grid, n, seed),
            SamplerRef::Br(s) => s.paths(grid, n, seed),
        }
    }
}

/// Conditions `family` on `values` at `sites` with grouping tolerance `eps`
/// (pass 0 for the default 1e-6).
///
/// # Safety
/// Pointers must reference arrays of length `n`; `family` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_new(
    family: *const M3Family,
    sites: *const f64,
    values: *const f64,
    n: usize,
    eps: f64,
    out: *mut *mut M3Conditioner,
) -> M3Status {
    guard(|| {
        let f = family.as_ref().ok_or_else(|| null("family"))?;
        let sites = slice(sites, n, "sites")?;
        let values = slice(values, n, "values")?;
        let obs = canonicalize_observations(sites, values).map_err(lib)?;
        let mut config = ConditionalConfig::default();
        if eps > 0.0 {
            config.eps = eps;
        }
        let table = match &f.below {
            Some(law) => ConditionalSampler::new(&obs, &f.family, law, config).map(|s| s.table().clone()),
            None => ConditionalSampler::new(&obs, &f.family, &f.family, config).map(|s| s.table().clone()),
        }
        .map_err(lib)?;
        boxed(M3Conditioner { family: f.family.clone(), below: f.below.clone(), obs, config, table }, out)
    })
}

/// # Safety
/// `c` must come from `m3_conditioner_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_free(c: *mut M3Conditioner) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of scenarios.
///
/// # Safety
/// `c` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_scenario_count(c: *const M3Conditioner, out: *mut usize) -> M3Status {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("conditioner"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = c.table.scenarios.len();
        Ok(())
    })
}

/// Probability that the observations listed in `members` (indices into the
/// sites sorted increasingly) are produced by one atom.
///
/// # Safety
/// `members` must reference `len` indices; `c` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_joint_probability(
    c: *const M3Conditioner,
    members: *const usize,
    len: usize,
    out: *mut f64,
) -> M3Status {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("conditioner"))?;
        let mut m = slice(members, len, "members")?.to_vec();
        m.sort_unstable();
        *out.as_mut().ok_or_else(|| null("out"))? = c.table.joint_probability(&m);
        Ok(())
    })
}

/// `n_draws` conditional values at `t0` into `out`.
///
/// # Safety
/// `out` must hold `n_draws` values; `c` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_predictive(
    c: *const M3Conditioner,
    t0: f64,
    n_draws: usize,
    seed: u64,
    out: *mut f64,
) -> M3Status {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("conditioner"))?;
        let out = slice_mut(out, n_draws, "out")?;
        let draws = c.with_sampler(|s| s.predictive(t0, n_draws, seed)).map_err(lib)?;
        out.copy_from_slice(&draws);
        Ok(())
    })
}

/// `n_paths` conditional paths over `grid`, row-major into `out`
/// (`n_paths * n_grid`).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `c` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_paths(
    c: *const M3Conditioner,
    grid: *const f64,
    n_grid: usize,
    n_paths: usize,
    seed: u64,
    out: *mut f64,
) -> M3Status {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("conditioner"))?;
        let grid = slice(grid, n_grid, "grid")?;
        let out = slice_mut(out, n_grid * n_paths, "out")?;
        let paths = c.with_sampler(|s| s.paths(grid, n_paths, seed)).map_err(lib)?;
        for (row, p) in out.chunks_mut(n_grid.max(1)).zip(&paths) {
            row.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Scenario table as a JSON string; release it with `m3_string_free`.
///
/// # Safety
/// `c` must be live.
#[no_mangle]
pub unsafe extern "C" fn m3_conditioner_scenarios_json(c: *const M3Conditioner, out: *mut *mut c_char) -> M3Status {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("conditioner"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = c.table.to_json().map_err(lib)?;
        *out = CString::new(s).map_err(|e| (M3Status::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn m3_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// CRPS of `n` draws at `x` (larger is better); NaN on bad input.
///
/// # Safety
/// `draws` must reference `n` values.
#[no_mangle]
pub unsafe extern "C" fn m3_crps(draws: *const f64, n: usize, x: f64) -> f64 {
    if draws.is_null() || n == 0 {
        return f64::NAN;
    }
    m3cond::scoring::crps(std::slice::from_raw_parts(draws, n), x)
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn m3_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr() as *const c_char
}
