//! Replicated prediction studies: simulate a truth, predict `Z(t0)` from the
//! other sites with each method, score on the log scale.

use crate::conditional::ConditionalConfig;
use crate::config::{derive_seed, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::model::{canonicalize_observations, Tolerances};
use crate::scoring::{fit_covariance, gt_conditional, mean_scores, score_predictive, whittle_matern_cov, MaternGrid};
use crate::uncond::{replicate_rng, DEFAULT_RELATIVE_FLOOR};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Conditional sampler with the grouping tolerance `eps`.
    #[serde(rename = "PPP")]
    Ppp,
    #[serde(rename = "PPP1")]
    Ppp1,
    /// Conditional sampler with `eps_coarse`.
    #[serde(rename = "PPP2")]
    Ppp2,
    /// Gaussian transform with a fitted Whittle-Matérn correlation.
    #[serde(rename = "GT")]
    Gt,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ppp => "PPP",
            Method::Ppp1 => "PPP1",
            Method::Ppp2 => "PPP2",
            Method::Gt => "GT",
        }
    }
}

fn default_eps() -> f64 {
    1e-6
}

fn default_eps_coarse() -> f64 {
    1e-2
}

fn default_relative_floor() -> f64 {
    DEFAULT_RELATIVE_FLOOR
}

/// Settings of the covariance fit behind `GT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GtConfig {
    /// Unconditional fields simulated for the fit.
    pub aux_fields: usize,
    /// Spacing of the auxiliary grid spanning the sites (the lattice pitch
    /// is used for the lattice model).
    pub aux_step: f64,
    pub grid: MaternGrid,
}

impl Default for GtConfig {
    fn default() -> Self {
        GtConfig { aux_fields: 2000, aux_step: 0.5, grid: MaternGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub seed: u64,
    pub sites: Vec<f64>,
    pub t0: f64,
    /// Number of replicates `K`.
    pub replicates: usize,
    /// Draws per predictive.
    pub draws: usize,
    pub methods: Vec<Method>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_eps_coarse")]
    pub eps_coarse: f64,
    #[serde(default = "default_relative_floor")]
    pub relative_floor: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub gt: GtConfig,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(Error::Config { path: path.into(), message: message.into() });
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1");
        }
        if self.draws == 0 {
            return bad("draws", "must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods", "must not be empty");
        }
        if self.sites.is_empty() {
            return bad("sites", "must not be empty");
        }
        if self.sites.contains(&self.t0) {
            return bad("t0", "must differ from the observation sites");
        }
        if !(self.eps > 0.0) {
            return bad("eps", "must be positive");
        }
        if !(self.eps_coarse > 0.0) {
            return bad("eps_coarse", "must be positive");
        }
        if self.methods.contains(&Method::Gt) && self.gt.aux_fields == 0 {
            return bad("gt.aux_fields", "must be at least 1");
        }
        Ok(())
    }

    fn conditional(&self, eps: f64) -> ConditionalConfig {
        ConditionalConfig { eps, relative_floor: self.relative_floor, tolerances: self.tolerances }
    }
}

/// Aggregates for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Means over the successful replicates; absent if none succeeded.
    pub crps_k: Option<f64>,
    pub mae_k: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
    /// Error name to count.
    pub failures: BTreeMap<String, usize>,
}

/// One replicate and method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub method: Method,
    pub truth: f64,
    pub crps: Option<f64>,
    pub abs_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub model: String,
    pub seed: u64,
    pub sites: Vec<f64>,
    pub t0: f64,
    pub replicates: usize,
    pub draws: usize,
    /// `(nu, c)` of the correlation fitted for `GT`.
    pub gt_fit: Option<(f64, f64)>,
    pub methods: Vec<MethodSummary>,
    pub rows: Vec<ReplicateRow>,
}

/// A report and the wall-clock seconds spent per method; timings are kept
/// apart so that reports are reproducible byte for byte.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub report: StudyReport,
    pub seconds: BTreeMap<String, f64>,
}

fn aux_grid(config: &StudyConfig, model: &Model) -> Vec<f64> {
    let mut pts: Vec<f64> = config.sites.iter().copied().chain(std::iter::once(config.t0)).collect();
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = match model {
        Model::Discrete { spec } => spec.pitch(),
        _ => config.gt.aux_step,
    };
    if step > 0.0 {
        let m = ((hi - lo) / step + 1e-9).floor() as usize;
        pts.extend((0..=m).map(|k| lo + k as f64 * step));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    pts
}

fn fit_gt(config: &StudyConfig, model: &Model) -> Result<(f64, f64)> {
    let grid = aux_grid(config, model);
    let seed = derive_seed(config.seed, "gt-aux");
    let fields = (0..config.gt.aux_fields)
        .into_par_iter()
        .map(|k| model.simulate(&grid, &mut replicate_rng(seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    fit_covariance(&grid, &fields, &config.gt.grid)
}

fn predict(
    config: &StudyConfig,
    model: &Model,
    gt: &std::result::Result<(f64, f64), Error>,
    method: Method,
    k: usize,
    values: &[f64],
) -> Result<crate::model::EmpiricalPredictive> {
    let seed = derive_seed(config.seed, &format!("{}/{k}", method.label()));
    match method {
        Method::Ppp | Method::Ppp1 | Method::Ppp2 => {
            let eps = if method == Method::Ppp2 { config.eps_coarse } else { config.eps };
            let obs = canonicalize_observations(&config.sites, values)?;
            model.predictive(&obs, config.t0, config.conditional(eps), config.draws, seed)
        }
        Method::Gt => {
            let (nu, c) = gt.clone()?;
            let mut rng = replicate_rng(seed, 0);
            gt_conditional(&config.sites, values, config.t0, |h| whittle_matern_cov(h, nu, c), config.draws, &mut rng)
        }
    }
}

/// Runs every method on `K` replicates; a method failing on a replicate is
/// recorded and does not stop the study.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let model = config.model.build(config.seed)?;
    let mut seconds = BTreeMap::new();
    let n = config.sites.len();

    let start = Instant::now();
    let truth_seed = derive_seed(config.seed, "truth");
    let mut all_sites = config.sites.clone();
    all_sites.push(config.t0);
    let truths = (0..config.replicates)
        .into_par_iter()
        .map(|k| model.simulate(&all_sites, &mut replicate_rng(truth_seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    seconds.insert("truth".to_string(), start.elapsed().as_secs_f64());

    let gt = if config.methods.contains(&Method::Gt) {
        let start = Instant::now();
        let fit = fit_gt(config, &model);
        seconds.insert("gt_fit".to_string(), start.elapsed().as_secs_f64());
        fit
    } else {
        Err(Error::InvalidArgument("GT not requested".into()))
    };

    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for &method in &config.methods {
        let start = Instant::now();
        let cells: Vec<ReplicateRow> = truths
            .par_iter()
            .enumerate()
            .map(|(k, field)| {
                let truth = field[n];
                match predict(config, &model, &gt, method, k, &field[..n]) {
                    Ok(pred) => {
                        let s = score_predictive(&pred, truth);
                        ReplicateRow {
                            replicate: k,
                            method,
                            truth,
                            crps: Some(s.crps),
                            abs_error: Some(s.abs_error),
                            error: None,
                        }
                    }
                    Err(e) => {
                        log::debug!("{} failed on replicate {k}: {e}", method.label());
                        ReplicateRow {
                            replicate: k,
                            method,
                            truth,
                            crps: None,
                            abs_error: None,
                            error: Some(e.name().to_string()),
                        }
                    }
                }
            })
            .collect();
        *seconds.entry(method.label().to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        let scores: Vec<_> = cells
            .iter()
            .filter_map(|r| Some(crate::scoring::ReplicateScore { crps: r.crps?, abs_error: r.abs_error? }))
            .collect();
        let mut failures = BTreeMap::new();
        for r in &cells {
            if let Some(e) = &r.error {
                *failures.entry(e.clone()).or_insert(0) += 1;
            }
        }
        let means = mean_scores(&scores).ok();
        methods.push(MethodSummary {
            method,
            crps_k: means.map(|m| m.0),
            mae_k: means.map(|m| m.1),
            succeeded: scores.len(),
            failed: cells.len() - scores.len(),
            failures,
        });
        rows.extend(cells);
    }

    let report = StudyReport {
        model: config.model.name().to_string(),
        seed: config.seed,
        sites: config.sites.clone(),
        t0: config.t0,
        replicates: config.replicates,
        draws: config.draws,
        gt_fit: gt.ok(),
        methods,
        rows,
    };
    Ok(StudyOutcome { report, seconds })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StudyReport {
    /// Summary JSON without the per-replicate rows.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            model: &'a str,
            seed: u64,
            sites: &'a [f64],
            t0: f64,
            replicates: usize,
            draws: usize,
            gt_fit: Option<(f64, f64)>,
            methods: &'a [MethodSummary],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            model: &self.model,
            seed: self.seed,
            sites: &self.sites,
            t0: self.t0,
            replicates: self.replicates,
            draws: self.draws,
            gt_fit: self.gt_fit,
            methods: &self.methods,
        })?)
    }

    /// One column per method, rows `CRPS_K` and `MAE_K`.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["score".to_string()];
        header.extend(self.methods.iter().map(|m| m.method.label().to_string()));
        w.write_record(&header)?;
        let mut crps = vec!["CRPS_K".to_string()];
        crps.extend(self.methods.iter().map(|m| opt(m.crps_k)));
        w.write_record(&crps)?;
        let mut mae = vec!["MAE_K".to_string()];
        mae.extend(self.methods.iter().map(|m| opt(m.mae_k)));
        w.write_record(&mae)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "method", "truth", "crps", "abs_error", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.replicate.to_string(),
                r.method.label().to_string(),
                r.truth.to_string(),
                opt(r.crps),
                opt(r.abs_error),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}
