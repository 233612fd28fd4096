//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use m3cond::uncond::replicate_rng;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// `mean((E1 + E2) / 2) / mean(min(E1, E2))` with `E = 1 / Z`: the ratio of
/// the means of an exponential and of the minimum of the pair.
pub fn extremal_coefficient(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mean_e: f64 = pairs.iter().map(|(a, b)| 0.5 * (1.0 / a + 1.0 / b)).sum::<f64>() / n;
    let mean_min: f64 = pairs.iter().map(|(a, b)| (1.0 / a).min(1.0 / b)).sum::<f64>() / n;
    mean_e / mean_min
}

/// Values carrying at least `min_mass` of `sample`.
pub fn point_masses(sample: &[f64], min_mass: f64) -> Vec<f64> {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j < s.len() && s[j] == s[i] {
            j += 1;
        }
        if (j - i) as f64 >= min_mass * s.len() as f64 {
            out.push(s[i]);
        }
        i = j;
    }
    out
}

/// About `bins` equal-count bin edges from `reference`, each moved off the
/// band `[m / (1 + 2 delta), m (1 + 2 delta)]` around every point mass `m`.
pub fn blurred_bin_edges(reference: &[f64], bins: usize, masses: &[f64], delta: f64) -> Vec<f64> {
    let mut s = reference.to_vec();
    s.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| {
            let mut e = s[k * s.len() / bins];
            for &m in masses {
                let (lo, hi) = (m / (1.0 + 2.0 * delta), m * (1.0 + 2.0 * delta));
                if e >= lo && e <= hi {
                    e = if e - lo < hi - e { lo } else { hi * (1.0 + 1e-12) };
                }
            }
            e
        })
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

/// Total variation between the binned empirical laws of `a` and `b`.
pub fn binned_tv(a: &[f64], b: &[f64], edges: &[f64]) -> f64 {
    let hist = |x: &[f64]| {
        let mut h = vec![0.0; edges.len() + 1];
        for &v in x {
            h[edges.partition_point(|&e| e < v)] += 1.0 / x.len() as f64;
        }
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

const SMITH_RADIUS: f64 = 6.0;

/// Accepted `Z(t)`, data and joint count of one segment.
type SegmentHits = (Vec<f64>, Vec<(f64, f64)>, usize);

/// Result of the Smith box oracle.
#[derive(Debug, Clone)]
pub struct BoxSample {
    /// `Z(t)` at every accepted position.
    pub z0: Vec<f64>,
    /// `(Z(t - 1), Z(t + 1))` at the same positions.
    pub data: Vec<(f64, f64)>,
    /// Accepted positions where one atom attains both observations.
    pub joint: usize,
    pub positions: u64,
}

/// Smith process (unit Gaussian shape truncated at 6) seen at `t - 1`, `t`,
/// `t + 1` for positions `t` on a grid of step 1/2 along long independent
/// segments; a position is accepted when both outer values lie in
/// `(1, 1 + delta]`.
///
/// Only atoms with `u > sqrt(2 pi)` can push a value above 1, so the outer
/// values come from those (a Poisson process of rate `1/sqrt(2 pi)` in `s`
/// with Pareto `u`). `Z(t)` at accepted positions also takes the smaller atoms
/// near `t` into account, simulated on demand.
pub fn smith_box_oracle(delta: f64, n_accepted: usize, seed: u64) -> BoxSample {
    let v0 = (2.0 * std::f64::consts::PI).sqrt();
    let log_v0 = v0.ln();
    let log_hi = delta.ln_1p();
    let seg_len = 10_000.0;
    let n_grid = (seg_len * 2.0) as usize + 1;
    let batch = (rayon::current_num_threads() * 4) as u64;
    let mut out = BoxSample { z0: Vec::new(), data: Vec::new(), joint: 0, positions: 0 };
    let mut seg = 0u64;
    while out.z0.len() < n_accepted {
        let parts: Vec<SegmentHits> = (seg..seg + batch)
            .into_par_iter()
            .map(|k| {
                let mut rng = replicate_rng(seed, k);
                let a = -SMITH_RADIUS;
                let b = seg_len + SMITH_RADIUS;
                let mean = (b - a) / v0;
                let count = poisson(mean, &mut rng);
                let mut lv = vec![f64::NEG_INFINITY; n_grid];
                let mut arg = vec![usize::MAX; n_grid];
                for id in 0..count {
                    let s = a + (b - a) * rng.random::<f64>();
                    let log_u = log_v0 - rng.random::<f64>().ln();
                    let base = log_u - log_v0;
                    let lo = ((s - SMITH_RADIUS) * 2.0).ceil().max(0.0) as usize;
                    let hi = ((s + SMITH_RADIUS) * 2.0).floor().min((n_grid - 1) as f64);
                    if hi < 0.0 {
                        continue;
                    }
                    for g in lo..=hi as usize {
                        let x = 0.5 * g as f64 - s;
                        let v = base - 0.5 * x * x;
                        if v > lv[g] {
                            lv[g] = v;
                            arg[g] = id;
                        }
                    }
                }
                let mut z0 = Vec::new();
                let mut data = Vec::new();
                let mut joint = 0;
                for i in 2..n_grid - 2 {
                    let (l, r) = (lv[i - 2], lv[i + 2]);
                    if l > 0.0 && l <= log_hi && r > 0.0 && r <= log_hi {
                        if arg[i - 2] == arg[i + 2] {
                            joint += 1;
                        }
                        z0.push(with_small_atoms(lv[i].exp(), v0, &mut rng));
                        data.push((l.exp(), r.exp()));
                    }
                }
                (z0, data, joint)
            })
            .collect();
        for (z, d, j) in parts {
            out.z0.extend(z);
            out.data.extend(d);
            out.joint += j;
        }
        out.positions += batch * (n_grid as u64 - 4);
        seg += batch;
    }
    out
}

/// Max of `z` and the atoms with `u <= v0` at one site, in decreasing `u`.
fn with_small_atoms<R: Rng + ?Sized>(z: f64, v0: f64, rng: &mut R) -> f64 {
    let width = 2.0 * SMITH_RADIUS;
    let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut z = z;
    let mut gamma = 0.0;
    loop {
        gamma += rng.sample::<f64, _>(Exp1);
        let u = 1.0 / (1.0 / v0 + gamma / width);
        if u * peak < z {
            return z;
        }
        let x = width * (rng.random::<f64>() - 0.5);
        z = z.max(u * peak * (-0.5 * x * x).exp());
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    use rand_distr::{Distribution, Poisson};
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}
