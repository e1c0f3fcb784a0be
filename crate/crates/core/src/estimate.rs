//! Kernel estimates built from simulated paths: the coupling uniforms
//! `(U^δ, Ũ, V)`, the benchmark quantile function and the conditional SDF
//! weight `ξ(u) = E[ς_T | V = u]`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::Copula;
use crate::error::{Error, Result};
use crate::io;
use crate::market::PathSet;
use crate::quantile::{Partition, QuantileGrid};
use crate::stats::{mean, norm_cdf, norm_inv, norm_pdf, ranks, silverman_bandwidth, std_dev};

/// Gaussian kernel tails beyond this many bandwidths are treated as 0 or 1.
const CUTOFF: f64 = 9.0;
/// Uniforms are clamped to `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-6;
/// Batches up to this size are evaluated by direct kernel sums.
const EXACT_LIMIT: usize = 4096;
/// Target grid spacing as a fraction of the bandwidth, and the largest grid.
const BIN_FRACTION: f64 = 10.0;
const MAX_BINS: usize = 2048;
const TABLE_FRACTION: f64 = 8.0;
const MAX_TABLE: usize = 1 << 15;
/// Both bandwidths of the conditional KDE are the rule-of-thumb width
/// divided by this. Smoothing across wealth mixes conditional laws with
/// different centres, and smoothing along the SDF widens them; either way
/// `Ũ` thins out near 0 and 1 and picks up correlation with `U^δ`.
pub const CONDITIONAL_UNDERSMOOTH: f64 = 5.0;
/// Divisor of the rule-of-thumb width on a segment with a flat end. The
/// one-sided log coordinate is exponential-like, and the normal-reference
/// rule oversmooths it.
pub const FLAT_UNDERSMOOTH: f64 = 2.0;

fn check_bandwidth(h: f64, name: &str) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param(format!("bandwidth {name} must be positive, got {h}")));
    }
    Ok(())
}

fn check_sample(xs: &[f64], name: &str) -> Result<()> {
    if xs.len() < 2 {
        return Err(Error::param(format!("{name} needs at least 2 points")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(CLAMP, 1.0 - CLAMP)
}

fn logit(w: f64) -> f64 {
    (w / (1.0 - w)).ln()
}

/// Bandwidth for a sample, falling back to the override when given.
fn resolve_bandwidth(sample: &[f64], given: Option<f64>, name: &str) -> Result<f64> {
    let h = match given {
        Some(h) => h,
        None => silverman_bandwidth(sample),
    };
    if !(h > 0.0) {
        return Err(Error::Numeric(format!(
            "degenerate sample for {name}: bandwidth {h}"
        )));
    }
    check_bandwidth(h, name)?;
    Ok(h)
}

/// Gaussian-kernel estimate of a univariate distribution function.
#[derive(Debug, Clone)]
pub struct Kde {
    sorted: Vec<f64>,
    h: f64,
}

impl Kde {
    pub fn new(sample: &[f64], h: f64) -> Result<Self> {
        check_sample(sample, "kernel sample")?;
        check_bandwidth(h, "h")?;
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted, h })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    fn window(&self, x: f64) -> (usize, usize) {
        let lo = self.sorted.partition_point(|s| *s < x - CUTOFF * self.h);
        let hi = self.sorted.partition_point(|s| *s <= x + CUTOFF * self.h);
        (lo, hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let inner: f64 = self.sorted[lo..hi]
            .iter()
            .map(|s| norm_cdf((x - s) / self.h))
            .sum();
        (lo as f64 + inner) / self.sorted.len() as f64
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let s: f64 = self.sorted[lo..hi]
            .iter()
            .map(|s| norm_pdf((x - s) / self.h))
            .sum();
        s / (self.sorted.len() as f64 * self.h)
    }

    /// Evaluates the CDF at many points. Large batches go through a cubic
    /// Hermite table built from exact CDF and density values.
    pub fn cdf_many(&self, xs: &[f64]) -> Vec<f64> {
        if xs.len() <= EXACT_LIMIT {
            return xs.par_iter().map(|&x| self.cdf(x)).collect();
        }
        let table = self.table(xs);
        xs.iter().map(|&x| table.eval(x)).collect()
    }

    fn table(&self, xs: &[f64]) -> HermiteTable {
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = (((hi - lo) / (self.h / TABLE_FRACTION)).ceil() as usize).clamp(16, MAX_TABLE) + 1;
        let step = (hi - lo).max(f64::MIN_POSITIVE) / (n - 1) as f64;
        let nodes: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = lo + i as f64 * step;
                (self.cdf(x), self.pdf(x))
            })
            .collect();
        HermiteTable { lo, step, nodes }
    }

    /// Solves `F̂(x) = u` by safeguarded Newton iteration on the exact CDF.
    fn invert(&self, u: f64, guess: f64) -> f64 {
        let n = self.sorted.len();
        let mut lo = self.sorted[0] - 40.0 * self.h;
        let mut hi = self.sorted[n - 1] + 40.0 * self.h;
        let mut x = guess.clamp(lo, hi);
        for _ in 0..200 {
            let f = self.cdf(x) - u;
            if f.abs() <= 1e-14 {
                return x;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 1e-10 * x.abs().max(1.0) {
                break;
            }
            let d = self.pdf(x);
            let newton = x - f / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }

    /// Quantiles at the given probabilities.
    pub fn quantiles(&self, us: &[f64]) -> Vec<f64> {
        us.par_iter()
            .map(|&u| self.invert(u, crate::stats::empirical_quantile(&self.sorted, u)))
            .collect()
    }
}

struct HermiteTable {
    lo: f64,
    step: f64,
    /// `(F, F')` at the nodes.
    nodes: Vec<(f64, f64)>,
}

impl HermiteTable {
    fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        let pos = ((x - self.lo) / self.step).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let t = pos - i as f64;
        let (f0, d0) = self.nodes[i];
        let (f1, d1) = self.nodes[i + 1];
        let h = self.step;
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * f0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * f1
            + (t3 - t2) * h * d1;
        v.clamp(0.0, 1.0)
    }
}

/// `(1/N) Σ Φ((x - x_i)/h)`.
pub fn kde_cdf(sample: &[f64], bandwidth: f64, x: f64) -> Result<f64> {
    check_sample(sample, "kernel sample")?;
    check_bandwidth(bandwidth, "h")?;
    let s: f64 = sample.iter().map(|s| norm_cdf((x - s) / bandwidth)).sum();
    Ok(s / sample.len() as f64)
}

/// Nadaraya-Watson estimate of `P(Z ≤ z | X = x)` with a Gaussian CDF
/// kernel in `z` and a Gaussian density kernel in `x`.
pub fn conditional_kde_cdf(
    z_sample: &[f64],
    x_sample: &[f64],
    h_z: f64,
    h_x: f64,
    z: f64,
    x: f64,
) -> Result<f64> {
    check_sample(z_sample, "z sample")?;
    check_sample(x_sample, "x sample")?;
    if z_sample.len() != x_sample.len() {
        return Err(Error::Shape {
            expected: z_sample.len(),
            found: x_sample.len(),
        });
    }
    check_bandwidth(h_z, "h_z")?;
    check_bandwidth(h_x, "h_x")?;
    let (mut num, mut den) = (0.0, 0.0);
    for (zi, xi) in z_sample.iter().zip(x_sample) {
        let w = norm_pdf((x - xi) / h_x);
        den += w;
        num += w * norm_cdf((z - zi) / h_z);
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateQuery(format!(
            "all kernel weights vanish at x = {x}"
        )));
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Conditional CDF evaluated at every sample pair `(z_i, x_i)`.
fn conditional_at_samples(z: &[f64], x: &[f64], h_z: f64, h_x: f64) -> Result<Vec<f64>> {
    if z.len() <= EXACT_LIMIT {
        return (0..z.len())
            .into_par_iter()
            .map(|i| conditional_kde_cdf(z, x, h_z, h_x, z[i], x[i]))
            .collect();
    }
    Ok(binned_conditional_at_samples(z, x, h_z, h_x))
}

struct Axis {
    lo: f64,
    step: f64,
    n: usize,
}

impl Axis {
    fn new(values: &[f64], h: f64) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(h * 1e-6);
        let n = ((span / (h / BIN_FRACTION)).ceil() as usize + 1).clamp(4, MAX_BINS);
        Self {
            lo,
            step: span / (n - 1) as f64,
            n,
        }
    }

    /// Left node and linear weight of the right node.
    fn locate(&self, v: f64) -> (usize, f64) {
        let pos = ((v - self.lo) / self.step).clamp(0.0, (self.n - 1) as f64);
        let i = (pos.floor() as usize).min(self.n - 2);
        (i, pos - i as f64)
    }

    fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }
}

/// Linear binning on a 2-D grid, Φ-convolution along `z` per `x` column,
/// then a direct φ-sum over `x` columns and cubic interpolation in `z` at
/// each sample.
pub(crate) fn binned_conditional_at_samples(z: &[f64], x: &[f64], h_z: f64, h_x: f64) -> Vec<f64> {
    let ax = Axis::new(x, h_x);
    let az = Axis::new(z, h_z);
    let (nx, nz) = (ax.n, az.n);

    // weights[l * nz + k]
    let mut weights = vec![0.0; nx * nz];
    for (zi, xi) in z.iter().zip(x) {
        let (l, wx) = ax.locate(*xi);
        let (k, wz) = az.locate(*zi);
        weights[l * nz + k] += (1.0 - wx) * (1.0 - wz);
        weights[l * nz + k + 1] += (1.0 - wx) * wz;
        weights[(l + 1) * nz + k] += wx * (1.0 - wz);
        weights[(l + 1) * nz + k + 1] += wx * wz;
    }

    let half = ((CUTOFF * h_z / az.step).ceil() as usize).min(nz);
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|j| norm_cdf((j as f64 - half as f64) * az.step / h_z))
        .collect();
    let column_mass: Vec<f64> = weights.chunks(nz).map(|c| c.iter().sum()).collect();

    // smoothed[l * nz + a] = Σ_k w[l,k] Φ((z_a - z_k)/h_z)
    let smoothed: Vec<f64> = weights
        .par_chunks(nz)
        .zip(column_mass.par_iter())
        .flat_map_iter(|(col, &mass)| {
            let mut out = vec![0.0; nz];
            if mass == 0.0 {
                return out;
            }
            let mut prefix = vec![0.0; nz + 1];
            for k in 0..nz {
                prefix[k + 1] = prefix[k] + col[k];
            }
            for (a, o) in out.iter_mut().enumerate() {
                let k_lo = a.saturating_sub(half);
                let k_hi = (a + half).min(nz - 1);
                let mut s = prefix[k_lo];
                for (k, w) in col.iter().enumerate().take(k_hi + 1).skip(k_lo) {
                    s += w * kernel[a + half - k];
                }
                *o = s;
            }
            out
        })
        .collect();

    let x_half = (CUTOFF * h_x / ax.step).ceil() as usize;
    (0..z.len())
        .into_par_iter()
        .map(|i| {
            let pos = ((z[i] - az.lo) / az.step).clamp(0.0, (nz - 1) as f64);
            let a = (pos.floor() as usize).min(nz - 2);
            let t = pos - a as f64;
            let taps = catmull_rom_taps(a, t, nz);
            let xpos = ((x[i] - ax.lo) / ax.step).round() as usize;
            let l_lo = xpos.saturating_sub(x_half);
            let l_hi = (xpos + x_half).min(nx - 1);
            let (mut num, mut den) = (0.0, 0.0);
            for l in l_lo..=l_hi {
                let m = column_mass[l];
                if m == 0.0 {
                    continue;
                }
                let w = norm_pdf((x[i] - ax.node(l)) / h_x);
                den += w * m;
                let col = &smoothed[l * nz..(l + 1) * nz];
                let v: f64 = taps.iter().map(|&(idx, c)| c * col[idx]).sum();
                num += w * v;
            }
            (num / den).clamp(0.0, 1.0)
        })
        .collect()
}

/// Four-point interpolation weights at `a + t`, falling back to linear at
/// the grid edges.
fn catmull_rom_taps(a: usize, t: f64, n: usize) -> Vec<(usize, f64)> {
    if a == 0 || a + 2 >= n {
        return vec![(a, 1.0 - t), (a + 1, t)];
    }
    let t2 = t * t;
    let t3 = t2 * t;
    vec![
        (a - 1, 0.5 * (-t3 + 2.0 * t2 - t)),
        (a, 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)),
        (a + 1, 0.5 * (-3.0 * t3 + 4.0 * t2 + t)),
        (a + 2, 0.5 * (t3 - t2)),
    ]
}

/// Bandwidth overrides and the scale on which the SDF is smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    pub h_delta: Option<f64>,
    pub h_sdf: Option<f64>,
    pub h_x: Option<f64>,
    pub h_v: Option<f64>,
    /// Smooth `ln ς_T` instead of `ς_T`, so no kernel mass falls below zero.
    pub sdf_log_scale: bool,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            h_delta: None,
            h_sdf: None,
            h_x: None,
            h_v: None,
            sdf_log_scale: true,
        }
    }
}

/// One row per path: `U^δ`, `Ũ` and the coupling uniform `V`.
#[derive(Debug, Clone)]
pub struct CoupledSample {
    pub u_delta: Vec<f64>,
    pub u_tilde: Vec<f64>,
    pub v: Vec<f64>,
    pub copula: Copula,
    /// Bandwidth of the terminal wealth KDE.
    pub h_delta: f64,
    /// Bandwidth in the SDF direction of the conditional KDE, on the scale
    /// given by `sdf_log_scale`. By default it is sized on the spread of the
    /// SDF left after regressing on wealth, not on its marginal spread, and
    /// divided by [`CONDITIONAL_UNDERSMOOTH`].
    pub h_sdf: f64,
    /// Bandwidth in the wealth direction of the conditional KDE; by default
    /// the rule-of-thumb width over [`CONDITIONAL_UNDERSMOOTH`].
    pub h_x: f64,
    pub sdf_log_scale: bool,
}

impl CoupledSample {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Writes `path_id,u_delta,u_tilde,v`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_indexed_columns(
            path,
            &["path_id", "u_delta", "u_tilde", "v"],
            &[&self.u_delta, &self.u_tilde, &self.v],
        )
    }
}

/// Residuals of `z` after least squares on the normal scores of `x`.
fn regression_residuals(z: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let scores: Vec<f64> = ranks(x).iter().map(|r| norm_inv((r - 0.5) / n)).collect();
    let (ms, mz) = (mean(&scores), mean(z));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (s, v) in scores.iter().zip(z) {
        sxy += (s - ms) * (v - mz);
        sxx += (s - ms) * (s - ms);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    scores.iter().zip(z).map(|(s, v)| v - mz - slope * (s - ms)).collect()
}

pub fn build_coupled_sample(paths: &PathSet, copula: Copula, options: &KernelOptions) -> Result<CoupledSample> {
    let x = &paths.x_t;
    let z: Vec<f64> = if options.sdf_log_scale {
        paths.sdf_t.iter().map(|s| s.ln()).collect()
    } else {
        paths.sdf_t.clone()
    };
    let z = &z;
    let h_delta = resolve_bandwidth(x, options.h_delta, "h_delta")?;
    let h_sdf = match options.h_sdf {
        Some(h) => resolve_bandwidth(z, Some(h), "h_sdf")?,
        None => resolve_bandwidth(&regression_residuals(z, x), None, "h_sdf")? / CONDITIONAL_UNDERSMOOTH,
    };
    let h_x = match options.h_x {
        Some(h) => resolve_bandwidth(x, Some(h), "h_x")?,
        None => resolve_bandwidth(x, None, "h_x")? / CONDITIONAL_UNDERSMOOTH,
    };

    let u_delta: Vec<f64> = Kde::new(x, h_delta)?
        .cdf_many(x)
        .into_iter()
        .map(clamp_unit)
        .collect();
    let u_tilde: Vec<f64> = conditional_at_samples(z, x, h_sdf, h_x)?
        .into_iter()
        .map(clamp_unit)
        .collect();

    let v: Vec<f64> = match copula {
        Copula::Unspecified => Kde::new(z, resolve_bandwidth(z, options.h_sdf, "h_sdf")?)?
            .cdf_many(z)
            .into_iter()
            .map(|f| clamp_unit(1.0 - f))
            .collect(),
        c => u_delta
            .iter()
            .zip(&u_tilde)
            .map(|(&ud, &ut)| c.inv_conditional(1.0 - ut, ud).map(clamp_unit))
            .collect::<Result<_>>()?,
    };
    Ok(CoupledSample {
        u_delta,
        u_tilde,
        v,
        copula,
        h_delta,
        h_sdf,
        h_x,
        sdf_log_scale: options.sdf_log_scale,
    })
}

/// `ξ` sampled at grid midpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiFunction {
    pub values: Vec<f64>,
    /// Segment boundaries in (0,1), including 0 and 1.
    pub breaks: Vec<f64>,
    /// Logit-scale bandwidth used on each segment.
    pub bandwidths: Vec<f64>,
}

impl XiFunction {
    pub fn partition(&self) -> Partition {
        Partition::new(self.values.len()).expect("validated at construction")
    }

    pub fn mass(&self) -> f64 {
        self.partition().integrate(&self.values)
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Partition::new(values.len())?;
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::param("xi values must be finite and non-negative"));
        }
        Ok(Self {
            values,
            breaks: vec![0.0, 1.0],
            bandwidths: Vec::new(),
        })
    }

    /// Writes `u,xi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let us: Vec<f64> = self.partition().midpoints().collect();
        io::write_columns(path, &["u", "xi"], &[&us, &self.values])
    }
}

/// How `ξ` behaves at one end of a segment between support breaks.
#[derive(Debug, Clone, Copy, PartialEq)]
enum End {
    /// `ξ` runs off to zero or infinity; the coordinate is log-stretched.
    Tail,
    /// `ξ` stays positive and finite; the coordinate is linear there and
    /// the kernel is boundary-corrected.
    Flat,
}

/// Ends at 0 and 1 are tails. Below a CoIn threshold `V` is driven by the
/// conditional SDF rank, so `ξ` falls to zero there; above it `V = U^δ`.
fn segment_ends(copula: Copula, lo: f64, hi: f64) -> (End, End) {
    let kind = |b: f64, from_above: bool| match copula {
        Copula::CoIn { u_star } if b == u_star && from_above => End::Flat,
        _ => End::Tail,
    };
    (kind(lo, true), kind(hi, false))
}

/// Segment coordinate `t(w)` for `w ∈ (0,1)` and its derivative.
fn segment_coord(ends: (End, End), w: f64) -> (f64, f64) {
    let w = w.clamp(1e-12, 1.0 - 1e-12);
    match ends {
        (End::Flat, _) => (-(1.0 - w).ln(), 1.0 / (1.0 - w)),
        (_, End::Flat) => (-w.ln(), 1.0 / w),
        _ => (logit(w), 1.0 / (w * (1.0 - w))),
    }
}

/// Kernel estimate of `ξ(u) = E[ς_T | V = u]`, i.e. the density of `V`
/// weighted by `ς_T`. Each segment between the copula's support breaks is
/// smoothed separately in a coordinate that stretches its tail ends.
pub fn xi_estimate(
    paths: &PathSet,
    sample: &CoupledSample,
    partition: Partition,
    bandwidth_v: Option<f64>,
) -> Result<XiFunction> {
    if sample.len() != paths.len() {
        return Err(Error::Shape {
            expected: paths.len(),
            found: sample.len(),
        });
    }
    let n_total = paths.len() as f64;
    let mut breaks = vec![0.0];
    breaks.extend(sample.copula.support_breaks());
    breaks.push(1.0);

    let mut values = vec![0.0; partition.len()];
    let mut bandwidths = Vec::new();
    for seg in breaks.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let width = hi - lo;
        let ends = segment_ends(sample.copula, lo, hi);
        let flat = ends.0 == End::Flat || ends.1 == End::Flat;
        let to_y = |u: f64| segment_coord(ends, (u - lo) / width);
        let mut pts: Vec<(f64, f64)> = sample
            .v
            .iter()
            .zip(&paths.sdf_t)
            .filter(|(v, _)| **v >= lo && **v < hi)
            .map(|(v, s)| (to_y(*v).0, *s))
            .collect();
        if pts.len() < 2 {
            return Err(Error::Numeric(format!(
                "fewer than two coupling samples in ({lo}, {hi})"
            )));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ys: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let h = match bandwidth_v {
            Some(h) => {
                check_bandwidth(h, "h_v")?;
                h
            }
            None => {
                let mut h = 1.06 * std_dev(&ys) * (ys.len() as f64).powf(-0.2);
                if flat {
                    h /= FLAT_UNDERSMOOTH;
                }
                if !(h > 0.0) {
                    return Err(Error::Numeric("degenerate coupling sample".into()));
                }
                h
            }
        };
        bandwidths.push(h);
        let cells: Vec<usize> = (0..partition.len())
            .filter(|&i| {
                let u = partition.midpoint(i);
                u > lo && u < hi
            })
            .collect();
        let est: Vec<f64> = cells
            .par_iter()
            .map(|&i| {
                let u = partition.midpoint(i);
                let (y, jac) = to_y(u);
                let a = ys.partition_point(|t| *t < y - CUTOFF * h);
                let b = ys.partition_point(|t| *t <= y + CUTOFF * h);
                let window = &pts[a..b];
                let dens = if flat {
                    // Linear boundary kernel for data on t >= 0: weights
                    // (a2 - a1 x) φ(x) / (a0 a2 - a1²) with the moments of φ
                    // truncated at p = y/h.
                    let p = y / h;
                    let (a0, a1) = (norm_cdf(p), -norm_pdf(p));
                    let a2 = a0 - p * norm_pdf(p);
                    let det = a0 * a2 - a1 * a1;
                    window
                        .iter()
                        .map(|(t, s)| {
                            let x = (y - t) / h;
                            s * (a2 - a1 * x) * norm_pdf(x)
                        })
                        .sum::<f64>()
                        / det
                } else {
                    window.iter().map(|(t, s)| s * norm_pdf((y - t) / h)).sum::<f64>()
                };
                (dens / (n_total * h) * jac / width).max(0.0)
            })
            .collect();
        for (i, e) in cells.into_iter().zip(est) {
            values[i] = e;
        }
    }
    Ok(XiFunction {
        values,
        breaks,
        bandwidths,
    })
}

/// Benchmark quantile function `F̂⁻¹` at the grid midpoints, inverting the
/// kernel CDF of terminal wealth.
pub fn benchmark_quantile(paths: &PathSet, partition: Partition, bandwidth: Option<f64>) -> Result<QuantileGrid> {
    let h = resolve_bandwidth(&paths.x_t, bandwidth, "h_delta")?;
    quantile_from_sample(&paths.x_t, partition, h)
}

pub fn quantile_from_sample(sample: &[f64], partition: Partition, h: f64) -> Result<QuantileGrid> {
    let kde = Kde::new(sample, h)?;
    let us: Vec<f64> = partition.midpoints().collect();
    let mut q = kde.quantiles(&us);
    for i in 1..q.len() {
        if q[i] < q[i - 1] {
            q[i] = q[i - 1];
        }
    }
    QuantileGrid::new(q)
}
