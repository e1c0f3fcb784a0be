//! Quantile functions sampled on a uniform midpoint grid of (0,1).
//!
//! All integrals over `u` use the midpoint rule on the same grid, so the
//! risk measure, the Wasserstein distance and the budget integral are
//! mutually consistent.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

/// Uniform partition of (0,1) into `m` cells, evaluated at midpoints
/// `u_i = (i - 1/2)/m`. The grid never touches 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    m: usize,
}

impl Partition {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::param(format!("grid needs at least 2 cells, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn du(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.m as f64
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.midpoint(i))
    }

    /// Nearest cell edge `k/m` to `x`, returned as `(k, k/m)`.
    pub fn snap_to_edge(&self, x: f64) -> (usize, f64) {
        let k = (x * self.m as f64).round().clamp(0.0, self.m as f64) as usize;
        (k, k as f64 / self.m as f64)
    }

    /// Midpoint-rule integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.du()
    }

    /// Midpoint-rule integral of a product of two grid functions.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.du()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if n != self.m {
            return Err(Error::Shape {
                expected: self.m,
                found: n,
            });
        }
        Ok(())
    }
}

/// A function on the midpoint grid; when `monotone` is set the values are
/// non-decreasing and the grid represents a quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    values: Vec<f64>,
    monotone: bool,
}

impl QuantileGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::param(format!(
                "grid needs at least 2 cells, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite grid value at cell {i}")));
        }
        let monotone = values.windows(2).all(|w| w[0] <= w[1]);
        Ok(Self { values, monotone })
    }

    /// Samples `f` at the midpoints of `partition`.
    pub fn from_fn(partition: Partition, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(partition.midpoints().map(f).collect())
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn partition(&self) -> Partition {
        Partition { m: self.m() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn integral(&self) -> f64 {
        self.partition().integrate(&self.values)
    }

    /// Standard deviation of the distribution whose quantile function this is.
    pub fn std_dev(&self) -> f64 {
        let m = self.integral();
        let ss: f64 = self.values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / self.m() as f64).sqrt()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + c).collect(),
            monotone: self.monotone,
        }
    }

    /// Piecewise-linear interpolation between midpoints, flat beyond the
    /// first and last midpoint. Preserves monotonicity.
    pub fn eval(&self, u: f64) -> f64 {
        let m = self.m();
        let pos = u * m as f64 - 0.5;
        if pos <= 0.0 {
            return self.values[0];
        }
        if pos >= (m - 1) as f64 {
            return self.values[m - 1];
        }
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub(crate) fn check_same(&self, other: &QuantileGrid) -> Result<()> {
        self.partition().check_len(other.m())
    }

    /// Writes `u,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let p = self.partition();
        let us: Vec<f64> = p.midpoints().collect();
        io::write_columns(path, &["u", "value"], &[&us, &self.values])
    }
}

/// 2-Wasserstein distance between two quantile grids.
pub fn wasserstein(g: &QuantileGrid, h: &QuantileGrid) -> Result<f64> {
    g.check_same(h)?;
    let ss: f64 = g
        .values
        .iter()
        .zip(&h.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss * g.partition().du()).sqrt())
}

/// L²-nearest non-decreasing grid function (pool-adjacent-violators with
/// uniform weights).
pub fn isotonic_projection(h: &QuantileGrid) -> QuantileGrid {
    QuantileGrid {
        values: pava(&h.values),
        monotone: true,
    }
}

/// Pool-adjacent-violators on equally weighted values.
pub(crate) fn pava(y: &[f64]) -> Vec<f64> {
    // (block sum, block count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        let mut sum = v;
        let mut count = 1usize;
        while let Some(&(ps, pc)) = blocks.last() {
            if ps / pc as f64 > sum / count as f64 {
                sum += ps;
                count += pc;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, count));
    }
    let mut out = Vec::with_capacity(y.len());
    for (sum, count) in blocks {
        let level = sum / count as f64;
        out.extend(std::iter::repeat_n(level, count));
    }
    out
}

/// Extremal means over the ε-ball and the quantile functions attaining them.
#[derive(Debug, Clone)]
pub struct MeanBounds {
    pub lower: f64,
    pub upper: f64,
    pub g_lower: QuantileGrid,
    pub g_upper: QuantileGrid,
}

pub fn mean_bounds(f: &QuantileGrid, eps: f64) -> Result<MeanBounds> {
    require_monotone(f)?;
    if !(eps > 0.0) {
        return Err(Error::param(format!("eps must be positive, got {eps}")));
    }
    let m = f.integral();
    Ok(MeanBounds {
        lower: m - eps,
        upper: m + eps,
        g_lower: f.shifted(-eps),
        g_upper: f.shifted(eps),
    })
}

/// Extremal standard deviations over the ε-ball at a fixed mean.
#[derive(Debug, Clone)]
pub struct StdBounds {
    pub lower: f64,
    pub upper: f64,
    pub g_lower: QuantileGrid,
    pub g_upper: QuantileGrid,
}

pub fn std_bounds(f: &QuantileGrid, eps: f64, m_target: f64) -> Result<StdBounds> {
    require_monotone(f)?;
    if !(eps > 0.0) {
        return Err(Error::param(format!("eps must be positive, got {eps}")));
    }
    let mean = f.integral();
    let dm = mean - m_target;
    if dm.abs() > eps {
        return Err(Error::param(format!(
            "target mean {m_target} outside [{}, {}]",
            mean - eps,
            mean + eps
        )));
    }
    let w = (eps * eps - dm * dm).max(0.0).sqrt();
    let s = f.std_dev();

    // Zero-mean, unit-std direction along which the spread is scaled.
    let shape: Vec<f64> = if s > 0.0 {
        f.values.iter().map(|v| (v - mean) / s).collect()
    } else {
        let p = f.partition();
        let raw: Vec<f64> = p.midpoints().map(|u| u - 0.5).collect();
        let sd = (p.inner(&raw, &raw)).sqrt();
        raw.into_iter().map(|r| r / sd).collect()
    };
    let affine = |scale: f64| -> QuantileGrid {
        QuantileGrid {
            values: shape.iter().map(|z| scale * z + m_target).collect(),
            monotone: true,
        }
    };

    let (lower, g_lower) = if s >= w {
        (s - w, affine(s - w))
    } else {
        (0.0, affine(0.0))
    };
    Ok(StdBounds {
        lower,
        upper: s + w,
        g_lower,
        g_upper: affine(s + w),
    })
}

/// Largest radius keeping the mean above `m_lower` and the standard
/// deviation below `s_upper` for every member of the ball.
pub fn epsilon_from_tolerances(f: &QuantileGrid, m_lower: f64, s_upper: f64) -> Result<f64> {
    require_monotone(f)?;
    let m = f.integral();
    let s = f.std_dev();
    if !(m_lower < m) {
        return Err(Error::param(format!(
            "mean tolerance {m_lower} must lie below the benchmark mean {m}"
        )));
    }
    if !(s_upper > s) {
        return Err(Error::param(format!(
            "std tolerance {s_upper} must exceed the benchmark std {s}"
        )));
    }
    Ok((m - m_lower).min(s_upper - s))
}

fn require_monotone(f: &QuantileGrid) -> Result<()> {
    if !f.is_monotone() {
        return Err(Error::param("benchmark quantile grid is not monotone"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(v: &[f64]) -> QuantileGrid {
        QuantileGrid::new(v.to_vec()).unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let g = grid(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(wasserstein(&g, &g).unwrap(), 0.0);
        let h = grid(&[1.0, 2.0, 3.0, 5.0]);
        assert!((wasserstein(&g, &h).unwrap() - 0.5).abs() < 1e-15);
        assert!((wasserstein(&g, &g.shifted(0.3)).unwrap() - 0.3).abs() < 1e-15);
        let short = grid(&[1.0, 2.0]);
        assert!(matches!(wasserstein(&g, &short), Err(Error::Shape { .. })));
    }

    #[test]
    fn projection_examples() {
        let up = grid(&[0.0, 1.0, 1.0, 4.0]);
        assert_eq!(isotonic_projection(&up), up);
        let p = isotonic_projection(&grid(&[2.0, 1.0]));
        assert_eq!(p.values(), &[1.5, 1.5]);
        assert!(p.is_monotone());
    }

    /// Brute-force isotonic regression: enumerate every tie pattern (which
    /// adjacent pairs share a level), fit block means, keep the feasible
    /// minimiser.
    fn brute_force_isotonic(y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 0u32..(1 << (n - 1)) {
            let mut fit = vec![0.0; n];
            let mut start = 0;
            for i in 0..n {
                let ends = i == n - 1 || mask & (1 << i) == 0;
                if ends {
                    let avg = y[start..=i].iter().sum::<f64>() / (i + 1 - start) as f64;
                    fit[start..=i].iter_mut().for_each(|v| *v = avg);
                    start = i + 1;
                }
            }
            if fit.windows(2).any(|w| w[0] > w[1] + 1e-15) {
                continue;
            }
            let loss: f64 = fit.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(l, _)| loss < *l) {
                best = Some((loss, fit));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn projection_matches_enumeration_on_small_integer_vectors() {
        let mut state = 7u64;
        for _ in 0..2000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let n = 2 + (state >> 60) as usize % 5;
            let y: Vec<f64> = (0..n)
                .map(|i| ((state >> (8 * i + 3)) % 5) as f64 - 2.0)
                .collect();
            let fast = pava(&y);
            let slow = brute_force_isotonic(&y);
            let gap: f64 = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(gap <= 1e-9, "y={y:?} fast={fast:?} slow={slow:?}");
        }
    }

    #[test]
    fn mean_bounds_examples() {
        let f = grid(&[0.5, 1.0, 1.5]);
        let b = mean_bounds(&f, 0.1).unwrap();
        assert!((b.lower - 0.9).abs() < 1e-15 && (b.upper - 1.1).abs() < 1e-15);
        assert!((wasserstein(&f, &b.g_upper).unwrap() - 0.1).abs() < 1e-15);
        let tiny = mean_bounds(&f, 1e-300).unwrap();
        assert_eq!((tiny.lower, tiny.upper), (1.0, 1.0));
        assert!(mean_bounds(&f, 0.0).is_err());
    }

    #[test]
    fn std_bounds_examples() {
        // Two cells at m ± s give std exactly s.
        let f = grid(&[0.5, 1.5]);
        assert!((f.std_dev() - 0.5).abs() < 1e-15);
        let b = std_bounds(&f, 0.1, 1.0).unwrap();
        assert!((b.lower - 0.4).abs() < 1e-12 && (b.upper - 0.6).abs() < 1e-12);
        assert!((b.g_upper.std_dev() - b.upper).abs() < 1e-10);

        // Spread smaller than the radius collapses the lower attainer.
        let narrow = grid(&[0.99, 1.01]);
        let b = std_bounds(&narrow, 0.1, 1.0).unwrap();
        assert_eq!(b.lower, 0.0);
        assert!(b.g_lower.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        assert!(std_bounds(&f, 0.1, 1.2).is_err());
    }

    #[test]
    fn epsilon_choice() {
        let f = grid(&[0.5, 1.5]);
        let eps = epsilon_from_tolerances(&f, 1.0 - 0.05, 0.5 + 0.2).unwrap();
        assert!((eps - 0.05).abs() < 1e-15);
        let mb = mean_bounds(&f, eps).unwrap();
        let sb = std_bounds(&f, eps, f.integral()).unwrap();
        assert!(mb.lower >= 0.95 - 1e-15 && sb.upper <= 0.7 + 1e-15);
        assert!(epsilon_from_tolerances(&f, 1.0, 0.7).is_err());
        assert!(epsilon_from_tolerances(&f, 0.9, 0.5).is_err());
    }

    fn arb_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 2..40)
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_mean_preserving(y in arb_vec()) {
            let h = QuantileGrid::new(y).unwrap();
            let p = isotonic_projection(&h);
            prop_assert!(p.is_monotone());
            let again = isotonic_projection(&p);
            prop_assert_eq!(again.values(), p.values());
            prop_assert!((p.integral() - h.integral()).abs() < 1e-12);
        }

        #[test]
        fn projection_is_a_contraction(y in arb_vec(), shift in -1.0f64..1.0, seed in 0u64..1000) {
            let n = y.len();
            let k: Vec<f64> = (0..n).map(|i| y[i] + shift * (((i as u64 + seed) * 2654435761) % 7) as f64 - 3.0).collect();
            let h = QuantileGrid::new(y).unwrap();
            let k = QuantileGrid::new(k).unwrap();
            let d_proj = wasserstein(&isotonic_projection(&h), &isotonic_projection(&k)).unwrap();
            prop_assert!(d_proj <= wasserstein(&h, &k).unwrap() + 1e-12);
        }

        #[test]
        fn wasserstein_is_symmetric(a in arb_vec()) {
            let b: Vec<f64> = a.iter().rev().cloned().collect();
            let a = QuantileGrid::new(a).unwrap();
            let b = QuantileGrid::new(b).unwrap();
            prop_assert_eq!(wasserstein(&a, &b).unwrap(), wasserstein(&b, &a).unwrap());
        }
    }
}
