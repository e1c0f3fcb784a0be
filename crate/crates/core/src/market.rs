//! Market models: simulation of benchmark terminal wealth and the terminal
//! stochastic discount factor.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

const MAX_RETRIES: u32 = 4;

/// Correlation matrix with its Cholesky factor and inverse.
#[derive(Debug, Clone)]
struct Correlation {
    dim: usize,
    chol: Vec<f64>,
    inv: Vec<f64>,
}

impl Correlation {
    fn new(rho: &[Vec<f64>], dim: usize) -> Result<Self> {
        if rho.len() != dim || rho.iter().any(|row| row.len() != dim) {
            return Err(Error::param(format!("correlation matrix must be {dim}x{dim}")));
        }
        for i in 0..dim {
            if (rho[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::param("correlation matrix needs a unit diagonal"));
            }
            for j in 0..dim {
                if (rho[i][j] - rho[j][i]).abs() > 1e-12 || !rho[i][j].is_finite() {
                    return Err(Error::param("correlation matrix must be symmetric"));
                }
            }
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| rho[i][j]);
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::param("correlation matrix is not positive definite"))?;
        let l = chol.l();
        let inv = chol.inverse();
        Ok(Self {
            dim,
            chol: (0..dim * dim).map(|k| l[(k / dim, k % dim)]).collect(),
            inv: (0..dim * dim).map(|k| inv[(k / dim, k % dim)]).collect(),
        })
    }

    /// Writes `L z` into `out`.
    fn correlate(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = (0..=i).map(|j| self.chol[i * self.dim + j] * z[j]).sum();
        }
    }

    /// Writes `ρ⁻¹ b` into `out` and returns `bᵀρ⁻¹b`.
    fn solve(&self, b: &[f64], out: &mut [f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.inv[i * self.dim + j] * b[j]).sum();
            quad += b[i] * out[i];
        }
        quad
    }
}

fn check_positive(xs: &[f64], name: &str) -> Result<()> {
    if xs.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::param(format!("{name} must be strictly positive")));
    }
    Ok(())
}

fn check_finite(xs: &[f64], name: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(format!("{name} must be finite")));
    }
    Ok(())
}

fn check_len(xs: &[f64], n: usize, name: &str) -> Result<()> {
    if xs.len() != n {
        return Err(Error::param(format!("{name} has {} entries, expected {n}", xs.len())));
    }
    Ok(())
}

/// Multi-asset Black-Scholes market with a constant short rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbmParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub r: f64,
    pub s0: Vec<f64>,
    pub horizon: f64,
}

impl GbmParams {
    pub fn lognormal_example() -> Self {
        Self {
            mu: vec![0.05, 0.06],
            sigma: vec![0.1, 0.12],
            rho: vec![vec![1.0, 0.25], vec![0.25, 1.0]],
            r: 0.01,
            s0: vec![1.0, 2.0],
            horizon: 5.0,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    fn correlation(&self) -> Result<Correlation> {
        let n = self.n_assets();
        if n == 0 {
            return Err(Error::param("market needs at least one asset"));
        }
        check_len(&self.sigma, n, "sigma")?;
        check_len(&self.s0, n, "s0")?;
        check_positive(&self.sigma, "sigma")?;
        check_positive(&self.s0, "s0")?;
        check_finite(&self.mu, "mu")?;
        if !self.r.is_finite() {
            return Err(Error::param("r must be finite"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::param("horizon must be positive"));
        }
        Correlation::new(&self.rho, n)
    }

    pub fn validate(&self) -> Result<()> {
        self.correlation().map(|_| ())
    }

    /// Market price of risk `λ = ρ⁻¹ (μ - r)/σ`.
    pub fn lambda(&self) -> Result<Vec<f64>> {
        let corr = self.correlation()?;
        let b: Vec<f64> = (0..self.n_assets())
            .map(|i| (self.mu[i] - self.r) / self.sigma[i])
            .collect();
        let mut out = vec![0.0; b.len()];
        corr.solve(&b, &mut out);
        Ok(out)
    }
}

/// Stochastic short rate with CEV equities and a zero-coupon bond maturing
/// at the horizon. The bond is the last asset and the last Brownian factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SirCevParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub s0: Vec<f64>,
    pub r0: f64,
    pub kappa_p: f64,
    pub theta_p: f64,
    pub sigma_r: f64,
    pub kappa_q: f64,
    pub theta_q: f64,
    pub horizon: f64,
}

impl SirCevParams {
    pub fn sir_cev_example() -> Self {
        Self {
            mu: vec![0.05, 0.06],
            sigma: vec![0.2, 0.32],
            beta: vec![-0.2, -0.3],
            rho: vec![
                vec![1.0, 0.25, 0.2],
                vec![0.25, 1.0, 0.3],
                vec![0.2, 0.3, 1.0],
            ],
            s0: vec![1.0, 2.0],
            r0: 0.02,
            kappa_p: 1.0,
            theta_p: 0.02,
            sigma_r: 0.02,
            kappa_q: 1.0,
            theta_q: 0.025,
            horizon: 5.0,
        }
    }

    pub fn n_equities(&self) -> usize {
        self.mu.len()
    }

    /// Equities plus the bond.
    pub fn n_assets(&self) -> usize {
        self.mu.len() + 1
    }

    pub fn a(&self) -> f64 {
        self.kappa_p * self.theta_p - self.kappa_q * self.theta_q
    }

    pub fn b(&self) -> f64 {
        self.kappa_p - self.kappa_q
    }

    /// Bond volatility loading `B_t = (1 - e^{-κ̂(T-t)})/κ̂`.
    pub fn bond_loading(&self, t: f64) -> f64 {
        let tau = (self.horizon - t).max(0.0);
        if self.kappa_q.abs() < 1e-12 {
            tau
        } else {
            (1.0 - (-self.kappa_q * tau).exp()) / self.kappa_q
        }
    }

    fn correlation(&self) -> Result<Correlation> {
        let n = self.n_equities();
        check_len(&self.sigma, n, "sigma")?;
        check_len(&self.beta, n, "beta")?;
        check_len(&self.s0, n, "s0")?;
        check_positive(&self.sigma, "sigma")?;
        check_positive(&self.s0, "s0")?;
        check_finite(&self.mu, "mu")?;
        check_finite(&self.beta, "beta")?;
        check_positive(&[self.sigma_r], "sigma_r")?;
        check_finite(
            &[self.r0, self.kappa_p, self.theta_p, self.kappa_q, self.theta_q],
            "rate parameters",
        )?;
        if !(self.horizon > 0.0) {
            return Err(Error::param("horizon must be positive"));
        }
        Correlation::new(&self.rho, self.n_assets())
    }

    pub fn validate(&self) -> Result<()> {
        self.correlation().map(|_| ())
    }

    /// Right-hand side `ρλ` at rate `r` and equity prices `s`.
    pub fn rho_lambda(&self, r: f64, s: &[f64]) -> Vec<f64> {
        let mut b: Vec<f64> = (0..self.n_equities())
            .map(|i| (self.mu[i] - r) / (self.sigma[i] * s[i].powf(self.beta[i])))
            .collect();
        b.push((self.a() - self.b() * r) / self.sigma_r);
        b
    }

    /// Market price of risk `λ` at rate `r` and equity prices `s`.
    pub fn lambda(&self, r: f64, s: &[f64]) -> Result<Vec<f64>> {
        let corr = self.correlation()?;
        let b = self.rho_lambda(r, s);
        let mut out = vec![0.0; b.len()];
        corr.solve(&b, &mut out);
        Ok(out)
    }
}

/// Constant-proportion strategy; the remainder sits in the bank account.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Strategy {
    pub delta: Vec<f64>,
    pub x0: f64,
}

impl Strategy {
    fn check(&self, n_assets: usize) -> Result<()> {
        check_len(&self.delta, n_assets, "strategy delta")?;
        check_finite(&self.delta, "strategy delta")?;
        if !(self.x0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::param(format!("initial wealth must be positive, got {}", self.x0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Gbm,
    SirCev,
}

/// Monte Carlo sample of benchmark terminal wealth and terminal SDF.
#[derive(Debug, Clone)]
pub struct PathSet {
    pub x_t: Vec<f64>,
    pub sdf_t: Vec<f64>,
    /// Terminal price of each asset, asset-major.
    pub assets_t: Vec<Vec<f64>>,
    pub s0: Vec<f64>,
    pub seed: u64,
    pub n_steps: usize,
    pub model: ModelTag,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.x_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_t.is_empty()
    }

    /// Writes `path_id,x_T,sdf_T`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_indexed_columns(path, &["path_id", "x_T", "sdf_T"], &[&self.x_t, &self.sdf_t])
    }

    fn from_rows(rows: Vec<PathRow>, s0: Vec<f64>, seed: u64, n_steps: usize, model: ModelTag) -> Result<Self> {
        let n_assets = s0.len();
        let mut x_t = Vec::with_capacity(rows.len());
        let mut sdf_t = Vec::with_capacity(rows.len());
        let mut assets_t = vec![Vec::with_capacity(rows.len()); n_assets];
        for (i, row) in rows.into_iter().enumerate() {
            if !(row.x > 0.0 && row.x.is_finite() && row.sdf > 0.0 && row.sdf.is_finite()) {
                return Err(Error::Simulation(format!(
                    "path {i}: non-positive or non-finite terminal value (x={}, sdf={})",
                    row.x, row.sdf
                )));
            }
            x_t.push(row.x);
            sdf_t.push(row.sdf);
            for (col, s) in assets_t.iter_mut().zip(row.assets) {
                col.push(s);
            }
        }
        Ok(Self {
            x_t,
            sdf_t,
            assets_t,
            s0,
            seed,
            n_steps,
            model,
        })
    }
}

struct PathRow {
    x: f64,
    sdf: f64,
    assets: Vec<f64>,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(Error::param(format!("need at least 2 paths, got {n_paths}")));
    }
    Ok(())
}

/// Closed-form terminal wealth, SDF and asset prices given the terminal
/// Brownian vector `w_t` (already correlated).
pub fn gbm_terminal(params: &GbmParams, strategy: &Strategy, lambda: &[f64], w_t: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = params.n_assets();
    let t = params.horizon;
    let eta: Vec<f64> = (0..n).map(|i| strategy.delta[i] * params.sigma[i]).collect();
    let mut psi2 = 0.0;
    let mut lrl = 0.0;
    for i in 0..n {
        for j in 0..n {
            psi2 += eta[i] * params.rho[i][j] * eta[j];
            lrl += lambda[i] * params.rho[i][j] * lambda[j];
        }
    }
    let excess: f64 = (0..n).map(|i| strategy.delta[i] * (params.mu[i] - params.r)).sum();
    let gamma = params.r + excess - 0.5 * psi2;
    let eta_w: f64 = (0..n).map(|i| eta[i] * w_t[i]).sum();
    let lam_w: f64 = (0..n).map(|i| lambda[i] * w_t[i]).sum();
    let x = strategy.x0 * (gamma * t + eta_w).exp();
    let sdf = (-(params.r + 0.5 * lrl) * t - lam_w).exp();
    let assets = (0..n)
        .map(|i| {
            let s = params.sigma[i];
            params.s0[i] * ((params.mu[i] - 0.5 * s * s) * t + s * w_t[i]).exp()
        })
        .collect();
    (x, sdf, assets)
}

/// Exact lognormal terminal law for constant proportions; `n_steps` is
/// recorded but not used.
pub fn simulate_gbm(
    params: &GbmParams,
    strategy: &Strategy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathSet> {
    let corr = params.correlation()?;
    strategy.check(params.n_assets())?;
    check_paths(n_paths)?;
    let lambda = params.lambda()?;
    let n = params.n_assets();
    let sqrt_t = params.horizon.sqrt();
    let rows: Vec<PathRow> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * sqrt_t).collect();
            let mut w = vec![0.0; n];
            corr.correlate(&z, &mut w);
            let (x, sdf, assets) = gbm_terminal(params, strategy, &lambda, &w);
            PathRow { x, sdf, assets }
        })
        .collect();
    PathSet::from_rows(rows, params.s0.clone(), seed, n_steps, ModelTag::Gbm)
}

/// Minimum number of steps: weekly monitoring.
pub fn min_sir_steps(horizon: f64) -> usize {
    (52.0 * horizon).ceil() as usize
}

pub fn default_sir_steps(horizon: f64) -> usize {
    (260.0 * horizon).ceil() as usize
}

struct SirStepper<'a> {
    p: &'a SirCevParams,
    strategy: &'a Strategy,
    corr: &'a Correlation,
    a: f64,
    b: f64,
}

impl SirStepper<'_> {
    /// One path with `n_steps` steps; `None` when a value leaves the
    /// positive reals.
    fn run(&self, rng: &mut ChaCha8Rng, n_steps: usize) -> Option<PathRow> {
        let p = self.p;
        let ne = p.n_equities();
        let d = ne + 1;
        let dt = p.horizon / n_steps as f64;
        let sq = dt.sqrt();
        let mut s = p.s0.clone();
        let mut bond = 1.0f64;
        let mut r = p.r0;
        let mut x = self.strategy.x0;
        let mut log_sdf = 0.0f64;
        let mut z = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut rl = vec![0.0; d];
        let mut lam = vec![0.0; d];
        let bank_share = 1.0 - self.strategy.delta.iter().sum::<f64>();
        for k in 0..n_steps {
            let t = k as f64 * dt;
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            self.corr.correlate(&z, &mut dw);
            dw.iter_mut().for_each(|w| *w *= sq);

            for i in 0..ne {
                rl[i] = (p.mu[i] - r) / (p.sigma[i] * s[i].powf(p.beta[i]));
            }
            rl[ne] = (self.a - self.b * r) / p.sigma_r;
            let quad = self.corr.solve(&rl, &mut lam);
            let lam_dw: f64 = lam.iter().zip(&dw).map(|(l, w)| l * w).sum();
            log_sdf += -(r + 0.5 * quad) * dt - lam_dw;

            let mut growth = 1.0 + bank_share * r * dt;
            for i in 0..ne {
                let v = p.sigma[i] * s[i].powf(p.beta[i]);
                let ratio = ((p.mu[i] - 0.5 * v * v) * dt + v * dw[i]).exp();
                s[i] *= ratio;
                growth += self.strategy.delta[i] * (ratio - 1.0);
            }
            let bl = p.bond_loading(t);
            let vb = p.sigma_r * bl;
            let ratio = (((1.0 + self.b * bl) * r - self.a * bl - 0.5 * vb * vb) * dt - vb * dw[ne]).exp();
            bond *= ratio;
            growth += self.strategy.delta[ne] * (ratio - 1.0);
            x *= growth;
            r += p.kappa_p * (p.theta_p - r) * dt + p.sigma_r * dw[ne];

            if !(x > 0.0 && x.is_finite()) || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return None;
            }
        }
        s.push(bond);
        Some(PathRow {
            x,
            sdf: log_sdf.exp(),
            assets: s,
        })
    }
}

/// Log-Euler for asset prices and the SDF, Euler for the short rate and
/// wealth. A path leaving the positive reals is redrawn with half the step
/// size, up to a bounded number of times.
pub fn simulate_sir_cev(
    params: &SirCevParams,
    strategy: &Strategy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathSet> {
    let corr = params.correlation()?;
    strategy.check(params.n_assets())?;
    check_paths(n_paths)?;
    let min_steps = min_sir_steps(params.horizon);
    if n_steps < min_steps {
        return Err(Error::param(format!(
            "need at least {min_steps} time steps (weekly), got {n_steps}"
        )));
    }
    let stepper = SirStepper {
        p: params,
        strategy,
        corr: &corr,
        a: params.a(),
        b: params.b(),
    };
    let rows: Result<Vec<PathRow>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut steps = n_steps;
            for _ in 0..=MAX_RETRIES {
                if let Some(row) = stepper.run(&mut rng, steps) {
                    return Ok(row);
                }
                steps *= 2;
            }
            Err(Error::Simulation(format!(
                "path {i} left the positive reals after {MAX_RETRIES} step halvings"
            )))
        })
        .collect();
    let mut s0 = params.s0.clone();
    s0.push(1.0);
    PathSet::from_rows(rows?, s0, seed, n_steps, ModelTag::SirCev)
}

/// Component-wise `(mean, standard error)` of `sdf_T · S_T^i / S_0^i`.
pub fn martingale_check(paths: &PathSet) -> Vec<(f64, f64)> {
    paths
        .assets_t
        .iter()
        .zip(&paths.s0)
        .map(|(col, s0)| {
            let v: Vec<f64> = col.iter().zip(&paths.sdf_t).map(|(s, z)| s * z / s0).collect();
            let m = crate::stats::mean(&v);
            (m, crate::stats::std_dev(&v) / (v.len() as f64).sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, std_dev};

    /// Gaussian elimination with partial pivoting, independent of nalgebra.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn b1_strategy() -> Strategy {
        Strategy {
            delta: vec![0.25, 0.75],
            x0: 1.0,
        }
    }

    fn b2_strategy() -> Strategy {
        Strategy {
            delta: vec![0.2, 0.6, 0.1],
            x0: 1.0,
        }
    }

    #[test]
    fn gbm_lambda_matches_elimination() {
        let p = GbmParams::lognormal_example();
        let rhs: Vec<f64> = (0..2).map(|i| (p.mu[i] - p.r) / p.sigma[i]).collect();
        let want = gauss_solve(p.rho.clone(), rhs);
        let got = p.lambda().unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn sir_lambda_matches_elimination() {
        let p = SirCevParams::sir_cev_example();
        let s = [0.8, 2.7];
        let r = 0.031;
        let rhs = p.rho_lambda(r, &s);
        let want = gauss_solve(p.rho.clone(), rhs);
        for (g, w) in p.lambda(r, &s).unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
        assert!((p.a() + 0.005).abs() < 1e-15);
        assert_eq!(p.b(), 0.0);
    }

    #[test]
    fn rejects_bad_correlation() {
        let mut p = GbmParams::lognormal_example();
        p.rho = vec![vec![1.0, 1.5], vec![1.5, 1.0]];
        assert!(matches!(
            simulate_gbm(&p, &b1_strategy(), 10, 1, 0),
            Err(Error::Parameter(_))
        ));
        let mut q = SirCevParams::sir_cev_example();
        q.rho[0][1] = 0.9;
        assert!(q.validate().is_err());
    }

    #[test]
    fn gbm_degenerate_volatility_is_deterministic() {
        let mut p = GbmParams::lognormal_example();
        p.sigma = vec![1e-9, 1e-9];
        let s = b1_strategy();
        let lambda = vec![0.0, 0.0];
        let want = (p.r + 0.25 * 0.04 + 0.75 * 0.05) * p.horizon;
        for w in [[0.0, 0.0], [1.3, -2.2]] {
            let (x, _, _) = gbm_terminal(&p, &s, &lambda, &w);
            assert!((x - want.exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn gbm_martingales_and_wealth() {
        let p = GbmParams::lognormal_example();
        let paths = simulate_gbm(&p, &b1_strategy(), 100_000, 1, 11).unwrap();
        for (m, se) in martingale_check(&paths) {
            assert!((m - 1.0).abs() <= 3.0 * se, "mean={m} se={se}");
        }
        let v: Vec<f64> = paths.x_t.iter().zip(&paths.sdf_t).map(|(x, z)| x * z).collect();
        let se = std_dev(&v) / (v.len() as f64).sqrt();
        assert!((mean(&v) - 1.0).abs() <= 3.0 * se);
    }

    #[test]
    fn reproducible_bitwise() {
        let p = SirCevParams::sir_cev_example();
        let a = simulate_sir_cev(&p, &b2_strategy(), 200, 260, 5).unwrap();
        let b = simulate_sir_cev(&p, &b2_strategy(), 200, 260, 5).unwrap();
        assert!(a.x_t.iter().zip(&b.x_t).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.sdf_t.iter().zip(&b.sdf_t).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = simulate_sir_cev(&p, &b2_strategy(), 200, 260, 6).unwrap();
        assert_ne!(a.x_t, c.x_t);
        // A path's draws do not depend on how many paths are simulated.
        let d = simulate_sir_cev(&p, &b2_strategy(), 50, 260, 5).unwrap();
        assert_eq!(&a.x_t[..50], &d.x_t[..]);
    }

    #[test]
    fn sir_requires_weekly_steps() {
        let p = SirCevParams::sir_cev_example();
        assert!(simulate_sir_cev(&p, &b2_strategy(), 10, 259, 0).is_err());
    }

    #[test]
    fn sir_no_risk_limit_follows_rate_ode() {
        let mut p = SirCevParams::sir_cev_example();
        p.sigma = vec![1e-12, 1e-12];
        p.sigma_r = 1e-12;
        p.r0 = 0.05;
        let s = Strategy {
            delta: vec![0.0, 0.0, 0.0],
            x0: 1.0,
        };
        let corr = p.correlation().unwrap();
        let stepper = SirStepper {
            p: &p,
            strategy: &s,
            corr: &corr,
            a: 0.0,
            b: 0.0,
        };
        let n = 1300;
        let row = stepper.run(&mut path_rng(1, 0), n).unwrap();
        // ∫ r dt for r' = κ(θ - r).
        let (k, th, t) = (p.kappa_p, p.theta_p, p.horizon);
        let integral = th * t + (p.r0 - th) * (1.0 - (-k * t).exp()) / k;
        assert!((row.x - integral.exp()).abs() < 1e-4, "x={}", row.x);
    }

    #[test]
    fn sir_with_flat_rate_and_zero_elasticity_matches_gbm() {
        let gp = GbmParams::lognormal_example();
        let sp = SirCevParams {
            mu: gp.mu.clone(),
            sigma: gp.sigma.clone(),
            beta: vec![0.0, 0.0],
            rho: vec![
                vec![1.0, 0.25, 0.0],
                vec![0.25, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            s0: gp.s0.clone(),
            r0: gp.r,
            kappa_p: 1.0,
            theta_p: gp.r,
            sigma_r: 1e-10,
            kappa_q: 1.0,
            theta_q: gp.r,
            horizon: gp.horizon,
        };
        let n = 40_000;
        let sir = simulate_sir_cev(
            &sp,
            &Strategy {
                delta: vec![0.25, 0.75, 0.0],
                x0: 1.0,
            },
            n,
            260,
            3,
        )
        .unwrap();
        let gbm = simulate_gbm(&gp, &b1_strategy(), n, 1, 4).unwrap();
        let se = (std_dev(&sir.x_t).powi(2) / n as f64 + std_dev(&gbm.x_t).powi(2) / n as f64).sqrt();
        assert!((mean(&sir.x_t) - mean(&gbm.x_t)).abs() <= 3.0 * se);
        let lsir: Vec<f64> = sir.x_t.iter().map(|x| x.ln()).collect();
        let lgbm: Vec<f64> = gbm.x_t.iter().map(|x| x.ln()).collect();
        assert!((std_dev(&lsir) / std_dev(&lgbm) - 1.0).abs() < 0.03);
        let ssir: Vec<f64> = sir.sdf_t.iter().map(|x| x.ln()).collect();
        let sgbm: Vec<f64> = gbm.sdf_t.iter().map(|x| x.ln()).collect();
        let se = (std_dev(&ssir).powi(2) / n as f64 + std_dev(&sgbm).powi(2) / n as f64).sqrt();
        assert!((mean(&ssir) - mean(&sgbm)).abs() <= 3.0 * se);
    }

    #[test]
    fn sir_martingales() {
        let p = SirCevParams::sir_cev_example();
        let paths = simulate_sir_cev(&p, &b2_strategy(), 20_000, 260, 21).unwrap();
        for (m, se) in martingale_check(&paths) {
            assert!((m - 1.0).abs() <= 3.0 * se, "mean={m} se={se}");
        }
        assert!(paths.sdf_t.iter().all(|z| *z > 0.0));
        assert!(paths.x_t.iter().all(|x| *x > 0.0));
    }
}
