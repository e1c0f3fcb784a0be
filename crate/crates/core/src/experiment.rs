//! Orchestration: simulate, estimate, optimise and write the artifacts.
//!
//! Each stage is exposed separately so that several optimisations can share
//! one simulation and one coupled sample.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelConfig, Radius};
use crate::copula::Copula;
use crate::error::{Error, ModuleContext, Result};
use crate::estimate::{benchmark_quantile, build_coupled_sample, xi_estimate, CoupledSample, XiFunction};
use crate::io;
use crate::market::{martingale_check, simulate_gbm, simulate_sir_cev, PathSet};
use crate::optimize::{glr, solve, OptimResult, Problem};
use crate::oracle::{xi_analytic, GbmClosedForm};
use crate::quantile::{epsilon_from_tolerances, mean_bounds, std_bounds, wasserstein, Partition, QuantileGrid};
use crate::risk::{gamma_alpha_beta, gamma_inverse_s, gamma_tvar, gamma_ute, risk_measure};
use crate::stats::silverman_bandwidth;

pub const SUMMARY_FILE: &str = "summary.json";
pub const PATHS_FILE: &str = "paths.csv";
pub const COUPLED_FILE: &str = "coupled_sample.csv";
pub const XI_FILE: &str = "xi.csv";
pub const G_STAR_FILE: &str = "g_star.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const TABLE_FILE: &str = "table.csv";

/// Oracle gate: sup relative error on this range of `u`.
pub const ORACLE_RANGE: (f64, f64) = (0.05, 0.95);
pub const ORACLE_TOLERANCE: f64 = 0.05;

/// One line of a comparison table. Returns are relative to the initial
/// wealth actually spent, `∫ g ξ` for an optimised payoff and `x₀` for the
/// benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub eps2: Option<f64>,
    pub risk: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub glr: f64,
}

/// The four measures reported for the benchmark alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeasures {
    pub tvar: f64,
    pub ute: f64,
    pub tvar_e: f64,
    pub inverse_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub eps: f64,
    pub wasserstein: f64,
    pub cost: f64,
    pub x0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub budget_binding: bool,
    pub iterations: usize,
    pub benchmark_risk: f64,
    pub benchmark_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h_delta: f64,
    pub h_sdf: Option<f64>,
    pub h_x: Option<f64>,
    /// One per segment of the `ξ` estimate.
    pub h_v: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub row: ReportRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkMeasures>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    pub bandwidths: Bandwidths,
    pub config: ExperimentConfig,
}

impl Summary {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn simulate(config: &ExperimentConfig) -> Result<PathSet> {
    let (n, seed) = (config.solver.paths(), config.solver.seed());
    match &config.model {
        ModelConfig::Gbm(p) => simulate_gbm(p, &config.strategy, n, config.n_steps(), seed),
        ModelConfig::SirCev(p) => simulate_sir_cev(p, &config.strategy, n, config.n_steps(), seed),
    }
    .module("market")
}

/// `F̂⁻¹` and the bandwidth it used.
pub fn benchmark(config: &ExperimentConfig, paths: &PathSet) -> Result<(QuantileGrid, f64)> {
    let part = Partition::new(config.solver.grid())?;
    let h = config.solver.h_delta.unwrap_or_else(|| silverman_bandwidth(&paths.x_t));
    let f = benchmark_quantile(paths, part, Some(h)).module("estimate")?;
    Ok((f, h))
}

pub fn coupling(config: &ExperimentConfig, paths: &PathSet) -> Result<(CoupledSample, XiFunction)> {
    let copula = config.copula()?;
    let options = config.solver.kernel_options();
    let sample = build_coupled_sample(paths, copula, &options).module("estimate")?;
    let part = Partition::new(config.solver.grid())?;
    let xi = xi_estimate(paths, &sample, part, config.solver.h_v).module("estimate")?;
    Ok((sample, xi))
}

/// Summary measures of the benchmark on the grid.
pub fn benchmark_measures(f: &QuantileGrid) -> Result<BenchmarkMeasures> {
    let p = f.partition();
    Ok(BenchmarkMeasures {
        tvar: risk_measure(f, &gamma_tvar(0.1, p)?)?,
        ute: risk_measure(f, &gamma_ute(0.9, p)?)?,
        tvar_e: risk_measure(f, &gamma_alpha_beta(0.1, 0.1, 0.75, p)?)?,
        inverse_s: risk_measure(f, &gamma_inverse_s(0.6, p)?)?,
    })
}

/// Mean and standard deviation of the return `g/x₀ - 1` and the gain-loss
/// ratio against the benchmark's expected return.
pub fn return_stats(g: &QuantileGrid, x0: f64, f: &QuantileGrid, x0_bench: f64) -> Result<(f64, f64, f64)> {
    Ok((
        g.integral() / x0 - 1.0,
        g.std_dev() / x0,
        glr(g.values(), f.values(), x0, x0_bench)?,
    ))
}

pub fn resolve_radius(radius: Radius, f: &QuantileGrid) -> Result<f64> {
    match radius {
        Radius::Fixed(e) => Ok(e),
        Radius::Tolerances { m_lower, s_upper } => epsilon_from_tolerances(f, m_lower, s_upper),
        Radius::Deviations { mean_tol, std_tol } => {
            epsilon_from_tolerances(f, f.integral() - mean_tol, f.std_dev() + std_tol)
        }
    }
    .module("quantile")
}

/// Solves one configured problem on shared estimates.
pub fn optimise(
    config: &ExperimentConfig,
    f: &QuantileGrid,
    xi: &XiFunction,
) -> Result<(OptimResult, ReportRow, Diagnostics)> {
    let risk = config
        .risk
        .ok_or_else(|| Error::Config("missing [risk] table".into()))?;
    let radius = config
        .solver
        .radius()?
        .ok_or_else(|| Error::Config("optimising needs eps, eps2 or a tolerance pair".into()))?;
    let eps = resolve_radius(radius, f)?;
    let gamma = risk.build(f.partition()).module("risk")?;
    let x0 = config.strategy.x0;
    let problem = Problem::new(f.clone(), gamma.clone(), xi.clone(), eps, x0, config.copula()?).module("optimize")?;
    let res = solve(&problem).module("optimize")?;
    let (mean, std, glr) = return_stats(&res.g_star, res.cost, f, x0).module("optimize")?;
    let row = ReportRow {
        label: config.label(),
        eps2: Some(eps * eps),
        risk: Some(res.risk),
        mean,
        std,
        glr,
    };
    let diag = Diagnostics {
        eps,
        wasserstein: res.wasserstein,
        cost: res.cost,
        x0,
        lambda1: res.lambda1,
        lambda2: res.lambda2,
        budget_binding: res.budget_binding,
        iterations: res.iterations,
        benchmark_risk: risk_measure(f, &gamma)?,
        benchmark_cost: problem.cost(f),
    };
    Ok((res, row, diag))
}

/// The full pipeline for one config. Without a `[risk]` table only the
/// benchmark is summarised.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    let paths = simulate(config)?;
    let (f, h_delta) = benchmark(config, &paths)?;
    let part = f.partition();
    let u: Vec<f64> = part.midpoints().collect();
    let mut resolved = config.resolved();
    resolved.solver.h_delta = Some(h_delta);

    if config.risk.is_none() {
        io::write_columns(&out.join(BENCHMARK_FILE), &["u", "f_inv"], &[&u, f.values()])?;
        let x0 = config.strategy.x0;
        let (mean, std, glr) = return_stats(&f, x0, &f, x0)?;
        let summary = Summary {
            row: ReportRow {
                label: config.label(),
                eps2: None,
                risk: None,
                mean,
                std,
                glr,
            },
            benchmark: Some(benchmark_measures(&f)?),
            diagnostics: None,
            bandwidths: Bandwidths {
                h_delta,
                h_sdf: None,
                h_x: None,
                h_v: Vec::new(),
            },
            config: resolved,
        };
        summary.write(out)?;
        return Ok(summary);
    }

    let (sample, xi) = coupling(config, &paths)?;
    let (res, row, diag) = optimise(config, &f, &xi)?;
    sample.write_csv(&out.join(COUPLED_FILE))?;
    xi.write_csv(&out.join(XI_FILE))?;
    io::write_columns(
        &out.join(G_STAR_FILE),
        &["u", "g_star", "f_inv"],
        &[&u, res.g_star.values(), f.values()],
    )?;
    resolved.solver.h_sdf = Some(sample.h_sdf);
    resolved.solver.h_x = Some(sample.h_x);
    let summary = Summary {
        row,
        benchmark: Some(benchmark_measures(&f)?),
        diagnostics: Some(diag),
        bandwidths: Bandwidths {
            h_delta,
            h_sdf: Some(sample.h_sdf),
            h_x: Some(sample.h_x),
            h_v: xi.bandwidths.clone(),
        },
        config: resolved,
    };
    summary.write(out)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// `(mean, standard error)` of each discounted asset price over its start.
    pub martingale: Vec<(f64, f64)>,
    pub config: ExperimentConfig,
}

pub fn run_simulate(config: &ExperimentConfig, out: &Path) -> Result<SimulationSummary> {
    fs::create_dir_all(out)?;
    let paths = simulate(config)?;
    paths.write_csv(&out.join(PATHS_FILE))?;
    let summary = SimulationSummary {
        n_paths: paths.len(),
        n_steps: paths.n_steps,
        seed: paths.seed,
        martingale: martingale_check(&paths),
        config: config.resolved(),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub eps: f64,
    pub mean: f64,
    pub std: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub std_lower: f64,
    pub std_upper: f64,
    /// Largest distance of an emitted extremal function from `F̂⁻¹`.
    pub max_distance: f64,
    pub config: ExperimentConfig,
}

/// Radius from a tolerance pair, with the extremal quantile functions of
/// the resulting ball. Each emitted function is checked to lie in the ball.
pub fn run_bounds(config: &ExperimentConfig, out: &Path) -> Result<BoundsReport> {
    let radius = match config.solver.radius()? {
        Some(r @ (Radius::Tolerances { .. } | Radius::Deviations { .. })) => r,
        _ => {
            return Err(Error::Config(
                "bounds needs (m_lower, s_upper) or (mean_tol, std_tol)".into(),
            ))
        }
    };
    fs::create_dir_all(out)?;
    let paths = simulate(config)?;
    let (f, h_delta) = benchmark(config, &paths)?;
    let eps = resolve_radius(radius, &f)?;
    let mb = mean_bounds(&f, eps).module("quantile")?;
    let sb = std_bounds(&f, eps, f.integral()).module("quantile")?;
    let mut max_distance: f64 = 0.0;
    for g in [&mb.g_lower, &mb.g_upper, &sb.g_lower, &sb.g_upper] {
        max_distance = max_distance.max(wasserstein(g, &f)?);
    }
    if max_distance > eps + 1e-10 {
        return Err(Error::Numeric(format!(
            "extremal function at distance {max_distance} leaves the ball of radius {eps}"
        )));
    }
    let u: Vec<f64> = f.partition().midpoints().collect();
    io::write_columns(
        &out.join(BOUNDS_FILE),
        &["u", "f_inv", "mean_lower", "mean_upper", "std_lower", "std_upper"],
        &[
            &u,
            f.values(),
            mb.g_lower.values(),
            mb.g_upper.values(),
            sb.g_lower.values(),
            sb.g_upper.values(),
        ],
    )?;
    let mut resolved = config.resolved();
    resolved.solver.h_delta = Some(h_delta);
    let report = BoundsReport {
        eps,
        mean: f.integral(),
        std: f.std_dev(),
        mean_lower: mb.lower,
        mean_upper: mb.upper,
        std_lower: sb.lower,
        std_upper: sb.upper,
        max_distance,
        config: resolved,
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub copula: String,
    pub sup_rel_err: f64,
    pub worst_u: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub config: ExperimentConfig,
}

/// Relative errors of `ξ̂` against the closed form at each midpoint.
pub fn compare_xi(estimate: &XiFunction, exact: &XiFunction) -> Vec<f64> {
    estimate
        .values
        .iter()
        .zip(&exact.values)
        .map(|(a, b)| ((a - b) / b).abs())
        .collect()
}

/// `(sup, argmax)` of the relative error over [`ORACLE_RANGE`].
pub fn sup_in_range(partition: Partition, rel_err: &[f64]) -> (f64, f64) {
    partition
        .midpoints()
        .zip(rel_err)
        .filter(|(u, _)| (ORACLE_RANGE.0..=ORACLE_RANGE.1).contains(u))
        .fold((0.0, f64::NAN), |(s, w), (u, e)| if *e > s || e.is_nan() { (*e, u) } else { (s, w) })
}

/// Compares `ξ̂` with the semi-analytic `ξ` of the lognormal market.
pub fn run_oracle_check(config: &ExperimentConfig, out: &Path) -> Result<OracleReport> {
    let ModelConfig::Gbm(params) = &config.model else {
        return Err(Error::Unsupported("the oracle check needs the lognormal (gbm) model".into()).in_module("oracle"));
    };
    let copula: Copula = config.copula()?;
    let cf = GbmClosedForm::new(params, &config.strategy).module("oracle")?;
    let part = Partition::new(config.solver.grid())?;
    let exact = xi_analytic(&cf, copula, part).module("oracle")?;
    fs::create_dir_all(out)?;
    let paths = simulate(config)?;
    let (_, xi) = coupling(config, &paths)?;
    let rel = compare_xi(&xi, &exact);
    let u: Vec<f64> = part.midpoints().collect();
    io::write_columns(
        &out.join(ORACLE_FILE),
        &["u", "xi_mc", "xi_analytic", "rel_err"],
        &[&u, &xi.values, &exact.values, &rel],
    )?;
    let (sup, worst) = sup_in_range(part, &rel);
    let report = OracleReport {
        copula: copula.label(),
        sup_rel_err: sup,
        worst_u: worst,
        tolerance: ORACLE_TOLERANCE,
        pass: sup <= ORACLE_TOLERANCE,
        config: config.resolved(),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Collects summary rows from files or directories holding a summary.
pub fn collect_rows(inputs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let direct = p.join(SUMMARY_FILE);
            if direct.is_file() {
                files.push(direct);
                continue;
            }
            let mut nested: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path().join(SUMMARY_FILE)))
                .filter(|f| f.is_file())
                .collect();
            nested.sort();
            files.extend(nested);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no summaries found".into()));
    }
    files.iter().map(|f| Summary::read(f).map(|s| s.row)).collect()
}

/// Writes `label,eps2,risk,mean,std,glr` with empty cells for missing values.
pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["label", "eps2", "risk", "mean", "std", "glr"])?;
    let opt = |x: Option<f64>| x.map(io::fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.label.clone(),
            opt(r.eps2),
            opt(r.risk),
            io::fmt_f64(r.mean),
            io::fmt_f64(r.std),
            io::fmt_f64(r.glr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table in the layout of the comparison tables.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = format!("{:<24} {:>8} {:>8} {:>8} {:>8} {:>6}\n", "", "eps^2", "R", "mean", "std", "GLR");
    for r in rows {
        let eps2 = r.eps2.map(|e| format!("{e:.0e}")).unwrap_or_else(|| "-".into());
        let risk = r.risk.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        s += &format!(
            "{:<24} {:>8} {:>8} {:>7.1}% {:>7.1}% {:>6.2}\n",
            r.label,
            eps2,
            risk,
            100.0 * r.mean,
            100.0 * r.std,
            r.glr
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn gbm_config(extra: &str, paths: usize) -> ExperimentConfig {
        let text = format!(
            r#"
[model]
kind = "gbm"
mu = [0.05, 0.06]
sigma = [0.1, 0.12]
rho = [[1.0, 0.25], [0.25, 1.0]]
r = 0.01
s0 = [1.0, 2.0]
horizon = 5.0

[strategy]
delta = [0.2, 0.6]
x0 = 1.0

[solver]
paths = {paths}
grid = 200
seed = 3
{extra}
"#
        );
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn benchmark_run_has_unit_glr() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&gbm_config("", 5000), dir.path()).unwrap();
        assert!((s.row.glr - 1.0).abs() < 1e-9);
        assert!(s.row.risk.is_none());
        let b = s.benchmark.unwrap();
        assert!(b.tvar > b.tvar_e && b.tvar_e > b.ute);
        assert!(dir.path().join(BENCHMARK_FILE).is_file());
    }

    #[test]
    fn optimised_run_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let extra = "eps2 = 1e-3\n[copula]\nkind = \"coin\"\nu_star = 0.25\n[risk]\nfamily = \"tvar\"\nalpha = 0.1\n";
        let cfg = gbm_config(extra, 5000);
        let s = run_experiment(&cfg, dir.path()).unwrap();
        let d = s.diagnostics.clone().unwrap();
        assert!((d.wasserstein - d.eps).abs() <= 1e-6 * d.eps);
        let (_, g_cols) = io::read_columns(&dir.path().join(G_STAR_FILE)).unwrap();
        let (_, xi_cols) = io::read_columns(&dir.path().join(XI_FILE)).unwrap();
        let g = QuantileGrid::new(g_cols[1].clone()).unwrap();
        let f = QuantileGrid::new(g_cols[2].clone()).unwrap();
        let gamma = cfg.risk.unwrap().build(g.partition()).unwrap();
        let cost = g.partition().inner(g.values(), &xi_cols[1]);
        assert!((risk_measure(&g, &gamma).unwrap() - s.row.risk.unwrap()).abs() <= 1e-9);
        assert!((wasserstein(&g, &f).unwrap() - d.wasserstein).abs() <= 1e-9);
        assert!((cost - d.cost).abs() <= 1e-9);
        let back = Summary::read(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(back.row, s.row);
        assert_eq!(back.config.solver.h_sdf, Some(s.bandwidths.h_sdf.unwrap()));
    }

    #[test]
    fn bounds_from_tolerances() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_bounds(&gbm_config("mean_tol = 0.01\nstd_tol = 0.01\n", 5000), dir.path()).unwrap();
        assert!((r.eps - 0.01).abs() < 1e-12);
        assert!(r.max_distance <= r.eps + 1e-10);
        assert!(r.mean_lower >= r.mean - 0.01 - 1e-12);
        assert!(r.std_upper <= r.std + 0.01 + 1e-12);
        let none = run_bounds(&gbm_config("eps = 0.1\n", 500), dir.path());
        assert!(matches!(none, Err(Error::Config(_))));
        let tight = gbm_config("m_lower = 0.0\ns_upper = 0.0\n", 500);
        assert!(run_bounds(&tight, dir.path()).is_err());
    }

    #[test]
    fn oracle_check_with_tiny_sample_fails_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = gbm_config("[copula]\nkind = \"gumbel\"\n", 100);
        let r = run_oracle_check(&cfg, dir.path()).unwrap();
        assert!(!r.pass);
        assert!(r.sup_rel_err > ORACLE_TOLERANCE);
        assert!((ORACLE_RANGE.0..=ORACLE_RANGE.1).contains(&r.worst_u));
    }

    #[test]
    fn oracle_check_rejects_sir_cev() {
        let text = r#"
[model]
kind = "sir_cev"
mu = [0.05, 0.06]
sigma = [0.2, 0.32]
beta = [-0.2, -0.3]
rho = [[1.0, 0.25, 0.2], [0.25, 1.0, 0.3], [0.2, 0.3, 1.0]]
s0 = [1.0, 2.0]
r0 = 0.02
kappa_p = 1.0
theta_p = 0.02
sigma_r = 0.02
kappa_q = 1.0
theta_q = 0.025
horizon = 5.0

[strategy]
delta = [0.2, 0.6, 0.1]
x0 = 1.0

[copula]
kind = "coin"
u_star = 0.25
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let err = run_oracle_check(&cfg, Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err.root(), Error::Unsupported(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ReportRow { label: "TVaR".into(), eps2: Some(1e-3), risk: Some(-0.67), mean: 0.311, std: 0.471, glr: 1.13 },
            ReportRow { label: "benchmark".into(), eps2: None, risk: None, mean: 0.289, std: 0.482, glr: 1.0 },
        ];
        let p = dir.path().join(TABLE_FILE);
        write_report(&rows, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("label,eps2,risk,mean,std,glr\n"));
        assert!(text.lines().nth(2).unwrap().starts_with("benchmark,,,"));
        assert!(format_report(&rows).contains("31.1%"));
    }
}
