//! The quantile-space problem: minimise a distortion risk measure over
//! non-decreasing `g` with `d₂(g, F⁻¹) ≤ ε` and `∫ g ξ ≤ x₀`.
//!
//! The solution is the isotonic projection of
//! `ℓ(u) = F⁻¹(u) + (γ(u) - λ₂ ξ(u)) / (2λ₁)`, with `λ₁` fixed by the
//! binding Wasserstein constraint and `λ₂ ≥ 0` by the budget.

use crate::copula::Copula;
use crate::error::{Error, Result};
use crate::estimate::{CoupledSample, XiFunction};
use crate::quantile::{isotonic_projection, wasserstein, QuantileGrid};
use crate::risk::{risk_measure, DistortionWeight};

/// Relative tolerance on both constraints.
pub const TOLERANCE: f64 = 1e-6;
const MAX_ITER: usize = 200;
const LAMBDA_MIN: f64 = 1e-10;
const LAMBDA_MAX: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct Problem {
    f: QuantileGrid,
    gamma: DistortionWeight,
    xi: XiFunction,
    eps: f64,
    x0: f64,
}

impl Problem {
    pub fn new(
        f: QuantileGrid,
        gamma: DistortionWeight,
        xi: XiFunction,
        eps: f64,
        x0: f64,
        copula: Copula,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param(format!("Wasserstein radius must be positive, got {eps}")));
        }
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::param(format!("budget must be positive, got {x0}")));
        }
        let part = f.partition();
        part.check_len(gamma.values().len())?;
        part.check_len(xi.values.len())?;
        if !f.is_monotone() {
            return Err(Error::param("benchmark quantile function is not monotone"));
        }
        if xi.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("ξ must be finite and non-negative"));
        }
        if matches!(copula, Copula::Comonotonic) {
            // With a comonotonic copula and γ ∝ ξ the objective is a multiple
            // of the budget and the problem has no unique solution.
            let mass = xi.mass();
            let dev = gamma
                .values()
                .iter()
                .zip(&xi.values)
                .map(|(g, x)| (g - x / mass).abs())
                .fold(0.0, f64::max);
            if !(dev > 1e-8) {
                return Err(Error::param(
                    "distortion weight is proportional to ξ under the comonotonic copula",
                ));
            }
        }
        Ok(Self { f, gamma, xi, eps, x0 })
    }

    pub fn f(&self) -> &QuantileGrid {
        &self.f
    }

    pub fn gamma(&self) -> &DistortionWeight {
        &self.gamma
    }

    pub fn xi(&self) -> &XiFunction {
        &self.xi
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// `∫ g ξ` by the midpoint rule.
    pub fn cost(&self, g: &QuantileGrid) -> f64 {
        g.partition().inner(g.values(), &self.xi.values)
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub g_star: QuantileGrid,
    /// Zero only when the radius is slack (see [`solve`]).
    pub lambda1: f64,
    pub lambda2: f64,
    pub wasserstein: f64,
    pub cost: f64,
    pub risk: f64,
    pub budget_binding: bool,
    /// Outer (budget) iterations; zero when the budget is slack at `λ₂ = 0`.
    pub iterations: usize,
}

pub fn ell(problem: &Problem, lambda1: f64, lambda2: f64) -> Result<QuantileGrid> {
    if !(lambda1 > 0.0) {
        return Err(Error::param(format!("lambda1 must be positive, got {lambda1}")));
    }
    if !(lambda2 >= 0.0) {
        return Err(Error::param(format!("lambda2 must be non-negative, got {lambda2}")));
    }
    let k = 0.5 / lambda1;
    let values = problem
        .f
        .values()
        .iter()
        .zip(problem.gamma.values())
        .zip(&problem.xi.values)
        .map(|((f, g), x)| f + k * (g - lambda2 * x))
        .collect();
    QuantileGrid::new(values)
}

fn project(problem: &Problem, lambda1: f64, lambda2: f64) -> Result<(QuantileGrid, f64)> {
    let g = isotonic_projection(&ell(problem, lambda1, lambda2)?);
    let d = wasserstein(&g, &problem.f)?;
    Ok((g, d))
}

enum Inner {
    Bound(f64, QuantileGrid),
    /// The projection never reaches the radius: `γ - λ₂ξ` projects to
    /// (almost) zero. Carries the payoff at the smallest `λ₁` tried, which
    /// lies inside the ball.
    Unreachable(QuantileGrid),
}

fn inner(problem: &Problem, lambda2: f64) -> Result<Inner> {
    let eps = problem.eps;
    let part = problem.f.partition();
    let h: Vec<f64> = problem
        .gamma
        .values()
        .iter()
        .zip(&problem.xi.values)
        .map(|(g, x)| g - lambda2 * x)
        .collect();
    let h_norm = part.inner(&h, &h).sqrt();
    if !(h_norm > 0.0) {
        return Ok(Inner::Unreachable(problem.f.clone()));
    }
    let scale = h_norm.max(1.0);
    // Scan downwards from the top: d rises as λ₁ falls.
    let mut hi = LAMBDA_MAX * scale;
    let (g_hi, d_hi) = project(problem, hi, lambda2)?;
    if d_hi >= eps {
        if (d_hi - eps).abs() <= TOLERANCE * eps {
            return Ok(Inner::Bound(hi, g_hi));
        }
        return Err(Error::Infeasible(format!(
            "radius {eps} is below the distance reached at λ₁ = {hi:e}"
        )));
    }
    let mut lo = hi;
    let mut g_lo = g_hi;
    loop {
        if lo <= LAMBDA_MIN * scale {
            return Ok(Inner::Unreachable(g_lo));
        }
        lo /= 10.0;
        let (g, d) = project(problem, lo, lambda2)?;
        if d >= eps {
            break;
        }
        hi = lo;
        g_lo = g;
    }
    for _ in 0..MAX_ITER {
        let mid = (lo * hi).sqrt();
        let (g, d) = project(problem, mid, lambda2)?;
        if (d - eps).abs() <= 0.1 * TOLERANCE * eps || hi / lo - 1.0 < 1e-15 {
            return Ok(Inner::Bound(mid, g));
        }
        if d > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numeric(format!(
        "λ₁ bisection did not reach the radius within {MAX_ITER} steps"
    )))
}

/// Finds `λ₁` with `d₂(ℓ↑, F⁻¹) = ε` for fixed `λ₂`, by a geometric scan
/// followed by bisection in `ln λ₁`. The distance is non-increasing in `λ₁`.
pub fn solve_lambda1(problem: &Problem, lambda2: f64) -> Result<(f64, QuantileGrid)> {
    match inner(problem, lambda2)? {
        Inner::Bound(l1, g) => Ok((l1, g)),
        Inner::Unreachable(_) => Err(Error::Infeasible(format!(
            "radius {} exceeds the largest distance reachable at λ₂ = {lambda2}",
            problem.eps
        ))),
    }
}

fn finish(problem: &Problem, lambda1: f64, lambda2: f64, g: QuantileGrid, iterations: usize) -> Result<OptimResult> {
    Ok(OptimResult {
        wasserstein: wasserstein(&g, &problem.f)?,
        cost: problem.cost(&g),
        risk: risk_measure(&g, &problem.gamma)?,
        budget_binding: lambda2 > 0.0,
        g_star: g,
        lambda1,
        lambda2,
        iterations,
    })
}

/// Outcome of one outer step: a solution meeting the budget, or which side
/// of it the cost lies on.
enum Step {
    Done,
    Above,
    Below,
}

fn outer_step(problem: &Problem, lambda2: f64) -> Result<(Step, f64, QuantileGrid)> {
    let x0 = problem.x0;
    let (l1, g) = match inner(problem, lambda2)? {
        Inner::Bound(l1, g) => (l1, g),
        Inner::Unreachable(g) => (0.0, g),
    };
    let cost = problem.cost(&g);
    let step = if l1 > 0.0 && (cost - x0).abs() <= TOLERANCE * x0 {
        Step::Done
    } else if cost > x0 {
        Step::Above
    } else {
        Step::Below
    };
    Ok((step, l1, g))
}

/// Solves the problem: `λ₂ = 0` if that already meets the budget, otherwise
/// a scan and bisection on `λ₂`, along which the cost is non-increasing.
///
/// The cost can jump across the budget at a single `λ₂`, where `γ - λ₂ξ`
/// projects to zero and the Lagrangian is flat along a face of the monotone
/// cone. Both one-sided solutions then minimise the same Lagrangian, so the
/// convex combination meeting the budget is optimal.
pub fn solve(problem: &Problem) -> Result<OptimResult> {
    let x0 = problem.x0;
    let (l1, g) = solve_lambda1(problem, 0.0)?;
    if problem.cost(&g) <= x0 {
        return finish(problem, l1, 0.0, g, 0);
    }
    // λ₂ is measured against the natural scale ∫γ / ∫ξ.
    let scale = 1.0 / problem.xi.mass().max(f64::MIN_POSITIVE);
    let mut lo = (0.0, l1, g);
    let mut hi_l2 = LAMBDA_MIN * scale;
    let mut iterations = 0;
    let mut hi = loop {
        iterations += 1;
        let (step, l1, g) = outer_step(problem, hi_l2)?;
        match step {
            Step::Done => return finish(problem, l1, hi_l2, g, iterations),
            Step::Below => break (hi_l2, l1, g),
            Step::Above => lo = (hi_l2, l1, g),
        }
        hi_l2 *= 10.0;
        if hi_l2 > LAMBDA_MAX * scale {
            return Err(Error::Infeasible(format!(
                "budget {x0} is below the cheapest cost reachable in the ball"
            )));
        }
    };
    for _ in 0..MAX_ITER {
        iterations += 1;
        if lo.0 > 0.0 && hi.0 / lo.0 - 1.0 < 1e-13 {
            return mix_across_jump(problem, lo, hi, iterations);
        }
        let mid = if lo.0 > 0.0 { (lo.0 * hi.0).sqrt() } else { 0.5 * hi.0 };
        let (step, l1, g) = outer_step(problem, mid)?;
        match step {
            Step::Done => return finish(problem, l1, mid, g, iterations),
            Step::Above => lo = (mid, l1, g),
            Step::Below => hi = (mid, l1, g),
        }
    }
    Err(Error::Numeric(format!(
        "λ₂ bisection did not meet the budget within {MAX_ITER} steps"
    )))
}

type Side = (f64, f64, QuantileGrid);

fn mix_across_jump(problem: &Problem, lo: Side, hi: Side, iterations: usize) -> Result<OptimResult> {
    let (c_lo, c_hi) = (problem.cost(&lo.2), problem.cost(&hi.2));
    // c_lo > x₀ ≥ c_hi by construction of the bracket.
    let t = ((c_lo - problem.x0) / (c_lo - c_hi)).clamp(0.0, 1.0);
    let g = QuantileGrid::new(
        lo.2.values()
            .iter()
            .zip(hi.2.values())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect(),
    )?;
    let lambda1 = if wasserstein(&g, &problem.f)? >= problem.eps * (1.0 - TOLERANCE) {
        (1.0 - t) * lo.1 + t * hi.1
    } else {
        0.0
    };
    finish(problem, lambda1, hi.0, g, iterations)
}

/// `X* = g*(V)`, interpolating the grid function monotonically.
pub fn optimal_terminal_sample(result: &OptimResult, sample: &CoupledSample) -> Vec<f64> {
    sample.v.iter().map(|&v| result.g_star.eval(v)).collect()
}

/// Gain-loss ratio of returns `X/x₀` about the benchmark's expected return.
pub fn glr(optimal: &[f64], benchmark: &[f64], x0_opt: f64, x0_bench: f64) -> Result<f64> {
    if optimal.is_empty() || benchmark.is_empty() {
        return Err(Error::DegenerateQuery("empty sample for the gain-loss ratio".into()));
    }
    let cutoff = benchmark.iter().map(|x| x / x0_bench).sum::<f64>() / benchmark.len() as f64;
    let (mut gain, mut loss) = (0.0, 0.0);
    for x in optimal {
        let d = x / x0_opt - cutoff;
        if d > 0.0 {
            gain += d;
        } else {
            loss -= d;
        }
    }
    if !(loss > 0.0) {
        return Err(Error::DegenerateQuery("no losses below the cutoff".into()));
    }
    Ok(gain / loss)
}
