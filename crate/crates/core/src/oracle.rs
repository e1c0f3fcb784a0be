//! Semi-analytic `ξ(u)` for a constant-proportion benchmark in the GBM
//! market, used to validate the kernel pipeline.

use crate::copula::Copula;
use crate::error::{Error, Result};
use crate::estimate::XiFunction;
use crate::market::{GbmParams, Strategy};
use crate::quantile::Partition;
use crate::stats::{norm_cdf, norm_inv, norm_pdf};

const QUAD_TOL: f64 = 1e-10;
const MAX_DEPTH: u32 = 50;
const MIN_WIDTH: f64 = 1e-12;
/// Integration range in standard-normal units beyond the shifted mean.
const Z_SPAN: f64 = 12.0;

/// Directions and drift constants of the GBM terminal law. With
/// `Z₁ = ϑᵀW_T/√T` and `Z₂ = θᵀW_T/√T` independent standard normals,
/// `U^δ = Φ(Z₁)` and `Ũ = Φ(Z₂)`.
#[derive(Debug, Clone)]
pub struct GbmClosedForm {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub psi: f64,
    pub theta: Vec<f64>,
    pub vartheta: Vec<f64>,
    /// Log-drift of benchmark wealth, `r + δᵀ(μ - r) - Ψ²/2`.
    pub gamma: f64,
    /// Log-drift of the SDF with sign flipped, `r + λᵀρλ/2`.
    pub big_lambda: f64,
    pub rho: Vec<Vec<f64>>,
    pub horizon: f64,
    pub r: f64,
}

fn quad_form(a: &[f64], rho: &[Vec<f64>], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            s += a[i] * rho[i][j] * b[j];
        }
    }
    s
}

impl GbmClosedForm {
    pub fn new(params: &GbmParams, strategy: &Strategy) -> Result<Self> {
        let lambda = params.lambda()?;
        let n = params.n_assets();
        if strategy.delta.len() != n {
            return Err(Error::param(format!(
                "strategy has {} weights for {n} assets",
                strategy.delta.len()
            )));
        }
        let rho = params.rho.clone();
        let eta: Vec<f64> = (0..n).map(|i| strategy.delta[i] * params.sigma[i]).collect();
        let psi2 = quad_form(&eta, &rho, &eta);
        if !(psi2 > 0.0) {
            return Err(Error::param("benchmark carries no risk"));
        }
        let psi = psi2.sqrt();
        let lre = quad_form(&lambda, &rho, &eta);
        let lrl = quad_form(&lambda, &rho, &lambda);
        let kappa2 = lrl - lre * lre / psi2;
        if !(kappa2 > 1e-14) {
            return Err(Error::param(
                "SDF is a deterministic function of benchmark wealth",
            ));
        }
        let kappa = kappa2.sqrt();
        let theta = (0..n)
            .map(|i| (-lambda[i] + lre / psi2 * eta[i]) / kappa)
            .collect();
        let vartheta = eta.iter().map(|e| e / psi).collect();
        let excess: f64 = (0..n)
            .map(|i| strategy.delta[i] * (params.mu[i] - params.r))
            .sum();
        Ok(Self {
            gamma: params.r + excess - 0.5 * psi2,
            big_lambda: params.r + 0.5 * lrl,
            lambda,
            eta,
            psi,
            theta,
            vartheta,
            rho,
            horizon: params.horizon,
            r: params.r,
        })
    }

    /// `θᵀρλ√T`; negative, since the SDF rises with `Z₂`.
    pub fn c1(&self) -> f64 {
        quad_form(&self.theta, &self.rho, &self.lambda) * self.horizon.sqrt()
    }

    /// `ηᵀρλ√T / Ψ`, the downward shift of `Z₁` under the pricing measure.
    pub fn c2(&self) -> f64 {
        quad_form(&self.eta, &self.rho, &self.lambda) / self.psi * self.horizon.sqrt()
    }

    fn sdf_log_sd(&self) -> f64 {
        (quad_form(&self.lambda, &self.rho, &self.lambda) * self.horizon).sqrt()
    }
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    // Intervals this narrow hold a jump that sits within rounding of a cut;
    // their contribution is bounded by the width.
    if diff.abs() <= 15.0 * tol || b - a < MIN_WIDTH {
        return Ok(left + right + diff / 15.0);
    }
    if depth == 0 {
        return Err(Error::Numeric(format!(
            "quadrature did not converge on [{a}, {b}]"
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Pricing-measure distribution function of `V`:
/// `∫ Φ(Φ⁻¹(C(v|u)) - c₁) dΦ(Φ⁻¹(u) + c₂)`, integrated over `z = Φ⁻¹(u)`.
pub fn q_cdf_v(cf: &GbmClosedForm, copula: Copula, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::param(format!("v = {v} outside [0,1]")));
    }
    if matches!(copula, Copula::Unspecified) {
        return Err(Error::Unsupported(
            "the unspecified copula has no conditional law; use xi_analytic".into(),
        ));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    if v == 1.0 {
        return Ok(1.0);
    }
    let (c1, c2) = (cf.c1(), cf.c2());
    let integrand = |z: f64| -> f64 {
        let u = norm_cdf(z);
        if !(u > 0.0 && u < 1.0) {
            return 0.0;
        }
        let c = copula.conditional(v, u).expect("arguments checked");
        norm_cdf(norm_inv(c) - c1) * norm_pdf(z + c2)
    };
    let lo = -c2 - Z_SPAN;
    let hi = -c2 + Z_SPAN;
    let mut cuts = vec![lo];
    let mut breaks: Vec<f64> = copula.support_breaks();
    if matches!(copula, Copula::CoIn { .. } | Copula::Comonotonic) {
        breaks.push(v);
    }
    let mut zs: Vec<f64> = breaks
        .into_iter()
        .map(norm_inv)
        .filter(|z| *z > lo && *z < hi)
        .collect();
    zs.sort_by(f64::total_cmp);
    cuts.extend(zs);
    cuts.push(hi);
    let tol = QUAD_TOL / (cuts.len() - 1) as f64;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        // Keep evaluations strictly inside the panel so a jump at a cut is
        // seen from the correct side.
        let pad = 1e-9 * (w[1] - w[0]);
        let inside = |z: f64| integrand(z.clamp(w[0] + pad, w[1] - pad));
        total += adaptive_simpson(&inside, w[0], w[1], tol)?;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Step of the central difference used for `d/dv Q(V ≤ v)`.
const FD_STEP: f64 = 1e-5;

/// `ξ(u) = e^{-rT} d/du Q_T(V ≤ u)` at grid midpoints, by central
/// differences of [`q_cdf_v`]. For the unspecified copula it is the SDF
/// quantile `F⁻¹_ς(1 - u)`.
pub fn xi_analytic(cf: &GbmClosedForm, copula: Copula, partition: Partition) -> Result<XiFunction> {
    let disc = (-cf.r * cf.horizon).exp();
    let values = match copula {
        Copula::Unspecified => {
            let s = cf.sdf_log_sd();
            partition
                .midpoints()
                .map(|u| (-cf.big_lambda * cf.horizon + s * norm_inv(1.0 - u)).exp())
                .collect()
        }
        c => {
            let step = FD_STEP.min(0.25 * partition.du());
            partition
                .midpoints()
                .map(|u| {
                    let d = q_cdf_v(cf, c, u + step)? - q_cdf_v(cf, c, u - step)?;
                    Ok((disc * d / (2.0 * step)).max(0.0))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut xi = XiFunction::from_values(values)?;
    xi.breaks = std::iter::once(0.0)
        .chain(copula.support_breaks())
        .chain(std::iter::once(1.0))
        .collect();
    Ok(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b1() -> GbmClosedForm {
        let s = Strategy {
            delta: vec![0.25, 0.75],
            x0: 1.0,
        };
        GbmClosedForm::new(&GbmParams::lognormal_example(), &s).unwrap()
    }

    fn random_market(rng: &mut ChaCha8Rng) -> (GbmParams, Strategy) {
        let n = rng.random_range(2..=4);
        // Random correlation from normalised random factor loadings.
        let load: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut rho = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                rho[i][j] = (0..n).map(|k| load[i][k] * load[j][k]).sum::<f64>() + if i == j { 0.3 } else { 0.0 };
            }
        }
        let d: Vec<f64> = (0..n).map(|i| rho[i][i].sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                rho[i][j] /= d[i] * d[j];
            }
        }
        let p = GbmParams {
            mu: (0..n).map(|_| rng.random_range(0.0..0.12)).collect(),
            sigma: (0..n).map(|_| rng.random_range(0.05..0.4)).collect(),
            rho,
            r: rng.random_range(0.0..0.04),
            s0: vec![1.0; n],
            horizon: rng.random_range(0.5..10.0),
        };
        let s = Strategy {
            delta: (0..n).map(|_| rng.random_range(-0.5..1.0)).collect(),
            x0: 1.0,
        };
        (p, s)
    }

    #[test]
    fn orthonormality_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 100 {
            let (p, s) = random_market(&mut rng);
            let Ok(cf) = GbmClosedForm::new(&p, &s) else { continue };
            assert!((quad_form(&cf.theta, &cf.rho, &cf.theta) - 1.0).abs() < 1e-12);
            assert!((quad_form(&cf.vartheta, &cf.rho, &cf.vartheta) - 1.0).abs() < 1e-12);
            assert!(quad_form(&cf.eta, &cf.rho, &cf.theta).abs() < 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn endpoints_and_monotonicity() {
        let cf = b1();
        for c in [Copula::coin(0.25).unwrap(), Copula::gumbel(2.0).unwrap(), Copula::Independence] {
            assert_eq!(q_cdf_v(&cf, c, 0.0).unwrap(), 0.0);
            assert_eq!(q_cdf_v(&cf, c, 1.0).unwrap(), 1.0);
            let mut prev = 0.0;
            for i in 1..200 {
                let q = q_cdf_v(&cf, c, i as f64 / 200.0).unwrap();
                assert!(q >= prev - 1e-12, "{c:?}");
                prev = q;
            }
        }
    }

    #[test]
    fn independence_has_single_phi_form() {
        let cf = b1();
        for i in 1..20 {
            let v = i as f64 / 20.0;
            let want = norm_cdf(norm_inv(v) - cf.c1());
            assert!((q_cdf_v(&cf, Copula::Independence, v).unwrap() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn comonotonic_recovers_shifted_benchmark_rank() {
        // V = U^δ, whose pricing-measure law is Φ(Φ⁻¹(v) + c₂).
        let cf = b1();
        for i in 1..20 {
            let v = i as f64 / 20.0;
            let want = norm_cdf(norm_inv(v) + cf.c2());
            let got = q_cdf_v(&cf, Copula::Comonotonic, v).unwrap();
            assert!((got - want).abs() < 1e-8, "v={v} got={got} want={want}");
        }
    }

    #[test]
    fn coin_slope_changes_at_threshold() {
        let cf = b1();
        let c = Copula::coin(0.25).unwrap();
        let d = 1e-4;
        let q = |v: f64| q_cdf_v(&cf, c, v).unwrap();
        let left = (q(0.25) - q(0.25 - d)) / d;
        let right = (q(0.25 + d) - q(0.25)) / d;
        assert!((right - left).abs() > 0.1 * left.max(right), "left={left} right={right}");
    }

    #[test]
    fn xi_integrates_to_discount_factor() {
        // ∫ξ = e^{-rT}(Q(V ≤ 1) - Q(V ≤ 0)), so the law of V must be proper;
        // the grid values must reproduce its increments away from u = 0,
        // where ξ is singular.
        let cf = b1();
        let part = Partition::new(1000).unwrap();
        let disc = (-cf.r * cf.horizon).exp();
        for c in [
            Copula::coin(0.25).unwrap(),
            Copula::gumbel(2.0).unwrap(),
            Copula::Comonotonic,
        ] {
            assert!(q_cdf_v(&cf, c, 1e-9).unwrap() < 1e-4, "{c:?}");
            assert!(q_cdf_v(&cf, c, 1.0 - 1e-9).unwrap() > 1.0 - 1e-4, "{c:?}");
            let xi = xi_analytic(&cf, c, part).unwrap();
            assert!(xi.values.iter().all(|v| *v >= 0.0));
            let mid = xi.values[10..].iter().sum::<f64>() * part.du();
            let exact = disc * (1.0 - q_cdf_v(&cf, c, 0.01).unwrap());
            assert!((mid - exact).abs() < 1e-4, "{c:?} mid={mid} exact={exact}");
        }
    }

    #[test]
    fn simpson_integrates_polynomials_and_reports_failure() {
        let v = adaptive_simpson(&|x| x * x * x - x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let bad = adaptive_simpson(&|x: f64| if x > 0.3 { 1.0 / (x - 0.3) } else { 0.0 }, 0.0, 1e6, 1e-10);
        assert!(matches!(bad, Err(Error::Numeric(_))));
    }

    #[test]
    fn unspecified_matches_lognormal_quantile() {
        let cf = b1();
        let part = Partition::new(1000).unwrap();
        let xi = xi_analytic(&cf, Copula::Unspecified, part).unwrap();
        let s = cf.sdf_log_sd();
        for (i, u) in part.midpoints().enumerate() {
            let want = (-cf.big_lambda * cf.horizon + s * norm_inv(1.0 - u)).exp();
            assert!((xi.values[i] / want - 1.0).abs() < 1e-12, "u={u}");
        }
    }

    #[test]
    fn unspecified_is_rejected_by_cdf() {
        assert!(matches!(
            q_cdf_v(&b1(), Copula::Unspecified, 0.5),
            Err(Error::Unsupported(_))
        ));
    }
}
