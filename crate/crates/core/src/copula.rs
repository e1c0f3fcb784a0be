//! Bivariate copulas linking the optimal terminal wealth (first argument of
//! the conditional, `v`) to the benchmark's (conditioning argument, `u`).

use crate::error::{Error, Result};

const GUMBEL_TOL: f64 = 1e-10;
const GUMBEL_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Copula {
    /// Independent below `u_star`, comonotonic above.
    CoIn { u_star: f64 },
    Gumbel { theta: f64 },
    Comonotonic,
    Independence,
    /// No dependence constraint; only the optimisation treats this specially.
    Unspecified,
}

impl Copula {
    pub fn coin(u_star: f64) -> Result<Self> {
        if !(u_star > 0.0 && u_star < 1.0) {
            return Err(Error::param(format!("CoIn threshold must lie in (0,1), got {u_star}")));
        }
        Ok(Copula::CoIn { u_star })
    }

    pub fn gumbel(theta: f64) -> Result<Self> {
        if !(theta >= 1.0) || !theta.is_finite() {
            return Err(Error::param(format!("Gumbel theta must be >= 1, got {theta}")));
        }
        Ok(Copula::Gumbel { theta })
    }

    pub fn label(&self) -> String {
        match self {
            Copula::CoIn { u_star } => format!("CoIn({u_star})"),
            Copula::Gumbel { theta } => format!("Gumbel({theta})"),
            Copula::Comonotonic => "Comonotonic".into(),
            Copula::Independence => "Independence".into(),
            Copula::Unspecified => "Unspecified".into(),
        }
    }

    /// Points in (0,1) where the conditional law switches branch; the law
    /// of `V` is estimated separately on each side.
    pub fn support_breaks(&self) -> Vec<f64> {
        match self {
            Copula::CoIn { u_star } => vec![*u_star],
            _ => Vec::new(),
        }
    }

    fn unsupported(&self) -> Error {
        Error::Unsupported("the unspecified copula has no distribution function".into())
    }

    pub fn cdf(&self, u: f64, v: f64) -> Result<f64> {
        check_unit(u, "u")?;
        check_unit(v, "v")?;
        Ok(match *self {
            Copula::CoIn { u_star } => {
                u_star.min(u) * u_star.min(v) / u_star + (u.min(v) - u_star).max(0.0)
            }
            Copula::Gumbel { theta } => gumbel_cdf(theta, u, v),
            Copula::Comonotonic => u.min(v),
            Copula::Independence => u * v,
            Copula::Unspecified => return Err(self.unsupported()),
        })
    }

    /// Conditional distribution `C(v | u) = ∂C(u, v)/∂u`.
    pub fn conditional(&self, v: f64, u: f64) -> Result<f64> {
        check_unit(v, "v")?;
        check_open_unit(u)?;
        Ok(match *self {
            Copula::CoIn { u_star } => {
                if u <= u_star {
                    v.min(u_star) / u_star
                } else if u <= v {
                    1.0
                } else {
                    0.0
                }
            }
            Copula::Gumbel { theta } => gumbel_conditional(theta, v, u),
            Copula::Comonotonic => {
                if u <= v {
                    1.0
                } else {
                    0.0
                }
            }
            Copula::Independence => v,
            Copula::Unspecified => return Err(self.unsupported()),
        })
    }

    /// Generalised inverse `inf { v : C(v | u) >= x }`.
    pub fn inv_conditional(&self, x: f64, u: f64) -> Result<f64> {
        check_unit(x, "x")?;
        check_open_unit(u)?;
        Ok(match *self {
            Copula::CoIn { u_star } => {
                if u <= u_star {
                    x * u_star
                } else if x > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            Copula::Gumbel { theta } => gumbel_inv_conditional(theta, x, u),
            Copula::Comonotonic => {
                if x > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            Copula::Independence => x,
            Copula::Unspecified => return Err(self.unsupported()),
        })
    }
}

fn check_unit(x: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::param(format!("{name} = {x} outside [0,1]")));
    }
    Ok(())
}

fn check_open_unit(u: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::param(format!("conditioning value u = {u} outside (0,1)")));
    }
    Ok(())
}

fn gumbel_cdf(theta: f64, u: f64, v: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    let a = (-u.ln()).powf(theta);
    let b = (-v.ln()).powf(theta);
    (-(a + b).powf(1.0 / theta)).exp()
}

fn gumbel_conditional(theta: f64, v: f64, u: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    if v == 1.0 {
        return 1.0;
    }
    let lu = -u.ln();
    let a = lu.powf(theta);
    let b = (-v.ln()).powf(theta);
    let s = a + b;
    let c = (-s.powf(1.0 / theta)).exp();
    (c * s.powf(1.0 / theta - 1.0) * lu.powf(theta - 1.0) / u).clamp(0.0, 1.0)
}

fn gumbel_inv_conditional(theta: f64, x: f64, u: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..GUMBEL_MAX_ITER {
        if hi - lo <= GUMBEL_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gumbel_conditional(theta, mid, u) >= x {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_kinds() -> Vec<Copula> {
        vec![
            Copula::coin(0.25).unwrap(),
            Copula::coin(0.6).unwrap(),
            Copula::gumbel(1.0).unwrap(),
            Copula::gumbel(2.0).unwrap(),
            Copula::gumbel(4.5).unwrap(),
            Copula::Comonotonic,
            Copula::Independence,
        ]
    }

    #[test]
    fn coin_cdf_example() {
        let c = Copula::coin(0.25).unwrap();
        assert!((c.cdf(0.25, 0.25).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_margins() {
        for c in all_kinds() {
            for &u in &[0.0, 0.3, 1.0] {
                assert!((c.cdf(u, 1.0).unwrap() - u).abs() < 1e-14, "{c:?}");
                assert!((c.cdf(1.0, u).unwrap() - u).abs() < 1e-14, "{c:?}");
                assert_eq!(c.cdf(u, 0.0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn gumbel_one_is_independence() {
        let c = Copula::gumbel(1.0).unwrap();
        for i in 1..=10 {
            for j in 1..=10 {
                let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
                assert!((c.cdf(u, v).unwrap() - u * v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn conditional_examples() {
        let c = Copula::coin(0.25).unwrap();
        for &v in &[0.0, 0.1, 0.2, 0.25, 0.6, 1.0] {
            assert!((c.conditional(v, 0.1).unwrap() - v.min(0.25) / 0.25).abs() < 1e-15);
            assert_eq!(Copula::Independence.conditional(v, 0.7).unwrap(), v);
        }
        assert!(matches!(
            Copula::Unspecified.conditional(0.5, 0.5),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(Copula::Unspecified.cdf(0.5, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gumbel_conditional_matches_finite_difference() {
        for &theta in &[1.0, 1.5, 2.0, 3.0] {
            let c = Copula::gumbel(theta).unwrap();
            for i in 1..20 {
                for j in 1..20 {
                    let (u, v) = (i as f64 / 20.0, j as f64 / 20.0);
                    let h = 1e-5;
                    let fd = (c.cdf(u + h, v).unwrap() - c.cdf(u - h, v).unwrap()) / (2.0 * h);
                    let exact = c.conditional(v, u).unwrap();
                    assert!((fd - exact).abs() <= 1e-6, "theta={theta} u={u} v={v}");
                }
            }
        }
    }

    #[test]
    fn inverse_examples() {
        let c = Copula::coin(0.25).unwrap();
        assert_eq!(c.inv_conditional(0.7, 0.5).unwrap(), 0.5);
        assert_eq!(c.inv_conditional(0.0, 0.5).unwrap(), 0.0);
        assert!((c.inv_conditional(0.4, 0.2).unwrap() - 0.1).abs() < 1e-15);
        for &x in &[1e-9, 0.3, 1.0] {
            assert_eq!(Copula::Comonotonic.inv_conditional(x, 0.42).unwrap(), 0.42);
        }
    }

    #[test]
    fn gumbel_inverse_round_trip() {
        let c = Copula::gumbel(2.0).unwrap();
        for i in 1..=20 {
            for j in 1..=20 {
                let (v, u) = (i as f64 / 21.0, j as f64 / 21.0);
                let x = c.conditional(v, u).unwrap();
                let back = c.inv_conditional(x, u).unwrap();
                assert!((back - v).abs() <= 1e-8, "v={v} u={u} back={back}");
            }
        }
    }

    #[test]
    fn inverse_is_generalised_left_inverse_on_dense_grid() {
        for c in all_kinds() {
            for i in 1..50 {
                let u = i as f64 / 50.0;
                for j in 0..=40 {
                    let x = j as f64 / 40.0;
                    let v = c.inv_conditional(x, u).unwrap();
                    assert!(c.conditional(v, u).unwrap() >= x - 1e-9, "{c:?} u={u} x={x}");
                    if v > 1e-6 {
                        let below = (v - 1e-6).max(0.0);
                        assert!(c.conditional(below, u).unwrap() < x + 1e-9, "{c:?} u={u} x={x}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn two_increasing(u1 in 0.0f64..1.0, du in 0.0f64..1.0, v1 in 0.0f64..1.0, dv in 0.0f64..1.0) {
            let u2 = u1 + du * (1.0 - u1);
            let v2 = v1 + dv * (1.0 - v1);
            for c in all_kinds() {
                let vol = c.cdf(u2, v2).unwrap() - c.cdf(u1, v2).unwrap()
                    - c.cdf(u2, v1).unwrap() + c.cdf(u1, v1).unwrap();
                prop_assert!(vol >= -1e-12, "{:?}", c);
            }
        }

        #[test]
        fn conditional_is_non_decreasing(u in 0.001f64..0.999, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for c in all_kinds() {
                prop_assert!(c.conditional(lo, u).unwrap() <= c.conditional(hi, u).unwrap() + 1e-12);
            }
        }
    }
}
