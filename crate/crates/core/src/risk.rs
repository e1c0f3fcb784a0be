//! Distortion weights and the distortion risk measure on quantile grids.

use crate::error::{Error, Result};
use crate::quantile::{Partition, QuantileGrid};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    /// `alpha` and `beta` are the grid-snapped levels actually used.
    AlphaBeta { alpha: f64, beta: f64, p: f64 },
    InverseS { q: f64 },
    Custom,
}

/// A distortion weight γ sampled at grid midpoints, normalised so that its
/// midpoint integral is one.
#[derive(Debug, Clone)]
pub struct DistortionWeight {
    values: Vec<f64>,
    family: WeightFamily,
}

impl DistortionWeight {
    /// Wraps arbitrary non-negative weights, renormalising them.
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        Self::normalised(values, WeightFamily::Custom)
    }

    fn normalised(mut values: Vec<f64>, family: WeightFamily) -> Result<Self> {
        let partition = Partition::new(values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::param("distortion weights must be finite and non-negative"));
        }
        let total = partition.integrate(&values);
        if !(total > 0.0) {
            return Err(Error::param("distortion weight integrates to zero"));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(Self { values, family })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn partition(&self) -> Partition {
        Partition::new(self.values.len()).expect("validated at construction")
    }

    pub fn l2_norm(&self) -> f64 {
        let p = self.partition();
        p.inner(&self.values, &self.values).sqrt()
    }
}

/// The α-β weight `(p·1{u≤α} + (1-p)·1{u>β}) / η`. Both levels are snapped
/// to the nearest cell edge; `p = 1` gives TVaR_α and `p = 0` gives UTE_β.
pub fn gamma_alpha_beta(alpha: f64, beta: f64, p: f64, partition: Partition) -> Result<DistortionWeight> {
    if !(alpha > 0.0 && alpha <= beta && beta < 1.0) {
        return Err(Error::param(format!(
            "alpha-beta weight needs 0 < alpha <= beta < 1, got alpha={alpha}, beta={beta}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("p must lie in [0,1], got {p}")));
    }
    let (_, a) = partition.snap_to_edge(alpha);
    let (_, b) = partition.snap_to_edge(beta);
    let eta = p * a + (1.0 - p) * (1.0 - b);
    if !(eta > 0.0) {
        return Err(Error::param(format!(
            "alpha-beta weight degenerate on a {}-cell grid",
            partition.len()
        )));
    }
    let values = partition
        .midpoints()
        .map(|u| {
            let lower = if u <= a { p } else { 0.0 };
            let upper = if u > b { 1.0 - p } else { 0.0 };
            (lower + upper) / eta
        })
        .collect();
    DistortionWeight::normalised(values, WeightFamily::AlphaBeta { alpha: a, beta: b, p })
}

pub fn gamma_tvar(alpha: f64, partition: Partition) -> Result<DistortionWeight> {
    gamma_alpha_beta(alpha, alpha, 1.0, partition)
}

pub fn gamma_ute(beta: f64, partition: Partition) -> Result<DistortionWeight> {
    gamma_alpha_beta(beta, beta, 0.0, partition)
}

/// Derivative of the inverse-S probability weighting
/// `w(u) = u^q / (u^q + (1-u)^q)^{1/q}`.
pub fn inverse_s_density(q: f64, u: f64) -> f64 {
    let (a, b) = (u.powf(q), (1.0 - u).powf(q));
    let s = a + b;
    s.powf(-1.0 / q - 1.0) * u.powf(q - 1.0) * (q * s - a + u * b / (1.0 - u))
}

/// Inverse-S weight sampled at midpoints. The grid excludes 0 and 1, which
/// clips the integrable end singularities; the samples are renormalised.
pub fn gamma_inverse_s(q: f64, partition: Partition) -> Result<DistortionWeight> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::param(format!("inverse-S parameter must lie in (0,1), got {q}")));
    }
    let values = partition.midpoints().map(|u| inverse_s_density(q, u)).collect();
    DistortionWeight::normalised(values, WeightFamily::InverseS { q })
}

/// `R(g) = -∫ g(u) γ(u) du` by the midpoint rule.
pub fn risk_measure(g: &QuantileGrid, gamma: &DistortionWeight) -> Result<f64> {
    g.partition().check_len(gamma.values.len())?;
    Ok(-g.partition().inner(g.values(), &gamma.values))
}
