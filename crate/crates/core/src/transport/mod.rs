//! Empirical Wasserstein distances: exact one-dimensional transport, exact
//! assignment for equal-size samples, coupling upper bounds, mean lower
//! bounds and the mixture (disintegration) inequality check.

pub mod assignment;
pub mod flow;

use crate::error::{Error, Result};

/// Default largest sample size accepted by [`wasserstein_assignment`].
pub const ASSIGNMENT_CAP: usize = 512;

/// Uniform empirical measure on `samples`.
///
/// Distances between states use `|x|^2 = weight * sum x_i^2`; pass the grid's
/// cell volume for the discrete `L^2(U)` norm, or 1 for Euclidean vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    pub samples: Vec<Vec<f64>>,
    pub weight: f64,
}

impl EmpiricalMeasure {
    pub fn new(samples: Vec<Vec<f64>>, weight: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientData("empirical measure needs at least one sample".into()));
        }
        let dim = samples[0].len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidParams("samples must share one dimension".into()));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("samples must be finite".into()));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidParams(format!("norm weight must be > 0, got {weight}")));
        }
        Ok(Self { samples, weight })
    }

    pub fn euclidean(samples: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(samples, 1.0)
    }

    /// Scalar samples as one-dimensional states.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::euclidean(values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (s * self.weight).sqrt()
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

fn check_r(r: f64) -> Result<()> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidParams(format!("transport order r must be >= 1, got {r}")));
    }
    Ok(())
}

fn check_compatible(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.dim() != b.dim() || a.weight != b.weight {
        return Err(Error::InvalidParams("measures live in different state spaces".into()));
    }
    Ok(())
}

/// Exact `W_r` between uniform empirical measures on the line.
pub fn wasserstein_1d(a: &[f64], b: &[f64], r: f64) -> Result<f64> {
    check_r(r)?;
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let s: f64 = x.iter().zip(&y).map(|(u, v)| (u - v).abs().powf(r)).sum();
    Ok((s / a.len() as f64).powf(1.0 / r))
}

fn cost_matrix(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for x in &a.samples {
        for y in &b.samples {
            c.push(a.distance(x, y).powf(r));
        }
    }
    c
}

/// Exact `W_r` between equal-size uniform measures by optimal assignment.
pub fn wasserstein_assignment(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64) -> Result<f64> {
    wasserstein_assignment_capped(a, b, r, ASSIGNMENT_CAP)
}

pub fn wasserstein_assignment_capped(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64, cap: usize) -> Result<f64> {
    check_r(r)?;
    check_compatible(a, b)?;
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() > cap {
        return Err(Error::CapExceeded { n: a.len(), cap });
    }
    let n = a.len();
    let (_, total) = assignment::solve(&cost_matrix(a, b, r), n);
    Ok((total.max(0.0) / n as f64).powf(1.0 / r))
}

/// `W_r` bound from the index pairing `(x_i, y_i)` of one coupling.
pub fn coupling_upper(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64) -> Result<f64> {
    check_r(r)?;
    check_compatible(a, b)?;
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let s: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| a.distance(x, y).powf(r)).sum();
    Ok((s / a.len() as f64).powf(1.0 / r))
}

/// `|mean(a) - mean(b)|`, a lower bound for every `W_r`, `r >= 1`.
pub fn mean_lower(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_compatible(a, b)?;
    Ok(a.distance(&a.mean(), &b.mean()))
}

/// Exact `W_r` between two finitely supported measures with given weights.
pub fn wasserstein_weighted(a: &EmpiricalMeasure, wa: &[f64], b: &EmpiricalMeasure, wb: &[f64], r: f64) -> Result<f64> {
    check_r(r)?;
    check_compatible(a, b)?;
    if wa.len() != a.len() || wb.len() != b.len() {
        return Err(Error::InvalidParams("one weight per support point required".into()));
    }
    for w in [wa, wb] {
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParams("weights must be non-negative".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSum(s));
        }
    }
    let c = flow::transport_cost(wa, wb, &cost_matrix(a, b, r));
    Ok(c.max(0.0).powf(1.0 / r))
}

/// Outcome of [`disintegration_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisintegrationReport {
    /// `W_r(x, sum_j w_j nu_j)`.
    pub lhs: f64,
    /// `sum_j w_j W_r(x, nu_j)`.
    pub rhs: f64,
    pub holds: bool,
    /// `sum_j w_j W_r(x, nu_j)^r`; `lhs^r` never exceeds it by joint convexity of `W_r^r`.
    pub rhs_power: f64,
    pub holds_power: bool,
}

/// Checks `W_r(x, sum_j w_j nu_j) <= sum_j w_j W_r(x, nu_j)` exactly on
/// finite supports, pooling the components into one weighted measure.
pub fn disintegration_check(x: &EmpiricalMeasure, components: &[EmpiricalMeasure], weights: &[f64], r: f64) -> Result<DisintegrationReport> {
    check_r(r)?;
    if components.is_empty() || components.len() != weights.len() {
        return Err(Error::InvalidParams("one weight per mixture component required".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParams("mixture weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::WeightSum(total));
    }
    let ux = vec![1.0 / x.len() as f64; x.len()];
    let mut pooled = Vec::new();
    let mut pooled_w = Vec::new();
    let mut rhs = 0.0;
    let mut rhs_power = 0.0;
    for (c, &w) in components.iter().zip(weights) {
        check_compatible(x, c)?;
        let uc = vec![1.0 / c.len() as f64; c.len()];
        let d = wasserstein_weighted(x, &ux, c, &uc, r)?;
        rhs += w * d;
        rhs_power += w * d.powf(r);
        pooled.extend(c.samples.iter().cloned());
        pooled_w.extend(std::iter::repeat_n(w / c.len() as f64, c.len()));
    }
    // renormalize away the rounding of the pooled weights
    let s: f64 = pooled_w.iter().sum();
    pooled_w.iter_mut().for_each(|v| *v /= s);
    let mix = EmpiricalMeasure::new(pooled, x.weight)?;
    let lhs = wasserstein_weighted(x, &ux, &mix, &pooled_w, r)?;
    Ok(DisintegrationReport {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
        rhs_power,
        holds_power: lhs.powf(r) <= rhs_power + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(wasserstein_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 2.0).unwrap(), 0.0);
        for r in [1.0, 2.0, 3.5] {
            assert!((wasserstein_1d(&[0.0], &[1.0], r).unwrap() - 1.0).abs() < 1e-15);
        }
        assert!((wasserstein_1d(&[0.0, 2.0], &[1.0, 3.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(wasserstein_1d(&[0.0], &[1.0, 2.0], 1.0), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn assignment_examples() {
        let a = EmpiricalMeasure::euclidean(vec![vec![0.0, 0.0]]).unwrap();
        let b = EmpiricalMeasure::euclidean(vec![vec![3.0, 4.0]]).unwrap();
        assert!((wasserstein_assignment(&a, &b, 2.0).unwrap() - 5.0).abs() < 1e-14);
        let x = EmpiricalMeasure::euclidean(vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let y = EmpiricalMeasure::euclidean(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(wasserstein_assignment(&x, &y, 2.0).unwrap(), 0.0);
        assert!(coupling_upper(&x, &y, 2.0).unwrap() > 0.9);
        let big = EmpiricalMeasure::from_scalars(&[0.0; 5]).unwrap();
        assert!(matches!(
            wasserstein_assignment_capped(&big, &big, 2.0, 4),
            Err(Error::CapExceeded { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn mean_lower_examples() {
        let a = EmpiricalMeasure::euclidean(vec![vec![1.0, 2.0]]).unwrap();
        let b = EmpiricalMeasure::euclidean(vec![vec![4.0, 6.0]]).unwrap();
        assert_eq!(mean_lower(&a, &a).unwrap(), 0.0);
        assert!((mean_lower(&a, &b).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn disintegration_degenerate_cases() {
        let x = EmpiricalMeasure::from_scalars(&[0.0, 1.0, 5.0]).unwrap();
        let c = EmpiricalMeasure::from_scalars(&[2.0, -1.0]).unwrap();
        let rep = disintegration_check(&x, std::slice::from_ref(&c), &[1.0], 2.0).unwrap();
        assert!((rep.lhs - rep.rhs).abs() < 1e-12 && rep.holds);
        let parts = [
            EmpiricalMeasure::from_scalars(&[0.0]).unwrap(),
            EmpiricalMeasure::from_scalars(&[1.0, 5.0]).unwrap(),
        ];
        let rep = disintegration_check(&x, &parts, &[1.0 / 3.0, 2.0 / 3.0], 1.0).unwrap();
        assert!(rep.lhs < 1e-12 && rep.holds);
        assert!(matches!(disintegration_check(&x, &parts, &[0.5, 0.6], 1.0), Err(Error::WeightSum(_))));
    }

    #[test]
    fn quadratic_mixture_inequality_can_fail() {
        // delta_0 against the even mixture of delta_0 and delta_2
        let x = EmpiricalMeasure::from_scalars(&[0.0]).unwrap();
        let parts = [
            EmpiricalMeasure::from_scalars(&[0.0]).unwrap(),
            EmpiricalMeasure::from_scalars(&[2.0]).unwrap(),
        ];
        let rep = disintegration_check(&x, &parts, &[0.5, 0.5], 2.0).unwrap();
        assert!((rep.lhs - 2f64.sqrt()).abs() < 1e-12);
        assert!((rep.rhs - 1.0).abs() < 1e-12);
        assert!(!rep.holds);
        assert!(rep.holds_power);
        assert!(disintegration_check(&x, &parts, &[0.5, 0.5], 1.0).unwrap().holds);
    }
}
