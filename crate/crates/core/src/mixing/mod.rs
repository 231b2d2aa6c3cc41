//! Distance-to-equilibrium curves, mixing times and scaling-law fits.
//!
//! A curve estimates `t -> W_r(law of X_t^x, mu)` from an ensemble started at
//! `x` and a stationary reference sample. The true curve is non-increasing,
//! so the running minimum of the raw estimates is used as the envelope.

pub mod bounds;
pub mod stationary;
pub mod tables;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::field::NormTrace;
use crate::rng::{domain, RngStream};
use crate::stats::{fit_line, std_dev};
use crate::transport::{coupling_upper, mean_lower, wasserstein_1d, wasserstein_assignment, EmpiricalMeasure};

pub use bounds::{fit_constants, theoretical_bounds, BoundConstants, BoundInputs, BoundSide, BoundValue, NoiseClass, Provenance};
pub use stationary::{field_distance_curve, scalar_distance_curve, stationary_field_ensemble, StationaryEnsemble, StationaryOptions};
pub use tables::{rate_table, RateRow, RateTables};

/// Default number of bootstrap resamples per curve point.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceCurve {
    pub times: Vec<f64>,
    pub raw: Vec<f64>,
    /// Bootstrap standard error of each raw value.
    pub se: Vec<f64>,
    /// `envelope[i] = min(raw[..=i])`.
    pub envelope: Vec<f64>,
    /// `|mean(time-t sample) - mean(reference)|` on the same samples.
    pub mean_lower: Vec<f64>,
    /// Cost of the index pairing of the two samples, an upper bound for `raw`.
    pub coupling_upper: Vec<f64>,
}

impl DistanceCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn running_min(v: &[f64]) -> Vec<f64> {
    let mut m = f64::INFINITY;
    v.iter()
        .map(|&x| {
            m = m.min(x);
            m
        })
        .collect()
}

fn distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure, r: f64) -> Result<f64> {
    if a.dim() == 1 {
        let x: Vec<f64> = a.samples.iter().map(|s| s[0]).collect();
        let y: Vec<f64> = b.samples.iter().map(|s| s[0]).collect();
        Ok(wasserstein_1d(&x, &y, r)? * a.weight.sqrt())
    } else {
        wasserstein_assignment(a, b, r)
    }
}

fn resample(m: &EmpiricalMeasure, stream: &mut crate::rng::UniformStream) -> EmpiricalMeasure {
    let n = m.len();
    EmpiricalMeasure {
        samples: (0..n).map(|_| m.samples[stream.next_index(n)].clone()).collect(),
        weight: m.weight,
    }
}

/// Curve from per-time ensembles against one stationary reference.
///
/// Distances are exact: sorted transport for one-dimensional states and
/// optimal assignment otherwise. Point `i` is bootstrapped with its own
/// stream, so results do not depend on evaluation order.
pub fn curve_from_samples(
    times: &[f64],
    samples: &[EmpiricalMeasure],
    reference: &EmpiricalMeasure,
    r: f64,
    resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<DistanceCurve> {
    if times.len() != samples.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: samples.len(),
        });
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("curve times must be increasing".into()));
    }
    if reference.is_empty() {
        return Err(Error::MissingStationary);
    }
    let points = exec.try_map_indexed(times.len(), |i| {
        let a = &samples[i];
        let raw = distance(a, reference, r)?;
        let lower = mean_lower(a, reference)?;
        let upper = coupling_upper(a, reference, r)?;
        let mut u = RngStream::in_domain(seed, domain::BOOTSTRAP, i as u64).uniform();
        let mut boot = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            let ra = resample(a, &mut u);
            let rb = resample(reference, &mut u);
            boot.push(distance(&ra, &rb, r)?);
        }
        let se = if boot.len() > 1 { std_dev(&boot) } else { 0.0 };
        Ok::<_, Error>((raw, se, lower, upper))
    })?;
    let raw: Vec<f64> = points.iter().map(|p| p.0).collect();
    Ok(DistanceCurve {
        times: times.to_vec(),
        envelope: running_min(&raw),
        se: points.iter().map(|p| p.1).collect(),
        mean_lower: points.iter().map(|p| p.2).collect(),
        coupling_upper: points.iter().map(|p| p.3).collect(),
        raw,
    })
}

/// First time the envelope reaches `eps`, interpolating linearly between
/// grid times; `None` when it never does within the horizon.
pub fn mixing_time(curve: &DistanceCurve, eps: f64) -> Option<f64> {
    if !(eps > 0.0) || curve.is_empty() {
        return None;
    }
    let env = &curve.envelope;
    let i = env.iter().position(|&v| v <= eps)?;
    if i == 0 {
        return Some(curve.times[0]);
    }
    let (t0, t1) = (curve.times[i - 1], curve.times[i]);
    let (e0, e1) = (env[i - 1], env[i]);
    if e0 == e1 {
        return Some(t1);
    }
    Some(t0 + (e0 - eps) / (e0 - e1) * (t1 - t0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalingFamily {
    /// `tau = A eps^(-exponent)`.
    Polynomial,
    /// `tau = A + (1/lambda) log(1/eps)`.
    Logarithmic,
}

impl ScalingFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            ScalingFamily::Polynomial => "poly",
            ScalingFamily::Logarithmic => "log",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub family: ScalingFamily,
    /// Exponent (polynomial) or `1/lambda` (logarithmic).
    pub slope: f64,
    /// `log A` (polynomial) or `A` (logarithmic).
    pub intercept: f64,
    /// RMS relative error of the predicted mixing times.
    pub residual: f64,
    pub n: usize,
}

impl ScalingFit {
    pub fn predict(&self, eps: f64) -> f64 {
        let x = (1.0 / eps).ln();
        match self.family {
            ScalingFamily::Polynomial => (self.intercept + self.slope * x).exp(),
            ScalingFamily::Logarithmic => self.intercept + self.slope * x,
        }
    }
}

fn usable_pairs(eps: &[f64], tau: &[Option<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if eps.len() != tau.len() {
        return Err(Error::LengthMismatch {
            left: eps.len(),
            right: tau.len(),
        });
    }
    let (e, t): (Vec<f64>, Vec<f64>) = eps
        .iter()
        .zip(tau)
        .filter_map(|(&e, t)| t.filter(|t| *t > 0.0 && t.is_finite() && e > 0.0).map(|t| (e, t)))
        .unzip();
    let mut distinct = e.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable (eps, tau) pairs with distinct eps, need 4",
            distinct.len()
        )));
    }
    Ok((e, t))
}

/// Least-squares fit of one scaling family to `(eps, tau)` pairs.
/// Pairs with missing or non-positive `tau` are skipped.
pub fn fit_scaling(eps: &[f64], tau: &[Option<f64>], family: ScalingFamily) -> Result<ScalingFit> {
    let (e, t) = usable_pairs(eps, tau)?;
    let x: Vec<f64> = e.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = match family {
        ScalingFamily::Polynomial => t.iter().map(|t| t.ln()).collect(),
        ScalingFamily::Logarithmic => t.clone(),
    };
    let line = fit_line(&x, &y)?;
    let mut fit = ScalingFit {
        family,
        slope: line.slope,
        intercept: line.intercept,
        residual: 0.0,
        n: e.len(),
    };
    let ss: f64 = e
        .iter()
        .zip(&t)
        .map(|(&e, &t)| ((fit.predict(e) - t) / t).powi(2))
        .sum();
    fit.residual = (ss / e.len() as f64).sqrt();
    Ok(fit)
}

/// Both family fits and the preferred one, if either residual is at least
/// `ratio` times smaller than the other.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyComparison {
    pub polynomial: ScalingFit,
    pub logarithmic: ScalingFit,
    pub preferred: Option<ScalingFamily>,
}

pub const FAMILY_RATIO: f64 = 2.0;

pub fn compare_families(eps: &[f64], tau: &[Option<f64>]) -> Result<FamilyComparison> {
    let polynomial = fit_scaling(eps, tau, ScalingFamily::Polynomial)?;
    let logarithmic = fit_scaling(eps, tau, ScalingFamily::Logarithmic)?;
    let preferred = if polynomial.residual * FAMILY_RATIO <= logarithmic.residual {
        Some(ScalingFamily::Polynomial)
    } else if logarithmic.residual * FAMILY_RATIO <= polynomial.residual {
        Some(ScalingFamily::Logarithmic)
    } else {
        None
    };
    Ok(FamilyComparison {
        polynomial,
        logarithmic,
        preferred,
    })
}

/// Mixing times over an `eps` grid plus fits and bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport {
    pub eps_grid: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    pub horizon: f64,
    pub fit: Option<FamilyComparison>,
    /// One list of evaluated bounds per `eps`.
    pub bounds: Vec<Vec<BoundValue>>,
}

/// Mixing times for every `eps` on the grid, with family fits when enough
/// times are finite; bounds are attached when inputs are supplied.
pub fn mixing_report(curve: &DistanceCurve, eps_grid: &[f64], bounds: Option<(&BoundInputs, &BoundConstants)>) -> MixingReport {
    let tau: Vec<Option<f64>> = eps_grid.iter().map(|&e| mixing_time(curve, e)).collect();
    let fit = compare_families(eps_grid, &tau).ok();
    let bounds = eps_grid
        .iter()
        .map(|&e| bounds.map_or_else(Vec::new, |(inp, c)| theoretical_bounds(inp, c, e)))
        .collect();
    MixingReport {
        eps_grid: eps_grid.to_vec(),
        tau,
        horizon: curve.times.last().copied().unwrap_or(0.0),
        fit,
        bounds,
    }
}

/// Times where `envelope + 2 se < |u_t|`, with the shortfall.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundReport {
    pub violations: Vec<(f64, f64)>,
    /// Smallest `envelope + 2 se - |u_t|` over the grid.
    pub min_margin: f64,
    pub stationary_mean_norm: f64,
}

impl LowerBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that the deterministic norm `|u_t|` stays below the estimated
/// distance to equilibrium, allowing two standard errors.
pub fn lower_bound_curve(det: &NormTrace, curve: &DistanceCurve, stationary_mean_norm: f64) -> Result<LowerBoundReport> {
    if det.len() != curve.len() || det.times.iter().zip(&curve.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0)) {
        return Err(Error::MismatchedGrid("deterministic trace and curve use different times".into()));
    }
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for i in 0..curve.len() {
        let margin = curve.envelope[i] + 2.0 * curve.se[i] - det.l2[i];
        min_margin = min_margin.min(margin);
        if margin < 0.0 {
            violations.push((curve.times[i], margin));
        }
    }
    Ok(LowerBoundReport {
        violations,
        min_margin,
        stationary_mean_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(times: Vec<f64>, env: Vec<f64>) -> DistanceCurve {
        DistanceCurve {
            se: vec![0.0; times.len()],
            mean_lower: vec![0.0; times.len()],
            coupling_upper: env.clone(),
            raw: env.clone(),
            envelope: running_min(&env),
            times,
        }
    }

    #[test]
    fn mixing_time_examples() {
        let t: Vec<f64> = (0..=5000).map(|i| i as f64 * 1e-3).collect();
        let c = curve(t.clone(), t.iter().map(|t| (-t).exp()).collect());
        let tau = mixing_time(&c, (-3.0f64).exp()).unwrap();
        assert!((tau - 3.0).abs() < 1e-3);
        assert_eq!(mixing_time(&c, 2.0), Some(0.0));
        assert_eq!(mixing_time(&c, 1e-4), None);
    }

    #[test]
    fn mixing_time_monotone_in_eps() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let raw: Vec<f64> = t.iter().map(|t| (-t).exp() * (1.0 + 0.2 * (7.0 * t).sin())).collect();
        let c = curve(t, raw);
        assert!(c.envelope.windows(2).all(|w| w[1] <= w[0]));
        let mut prev = 0.0;
        for k in 0..30 {
            let eps = 1.0 * 0.85f64.powi(k);
            if let Some(tau) = mixing_time(&c, eps) {
                assert!(tau >= prev);
                prev = tau;
            }
        }
    }

    #[test]
    fn synthetic_scaling_fits() {
        let eps: Vec<f64> = (0..8).map(|i| 0.5 * 0.7f64.powi(i)).collect();
        let poly: Vec<Option<f64>> = eps.iter().map(|e| Some(5.0 * e.powi(-2))).collect();
        let f = fit_scaling(&eps, &poly, ScalingFamily::Polynomial).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-9);
        assert_eq!(compare_families(&eps, &poly).unwrap().preferred, Some(ScalingFamily::Polynomial));
        let log: Vec<Option<f64>> = eps.iter().map(|e| Some(3.0 * (1.0 / e).ln() + 1.0)).collect();
        let f = fit_scaling(&eps, &log, ScalingFamily::Logarithmic).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-9);
        assert_eq!(compare_families(&eps, &log).unwrap().preferred, Some(ScalingFamily::Logarithmic));
        let few = [Some(1.0), Some(2.0), None, Some(3.0)];
        assert!(matches!(
            fit_scaling(&eps[..4], &few, ScalingFamily::Polynomial),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn dirac_vs_reference_at_time_zero() {
        let reference = EmpiricalMeasure::from_scalars(&[-1.0, 0.5, 2.0, 0.0]).unwrap();
        let start = EmpiricalMeasure::from_scalars(&[1.5; 4]).unwrap();
        let c = curve_from_samples(&[0.0], &[start], &reference, 2.0, 20, 1, Execution::Sequential).unwrap();
        let direct = ([-1.0f64, 0.5, 2.0, 0.0].iter().map(|y| (1.5 - y).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((c.raw[0] - direct).abs() < 1e-14);
        assert!(c.mean_lower[0] <= c.raw[0] + 1e-12);
        assert!(c.raw[0] <= c.coupling_upper[0] + 1e-12);
    }

    #[test]
    fn curve_is_execution_independent() {
        let reference = EmpiricalMeasure::euclidean((0..12).map(|i| vec![i as f64 * 0.1, -(i as f64)]).collect()).unwrap();
        let samples: Vec<EmpiricalMeasure> = (0..4)
            .map(|k| EmpiricalMeasure::euclidean((0..12).map(|i| vec![(i * k) as f64 * 0.05, 1.0]).collect()).unwrap())
            .collect();
        let t = [0.0, 1.0, 2.0, 3.0];
        let a = curve_from_samples(&t, &samples, &reference, 2.0, 30, 4, Execution::Sequential).unwrap();
        let b = curve_from_samples(&t, &samples, &reference, 2.0, 30, 4, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lower_bound_checks() {
        let c = curve(vec![0.0, 1.0], vec![1.0, 0.4]);
        let det = NormTrace {
            times: vec![0.0, 1.0],
            l2: vec![0.9, 0.5],
            ..Default::default()
        };
        let rep = lower_bound_curve(&det, &c, 0.0).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert!((rep.violations[0].1 + 0.1).abs() < 1e-12);
        let bad = NormTrace {
            times: vec![0.0, 2.0],
            l2: vec![0.0, 0.0],
            ..Default::default()
        };
        assert!(lower_bound_curve(&bad, &c, 0.0).is_err());
    }
}
