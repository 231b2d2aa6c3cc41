//! Closed-form mixing-time bounds with labeled constants.

use std::f64::consts::SQRT_2;

/// Where a constant came from; carried into every report row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    UserSupplied,
    Fitted,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::UserSupplied => "user-supplied",
            Provenance::Fitted => "fitted",
        }
    }
}

/// Generic constants of the rate statements; none of them has a known value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    /// Exponential rate `lambda` (1/time).
    pub lambda: f64,
    /// Prefactor `C` of the regime bound.
    pub c_big: f64,
    /// `c` in the logarithmic lower bound.
    pub c_lower: f64,
    /// `C_p` in the scalar coupling bound.
    pub c_coupling: f64,
    /// Noise-smallness ratio in `(0, 1)` for the small-noise heat bound;
    /// the heat bound is skipped without it.
    pub lambda_noise: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseClass {
    Zero,
    Degenerate,
    DegenerateRegular,
    NonDegenerate,
}

impl NoiseClass {
    pub fn tag(&self) -> &'static str {
        match self {
            NoiseClass::Zero => "0",
            NoiseClass::Degenerate => "degenerate",
            NoiseClass::DegenerateRegular => "degenerate regular",
            NoiseClass::NonDegenerate => "non-degenerate",
        }
    }
}

/// Model quantities entering the bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub p: f64,
    pub dim: usize,
    pub noise: NoiseClass,
    /// `|x|_H` of the initial datum.
    pub x_norm: f64,
    /// `|B|_HS^2`.
    pub hs_norm_sq: f64,
    /// Squared inverse Poincaré constant; field models only.
    pub c0_sq: Option<f64>,
    /// `K_p(x)`; scalar models only.
    pub k_p: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundSide {
    Upper,
    Lower,
}

impl BoundSide {
    pub fn tag(&self) -> &'static str {
        match self {
            BoundSide::Upper => "upper",
            BoundSide::Lower => "lower",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundValue {
    pub name: &'static str,
    pub side: BoundSide,
    /// `None` when a precondition fails; `reason` says which.
    pub value: Option<f64>,
    pub reason: Option<String>,
    pub provenance: Provenance,
}

/// `(1/lambda) log(1/eps) + (1/lambda) log(C K_p(x))` for the scalar model.
pub fn scalar_coupling_upper(lambda: f64, c: f64, k_p: f64, eps: f64) -> f64 {
    ((1.0 / eps).ln() + (c * k_p).ln()) / lambda
}

/// Small-noise heat bound
/// `(1/c0^2) [log(|x| + |B|/(sqrt(2 (1 - lambda)) c0)) + log(1/eps)]`,
/// or `None` when `|B|^2 > lambda c0^2`.
pub fn heat_upper(x_norm: f64, hs_norm_sq: f64, c0_sq: f64, lambda_noise: f64, eps: f64) -> Option<f64> {
    if !(lambda_noise > 0.0 && lambda_noise < 1.0) || hs_norm_sq > lambda_noise * c0_sq {
        return None;
    }
    let c0 = c0_sq.sqrt();
    let b = hs_norm_sq.sqrt();
    let inner = x_norm + b / ((2.0 * (1.0 - lambda_noise)).sqrt() * c0);
    Some((inner.ln() + (1.0 / eps).ln()) / c0_sq)
}

/// `(1/lambda) log(c |x| / eps)`, clamped at 0.
pub fn log_lower(lambda: f64, c: f64, x_norm: f64, eps: f64) -> f64 {
    ((c * x_norm / eps).ln() / lambda).max(0.0)
}

/// `C + (1/lambda) log(1/eps)`.
pub fn log_upper(c: f64, lambda: f64, eps: f64) -> f64 {
    c + (1.0 / eps).ln() / lambda
}

/// `C eps^(-exponent)`.
pub fn power_upper(c: f64, exponent: f64, eps: f64) -> f64 {
    c * eps.powf(-exponent)
}

/// Smallest `t` in `[0, horizon]` with `C rate(t) <= eps` for a decreasing
/// `rate`, by bisection; `None` if the horizon is too short.
pub fn invert_rate(rate: impl Fn(f64) -> f64, c: f64, eps: f64, horizon: f64) -> Option<f64> {
    if c * rate(0.0) <= eps {
        return Some(0.0);
    }
    if c * rate(horizon) > eps {
        return None;
    }
    let (mut lo, mut hi) = (0.0, horizon);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if c * rate(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Some(hi)
}

/// Exponent `a` of the polynomial upper bound `C eps^(-a)` for the given
/// regime, or `None` when the bound is logarithmic.
pub fn polynomial_exponent(p: f64, dim: usize, noise: NoiseClass) -> Option<f64> {
    let d = dim as f64;
    let singular_lo = 1f64.max(2.0 * d / (d + 2.0));
    match noise {
        NoiseClass::NonDegenerate => None,
        _ if p > 2.0 => Some(p - 2.0),
        _ if p == 2.0 => None,
        NoiseClass::Zero if p >= singular_lo => None,
        NoiseClass::Degenerate if p > singular_lo && p >= SQRT_2 => Some(2.0),
        NoiseClass::Degenerate if p > singular_lo => Some(4.0 / (p * p)),
        // inverse of the t^(-p/(2-p)) rate
        _ => Some((2.0 - p) / p),
    }
}

/// Every bound applicable to `inputs` at level `eps`.
pub fn theoretical_bounds(inputs: &BoundInputs, consts: &BoundConstants, eps: f64) -> Vec<BoundValue> {
    let prov = consts.provenance;
    let mut out = Vec::new();
    if let Some(k_p) = inputs.k_p {
        out.push(BoundValue {
            name: "scalar-coupling",
            side: BoundSide::Upper,
            value: Some(scalar_coupling_upper(consts.lambda, consts.c_coupling, k_p, eps).max(0.0)),
            reason: None,
            provenance: prov,
        });
    }
    if inputs.p == 2.0 {
        if let Some(c0_sq) = inputs.c0_sq {
            let v = consts.lambda_noise.and_then(|ln| heat_upper(inputs.x_norm, inputs.hs_norm_sq, c0_sq, ln, eps));
            out.push(BoundValue {
                name: "heat-small-noise",
                side: BoundSide::Upper,
                reason: match consts.lambda_noise {
                    None => Some("lambda_noise not supplied".to_string()),
                    Some(ln) if v.is_none() => Some(format!(
                        "noise too large: |B|^2 = {} > lambda c0^2 = {}",
                        inputs.hs_norm_sq,
                        ln * c0_sq
                    )),
                    Some(_) => None,
                },
                value: v,
                provenance: prov,
            });
        }
    }
    let regime = match polynomial_exponent(inputs.p, inputs.dim, inputs.noise) {
        Some(a) => BoundValue {
            name: "regime-polynomial",
            side: BoundSide::Upper,
            value: Some(power_upper(consts.c_big, a, eps)),
            reason: None,
            provenance: prov,
        },
        None => BoundValue {
            name: "regime-logarithmic",
            side: BoundSide::Upper,
            value: Some(log_upper(consts.c_big, consts.lambda, eps)),
            reason: None,
            provenance: prov,
        },
    };
    out.push(regime);
    out.push(BoundValue {
        name: "log-lower",
        side: BoundSide::Lower,
        value: Some(log_lower(consts.lambda, consts.c_lower, inputs.x_norm, eps)),
        reason: None,
        provenance: prov,
    });
    out
}

/// Smallest `C` making `C eps^(-a) >= tau` at every measured pair.
pub fn fit_power_constant(eps: &[f64], tau: &[Option<f64>], exponent: f64) -> Option<f64> {
    eps.iter()
        .zip(tau)
        .filter_map(|(&e, t)| t.map(|t| t * e.powf(exponent)))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

/// Largest `c` making `(1/lambda) log(c |x| / eps) <= tau` at every measured pair.
pub fn fit_lower_constant(eps: &[f64], tau: &[Option<f64>], lambda: f64, x_norm: f64) -> Option<f64> {
    eps.iter()
        .zip(tau)
        .filter_map(|(&e, t)| t.map(|t| e * (lambda * t).exp() / x_norm))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

/// Constants fitted to measured mixing times so that every upper bound is at
/// least and the lower bound at most each finite `tau`.
///
/// `lambda` is the inverse slope of `tau` against `log(1/eps)`; `None` when
/// fewer than two times are finite or that slope is not positive.
pub fn fit_constants(inputs: &BoundInputs, eps: &[f64], tau: &[Option<f64>]) -> Option<BoundConstants> {
    let pairs: Vec<(f64, f64)> = eps.iter().zip(tau).filter_map(|(&e, t)| t.map(|t| (e, t))).collect();
    if pairs.len() < 2 {
        return None;
    }
    let x: Vec<f64> = pairs.iter().map(|p| (1.0 / p.0).ln()).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let slope = crate::stats::fit_line(&x, &y).ok()?.slope;
    if !(slope > 0.0) {
        return None;
    }
    let lambda = 1.0 / slope;
    let max = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(e, t)| f(e, t)).fold(f64::NEG_INFINITY, f64::max);
    let c_big = match polynomial_exponent(inputs.p, inputs.dim, inputs.noise) {
        Some(a) => fit_power_constant(eps, tau, a)?,
        None => max(&|e, t| t - (1.0 / e).ln() / lambda),
    };
    let c_lower = if inputs.x_norm > 0.0 {
        fit_lower_constant(eps, tau, lambda, inputs.x_norm)?
    } else {
        0.0
    };
    let c_coupling = match inputs.k_p {
        Some(k) if k > 0.0 => max(&|e, t| e * (lambda * t).exp() / k),
        _ => f64::NAN,
    };
    Some(BoundConstants {
        lambda,
        c_big,
        c_lower,
        c_coupling,
        lambda_noise: None,
        provenance: Provenance::Fitted,
    })
}
