//! The one-dimensional model `dX = -X^[p-1] dt + sigma dB`.
//!
//! Closed-form deterministic flow and extinction times, an adaptive
//! Dormand–Prince integrator used as the numerical check on them, the
//! split-step implicit SDE scheme, and the invariant density with its
//! quantile sampler.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::signed_power_unchecked;
use crate::quad;
use crate::rng::{domain, GaussianStream, RngStream};

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("exponent p must be > 1, got {p}")))
    }
}

/// Exact solution of `u' = -u^[p-1]`, `u(0) = x`.
pub fn ode_exact(x: f64, p: f64, t: f64) -> Result<f64> {
    check_p(p)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    if x == 0.0 || t == 0.0 {
        return Ok(x);
    }
    if p == 2.0 {
        return Ok(x * (-t).exp());
    }
    let base = 1.0 + (p - 2.0) * x.abs().powf(p - 2.0) * t;
    if base <= 0.0 {
        return Ok(0.0);
    }
    Ok(x / base.powf(1.0 / (p - 2.0)))
}

/// Finite extinction time `|x|^(2-p) / (2-p)` for `1 < p < 2`; `None` for `p >= 2`.
pub fn extinction_time(x: f64, p: f64) -> Result<Option<f64>> {
    check_p(p)?;
    if p >= 2.0 {
        return Ok(None);
    }
    if x == 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some(x.abs().powf(2.0 - p) / (2.0 - p)))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScalarTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub extinct_at: Option<f64>,
}

/// Relative size below which the adaptive integrator declares extinction.
const EXTINCTION_FRACTION: f64 = 1e-12;

/// Integrates `u' = -u^[p-1]` with an embedded Dormand–Prince 5(4) pair,
/// reporting `u` at each (non-decreasing) output time.
///
/// Steps that would change the sign of `u` or increase `|u|` are rejected;
/// for `p < 2` the solution is declared extinct once `|u|` falls below
/// `1e-12 |x|`, and the crossing time is recorded.
pub fn ode_integrate(x: f64, p: f64, times: &[f64], rel_tol: f64) -> Result<ScalarTrajectory> {
    check_p(p)?;
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Domain("output times must be non-negative and sorted".into()));
    }
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let f = |u: f64| -signed_power_unchecked(u, p - 1.0);
    let atol = 1e-15 * x.abs();
    let mut traj = ScalarTrajectory::default();
    let mut t = 0.0;
    let mut u = x;
    let mut h = 1e-3 * (1.0 + x.abs()).recip();
    let mut extinct = x == 0.0 && p < 2.0;
    if extinct {
        traj.extinct_at = Some(0.0);
    }
    let mut k1 = f(u);
    for &target in times {
        while !extinct && t < target {
            let step = h.min(target - t);
            let k2 = f(u + step * A21 * k1);
            let k3 = f(u + step * (A31 * k1 + A32 * k2));
            let k4 = f(u + step * (A41 * k1 + A42 * k2 + A43 * k3));
            let k5 = f(u + step * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4));
            let k6 = f(u + step * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5));
            let u5 = u + step * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
            if !u5.is_finite() {
                return Err(Error::NumericalBlowup {
                    time: t,
                    detail: "non-finite Runge–Kutta stage".into(),
                });
            }
            if u5 * u < 0.0 || u5.abs() > u.abs() {
                h = step * 0.25;
                continue;
            }
            let k7 = f(u5);
            let err = (step * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).abs();
            let tol = rel_tol * u.abs().max(u5.abs()) + atol;
            if err <= tol {
                t += step;
                u = u5;
                k1 = k7;
                if p < 2.0 && u.abs() <= EXTINCTION_FRACTION * x.abs() {
                    extinct = true;
                    traj.extinct_at = Some(t);
                    u = 0.0;
                }
            }
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
            };
            h = step * fac;
            if h < 1e-14 * (1.0 + t) {
                // cannot resolve further: treat as the extinction singularity
                if p < 2.0 {
                    extinct = true;
                    traj.extinct_at = Some(t);
                    u = 0.0;
                } else {
                    return Err(Error::StepFailure {
                        time: t,
                        sweeps: 0,
                        residual: err,
                    });
                }
            }
        }
        traj.times.push(target);
        traj.values.push(if extinct { 0.0 } else { u });
    }
    Ok(traj)
}

/// Solves `z + dt z^[q] = y` for `z` (`q = p - 1 > 0`).
///
/// The left side is strictly increasing, so the root lies between 0 and `y`.
/// Safeguarded Newton iteration with a shrinking bracket; `q = 1` is solved
/// in closed form.
pub fn implicit_drift_step(y: f64, q: f64, dt: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        return y / (1.0 + dt);
    }
    let s = y.signum();
    let a = y.abs();
    let g = |z: f64| z + dt * z.powf(q) - a;
    let (mut lo, mut hi) = (0.0_f64, a);
    // convex for q >= 1: Newton from the right decreases monotonically
    let mut z = if q >= 1.0 {
        a
    } else {
        // concave: start left of the root from the small-z and large-z asymptotes
        a.min((a / dt).powf(1.0 / q)) * 0.5
    };
    for _ in 0..200 {
        let gz = g(z);
        if gz > 0.0 {
            hi = hi.min(z);
        } else {
            lo = lo.max(z);
        }
        if gz == 0.0 || hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
        let dg = 1.0 + dt * q * z.powf(q - 1.0);
        let mut next = z - gz / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 0.5 * f64::EPSILON * z {
            z = next;
            break;
        }
        z = next;
    }
    s * z
}

/// Step-wise integrator for one sample path.
#[derive(Clone)]
struct ScalarPath {
    q: f64,
    dt: f64,
    noise_scale: f64,
    state: f64,
}

impl ScalarPath {
    fn advance(&mut self, xi: f64) {
        let y = self.state + self.noise_scale * self.dt.sqrt() * xi;
        self.state = implicit_drift_step(y, self.q, self.dt);
    }
}

/// Scalar model configuration: exponent, time step and noise intensity
/// (`1` for the standard model, `0` for the deterministic flow).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarModel {
    pub p: f64,
    pub dt: f64,
    pub noise_scale: f64,
}

impl ScalarModel {
    pub fn new(p: f64, dt: f64) -> Self {
        Self {
            p,
            dt,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if !(self.dt > 0.0) {
            return Err(Error::Domain(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Domain("noise scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of steps of size `dt` nearest to time `t`.
    pub fn steps_for(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    /// Runs one path from step `start_step` (state `x`) for `steps` steps,
    /// calling `observe(step_index, state)` after each one.
    pub fn run_path(
        &self,
        x: f64,
        start_step: u64,
        steps: u64,
        stream: RngStream,
        mut observe: impl FnMut(u64, f64),
    ) -> Result<f64> {
        let mut path = ScalarPath {
            q: self.p - 1.0,
            dt: self.dt,
            noise_scale: self.noise_scale,
            state: x,
        };
        let noisy = self.noise_scale != 0.0;
        let mut gauss = noisy.then(|| GaussianStream::at(stream, start_step));
        for k in start_step..start_step + steps {
            let xi = gauss.as_mut().map_or(0.0, GaussianStream::next);
            path.advance(xi);
            if !path.state.is_finite() {
                return Err(Error::NumericalBlowup {
                    time: (k + 1) as f64 * self.dt,
                    detail: "non-finite scalar state".into(),
                });
            }
            observe(k + 1, path.state);
        }
        Ok(path.state)
    }
}

/// Simulates `dX = -X^[p-1] dt + dB` on `[0, t_end]` with step `dt`,
/// recording every step.
pub fn sde_simulate(x: f64, p: f64, dt: f64, t_end: f64, stream: RngStream) -> Result<ScalarTrajectory> {
    sde_simulate_model(&ScalarModel::new(p, dt), x, t_end, stream)
}

pub fn sde_simulate_model(model: &ScalarModel, x: f64, t_end: f64, stream: RngStream) -> Result<ScalarTrajectory> {
    model.validate()?;
    if !(t_end >= 0.0) {
        return Err(Error::Domain(format!("t_end must be >= 0, got {t_end}")));
    }
    let steps = model.steps_for(t_end);
    let mut traj = ScalarTrajectory {
        times: vec![0.0],
        values: vec![x],
        extinct_at: None,
    };
    traj.times.reserve(steps as usize);
    traj.values.reserve(steps as usize);
    model.run_path(x, 0, steps, stream, |k, v| {
        traj.times.push(k as f64 * model.dt);
        traj.values.push(v);
    })?;
    if model.noise_scale == 0.0 && model.p < 2.0 {
        traj.extinct_at = traj
            .values
            .iter()
            .position(|&v| v == 0.0)
            .map(|i| traj.times[i]);
    }
    Ok(traj)
}

/// Ensemble of `n` independent paths from a common `x0`, sampled at the
/// given step indices (sorted). Returns one vector of `n` states per
/// snapshot. Path `i` uses trajectory stream `i`.
pub fn ensemble_snapshots(
    model: &ScalarModel,
    x0: f64,
    snapshot_steps: &[u64],
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    model.validate()?;
    let last = snapshot_steps.last().copied().unwrap_or(0);
    let paths: Vec<Vec<f64>> = exec.try_map_indexed(n, |i| {
        let stream = RngStream::in_domain(seed, domain::TRAJECTORY, i as u64);
        let mut out = Vec::with_capacity(snapshot_steps.len());
        let mut next = 0;
        while next < snapshot_steps.len() && snapshot_steps[next] == 0 {
            out.push(x0);
            next += 1;
        }
        model.run_path(x0, 0, last, stream, |k, v| {
            while next < snapshot_steps.len() && snapshot_steps[next] == k {
                out.push(v);
                next += 1;
            }
        })?;
        Ok::<_, Error>(out)
    })?;
    Ok((0..snapshot_steps.len())
        .map(|s| paths.iter().map(|p| p[s]).collect())
        .collect())
}

/// The invariant law `mu(dz) = exp(-2 |z|^p / (p sigma^2)) dz / Z`.
#[derive(Clone, Debug)]
pub struct InvariantDensity {
    pub p: f64,
    pub noise_scale: f64,
    pub z_norm: f64,
    pub tail_cut: f64,
    kappa: f64,
    /// Non-negative abscissae `0 = z_0 < ... < z_m = tail_cut`.
    nodes: Vec<f64>,
    /// `int_0^{z_i}` of the normalized density.
    half_cdf: Vec<f64>,
    pdf_at: Vec<f64>,
}

/// Builds the invariant density of the unit-noise model.
pub fn invariant_build(p: f64) -> Result<InvariantDensity> {
    InvariantDensity::build(p, 1.0)
}

impl InvariantDensity {
    pub fn build(p: f64, noise_scale: f64) -> Result<Self> {
        check_p(p)?;
        if !(noise_scale > 0.0) || !noise_scale.is_finite() {
            return Err(Error::Domain("invariant density needs a positive noise scale".into()));
        }
        let kappa = 2.0 / (p * noise_scale * noise_scale);
        // exp(-kappa R^p) = 1e-16
        let tail_cut = (16.0 * std::f64::consts::LN_10 / kappa).powf(1.0 / p);
        let weight = |z: f64| (-kappa * z.abs().powf(p)).exp();
        let tail = (-kappa * tail_cut.powf(p)).exp() / (kappa * p * tail_cut.powf(p - 1.0));
        let half = quad::integrate(weight, 0.0, tail_cut, 1e-13);
        let z_norm = 2.0 * (half + tail);

        let pdf = |z: f64| weight(z) / z_norm;
        let piece = |a: f64, b: f64| quad::integrate(pdf, a, b, 1e-14);

        let mut nodes = Vec::new();
        let mut half_cdf = Vec::new();
        let mut pdf_at = Vec::new();
        nodes.push(0.0);
        half_cdf.push(0.0);
        pdf_at.push(pdf(0.0));
        let coarse = 64;
        let mut stack: Vec<(f64, f64)> = (0..coarse)
            .rev()
            .map(|i| {
                let a = tail_cut * i as f64 / coarse as f64;
                let b = tail_cut * (i + 1) as f64 / coarse as f64;
                (a, b)
            })
            .collect();
        while let Some((a, b)) = stack.pop() {
            let fa = pdf(a);
            let fb = pdf(b);
            let mass = piece(a, b);
            let mid = 0.5 * (a + b);
            let left = piece(a, mid);
            let wdt = b - a;
            let herm = 0.5 * mass + wdt * (fa - fb) / 8.0;
            if (herm - left).abs() > 1e-13 && wdt > 1e-9 * tail_cut {
                stack.push((mid, b));
                stack.push((a, mid));
                continue;
            }
            let prev = *half_cdf.last().expect("seeded");
            nodes.push(b);
            half_cdf.push(prev + mass);
            pdf_at.push(fb);
        }
        Ok(Self {
            p,
            noise_scale,
            z_norm,
            tail_cut,
            kappa,
            nodes,
            half_cdf,
            pdf_at,
        })
    }

    pub fn pdf(&self, z: f64) -> f64 {
        (-self.kappa * z.abs().powf(self.p)).exp() / self.z_norm
    }

    pub fn table_len(&self) -> usize {
        self.nodes.len()
    }

    fn hermite(&self, i: usize, z: f64) -> f64 {
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let w = b - a;
        let s = (z - a) / w;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.half_cdf[i] + h10 * w * self.pdf_at[i] + h01 * self.half_cdf[i + 1] + h11 * w * self.pdf_at[i + 1]
    }

    fn half(&self, a: f64) -> f64 {
        if a >= self.tail_cut {
            return 0.5;
        }
        let i = self.nodes.partition_point(|&z| z <= a).saturating_sub(1);
        self.hermite(i.min(self.nodes.len() - 2), a)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let c = if z >= 0.0 {
            0.5 + self.half(z)
        } else {
            0.5 - self.half(-z)
        };
        c.clamp(0.0, 1.0)
    }

    /// Inverse CDF on `(0, 1)`, clamped to `[-tail_cut, tail_cut]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = (u - 0.5).abs();
        let top = *self.half_cdf.last().expect("non-empty");
        let z = if target >= top {
            self.tail_cut
        } else {
            let i = self.half_cdf.partition_point(|&c| c <= target).saturating_sub(1);
            let i = i.min(self.nodes.len() - 2);
            let (mut lo, mut hi) = (self.nodes[i], self.nodes[i + 1]);
            for _ in 0..64 {
                let mid = 0.5 * (lo + hi);
                if self.hermite(i, mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if u < 0.5 {
            -z
        } else {
            z
        }
    }

    /// `int |z|^k mu(dz)`.
    pub fn abs_moment(&self, k: f64) -> f64 {
        2.0 * quad::integrate(|z| z.powf(k) * self.pdf(z), 0.0, self.tail_cut, 1e-13)
    }

    /// `int z^k mu(dz)` for integer `k` (zero for odd `k`).
    pub fn moment(&self, k: i32) -> f64 {
        if k % 2 != 0 {
            return 0.0;
        }
        self.abs_moment(f64::from(k))
    }

    /// Tabulated `(z, pdf, cdf)` rows over `[-tail_cut, tail_cut]`.
    pub fn table(&self) -> Vec<(f64, f64, f64)> {
        let mut rows: Vec<(f64, f64, f64)> = self
            .nodes
            .iter()
            .rev()
            .map(|&z| (-z, self.pdf(z), self.cdf(-z)))
            .collect();
        rows.pop();
        rows.extend(self.nodes.iter().map(|&z| (z, self.pdf(z), self.cdf(z))));
        rows
    }
}

/// `n` inverse-CDF samples from the invariant density.
pub fn invariant_sample(density: &InvariantDensity, n: usize, stream: RngStream) -> Vec<f64> {
    let mut u = stream.uniform();
    (0..n).map(|_| density.quantile(u.next_open())).collect()
}

/// `K_p(x) = int (1 + |x|^p + |y|^p) mu(dy) = 1 + |x|^p + m_p`.
pub fn k_p_factor(x: f64, density: &InvariantDensity) -> f64 {
    1.0 + x.abs().powf(density.p) + density.abs_moment(density.p)
}
