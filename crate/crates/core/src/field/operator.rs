//! Flux-form discrete p-Laplacian and the implicit step it induces.
//!
//! The operator is assembled line by line: one line of `n` nodes in one
//! dimension, `n` rows plus `n` columns in two. Each line carries `n + 1`
//! faces with the Dirichlet zeros at both ends, face gradient
//! `g = (u_k - u_{k-1}) / h` and face flux `phi(g) = (g^2 + eps^2)^((p-2)/2) g`.

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            dim: params.dim,
            n: params.n_grid,
            h: params.h(),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// `(first node, stride)` of every grid line.
    pub fn lines(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        let rows = (0..if self.dim == 1 { 1 } else { n }).map(move |j| (j * n, 1));
        let cols = (0..if self.dim == 2 { n } else { 0 }).map(move |i| (i, n));
        rows.chain(cols)
    }

    /// Calls `f(g)` for every face gradient of `u`.
    pub fn for_each_face(&self, u: &[f64], mut f: impl FnMut(f64)) {
        let inv_h = 1.0 / self.h;
        for (start, stride) in self.lines() {
            let mut prev = 0.0;
            for k in 0..self.n {
                let cur = u[start + k * stride];
                f((cur - prev) * inv_h);
                prev = cur;
            }
            f(-prev * inv_h);
        }
    }
}

/// Face nonlinearity with exponent `p` and regularization `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flux {
    pub p: f64,
    pub eps: f64,
}

impl Flux {
    #[inline]
    pub fn coeff(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let s = g * g + self.eps * self.eps;
        if s == 0.0 {
            // p > 2: vanishing diffusivity; p < 2 cannot reach here with g = 0 unless eps = 0
            return if self.p > 2.0 { 0.0 } else { f64::INFINITY };
        }
        s.powf(0.5 * (self.p - 2.0))
    }

    #[inline]
    pub fn flux(&self, g: f64) -> f64 {
        if g == 0.0 {
            return 0.0;
        }
        self.coeff(g) * g
    }

    /// `d phi / d g`.
    #[inline]
    pub fn slope(&self, g: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let e2 = self.eps * self.eps;
        let s = g * g + e2;
        if s == 0.0 {
            return if self.p > 2.0 { 0.0 } else { f64::INFINITY };
        }
        s.powf(0.5 * (self.p - 4.0)) * ((self.p - 1.0) * g * g + e2)
    }

    /// Convex potential with `Psi' = phi`, `Psi(0) = 0`.
    #[inline]
    pub fn potential(&self, g: f64) -> f64 {
        let e2 = self.eps * self.eps;
        let s = g * g + e2;
        if self.p == 2.0 {
            return 0.5 * g * g;
        }
        (s.powf(0.5 * self.p) - e2.powf(0.5 * self.p)) / self.p
    }
}

/// Nodal values of `div(phi(grad u))`.
pub fn apply(grid: &Grid, flux: Flux, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let inv_h = 1.0 / grid.h;
    for (start, stride) in grid.lines() {
        let mut prev_u = 0.0;
        let mut prev_flux = 0.0;
        for k in 0..=grid.n {
            let cur_u = if k < grid.n { u[start + k * stride] } else { 0.0 };
            let f = flux.flux((cur_u - prev_u) * inv_h);
            if k > 0 {
                out[start + (k - 1) * stride] += (f - prev_flux) * inv_h;
            }
            prev_flux = f;
            prev_u = cur_u;
        }
    }
}

/// `sum_faces h^d phi(g) g`, the discrete dissipation `<-div phi(grad u), u>`.
pub fn dissipation(grid: &Grid, flux: Flux, u: &[f64]) -> f64 {
    let mut acc = 0.0;
    grid.for_each_face(u, |g| acc += flux.flux(g) * g);
    acc * grid.weight()
}

/// `sum_faces h^d |g|^p`, the discrete `int |grad u|^p`.
pub fn gradient_p_energy(grid: &Grid, p: f64, u: &[f64]) -> f64 {
    let mut acc = 0.0;
    grid.for_each_face(u, |g| acc += g.abs().powf(p));
    acc * grid.weight()
}

pub fn potential_energy(grid: &Grid, flux: Flux, u: &[f64]) -> f64 {
    let mut acc = 0.0;
    grid.for_each_face(u, |g| acc += flux.potential(g));
    acc * grid.weight()
}

/// Largest face diffusivity `(g^2 + eps^2)^((p-2)/2)` of `u`.
pub fn max_coeff(grid: &Grid, flux: Flux, u: &[f64]) -> f64 {
    let mut m = 0.0_f64;
    grid.for_each_face(u, |g| m = m.max(flux.coeff(g)));
    m
}

/// Outcome of one implicit solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub sweeps: usize,
    pub residual: f64,
}

/// Scratch buffers for [`implicit_solve`].
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    lap: Vec<f64>,
    resid: Vec<f64>,
    delta: Vec<f64>,
    trial: Vec<f64>,
    face_slope: Vec<f64>,
    diag: Vec<f64>,
    lower: Vec<f64>,
    cg: [Vec<f64>; 4],
}

impl Workspace {
    pub fn new(len: usize) -> Self {
        let z = vec![0.0; len];
        Self {
            lap: z.clone(),
            resid: z.clone(),
            delta: z.clone(),
            trial: z.clone(),
            face_slope: Vec::new(),
            diag: z.clone(),
            lower: z.clone(),
            cg: [z.clone(), z.clone(), z.clone(), z],
        }
    }
}

fn residual(grid: &Grid, flux: Flux, dt: f64, w: &[f64], rhs: &[f64], ws_lap: &mut [f64], out: &mut [f64]) -> (f64, f64) {
    apply(grid, flux, w, ws_lap);
    // one ulp in w moves the residual by up to |I + dt L| ulp, and the
    // linearized operator is stiff where the slope blows up
    let (mut fmax, mut smax) = (0.0_f64, 0.0_f64);
    grid.for_each_face(w, |g| {
        fmax = fmax.max(flux.flux(g).abs());
        smax = smax.max(flux.slope(g).min(1e300));
    });
    let wmax = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let two_d = 2.0 * grid.dim as f64;
    let mut rmax = 0.0_f64;
    let mut scale = dt * two_d * (fmax / grid.h + 2.0 * smax * wmax / (grid.h * grid.h));
    for i in 0..w.len() {
        let r = w[i] - rhs[i] - dt * ws_lap[i];
        out[i] = r;
        rmax = rmax.max(r.abs());
        scale = scale.max(w[i].abs() + rhs[i].abs() + (dt * ws_lap[i]).abs());
    }
    (rmax, scale)
}

fn energy(grid: &Grid, flux: Flux, dt: f64, w: &[f64], rhs: &[f64]) -> f64 {
    let quad: f64 = w.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * quad * grid.weight() + dt * potential_energy(grid, flux, w)
}

/// Solves `w - dt div(phi(grad w)) = rhs` by damped Newton iteration.
///
/// The equation is the optimality condition of the strictly convex energy
/// `1/2 |w - rhs|^2 + dt sum h^d Psi(g)`, so Newton with Armijo backtracking
/// on that energy converges from `w = rhs`. Converged when the Newton update
/// or the residual reaches rounding level relative to the equation's scale,
/// or the residual drops below the absolute `floor`.
pub fn implicit_solve(
    grid: &Grid,
    flux: Flux,
    dt: f64,
    rhs: &[f64],
    w: &mut Vec<f64>,
    ws: &mut Workspace,
    max_sweeps: usize,
    time: f64,
    floor: f64,
) -> Result<SolveStats> {
    const TOL: f64 = 1e-14;
    let len = rhs.len();
    if ws.resid.len() != len {
        *ws = Workspace::new(len);
    }
    if w.len() != len {
        w.clear();
        w.extend_from_slice(rhs);
    }
    let mut lap = std::mem::take(&mut ws.lap);
    let mut resid = std::mem::take(&mut ws.resid);
    let result = (|| {
        let (mut rmax, scale0) = residual(grid, flux, dt, w, rhs, &mut lap, &mut resid);
        let mut scale = scale0.max(floor / TOL);
        for sweep in 0..max_sweeps {
            if rmax <= TOL * scale.max(f64::MIN_POSITIVE) || rmax == 0.0 {
                return Ok(SolveStats {
                    sweeps: sweep,
                    residual: rmax,
                });
            }
            newton_direction(grid, flux, dt, w, &resid, ws)?;
            let dmax = ws.delta.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
            let wmax = w.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
            // Armijo on the convex energy; backtracking stops at rounding level
            let e0 = energy(grid, flux, dt, w, rhs);
            let slope: f64 = -resid.iter().zip(&ws.delta).map(|(r, d)| r * d).sum::<f64>() * grid.weight();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for i in 0..len {
                    ws.trial[i] = w[i] + alpha * ws.delta[i];
                }
                let e1 = energy(grid, flux, dt, &ws.trial, rhs);
                if e1 <= e0 - 1e-4 * alpha * slope || (e1 - e0).abs() <= 1e-15 * e0.abs() {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                alpha = 1.0;
                for i in 0..len {
                    ws.trial[i] = w[i] + ws.delta[i];
                }
            }
            std::mem::swap(w, &mut ws.trial);
            let (r, s) = residual(grid, flux, dt, w, rhs, &mut lap, &mut resid);
            rmax = r;
            scale = s.max(floor / TOL);
            if alpha == 1.0 && dmax <= TOL * wmax && rmax <= 1e3 * TOL * scale {
                return Ok(SolveStats {
                    sweeps: sweep + 1,
                    residual: rmax,
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalBlowup {
                    time,
                    detail: "non-finite iterate in implicit solve".into(),
                });
            }
        }
        if rmax <= 1e3 * TOL * scale {
            return Ok(SolveStats {
                sweeps: max_sweeps,
                residual: rmax,
            });
        }
        Err(Error::StepFailure {
            time,
            sweeps: max_sweeps,
            residual: rmax,
        })
    })();
    ws.lap = lap;
    ws.resid = resid;
    result
}

/// Newton update `delta` from `(I + dt L(w)) delta = -resid`, where `L` is the
/// linearized operator `-div(phi'(grad w) grad .)`.
fn newton_direction(grid: &Grid, flux: Flux, dt: f64, w: &[f64], resid: &[f64], ws: &mut Workspace) -> Result<()> {
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    ws.face_slope.clear();
    let mut slopes = std::mem::take(&mut ws.face_slope);
    grid.for_each_face(w, |g| slopes.push(flux.slope(g).min(1e300)));
    if grid.dim == 1 {
        // tridiagonal: diag_k = 1 + c (s_k + s_{k+1}), off_k = -c s_k
        let c = dt * inv_h2;
        for k in 0..n {
            ws.diag[k] = 1.0 + c * (slopes[k] + slopes[k + 1]);
            ws.lower[k] = -c * slopes[k];
        }
        let rhs: Vec<f64> = resid.iter().map(|r| -r).collect();
        thomas(&ws.diag[..n], &ws.lower[..n], &rhs, &mut ws.delta[..n]);
    } else {
        let neg: Vec<f64> = resid.iter().map(|r| -r).collect();
        let op = LinearizedOp {
            grid,
            slopes: &slopes,
            c: dt * inv_h2,
        };
        op.diagonal(&mut ws.diag);
        conjugate_gradient(&op, &ws.diag, &neg, &mut ws.delta, &mut ws.cg)?;
    }
    ws.face_slope = slopes;
    Ok(())
}

/// Symmetric tridiagonal solve; `lower[k]` couples nodes `k-1` and `k`.
fn thomas(diag: &[f64], lower: &[f64], rhs: &[f64], out: &mut [f64]) {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0];
    c_prime[0] = if n > 1 { lower[1] / denom } else { 0.0 };
    d_prime[0] = rhs[0] / denom;
    for k in 1..n {
        denom = diag[k] - lower[k] * c_prime[k - 1];
        c_prime[k] = if k + 1 < n { lower[k + 1] / denom } else { 0.0 };
        d_prime[k] = (rhs[k] - lower[k] * d_prime[k - 1]) / denom;
    }
    out[n - 1] = d_prime[n - 1];
    for k in (0..n - 1).rev() {
        out[k] = d_prime[k] - c_prime[k] * out[k + 1];
    }
}

struct LinearizedOp<'a> {
    grid: &'a Grid,
    slopes: &'a [f64],
    c: f64,
}

impl LinearizedOp<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        let n = self.grid.n;
        for (line, (start, stride)) in self.grid.lines().enumerate() {
            let s = &self.slopes[line * (n + 1)..(line + 1) * (n + 1)];
            let mut prev = 0.0;
            for k in 0..=n {
                let cur = if k < n { v[start + k * stride] } else { 0.0 };
                let f = self.c * s[k] * (cur - prev);
                if k > 0 {
                    out[start + (k - 1) * stride] -= f;
                }
                if k < n {
                    out[start + k * stride] += f;
                }
                prev = cur;
            }
        }
    }

    fn diagonal(&self, out: &mut [f64]) {
        out.iter_mut().for_each(|d| *d = 1.0);
        let n = self.grid.n;
        for (line, (start, stride)) in self.grid.lines().enumerate() {
            let s = &self.slopes[line * (n + 1)..(line + 1) * (n + 1)];
            for k in 0..n {
                out[start + k * stride] += self.c * (s[k] + s[k + 1]);
            }
        }
    }
}

/// Jacobi-preconditioned conjugate gradients for the SPD Newton system.
fn conjugate_gradient(op: &LinearizedOp<'_>, diag: &[f64], b: &[f64], x: &mut [f64], scratch: &mut [Vec<f64>; 4]) -> Result<()> {
    let len = b.len();
    let [r, z, pdir, ap] = scratch;
    x.iter_mut().for_each(|v| *v = 0.0);
    r.copy_from_slice(b);
    for i in 0..len {
        z[i] = r[i] / diag[i];
    }
    pdir.copy_from_slice(z);
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(());
    }
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    for _ in 0..(10 * len + 100) {
        op.apply(pdir, ap);
        let pap: f64 = pdir.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..len {
            x[i] += alpha * pdir[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= 1e-15 * bnorm {
            return Ok(());
        }
        for i in 0..len {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            pdir[i] = z[i] + beta * pdir[i];
        }
    }
    Ok(())
}
