//! Shared parameter records, grids, noise spectra and elementary nonlinearities.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Simulation parameters shared by the scalar and field models.
///
/// The grid is vertex based: `n_grid` interior nodes per direction at
/// `z_i = i h`, `h = length / (n_grid + 1)`, with the Dirichlet boundary
/// nodes `i = 0` and `i = n_grid + 1` held at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub p: f64,
    pub dim: usize,
    pub length: f64,
    pub n_grid: usize,
    pub dt: f64,
    pub eps_reg: f64,
    pub r_order: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            p: 2.0,
            dim: 1,
            length: 1.0,
            n_grid: 64,
            dt: 1e-4,
            eps_reg: 0.0,
            r_order: 2.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.p > 1.0) || !self.p.is_finite() {
            return bad(format!("p must be > 1, got {}", self.p));
        }
        if self.dim != 1 && self.dim != 2 {
            return bad(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if !(self.length > 0.0) || !self.length.is_finite() {
            return bad(format!("length must be > 0, got {}", self.length));
        }
        if self.n_grid < 2 {
            return bad(format!("n_grid must be >= 2, got {}", self.n_grid));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.eps_reg >= 0.0) || !self.eps_reg.is_finite() {
            return bad(format!("eps_reg must be >= 0, got {}", self.eps_reg));
        }
        if !(self.r_order >= 1.0) || !self.r_order.is_finite() {
            return bad(format!("r_order must be >= 1, got {}", self.r_order));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.length / (self.n_grid as f64 + 1.0)
    }

    /// Number of interior unknowns.
    pub fn n_nodes(&self) -> usize {
        self.n_grid.pow(self.dim as u32)
    }

    /// Quadrature weight of one interior node (`h^d`).
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Coordinates of interior node `idx` (`y` is 0 in one dimension).
    pub fn node_coords(&self, idx: usize) -> (f64, f64) {
        let h = self.h();
        let n = self.n_grid;
        let i = idx % n;
        let j = idx / n;
        let x = (i as f64 + 1.0) * h;
        let y = if self.dim == 2 { (j as f64 + 1.0) * h } else { 0.0 };
        (x, y)
    }
}

/// Diagonal noise operator on the Dirichlet sine basis: `B e_k = b_k e_k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseSpec {
    pub coeffs: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn truncation(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&b| b == 0.0)
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.coeffs.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams("noise coefficients must be finite".into()));
        }
        if self.coeffs.len() > params.n_nodes() {
            return Err(Error::InvalidParams(format!(
                "{} noise modes exceed the {} grid modes",
                self.coeffs.len(),
                params.n_nodes()
            )));
        }
        Ok(())
    }
}

/// `z |z|^(alpha - 1)`, with `0^[alpha] = 0`.
pub fn signed_power(z: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("signed_power needs alpha > 0, got {alpha}")));
    }
    Ok(signed_power_unchecked(z, alpha))
}

#[inline]
pub(crate) fn signed_power_unchecked(z: f64, alpha: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else if alpha == 1.0 {
        z
    } else {
        z.signum() * z.abs().powf(alpha)
    }
}

/// Squared Hilbert–Schmidt norm `sum_k b_k^2`.
pub fn hs_norm_sq(noise: &NoiseSpec) -> f64 {
    noise.coeffs.iter().map(|b| b * b).sum()
}

/// Eigenvalue of the one-dimensional discrete Dirichlet Laplacian for mode `k`.
pub fn laplacian_eigenvalue_1d(k: usize, n_grid: usize, length: f64) -> f64 {
    let h = length / (n_grid as f64 + 1.0);
    let s = (k as f64 * PI / (2.0 * (n_grid as f64 + 1.0))).sin();
    4.0 * s * s / (h * h)
}

/// Smallest eigenvalue of the discrete Dirichlet Laplacian, the discrete
/// counterpart of the squared inverse Poincaré constant `c_0^2`.
pub fn poincare_sq(params: &ModelParams) -> f64 {
    params.dim as f64 * laplacian_eigenvalue_1d(1, params.n_grid, params.length)
}

/// Multi-index of the `k`-th sine mode (0-based), ordered by eigenvalue.
///
/// In one dimension mode `k` is `sin((k+1) pi z / L)`. In two dimensions the
/// pairs `(k1, k2)` are sorted by discrete eigenvalue, ties broken by `k1`.
/// For low modes this is the continuum order by `k1^2 + k2^2`.
pub fn mode_index(params: &ModelParams, k: usize) -> (usize, usize) {
    if params.dim == 1 {
        return (k + 1, 0);
    }
    let n = params.n_grid;
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .flat_map(|a| (1..=n).map(move |b| (a, b)))
        .collect();
    let lam: Vec<f64> = (0..=n).map(|k| laplacian_eigenvalue_1d(k, n, params.length)).collect();
    pairs.sort_by(|&(a1, b1), &(a2, b2)| {
        (lam[a1] + lam[b1])
            .total_cmp(&(lam[a2] + lam[b2]))
            .then(a1.cmp(&a2))
    });
    pairs[k]
}

/// Nodal values of the unit-normalized sine mode `k` (0-based).
///
/// Normalized so that the grid quadrature `h^d sum e_k^2` equals 1 exactly
/// for every mode representable on the grid.
pub fn sine_mode(params: &ModelParams, k: usize) -> Vec<f64> {
    let (k1, k2) = mode_index(params, k);
    let l = params.length;
    let amp = (2.0 / l).powf(params.dim as f64 / 2.0);
    (0..params.n_nodes())
        .map(|idx| {
            let (x, y) = params.node_coords(idx);
            let sx = (k1 as f64 * PI * x / l).sin();
            let sy = if params.dim == 2 {
                (k2 as f64 * PI * y / l).sin()
            } else {
                1.0
            };
            amp * sx * sy
        })
        .collect()
}

/// Discrete Laplacian eigenvalue for the `k`-th mode of [`sine_mode`].
pub fn mode_eigenvalue(params: &ModelParams, k: usize) -> f64 {
    let (k1, k2) = mode_index(params, k);
    let mut lam = laplacian_eigenvalue_1d(k1, params.n_grid, params.length);
    if params.dim == 2 {
        lam += laplacian_eigenvalue_1d(k2, params.n_grid, params.length);
    }
    lam
}
