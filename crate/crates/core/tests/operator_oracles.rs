use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use plmx::field::{p_laplacian, FieldState};
use plmx::model::{mode_eigenvalue, poincare_sq, sine_mode};
use plmx::ModelParams;

fn dirichlet_1d(n: usize, length: f64) -> DMatrix<f64> {
    let h = length / (n as f64 + 1.0);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 / (h * h),
        1 => -1.0 / (h * h),
        _ => 0.0,
    })
}

fn dirichlet_2d(n: usize, length: f64) -> DMatrix<f64> {
    let a = dirichlet_1d(n, length);
    let id = DMatrix::<f64>::identity(n, n);
    a.kronecker(&id) + id.kronecker(&a)
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn params(dim: usize, n: usize) -> ModelParams {
    ModelParams { dim, n_grid: n, ..Default::default() }
}

#[test]
fn poincare_matches_dense_eigensolve() {
    for n in [7, 15, 31] {
        let dense = sorted_eigenvalues(dirichlet_1d(n, 1.0))[0];
        let got = poincare_sq(&params(1, n));
        assert!((got - dense).abs() < 1e-9 * dense, "n = {n}: {got} vs {dense}");
    }
    let dense = sorted_eigenvalues(dirichlet_2d(7, 1.0))[0];
    assert!((poincare_sq(&params(2, 7)) - dense).abs() < 1e-9 * dense);
}

#[test]
fn poincare_extrapolates_to_pi_squared() {
    // error is O(h^2); one Richardson step leaves O(h^4)
    let v = |n| poincare_sq(&params(1, n));
    let (coarse, fine) = (v(31), v(63));
    let rich = (4.0 * fine - coarse) / 3.0;
    let target = PI * PI;
    assert!((rich - target).abs() < 1e-5);
    assert!((rich - target).abs() < 0.05 * (fine - target).abs());
}

#[test]
fn mode_spectrum_matches_dense_spectrum() {
    for (dim, n) in [(1, 12), (2, 6)] {
        let p = params(dim, n);
        let dense = if dim == 1 { sorted_eigenvalues(dirichlet_1d(n, 1.0)) } else { sorted_eigenvalues(dirichlet_2d(n, 1.0)) };
        let mat = if dim == 1 { dirichlet_1d(n, 1.0) } else { dirichlet_2d(n, 1.0) };
        for (k, want) in dense.iter().enumerate() {
            let got = mode_eigenvalue(&p, k);
            assert!((got - want).abs() < 1e-9 * want, "dim {dim} mode {k}: {got} vs {want}");
            // the nodal mode is an eigenvector with that eigenvalue
            let e = nalgebra::DVector::from_vec(sine_mode(&p, k));
            let res = (&mat * &e - &e * got).norm() / e.norm();
            assert!(res < 1e-8 * got, "dim {dim} mode {k}: residual {res}");
        }
    }
}

#[test]
fn p2_operator_is_the_dense_laplacian() {
    let p = Arc::new(params(2, 6));
    let u = FieldState::from_fn(p.clone(), |x, y| (x * (1.0 - x) * y).sin() + x * y * (1.0 - y));
    let lap = p_laplacian(&u, 2.0, 0.0);
    let want = -(dirichlet_2d(6, 1.0) * nalgebra::DVector::from_vec(u.values.clone()));
    for (a, b) in lap.values.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}
