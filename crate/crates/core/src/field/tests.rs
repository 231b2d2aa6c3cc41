use super::*;
use crate::model::{hs_norm_sq, mode_eigenvalue};
use std::f64::consts::PI;

fn params(p: f64, dim: usize, n: usize) -> Arc<ModelParams> {
    Arc::new(ModelParams {
        p,
        dim,
        n_grid: n,
        dt: 1e-3,
        eps_reg: if p < 2.0 { 1e-8 } else { 0.0 },
        ..Default::default()
    })
}

fn sine(par: &Arc<ModelParams>) -> FieldState {
    FieldState::from_fn(par.clone(), |x, y| {
        (PI * x).sin() * if par.dim == 2 { (PI * y).sin() } else { 1.0 }
    })
}

#[test]
fn zero_data_stays_zero() {
    for p in [1.7, 2.0, 4.0] {
        let par = params(p, 1, 16);
        let (u, tr) = evolve_deterministic(&FieldState::zeros(par), 0.1, &EvolveOptions::default()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        assert!(tr.l2.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn heat_mode_decay() {
    let par = params(2.0, 1, 128);
    let x0 = sine(&par);
    let (_, tr) = evolve_deterministic(&x0, 0.2, &EvolveOptions::at_times(vec![0.2])).unwrap();
    let ratio = tr.l2.last().unwrap() / tr.l2[0];
    let expect = (-PI * PI * 0.2).exp();
    assert!((ratio / expect - 1.0).abs() < 0.01, "{ratio} vs {expect}");
    assert_eq!(*tr.times.last().unwrap(), 0.2);
}

#[test]
fn zero_noise_is_bitwise_deterministic() {
    let par = params(3.0, 1, 20);
    let x0 = sine(&par);
    let opts = EvolveOptions::at_times(vec![0.01, 0.05]);
    let a = evolve_deterministic(&x0, 0.05, &opts).unwrap();
    let b = evolve_spde(&x0, &NoiseSpec::new(vec![0.0, 0.0]), 0.05, RngStream::new(3, 1), &opts).unwrap();
    assert_eq!(a.0.values, b.0.values);
    assert_eq!(a.1, b.1);
}

#[test]
fn one_mode_heat_spde_is_scalar_recursion() {
    let par = params(2.0, 1, 12);
    let b = 0.7;
    let opts = EvolveOptions {
        policy: StepPolicy::Fixed,
        ..Default::default()
    };
    let stream = RngStream::new(17, 2);
    let x0 = FieldState::from_mode(par.clone(), 0, 0.3);
    let (u, tr) = evolve_spde(&x0, &NoiseSpec::new(vec![b]), 0.05, stream, &opts).unwrap();
    let lam = mode_eigenvalue(&par, 0);
    let xi = crate::rng::gaussian_increments(stream, 50);
    let mut c = 0.3;
    for (n, z) in xi.iter().enumerate() {
        c = (c + par.dt.sqrt() * b * z) / (1.0 + par.dt * lam);
        assert!((tr.l2[n + 1] - c.abs()).abs() < 1e-12, "step {n}");
    }
    let e1 = sine_mode(&par, 0);
    for (a, e) in u.values.iter().zip(&e1) {
        assert!((a - c * e).abs() < 1e-12);
    }
}

#[test]
fn pathwise_energy_identity() {
    for (p, dim) in [(3.0, 1), (1.6, 1), (2.5, 2)] {
        let par = params(p, dim, 10);
        let x0 = sine(&par);
        let noise = NoiseSpec::new(vec![0.5, 0.3, 0.2]);
        let opts = EvolveOptions {
            track_energy: true,
            policy: StepPolicy::Fixed,
            ..Default::default()
        };
        let (_, tr) = evolve_spde(&x0, &noise, 0.05, RngStream::new(5, 5), &opts).unwrap();
        let e = tr.energy.as_ref().unwrap();
        let x02 = tr.l2[0] * tr.l2[0];
        for i in 0..tr.len() {
            let lhs = tr.l2[i] * tr.l2[i] + 2.0 * e.dissipation[i] + e.correction[i];
            let rhs = x02 + e.martingale[i] + e.noise_energy[i];
            assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0), "p {p} step {i}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn coupling_identical_data_is_zero() {
    let par = params(4.0, 1, 16);
    let x0 = sine(&par);
    let run = coupled_spde(&x0, &x0, &NoiseSpec::new(vec![1.0]), 0.02, RngStream::new(1, 1), &EvolveOptions::default()).unwrap();
    assert!(run.diff.l2.iter().all(|&v| v == 0.0));
}

#[test]
fn coupling_contracts_every_step() {
    for (p, dim) in [(1.7, 1), (2.0, 1), (4.0, 1), (3.0, 2)] {
        let par = params(p, dim, 12);
        let x0 = sine(&par);
        let y0 = FieldState::from_mode(par.clone(), 1, -0.8);
        let noise = NoiseSpec::new(vec![1.0, 0.5]);
        let run = coupled_spde(&x0, &y0, &noise, 0.02, RngStream::new(8, 0), &EvolveOptions::default()).unwrap();
        assert!(run.diff.len() > 10);
        for w in run.diff.l2.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "p {p}: {} > {}", w[1], w[0]);
        }
    }
}

#[test]
fn noise_increment_moments() {
    let par = params(2.0, 1, 16);
    assert!(noise_increment(&NoiseSpec::new(vec![0.0; 3]), 1.0, RngStream::new(1, 1), par.clone())
        .unwrap()
        .values
        .iter()
        .all(|&v| v == 0.0));
    let n = 10_000;
    let e1 = FieldState::from_mode(par.clone(), 0, 1.0);
    let e2 = FieldState::from_mode(par.clone(), 1, 1.0);
    let spec = NoiseSpec::new(vec![1.0]);
    let sq: Vec<f64> = (0..n)
        .map(|i| noise_increment(&spec, 1.0, RngStream::new(4, i), par.clone()).unwrap().l2().powi(2))
        .collect();
    let mean = sq.iter().sum::<f64>() / n as f64;
    let se = (2.0 / n as f64).sqrt();
    assert!((mean - hs_norm_sq(&spec)).abs() < 3.0 * se, "{mean}");
    let two = NoiseSpec::new(vec![1.0, 2.0]);
    let (mut c11, mut c22, mut c12) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let xi = noise_increment(&two, 0.5, RngStream::new(6, i), par.clone()).unwrap();
        let (a, b) = (xi.dot(&e1), xi.dot(&e2));
        c11 += a * a;
        c22 += b * b;
        c12 += a * b;
    }
    let nf = n as f64;
    assert!((c11 / nf - 0.5).abs() < 4.0 * 0.5 * (2.0 / nf).sqrt());
    assert!((c22 / nf - 2.0).abs() < 4.0 * 2.0 * (2.0 / nf).sqrt());
    assert!((c12 / nf).abs() < 4.0 * (0.5f64 * 2.0).sqrt() / nf.sqrt());
}

#[test]
fn resume_is_bitwise() {
    for policy in [StepPolicy::Fixed, StepPolicy::default()] {
        let par = params(3.0, 1, 14);
        let x0 = sine(&par);
        let noise = NoiseSpec::new(vec![0.4, 0.2]);
        let stream = RngStream::new(21, 3);
        let opts = EvolveOptions {
            policy,
            record: Record::Times(vec![0.02, 0.05]),
            ..Default::default()
        };
        let full = resume_spde(&x0, 0.0, 0, &noise, 0.05, stream, &opts).unwrap();
        let half = resume_spde(&x0, 0.0, 0, &noise, 0.02, stream, &opts).unwrap();
        let rest = resume_spde(&half.state, half.t, half.step, &noise, 0.05, stream, &opts).unwrap();
        assert_eq!(full.state.values, rest.state.values);
        assert_eq!(full.step, rest.step);
    }
}

#[test]
fn ensemble_independent_of_execution() {
    let par = params(2.0, 1, 8);
    let x0 = sine(&par);
    let noise = NoiseSpec::new(vec![1.0]);
    let opts = EvolveOptions::at_times(vec![0.01]);
    let a = spde_ensemble(&x0, &noise, 0.01, 6, 9, &opts, Execution::Sequential).unwrap();
    let b = spde_ensemble(&x0, &noise, 0.01, 6, 9, &opts, Execution::Parallel).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0.values, y.0.values);
    }
    let snaps = spde_snapshots(&x0, &noise, &[0.0, 0.005, 0.01], 6, 9, &opts, Execution::Sequential).unwrap();
    assert_eq!(snaps[0][0], x0.values);
    let c = spde_ensemble(&x0, &noise, 0.01, 6, 9, &EvolveOptions::at_times(vec![0.005, 0.01]), Execution::Sequential).unwrap();
    assert_eq!(snaps[3][2], c[3].0.values);
}

#[test]
fn synthetic_decay_fits() {
    let t: Vec<f64> = (1..=40).map(|i| i as f64 * 0.25).collect();
    let poly: Vec<f64> = t.iter().map(|t| t.powf(-0.5)).collect();
    let fit = decay_fit(&t, &poly, DecayFamily::Polynomial, (0.0, f64::INFINITY)).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-9);
    let exp: Vec<f64> = t.iter().map(|t| (-3.0 * t).exp()).collect();
    let fit = decay_fit(&t, &exp, DecayFamily::Exponential, (0.0, f64::INFINITY)).unwrap();
    assert!((fit.rate - 3.0).abs() < 1e-9);
    assert!(matches!(
        decay_fit(&t, &exp, DecayFamily::Exponential, (0.0, 2.0)),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn singular_extinction_and_running_l() {
    let par = params(1.7, 1, 32);
    let x0 = sine(&par);
    let (u, tr) = evolve_deterministic(&x0, 2.0, &EvolveOptions::at_times((1..=40).map(|i| i as f64 * 0.05).collect())).unwrap();
    let t_ext = tr.extinct_at.expect("finite-time extinction");
    assert!(t_ext > 0.1 && t_ext < 2.0);
    assert!(u.values.iter().all(|&v| v == 0.0));
    let l = running_l(&tr, None, 1.7).unwrap();
    assert!(l.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*tr.times.last().unwrap(), 2.0);
}
