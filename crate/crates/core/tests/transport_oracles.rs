use plmx::rng::domain;
use plmx::transport::{
    coupling_upper, disintegration_check, mean_lower, wasserstein_1d, wasserstein_assignment, wasserstein_weighted,
    EmpiricalMeasure,
};
use plmx::RngStream;
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum over all permutations, enumerated with Heap's algorithm.
fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>], r: f64) -> f64 {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| (0..n).map(|i| dist(&a[i], &b[p[i]]).powf(r)).sum::<f64>();
    let mut best = cost(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best / n as f64).powf(1.0 / r)
}

fn cloud(u: &mut plmx::rng::UniformStream, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| 4.0 * u.next_f64() - 2.0).collect()).collect()
}

#[test]
fn assignment_equals_brute_force() {
    let mut u = RngStream::in_domain(11, domain::INSTANCE, 0).uniform();
    for inst in 0..100 {
        let n = 1 + inst % 7;
        let dim = 1 + inst % 3;
        let r = if inst % 2 == 0 { 1.0 } else { 2.0 };
        let a = cloud(&mut u, n, dim);
        let b = cloud(&mut u, n, dim);
        let exact = brute_force(&a, &b, r);
        let got = wasserstein_assignment(
            &EmpiricalMeasure::euclidean(a.clone()).unwrap(),
            &EmpiricalMeasure::euclidean(b.clone()).unwrap(),
            r,
        )
        .unwrap();
        assert!((got - exact).abs() <= 1e-12, "instance {inst}: {got} vs {exact}");
    }
}

#[test]
fn sorted_transport_is_optimal_on_the_line() {
    let mut u = RngStream::in_domain(12, domain::INSTANCE, 0).uniform();
    for inst in 0..50 {
        let n = 2 + inst;
        let a: Vec<f64> = (0..n).map(|_| u.next_f64() * 3.0).collect();
        let b: Vec<f64> = (0..n).map(|_| u.next_f64() - 1.0).collect();
        for r in [1.0, 1.5, 2.0] {
            let s = wasserstein_1d(&a, &b, r).unwrap();
            let h = wasserstein_assignment(
                &EmpiricalMeasure::from_scalars(&a).unwrap(),
                &EmpiricalMeasure::from_scalars(&b).unwrap(),
                r,
            )
            .unwrap();
            assert!((s - h).abs() < 1e-12 * s.max(1.0), "{s} vs {h}");
        }
    }
}

#[test]
fn bounds_sandwich_assignment() {
    let mut u = RngStream::in_domain(13, domain::INSTANCE, 0).uniform();
    for inst in 0..100 {
        let n = 1 + inst % 20;
        let a = EmpiricalMeasure::new(cloud(&mut u, n, 4), 0.5).unwrap();
        let b = EmpiricalMeasure::new(cloud(&mut u, n, 4), 0.5).unwrap();
        for r in [1.0, 2.0] {
            let w = wasserstein_assignment(&a, &b, r).unwrap();
            assert!(mean_lower(&a, &b).unwrap() <= w + 1e-12);
            assert!(w <= coupling_upper(&a, &b, r).unwrap() + 1e-12);
        }
    }
}

/// Weights `k_j / K` pooled by replication into equal-size uniform samples.
#[test]
fn weighted_transport_matches_replicated_assignment() {
    let mut u = RngStream::in_domain(14, domain::INSTANCE, 0).uniform();
    for _ in 0..20 {
        let a = cloud(&mut u, 3, 2);
        let b = cloud(&mut u, 2, 2);
        let kb = [1 + u.next_index(3), 1 + u.next_index(3)];
        let total = (kb[0] + kb[1]) as f64;
        let wb: Vec<f64> = kb.iter().map(|&k| k as f64 / total).collect();
        let wa = vec![1.0 / 3.0; 3];
        let rep_b: Vec<Vec<f64>> = b.iter().zip(kb).flat_map(|(s, k)| std::iter::repeat_n(s.clone(), k)).collect();
        let m = rep_b.len();
        // lcm-free replication: every point of a repeated m times, every point of rep_b three times
        let big_a: Vec<Vec<f64>> = a.iter().flat_map(|s| std::iter::repeat_n(s.clone(), m)).collect();
        let big_b: Vec<Vec<f64>> = rep_b.iter().flat_map(|s| std::iter::repeat_n(s.clone(), 3)).collect();
        for r in [1.0, 2.0] {
            let exact = brute_force_or_assign(&big_a, &big_b, r);
            let got = wasserstein_weighted(
                &EmpiricalMeasure::euclidean(a.clone()).unwrap(),
                &wa,
                &EmpiricalMeasure::euclidean(b.clone()).unwrap(),
                &wb,
                r,
            )
            .unwrap();
            assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
        }
    }
}

fn brute_force_or_assign(a: &[Vec<f64>], b: &[Vec<f64>], r: f64) -> f64 {
    if a.len() <= 7 {
        brute_force(a, b, r)
    } else {
        wasserstein_assignment(
            &EmpiricalMeasure::euclidean(a.to_vec()).unwrap(),
            &EmpiricalMeasure::euclidean(b.to_vec()).unwrap(),
            r,
        )
        .unwrap()
    }
}

#[test]
fn disintegration_first_order_and_power_form() {
    let mut u = RngStream::in_domain(15, domain::INSTANCE, 0).uniform();
    for _ in 0..100 {
        let x = EmpiricalMeasure::euclidean(cloud(&mut u, 4, 2)).unwrap();
        let comps: Vec<EmpiricalMeasure> = (0..3).map(|_| EmpiricalMeasure::euclidean(cloud(&mut u, 3, 2)).unwrap()).collect();
        let raw: Vec<f64> = (0..3).map(|_| u.next_open()).collect();
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let one = disintegration_check(&x, &comps, &w, 1.0).unwrap();
        assert!(one.holds, "{one:?}");
        let two = disintegration_check(&x, &comps, &w, 2.0).unwrap();
        assert!(two.holds_power, "{two:?}");
    }
}

#[test]
fn second_order_mixture_counterexample() {
    // delta_0 against (delta_0 + delta_2) / 2: W_2 = sqrt(2) but the weighted sum is 1
    let x = EmpiricalMeasure::from_scalars(&[0.0]).unwrap();
    let comps = [EmpiricalMeasure::from_scalars(&[0.0]).unwrap(), EmpiricalMeasure::from_scalars(&[2.0]).unwrap()];
    let rep = disintegration_check(&x, &comps, &[0.5, 0.5], 2.0).unwrap();
    assert!((rep.lhs - 2f64.sqrt()).abs() < 1e-12);
    assert!((rep.rhs - 1.0).abs() < 1e-12);
    assert!(!rep.holds);
    assert!(rep.holds_power);
}

fn points(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_is_a_metric(a in points(6), b in points(6), c in points(6), r in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let a = EmpiricalMeasure::euclidean(a).unwrap();
        let b = EmpiricalMeasure::euclidean(b).unwrap();
        let c = EmpiricalMeasure::euclidean(c).unwrap();
        let ab = wasserstein_assignment(&a, &b, r).unwrap();
        let ba = wasserstein_assignment(&b, &a, r).unwrap();
        let ac = wasserstein_assignment(&a, &c, r).unwrap();
        let cb = wasserstein_assignment(&c, &b, r).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
        prop_assert!(wasserstein_assignment(&a, &a, r).unwrap() < 1e-10);
        prop_assert!(ab <= ac + cb + 1e-10);
    }

    #[test]
    fn order_monotonicity(a in points(5), b in points(5)) {
        let a = EmpiricalMeasure::euclidean(a).unwrap();
        let b = EmpiricalMeasure::euclidean(b).unwrap();
        let w1 = wasserstein_assignment(&a, &b, 1.0).unwrap();
        let w2 = wasserstein_assignment(&a, &b, 2.0).unwrap();
        prop_assert!(w1 <= w2 + 1e-10);
    }
}
