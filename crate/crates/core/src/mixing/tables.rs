//! Known convergence rates and mixing-time asymptotics by regime.

use std::f64::consts::SQRT_2;

use super::bounds::NoiseClass;

/// One regime: a `p` range (depending on the dimension `d`), a noise class,
/// the convergence rate and, for the mixing table, the upper bound on the
/// mixing time. Expressions are plain ASCII; `v` is max, `n` intersection.
#[derive(Clone, Copy, Debug)]
pub struct RateRow {
    pub p_range: &'static str,
    pub noise: NoiseClass,
    pub rate: &'static str,
    pub upper_bound: &'static str,
    pub source: &'static str,
    contains: fn(f64, f64) -> bool,
}

impl PartialEq for RateRow {
    fn eq(&self, o: &Self) -> bool {
        (self.p_range, self.noise, self.rate, self.upper_bound, self.source) == (o.p_range, o.noise, o.rate, o.upper_bound, o.source)
    }
}

impl RateRow {
    /// Whether `p` lies in the row's range for dimension `dim`.
    pub fn contains(&self, p: f64, dim: usize) -> bool {
        p > 1.0 && (self.contains)(p, dim as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateTables {
    pub convergence: Vec<RateRow>,
    pub mixing: Vec<RateRow>,
}

fn m(d: f64) -> f64 {
    1f64.max(2.0 * d / (d + 2.0))
}

fn s(d: f64) -> f64 {
    1f64.max(2.0 - 4.0 / d)
}

const RANGES: [(&str, fn(f64, f64) -> bool); 7] = [
    ("(2,inf)", |p, _| p > 2.0),
    ("{2}", |p, _| p == 2.0),
    ("[1 v 2d/(d+2),2)", |p, d| p >= m(d) && p < 2.0),
    ("[1 v (2-4/d),1 v 2d/(d+2)) n (1,2)", |p, d| p >= s(d) && p < m(d) && p < 2.0),
    ("(1 v 2d/(d+2),2) n [sqrt(2),2)", |p, d| p > m(d) && p >= SQRT_2 && p < 2.0),
    ("(1 v 2d/(d+2),sqrt(2))", |p, d| p > m(d) && p < SQRT_2),
    ("[1 v (2-4/d),2) n (1,2)", |p, d| p >= s(d) && p < 2.0),
];

const LOG_BOUND: &str = "C + (1/lambda)*log(1/eps)";

fn row(range: usize, noise: NoiseClass, rate: &'static str, upper: &'static str, source: &'static str) -> RateRow {
    RateRow {
        p_range: RANGES[range].0,
        noise,
        rate,
        upper_bound: upper,
        source,
        contains: RANGES[range].1,
    }
}

fn mixing_rows() -> Vec<RateRow> {
    use NoiseClass::*;
    vec![
        row(0, Zero, "t^(-1/(p-2))", "C*eps^(2-p)", "deterministic-polynomial-contraction"),
        row(1, Zero, "exp(-lambda*t)", LOG_BOUND, "heat-exponential"),
        row(2, Zero, "exp(-lambda*t)", LOG_BOUND, "deterministic-exponential-contraction"),
        row(3, Zero, "t^(-p/(2-p))", "C*eps^((2-p)/p)", "sublinear-singular-decay"),
        row(0, Degenerate, "t^(-1/(p-2))", "C*eps^(2-p)", "degenerate-noise-polynomial-coupling"),
        row(1, Degenerate, "exp(-lambda*t)", LOG_BOUND, "heat-exponential"),
        row(4, Degenerate, "t^(-1/2)", "C*eps^(-2)", "singular-lp-coupling"),
        row(5, Degenerate, "t^(-p^2/4)", "C*eps^(-4/p^2)", "singular-lp-coupling"),
        row(6, DegenerateRegular, "t^(-p/(2-p))", "C*eps^((2-p)/p)", "sublinear-singular-decay"),
        row(0, NonDegenerate, "exp(-lambda*t)", LOG_BOUND, "nondegenerate-exponential-ergodicity"),
    ]
}

/// Both tables, row for row: rates without bounds, then rates with the
/// mixing-time upper bound.
pub fn rate_table() -> RateTables {
    let mixing = mixing_rows();
    let convergence = mixing.iter().map(|r| RateRow { upper_bound: "", ..*r }).collect();
    RateTables { convergence, mixing }
}

/// Rows of `rows` whose range and noise class cover `(p, dim, noise)`.
pub fn matching_rows(rows: &[RateRow], p: f64, dim: usize, noise: NoiseClass) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.noise == noise && r.contains(p, dim))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_rows() {
        let t = rate_table();
        assert_eq!(t.convergence.len(), 10);
        assert_eq!(t.mixing.len(), 10);
        let r = &t.mixing[0];
        assert_eq!((r.p_range, r.noise, r.rate, r.upper_bound), ("(2,inf)", NoiseClass::Zero, "t^(-1/(p-2))", "C*eps^(2-p)"));
        let r = &t.mixing[5];
        assert_eq!((r.p_range, r.rate, r.upper_bound), ("{2}", "exp(-lambda*t)", "C + (1/lambda)*log(1/eps)"));
        assert_eq!(r.noise, NoiseClass::Degenerate);
        let r = &t.mixing[6];
        assert_eq!((r.rate, r.upper_bound), ("t^(-1/2)", "C*eps^(-2)"));
        assert!(t.convergence.iter().all(|r| r.upper_bound.is_empty()));
    }

    #[test]
    fn ranges_by_dimension() {
        let t = rate_table().mixing;
        assert_eq!(matching_rows(&t, 4.0, 1, NoiseClass::Zero), vec![0]);
        assert_eq!(matching_rows(&t, 2.0, 2, NoiseClass::Degenerate), vec![5]);
        assert_eq!(matching_rows(&t, 1.7, 1, NoiseClass::Zero), vec![2]);
        assert_eq!(matching_rows(&t, 1.7, 1, NoiseClass::Degenerate), vec![6]);
        assert_eq!(matching_rows(&t, 1.2, 1, NoiseClass::Degenerate), vec![7]);
        // the sublinear range is empty in one and two dimensions
        for p in [1.01, 1.2, 1.5, 1.99] {
            for d in [1, 2] {
                assert!(!t[3].contains(p, d));
            }
        }
        assert!(t[3].contains(1.1, 3));
    }
}
