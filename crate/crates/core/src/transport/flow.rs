//! Exact transport between finitely supported measures with arbitrary
//! weights, as a min-cost flow solved by successive shortest paths.

/// Optimal cost `min sum_ij pi_ij c_ij` over couplings of `a` and `b`.
///
/// `cost` is row-major `a.len() x b.len()` and non-negative; both weight
/// vectors must carry the same total mass. Shortest paths use Dijkstra on
/// reduced costs with node potentials; reduced costs that rounding pushes
/// below zero are clamped, so every predecessor graph is a tree.
pub fn transport_cost(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    assert_eq!(cost.len(), n * m, "cost matrix shape");
    let mut flow = vec![0.0; n * m];
    let mut supply: Vec<f64> = a.to_vec();
    let mut demand: Vec<f64> = b.to_vec();
    let total_mass: f64 = a.iter().sum();
    let eps = 1e-15 * total_mass.max(1.0);
    // nodes: source s, rows 0..n, columns n..n+m, sink t
    let s = n + m;
    let t = s + 1;
    let nodes = n + m + 2;
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![0.0; nodes];
    let mut done = vec![false; nodes];
    let mut pred = vec![usize::MAX; nodes];
    while supply.iter().any(|&v| v > eps) && demand.iter().any(|&v| v > eps) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        done.iter_mut().for_each(|d| *d = false);
        pred.iter_mut().for_each(|p| *p = usize::MAX);
        dist[s] = 0.0;
        loop {
            let Some(u) = (0..nodes)
                .filter(|&v| !done[v] && dist[v].is_finite())
                .min_by(|&x, &y| dist[x].total_cmp(&dist[y]).then(x.cmp(&y)))
            else {
                break;
            };
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut [f64], pred: &mut [usize]| {
                if done[v] {
                    return;
                }
                let nd = dist[u] + (c + pot[u] - pot[v]).max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    pred[v] = u;
                }
            };
            if u == s {
                for i in 0..n {
                    if supply[i] > eps {
                        relax(i, 0.0, &mut dist, &mut pred);
                    }
                }
            } else if u < n {
                for j in 0..m {
                    relax(n + j, cost[u * m + j], &mut dist, &mut pred);
                }
            } else if u < n + m {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] > eps {
                        relax(i, -cost[i * m + j], &mut dist, &mut pred);
                    }
                }
                if demand[j] > eps {
                    relax(t, 0.0, &mut dist, &mut pred);
                }
            }
        }
        if !dist[t].is_finite() {
            break;
        }
        let reach = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }
        // bottleneck along t <- col <- row <- ... <- row <- s
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            path.push(v);
            v = pred[v];
        }
        path.push(s);
        path.reverse();
        let first_row = path[1];
        let last_col = path[path.len() - 2] - n;
        let mut bottleneck = supply[first_row].min(demand[last_col]);
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] >= n {
                bottleneck = bottleneck.min(flow[w[1] * m + (w[0] - n)]);
            }
        }
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] < n {
                flow[w[0] * m + (w[1] - n)] += bottleneck;
            } else {
                let k = w[1] * m + (w[0] - n);
                flow[k] = (flow[k] - bottleneck).max(0.0);
            }
        }
        supply[first_row] -= bottleneck;
        demand[last_col] -= bottleneck;
    }
    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirac_to_two_points() {
        let c = transport_cost(&[1.0], &[0.25, 0.75], &[2.0, 4.0]);
        assert!((c - 3.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_equals_assignment() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let w = [1.0 / 3.0; 3];
        let c = transport_cost(&w, &w, &cost);
        assert!((c - 5.0 / 3.0).abs() < 1e-14, "{c}");
    }
}
