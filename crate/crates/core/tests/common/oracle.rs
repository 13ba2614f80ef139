//! Reference computations written without the library: Gauss-Jordan policy
//! evaluation and brute-force enumeration of deterministic policies.
//! Shared by the unit tests (through a `#[path]` include) and the
//! integration targets.

#![allow(dead_code)]

use rand::Rng;

/// Flat tensors, `index = (s * na + a) * ns + s'`.
#[derive(Debug, Clone)]
pub struct RawMdp {
    pub ns: usize,
    pub na: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
}

/// Random MDP with sparse rows, a few absorbing terminals and rewards in [-1, 1].
pub fn random_raw_mdp<R: Rng>(rng: &mut R, ns: usize, na: usize, gamma: f64) -> RawMdp {
    let mut terminal: Vec<bool> = (0..ns).map(|_| rng.gen_bool(0.2)).collect();
    terminal[0] = false;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if terminal[s] {
                p[base + s] = 1.0;
                continue;
            }
            let k = rng.gen_range(1..=ns.min(3));
            let mut weights = vec![0.0; ns];
            for _ in 0..k {
                weights[rng.gen_range(0..ns)] += rng.gen_range(0.1..1.0);
            }
            let total: f64 = weights.iter().sum();
            for t in 0..ns {
                if weights[t] > 0.0 {
                    p[base + t] = weights[t] / total;
                    r[base + t] = rng.gen_range(-1.0..1.0);
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.0..1.0)).collect();
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    RawMdp { ns, na, p, r, d, terminal, gamma }
}

/// Solve `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        for k in col..n {
            a[col][k] /= diag;
        }
        b[col] /= diag;
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in col..n {
                        a[row][k] -= f * a[col][k];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
    }
    b
}

/// `V^π` for a deterministic policy.
pub fn evaluate(m: &RawMdp, actions: &[usize]) -> Vec<f64> {
    let n = m.ns;
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s][s] += 1.0;
        let base = (s * m.na + actions[s]) * n;
        for t in 0..n {
            let p = m.p[base + t];
            b[s] += p * m.r[base + t];
            a[s][t] -= m.gamma * p;
        }
    }
    solve_dense(a, b)
}

pub fn performance(m: &RawMdp, actions: &[usize]) -> f64 {
    evaluate(m, actions).iter().zip(&m.d).map(|(v, d)| v * d).sum()
}

/// Every deterministic policy, in lexicographic order.
pub fn all_policies(ns: usize, na: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..ns {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<usize>| {
                (0..na).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// `(min J, max J)` over all deterministic policies.
pub fn brute_force_extremes(m: &RawMdp) -> (f64, f64) {
    all_policies(m.ns, m.na)
        .iter()
        .map(|pi| performance(m, pi))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), j| (lo.min(j), hi.max(j)))
}

/// Textbook policy iteration step: greedy on `Q^π` with first-maximum ties.
pub fn improve(m: &RawMdp, actions: &[usize]) -> Vec<usize> {
    let v = evaluate(m, actions);
    (0..m.ns)
        .map(|s| {
            let q: Vec<f64> = (0..m.na)
                .map(|a| {
                    let base = (s * m.na + a) * m.ns;
                    (0..m.ns).map(|t| m.p[base + t] * (m.r[base + t] + m.gamma * v[t])).sum()
                })
                .collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            q.iter().position(|&x| x >= best - 1e-9).unwrap()
        })
        .collect()
}

/// Shortest path lengths by breadth-first search over an adjacency list.
pub fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = std::collections::VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}
