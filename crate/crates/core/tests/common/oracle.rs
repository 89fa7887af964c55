//! Brute-force f64 layers over a dense adjacency count matrix. Shares no code
//! with the library beyond reading parameter tensors.

use gnnflow::reference::ModelParams;
use gnnflow::{CsrGraph, Matrix};

type Vector = Vec<f64>;

fn row(m: &Matrix, r: usize) -> Vector {
    (0..m.cols()).map(|c| m.get(r, c) as f64).collect()
}

fn matvec(m: &Matrix, x: &[f64]) -> Vector {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) as f64 * x[c]).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn scale(a: &[f64], s: f64) -> Vector {
    a.iter().map(|x| x * s).collect()
}

fn relu(a: Vector) -> Vector {
    a.into_iter().map(|x| x.max(0.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `adj[i][j]` = number of edges `j -> i`.
pub fn dense_adjacency(g: &CsrGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut adj = vec![vec![0; n]; n];
    let offsets = g.row_offsets();
    for i in 0..n {
        for e in offsets[i]..offsets[i + 1] {
            adj[i][g.col_indices()[e] as usize] += 1;
        }
    }
    adj
}

/// Weighted neighbor sum `sum_j adj[i][j] * w(j) * h_j`.
fn gather(adj: &[Vec<usize>], h: &Matrix, i: usize, w: impl Fn(usize) -> f64) -> Vector {
    let mut acc = vec![0.0; h.cols()];
    for (j, &count) in adj[i].iter().enumerate() {
        if count > 0 {
            acc = add(&acc, &scale(&row(h, j), count as f64 * w(j)));
        }
    }
    acc
}

/// Node outputs and, for GatedGCN, edge outputs in CSR edge order.
pub fn oracle_forward(
    g: &CsrGraph,
    h: &Matrix,
    params: &ModelParams,
    edge_features: Option<&Matrix>,
) -> (Vec<Vector>, Option<Vec<Vector>>) {
    let n = g.num_nodes();
    let adj = dense_adjacency(g);
    let degree: Vec<usize> = adj.iter().map(|r| r.iter().sum()).collect();
    let nodes = |f: &dyn Fn(usize) -> Vector| (0..n).map(f).collect::<Vec<_>>();
    match params {
        ModelParams::Gcn(p) => (nodes(&|i| relu(matvec(&p.u, &gather(&adj, h, i, |_| 1.0)))), None),
        ModelParams::GraphSage(p) => (
            nodes(&|i| {
                let mean = scale(&gather(&adj, h, i, |_| 1.0), 1.0 / degree[i].max(1) as f64);
                relu(add(&matvec(&p.v, &row(h, i)), &matvec(&p.w, &mean)))
            }),
            None,
        ),
        ModelParams::Gin(p) => (
            nodes(&|i| {
                let x = add(&scale(&row(h, i), 1.0 + p.eps as f64), &gather(&adj, h, i, |_| 1.0));
                relu(matvec(&p.u, &relu(matvec(&p.v, &x))))
            }),
            None,
        ),
        ModelParams::Gat(p) => {
            let heads = p.u.len();
            let z: Vec<Vec<Vector>> = (0..n)
                .map(|j| (0..heads).map(|k| matvec(&p.u[k], &row(h, j))).collect())
                .collect();
            let dotp = |a: &Matrix, k: usize, v: &[f64]| -> f64 {
                row(a, k).iter().zip(v).map(|(x, y)| x * y).sum()
            };
            let slope = p.leaky_slope as f64;
            (
                nodes(&|i| {
                    let mut out = Vec::new();
                    for k in 0..heads {
                        let score = |j: usize| {
                            let s = dotp(&p.a_src, k, &z[i][k]) + dotp(&p.a_dest, k, &z[j][k]);
                            if s > 0.0 { s } else { slope * s }
                        };
                        let js: Vec<usize> = (0..n).filter(|&j| adj[i][j] > 0).collect();
                        let max = js.iter().map(|&j| score(j)).fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 =
                            js.iter().map(|&j| adj[i][j] as f64 * (score(j) - max).exp()).sum();
                        let mut acc = vec![0.0; z[i][k].len()];
                        for &j in &js {
                            let alpha = (score(j) - max).exp() / denom;
                            acc = add(&acc, &scale(&z[j][k], adj[i][j] as f64 * alpha));
                        }
                        out.extend(acc.into_iter().map(|x| if x > 0.0 { x } else { x.exp_m1() }));
                    }
                    out
                }),
                None,
            )
        }
        ModelParams::MoNet(p) => {
            let heads = p.u.len();
            let weight = |i: usize, j: usize, k: usize| {
                let pseudo = [
                    (degree[i].max(1) as f64).powf(-0.5),
                    (degree[j].max(1) as f64).powf(0.5),
                ];
                let lin = matvec(&p.pseudo_weight, &pseudo);
                let u: Vec<f64> = (0..2).map(|c| (lin[c] + p.pseudo_bias[c] as f64).tanh()).collect();
                let q: f64 = (0..2)
                    .map(|c| {
                        let diff = u[c] - p.mu.get(k, c) as f64;
                        p.sigma_inv.get(k, c) as f64 * diff * diff
                    })
                    .sum();
                (-0.5 * q).exp()
            };
            (
                nodes(&|i| {
                    let mut out = vec![0.0; h.cols()];
                    for k in 0..heads {
                        let acc = gather(&adj, h, i, |j| weight(i, j, k));
                        out = add(&out, &matvec(&p.u[k], &acc));
                    }
                    relu(out)
                }),
                None,
            )
        }
        ModelParams::GatedGcn(p) => {
            let ef = edge_features.expect("GatedGCN oracle needs edge features");
            let offsets = g.row_offsets();
            let m = g.num_edges();
            // Scan every edge slot to find its endpoints.
            let endpoints: Vec<(usize, usize)> = (0..m)
                .map(|e| {
                    let dst = (0..n).find(|&i| offsets[i] <= e && e < offsets[i + 1]).unwrap();
                    (g.col_indices()[e] as usize, dst)
                })
                .collect();
            let new_edge = |e: usize| {
                let (src, dst) = endpoints[e];
                add(
                    &add(&matvec(&p.e, &row(h, dst)), &matvec(&p.d, &row(h, src))),
                    &matvec(&p.c, &row(ef, e)),
                )
            };
            let edges: Vec<Vector> = (0..m).map(new_edge).collect();
            let out = nodes(&|i| {
                let d = h.cols();
                let mut num = vec![0.0; d];
                let mut den = vec![0.0; d];
                for e in (0..m).filter(|&e| endpoints[e].1 == i) {
                    let bh = matvec(&p.b, &row(h, endpoints[e].0));
                    for c in 0..d {
                        let gate = sigmoid(edges[e][c]);
                        num[c] += bh[c] * gate;
                        den[c] += gate;
                    }
                }
                let ah = matvec(&p.a, &row(h, i));
                relu((0..d).map(|c| ah[c] + num[c] / (den[c] + p.eps as f64)).collect())
            });
            (out, Some(edges))
        }
    }
}

/// Two passes: collect strides, then average `1/stride`.
pub fn spatial_oracle(addrs: &[u64]) -> f64 {
    let strides: Vec<u64> = addrs.windows(2).map(|w| w[0].abs_diff(w[1])).collect();
    let mut sum = 0.0;
    for &s in &strides {
        sum += if s == 0 { 0.0 } else { 1.0 / s as f64 };
    }
    sum / strides.len() as f64
}

/// Reuse distances by scanning backwards with a set, stopping at the cap
/// where every contribution is zero anyway.
pub fn temporal_oracle(addrs: &[u64], cap: u64) -> f64 {
    let log_cap = (cap as f64).log2();
    let mut sum = 0.0;
    for (pos, &a) in addrs.iter().enumerate() {
        let mut seen = std::collections::HashSet::new();
        for &b in addrs[..pos].iter().rev() {
            if b == a {
                let r = seen.len() as f64;
                sum += ((log_cap - (r + 1.0).log2()) / log_cap).max(0.0);
                break;
            }
            seen.insert(b);
            if seen.len() as u64 >= cap {
                break;
            }
        }
    }
    sum / addrs.len() as f64
}
