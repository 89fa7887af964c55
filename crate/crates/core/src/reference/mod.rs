//! Sequential implementations of the six layers.
//!
//! These are the ground truth for the dataflow engine and the execution the
//! characterizer instruments. Loops run in ascending node, neighbor and column
//! order so results are bit-stable on a given platform.

mod activation;
mod params;

pub use activation::{elu, leaky_relu, relu, sigmoid, Activation};
pub use params::{
    seeded_features, GatParams, GatedParams, GcnParams, GinParams, Manifest, ModelParams,
    MonetParams, SageParams, DEFAULT_GATED_EPS, DEFAULT_GIN_EPS, DEFAULT_LEAKY_SLOPE,
};

use crate::error::{Error, Result};
use crate::graph::{pseudo_coordinates, CsrGraph};
use crate::tensor::{vmm_into, FeatureMatrix, Matrix};

/// Per-edge features in CSR edge order, `m x d`.
pub type EdgeFeatures = Matrix;

/// Updated node features plus, for GatedGCN, updated edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub nodes: FeatureMatrix,
    pub edges: Option<EdgeFeatures>,
}

fn check_features(g: &CsrGraph, h: &FeatureMatrix, width: usize) -> Result<()> {
    if h.rows() != g.num_nodes() || h.cols() != width {
        return Err(Error::Dimension(format!(
            "features are {}x{}, expected {}x{width}",
            h.rows(),
            h.cols(),
            g.num_nodes()
        )));
    }
    Ok(())
}

fn square_width(m: &Matrix, name: &str) -> Result<usize> {
    if m.rows() != m.cols() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    Ok(m.rows())
}

/// Sum of neighbor rows, ascending neighbor order.
pub(crate) fn neighbor_sum(g: &CsrGraph, h: &FeatureMatrix, node: usize, acc: &mut [f32]) {
    acc.fill(0.0);
    for &j in g.neighbors(node) {
        for (a, x) in acc.iter_mut().zip(h.row(j as usize)) {
            *a += x;
        }
    }
}

pub fn forward(
    g: &CsrGraph,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
) -> Result<LayerOutput> {
    let nodes_only = |nodes| LayerOutput { nodes, edges: None };
    match params {
        ModelParams::Gcn(p) => gcn_forward(g, h, p).map(nodes_only),
        ModelParams::GraphSage(p) => sage_forward(g, h, p).map(nodes_only),
        ModelParams::Gin(p) => gin_forward(g, h, p).map(nodes_only),
        ModelParams::Gat(p) => gat_forward(g, h, p).map(nodes_only),
        ModelParams::MoNet(p) => monet_forward(g, h, p).map(nodes_only),
        ModelParams::GatedGcn(p) => {
            let e = edge_features
                .ok_or_else(|| Error::Invalid("GatedGCN requires edge features".into()))?;
            let (nodes, edges) = gatedgcn_forward(g, h, e, p)?;
            Ok(LayerOutput {
                nodes,
                edges: Some(edges),
            })
        }
    }
}

/// `h_i' = ReLU(U * sum_{j in N_i} h_j)`.
pub fn gcn_forward(g: &CsrGraph, h: &FeatureMatrix, p: &GcnParams) -> Result<FeatureMatrix> {
    let d = square_width(&p.u, "U")?;
    check_features(g, h, d)?;
    let mut out = Matrix::zeros(g.num_nodes(), d);
    let mut agg = vec![0.0; d];
    for i in 0..g.num_nodes() {
        neighbor_sum(g, h, i, &mut agg);
        let row = out.row_mut(i);
        vmm_into(&agg, &p.u, row);
        row.iter_mut().for_each(|v| *v = relu(*v));
    }
    Ok(out)
}

/// Mean over an empty neighborhood is the zero vector.
pub(crate) fn mean_in_place(acc: &mut [f32], degree: usize) {
    if degree > 0 {
        let deg = degree as f32;
        acc.iter_mut().for_each(|v| *v /= deg);
    }
}

/// `h_i' = ReLU(V h_i + W mean_{j in N_i} h_j)`.
pub fn sage_forward(g: &CsrGraph, h: &FeatureMatrix, p: &SageParams) -> Result<FeatureMatrix> {
    let d = square_width(&p.v, "V")?;
    if p.w.shape() != (d, d) {
        return Err(Error::Dimension("V and W must have the same shape".into()));
    }
    check_features(g, h, d)?;
    let mut out = Matrix::zeros(g.num_nodes(), d);
    let mut agg = vec![0.0; d];
    let mut target = vec![0.0; d];
    let mut neigh = vec![0.0; d];
    for i in 0..g.num_nodes() {
        neighbor_sum(g, h, i, &mut agg);
        mean_in_place(&mut agg, g.degree(i));
        vmm_into(h.row(i), &p.v, &mut target);
        vmm_into(&agg, &p.w, &mut neigh);
        for ((o, t), n) in out.row_mut(i).iter_mut().zip(&target).zip(&neigh) {
            *o = relu(t + n);
        }
    }
    Ok(out)
}

/// `h_i' = ReLU(U ReLU(V ((1 + eps) h_i + sum_{j in N_i} h_j)))`.
pub fn gin_forward(g: &CsrGraph, h: &FeatureMatrix, p: &GinParams) -> Result<FeatureMatrix> {
    let d = square_width(&p.u, "U")?;
    if p.v.shape() != (d, d) {
        return Err(Error::Dimension("U and V must have the same shape".into()));
    }
    check_features(g, h, d)?;
    let scale = 1.0 + p.eps;
    let mut out = Matrix::zeros(g.num_nodes(), d);
    let mut agg = vec![0.0; d];
    let mut hidden = vec![0.0; d];
    for i in 0..g.num_nodes() {
        neighbor_sum(g, h, i, &mut agg);
        for (a, x) in agg.iter_mut().zip(h.row(i)) {
            *a += scale * x;
        }
        vmm_into(&agg, &p.v, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = relu(*v));
        let row = out.row_mut(i);
        vmm_into(&hidden, &p.u, row);
        row.iter_mut().for_each(|v| *v = relu(*v));
    }
    Ok(out)
}

/// Node-wise GAT projections: `z` (`n x K*d_out`, heads concatenated) and the
/// per-head attention halves `s_src[i,k] = a_src^k . z_i^k`,
/// `s_dest[i,k] = a_dest^k . z_i^k`.
pub(crate) struct GatProjection {
    pub z: Matrix,
    pub s_src: Matrix,
    pub s_dest: Matrix,
}

pub(crate) fn gat_project_row(
    p: &GatParams,
    h_row: &[f32],
    z_row: &mut [f32],
    s_src: &mut [f32],
    s_dest: &mut [f32],
) {
    let d_out = p.a_src.cols();
    for k in 0..p.heads() {
        let zk = &mut z_row[k * d_out..(k + 1) * d_out];
        vmm_into(h_row, &p.u[k], zk);
        s_src[k] = dot(p.a_src.row(k), zk);
        s_dest[k] = dot(p.a_dest.row(k), zk);
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for c in 0..a.len() {
        acc += a[c] * b[c];
    }
    acc
}

fn gat_dims(p: &GatParams) -> Result<(usize, usize, usize)> {
    let heads = p.heads();
    let first = p
        .u
        .first()
        .ok_or_else(|| Error::Dimension("GAT needs at least one head".into()))?;
    let (d_out, d_in) = first.shape();
    if p.u.iter().any(|m| m.shape() != (d_out, d_in))
        || p.a_src.shape() != (heads, d_out)
        || p.a_dest.shape() != (heads, d_out)
    {
        return Err(Error::Dimension("inconsistent GAT parameter shapes".into()));
    }
    Ok((heads, d_in, d_out))
}

pub(crate) fn gat_project(g: &CsrGraph, h: &FeatureMatrix, p: &GatParams) -> Result<GatProjection> {
    let (heads, d_in, d_out) = gat_dims(p)?;
    check_features(g, h, d_in)?;
    let n = g.num_nodes();
    let mut proj = GatProjection {
        z: Matrix::zeros(n, heads * d_out),
        s_src: Matrix::zeros(n, heads),
        s_dest: Matrix::zeros(n, heads),
    };
    for i in 0..n {
        gat_project_row(
            p,
            h.row(i),
            proj.z.row_mut(i),
            proj.s_src.row_mut(i),
            proj.s_dest.row_mut(i),
        );
    }
    Ok(proj)
}

/// Multi-head GAT; heads are concatenated in ascending order and each passes
/// through ELU. Attention is a max-subtracted softmax over `N_i`.
pub fn gat_forward(g: &CsrGraph, h: &FeatureMatrix, p: &GatParams) -> Result<FeatureMatrix> {
    let proj = gat_project(g, h, p)?;
    let (heads, _, d_out) = gat_dims(p)?;
    let mut out = Matrix::zeros(g.num_nodes(), heads * d_out);
    let mut scores = Vec::new();
    for i in 0..g.num_nodes() {
        let neighbors = g.neighbors(i);
        let row = out.row_mut(i);
        for k in 0..heads {
            scores.clear();
            scores.extend(neighbors.iter().map(|&j| {
                leaky_relu(
                    proj.s_src.get(i, k) + proj.s_dest.get(j as usize, k),
                    p.leaky_slope,
                )
            }));
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom += *s;
            }
            let acc = &mut row[k * d_out..(k + 1) * d_out];
            for (&j, &weight) in neighbors.iter().zip(&scores) {
                let alpha = weight / denom;
                let zj = &proj.z.row(j as usize)[k * d_out..(k + 1) * d_out];
                for (a, z) in acc.iter_mut().zip(zj) {
                    *a += alpha * z;
                }
            }
            acc.iter_mut().for_each(|v| *v = elu(*v));
        }
    }
    Ok(out)
}

/// Attention weights `alpha_ij` per head, CSR edge order (`m x K`).
pub fn gat_attention(g: &CsrGraph, h: &FeatureMatrix, p: &GatParams) -> Result<Matrix> {
    let proj = gat_project(g, h, p)?;
    let heads = p.heads();
    let mut alpha = Matrix::zeros(g.num_edges(), heads);
    for i in 0..g.num_nodes() {
        let range = g.edge_range(i);
        for k in 0..heads {
            let scores: Vec<f32> = g
                .neighbors(i)
                .iter()
                .map(|&j| {
                    leaky_relu(
                        proj.s_src.get(i, k) + proj.s_dest.get(j as usize, k),
                        p.leaky_slope,
                    )
                })
                .collect();
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = scores.iter().map(|s| (s - max).exp()).collect();
            let denom: f32 = exps.iter().sum();
            for (e, x) in range.clone().zip(exps) {
                alpha.set(e, k, x / denom);
            }
        }
    }
    Ok(alpha)
}

/// `u_ij = tanh(V pseudo_ij + v)`.
pub(crate) fn monet_pseudo_projection(p: &MonetParams, pseudo: [f32; 2]) -> [f32; 2] {
    let mut u = [0.0f32; 2];
    vmm_into(&pseudo, &p.pseudo_weight, &mut u);
    [
        (u[0] + p.pseudo_bias[0]).tanh(),
        (u[1] + p.pseudo_bias[1]).tanh(),
    ]
}

/// `w_k(u) = exp(-1/2 sum_c sigma_inv[k,c] (u_c - mu[k,c])^2)`.
pub(crate) fn monet_gaussian(p: &MonetParams, u: [f32; 2], k: usize) -> f32 {
    let mut acc = 0.0f32;
    for c in 0..2 {
        let diff = u[c] - p.mu.get(k, c);
        acc += p.sigma_inv.get(k, c) * diff * diff;
    }
    (-0.5 * acc).exp()
}

fn monet_dims(p: &MonetParams) -> Result<(usize, usize)> {
    let heads = p.heads();
    let first = p
        .u
        .first()
        .ok_or_else(|| Error::Dimension("MoNet needs at least one kernel".into()))?;
    let d = square_width(first, "U")?;
    if p.u.iter().any(|m| m.shape() != (d, d))
        || p.pseudo_weight.shape() != (2, 2)
        || p.mu.shape() != (heads, 2)
        || p.sigma_inv.shape() != (heads, 2)
    {
        return Err(Error::Dimension("inconsistent MoNet parameter shapes".into()));
    }
    Ok((heads, d))
}

/// Gaussian edge weights `w_k(u_ij)`, CSR edge order (`m x K`).
pub fn monet_edge_weights(g: &CsrGraph, p: &MonetParams) -> Result<Matrix> {
    let (heads, _) = monet_dims(p)?;
    let coords = pseudo_coordinates(g);
    let mut w = Matrix::zeros(g.num_edges(), heads);
    for (e, pseudo) in coords.into_iter().enumerate() {
        let u = monet_pseudo_projection(p, pseudo);
        for k in 0..heads {
            w.set(e, k, monet_gaussian(p, u, k));
        }
    }
    Ok(w)
}

/// MoNet with the per-kernel projection applied once per node after the
/// weighted neighbor sum: `ReLU(sum_k U^k sum_j w_k(u_ij) h_j)`.
pub fn monet_forward(g: &CsrGraph, h: &FeatureMatrix, p: &MonetParams) -> Result<FeatureMatrix> {
    let (heads, d) = monet_dims(p)?;
    check_features(g, h, d)?;
    let weights = monet_edge_weights(g, p)?;
    let mut out = Matrix::zeros(g.num_nodes(), d);
    let mut acc = vec![0.0f32; heads * d];
    let mut projected = vec![0.0f32; d];
    for i in 0..g.num_nodes() {
        acc.fill(0.0);
        for (e, &j) in g.edge_range(i).zip(g.neighbors(i)) {
            let hj = h.row(j as usize);
            for k in 0..heads {
                let w = weights.get(e, k);
                for (a, x) in acc[k * d..(k + 1) * d].iter_mut().zip(hj) {
                    *a += w * x;
                }
            }
        }
        let row = out.row_mut(i);
        for k in 0..heads {
            vmm_into(&acc[k * d..(k + 1) * d], &p.u[k], &mut projected);
            for (o, y) in row.iter_mut().zip(&projected) {
                *o += y;
            }
        }
        row.iter_mut().for_each(|v| *v = relu(*v));
    }
    Ok(out)
}

/// GatedGCN. Returns updated node features and the updated edge features
/// `e_ij' = E h_i + D h_j + C e_ij` in CSR edge order.
pub fn gatedgcn_forward(
    g: &CsrGraph,
    h: &FeatureMatrix,
    edges: &EdgeFeatures,
    p: &GatedParams,
) -> Result<(FeatureMatrix, EdgeFeatures)> {
    let d = square_width(&p.a, "A")?;
    for m in [&p.b, &p.c, &p.d, &p.e] {
        if m.shape() != (d, d) {
            return Err(Error::Dimension("GatedGCN matrices must share one shape".into()));
        }
    }
    check_features(g, h, d)?;
    if edges.shape() != (g.num_edges(), d) {
        return Err(Error::Dimension(format!(
            "edge features are {}x{}, expected {}x{d}",
            edges.rows(),
            edges.cols(),
            g.num_edges()
        )));
    }
    let mut out = Matrix::zeros(g.num_nodes(), d);
    let mut out_edges = Matrix::zeros(g.num_edges(), d);
    let mut ah = vec![0.0; d];
    let mut eh = vec![0.0; d];
    let mut bh = vec![0.0; d];
    let mut dh = vec![0.0; d];
    let mut ce = vec![0.0; d];
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for i in 0..g.num_nodes() {
        vmm_into(h.row(i), &p.a, &mut ah);
        vmm_into(h.row(i), &p.e, &mut eh);
        num.fill(0.0);
        den.fill(0.0);
        for (e, &j) in g.edge_range(i).zip(g.neighbors(i)) {
            let hj = h.row(j as usize);
            vmm_into(hj, &p.b, &mut bh);
            vmm_into(hj, &p.d, &mut dh);
            vmm_into(edges.row(e), &p.c, &mut ce);
            gated_edge_update(&eh, &bh, &dh, &ce, out_edges.row_mut(e), &mut num, &mut den);
        }
        gated_node_update(&ah, &num, &den, p.eps, out.row_mut(i));
    }
    Ok((out, out_edges))
}

/// Writes `e_ij'` and folds `B h_j * sigma(e_ij')` and `sigma(e_ij')` into the
/// running numerator and denominator.
pub(crate) fn gated_edge_update(
    eh: &[f32],
    bh: &[f32],
    dh: &[f32],
    ce: &[f32],
    e_out: &mut [f32],
    num: &mut [f32],
    den: &mut [f32],
) {
    for c in 0..e_out.len() {
        let e_new = eh[c] + dh[c] + ce[c];
        e_out[c] = e_new;
        let gate = sigmoid(e_new);
        num[c] += bh[c] * gate;
        den[c] += gate;
    }
}

pub(crate) fn gated_node_update(ah: &[f32], num: &[f32], den: &[f32], eps: f32, out: &mut [f32]) {
    for c in 0..out.len() {
        out[c] = relu(ah[c] + num[c] / (den[c] + eps));
    }
}
