//! Instrumented copies of the reference kernels, restricted to sampled target
//! nodes. Values follow the reference arithmetic exactly; events follow the
//! loop structure: one branch per loop iteration, one memory event per array
//! element touched, one compute event per scalar operation.

use super::{Access, Trace, TraceEvent, REGION_ALIGN};
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::model::{Dims, ModelKind};
use crate::reference::{
    elu, gat_project, gated_edge_update, gated_node_update, leaky_relu, monet_gaussian,
    monet_pseudo_projection, relu, EdgeFeatures, GatParams, GatedParams, GcnParams, GinParams,
    ModelParams, MonetParams, SageParams,
};
use crate::tensor::{FeatureMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceOptions {
    /// Address of the first region; every region moves with it.
    pub origin: u64,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    base: u64,
}

struct Tracer {
    events: Vec<TraceEvent>,
    next: u64,
}

impl Tracer {
    fn new(origin: u64) -> Self {
        Tracer {
            events: Vec::new(),
            next: origin,
        }
    }

    fn region(&mut self, len: usize) -> Region {
        let base = self.next;
        let blocks = (len as u64).div_ceil(REGION_ALIGN).max(1);
        self.next += blocks * REGION_ALIGN;
        Region { base }
    }

    fn branch(&mut self) {
        self.events.push(TraceEvent::Branch);
    }

    fn compute(&mut self, count: usize) {
        self.events.extend(std::iter::repeat_n(TraceEvent::Compute, count));
    }

    fn read(&mut self, r: Region, idx: usize) {
        self.events.push(TraceEvent::Memory {
            addr: r.base + idx as u64,
            access: Access::Read,
        });
    }

    fn write(&mut self, r: Region, idx: usize) {
        self.events.push(TraceEvent::Memory {
            addr: r.base + idx as u64,
            access: Access::Write,
        });
    }
}

/// Regions shared by every kernel.
struct Graph<'a> {
    g: &'a CsrGraph,
    offsets: Region,
    cols: Region,
}

impl<'a> Graph<'a> {
    fn new(t: &mut Tracer, g: &'a CsrGraph) -> Self {
        Graph {
            g,
            offsets: t.region(g.num_nodes() + 1),
            cols: t.region(g.num_edges()),
        }
    }

    /// Reads the row bounds of `i`.
    fn row(&self, t: &mut Tracer, i: usize) -> std::ops::Range<usize> {
        t.read(self.offsets, i);
        t.read(self.offsets, i + 1);
        self.g.edge_range(i)
    }

    /// Loop head of one neighbor iteration: reads the column index.
    fn neighbor(&self, t: &mut Tracer, e: usize) -> usize {
        t.branch();
        t.read(self.cols, e);
        self.g.col_indices()[e] as usize
    }
}

fn matrix(t: &mut Tracer, m: &Matrix) -> Region {
    t.region(m.rows() * m.cols())
}

fn load_row(t: &mut Tracer, r: Region, m: &Matrix, row: usize) -> Vec<f32> {
    let cols = m.cols();
    for c in 0..cols {
        t.branch();
        t.read(r, row * cols + c);
    }
    m.row(row).to_vec()
}

fn vmm(t: &mut Tracer, x: &[f32], w: &Matrix, wr: Region, out: &mut [f32]) {
    for (r, slot) in out.iter_mut().enumerate() {
        t.branch();
        let row = w.row(r);
        let mut acc = 0.0f32;
        for c in 0..row.len() {
            t.branch();
            t.read(wr, r * row.len() + c);
            t.compute(2);
            acc += row[c] * x[c];
        }
        *slot = acc;
    }
}

fn neighbor_sum(t: &mut Tracer, gr: &Graph, hr: Region, h: &Matrix, i: usize, acc: &mut [f32]) {
    let d = h.cols();
    acc.fill(0.0);
    for e in gr.row(t, i) {
        let j = gr.neighbor(t, e);
        for (c, x) in h.row(j).iter().enumerate() {
            t.branch();
            t.read(hr, j * d + c);
            t.compute(1);
            acc[c] += x;
        }
    }
}

fn store(t: &mut Tracer, r: Region, width: usize, i: usize, values: &[f32], ops: usize, out: &mut [f32]) {
    for (c, (o, v)) in out.iter_mut().zip(values).enumerate() {
        t.branch();
        t.compute(ops);
        *o = *v;
        t.write(r, i * width + c);
    }
}

fn check_inputs(
    g: &CsrGraph,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
    nodes: &[u32],
) -> Result<Dims> {
    let dims = match params {
        ModelParams::Gcn(p) => Dims::square(p.u.rows()),
        ModelParams::GraphSage(p) => Dims::square(p.v.rows()),
        ModelParams::Gin(p) => Dims::square(p.u.rows()),
        ModelParams::Gat(p) => {
            let (out, input) = p.u.first().map(Matrix::shape).unwrap_or((0, 0));
            Dims::new(input, p.heads(), out)
        }
        ModelParams::MoNet(p) => {
            let d = p.u.first().map(Matrix::rows).unwrap_or(0);
            Dims::new(d, p.heads(), d)
        }
        ModelParams::GatedGcn(p) => Dims::square(p.a.rows()),
    };
    params.validate(dims)?;
    if h.shape() != (g.num_nodes(), dims.input) {
        return Err(Error::Dimension(format!(
            "features are {}x{}, expected {}x{}",
            h.rows(),
            h.cols(),
            g.num_nodes(),
            dims.input
        )));
    }
    if params.kind() == ModelKind::GatedGcn {
        let e = edge_features
            .ok_or_else(|| Error::Invalid("GatedGCN requires edge features".into()))?;
        if e.shape() != (g.num_edges(), dims.input) {
            return Err(Error::Dimension(format!(
                "edge features are {}x{}, expected {}x{}",
                e.rows(),
                e.cols(),
                g.num_edges(),
                dims.input
            )));
        }
    }
    if let Some(&bad) = nodes.iter().find(|&&v| v as usize >= g.num_nodes()) {
        return Err(Error::NodeOutOfRange {
            node: bad as u64,
            num_nodes: g.num_nodes(),
        });
    }
    Ok(dims)
}

/// Traces the layer over the target nodes in `nodes`, in the given order.
pub fn run_traced(
    g: &CsrGraph,
    graph_name: &str,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
    nodes: &[u32],
) -> Result<Trace> {
    run_traced_with(g, graph_name, h, params, edge_features, nodes, TraceOptions::default())
        .map(|(trace, _)| trace)
}

/// [`run_traced`] with explicit options; also returns the traced output row
/// of every sampled node, in sample order.
pub fn run_traced_with(
    g: &CsrGraph,
    graph_name: &str,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
    nodes: &[u32],
    options: TraceOptions,
) -> Result<(Trace, Matrix)> {
    let dims = check_inputs(g, h, params, edge_features, nodes)?;
    let kind = params.kind();
    let mut out = Matrix::zeros(nodes.len(), kind.output_width(dims));
    let mut t = Tracer::new(options.origin);
    if !nodes.is_empty() {
        let gr = Graph::new(&mut t, g);
        let hr = matrix(&mut t, h);
        let cx = Cx { gr, h, hr, nodes };
        match params {
            ModelParams::Gcn(p) => gcn(&mut t, &cx, p, &mut out),
            ModelParams::GraphSage(p) => sage(&mut t, &cx, p, &mut out),
            ModelParams::Gin(p) => gin(&mut t, &cx, p, &mut out),
            ModelParams::Gat(p) => gat(&mut t, &cx, p, &mut out)?,
            ModelParams::MoNet(p) => monet(&mut t, &cx, p, &mut out),
            ModelParams::GatedGcn(p) => {
                gated(&mut t, &cx, p, edge_features.expect("checked"), &mut out)
            }
        }
    }
    let trace = Trace {
        model: kind,
        graph: graph_name.to_string(),
        nodes: nodes.to_vec(),
        events: t.events,
    };
    Ok((trace, out))
}

struct Cx<'a> {
    gr: Graph<'a>,
    h: &'a Matrix,
    hr: Region,
    nodes: &'a [u32],
}

fn gcn(t: &mut Tracer, cx: &Cx, p: &GcnParams, out: &mut Matrix) {
    let d = p.u.rows();
    let ur = matrix(t, &p.u);
    let or = t.region(cx.gr.g.num_nodes() * d);
    let mut agg = vec![0.0; d];
    let mut y = vec![0.0; d];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        neighbor_sum(t, &cx.gr, cx.hr, cx.h, i, &mut agg);
        vmm(t, &agg, &p.u, ur, &mut y);
        y.iter_mut().for_each(|v| *v = relu(*v));
        store(t, or, d, i, &y, 1, out.row_mut(s));
    }
}

fn sage(t: &mut Tracer, cx: &Cx, p: &SageParams, out: &mut Matrix) {
    let d = p.v.rows();
    let vr = matrix(t, &p.v);
    let wr = matrix(t, &p.w);
    let or = t.region(cx.gr.g.num_nodes() * d);
    let mut agg = vec![0.0; d];
    let mut target = vec![0.0; d];
    let mut neigh = vec![0.0; d];
    let mut y = vec![0.0; d];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        neighbor_sum(t, &cx.gr, cx.hr, cx.h, i, &mut agg);
        let deg = cx.gr.g.degree(i);
        if deg > 0 {
            for a in agg.iter_mut() {
                t.branch();
                t.compute(1);
                *a /= deg as f32;
            }
        }
        let hi = load_row(t, cx.hr, cx.h, i);
        vmm(t, &hi, &p.v, vr, &mut target);
        vmm(t, &agg, &p.w, wr, &mut neigh);
        for c in 0..d {
            y[c] = relu(target[c] + neigh[c]);
        }
        store(t, or, d, i, &y, 2, out.row_mut(s));
    }
}

fn gin(t: &mut Tracer, cx: &Cx, p: &GinParams, out: &mut Matrix) {
    let d = p.u.rows();
    let vr = matrix(t, &p.v);
    let ur = matrix(t, &p.u);
    let or = t.region(cx.gr.g.num_nodes() * d);
    let scale = 1.0 + p.eps;
    let mut agg = vec![0.0; d];
    let mut hidden = vec![0.0; d];
    let mut y = vec![0.0; d];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        neighbor_sum(t, &cx.gr, cx.hr, cx.h, i, &mut agg);
        let hi = load_row(t, cx.hr, cx.h, i);
        for (a, x) in agg.iter_mut().zip(&hi) {
            t.branch();
            t.compute(2);
            *a += scale * x;
        }
        vmm(t, &agg, &p.v, vr, &mut hidden);
        for v in hidden.iter_mut() {
            t.branch();
            t.compute(1);
            *v = relu(*v);
        }
        vmm(t, &hidden, &p.u, ur, &mut y);
        y.iter_mut().for_each(|v| *v = relu(*v));
        store(t, or, d, i, &y, 1, out.row_mut(s));
    }
}

fn gat(t: &mut Tracer, cx: &Cx, p: &GatParams, out: &mut Matrix) -> Result<()> {
    let g = cx.gr.g;
    let n = g.num_nodes();
    let heads = p.heads();
    let d_out = p.a_src.cols();
    let width = heads * d_out;
    let ur: Vec<Region> = p.u.iter().map(|m| matrix(t, m)).collect();
    let asr = matrix(t, &p.a_src);
    let adr = matrix(t, &p.a_dest);
    let zr = t.region(n * width);
    let ssr = t.region(n * heads);
    let sdr = t.region(n * heads);
    let or = t.region(n * width);

    // Kernel 1 over the sample. Neighbors outside the sample read the
    // projections kernel 1 would have written for them.
    let mut zk = vec![0.0; d_out];
    for &i in cx.nodes {
        let i = i as usize;
        t.branch();
        let hi = load_row(t, cx.hr, cx.h, i);
        for k in 0..heads {
            t.branch();
            vmm(t, &hi, &p.u[k], ur[k], &mut zk);
            for c in 0..d_out {
                t.branch();
                t.write(zr, i * width + k * d_out + c);
            }
            for ar in [asr, adr] {
                for c in 0..d_out {
                    t.branch();
                    t.read(ar, k * d_out + c);
                    t.compute(2);
                }
            }
            t.write(ssr, i * heads + k);
            t.write(sdr, i * heads + k);
        }
    }
    let proj = gat_project(g, cx.h, p)?;

    let mut scores = Vec::new();
    let mut row = vec![0.0f32; width];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        let range = cx.gr.row(t, i);
        row.fill(0.0);
        for k in 0..heads {
            t.branch();
            t.read(ssr, i * heads + k);
            scores.clear();
            for e in range.clone() {
                let j = cx.gr.neighbor(t, e);
                t.read(sdr, j * heads + k);
                t.compute(2);
                scores.push(leaky_relu(proj.s_src.get(i, k) + proj.s_dest.get(j, k), p.leaky_slope));
            }
            let mut max = f32::NEG_INFINITY;
            for &x in &scores {
                t.branch();
                t.compute(1);
                max = max.max(x);
            }
            let mut denom = 0.0f32;
            for x in scores.iter_mut() {
                t.branch();
                t.compute(3);
                *x = (*x - max).exp();
                denom += *x;
            }
            let acc = &mut row[k * d_out..(k + 1) * d_out];
            for (e, &weight) in range.clone().zip(&scores) {
                let j = cx.gr.neighbor(t, e);
                t.compute(1);
                let alpha = weight / denom;
                let zj = &proj.z.row(j)[k * d_out..(k + 1) * d_out];
                for (c, (a, z)) in acc.iter_mut().zip(zj).enumerate() {
                    t.branch();
                    t.read(zr, j * width + k * d_out + c);
                    t.compute(2);
                    *a += alpha * z;
                }
            }
            for (c, v) in acc.iter_mut().enumerate() {
                t.branch();
                t.compute(1);
                *v = elu(*v);
                t.write(or, i * width + k * d_out + c);
            }
        }
        out.row_mut(s).copy_from_slice(&row);
    }
    Ok(())
}

fn monet(t: &mut Tracer, cx: &Cx, p: &MonetParams, out: &mut Matrix) {
    let g = cx.gr.g;
    let heads = p.heads();
    let d = cx.h.cols();
    let pwr = matrix(t, &p.pseudo_weight);
    let pbr = t.region(2);
    let mur = matrix(t, &p.mu);
    let sir = matrix(t, &p.sigma_inv);
    let ur: Vec<Region> = p.u.iter().map(|m| matrix(t, m)).collect();
    let or = t.region(g.num_nodes() * d);
    let degree = |v: usize| g.degree(v).max(1) as f32;
    let mut acc = vec![0.0f32; heads * d];
    let mut projected = vec![0.0f32; d];
    let mut y = vec![0.0f32; d];
    let mut w = vec![0.0f32; heads];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        acc.fill(0.0);
        for e in cx.gr.row(t, i) {
            let j = cx.gr.neighbor(t, e);
            // Pseudo-coordinates from the two degrees.
            cx.gr.row(t, i);
            cx.gr.row(t, j);
            t.compute(6);
            let pseudo = [degree(i).powf(-0.5), degree(j).powf(0.5)];
            let mut lin = [0.0f32; 2];
            vmm(t, &pseudo, &p.pseudo_weight, pwr, &mut lin);
            for c in 0..2 {
                t.branch();
                t.read(pbr, c);
                t.compute(2);
            }
            let u = monet_pseudo_projection(p, pseudo);
            for (k, wk) in w.iter_mut().enumerate() {
                t.branch();
                for c in 0..2 {
                    t.branch();
                    t.read(mur, k * 2 + c);
                    t.read(sir, k * 2 + c);
                    t.compute(4);
                }
                t.compute(2);
                *wk = monet_gaussian(p, u, k);
            }
            let hj = cx.h.row(j);
            for (k, &wk) in w.iter().enumerate() {
                t.branch();
                for (c, (a, x)) in acc[k * d..(k + 1) * d].iter_mut().zip(hj).enumerate() {
                    t.branch();
                    t.read(cx.hr, j * d + c);
                    t.compute(2);
                    *a += wk * x;
                }
            }
        }
        y.fill(0.0);
        for k in 0..heads {
            t.branch();
            vmm(t, &acc[k * d..(k + 1) * d], &p.u[k], ur[k], &mut projected);
            for (o, v) in y.iter_mut().zip(&projected) {
                t.branch();
                t.compute(1);
                *o += v;
            }
        }
        y.iter_mut().for_each(|v| *v = relu(*v));
        store(t, or, d, i, &y, 1, out.row_mut(s));
    }
}

fn gated(t: &mut Tracer, cx: &Cx, p: &GatedParams, edges: &EdgeFeatures, out: &mut Matrix) {
    let g = cx.gr.g;
    let d = p.a.rows();
    let [ar, br, cr, dr, er] = [&p.a, &p.b, &p.c, &p.d, &p.e].map(|m| matrix(t, m));
    let efr = matrix(t, edges);
    let or = t.region(g.num_nodes() * d);
    let oer = t.region(g.num_edges() * d);
    let mut ah = vec![0.0; d];
    let mut eh = vec![0.0; d];
    let mut bh = vec![0.0; d];
    let mut dh = vec![0.0; d];
    let mut ce = vec![0.0; d];
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    let mut e_new = vec![0.0; d];
    let mut y = vec![0.0; d];
    for (s, &i) in cx.nodes.iter().enumerate() {
        let i = i as usize;
        t.branch();
        let hi = load_row(t, cx.hr, cx.h, i);
        vmm(t, &hi, &p.a, ar, &mut ah);
        vmm(t, &hi, &p.e, er, &mut eh);
        num.fill(0.0);
        den.fill(0.0);
        for e in cx.gr.row(t, i) {
            let j = cx.gr.neighbor(t, e);
            let hj = load_row(t, cx.hr, cx.h, j);
            vmm(t, &hj, &p.b, br, &mut bh);
            vmm(t, &hj, &p.d, dr, &mut dh);
            let ef = load_row(t, efr, edges, e);
            vmm(t, &ef, &p.c, cr, &mut ce);
            gated_edge_update(&eh, &bh, &dh, &ce, &mut e_new, &mut num, &mut den);
            for c in 0..d {
                t.branch();
                t.compute(6);
                t.write(oer, e * d + c);
            }
        }
        gated_node_update(&ah, &num, &den, p.eps, &mut y);
        store(t, or, d, i, &y, 4, out.row_mut(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_csr, EdgeList};
    use crate::reference::{forward, seeded_features};

    fn fixture() -> CsrGraph {
        let edges = vec![(1, 0), (2, 0), (3, 0), (0, 1), (3, 2), (4, 2), (0, 4), (1, 4), (2, 4)];
        build_csr(&EdgeList::new(6, edges).unwrap())
    }

    fn dims(kind: ModelKind) -> Dims {
        match kind {
            ModelKind::Gat => Dims::new(6, 2, 3),
            ModelKind::MoNet => Dims::new(4, 3, 4),
            _ => Dims::square(4),
        }
    }

    #[test]
    fn isolated_gcn_node_counts() {
        let g = build_csr(&EdgeList::new(2, vec![(0, 1)]).unwrap());
        let p = ModelParams::seeded(ModelKind::Gcn, Dims::square(2), 1).unwrap();
        let h = seeded_features(2, 2, 2);
        let t = run_traced(&g, "t", &h, &p, None, &[0]).unwrap();
        let count = |f: fn(&TraceEvent) -> bool| t.events.iter().filter(|e| f(e)).count();
        assert_eq!(count(|e| matches!(e, TraceEvent::Branch)), 9);
        assert_eq!(count(|e| matches!(e, TraceEvent::Memory { .. })), 8);
        assert_eq!(count(|e| matches!(e, TraceEvent::Compute)), 10);
        let u_base = 3 * REGION_ALIGN;
        let u_reads = t.addresses().filter(|a| (u_base..u_base + 4).contains(a)).count();
        assert_eq!(u_reads, 4);
    }

    #[test]
    fn traced_values_match_reference() {
        let g = fixture();
        for kind in ModelKind::ALL {
            let dims = dims(kind);
            let p = ModelParams::seeded(kind, dims, 3).unwrap();
            let h = seeded_features(6, dims.input, 4);
            let ef = seeded_features(g.num_edges(), dims.input, 5);
            let ef = (kind == ModelKind::GatedGcn).then_some(&ef);
            let expected = forward(&g, &h, &p, ef).unwrap().nodes;
            let nodes = [4, 0, 5, 2, 4];
            let (t, out) =
                run_traced_with(&g, "t", &h, &p, ef, &nodes, TraceOptions::default()).unwrap();
            assert!(!t.is_empty());
            for (s, &i) in nodes.iter().enumerate() {
                assert_eq!(out.row(s), expected.row(i as usize), "{kind} node {i}");
            }
        }
    }

    #[test]
    fn empty_sample_and_determinism() {
        let g = fixture();
        for kind in ModelKind::ALL {
            let dims = dims(kind);
            let p = ModelParams::seeded(kind, dims, 3).unwrap();
            let h = seeded_features(6, dims.input, 4);
            let ef = seeded_features(g.num_edges(), dims.input, 5);
            let ef = (kind == ModelKind::GatedGcn).then_some(&ef);
            assert!(run_traced(&g, "t", &h, &p, ef, &[]).unwrap().is_empty());
            let a = run_traced(&g, "t", &h, &p, ef, &[1, 3]).unwrap();
            assert_eq!(a, run_traced(&g, "t", &h, &p, ef, &[1, 3]).unwrap());
        }
    }

    #[test]
    fn shifted_origin_moves_every_address() {
        let g = fixture();
        let p = ModelParams::seeded(ModelKind::Gat, dims(ModelKind::Gat), 3).unwrap();
        let h = seeded_features(6, 6, 4);
        let base = run_traced(&g, "t", &h, &p, None, &[0, 2]).unwrap();
        let opts = TraceOptions { origin: 12345 };
        let (moved, _) = run_traced_with(&g, "t", &h, &p, None, &[0, 2], opts).unwrap();
        let shifted: Vec<u64> = base.addresses().map(|a| a + 12345).collect();
        assert_eq!(moved.addresses().collect::<Vec<_>>(), shifted);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = fixture();
        let p = ModelParams::seeded(ModelKind::Gcn, Dims::square(4), 3).unwrap();
        let h = seeded_features(6, 4, 4);
        assert!(matches!(
            run_traced(&g, "t", &h, &p, None, &[6]),
            Err(Error::NodeOutOfRange { node: 6, .. })
        ));
        let narrow = seeded_features(6, 3, 4);
        assert!(run_traced(&g, "t", &narrow, &p, None, &[0]).is_err());
        let gated = ModelParams::seeded(ModelKind::GatedGcn, Dims::square(4), 3).unwrap();
        assert!(run_traced(&g, "t", &h, &gated, None, &[0]).is_err());
    }
}
