//! Functional streaming execution of a [`PipelineSpec`].

use std::sync::Mutex;

use super::spec::{PipelineSpec, StreamKind, Topology};
use super::stream::{run_round_robin, run_threaded, Emit, JoinStage, Kernel, StageLogic, Wiring};
use crate::error::{Error, Result};
use crate::graph::{partition_contiguous, pseudo_coordinates, CsrGraph};
use crate::model::ModelKind;
use crate::reference::{
    dot, elu, gated_edge_update, leaky_relu, monet_gaussian, monet_pseudo_projection, relu,
    EdgeFeatures, LayerOutput, ModelParams,
};
use crate::tensor::{vmm_into, FeatureMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheduler {
    /// One thread per stage instance, bounded blocking channels.
    #[default]
    Threaded,
    /// Deterministic single-threaded sweep.
    RoundRobin,
}

type Begin<'a, S> =
    Box<dyn FnMut(&mut S, &mut Emit<'_>, usize, &mut [Vec<f32>], &mut [Vec<f32>]) -> Result<()> + Send + 'a>;
type EdgeFn<'a, S> = Box<dyn FnMut(&mut S, &mut Emit<'_>, usize, usize, &mut [Vec<f32>]) -> Result<()> + Send + 'a>;
type End<'a, S> = Box<dyn FnMut(&mut S, &mut Emit<'_>, usize) -> Result<()> + Send + 'a>;

/// A kernel assembled from closures over a private state.
struct Fold<'a, S> {
    state: S,
    begin: Begin<'a, S>,
    edge: EdgeFn<'a, S>,
    end: End<'a, S>,
}

impl<'a, S: Send + 'a> Fold<'a, S> {
    fn new(state: S) -> Self {
        Self {
            state,
            begin: Box::new(|_, _, _, _, _| Ok(())),
            edge: Box::new(|_, _, _, _, _| Ok(())),
            end: Box::new(|_, _, _| Ok(())),
        }
    }

    fn on_begin(
        mut self,
        f: impl FnMut(&mut S, &mut Emit<'_>, usize, &mut [Vec<f32>], &mut [Vec<f32>]) -> Result<()> + Send + 'a,
    ) -> Self {
        self.begin = Box::new(f);
        self
    }

    fn on_edge(
        mut self,
        f: impl FnMut(&mut S, &mut Emit<'_>, usize, usize, &mut [Vec<f32>]) -> Result<()> + Send + 'a,
    ) -> Self {
        self.edge = Box::new(f);
        self
    }

    fn on_end(mut self, f: impl FnMut(&mut S, &mut Emit<'_>, usize) -> Result<()> + Send + 'a) -> Self {
        self.end = Box::new(f);
        self
    }
}

impl<S: Send> Kernel for Fold<'_, S> {
    fn begin(&mut self, out: &mut Emit<'_>, node: usize, nodes: &mut [Vec<f32>], headers: &mut [Vec<f32>]) -> Result<()> {
        (self.begin)(&mut self.state, out, node, nodes, headers)
    }

    fn edge(&mut self, out: &mut Emit<'_>, edge: usize, src: usize, edges: &mut [Vec<f32>]) -> Result<()> {
        (self.edge)(&mut self.state, out, edge, src, edges)
    }

    fn end(&mut self, out: &mut Emit<'_>, node: usize) -> Result<()> {
        (self.end)(&mut self.state, out, node)
    }
}

type BoxKernel<'a> = Box<dyn Kernel + 'a>;

impl Kernel for BoxKernel<'_> {
    fn begin(&mut self, out: &mut Emit<'_>, node: usize, nodes: &mut [Vec<f32>], headers: &mut [Vec<f32>]) -> Result<()> {
        (**self).begin(out, node, nodes, headers)
    }

    fn edge(&mut self, out: &mut Emit<'_>, edge: usize, src: usize, edges: &mut [Vec<f32>]) -> Result<()> {
        (**self).edge(out, edge, src, edges)
    }

    fn end(&mut self, out: &mut Emit<'_>, node: usize) -> Result<()> {
        (**self).end(out, node)
    }
}

fn boxed<'a, S: Send + 'a>(f: Fold<'a, S>) -> BoxKernel<'a> {
    Box::new(f)
}

/// Emits `f(node)` on every node output.
fn node_reader<'a>(f: impl Fn(usize) -> Vec<f32> + Send + 'a) -> BoxKernel<'a> {
    boxed(Fold::new(()).on_end(move |_, out, node| {
        out.all(f(node));
        Ok(())
    }))
}

/// Emits `f(edge, src)` on every group output.
fn edge_reader<'a>(f: impl Fn(usize, usize) -> Vec<f32> + Send + 'a) -> BoxKernel<'a> {
    boxed(Fold::new(()).on_edge(move |_, out, e, src, _| {
        out.all(f(e, src));
        Ok(())
    }))
}

/// Node-wise map over the node inputs.
fn node_map<'a>(mut f: impl FnMut(&mut [Vec<f32>]) -> Vec<f32> + Send + 'a) -> BoxKernel<'a> {
    boxed(
        Fold::new(Vec::new())
            .on_begin(move |res: &mut Vec<f32>, _, _, nodes, _| {
                *res = f(nodes);
                Ok(())
            })
            .on_end(|res, out, _| {
                out.all(std::mem::take(res));
                Ok(())
            }),
    )
}

/// Edge-wise map of the first group input.
fn edge_map<'a>(f: impl Fn(&[f32]) -> Vec<f32> + Send + 'a) -> BoxKernel<'a> {
    boxed(Fold::new(()).on_edge(move |_, out, _, _, edges| {
        out.all(f(&edges[0]));
        Ok(())
    }))
}

/// Element-wise sum of the first group input over each node's edges,
/// optionally divided by the degree.
fn neighbor_reducer<'a>(width: usize, mean: bool) -> BoxKernel<'a> {
    boxed(
        Fold::new((vec![0.0f32; width], 0usize))
            .on_begin(|(acc, deg), _, _, _, _| {
                acc.fill(0.0);
                *deg = 0;
                Ok(())
            })
            .on_edge(|(acc, deg), _, _, _, edges| {
                for (a, x) in acc.iter_mut().zip(&edges[0]) {
                    *a += x;
                }
                *deg += 1;
                Ok(())
            })
            .on_end(move |(acc, deg), out, _| {
                let mut v = acc.clone();
                if mean && *deg > 0 {
                    let d = *deg as f32;
                    v.iter_mut().for_each(|x| *x /= d);
                }
                out.all(v);
                Ok(())
            }),
    )
}

fn node_sink(target: &Mutex<Matrix>) -> BoxKernel<'_> {
    boxed(Fold::new(()).on_begin(move |_, _, node, nodes, _| {
        target.lock().unwrap().row_mut(node).copy_from_slice(&nodes[0]);
        Ok(())
    }))
}

fn edge_sink(target: &Mutex<Matrix>) -> BoxKernel<'_> {
    boxed(Fold::new(()).on_edge(move |_, _, e, _, edges| {
        target.lock().unwrap().row_mut(e).copy_from_slice(&edges[0]);
        Ok(())
    }))
}

fn apply(m: &Matrix, x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; m.rows()];
    vmm_into(x, m, &mut out);
    out
}

fn apply_relu(m: &Matrix, x: &[f32]) -> Vec<f32> {
    let mut out = apply(m, x);
    out.iter_mut().for_each(|v| *v = relu(*v));
    out
}

/// Read-only inputs and write-back buffers shared by every stage instance.
struct Context<'a> {
    graph: &'a CsrGraph,
    h: &'a FeatureMatrix,
    params: &'a ModelParams,
    edge_features: Option<&'a EdgeFeatures>,
    pseudo: Vec<[f32; 2]>,
    /// GAT kernel 1 result: `[z | s_src | s_dest]` per node.
    projection: Mutex<Matrix>,
    /// Read side of `projection` for GAT kernel 2.
    memory: Matrix,
    out_nodes: Mutex<Matrix>,
    out_edges: Option<Mutex<Matrix>>,
}

fn kernel_for<'b>(model: ModelKind, id: &str, cx: &'b Context<'_>) -> Result<BoxKernel<'b>> {
    let h = cx.h;
    if cx.params.kind() != model {
        return Err(Error::Invalid(format!(
            "parameters are for {}, pipeline is {model}",
            cx.params.kind()
        )));
    }
    let unknown = || Error::Pipeline(format!("{model} has no stage `{id}`"));
    Ok(match cx.params {
        ModelParams::Gcn(p) => match id {
            "read_neighbors" => edge_reader(move |_, j| h.row(j).to_vec()),
            "aggregate" => neighbor_reducer(h.cols(), false),
            "vmm" => node_map(move |n| apply_relu(&p.u, &n[0])),
            "write" => node_sink(&cx.out_nodes),
            _ => return Err(unknown()),
        },
        ModelParams::GraphSage(p) => match id {
            "read_target" => node_reader(move |i| h.row(i).to_vec()),
            "vmm_v" => node_map(move |n| apply(&p.v, &n[0])),
            "read_neighbors" => edge_reader(move |_, j| h.row(j).to_vec()),
            "aggregate" => neighbor_reducer(h.cols(), true),
            "vmm_w" => node_map(move |n| apply(&p.w, &n[0])),
            "sum" => node_map(|n| n[0].iter().zip(&n[1]).map(|(t, s)| relu(t + s)).collect()),
            "write" => node_sink(&cx.out_nodes),
            _ => return Err(unknown()),
        },
        ModelParams::Gin(p) => match id {
            "read_target" => node_reader(move |i| h.row(i).to_vec()),
            "read_neighbors" => edge_reader(move |_, j| h.row(j).to_vec()),
            "aggregate" => neighbor_reducer(h.cols(), false),
            "sum" => {
                let scale = 1.0 + p.eps;
                node_map(move |n| n[0].iter().zip(&n[1]).map(|(x, a)| scale * x + a).collect())
            }
            "vmm_v" => node_map(move |n| apply_relu(&p.v, &n[0])),
            "vmm_u" => node_map(move |n| apply_relu(&p.u, &n[0])),
            "write" => node_sink(&cx.out_nodes),
            _ => return Err(unknown()),
        },
        ModelParams::Gat(p) => {
            let heads = p.heads();
            let d_out = p.a_src.cols();
            let z = heads * d_out;
            let mem = &cx.memory;
            let slope = p.leaky_slope;
            match id {
                "read_h" => node_reader(move |i| h.row(i).to_vec()),
                "vmm_u" => node_map(move |n| {
                    let mut out = vec![0.0; z];
                    for (k, u) in p.u.iter().enumerate() {
                        vmm_into(&n[0], u, &mut out[k * d_out..(k + 1) * d_out]);
                    }
                    out
                }),
                "mhewm_att" => node_map(move |n| {
                    let mut out = std::mem::take(&mut n[0]);
                    let (mut src, mut dest) = (vec![0.0; heads], vec![0.0; heads]);
                    for k in 0..heads {
                        let zk = &out[k * d_out..(k + 1) * d_out];
                        src[k] = dot(p.a_src.row(k), zk);
                        dest[k] = dot(p.a_dest.row(k), zk);
                    }
                    out.extend(src);
                    out.extend(dest);
                    out
                }),
                "write_proj" => node_sink(&cx.projection),
                "read_scores" => boxed(
                    Fold::new(())
                        .on_begin(move |_, out, i, _, _| {
                            out.all(mem.row(i)[z..z + heads].to_vec());
                            Ok(())
                        })
                        .on_edge(move |_, out, _, j, _| {
                            out.all(mem.row(j)[z + heads..].to_vec());
                            Ok(())
                        }),
                ),
                "read_messages" => boxed(
                    Fold::new(())
                        .on_begin(move |_, out, i, _, _| {
                            out.all(mem.row(i)[z..z + heads].to_vec());
                            Ok(())
                        })
                        .on_edge(move |_, out, _, j, _| {
                            let row = mem.row(j);
                            let mut v = row[z + heads..].to_vec();
                            v.extend_from_slice(&row[..z]);
                            out.all(v);
                            Ok(())
                        }),
                ),
                "edge_score_a" | "edge_score_b" => boxed(
                    Fold::new(Vec::new())
                        .on_begin(|src: &mut Vec<f32>, out, _, _, headers| {
                            *src = headers[0].clone();
                            out.all(std::mem::take(&mut headers[0]));
                            Ok(())
                        })
                        .on_edge(move |src, out, _, _, edges| {
                            let mut v = std::mem::take(&mut edges[0]);
                            for k in 0..heads {
                                v[k] = leaky_relu(src[k] + v[k], slope);
                            }
                            out.all(v);
                            Ok(())
                        }),
                ),
                "aggregate" => boxed(
                    Fold::new((vec![0.0f32; heads], vec![0.0f32; heads]))
                        .on_begin(|(max, sum), _, _, _, _| {
                            max.fill(f32::NEG_INFINITY);
                            sum.fill(0.0);
                            Ok(())
                        })
                        .on_edge(move |(max, sum), _, _, _, edges| {
                            for k in 0..heads {
                                let s = edges[0][k];
                                if s > max[k] {
                                    sum[k] = sum[k] * (max[k] - s).exp() + 1.0;
                                    max[k] = s;
                                } else {
                                    sum[k] += (s - max[k]).exp();
                                }
                            }
                            Ok(())
                        })
                        .on_end(|(max, sum), out, _| {
                            let mut v = max.clone();
                            v.extend_from_slice(sum);
                            out.all(v);
                            Ok(())
                        }),
                ),
                "softmax" => boxed(
                    Fold::new(Vec::new())
                        .on_begin(|stats: &mut Vec<f32>, _, _, nodes, _| {
                            *stats = std::mem::take(&mut nodes[0]);
                            Ok(())
                        })
                        .on_edge(move |stats, out, _, _, edges| {
                            let mut v = std::mem::take(&mut edges[0]);
                            for k in 0..heads {
                                v[k] = (v[k] - stats[k]).exp() / stats[heads + k];
                            }
                            out.all(v);
                            Ok(())
                        }),
                ),
                "mhewm" => boxed(
                    Fold::new(vec![0.0f32; z])
                        .on_begin(|acc: &mut Vec<f32>, _, _, _, _| {
                            acc.fill(0.0);
                            Ok(())
                        })
                        .on_edge(move |acc, _, _, _, edges| {
                            let (alpha, zj) = edges[0].split_at(heads);
                            for k in 0..heads {
                                let span = k * d_out..(k + 1) * d_out;
                                for (a, x) in acc[span.clone()].iter_mut().zip(&zj[span]) {
                                    *a += alpha[k] * x;
                                }
                            }
                            Ok(())
                        })
                        .on_end(|acc, out, _| {
                            out.all(acc.iter().map(|&v| elu(v)).collect());
                            Ok(())
                        }),
                ),
                "write" => node_sink(&cx.out_nodes),
                _ => return Err(unknown()),
            }
        }
        ModelParams::MoNet(p) => {
            let heads = p.heads();
            let d = h.cols();
            let pseudo = &cx.pseudo;
            match id {
                "read_pseudo" => edge_reader(move |e, _| pseudo[e].to_vec()),
                "vmm_u" => edge_map(move |x| monet_pseudo_projection(p, [x[0], x[1]]).to_vec()),
                "gaussian" => edge_map(move |u| (0..heads).map(|k| monet_gaussian(p, [u[0], u[1]], k)).collect()),
                "read_neighbors" => edge_reader(move |_, j| h.row(j).to_vec()),
                "mhewm_aggregate" => boxed(
                    Fold::new(vec![0.0f32; heads * d])
                        .on_begin(|acc: &mut Vec<f32>, _, _, _, _| {
                            acc.fill(0.0);
                            Ok(())
                        })
                        .on_edge(move |acc, _, _, _, edges| {
                            for k in 0..heads {
                                let w = edges[0][k];
                                for (a, x) in acc[k * d..(k + 1) * d].iter_mut().zip(&edges[1]) {
                                    *a += w * x;
                                }
                            }
                            Ok(())
                        })
                        .on_end(|acc, out, _| {
                            out.all(acc.clone());
                            Ok(())
                        }),
                ),
                "mhvmm" => node_map(move |n| {
                    let mut out = vec![0.0; heads * d];
                    for (k, u) in p.u.iter().enumerate() {
                        vmm_into(&n[0][k * d..(k + 1) * d], u, &mut out[k * d..(k + 1) * d]);
                    }
                    out
                }),
                "mh_aggregate" => node_map(move |n| {
                    let mut row = vec![0.0f32; d];
                    for k in 0..heads {
                        for (o, y) in row.iter_mut().zip(&n[0][k * d..(k + 1) * d]) {
                            *o += y;
                        }
                    }
                    row.iter_mut().for_each(|v| *v = relu(*v));
                    row
                }),
                "write" => node_sink(&cx.out_nodes),
                _ => return Err(unknown()),
            }
        }
        ModelParams::GatedGcn(p) => {
            let d = h.cols();
            let ef = cx
                .edge_features
                .ok_or_else(|| Error::Invalid("GatedGCN requires edge features".into()))?;
            let eps = p.eps;
            match id {
                "read_target" => node_reader(move |i| h.row(i).to_vec()),
                "read_edges" => boxed(Fold::new(()).on_edge(move |_, out, e, j, _| {
                    out.to(0, h.row(j).to_vec());
                    out.to(1, h.row(j).to_vec());
                    out.to(2, ef.row(e).to_vec());
                    Ok(())
                })),
                "vmm_a" => node_map(move |n| apply(&p.a, &n[0])),
                "vmm_e" => node_map(move |n| apply(&p.e, &n[0])),
                "vmm_b" => edge_map(move |x| apply(&p.b, x)),
                "vmm_d" => edge_map(move |x| apply(&p.d, x)),
                "vmm_c" => edge_map(move |x| apply(&p.c, x)),
                "soft_attention" => boxed(
                    Fold::new((Vec::new(), Vec::new(), vec![0.0f32; d], vec![0.0f32; d]))
                        .on_begin(move |(ah, eh, num, den), _, _, nodes, _| {
                            *ah = std::mem::take(&mut nodes[0]);
                            *eh = std::mem::take(&mut nodes[1]);
                            num.fill(0.0);
                            den.fill(0.0);
                            Ok(())
                        })
                        .on_edge(move |(_, eh, num, den), out, _, _, edges| {
                            let mut e_out = vec![0.0f32; d];
                            gated_edge_update(eh, &edges[0], &edges[1], &edges[2], &mut e_out, num, den);
                            out.all(e_out);
                            Ok(())
                        })
                        .on_end(move |(ah, _, num, den), out, _| {
                            let mut v = std::mem::take(ah);
                            v.extend(num.iter().zip(den.iter()).map(|(n, s)| n / (s + eps)));
                            out.all(v);
                            Ok(())
                        }),
                ),
                "sum" => node_map(move |n| {
                    let (a, g) = n[0].split_at(d);
                    a.iter().zip(g).map(|(x, y)| relu(x + y)).collect()
                }),
                "write_nodes" => node_sink(&cx.out_nodes),
                "write_edges" => edge_sink(cx.out_edges.as_ref().expect("allocated for GatedGCN")),
                _ => return Err(unknown()),
            }
        }
    })
}

fn check_inputs(
    spec: &PipelineSpec,
    g: &CsrGraph,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
) -> Result<()> {
    if params.kind() != spec.model {
        return Err(Error::Invalid(format!(
            "parameters are for {}, pipeline is {}",
            params.kind(),
            spec.model
        )));
    }
    params.validate(spec.dims)?;
    if h.shape() != (g.num_nodes(), spec.dims.input) {
        return Err(Error::Dimension(format!(
            "features are {}x{}, expected {}x{}",
            h.rows(),
            h.cols(),
            g.num_nodes(),
            spec.dims.input
        )));
    }
    if spec.model == ModelKind::GatedGcn {
        let e = edge_features.ok_or_else(|| Error::Invalid("GatedGCN requires edge features".into()))?;
        if e.shape() != (g.num_edges(), spec.dims.input) {
            return Err(Error::Dimension(format!(
                "edge features are {}x{}, expected {}x{}",
                e.rows(),
                e.cols(),
                g.num_edges(),
                spec.dims.input
            )));
        }
    }
    let canonical = super::spec::build_pipeline(spec.model, spec.dims, spec.num_cus)?;
    let shape = |s: &PipelineSpec| {
        let stages: Vec<_> = s.stages.iter().map(|st| st.id.clone()).collect();
        let fifos: Vec<_> = s
            .fifos
            .iter()
            .map(|f| (f.producer.clone(), f.consumer.clone(), f.stream))
            .collect();
        (stages, fifos, s.kernels.clone())
    };
    if shape(spec) != shape(&canonical) {
        return Err(Error::Pipeline(format!(
            "stage graph differs from the {} pipeline; only capacities and latencies may change",
            spec.model
        )));
    }
    Ok(())
}

/// Number of compute units actually instantiated: never more than one per node.
pub(crate) fn effective_cus(num_cus: usize, n: usize) -> usize {
    num_cus.min(n.max(1))
}

fn instantiate<'b>(
    spec: &PipelineSpec,
    topo: &Topology,
    kernel: usize,
    cx: &'b Context<'_>,
) -> Result<(Vec<Box<dyn StageLogic + 'b>>, Wiring)> {
    let g = cx.graph;
    let ranges = partition_contiguous(g.num_nodes(), effective_cus(spec.num_cus, g.num_nodes()))?;
    let members = &topo.kernels[kernel];
    let mut stages: Vec<Box<dyn StageLogic + 'b>> = Vec::new();
    let mut wiring = Wiring::default();
    let fifos: Vec<usize> = (0..spec.fifos.len())
        .filter(|&f| members.contains(&topo.producer[f]))
        .collect();
    for (cu, range) in ranges.iter().enumerate() {
        let base = stages.len();
        let local = |s: usize| base + members.iter().position(|&x| x == s).unwrap();
        let fifo_base = wiring.capacity.len();
        let local_fifo = |f: usize| fifo_base + fifos.iter().position(|&x| x == f).unwrap();
        for &s in members {
            let stage = &spec.stages[s];
            let kinds = |ports: &[usize]| ports.iter().map(|&f| spec.fifos[f].stream).collect::<Vec<StreamKind>>();
            let name = if ranges.len() > 1 {
                format!("{}@cu{cu}", stage.id)
            } else {
                stage.id.clone()
            };
            stages.push(Box::new(JoinStage::new(
                name,
                g,
                range.iter(),
                kinds(&topo.inputs[s]),
                kinds(&topo.outputs[s]),
                kernel_for(spec.model, &stage.id, cx)?,
            )));
            wiring.inputs.push(topo.inputs[s].iter().map(|&f| local_fifo(f)).collect());
            wiring.outputs.push(topo.outputs[s].iter().map(|&f| local_fifo(f)).collect());
        }
        for &f in &fifos {
            wiring.producer.push(local(topo.producer[f]));
            wiring.consumer.push(local(topo.consumer[f]));
            wiring.capacity.push(spec.fifos[f].capacity);
        }
    }
    Ok((stages, wiring))
}

/// Runs the layer through its stage graph with the threaded scheduler.
pub fn execute_streaming(
    spec: &PipelineSpec,
    g: &CsrGraph,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
) -> Result<LayerOutput> {
    execute_streaming_with(spec, g, h, params, edge_features, Scheduler::Threaded)
}

pub fn execute_streaming_with(
    spec: &PipelineSpec,
    g: &CsrGraph,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
    scheduler: Scheduler,
) -> Result<LayerOutput> {
    let topo = spec.topology()?;
    check_inputs(spec, g, h, params, edge_features)?;
    let n = g.num_nodes();
    let dims = spec.dims;
    let projection_width = match spec.model {
        ModelKind::Gat => dims.heads * dims.output + 2 * dims.heads,
        _ => 0,
    };
    let mut cx = Context {
        graph: g,
        h,
        params,
        edge_features,
        pseudo: match spec.model {
            ModelKind::MoNet => pseudo_coordinates(g),
            _ => Vec::new(),
        },
        projection: Mutex::new(Matrix::zeros(n, projection_width)),
        memory: Matrix::zeros(0, 0),
        out_nodes: Mutex::new(Matrix::zeros(n, spec.model.output_width(dims))),
        out_edges: (spec.model == ModelKind::GatedGcn)
            .then(|| Mutex::new(Matrix::zeros(g.num_edges(), dims.output))),
    };
    for kernel in 0..topo.kernels.len() {
        {
            let (mut stages, wiring) = instantiate(spec, &topo, kernel, &cx)?;
            match scheduler {
                Scheduler::Threaded => run_threaded(&mut stages, &wiring)?,
                Scheduler::RoundRobin => run_round_robin(&mut stages, &wiring)?,
            }
        }
        // Memory barrier: results written by this kernel become readable.
        cx.memory = cx.projection.get_mut().unwrap().clone();
    }
    Ok(LayerOutput {
        nodes: cx.out_nodes.into_inner().unwrap(),
        edges: cx.out_edges.map(|m| m.into_inner().unwrap()),
    })
}
