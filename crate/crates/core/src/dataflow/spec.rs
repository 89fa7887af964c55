//! Stage graphs for the six layer types.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ii::IiFormula;
use crate::model::{Dims, ModelKind};

pub const DEFAULT_FIFO_CAPACITY: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    MemoryRead,
    MemoryWrite,
    Aggregation,
    Vmm,
    Mhewm,
    Softmax,
    Gaussian,
    SoftAttention,
    Sum,
    Elementwise,
}

/// Whether a stage's II is charged once per node or once per edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerNode,
    PerEdge,
}

/// Token layout of a FIFO. A node stream carries one token per node; a group
/// stream carries, per node, a header followed by one token per in-edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamKind {
    Node,
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: String,
    pub kind: StageKind,
    pub granularity: Granularity,
    pub ii: IiFormula,
    /// Head count `k` fed to the II formula.
    pub heads: usize,
    /// Width `d` fed to the II formula.
    pub dim: usize,
    /// Pipeline depth; `None` uses the II at the average degree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<u64>,
}

impl StageSpec {
    /// Cycles charged for one work item. For per-edge stages the degree is
    /// ignored.
    pub fn ii_for(&self, degree: u64) -> u64 {
        let degree = match self.granularity {
            Granularity::PerNode => degree,
            Granularity::PerEdge => 0,
        };
        self.ii.eval(degree, self.heads as u64, self.dim as u64)
    }

    /// Total cycles over a node set with `n` nodes and `m` in-edges.
    pub fn total_cycles(&self, n: u64, m: u64) -> u64 {
        let (k, d) = (self.heads as u64, self.dim as u64);
        match self.granularity {
            Granularity::PerNode => self.ii.degree_slope(k) * m + self.ii.intercept(k, d) * n,
            Granularity::PerEdge => self.ii.intercept(k, d) * m,
        }
    }

    pub fn latency_at(&self, avg_degree: f64) -> u64 {
        if let Some(l) = self.latency {
            return l.max(1);
        }
        let (k, d) = (self.heads as f64, self.dim as f64);
        let f = &self.ii;
        let deg = match self.granularity {
            Granularity::PerNode => avg_degree,
            Granularity::PerEdge => 0.0,
        };
        let ii = (f.per_degree as f64 + f.per_head_degree as f64 * k) * deg
            + f.per_head as f64 * k
            + f.per_dim as f64 * d
            + f.constant as f64;
        (ii.ceil() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FifoSpec {
    pub producer: String,
    pub consumer: String,
    pub stream: StreamKind,
    pub capacity: usize,
    /// Elements per token.
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub model: ModelKind,
    pub dims: Dims,
    pub stages: Vec<StageSpec>,
    pub fifos: Vec<FifoSpec>,
    /// Stage ids per kernel, executed in order with a memory barrier between.
    pub kernels: Vec<Vec<String>>,
    pub num_cus: usize,
}

/// Resolved port tables of a validated spec.
#[derive(Debug, Clone)]
pub(crate) struct Topology {
    /// FIFO indices read by each stage, in declaration order.
    pub inputs: Vec<Vec<usize>>,
    /// FIFO indices written by each stage, in declaration order.
    pub outputs: Vec<Vec<usize>>,
    pub producer: Vec<usize>,
    pub consumer: Vec<usize>,
    /// Stage indices per kernel, topologically ordered.
    pub kernels: Vec<Vec<usize>>,
}

impl PipelineSpec {
    pub fn stage_index(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.id == id)
    }

    pub fn stage(&self, id: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology().map(|_| ())
    }

    /// Sets every FIFO capacity; used to study backpressure.
    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.fifos.iter_mut().for_each(|f| f.capacity = capacity);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub(crate) fn topology(&self) -> Result<Topology> {
        let bad = |msg: String| Err(Error::Pipeline(msg));
        if self.num_cus == 0 {
            return bad("num_cus must be at least 1".into());
        }
        let mut index = BTreeMap::new();
        for (i, s) in self.stages.iter().enumerate() {
            if index.insert(s.id.as_str(), i).is_some() {
                return bad(format!("duplicate stage id `{}`", s.id));
            }
            if s.ii_for(0) < 1 {
                return bad(format!("stage `{}` has an II below 1", s.id));
            }
            if s.latency == Some(0) {
                return bad(format!("stage `{}` has zero latency", s.id));
            }
        }
        let mut kernel_of = vec![usize::MAX; self.stages.len()];
        for (k, ids) in self.kernels.iter().enumerate() {
            for id in ids {
                let Some(&s) = index.get(id.as_str()) else {
                    return bad(format!("kernel {k} names unknown stage `{id}`"));
                };
                if kernel_of[s] != usize::MAX {
                    return bad(format!("stage `{id}` belongs to two kernels"));
                }
                kernel_of[s] = k;
            }
        }
        if let Some(s) = kernel_of.iter().position(|&k| k == usize::MAX) {
            return bad(format!("stage `{}` is not in any kernel", self.stages[s].id));
        }

        let n = self.stages.len();
        let mut topo = Topology {
            inputs: vec![Vec::new(); n],
            outputs: vec![Vec::new(); n],
            producer: Vec::with_capacity(self.fifos.len()),
            consumer: Vec::with_capacity(self.fifos.len()),
            kernels: Vec::new(),
        };
        for (f, fifo) in self.fifos.iter().enumerate() {
            let endpoint = |id: &str| {
                index.get(id).copied().ok_or_else(|| {
                    Error::Pipeline(format!("fifo {f} references unknown stage `{id}`"))
                })
            };
            let (p, c) = (endpoint(&fifo.producer)?, endpoint(&fifo.consumer)?);
            if fifo.capacity == 0 {
                return bad(format!("fifo {} -> {} has zero capacity", fifo.producer, fifo.consumer));
            }
            if kernel_of[p] != kernel_of[c] {
                return bad(format!("fifo {} -> {} crosses kernels", fifo.producer, fifo.consumer));
            }
            topo.outputs[p].push(f);
            topo.inputs[c].push(f);
            topo.producer.push(p);
            topo.consumer.push(c);
        }

        // Kahn's algorithm per kernel, lowest index first for a stable order.
        let mut indegree: Vec<usize> = topo.inputs.iter().map(|i| i.len()).collect();
        for k in 0..self.kernels.len() {
            let members: BTreeSet<usize> = (0..n).filter(|&s| kernel_of[s] == k).collect();
            let mut ready: BTreeSet<usize> =
                members.iter().copied().filter(|&s| indegree[s] == 0).collect();
            let mut order = Vec::with_capacity(members.len());
            while let Some(s) = ready.pop_first() {
                order.push(s);
                for &f in &topo.outputs[s] {
                    let c = topo.consumer[f];
                    indegree[c] -= 1;
                    if indegree[c] == 0 {
                        ready.insert(c);
                    }
                }
            }
            if order.len() != members.len() {
                return bad(format!("kernel {k} contains a cycle"));
            }
            topo.kernels.push(order);
        }
        Ok(topo)
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} x{} CU", self.model, self.dims, self.num_cus)?;
        for (k, ids) in self.kernels.iter().enumerate() {
            writeln!(f, "kernel {k}: {}", ids.join(" "))?;
        }
        for fifo in &self.fifos {
            writeln!(
                f,
                "  {} -> {} [{:?}, width {}, depth {}]",
                fifo.producer, fifo.consumer, fifo.stream, fifo.width, fifo.capacity
            )?;
        }
        Ok(())
    }
}

struct Builder {
    stages: Vec<StageSpec>,
    fifos: Vec<FifoSpec>,
    kernels: Vec<Vec<String>>,
}

impl Builder {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            fifos: Vec::new(),
            kernels: vec![Vec::new()],
        }
    }

    fn stage(
        &mut self,
        id: &str,
        kind: StageKind,
        granularity: Granularity,
        ii: IiFormula,
        heads: usize,
        dim: usize,
    ) -> &mut Self {
        self.stages.push(StageSpec {
            id: id.to_string(),
            kind,
            granularity,
            ii,
            heads,
            dim,
            latency: None,
        });
        self.kernels.last_mut().unwrap().push(id.to_string());
        self
    }

    fn fifo(&mut self, producer: &str, consumer: &str, stream: StreamKind, width: usize) -> &mut Self {
        self.fifos.push(FifoSpec {
            producer: producer.to_string(),
            consumer: consumer.to_string(),
            stream,
            capacity: DEFAULT_FIFO_CAPACITY,
            width,
        });
        self
    }

    fn next_kernel(&mut self) -> &mut Self {
        self.kernels.push(Vec::new());
        self
    }

    fn finish(self, model: ModelKind, dims: Dims, num_cus: usize) -> Result<PipelineSpec> {
        let spec = PipelineSpec {
            model,
            dims,
            stages: self.stages,
            fifos: self.fifos,
            kernels: self.kernels,
            num_cus,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Builds the stage graph of `model`.
pub fn build_pipeline(model: ModelKind, dims: Dims, num_cus: usize) -> Result<PipelineSpec> {
    use Granularity::{PerEdge, PerNode};
    use StageKind::*;
    use StreamKind::{Group, Node};

    model.validate_dims(dims)?;
    if num_cus == 0 {
        return Err(Error::Pipeline("num_cus must be at least 1".into()));
    }
    let (d, k, d_out) = (dims.input, dims.heads, dims.output);
    let mut b = Builder::new();
    match model {
        ModelKind::Gcn => {
            b.stage("read_neighbors", MemoryRead, PerEdge, IiFormula::MEMORY, 1, d)
                .stage("aggregate", Aggregation, PerNode, IiFormula::AGGREGATION, 1, d)
                .stage("vmm", Vmm, PerNode, IiFormula::VMM, 1, d)
                .stage("write", MemoryWrite, PerNode, IiFormula::MEMORY, 1, d)
                .fifo("read_neighbors", "aggregate", Group, d)
                .fifo("aggregate", "vmm", Node, d)
                .fifo("vmm", "write", Node, d);
        }
        ModelKind::GraphSage => {
            b.stage("read_target", MemoryRead, PerNode, IiFormula::MEMORY, 1, d)
                .stage("vmm_v", Vmm, PerNode, IiFormula::VMM, 1, d)
                .stage("read_neighbors", MemoryRead, PerEdge, IiFormula::MEMORY, 1, d)
                .stage("aggregate", Aggregation, PerNode, IiFormula::AGGREGATION, 1, d)
                .stage("vmm_w", Vmm, PerNode, IiFormula::VMM, 1, d)
                .stage("sum", Sum, PerNode, IiFormula::SUM, 1, d)
                .stage("write", MemoryWrite, PerNode, IiFormula::MEMORY, 1, d)
                .fifo("read_target", "vmm_v", Node, d)
                .fifo("vmm_v", "sum", Node, d)
                .fifo("read_neighbors", "aggregate", Group, d)
                .fifo("aggregate", "vmm_w", Node, d)
                .fifo("vmm_w", "sum", Node, d)
                .fifo("sum", "write", Node, d);
        }
        ModelKind::Gin => {
            b.stage("read_target", MemoryRead, PerNode, IiFormula::MEMORY, 1, d)
                .stage("read_neighbors", MemoryRead, PerEdge, IiFormula::MEMORY, 1, d)
                .stage("aggregate", Aggregation, PerNode, IiFormula::AGGREGATION, 1, d)
                .stage("sum", Sum, PerNode, IiFormula::SUM, 1, d)
                .stage("vmm_v", Vmm, PerNode, IiFormula::VMM, 1, d)
                .stage("vmm_u", Vmm, PerNode, IiFormula::VMM, 1, d)
                .stage("write", MemoryWrite, PerNode, IiFormula::MEMORY, 1, d)
                .fifo("read_target", "sum", Node, d)
                .fifo("read_neighbors", "aggregate", Group, d)
                .fifo("aggregate", "sum", Node, d)
                .fifo("sum", "vmm_v", Node, d)
                .fifo("vmm_v", "vmm_u", Node, d)
                .fifo("vmm_u", "write", Node, d);
        }
        ModelKind::Gat => {
            let z = k * d_out;
            b.stage("read_h", MemoryRead, PerNode, IiFormula::MEMORY, k, d)
                .stage("vmm_u", Vmm, PerNode, IiFormula::VMM, k, d)
                .stage("mhewm_att", Mhewm, PerNode, IiFormula::GAT_PROJECTION_MHEWM, k, d_out)
                .stage("write_proj", MemoryWrite, PerNode, IiFormula::MEMORY, k, z)
                .fifo("read_h", "vmm_u", Node, d)
                .fifo("vmm_u", "mhewm_att", Node, z)
                .fifo("mhewm_att", "write_proj", Node, z + 2 * k)
                .next_kernel()
                .stage("read_scores", MemoryRead, PerEdge, IiFormula::MEMORY, k, k)
                .stage("edge_score_a", Elementwise, PerEdge, IiFormula::GAT_EDGE_SCORE, k, k)
                .stage("aggregate", Aggregation, PerNode, IiFormula::GAT_AGGREGATION, k, d_out)
                .stage("read_messages", MemoryRead, PerEdge, IiFormula::MEMORY, k, k + z)
                .stage("edge_score_b", Elementwise, PerEdge, IiFormula::GAT_EDGE_SCORE, k, k)
                .stage("softmax", Softmax, PerNode, IiFormula::GAT_SOFTMAX, k, d_out)
                .stage("mhewm", Mhewm, PerNode, IiFormula::GAT_MHEWM, k, d_out)
                .stage("write", MemoryWrite, PerNode, IiFormula::MEMORY, k, z)
                .fifo("read_scores", "edge_score_a", Group, k)
                .fifo("edge_score_a", "aggregate", Group, k)
                .fifo("aggregate", "softmax", Node, 2 * k)
                .fifo("read_messages", "edge_score_b", Group, k + z)
                .fifo("edge_score_b", "softmax", Group, k + z)
                .fifo("softmax", "mhewm", Group, k + z)
                .fifo("mhewm", "write", Node, z);
        }
        ModelKind::MoNet => {
            b.stage("read_pseudo", MemoryRead, PerEdge, IiFormula::MEMORY, k, 2)
                .stage("vmm_u", Vmm, PerEdge, IiFormula::MONET_PSEUDO_VMM, k, 2)
                .stage("gaussian", Gaussian, PerEdge, IiFormula::MONET_GAUSSIAN, k, 2)
                .stage("read_neighbors", MemoryRead, PerEdge, IiFormula::MEMORY, k, d)
                .stage("mhewm_aggregate", Mhewm, PerEdge, IiFormula::MONET_MHEWM_AGGREGATE, k, d)
                .stage("mhvmm", Vmm, PerNode, IiFormula::MONET_MHVMM, k, d)
                .stage("mh_aggregate", Aggregation, PerNode, IiFormula::MONET_MH_AGGREGATE, k, d)
                .stage("write", MemoryWrite, PerNode, IiFormula::MEMORY, k, d)
                .fifo("read_pseudo", "vmm_u", Group, 2)
                .fifo("vmm_u", "gaussian", Group, 2)
                .fifo("gaussian", "mhewm_aggregate", Group, k)
                .fifo("read_neighbors", "mhewm_aggregate", Group, d)
                .fifo("mhewm_aggregate", "mhvmm", Node, k * d)
                .fifo("mhvmm", "mh_aggregate", Node, k * d)
                .fifo("mh_aggregate", "write", Node, d);
        }
        ModelKind::GatedGcn => {
            b.stage("read_target", MemoryRead, PerNode, IiFormula::MEMORY, 1, d)
                .stage("read_edges", MemoryRead, PerEdge, IiFormula::MEMORY, 1, d);
            for id in ["vmm_a", "vmm_e", "vmm_b", "vmm_d", "vmm_c"] {
                b.stage(id, Vmm, PerNode, IiFormula::VMM, 1, d);
            }
            b.stage("soft_attention", SoftAttention, PerNode, IiFormula::GATED_SOFT_ATTENTION, 1, d)
                .stage("sum", Sum, PerNode, IiFormula::SUM, 1, d)
                .stage("write_nodes", MemoryWrite, PerNode, IiFormula::MEMORY, 1, d)
                .stage("write_edges", MemoryWrite, PerEdge, IiFormula::MEMORY, 1, d)
                .fifo("read_target", "vmm_a", Node, d)
                .fifo("read_target", "vmm_e", Node, d)
                .fifo("read_edges", "vmm_b", Group, d)
                .fifo("read_edges", "vmm_d", Group, d)
                .fifo("read_edges", "vmm_c", Group, d)
                .fifo("vmm_a", "soft_attention", Node, d)
                .fifo("vmm_e", "soft_attention", Node, d)
                .fifo("vmm_b", "soft_attention", Group, d)
                .fifo("vmm_d", "soft_attention", Group, d)
                .fifo("vmm_c", "soft_attention", Group, d)
                .fifo("soft_attention", "sum", Node, 2 * d)
                .fifo("soft_attention", "write_edges", Group, d)
                .fifo("sum", "write_nodes", Node, d);
        }
    }
    b.finish(model, dims, num_cus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcn_has_four_stages() {
        let spec = build_pipeline(ModelKind::Gcn, Dims::square(128), 2).unwrap();
        assert_eq!(spec.stages.len(), 4);
        assert_eq!(spec.kernels.len(), 1);
        assert_eq!(spec.num_cus, 2);
        let ids: Vec<_> = spec.stages.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["read_neighbors", "aggregate", "vmm", "write"]);
    }

    #[test]
    fn gat_has_two_kernels_with_duplicated_scores() {
        let spec = build_pipeline(ModelKind::Gat, Dims::new(128, 8, 16), 1).unwrap();
        assert_eq!(spec.kernels.len(), 2);
        let second = &spec.kernels[1];
        let scores = second
            .iter()
            .filter(|id| spec.stage(id).unwrap().kind == StageKind::Elementwise)
            .count();
        assert_eq!(scores, 2);
        assert!(second.contains(&"softmax".to_string()));
    }

    #[test]
    fn gated_gcn_has_five_vmms_into_soft_attention() {
        let spec = build_pipeline(ModelKind::GatedGcn, Dims::square(32), 1).unwrap();
        let vmms: Vec<_> = spec
            .stages
            .iter()
            .filter(|s| s.kind == StageKind::Vmm)
            .map(|s| s.id.clone())
            .collect();
        assert_eq!(vmms.len(), 5);
        for v in &vmms {
            assert!(spec
                .fifos
                .iter()
                .any(|f| &f.producer == v && f.consumer == "soft_attention"));
        }
    }

    #[test]
    fn sage_joins_two_paths_in_sum() {
        let spec = build_pipeline(ModelKind::GraphSage, Dims::square(16), 1).unwrap();
        let into_sum: Vec<_> = spec
            .fifos
            .iter()
            .filter(|f| f.consumer == "sum")
            .map(|f| f.producer.as_str())
            .collect();
        assert_eq!(into_sum, ["vmm_v", "vmm_w"]);
    }

    #[test]
    fn rejects_invalid_requests() {
        assert!(build_pipeline(ModelKind::Gcn, Dims::new(8, 2, 8), 1).is_err());
        assert!(build_pipeline(ModelKind::Gcn, Dims::square(8), 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        for kind in ModelKind::ALL {
            let spec = build_pipeline(kind, kind.default_dims(), kind.default_num_cus()).unwrap();
            let back = PipelineSpec::from_json(&spec.to_json().unwrap()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn validation_catches_structural_errors() {
        let base = build_pipeline(ModelKind::Gcn, Dims::square(8), 1).unwrap();

        let mut cyclic = base.clone();
        cyclic.fifos.push(FifoSpec {
            producer: "write".into(),
            consumer: "read_neighbors".into(),
            stream: StreamKind::Node,
            capacity: 4,
            width: 8,
        });
        assert!(matches!(cyclic.validate(), Err(Error::Pipeline(m)) if m.contains("cycle")));

        let mut dangling = base.clone();
        dangling.fifos[0].consumer = "nowhere".into();
        assert!(dangling.validate().is_err());

        let zero = base.clone().with_capacity(0);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn every_stage_ii_is_positive() {
        for kind in ModelKind::ALL {
            let spec = build_pipeline(kind, kind.default_dims(), 1).unwrap();
            for s in &spec.stages {
                assert!(s.ii_for(0) >= 1, "{kind} {}", s.id);
                assert!(s.latency_at(0.0) >= 1);
            }
        }
    }
}
