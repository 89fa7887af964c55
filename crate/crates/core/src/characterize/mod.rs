//! Abstract instruction traces of the reference kernels and the metrics
//! derived from them: instruction mix and spatial/temporal locality scores.
//!
//! Every named array lives in its own address region aligned to
//! [`REGION_ALIGN`] words; an element's address is its region base plus its
//! row-major index.

mod kernels;

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::model::ModelKind;
use crate::reference::{EdgeFeatures, ModelParams};
use crate::synth::{SynthSpec, Topology};
use crate::tensor::FeatureMatrix;

pub use kernels::{run_traced, run_traced_with, TraceOptions};

pub const REGION_ALIGN: u64 = 1 << 24;
/// Reuse-distance cap of the temporal score.
pub const TEMPORAL_CAP: u64 = 1 << 16;
pub const DEFAULT_SAMPLE: usize = 500;
pub const DEFAULT_SAMPLE_SEED: u64 = 42;
pub const TRACE_MAGIC: &[u8; 4] = b"GNNT";

/// Dense synthetic graph used for the default characterization runs.
pub const DEFAULT_DENSE_GRAPH: SynthSpec = SynthSpec {
    n: 2000,
    avg_degree: 16.0,
    topology: Topology::RegularLike,
    seed: DEFAULT_SAMPLE_SEED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TraceEvent {
    Branch,
    Memory { addr: u64, access: Access },
    Compute,
}

impl TraceEvent {
    pub fn address(&self) -> Option<u64> {
        match self {
            TraceEvent::Memory { addr, .. } => Some(*addr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub model: ModelKind,
    pub graph: String,
    pub nodes: Vec<u32>,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter_map(TraceEvent::address)
    }

    /// Binary dump: magic, then ten bytes per event (kind, access kind,
    /// little-endian address; zero address for non-memory events).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        for e in &self.events {
            let (kind, access, addr) = match *e {
                TraceEvent::Branch => (0u8, 0u8, 0u64),
                TraceEvent::Memory { addr, access } => {
                    (1, if access == Access::Read { 1 } else { 2 }, addr)
                }
                TraceEvent::Compute => (2, 0, 0),
            };
            w.write_all(&[kind, access])?;
            w.write_all(&addr.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the events of a binary dump.
    pub fn read_events<R: Read>(mut r: R) -> Result<Vec<TraceEvent>> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let body = bytes
            .strip_prefix(TRACE_MAGIC.as_slice())
            .ok_or_else(|| Error::Format("missing GNNT magic".into()))?;
        if body.len() % 10 != 0 {
            return Err(Error::Format(format!("truncated trace ({} trailing bytes)", body.len() % 10)));
        }
        body.chunks_exact(10)
            .enumerate()
            .map(|(i, rec)| {
                let addr = u64::from_le_bytes(rec[2..].try_into().unwrap());
                let bad = || Error::Format(format!("bad record {i}: {:?}", &rec[..2]));
                match (rec[0], rec[1]) {
                    (0, 0) if addr == 0 => Ok(TraceEvent::Branch),
                    (2, 0) if addr == 0 => Ok(TraceEvent::Compute),
                    (1, 1) => Ok(TraceEvent::Memory { addr, access: Access::Read }),
                    (1, 2) => Ok(TraceEvent::Memory { addr, access: Access::Write }),
                    _ => Err(bad()),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstructionMix {
    pub branch: f64,
    pub memory: f64,
    pub compute: f64,
}

impl InstructionMix {
    pub fn largest(&self) -> &'static str {
        if self.compute >= self.memory && self.compute >= self.branch {
            "compute"
        } else if self.memory >= self.branch {
            "memory"
        } else {
            "branch"
        }
    }
}

pub fn instruction_mix(t: &Trace) -> Result<InstructionMix> {
    if t.events.is_empty() {
        return Err(Error::EmptyTrace("instruction mix needs at least one event".into()));
    }
    let (mut b, mut m, mut c) = (0usize, 0usize, 0usize);
    for e in &t.events {
        match e {
            TraceEvent::Branch => b += 1,
            TraceEvent::Memory { .. } => m += 1,
            TraceEvent::Compute => c += 1,
        }
    }
    let total = t.events.len() as f64;
    Ok(InstructionMix {
        branch: b as f64 / total,
        memory: m as f64 / total,
        compute: c as f64 / total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityScores {
    pub spatial: f64,
    pub temporal: f64,
}

/// Mean over consecutive memory events of `1/stride`, zero for a repeated
/// address.
pub fn spatial_score(t: &Trace) -> Result<f64> {
    spatial_of(t.addresses())
}

fn spatial_of(addrs: impl Iterator<Item = u64>) -> Result<f64> {
    let mut prev: Option<u64> = None;
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in addrs {
        if let Some(p) = prev {
            let stride = a.abs_diff(p);
            if stride >= 1 {
                sum += 1.0 / stride as f64;
            }
            count += 1;
        }
        prev = Some(a);
    }
    if count == 0 {
        return Err(Error::EmptyTrace("spatial score needs at least two memory events".into()));
    }
    Ok(sum / count as f64)
}

/// Fenwick tree over trace positions.
struct Fenwick(Vec<i64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, pos: usize, delta: i64) {
        let mut i = pos + 1;
        while i < self.0.len() {
            self.0[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of positions `0..pos`.
    fn prefix(&self, pos: usize) -> i64 {
        let mut i = pos;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Reuse distance of every memory access: the number of distinct addresses
/// touched since the previous access to the same address, `None` on first
/// touch.
pub fn reuse_distances(t: &Trace) -> Vec<Option<u64>> {
    let addrs: Vec<u64> = t.addresses().collect();
    let mut last: HashMap<u64, usize> = HashMap::with_capacity(addrs.len() / 4);
    // A position holds 1 while it is the latest access to its address.
    let mut live = Fenwick::new(addrs.len());
    let mut out = Vec::with_capacity(addrs.len());
    for (pos, &a) in addrs.iter().enumerate() {
        match last.insert(a, pos) {
            Some(p) => {
                out.push(Some((live.prefix(pos) - live.prefix(p + 1)) as u64));
                live.add(p, -1);
            }
            None => out.push(None),
        }
        live.add(pos, 1);
    }
    out
}

pub fn temporal_contribution(distance: u64) -> f64 {
    let cap = (TEMPORAL_CAP as f64).log2();
    ((cap - ((distance + 1) as f64).log2()) / cap).max(0.0)
}

/// Mean over memory events of the capped log reuse-distance contribution;
/// first touches count as zero.
pub fn temporal_score(t: &Trace) -> Result<f64> {
    let distances = reuse_distances(t);
    if distances.is_empty() {
        return Err(Error::EmptyTrace("temporal score needs a memory event".into()));
    }
    let sum: f64 = distances.iter().flatten().map(|&r| temporal_contribution(r)).sum();
    Ok(sum / distances.len() as f64)
}

pub fn locality_scores(t: &Trace) -> Result<LocalityScores> {
    Ok(LocalityScores {
        spatial: spatial_score(t)?,
        temporal: temporal_score(t)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub model: ModelKind,
    pub graph: String,
    pub sample_size: usize,
    pub events: usize,
    pub mix: InstructionMix,
    pub scores: LocalityScores,
}

impl Characterization {
    pub fn csv_header() -> &'static str {
        "model,graph,sample,events,branch,memory,compute,spatial,temporal"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.model,
            self.graph,
            self.sample_size,
            self.events,
            self.mix.branch,
            self.mix.memory,
            self.mix.compute,
            self.scores.spatial,
            self.scores.temporal
        )
    }
}

pub fn characterize_trace(t: &Trace) -> Result<Characterization> {
    Ok(Characterization {
        model: t.model,
        graph: t.graph.clone(),
        sample_size: t.nodes.len(),
        events: t.events.len(),
        mix: instruction_mix(t)?,
        scores: locality_scores(t)?,
    })
}

/// Traces `nodes` and summarizes the trace.
pub fn characterize(
    g: &CsrGraph,
    graph_name: &str,
    h: &FeatureMatrix,
    params: &ModelParams,
    edge_features: Option<&EdgeFeatures>,
    nodes: &[u32],
) -> Result<(Trace, Characterization)> {
    let trace = run_traced(g, graph_name, h, params, edge_features, nodes)?;
    let summary = characterize_trace(&trace)?;
    Ok((trace, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem_trace(addrs: &[u64]) -> Trace {
        Trace {
            model: ModelKind::Gcn,
            graph: "t".into(),
            nodes: vec![],
            events: addrs
                .iter()
                .map(|&addr| TraceEvent::Memory { addr, access: Access::Read })
                .collect(),
        }
    }

    #[test]
    fn mix_of_counts() {
        let mut t = mem_trace(&[1, 2, 3]);
        t.events.extend([TraceEvent::Branch; 2]);
        t.events.extend([TraceEvent::Compute; 5]);
        let m = instruction_mix(&t).unwrap();
        assert_eq!((m.branch, m.memory, m.compute), (0.2, 0.3, 0.5));
        assert_eq!(m.largest(), "compute");
        let pure = instruction_mix(&mem_trace(&[4, 4])).unwrap();
        assert_eq!((pure.branch, pure.memory, pure.compute), (0.0, 1.0, 0.0));
        assert!(instruction_mix(&mem_trace(&[])).is_err());
    }

    #[test]
    fn spatial_extremes() {
        let seq: Vec<u64> = (100..200).collect();
        assert_eq!(spatial_score(&mem_trace(&seq)).unwrap(), 1.0);
        let apart: Vec<u64> = (0..100).map(|i| (i % 2) * REGION_ALIGN + i / 2).collect();
        assert!(spatial_score(&mem_trace(&apart)).unwrap() < 1e-6);
        assert_eq!(spatial_score(&mem_trace(&[7, 7, 7])).unwrap(), 0.0);
        assert!(spatial_score(&mem_trace(&[7])).is_err());
    }

    #[test]
    fn temporal_extremes() {
        let n = 40;
        let same = mem_trace(&vec![9; n]);
        assert_eq!(temporal_score(&same).unwrap(), (n - 1) as f64 / n as f64);
        let distinct: Vec<u64> = (0..n as u64).collect();
        assert_eq!(temporal_score(&mem_trace(&distinct)).unwrap(), 0.0);
        assert!(temporal_score(&mem_trace(&[])).is_err());
    }

    #[test]
    fn reuse_distance_counts_distinct() {
        let t = mem_trace(&[1, 2, 2, 3, 1, 3, 1]);
        assert_eq!(
            reuse_distances(&t),
            vec![None, None, Some(0), None, Some(2), Some(1), Some(1)]
        );
        assert_eq!(temporal_contribution(0), 1.0);
        assert_eq!(temporal_contribution(TEMPORAL_CAP - 1), 0.0);
        assert_eq!(temporal_contribution(u64::MAX / 2), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let mut t = mem_trace(&[0, 1 << 40, 3]);
        t.events.push(TraceEvent::Branch);
        t.events.push(TraceEvent::Compute);
        t.events.push(TraceEvent::Memory { addr: 5, access: Access::Write });
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"GNNT");
        assert_eq!(buf.len(), 4 + 10 * t.len());
        assert_eq!(&buf[4 + 10 * 5..], &[1, 2, 5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(Trace::read_events(buf.as_slice()).unwrap(), t.events);
        assert!(Trace::read_events(&b"GNNX"[..]).is_err());
        assert!(Trace::read_events(&buf[..buf.len() - 1]).is_err());
    }
}
