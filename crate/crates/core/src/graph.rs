//! Graph ingestion and the CSR adjacency every kernel iterates over.
//!
//! Rows of a [`CsrGraph`] hold *in-neighbors*: row `i` lists every source `j`
//! with an edge `j -> i`, which is the neighborhood all six layers aggregate
//! over.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Ingestion form of a graph: node count plus `(src, dst)` pairs in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub num_nodes: usize,
    pub edges: Vec<(u32, u32)>,
}

impl EdgeList {
    pub fn new(num_nodes: usize, edges: Vec<(u32, u32)>) -> Result<Self> {
        for &(src, dst) in &edges {
            for node in [src, dst] {
                if node as usize >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        node: node as u64,
                        num_nodes,
                    });
                }
            }
        }
        Ok(Self { num_nodes, edges })
    }

    /// Serializes back to the `n m` / `src dst` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 + self.edges.len() * 12);
        out.push_str(&format!("{} {}\n", self.num_nodes, self.edges.len()));
        for (src, dst) in &self.edges {
            out.push_str(&format!("{src} {dst}\n"));
        }
        out
    }
}

/// Parses the line-oriented edge-list format.
///
/// The first non-comment line is `n m`; each following line is `src dst`.
/// Lines starting with `#` and blank lines are skipped.
pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(idx, line)| (idx + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing `n m` header".into(),
    })?;
    let [n, m] = parse_pair(header_line, header)?;
    let num_nodes = n as usize;
    let num_edges = m as usize;

    let mut edges = Vec::with_capacity(num_edges);
    for (line, body) in lines {
        if edges.len() == num_edges {
            return Err(Error::Parse {
                line,
                message: format!("more than the declared {num_edges} edges"),
            });
        }
        let [src, dst] = parse_pair(line, body)?;
        for node in [src, dst] {
            if node >= n {
                return Err(Error::NodeOutOfRange { node, num_nodes });
            }
        }
        edges.push((src as u32, dst as u32));
    }
    if edges.len() != num_edges {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {num_edges} edges, found {}", edges.len()),
        });
    }
    Ok(EdgeList { num_nodes, edges })
}

fn parse_pair(line: usize, body: &str) -> Result<[u64; 2]> {
    let mut fields = body.split_whitespace();
    let mut next = |what: &str| -> Result<u64> {
        let field = fields.next().ok_or_else(|| Error::Parse {
            line,
            message: format!("missing {what}"),
        })?;
        field.parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("`{field}` is not a non-negative integer"),
        })
    };
    let pair = [next("first field")?, next("second field")?];
    if fields.next().is_some() {
        return Err(Error::Parse {
            line,
            message: "expected exactly two fields".into(),
        });
    }
    if pair[0] > u32::MAX as u64 {
        return Err(Error::Parse {
            line,
            message: "value exceeds 32-bit node id range".into(),
        });
    }
    Ok(pair)
}

/// Compressed sparse rows over in-neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrGraph {
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
}

impl CsrGraph {
    /// Builds a CSR from raw arrays, checking every structural invariant.
    pub fn from_parts(row_offsets: Vec<usize>, col_indices: Vec<u32>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Invalid(msg));
        if row_offsets.first() != Some(&0) {
            return invalid("row_offsets must start at 0".into());
        }
        if *row_offsets.last().unwrap() != col_indices.len() {
            return invalid("row_offsets must end at the edge count".into());
        }
        let n = row_offsets.len() - 1;
        for (i, w) in row_offsets.windows(2).enumerate() {
            if w[0] > w[1] {
                return invalid(format!("row_offsets decrease at row {i}"));
            }
            let row = &col_indices[w[0]..w[1]];
            if row.windows(2).any(|p| p[0] > p[1]) {
                return invalid(format!("row {i} is not sorted"));
            }
        }
        if let Some(&bad) = col_indices.iter().find(|&&c| c as usize >= n) {
            return Err(Error::NodeOutOfRange {
                node: bad as u64,
                num_nodes: n,
            });
        }
        Ok(Self {
            row_offsets,
            col_indices,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    /// In-degree `|N_i|`.
    pub fn degree(&self, node: usize) -> usize {
        self.row_offsets[node + 1] - self.row_offsets[node]
    }

    /// Sources of all edges into `node`, ascending.
    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.col_indices[self.edge_range(node)]
    }

    /// Positions of `node`'s in-edges in CSR edge order.
    pub fn edge_range(&self, node: usize) -> Range<usize> {
        self.row_offsets[node]..self.row_offsets[node + 1]
    }

    pub fn degrees(&self) -> Vec<u32> {
        self.row_offsets
            .windows(2)
            .map(|w| (w[1] - w[0]) as u32)
            .collect()
    }

    /// Edge list in CSR order, i.e. sorted by `(dst, src)`.
    pub fn to_edge_list(&self) -> EdgeList {
        let edges = (0..self.num_nodes())
            .flat_map(|dst| self.neighbors(dst).iter().map(move |&src| (src, dst as u32)))
            .collect();
        EdgeList {
            num_nodes: self.num_nodes(),
            edges,
        }
    }
}

/// Counting-sort construction: rows keyed by destination, sources ascending,
/// duplicates and self-loops kept.
pub fn build_csr(el: &EdgeList) -> CsrGraph {
    let n = el.num_nodes;
    let mut row_offsets = vec![0usize; n + 1];
    for &(_, dst) in &el.edges {
        row_offsets[dst as usize + 1] += 1;
    }
    for i in 0..n {
        row_offsets[i + 1] += row_offsets[i];
    }
    let mut cursor = row_offsets.clone();
    let mut col_indices = vec![0u32; el.edges.len()];
    for &(src, dst) in &el.edges {
        let slot = &mut cursor[dst as usize];
        col_indices[*slot] = src;
        *slot += 1;
    }
    for i in 0..n {
        col_indices[row_offsets[i]..row_offsets[i + 1]].sort_unstable();
    }
    CsrGraph {
        row_offsets,
        col_indices,
    }
}

/// Size and degree profile of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub n: usize,
    pub m: usize,
    pub max_degree: usize,
    pub avg_degree: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Vec<u32>>,
}

pub fn degree_stats(g: &CsrGraph) -> DegreeStats {
    let degrees = g.degrees();
    let n = g.num_nodes();
    let m = g.num_edges();
    DegreeStats {
        n,
        m,
        max_degree: degrees.iter().copied().max().unwrap_or(0) as usize,
        avg_degree: if n == 0 { 0.0 } else { m as f64 / n as f64 },
        degrees: Some(degrees),
    }
}

/// Dataset summary: enough to drive the analytic model without the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub max_degree: usize,
    pub avg_degree: f64,
}

impl GraphSummary {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_stats(&self) -> DegreeStats {
        DegreeStats {
            n: self.n,
            m: self.m,
            max_degree: self.max_degree,
            avg_degree: self.avg_degree,
            degrees: None,
        }
    }

    /// One of the shipped summaries by dataset abbreviation (`MT`, `MH`, `AX`, `PT`).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name.to_ascii_uppercase().as_str() {
            "MT" => include_str!("../data/summaries/mt.json"),
            "MH" => include_str!("../data/summaries/mh.json"),
            "AX" => include_str!("../data/summaries/ax.json"),
            "PT" => include_str!("../data/summaries/pt.json"),
            _ => return None,
        };
        Some(Self::from_json(text).expect("shipped summary is valid JSON"))
    }

    pub fn builtin_names() -> [&'static str; 4] {
        ["MT", "MH", "AX", "PT"]
    }
}

/// Draws `count` distinct node ids uniformly without replacement.
///
/// Partial Fisher-Yates over `0..n` driven by [`SplitMix64`]; position `i`
/// swaps with `i + below(n - i)`.
pub fn sample_nodes(g: &CsrGraph, count: usize, seed: u64) -> Result<Vec<u32>> {
    sample_ids(g.num_nodes(), count, seed)
}

pub fn sample_ids(n: usize, count: usize, seed: u64) -> Result<Vec<u32>> {
    if count > n {
        return Err(Error::SampleTooLarge {
            count,
            num_nodes: n,
        });
    }
    let mut rng = SplitMix64::new(seed);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    for i in 0..count {
        let j = i + rng.below((n - i) as u64) as usize;
        ids.swap(i, j);
    }
    ids.truncate(count);
    Ok(ids)
}

/// MoNet pseudo-coordinates, one `(deg_i^-0.5, deg_j^0.5)` pair per edge
/// `j -> i` in CSR order. Degrees are in-degrees clamped to at least 1.
pub fn pseudo_coordinates(g: &CsrGraph) -> Vec<[f32; 2]> {
    let degrees = g.degrees();
    let smoothed = |node: usize| degrees[node].max(1) as f32;
    let mut coords = Vec::with_capacity(g.num_edges());
    for i in 0..g.num_nodes() {
        let target = smoothed(i).powf(-0.5);
        for &j in g.neighbors(i) {
            coords.push([target, smoothed(j as usize).powf(0.5)]);
        }
    }
    coords
}

/// Half-open node interval processed by one compute unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRange {
    pub start: usize,
    pub end: usize,
}

impl NodeRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn iter(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Splits `0..n` into `num_cus` contiguous ranges whose sizes differ by at
/// most one; the first `n % num_cus` ranges get the extra node.
pub fn partition_contiguous(n: usize, num_cus: usize) -> Result<Vec<NodeRange>> {
    if num_cus == 0 {
        return Err(Error::Partition("num_cus must be at least 1".into()));
    }
    if num_cus > n.max(1) {
        return Err(Error::Partition(format!(
            "{num_cus} compute units for {n} nodes"
        )));
    }
    let base = n / num_cus;
    let extra = n % num_cus;
    let mut start = 0;
    Ok((0..num_cus)
        .map(|cu| {
            let len = base + usize::from(cu < extra);
            let range = NodeRange {
                start,
                end: start + len,
            };
            start += len;
            range
        })
        .collect())
}
