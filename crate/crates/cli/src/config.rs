//! Run configuration: an optional JSON file overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use gnnflow::graph::{build_csr, degree_stats, parse_edge_list, GraphSummary};
use gnnflow::reference::ModelParams;
use gnnflow::synth::{generate, SynthSpec, Topology};
use gnnflow::{CsrGraph, DegreeStats, Dims, ModelKind};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with any of the fields below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Layer type: GCN, GS, GIN, GAT, MN or GGCN.
    #[arg(long)]
    pub model: Option<String>,
    /// `d` or `in,heads,out`; defaults to the model's standard dimensions.
    #[arg(long)]
    pub dims: Option<String>,
    /// Edge-list file.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Shipped dataset summary (MT, MH, AX, PT) or a summary JSON file.
    #[arg(long)]
    pub summary: Option<String>,
    /// Node count of a synthetic graph.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Average in-degree of a synthetic graph.
    #[arg(long)]
    pub avg_degree: Option<f64>,
    /// `regular-like` or `powerlaw-like`.
    #[arg(long)]
    pub topology: Option<Topology>,
    /// Parameter manifest written by `run --save-params`; seeded otherwise.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Compute units; defaults to the model's hardware profile.
    #[arg(long)]
    pub cus: Option<usize>,
    /// Kernel clock; defaults to the model's hardware profile.
    #[arg(long)]
    pub freq_mhz: Option<f64>,
    /// Seed for synthetic graphs, parameters and features.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<String>,
    dims: Option<String>,
    graph: Option<PathBuf>,
    summary: Option<String>,
    synthetic: Option<SynthSpec>,
    params: Option<PathBuf>,
    num_cus: Option<usize>,
    frequency_mhz: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum GraphSource {
    EdgeList(PathBuf),
    Summary(String),
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub dims: Option<Dims>,
    pub graph: Option<GraphSource>,
    pub params: Option<PathBuf>,
    pub num_cus: Option<usize>,
    pub frequency_mhz: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

pub const DEFAULT_SEED: u64 = 1;

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        let model = flags
            .model
            .as_ref()
            .or(file.model.as_ref())
            .map(|s| s.parse::<ModelKind>())
            .transpose()?;
        let dims = flags
            .dims
            .as_ref()
            .or(file.dims.as_ref())
            .map(|s| s.parse::<Dims>())
            .transpose()?;

        let synthetic = match (flags.nodes, file.synthetic) {
            (Some(n), base) => Some(SynthSpec {
                n,
                avg_degree: flags.avg_degree.or(base.map(|b| b.avg_degree)).unwrap_or(0.0),
                topology: flags
                    .topology
                    .or(base.map(|b| b.topology))
                    .unwrap_or(Topology::RegularLike),
                seed,
            }),
            (None, Some(mut base)) => {
                if let Some(avg) = flags.avg_degree {
                    base.avg_degree = avg;
                }
                if let Some(t) = flags.topology {
                    base.topology = t;
                }
                if let Some(s) = flags.seed {
                    base.seed = s;
                }
                Some(base)
            }
            (None, None) => {
                if flags.avg_degree.is_some() || flags.topology.is_some() {
                    bail!("--avg-degree and --topology need --nodes");
                }
                None
            }
        };
        // Flags replace the file's graph source as a whole.
        let flag_sources = [flags.graph.is_some(), flags.summary.is_some(), flags.nodes.is_some()];
        let (graph, summary, synthetic) = if flag_sources.iter().any(|&b| b) {
            (flags.graph.clone(), flags.summary.clone(), synthetic.filter(|_| flags.nodes.is_some()))
        } else {
            (file.graph, file.summary, synthetic)
        };
        let sources: Vec<GraphSource> = [
            graph.map(GraphSource::EdgeList),
            summary.map(GraphSource::Summary),
            synthetic.map(GraphSource::Synthetic),
        ]
        .into_iter()
        .flatten()
        .collect();
        if sources.len() > 1 {
            bail!("give exactly one graph source (edge list, summary or synthetic spec)");
        }
        let graph = sources.into_iter().next();
        if let Some(GraphSource::Synthetic(spec)) = &graph {
            spec.validate()?;
        }

        let num_cus = flags.cus.or(file.num_cus);
        if num_cus == Some(0) {
            bail!("--cus must be at least 1");
        }
        let frequency_mhz = flags.freq_mhz.or(file.frequency_mhz);
        if let Some(f) = frequency_mhz {
            if !(f > 0.0 && f.is_finite()) {
                bail!("--freq-mhz must be positive, got {f}");
            }
        }
        Ok(RunConfig {
            model,
            dims,
            graph,
            params: flags.params.clone().or(file.params),
            num_cus,
            frequency_mhz,
            seed,
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn model(&self) -> Result<ModelKind> {
        self.model.context("--model is required")
    }

    /// Requested dimensions checked against the model, or its defaults.
    pub fn dims_for(&self, kind: ModelKind) -> Result<Dims> {
        let dims = self.dims.unwrap_or_else(|| kind.default_dims());
        kind.validate_dims(dims)?;
        Ok(dims)
    }

    /// Parameters from the manifest if one was given, seeded otherwise.
    pub fn params_for(&self, kind: ModelKind) -> Result<(ModelParams, Dims)> {
        match &self.params {
            Some(path) => {
                let (params, dims) = ModelParams::load(path)
                    .with_context(|| format!("loading parameters from {}", path.display()))?;
                if params.kind() != kind {
                    bail!("{} holds {} parameters, not {kind}", path.display(), params.kind());
                }
                if let Some(want) = self.dims {
                    if want != dims {
                        bail!("--dims {want} disagrees with the parameter manifest ({dims})");
                    }
                }
                Ok((params, dims))
            }
            None => {
                let dims = self.dims_for(kind)?;
                Ok((ModelParams::seeded(kind, dims, self.seed)?, dims))
            }
        }
    }
}

pub struct LoadedGraph {
    pub name: String,
    pub csr: CsrGraph,
}

fn synthetic_name(spec: &SynthSpec) -> String {
    format!("{}-n{}-d{}-s{}", spec.topology, spec.n, spec.avg_degree, spec.seed)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "graph".into())
}

/// A graph with edges; summaries only describe degree totals.
pub fn load_graph(source: Option<&GraphSource>, default: Option<SynthSpec>) -> Result<LoadedGraph> {
    let source = match (source, default) {
        (Some(s), _) => s.clone(),
        (None, Some(spec)) => GraphSource::Synthetic(spec),
        (None, None) => bail!("a graph is required: --graph FILE or --nodes N"),
    };
    match source {
        GraphSource::EdgeList(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading edge list {}", path.display()))?;
            let el = parse_edge_list(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok(LoadedGraph {
                name: stem(&path),
                csr: build_csr(&el),
            })
        }
        GraphSource::Synthetic(spec) => Ok(LoadedGraph {
            name: synthetic_name(&spec),
            csr: build_csr(&generate(&spec)?),
        }),
        GraphSource::Summary(name) => bail!(
            "summary `{name}` has degree totals only; this command needs an edge list or synthetic graph"
        ),
    }
}

/// Node and edge counts from any source.
pub fn load_stats(source: Option<&GraphSource>) -> Result<(String, DegreeStats)> {
    match source {
        Some(GraphSource::Summary(name)) => {
            let summary = match GraphSummary::builtin(name) {
                Some(s) => s,
                None => {
                    let text = std::fs::read_to_string(name)
                        .with_context(|| format!("`{name}` is neither a shipped summary nor a readable file"))?;
                    GraphSummary::from_json(&text).with_context(|| format!("parsing summary {name}"))?
                }
            };
            Ok((summary.name.clone(), summary.to_stats()))
        }
        other => {
            let g = load_graph(other, None)?;
            Ok((g.name, degree_stats(&g.csr)))
        }
    }
}
