use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six layer types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "GS", alias = "GraphSage")]
    GraphSage,
    #[serde(rename = "GIN")]
    Gin,
    #[serde(rename = "GAT")]
    Gat,
    #[serde(rename = "MN", alias = "MoNet")]
    MoNet,
    #[serde(rename = "GGCN", alias = "GatedGCN")]
    GatedGcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Gcn,
        ModelKind::GraphSage,
        ModelKind::Gin,
        ModelKind::Gat,
        ModelKind::MoNet,
        ModelKind::GatedGcn,
    ];

    /// Abbreviation used in the baseline tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            ModelKind::Gcn => "GCN",
            ModelKind::GraphSage => "GS",
            ModelKind::Gin => "GIN",
            ModelKind::Gat => "GAT",
            ModelKind::MoNet => "MN",
            ModelKind::GatedGcn => "GGCN",
        }
    }

    /// Neighbors weighted unequally (attention or gating).
    pub fn is_anisotropic(self) -> bool {
        matches!(self, ModelKind::Gat | ModelKind::MoNet | ModelKind::GatedGcn)
    }

    pub fn default_dims(self) -> Dims {
        match self {
            ModelKind::Gcn | ModelKind::GraphSage | ModelKind::Gin => Dims::square(128),
            ModelKind::Gat => Dims::new(128, 8, 16),
            ModelKind::MoNet => Dims::new(64, 2, 64),
            ModelKind::GatedGcn => Dims::square(32),
        }
    }

    pub fn default_num_cus(self) -> usize {
        match self {
            ModelKind::Gcn | ModelKind::MoNet => 2,
            _ => 1,
        }
    }

    /// Checks that `dims` describe a layer of this kind.
    pub fn validate_dims(self, dims: Dims) -> Result<()> {
        let bad = |why: &str| Err(Error::Dimension(format!("{self}: {why} (got {dims})")));
        if dims.input == 0 || dims.output == 0 || dims.heads == 0 {
            return bad("dimensions must be positive");
        }
        match self {
            ModelKind::Gat => Ok(()),
            ModelKind::MoNet if dims.input != dims.output => bad("input and output must match"),
            ModelKind::MoNet => Ok(()),
            _ if dims.heads != 1 => bad("single-head model"),
            _ if dims.input != dims.output => bad("input and output must match"),
            _ => Ok(()),
        }
    }

    /// Width of one output row.
    pub fn output_width(self, dims: Dims) -> usize {
        match self {
            ModelKind::Gat => dims.heads * dims.output,
            _ => dims.output,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "gcn" => ModelKind::Gcn,
            "gs" | "graphsage" | "sage" => ModelKind::GraphSage,
            "gin" => ModelKind::Gin,
            "gat" => ModelKind::Gat,
            "mn" | "monet" => ModelKind::MoNet,
            "ggcn" | "gatedgcn" => ModelKind::GatedGcn,
            _ => return Err(Error::UnknownModel(s.to_string())),
        })
    }
}

/// Layer dimensions: input width, head count, per-head output width.
/// Single-head square layers use `heads = 1`, `input = output = d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub heads: usize,
    pub output: usize,
}

impl Dims {
    pub fn new(input: usize, heads: usize, output: usize) -> Self {
        Self {
            input,
            heads,
            output,
        }
    }

    pub fn square(d: usize) -> Self {
        Self::new(d, 1, d)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.input, self.heads, self.output)
    }
}

impl FromStr for Dims {
    type Err = Error;

    /// `"d"` for square single-head layers or `"in,heads,out"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Dimension(format!("cannot parse dims `{s}`")))?;
        match parts.as_slice() {
            [d] => Ok(Dims::square(*d)),
            [i, k, o] => Ok(Dims::new(*i, *k, *o)),
            _ => Err(Error::Dimension(format!("dims `{s}` must be `d` or `in,heads,out`"))),
        }
    }
}
