//! Deterministic synthetic graphs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeList;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every node receives `ceil(avg)` edges from uniformly drawn sources.
    RegularLike,
    /// Preferential attachment: each new node links to `ceil(avg)` earlier
    /// nodes chosen proportionally to their degree, so early nodes become hubs.
    PowerlawLike,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::RegularLike => "regular-like",
            Topology::PowerlawLike => "powerlaw-like",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "regular" | "regular-like" => Ok(Topology::RegularLike),
            "powerlaw" | "powerlaw-like" | "power-law" => Ok(Topology::PowerlawLike),
            _ => Err(Error::Invalid(format!("unknown topology `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub avg_degree: f64,
    pub topology: Topology,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("synthetic graph needs at least one node".into()));
        }
        if !(self.avg_degree >= 0.0) || !self.avg_degree.is_finite() {
            return Err(Error::Invalid(format!(
                "average degree must be a finite non-negative number, got {}",
                self.avg_degree
            )));
        }
        if self.n > u32::MAX as usize {
            return Err(Error::Invalid("too many nodes".into()));
        }
        Ok(())
    }

    fn per_node(&self) -> usize {
        self.avg_degree.ceil() as usize
    }
}

pub fn generate(spec: &SynthSpec) -> Result<EdgeList> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let k = spec.per_node();
    let n = spec.n;
    let edges = match spec.topology {
        Topology::RegularLike => {
            let mut edges = Vec::with_capacity(n * k);
            for dst in 0..n {
                for _ in 0..k {
                    edges.push((rng.below(n as u64) as u32, dst as u32));
                }
            }
            edges
        }
        Topology::PowerlawLike => {
            let mut edges = Vec::new();
            let mut endpoints: Vec<u32> = Vec::new();
            let mut chosen = BTreeSet::new();
            for t in 1..n {
                let want = k.min(t);
                chosen.clear();
                let mut misses = 0;
                while chosen.len() < want {
                    let pick = if endpoints.is_empty() || misses > 4 * want {
                        rng.below(t as u64) as u32
                    } else {
                        endpoints[rng.below(endpoints.len() as u64) as usize]
                    };
                    if !chosen.insert(pick) {
                        misses += 1;
                    }
                }
                for &old in &chosen {
                    edges.push((t as u32, old));
                    endpoints.push(old);
                    endpoints.push(t as u32);
                }
            }
            edges
        }
    };
    EdgeList::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_csr, degree_stats};

    fn spec(n: usize, avg: f64, topology: Topology) -> SynthSpec {
        SynthSpec {
            n,
            avg_degree: avg,
            topology,
            seed: 1,
        }
    }

    #[test]
    fn regular_edge_count_is_exact() {
        let el = generate(&spec(1000, 2.0, Topology::RegularLike)).unwrap();
        assert_eq!(el.edges.len(), 2000);
        let stats = degree_stats(&build_csr(&el));
        assert_eq!(stats.max_degree, 2);
    }

    #[test]
    fn powerlaw_has_hubs() {
        let el = generate(&spec(1000, 7.0, Topology::PowerlawLike)).unwrap();
        let stats = degree_stats(&build_csr(&el));
        assert!(stats.max_degree as f64 > 10.0 * stats.avg_degree, "{stats:?}");
    }

    #[test]
    fn single_node_without_edges() {
        for t in [Topology::RegularLike, Topology::PowerlawLike] {
            let el = generate(&spec(1, 0.0, t)).unwrap();
            assert_eq!(el.num_nodes, 1);
            assert!(el.edges.is_empty());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(200, 3.5, Topology::PowerlawLike);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SynthSpec { seed: 2, ..s };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&spec(0, 1.0, Topology::RegularLike)).is_err());
        assert!(generate(&spec(5, -1.0, Topology::RegularLike)).is_err());
        assert!(generate(&spec(5, f64::NAN, Topology::PowerlawLike)).is_err());
    }
}
