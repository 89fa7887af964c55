//! Per-model parameters, seeded generation and the tensor manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dims, ModelKind};
use crate::rng::SplitMix64;
use crate::tensor::{DenseMatrix, Matrix};

pub const DEFAULT_LEAKY_SLOPE: f32 = 0.2;
pub const DEFAULT_GATED_EPS: f32 = 1e-6;
pub const DEFAULT_GIN_EPS: f32 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub u: DenseMatrix,
}

/// GraphSage with the concatenated weight split into a target half `v` and a
/// neighbor half `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub v: DenseMatrix,
    pub w: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub u: DenseMatrix,
    pub v: DenseMatrix,
    pub eps: f32,
}

/// GAT with the attention vector split into `a_src` (target side) and
/// `a_dest` (neighbor side), one row per head.
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub u: Vec<DenseMatrix>,
    pub a_src: DenseMatrix,
    pub a_dest: DenseMatrix,
    pub leaky_slope: f32,
}

impl GatParams {
    pub fn heads(&self) -> usize {
        self.u.len()
    }
}

/// MoNet Gaussian mixture parameters with diagonal inverse covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MonetParams {
    /// 2x2 projection of the pseudo-coordinates.
    pub pseudo_weight: DenseMatrix,
    pub pseudo_bias: [f32; 2],
    /// K x 2 kernel means.
    pub mu: DenseMatrix,
    /// K x 2 diagonal inverse covariances.
    pub sigma_inv: DenseMatrix,
    pub u: Vec<DenseMatrix>,
}

impl MonetParams {
    pub fn heads(&self) -> usize {
        self.u.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedParams {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub d: DenseMatrix,
    pub e: DenseMatrix,
    pub eps: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Gcn(GcnParams),
    GraphSage(SageParams),
    Gin(GinParams),
    Gat(GatParams),
    MoNet(MonetParams),
    GatedGcn(GatedParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Gcn(_) => ModelKind::Gcn,
            ModelParams::GraphSage(_) => ModelKind::GraphSage,
            ModelParams::Gin(_) => ModelKind::Gin,
            ModelParams::Gat(_) => ModelKind::Gat,
            ModelParams::MoNet(_) => ModelKind::MoNet,
            ModelParams::GatedGcn(_) => ModelKind::GatedGcn,
        }
    }

    /// Deterministic parameters: every matrix uniform in `[-0.5, 0.5)`,
    /// filled in declaration order from one generator; scalars take defaults.
    pub fn seeded(kind: ModelKind, dims: Dims, seed: u64) -> Result<Self> {
        kind.validate_dims(dims)?;
        let mut rng = SplitMix64::new(seed);
        let mut mat = |r, c| Matrix::seeded(r, c, &mut rng);
        let d = dims.input;
        Ok(match kind {
            ModelKind::Gcn => ModelParams::Gcn(GcnParams { u: mat(d, d) }),
            ModelKind::GraphSage => ModelParams::GraphSage(SageParams {
                v: mat(d, d),
                w: mat(d, d),
            }),
            ModelKind::Gin => ModelParams::Gin(GinParams {
                u: mat(d, d),
                v: mat(d, d),
                eps: DEFAULT_GIN_EPS,
            }),
            ModelKind::Gat => {
                let u = (0..dims.heads).map(|_| mat(dims.output, d)).collect();
                ModelParams::Gat(GatParams {
                    u,
                    a_src: mat(dims.heads, dims.output),
                    a_dest: mat(dims.heads, dims.output),
                    leaky_slope: DEFAULT_LEAKY_SLOPE,
                })
            }
            ModelKind::MoNet => {
                let pseudo_weight = mat(2, 2);
                let bias = mat(1, 2);
                let mu = mat(dims.heads, 2);
                // Inverse covariances must be nonnegative; shift into [0, 1).
                let mut sigma_inv = mat(dims.heads, 2);
                sigma_inv.data_mut().iter_mut().for_each(|v| *v += 0.5);
                let u = (0..dims.heads).map(|_| mat(d, d)).collect();
                ModelParams::MoNet(MonetParams {
                    pseudo_weight,
                    pseudo_bias: [bias.get(0, 0), bias.get(0, 1)],
                    mu,
                    sigma_inv,
                    u,
                })
            }
            ModelKind::GatedGcn => ModelParams::GatedGcn(GatedParams {
                a: mat(d, d),
                b: mat(d, d),
                c: mat(d, d),
                d: mat(d, d),
                e: mat(d, d),
                eps: DEFAULT_GATED_EPS,
            }),
        })
    }

    /// Checks every tensor against `dims`.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        let kind = self.kind();
        kind.validate_dims(dims)?;
        let expect = |name: &str, m: &Matrix, rows: usize, cols: usize| {
            if m.shape() == (rows, cols) {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{kind} parameter {name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )))
            }
        };
        let d = dims.input;
        match self {
            ModelParams::Gcn(p) => expect("U", &p.u, d, d),
            ModelParams::GraphSage(p) => {
                expect("V", &p.v, d, d)?;
                expect("W", &p.w, d, d)
            }
            ModelParams::Gin(p) => {
                expect("U", &p.u, d, d)?;
                expect("V", &p.v, d, d)
            }
            ModelParams::Gat(p) => {
                if p.u.len() != dims.heads {
                    return Err(Error::Dimension(format!(
                        "GAT has {} head matrices, dims ask for {}",
                        p.u.len(),
                        dims.heads
                    )));
                }
                for m in &p.u {
                    expect("U", m, dims.output, d)?;
                }
                expect("a_src", &p.a_src, dims.heads, dims.output)?;
                expect("a_dest", &p.a_dest, dims.heads, dims.output)
            }
            ModelParams::MoNet(p) => {
                if p.u.len() != dims.heads {
                    return Err(Error::Dimension(format!(
                        "MoNet has {} kernels, dims ask for {}",
                        p.u.len(),
                        dims.heads
                    )));
                }
                expect("V", &p.pseudo_weight, 2, 2)?;
                expect("mu", &p.mu, dims.heads, 2)?;
                expect("sigma_inv", &p.sigma_inv, dims.heads, 2)?;
                for m in &p.u {
                    expect("U", m, d, d)?;
                }
                Ok(())
            }
            ModelParams::GatedGcn(p) => {
                for (name, m) in [("A", &p.a), ("B", &p.b), ("C", &p.c), ("D", &p.d), ("E", &p.e)] {
                    expect(name, m, d, d)?;
                }
                Ok(())
            }
        }
    }

    /// Named tensors and scalars as stored on disk. Per-head matrices are
    /// stacked vertically into one tensor.
    pub fn to_named(&self) -> (BTreeMap<String, Matrix>, BTreeMap<String, f32>) {
        let mut tensors = BTreeMap::new();
        let mut scalars = BTreeMap::new();
        let mut put = |name: &str, m: &Matrix| {
            tensors.insert(name.to_string(), m.clone());
        };
        match self {
            ModelParams::Gcn(p) => put("U", &p.u),
            ModelParams::GraphSage(p) => {
                put("V", &p.v);
                put("W", &p.w);
            }
            ModelParams::Gin(p) => {
                put("U", &p.u);
                put("V", &p.v);
                scalars.insert("eps".into(), p.eps);
            }
            ModelParams::Gat(p) => {
                put("U", &stack(&p.u));
                put("a_src", &p.a_src);
                put("a_dest", &p.a_dest);
                scalars.insert("leaky_slope".into(), p.leaky_slope);
            }
            ModelParams::MoNet(p) => {
                put("V", &p.pseudo_weight);
                put("v", &Matrix::from_vec(1, 2, p.pseudo_bias.to_vec()).unwrap());
                put("mu", &p.mu);
                put("sigma_inv", &p.sigma_inv);
                put("U", &stack(&p.u));
            }
            ModelParams::GatedGcn(p) => {
                for (name, m) in [("A", &p.a), ("B", &p.b), ("C", &p.c), ("D", &p.d), ("E", &p.e)] {
                    put(name, m);
                }
                scalars.insert("eps".into(), p.eps);
            }
        }
        (tensors, scalars)
    }

    pub fn from_named(
        kind: ModelKind,
        dims: Dims,
        tensors: &BTreeMap<String, Matrix>,
        scalars: &BTreeMap<String, f32>,
    ) -> Result<Self> {
        let get = |name: &str| {
            tensors
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("{kind} manifest lacks tensor `{name}`")))
        };
        let scalar = |name: &str, default: f32| scalars.get(name).copied().unwrap_or(default);
        let params = match kind {
            ModelKind::Gcn => ModelParams::Gcn(GcnParams { u: get("U")? }),
            ModelKind::GraphSage => ModelParams::GraphSage(SageParams {
                v: get("V")?,
                w: get("W")?,
            }),
            ModelKind::Gin => ModelParams::Gin(GinParams {
                u: get("U")?,
                v: get("V")?,
                eps: scalar("eps", DEFAULT_GIN_EPS),
            }),
            ModelKind::Gat => ModelParams::Gat(GatParams {
                u: unstack(&get("U")?, dims.heads)?,
                a_src: get("a_src")?,
                a_dest: get("a_dest")?,
                leaky_slope: scalar("leaky_slope", DEFAULT_LEAKY_SLOPE),
            }),
            ModelKind::MoNet => {
                let bias = get("v")?;
                if bias.data().len() != 2 {
                    return Err(Error::Dimension("MoNet bias `v` must hold 2 values".into()));
                }
                ModelParams::MoNet(MonetParams {
                    pseudo_weight: get("V")?,
                    pseudo_bias: [bias.data()[0], bias.data()[1]],
                    mu: get("mu")?,
                    sigma_inv: get("sigma_inv")?,
                    u: unstack(&get("U")?, dims.heads)?,
                })
            }
            ModelKind::GatedGcn => ModelParams::GatedGcn(GatedParams {
                a: get("A")?,
                b: get("B")?,
                c: get("C")?,
                d: get("D")?,
                e: get("E")?,
                eps: scalar("eps", DEFAULT_GATED_EPS),
            }),
        };
        params.validate(dims)?;
        Ok(params)
    }

    /// Writes one `.gnnh` file per tensor plus `manifest.json` into `dir`.
    pub fn save(&self, dims: Dims, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (tensors, scalars) = self.to_named();
        let mut files = BTreeMap::new();
        for (name, m) in &tensors {
            let file = format!("{name}.gnnh");
            m.write_to(BufWriter::new(File::create(dir.join(&file))?))?;
            files.insert(name.clone(), file);
        }
        let manifest = Manifest {
            model: self.kind(),
            dims,
            tensors: files,
            scalars,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads parameters from a manifest path; tensor paths resolve relative to it.
    pub fn load(manifest_path: &Path) -> Result<(Self, Dims)> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut tensors = BTreeMap::new();
        for (name, file) in &manifest.tensors {
            let m = Matrix::read_from(BufReader::new(File::open(base.join(file))?))?;
            tensors.insert(name.clone(), m);
        }
        let params =
            ModelParams::from_named(manifest.model, manifest.dims, &tensors, &manifest.scalars)?;
        Ok((params, manifest.dims))
    }
}

/// JSON index naming the tensor files of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelKind,
    pub dims: Dims,
    pub tensors: BTreeMap<String, String>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f32>,
}

fn stack(blocks: &[Matrix]) -> Matrix {
    let cols = blocks.first().map_or(0, Matrix::cols);
    let rows = blocks.iter().map(Matrix::rows).sum();
    let data = blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn unstack(m: &Matrix, heads: usize) -> Result<Vec<Matrix>> {
    if heads == 0 || !m.rows().is_multiple_of(heads) {
        return Err(Error::Dimension(format!(
            "{} stacked rows do not split into {heads} heads",
            m.rows()
        )));
    }
    let per = m.rows() / heads;
    Ok((0..heads).map(|k| m.row_block(k * per, per)).collect())
}

/// Seeded node features, `n x width`, uniform in `[-0.5, 0.5)`.
pub fn seeded_features(n: usize, width: usize, seed: u64) -> Matrix {
    Matrix::seeded(n, width, &mut SplitMix64::new(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_is_deterministic_and_valid() {
        for kind in ModelKind::ALL {
            let dims = kind.default_dims();
            let a = ModelParams::seeded(kind, dims, 11).unwrap();
            let b = ModelParams::seeded(kind, dims, 11).unwrap();
            assert_eq!(a, b);
            a.validate(dims).unwrap();
            assert_ne!(a, ModelParams::seeded(kind, dims, 12).unwrap());
        }
    }

    #[test]
    fn named_round_trip() {
        for kind in ModelKind::ALL {
            let dims = match kind {
                ModelKind::Gat => Dims::new(6, 3, 4),
                ModelKind::MoNet => Dims::new(5, 2, 5),
                _ => Dims::square(4),
            };
            let p = ModelParams::seeded(kind, dims, 3).unwrap();
            let (t, s) = p.to_named();
            assert_eq!(ModelParams::from_named(kind, dims, &t, &s).unwrap(), p);
        }
    }

    #[test]
    fn rejects_wrong_shapes() {
        let p = ModelParams::seeded(ModelKind::Gcn, Dims::square(4), 1).unwrap();
        assert!(p.validate(Dims::square(5)).is_err());
        let (mut t, s) = p.to_named();
        t.insert("U".into(), Matrix::zeros(4, 3));
        assert!(ModelParams::from_named(ModelKind::Gcn, Dims::square(4), &t, &s).is_err());
        t.clear();
        assert!(ModelParams::from_named(ModelKind::Gcn, Dims::square(4), &t, &s).is_err());
    }
}
