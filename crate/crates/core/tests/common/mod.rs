#![allow(dead_code)]

pub mod oracle;

use gnnflow::graph::build_csr;
use gnnflow::rng::SplitMix64;
use gnnflow::synth::{generate, SynthSpec, Topology};
use gnnflow::reference::{seeded_features, ModelParams};
use gnnflow::{CsrGraph, Dims, Matrix, ModelKind};

/// Random graph with `n` drawn from `n_range`, alternating topologies.
pub fn random_graph(seed: u64, n_min: usize, n_max: usize) -> CsrGraph {
    let mut rng = SplitMix64::new(seed ^ 0x9e37_79b9);
    let n = n_min + rng.below((n_max - n_min + 1) as u64) as usize;
    let avg = rng.below(60) as f64 / 10.0;
    let topology = if seed.is_multiple_of(2) {
        Topology::RegularLike
    } else {
        Topology::PowerlawLike
    };
    let el = generate(&SynthSpec {
        n,
        avg_degree: avg,
        topology,
        seed,
    })
    .unwrap();
    build_csr(&el)
}

/// Small dimensions that keep every model's shape constraints.
pub fn small_dims(kind: ModelKind, width: usize) -> Dims {
    match kind {
        ModelKind::Gat => Dims::new(width, 2, width / 2),
        ModelKind::MoNet => Dims::new(width, 2, width),
        _ => Dims::square(width),
    }
}

/// `|a - b| <= tol * max(|a|, |b|) + tol`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + tol
}

pub fn max_rel_err(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            (x - y).abs() / (1.0 + x.abs().max(y.abs()))
        })
        .fold(0.0, f64::max)
}

pub struct Inputs {
    pub params: ModelParams,
    pub h: Matrix,
    pub edges: Option<Matrix>,
}

impl Inputs {
    pub fn seeded(kind: ModelKind, dims: Dims, g: &CsrGraph, seed: u64) -> Self {
        Inputs {
            params: ModelParams::seeded(kind, dims, seed).unwrap(),
            h: seeded_features(g.num_nodes(), dims.input, seed.wrapping_add(1)),
            edges: (kind == ModelKind::GatedGcn)
                .then(|| seeded_features(g.num_edges(), dims.input, seed.wrapping_add(2))),
        }
    }
}

/// Largest elementwise relative error of `got` against an f64 oracle, using
/// the [`rel_close`] scale.
pub fn max_oracle_err(got: &Matrix, want: &[Vec<f64>]) -> f64 {
    assert_eq!(got.rows(), want.len());
    let mut worst = 0.0f64;
    for (r, w) in want.iter().enumerate() {
        assert_eq!(got.cols(), w.len());
        for (c, &b) in w.iter().enumerate() {
            let a = got.get(r, c) as f64;
            worst = worst.max((a - b).abs() / (1.0 + a.abs().max(b.abs())));
        }
    }
    worst
}
