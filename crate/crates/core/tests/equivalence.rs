mod common;

use common::oracle::oracle_forward;
use common::{max_oracle_err, max_rel_err, random_graph, small_dims, Inputs};
use gnnflow::dataflow::{build_pipeline, execute_streaming_with, Scheduler};
use gnnflow::graph::build_csr;
use gnnflow::reference::forward;
use gnnflow::{EdgeList, ModelKind};

#[test]
fn reference_matches_dense_oracle_on_small_graphs() {
    for kind in ModelKind::ALL {
        for seed in 0..25 {
            let g = random_graph(seed, 1, 8);
            let dims = small_dims(kind, 6);
            let x = Inputs::seeded(kind, dims, &g, seed);
            let got = forward(&g, &x.h, &x.params, x.edges.as_ref()).unwrap();
            let (nodes, edges) = oracle_forward(&g, &x.h, &x.params, x.edges.as_ref());
            let err = max_oracle_err(&got.nodes, &nodes);
            assert!(err <= 1e-5, "{kind} seed {seed}: node err {err}");
            if let (Some(a), Some(b)) = (&got.edges, &edges) {
                let err = max_oracle_err(a, b);
                assert!(err <= 1e-5, "{kind} seed {seed}: edge err {err}");
            }
        }
    }
}

#[test]
fn streaming_matches_reference_across_widths() {
    for kind in ModelKind::ALL {
        for (w, width) in [8, 32].into_iter().enumerate() {
            for seed in 0..3u64 {
                let g = random_graph(seed * 7 + w as u64, 4, 150);
                let dims = small_dims(kind, width);
                let x = Inputs::seeded(kind, dims, &g, seed);
                let expected = forward(&g, &x.h, &x.params, x.edges.as_ref()).unwrap();
                let spec = build_pipeline(kind, dims, kind.default_num_cus()).unwrap();
                let got = execute_streaming_with(&spec, &g, &x.h, &x.params, x.edges.as_ref(), Scheduler::Threaded)
                    .unwrap();
                let err = max_rel_err(got.nodes.data(), expected.nodes.data());
                assert!(err <= 1e-4, "{kind} d={width} seed {seed}: {err}");
                if let (Some(a), Some(b)) = (&got.edges, &expected.edges) {
                    assert!(max_rel_err(a.data(), b.data()) <= 1e-4);
                }
            }
        }
    }
}

#[test]
fn streaming_matches_reference_at_default_dims() {
    for kind in ModelKind::ALL {
        let g = random_graph(11, 30, 60);
        let dims = kind.default_dims();
        let x = Inputs::seeded(kind, dims, &g, 5);
        let expected = forward(&g, &x.h, &x.params, x.edges.as_ref()).unwrap();
        let spec = build_pipeline(kind, dims, kind.default_num_cus()).unwrap();
        let got =
            execute_streaming_with(&spec, &g, &x.h, &x.params, x.edges.as_ref(), Scheduler::RoundRobin).unwrap();
        assert!(max_rel_err(got.nodes.data(), expected.nodes.data()) <= 1e-4, "{kind}");
    }
}

#[test]
fn edgeless_graph_takes_the_node_path_only() {
    let g = build_csr(&EdgeList::new(5, vec![]).unwrap());
    for kind in ModelKind::ALL {
        let dims = small_dims(kind, 8);
        let x = Inputs::seeded(kind, dims, &g, 1);
        let expected = forward(&g, &x.h, &x.params, x.edges.as_ref()).unwrap();
        for cus in [1, 3] {
            let spec = build_pipeline(kind, dims, cus).unwrap();
            for scheduler in [Scheduler::Threaded, Scheduler::RoundRobin] {
                let got = execute_streaming_with(&spec, &g, &x.h, &x.params, x.edges.as_ref(), scheduler).unwrap();
                assert_eq!(got, expected, "{kind} cus {cus} {scheduler:?}");
            }
        }
    }
}
