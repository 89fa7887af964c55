mod common;

use common::oracle::{spatial_oracle, temporal_oracle};
use common::{random_graph, small_dims, Inputs};
use gnnflow::characterize::{
    characterize, run_traced, spatial_score, temporal_score, Trace, TEMPORAL_CAP,
};
use gnnflow::graph::sample_nodes;
use gnnflow::ModelKind;

#[test]
fn scores_match_brute_force_on_100_node_graphs() {
    for kind in ModelKind::ALL {
        let g = random_graph(100 + kind as u64, 100, 100);
        let dims = small_dims(kind, 8);
        let x = Inputs::seeded(kind, dims, &g, 9);
        let nodes = sample_nodes(&g, 100, 42).unwrap();
        let t = run_traced(&g, "r100", &x.h, &x.params, x.edges.as_ref(), &nodes).unwrap();
        let addrs: Vec<u64> = t.addresses().collect();
        assert_eq!(spatial_score(&t).unwrap(), spatial_oracle(&addrs), "{kind}");
        assert_eq!(temporal_score(&t).unwrap(), temporal_oracle(&addrs, TEMPORAL_CAP), "{kind}");
    }
}

#[test]
fn binary_dump_round_trips_a_real_trace() {
    let g = random_graph(3, 20, 20);
    let x = Inputs::seeded(ModelKind::Gat, small_dims(ModelKind::Gat, 8), &g, 1);
    let (t, summary) = characterize(&g, "r20", &x.h, &x.params, None, &[0, 5, 7]).unwrap();
    let mut buf = Vec::new();
    t.write_binary(&mut buf).unwrap();
    assert_eq!(buf.len(), 4 + 10 * t.len());
    assert_eq!(Trace::read_events(buf.as_slice()).unwrap(), t.events);
    assert_eq!(summary.events, t.len());
    assert_eq!(summary.sample_size, 3);
}
