mod common;

use common::random_graph;
use gnnflow::dataflow::{build_pipeline, simulate_cycles, SimOptions};
use gnnflow::ModelKind;

#[test]
fn unbounded_simulation_stays_within_latency_of_bound() {
    for kind in ModelKind::ALL {
        let spec = build_pipeline(kind, kind.default_dims(), 1).unwrap();
        for seed in 0..10 {
            let g = random_graph(seed * 31 + 7, 1, 50);
            let r = simulate_cycles(&spec, &g.degrees(), 1e8, &SimOptions::unbounded()).unwrap();
            let b = r.bound_cycles;
            assert!(b <= r.total_cycles, "{kind} seed {seed}: T {} < B {b}", r.total_cycles);
            assert!(
                r.total_cycles <= b + r.latency_sum as f64,
                "{kind} seed {seed}: T {} > B {b} + L {}",
                r.total_cycles,
                r.latency_sum
            );
        }
    }
}
