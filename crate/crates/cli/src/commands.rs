use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gnnflow::characterize::{characterize_trace, run_traced, DEFAULT_DENSE_GRAPH};
use gnnflow::dataflow::{build_pipeline, execute_streaming_with, simulate_cycles, CycleReport, Scheduler, SimOptions};
use gnnflow::graph::{degree_stats, sample_nodes};
use gnnflow::perf::{
    analytic_cycles, builtin_baselines, parse_baselines, speedup_table, with_hls_times, HardwareProfile,
};
use gnnflow::reference::{forward, seeded_features, ModelParams};
use gnnflow::synth::generate;
use gnnflow::{CsrGraph, Dims, Matrix, ModelKind};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{load_graph, load_stats, Flags, GraphSource, RunConfig};
use crate::SchedulerArg;

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, report: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    write_text(&dir.join("report.json"), &text)
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    m.write_to(BufWriter::new(File::create(path)?))
        .with_context(|| format!("writing {}", path.display()))
}

fn graph_json(name: &str, g: &CsrGraph) -> Value {
    json!({ "name": name, "n": g.num_nodes(), "m": g.num_edges() })
}

struct Inputs {
    params: ModelParams,
    dims: Dims,
    h: Matrix,
    edges: Option<Matrix>,
}

/// Parameters plus seeded node (and for GatedGCN, edge) features.
fn inputs(cfg: &RunConfig, kind: ModelKind, g: &CsrGraph) -> Result<Inputs> {
    let (params, dims) = cfg.params_for(kind)?;
    Ok(Inputs {
        params,
        dims,
        h: seeded_features(g.num_nodes(), dims.input, cfg.seed.wrapping_add(1)),
        edges: (kind == ModelKind::GatedGcn)
            .then(|| seeded_features(g.num_edges(), dims.input, cfg.seed.wrapping_add(2))),
    })
}

/// `|a - b| / (1 + max(|a|, |b|))`, maximized over elements.
fn max_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x as f64, y as f64);
            (x - y).abs() / (1.0 + x.abs().max(y.abs()))
        })
        .fold(0.0, f64::max)
}

pub fn gen(flags: &Flags) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let Some(GraphSource::Synthetic(spec)) = &cfg.graph else {
        bail!("gen needs a synthetic spec: --nodes N [--avg-degree A] [--topology T] [--seed S]");
    };
    let el = generate(spec)?;
    let loaded = load_graph(cfg.graph.as_ref(), None)?;
    prepare_out(&cfg.out)?;
    let file = cfg.out.join(format!("{}.txt", loaded.name));
    write_text(&file, &el.to_text())?;
    let stats = degree_stats(&loaded.csr);
    write_report(
        &cfg.out,
        &json!({
            "command": "gen",
            "spec": spec,
            "file": file.file_name().map(|f| f.to_string_lossy().into_owned()),
            "n": stats.n,
            "m": stats.m,
            "max_degree": stats.max_degree,
            "avg_degree": stats.avg_degree,
        }),
    )?;
    println!("{}: n={} m={} max_degree={}", file.display(), stats.n, stats.m, stats.max_degree);
    Ok(true)
}

pub fn run(flags: &Flags, save_params: bool) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let kind = cfg.model()?;
    let g = load_graph(cfg.graph.as_ref(), None)?;
    let x = inputs(&cfg, kind, &g.csr)?;
    let out = forward(&g.csr, &x.h, &x.params, x.edges.as_ref())?;
    prepare_out(&cfg.out)?;
    write_matrix(&cfg.out.join("nodes.gnnh"), &out.nodes)?;
    if let Some(e) = &out.edges {
        write_matrix(&cfg.out.join("edges.gnnh"), e)?;
    }
    if save_params {
        x.params.save(x.dims, &cfg.out.join("params"))?;
    }
    write_report(
        &cfg.out,
        &json!({
            "command": "run",
            "model": kind,
            "dims": x.dims,
            "seed": cfg.seed,
            "graph": graph_json(&g.name, &g.csr),
            "output": { "rows": out.nodes.rows(), "cols": out.nodes.cols(), "finite": out.nodes.is_finite() },
        }),
    )?;
    println!("{kind} on {}: wrote {}x{} outputs", g.name, out.nodes.rows(), out.nodes.cols());
    Ok(true)
}

pub fn pipeline(flags: &Flags, scheduler: SchedulerArg, capacity: Option<usize>, tolerance: f64) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let kind = cfg.model()?;
    let g = load_graph(cfg.graph.as_ref(), None)?;
    let x = inputs(&cfg, kind, &g.csr)?;
    let cus = cfg.num_cus.unwrap_or_else(|| kind.default_num_cus());
    let mut spec = build_pipeline(kind, x.dims, cus)?;
    if let Some(c) = capacity {
        if c == 0 {
            bail!("--capacity must be at least 1");
        }
        spec = spec.with_capacity(c);
    }
    let scheduler = match scheduler {
        SchedulerArg::Threaded => Scheduler::Threaded,
        SchedulerArg::RoundRobin => Scheduler::RoundRobin,
    };
    let expected = forward(&g.csr, &x.h, &x.params, x.edges.as_ref())?;
    let got = execute_streaming_with(&spec, &g.csr, &x.h, &x.params, x.edges.as_ref(), scheduler)?;
    let mut err = max_rel_err(&got.nodes, &expected.nodes);
    if let (Some(a), Some(b)) = (&got.edges, &expected.edges) {
        err = err.max(max_rel_err(a, b));
    }
    let passed = err <= tolerance;
    let check = format!("max rel err {err:.3e} <= {tolerance:e}");
    prepare_out(&cfg.out)?;
    write_matrix(&cfg.out.join("nodes.gnnh"), &got.nodes)?;
    write_report(
        &cfg.out,
        &json!({
            "command": "pipeline",
            "model": kind,
            "dims": x.dims,
            "num_cus": cus,
            "seed": cfg.seed,
            "scheduler": format!("{scheduler:?}"),
            "graph": graph_json(&g.name, &g.csr),
            "max_rel_err": err,
            "tolerance": tolerance,
            "check": check,
            "passed": passed,
        }),
    )?;
    println!("{check}: {}", if passed { "pass" } else { "FAIL" });
    Ok(passed)
}

fn profile(cfg: &RunConfig, kind: ModelKind) -> Result<HardwareProfile> {
    let base = HardwareProfile::builtin(kind);
    Ok(HardwareProfile::new(
        kind,
        cfg.frequency_mhz.unwrap_or(base.frequency_mhz),
        cfg.num_cus.unwrap_or(base.num_cus),
    )?)
}

fn write_cycles(cfg: &RunConfig, command: &str, dataset: &str, dims: Dims, r: &CycleReport) -> Result<()> {
    prepare_out(&cfg.out)?;
    write_text(&cfg.out.join("cycles.csv"), &r.to_csv(dataset))?;
    write_report(
        &cfg.out,
        &json!({ "command": command, "dataset": dataset, "dims": dims, "cycles": r }),
    )
}

pub fn sim(flags: &Flags, capacity: Option<usize>, unbounded: bool, check_bounds: bool) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let kind = cfg.model()?;
    if check_bounds && !unbounded {
        bail!("--check-bounds applies to unbounded FIFOs; add --unbounded");
    }
    let dims = cfg.dims_for(kind)?;
    let hw = profile(&cfg, kind)?;
    let g = load_graph(cfg.graph.as_ref(), None)?;
    let mut spec = build_pipeline(kind, dims, hw.num_cus)?;
    if let Some(c) = capacity {
        if c == 0 {
            bail!("--capacity must be at least 1");
        }
        spec = spec.with_capacity(c);
    }
    let options = if unbounded { SimOptions::unbounded() } else { SimOptions::default() };
    let r = simulate_cycles(&spec, &g.csr.degrees(), hw.frequency_hz(), &options)?;
    write_cycles(&cfg, "sim", &g.name, dims, &r)?;
    println!(
        "{kind} on {}: {} cycles (bound {}), bottleneck {}, {:.6} s",
        g.name, r.total_cycles, r.bound_cycles, r.bottleneck, r.seconds
    );
    if check_bounds {
        let upper = r.bound_cycles + r.latency_sum as f64;
        let ok = r.bound_cycles <= r.total_cycles && r.total_cycles <= upper;
        println!(
            "bound {} <= total {} <= bound + latencies {}: {}",
            r.bound_cycles,
            r.total_cycles,
            upper,
            if ok { "pass" } else { "FAIL" }
        );
        return Ok(ok);
    }
    Ok(true)
}

pub fn model(flags: &Flags) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let kind = cfg.model()?;
    let dims = cfg.dims_for(kind)?;
    let hw = profile(&cfg, kind)?;
    if cfg.graph.is_none() {
        bail!("model needs --summary, --graph or --nodes");
    }
    let (name, stats) = load_stats(cfg.graph.as_ref())?;
    let r = analytic_cycles(kind, &stats, dims, &hw)?;
    write_cycles(&cfg, "model", &name, dims, &r)?;
    println!(
        "{kind} on {name}: {} cycles, bottleneck {}, {:.4} s",
        r.total_cycles, r.bottleneck, r.seconds
    );
    Ok(true)
}

pub fn characterize(flags: &Flags, sample: usize, sample_seed: u64, dump_traces: bool) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let kinds = match cfg.model {
        Some(k) => vec![k],
        None if cfg.dims.is_some() || cfg.params.is_some() => {
            bail!("--dims and --params need a single --model")
        }
        None => ModelKind::ALL.to_vec(),
    };
    let default_graph = gnnflow::synth::SynthSpec {
        seed: flags.seed.unwrap_or(DEFAULT_DENSE_GRAPH.seed),
        ..DEFAULT_DENSE_GRAPH
    };
    let g = load_graph(cfg.graph.as_ref(), Some(default_graph))?;
    let nodes = sample_nodes(&g.csr, sample, sample_seed)?;
    prepare_out(&cfg.out)?;
    let mut csv = String::from(gnnflow::characterize::Characterization::csv_header());
    csv.push('\n');
    let mut rows = Vec::new();
    for kind in kinds {
        let x = inputs(&cfg, kind, &g.csr)?;
        let trace = run_traced(&g.csr, &g.name, &x.h, &x.params, x.edges.as_ref(), &nodes)?;
        if dump_traces {
            let path = cfg.out.join(format!("{kind}.gnnt"));
            trace
                .write_binary(BufWriter::new(File::create(&path)?))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        let c = characterize_trace(&trace)?;
        println!(
            "{kind}: branch {:.3} memory {:.3} compute {:.3} spatial {:.4} temporal {:.4}",
            c.mix.branch, c.mix.memory, c.mix.compute, c.scores.spatial, c.scores.temporal
        );
        csv.push_str(&c.to_csv());
        csv.push('\n');
        rows.push(json!({ "dims": x.dims, "summary": c }));
    }
    write_text(&cfg.out.join("characterization.csv"), &csv)?;
    write_report(
        &cfg.out,
        &json!({
            "command": "characterize",
            "graph": graph_json(&g.name, &g.csr),
            "sample": sample,
            "sample_seed": sample_seed,
            "seed": cfg.seed,
            "models": rows,
        }),
    )?;
    Ok(true)
}

#[derive(Deserialize)]
struct ModelReport {
    dataset: String,
    cycles: CycleReport,
}

pub fn compare(flags: &Flags, baselines: Option<&Path>, reports: &[PathBuf]) -> Result<bool> {
    let cfg = RunConfig::resolve(flags)?;
    let mut rows = match baselines {
        Some(path) => parse_baselines(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => builtin_baselines(),
    };
    if !reports.is_empty() {
        let mut estimates = Vec::new();
        for path in reports {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let r: ModelReport =
                serde_json::from_str(&text).with_context(|| format!("{} is not a model report", path.display()))?;
            estimates.push((r.cycles.model, r.dataset, r.cycles.seconds));
        }
        rows = with_hls_times(&rows, &estimates);
    }
    let table = speedup_table(&rows);
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let metrics = ["cpu_speedup", "gpu_speedup", "cpu_energy_reduction", "gpu_energy_reduction"];
    let mut maxima = serde_json::Map::new();
    for metric in metrics {
        if let Some(r) = table.max_of(metric) {
            let value = r.value.unwrap();
            println!("max {metric}: {} ({}/{})", gnnflow::perf::format_ratio(value), r.model, r.dataset);
            maxima.insert(
                metric.to_string(),
                json!({ "model": r.model, "dataset": r.dataset, "value": value }),
            );
        }
    }
    let oom: Vec<Value> = table
        .rows
        .iter()
        .filter(|r| r.oom)
        .map(|r| json!({ "model": r.model, "dataset": r.dataset, "metric": r.metric }))
        .collect();
    prepare_out(&cfg.out)?;
    write_text(&cfg.out.join("comparison.csv"), &table.to_csv())?;
    write_report(
        &cfg.out,
        &json!({
            "command": "compare",
            "hls_from_reports": reports.len(),
            "maxima": maxima,
            "oom": oom,
            "warnings": table.warnings,
        }),
    )?;
    Ok(true)
}
