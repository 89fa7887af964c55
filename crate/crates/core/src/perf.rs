//! Closed-form cycle estimates and comparison against the shipped CPU/GPU/HLS
//! baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataflow::{build_pipeline, CycleReport, PipelineSpec, StageCycles};
use crate::error::{Error, Result};
use crate::graph::DegreeStats;
use crate::model::{Dims, ModelKind};

pub use crate::ii::{ii_eval, IiFormula};

const HARDWARE_JSON: &str = include_str!("../data/hardware.json");
const BASELINES_CSV: &str = include_str!("../data/baselines.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub model: ModelKind,
    pub frequency_mhz: f64,
    pub num_cus: usize,
}

impl HardwareProfile {
    pub fn new(model: ModelKind, frequency_mhz: f64, num_cus: usize) -> Result<Self> {
        let p = Self {
            model,
            frequency_mhz,
            num_cus,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_mhz > 0.0) || !self.frequency_mhz.is_finite() {
            return Err(Error::Invalid(format!(
                "frequency must be positive, got {} MHz",
                self.frequency_mhz
            )));
        }
        if self.num_cus == 0 {
            return Err(Error::Invalid("num_cus must be at least 1".into()));
        }
        Ok(())
    }

    pub fn frequency_hz(&self) -> f64 {
        self.frequency_mhz * 1e6
    }

    /// Shipped achieved frequency and CU count for `model`.
    pub fn builtin(model: ModelKind) -> Self {
        Self::builtin_all()
            .into_iter()
            .find(|p| p.model == model)
            .expect("hardware.json covers every model")
    }

    pub fn builtin_all() -> Vec<Self> {
        serde_json::from_str(HARDWARE_JSON).expect("shipped hardware.json is valid")
    }
}

/// Closed-form cycle count of `spec` over `n` nodes and `m` edges: each stage
/// costs the sum of its II over all work items, each kernel costs its busiest
/// stage, kernels add up, and CUs divide the total evenly.
pub fn analytic_for_spec(spec: &PipelineSpec, n: usize, m: usize, frequency_hz: f64) -> Result<CycleReport> {
    spec.validate()?;
    if !(frequency_hz > 0.0) {
        return Err(Error::Invalid(format!("frequency must be positive, got {frequency_hz}")));
    }
    let avg = if n == 0 { 0.0 } else { m as f64 / n as f64 };
    let kernel_of = |id: &str| spec.kernels.iter().position(|k| k.iter().any(|s| s == id)).unwrap();
    let stages: Vec<StageCycles> = spec
        .stages
        .iter()
        .map(|s| StageCycles {
            id: s.id.clone(),
            kernel: kernel_of(&s.id),
            cycles: s.total_cycles(n as u64, m as u64),
            latency: s.latency_at(avg),
        })
        .collect();
    let cus = spec.num_cus as f64;
    let kernel_cycles: Vec<f64> = (0..spec.kernels.len())
        .map(|k| {
            stages
                .iter()
                .filter(|s| s.kernel == k)
                .map(|s| s.cycles)
                .max()
                .unwrap_or(0) as f64
                / cus
        })
        .collect();
    let total: f64 = kernel_cycles.iter().sum();
    Ok(CycleReport {
        model: spec.model,
        method: "analytic".into(),
        num_cus: spec.num_cus,
        bottleneck: CycleReport::bottleneck_of(&stages),
        latency_sum: stages.iter().map(|s| s.latency).sum(),
        stages,
        kernel_cycles,
        total_cycles: total,
        bound_cycles: total,
        frequency_hz,
        seconds: total / frequency_hz,
    })
}

pub fn analytic_cycles(
    model: ModelKind,
    stats: &DegreeStats,
    dims: Dims,
    profile: &HardwareProfile,
) -> Result<CycleReport> {
    profile.validate()?;
    if profile.model != model {
        return Err(Error::Invalid(format!(
            "hardware profile is for {}, not {model}",
            profile.model
        )));
    }
    let spec = build_pipeline(model, dims, profile.num_cus)?;
    analytic_for_spec(&spec, stats.n, stats.m, profile.frequency_hz())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Cpu,
    Gpu,
    Hls,
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Platform::Cpu => "cpu",
            Platform::Gpu => "gpu",
            Platform::Hls => "hls",
        })
    }
}

impl FromStr for Platform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cpu" => Ok(Platform::Cpu),
            "gpu" => Ok(Platform::Gpu),
            "hls" | "fpga" => Ok(Platform::Hls),
            _ => Err(Error::Invalid(format!("unknown platform `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub model: ModelKind,
    pub dataset: String,
    pub platform: Platform,
    pub time_s: Option<f64>,
    pub energy_j: Option<f64>,
    pub oom: bool,
}

const BASELINE_HEADER: [&str; 6] = ["model", "dataset", "platform", "time_s", "energy_j", "oom"];

#[derive(Deserialize)]
struct RawBaseline {
    model: String,
    dataset: String,
    platform: String,
    time_s: Option<f64>,
    energy_j: Option<f64>,
    oom: bool,
}

pub fn parse_baselines(text: &str) -> Result<Vec<BaselineRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().ne(BASELINE_HEADER) {
        return Err(parse_err(1, format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line() as usize;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(line, e.to_string())),
        }
        let line = record.position().map_or(line, |p| p.line() as usize);
        let err = |message: String| parse_err(line, message);
        let raw: RawBaseline = record.deserialize(Some(&header)).map_err(|e| err(e.to_string()))?;
        for (what, v) in [("time", raw.time_s), ("energy", raw.energy_j)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(err(format!("{what} must be positive, got {v}")));
                }
            }
        }
        if !raw.oom && raw.time_s.is_none() {
            return Err(err("time is required unless the row is out of memory".into()));
        }
        rows.push(BaselineRow {
            model: raw.model.parse().map_err(|e: Error| err(e.to_string()))?,
            dataset: raw.dataset,
            platform: raw.platform.parse().map_err(|e: Error| err(e.to_string()))?,
            time_s: raw.time_s,
            energy_j: raw.energy_j,
            oom: raw.oom,
        });
    }
    Ok(rows)
}

/// The shipped CPU/GPU/HLS execution time and energy tables.
pub fn builtin_baselines() -> Vec<BaselineRow> {
    parse_baselines(BASELINES_CSV).expect("shipped baselines.csv is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub dataset: String,
    /// `cpu_speedup`, `gpu_speedup`, `cpu_energy_reduction` or `gpu_energy_reduction`.
    pub metric: String,
    pub value: Option<f64>,
    pub oom: bool,
}

impl ComparisonRow {
    pub fn csv_header() -> &'static str {
        "model,dataset,metric,value,oom"
    }

    /// Ratios are printed with at most three decimals.
    pub fn to_csv(&self) -> String {
        let value = self.value.map(format_ratio).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.model, self.dataset, self.metric, value, self.oom
        )
    }
}

pub fn format_ratio(v: f64) -> String {
    let rounded = (v * 1000.0).round() / 1000.0;
    format!("{rounded}")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

impl Comparison {
    /// Largest non-OoM value of `metric`.
    pub fn max_of(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.value.is_some())
            .max_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ComparisonRow::csv_header());
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}

/// Divides CPU and GPU time and energy by the HLS figures for every
/// (model, dataset) pair with an HLS row. Missing baselines produce warnings;
/// OoM baselines produce flagged rows without a value.
pub fn speedup_table(baselines: &[BaselineRow]) -> Comparison {
    let mut by_key: BTreeMap<(ModelKind, String), BTreeMap<Platform, &BaselineRow>> = BTreeMap::new();
    for row in baselines {
        by_key
            .entry((row.model, row.dataset.clone()))
            .or_default()
            .insert(row.platform, row);
    }
    let mut out = Comparison::default();
    for ((model, dataset), rows) in &by_key {
        let Some(hls) = rows.get(&Platform::Hls) else {
            out.warnings
                .push(format!("{model}/{dataset}: no hls row, skipped"));
            continue;
        };
        for platform in [Platform::Cpu, Platform::Gpu] {
            let Some(base) = rows.get(&platform) else {
                out.warnings
                    .push(format!("{model}/{dataset}: no {platform} row"));
                continue;
            };
            let oom = base.oom || hls.oom;
            let ratio = |num: Option<f64>, den: Option<f64>| match (oom, num, den) {
                (false, Some(a), Some(b)) => Some(a / b),
                _ => None,
            };
            for (metric, value) in [
                (format!("{platform}_speedup"), ratio(base.time_s, hls.time_s)),
                (
                    format!("{platform}_energy_reduction"),
                    ratio(base.energy_j, hls.energy_j),
                ),
            ] {
                if value.is_none() && !oom {
                    out.warnings
                        .push(format!("{model}/{dataset}: {metric} has missing values"));
                }
                out.rows.push(ComparisonRow {
                    model: *model,
                    dataset: dataset.clone(),
                    metric,
                    value,
                    oom,
                });
            }
        }
    }
    out
}

/// Replaces the HLS time of every (model, dataset) in `estimates` so that the
/// comparison uses modelled instead of measured seconds.
pub fn with_hls_times(baselines: &[BaselineRow], estimates: &[(ModelKind, String, f64)]) -> Vec<BaselineRow> {
    let mut rows = baselines.to_vec();
    for (model, dataset, seconds) in estimates {
        match rows
            .iter_mut()
            .find(|r| r.model == *model && &r.dataset == dataset && r.platform == Platform::Hls)
        {
            Some(r) => r.time_s = Some(*seconds),
            None => rows.push(BaselineRow {
                model: *model,
                dataset: dataset.clone(),
                platform: Platform::Hls,
                time_s: Some(*seconds),
                energy_j: None,
                oom: false,
            }),
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphSummary;

    fn mt() -> DegreeStats {
        GraphSummary::builtin("MT").unwrap().to_stats()
    }

    #[test]
    fn gcn_on_mt() {
        let r = analytic_cycles(
            ModelKind::Gcn,
            &mt(),
            Dims::square(128),
            &HardwareProfile::builtin(ModelKind::Gcn),
        )
        .unwrap();
        let cycles = |id: &str| r.stages.iter().find(|s| s.id == id).unwrap().cycles;
        assert_eq!(cycles("vmm"), 23_855_276);
        assert_eq!(cycles("aggregate"), 1_499_678);
        assert_eq!(r.bottleneck, "vmm");
        assert_eq!(r.total_cycles, 11_927_638.0);
        assert!((r.seconds - 0.0477).abs() < 5e-5);
    }

    #[test]
    fn gated_gcn_on_mt() {
        let r = analytic_cycles(
            ModelKind::GatedGcn,
            &mt(),
            Dims::square(32),
            &HardwareProfile::builtin(ModelKind::GatedGcn),
        )
        .unwrap();
        assert_eq!(r.bottleneck, "soft_attention");
        assert_eq!(r.total_cycles, 13_494_948.0);
        assert!((r.seconds - 0.0500).abs() < 5e-5);
    }

    #[test]
    fn empty_graph_is_free() {
        let stats = DegreeStats {
            n: 0,
            m: 0,
            max_degree: 0,
            avg_degree: 0.0,
            degrees: None,
        };
        for kind in ModelKind::ALL {
            let r = analytic_cycles(kind, &stats, kind.default_dims(), &HardwareProfile::builtin(kind)).unwrap();
            assert_eq!(r.total_cycles, 0.0);
            assert_eq!(r.seconds, 0.0);
        }
    }

    #[test]
    fn profiles_cover_all_models() {
        let freqs: Vec<(ModelKind, f64, usize)> = ModelKind::ALL
            .iter()
            .map(|&k| {
                let p = HardwareProfile::builtin(k);
                (k, p.frequency_mhz, p.num_cus)
            })
            .collect();
        assert_eq!(
            freqs,
            vec![
                (ModelKind::Gcn, 250.0, 2),
                (ModelKind::GraphSage, 204.0, 1),
                (ModelKind::Gin, 190.0, 1),
                (ModelKind::Gat, 255.0, 1),
                (ModelKind::MoNet, 250.0, 2),
                (ModelKind::GatedGcn, 270.0, 1),
            ]
        );
        for k in ModelKind::ALL {
            assert_eq!(HardwareProfile::builtin(k).num_cus, k.default_num_cus());
        }
    }

    #[test]
    fn shipped_ratios() {
        let table = speedup_table(&builtin_baselines());
        let find = |m: ModelKind, d: &str, metric: &str| {
            table
                .rows
                .iter()
                .find(|r| r.model == m && r.dataset == d && r.metric == metric)
                .unwrap()
                .clone()
        };
        assert_eq!(find(ModelKind::Gcn, "MT", "cpu_speedup").to_csv(), "GCN,MT,cpu_speedup,2.2,false");
        let e = find(ModelKind::Gcn, "MT", "cpu_energy_reduction").value.unwrap();
        assert!((e - 9.06 / 0.80).abs() < 1e-12);
        let oom = find(ModelKind::Gat, "PT", "gpu_speedup");
        assert!(oom.oom && oom.value.is_none());
        assert!(table.warnings.is_empty(), "{:?}", table.warnings);
        assert_eq!(table.rows.len(), 24 * 4);
    }

    #[test]
    fn missing_rows_warn() {
        let rows: Vec<BaselineRow> = builtin_baselines()
            .into_iter()
            .filter(|r| !(r.model == ModelKind::Gin && r.dataset == "AX" && r.platform == Platform::Cpu))
            .collect();
        let table = speedup_table(&rows);
        assert_eq!(table.warnings.len(), 1);
        assert!(table.warnings[0].contains("GIN/AX"));
    }

    #[test]
    fn baseline_parser_rejects_bad_rows() {
        let head = "model,dataset,platform,time_s,energy_j,oom\n";
        assert!(parse_baselines(&format!("{head}GCN,MT,cpu,0.1,1,false")).is_ok());
        assert!(parse_baselines(&format!("{head}GCN,MT,tpu,0.1,1,false")).is_err());
        assert!(parse_baselines(&format!("{head}GCN,MT,cpu,,1,false")).is_err());
        assert!(parse_baselines(&format!("{head}GCN,MT,cpu,-1,1,false")).is_err());
        assert!(parse_baselines(&format!("{head}GCN,MT,cpu,0.1,1")).is_err());
        assert!(parse_baselines("model,dataset\n").is_err());
    }

    #[test]
    fn ratio_formatting() {
        assert_eq!(format_ratio(0.11 / 0.05), "2.2");
        assert_eq!(format_ratio(50.6836), "50.684");
        assert_eq!(format_ratio(3.0), "3");
    }
}
