//! Per-vehicle and aggregate trip metrics, method comparisons, penetration
//! sweeps and the report files written by the CLI.

use std::fmt::Write as _;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::RoadNetwork;
use crate::sim::{Method, ScenarioConfig, SimError, SimOutcome, Simulation, Vehicle, VehicleKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("vehicle {0} has not completed its trip")]
    Incomplete(String),
    #[error("penetration rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: String,
    pub kind: VehicleKind,
    pub depart_time: f64,
    pub inserted_time: Option<f64>,
    pub arrival_time: Option<f64>,
    pub route: Vec<String>,
    pub route_length: f64,
    pub waiting: f64,
    /// Traversed route at the speed limit throughout.
    pub ideal_time: f64,
}

impl VehicleRecord {
    pub fn from_vehicle(net: &RoadNetwork, v: &Vehicle) -> Self {
        let traversed = v.traversed();
        VehicleRecord {
            id: v.id.clone(),
            kind: v.kind,
            depart_time: v.depart_time,
            inserted_time: v.inserted_time,
            arrival_time: v.arrival_time,
            route: net.edge_ids(traversed).map(str::to_string).collect(),
            route_length: net.path_length(traversed),
            waiting: v.waiting,
            ideal_time: traversed
                .iter()
                .map(|&e| net.edge(e).free_flow_time())
                .sum(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.arrival_time.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripMetrics {
    /// Wished departure to arrival.
    pub travel_time: f64,
    /// Insertion to arrival.
    pub duration: f64,
    pub waiting: f64,
    /// Duration beyond the ideal time.
    pub time_loss: f64,
}

pub fn vehicle_metrics(r: &VehicleRecord) -> Result<TripMetrics, MetricsError> {
    let (Some(inserted), Some(arrival)) = (r.inserted_time, r.arrival_time) else {
        return Err(MetricsError::Incomplete(r.id.clone()));
    };
    let duration = arrival - inserted;
    Ok(TripMetrics {
        travel_time: arrival - r.depart_time,
        duration,
        waiting: r.waiting,
        time_loss: duration - r.ideal_time,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub avg_travel_time: f64,
    pub avg_duration: f64,
    pub avg_waiting: f64,
    pub avg_time_loss: f64,
    pub completed: usize,
    pub incomplete: usize,
}

/// Means over completed trips; incomplete ones are only counted.
pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a VehicleRecord>) -> SummaryMetrics {
    let mut s = SummaryMetrics::default();
    for r in records {
        match vehicle_metrics(r) {
            Ok(m) => {
                s.completed += 1;
                s.avg_travel_time += m.travel_time;
                s.avg_duration += m.duration;
                s.avg_waiting += m.waiting;
                s.avg_time_loss += m.time_loss;
            }
            Err(_) => s.incomplete += 1,
        }
    }
    if s.completed > 0 {
        let n = s.completed as f64;
        s.avg_travel_time /= n;
        s.avg_duration /= n;
        s.avg_waiting /= n;
        s.avg_time_loss /= n;
    }
    s
}

pub fn aggregate_kind(records: &[VehicleRecord], kind: VehicleKind) -> SummaryMetrics {
    aggregate(records.iter().filter(|r| r.kind == kind))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: String,
    kind: VehicleKind,
    depart_time: f64,
    inserted_time: Option<f64>,
    arrival_time: Option<f64>,
    travel_time: Option<f64>,
    duration: Option<f64>,
    waiting: f64,
    time_loss: Option<f64>,
    ideal_time: f64,
    route_length: f64,
    route: String,
}

/// One row per vehicle. Floats use the shortest representation that parses
/// back to the same value.
pub fn metrics_csv(records: &[VehicleRecord]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        let m = vehicle_metrics(r).ok();
        w.serialize(CsvRow {
            id: r.id.clone(),
            kind: r.kind,
            depart_time: r.depart_time,
            inserted_time: r.inserted_time,
            arrival_time: r.arrival_time,
            travel_time: m.map(|m| m.travel_time),
            duration: m.map(|m| m.duration),
            waiting: r.waiting,
            time_loss: m.map(|m| m.time_loss),
            ideal_time: r.ideal_time,
            route_length: r.route_length,
            route: r.route.join(" "),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<VehicleRecord>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(VehicleRecord {
                id: row.id,
                kind: row.kind,
                depart_time: row.depart_time,
                inserted_time: row.inserted_time,
                arrival_time: row.arrival_time,
                route: row.route.split_whitespace().map(str::to_string).collect(),
                route_length: row.route_length,
                waiting: row.waiting,
                ideal_time: row.ideal_time,
            })
        })
        .collect()
}

/// Result of one simulation run under one method.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: Method,
    pub penetration_rate: f64,
    pub summary: SummaryMetrics,
    pub av: SummaryMetrics,
    pub hv: SummaryMetrics,
    pub outcome: SimOutcome,
}

impl RunReport {
    fn new(method: Method, penetration_rate: f64, outcome: SimOutcome) -> Self {
        RunReport {
            method,
            penetration_rate,
            summary: aggregate(&outcome.records),
            av: aggregate_kind(&outcome.records, VehicleKind::Av),
            hv: aggregate_kind(&outcome.records, VehicleKind::Hv),
            outcome,
        }
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method: {}", self.method);
        let _ = writeln!(out, "penetration_rate: {}", self.penetration_rate);
        let _ = writeln!(out, "vehicles: {}", self.outcome.records.len());
        let _ = writeln!(out, "autonomous: {}", self.outcome.n_av);
        let _ = writeln!(out, "steps: {}", self.outcome.steps);
        let _ = writeln!(out, "decisions: {}", self.outcome.decisions.len());
        let _ = writeln!(
            out,
            "fallback_decisions: {}",
            self.outcome.fallback_decisions
        );
        for (label, s) in [("all", &self.summary), ("av", &self.av), ("hv", &self.hv)] {
            let _ = writeln!(
                out,
                "{label}: completed {} incomplete {} travel_time {:.2} duration {:.2} \
                 waiting {:.2} time_loss {:.2}",
                s.completed,
                s.incomplete,
                s.avg_travel_time,
                s.avg_duration,
                s.avg_waiting,
                s.avg_time_loss
            );
        }
        out
    }

    /// Write `metrics.csv`, `decisions.log`, `events.log` and `summary.txt`.
    pub fn write_to(&self, dir: &FsPath) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), metrics_csv(&self.outcome.records)?)?;
        let lines = |v: &[String]| v.iter().map(|l| format!("{l}\n")).collect::<String>();
        std::fs::write(dir.join("decisions.log"), lines(&self.outcome.decisions))?;
        std::fs::write(dir.join("events.log"), lines(&self.outcome.events))?;
        std::fs::write(dir.join("summary.txt"), self.summary_text())?;
        Ok(())
    }
}

pub fn run_method(config: &ScenarioConfig, method: Method) -> Result<RunReport, MetricsError> {
    let config = ScenarioConfig {
        method,
        ..config.clone()
    };
    run_loaded(config, None)
}

/// Run with an already loaded network; `None` loads it from the config.
pub fn run_loaded(
    config: ScenarioConfig,
    net: Option<RoadNetwork>,
) -> Result<RunReport, MetricsError> {
    let (method, pr) = (config.method, config.penetration_rate);
    let sim = match net {
        Some(net) => Simulation::new(net, config)?,
        None => Simulation::from_config(config)?,
    };
    Ok(RunReport::new(method, pr, sim.run()?))
}

/// AVs rerun a full shortest-path search on live weights at every junction.
pub fn run_dynamic_dijkstra_baseline(config: &ScenarioConfig) -> Result<RunReport, MetricsError> {
    run_method(config, Method::DynamicDijkstra)
}

fn run_parallel(configs: Vec<ScenarioConfig>) -> Result<Vec<RunReport>, MetricsError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|c| s.spawn(move || run_loaded(c, None)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

/// One run per method on identical demand and seed.
pub fn run_comparison(
    config: &ScenarioConfig,
    methods: &[Method],
) -> Result<Vec<RunReport>, MetricsError> {
    run_parallel(
        methods
            .iter()
            .map(|&method| ScenarioConfig {
                method,
                ..config.clone()
            })
            .collect(),
    )
}

/// The configured method at each penetration rate.
pub fn pr_sweep(config: &ScenarioConfig, prs: &[f64]) -> Result<Vec<RunReport>, MetricsError> {
    if let Some(&bad) = prs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::InvalidRate(bad));
    }
    run_parallel(
        prs.iter()
            .map(|&penetration_rate| ScenarioConfig {
                penetration_rate,
                ..config.clone()
            })
            .collect(),
    )
}

const REPORT_HEADER: [&str; 11] = [
    "method",
    "pr",
    "n_av",
    "completed",
    "incomplete",
    "avg_travel_time",
    "avg_duration",
    "avg_waiting",
    "avg_time_loss",
    "av_travel_time",
    "decisions",
];

fn report_cells(r: &RunReport) -> [String; 11] {
    let s = &r.summary;
    [
        r.method.to_string(),
        format!("{}", r.penetration_rate),
        r.outcome.n_av.to_string(),
        s.completed.to_string(),
        s.incomplete.to_string(),
        format!("{:.2}", s.avg_travel_time),
        format!("{:.2}", s.avg_duration),
        format!("{:.2}", s.avg_waiting),
        format!("{:.2}", s.avg_time_loss),
        format!("{:.2}", r.av.avg_travel_time),
        r.outcome.decisions.len().to_string(),
    ]
}

/// Aligned text table, one row per run.
pub fn render_table(reports: &[RunReport]) -> String {
    let rows: Vec<[String; 11]> = reports.iter().map(report_cells).collect();
    let widths: Vec<usize> = (0..REPORT_HEADER.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain(std::iter::once(REPORT_HEADER[i].len()))
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(REPORT_HEADER.to_vec());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}

/// Same rows as [`render_table`] with full float precision.
pub fn report_csv(reports: &[RunReport]) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        let s = &r.summary;
        w.write_record([
            r.method.to_string(),
            r.penetration_rate.to_string(),
            r.outcome.n_av.to_string(),
            s.completed.to_string(),
            s.incomplete.to_string(),
            s.avg_travel_time.to_string(),
            s.avg_duration.to_string(),
            s.avg_waiting.to_string(),
            s.avg_time_loss.to_string(),
            r.av.avg_travel_time.to_string(),
            r.outcome.decisions.len().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(id: &str, depart: f64, inserted: f64, arrival: Option<f64>) -> VehicleRecord {
        VehicleRecord {
            id: id.into(),
            kind: VehicleKind::Hv,
            depart_time: depart,
            inserted_time: Some(inserted),
            arrival_time: arrival,
            route: vec!["a".into(), "b".into()],
            route_length: 500.0,
            waiting: 3.0,
            ideal_time: 36.0,
        }
    }

    #[test]
    fn per_vehicle_metrics() {
        let m = vehicle_metrics(&record("v", 10.0, 12.0, Some(60.0))).unwrap();
        assert_eq!(m.travel_time, 50.0);
        assert_eq!(m.duration, 48.0);
        assert_eq!(m.time_loss, 12.0);
        let same = vehicle_metrics(&record("v", 12.0, 12.0, Some(60.0))).unwrap();
        assert_eq!(same.travel_time, same.duration);
        assert!(matches!(
            vehicle_metrics(&record("v", 0.0, 0.0, None)),
            Err(MetricsError::Incomplete(_))
        ));
    }

    #[test]
    fn aggregate_means() {
        let one = [record("a", 0.0, 0.0, Some(100.0))];
        let s = aggregate(&one);
        assert_eq!(s.avg_travel_time, 100.0);
        assert_eq!(s.avg_time_loss, 64.0);
        let two = [
            record("a", 0.0, 0.0, Some(100.0)),
            record("b", 0.0, 0.0, Some(200.0)),
        ];
        assert_eq!(aggregate(&two).avg_travel_time, 150.0);
        let with_open = [
            record("a", 0.0, 0.0, Some(100.0)),
            record("b", 0.0, 0.0, None),
        ];
        let s = aggregate(&with_open);
        assert_eq!((s.completed, s.incomplete), (1, 1));
        assert_eq!(s.avg_travel_time, 100.0);
        assert_eq!(aggregate(&[]), SummaryMetrics::default());
    }

    #[test]
    fn table_rendering() {
        let mut config = ScenarioConfig::manhattan_random(2, 0.2, Method::StaticDijkstra);
        config.demand.vehicles = 10;
        let reports = run_comparison(&config, &Method::ALL).unwrap();
        let table = render_table(&reports);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().next().unwrap().starts_with("method"));
        let csv = report_csv(&reports).unwrap();
        assert_eq!(csv.lines().count(), 4);
        let single = run_comparison(&config, &[Method::DynamicDijkstra]).unwrap();
        assert_eq!(render_table(&single).lines().count(), 2);
    }

    #[test]
    fn sweep_rows_and_bounds() {
        let mut config = ScenarioConfig::manhattan_random(4, 0.0, Method::CandidateChoice);
        config.demand.vehicles = 20;
        let rows = pr_sweep(&config, &[0.0, 0.05, 0.5]).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.outcome.n_av).collect::<Vec<_>>(),
            [0, 1, 10]
        );
        assert!(matches!(
            pr_sweep(&config, &[1.2]),
            Err(MetricsError::InvalidRate(_))
        ));
    }

    #[test]
    fn outputs_written() {
        let mut config = ScenarioConfig::manhattan_random(2, 0.5, Method::CandidateChoice);
        config.demand.vehicles = 8;
        let report = run_method(&config, Method::CandidateChoice).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.write_to(dir.path()).unwrap();
        for f in ["metrics.csv", "decisions.log", "events.log", "summary.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(parse_metrics_csv(&text).unwrap(), report.outcome.records);
    }

    fn arb_record() -> impl Strategy<Value = VehicleRecord> {
        (
            "[a-z]{1,6}",
            0.0f64..500.0,
            0.0f64..50.0,
            proptest::option::of(1.0f64..900.0),
            0.0f64..100.0,
            proptest::collection::vec("[A-Z][0-9][A-Z][0-9]", 0..5),
        )
            .prop_map(|(id, depart, delay, dur, waiting, route)| VehicleRecord {
                id,
                kind: if waiting > 50.0 {
                    VehicleKind::Av
                } else {
                    VehicleKind::Hv
                },
                depart_time: depart,
                inserted_time: Some(depart + delay),
                arrival_time: dur.map(|d| depart + delay + d),
                route_length: 200.0 * route.len() as f64,
                route,
                waiting,
                ideal_time: 10.0,
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(records in proptest::collection::vec(arb_record(), 0..8)) {
            let text = metrics_csv(&records).unwrap();
            let back = parse_metrics_csv(&text).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in records.iter().zip(&back) {
                prop_assert_eq!(&a.id, &b.id);
                prop_assert!((a.depart_time - b.depart_time).abs() <= 1e-9);
                prop_assert_eq!(a.arrival_time.is_some(), b.arrival_time.is_some());
                if let (Some(x), Some(y)) = (a.arrival_time, b.arrival_time) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
                prop_assert_eq!(&a.route, &b.route);
            }
        }

        #[test]
        fn aggregate_is_permutation_invariant(records in proptest::collection::vec(arb_record(), 1..8), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate(&records);
            let b = aggregate(&shuffled);
            prop_assert_eq!(a.completed, b.completed);
            assert_relative_eq!(a.avg_travel_time, b.avg_travel_time, epsilon = 1e-9);
            assert_relative_eq!(a.avg_waiting, b.avg_waiting, epsilon = 1e-9);
        }
    }
}
