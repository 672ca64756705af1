use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dynroute::gateway::stub::{StubMode, StubServer};
use dynroute::gateway::HttpBackend;
use dynroute::golden;
use dynroute::metrics::{pr_sweep, render_table, report_csv, run_comparison, run_loaded};
use dynroute::network::{generate_grid4x4, generate_manhattan};
use dynroute::sim::{Method, ScenarioConfig};

#[derive(Parser)]
#[command(name = "dynroute", version, about = "Dynamic route planning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, decisions.log, events.log and summary.txt.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Decision service URL, or "off" for the built-in engine.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run several methods on the same demand and print a comparison table.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
        methods: Vec<Method>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the table as comparison.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario's method at several penetration rates.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        pr: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the table as sweep.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated network file.
    GenerateNetwork {
        kind: NetworkKind,
        #[arg(long, default_value_t = 4)]
        rows: usize,
        #[arg(long, default_value_t = 4)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three reference decisions at junction A2 and diff the rationales.
    GoldenAppendixA {
        /// Ask this decision service first.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Serve the reference decision stub until interrupted.
    ServeStub {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NetworkKind {
    Manhattan,
    Grid4x4,
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let mut config = ScenarioConfig::from_toml(&text)
        .with_context(|| format!("parsing scenario {}", path.display()))?;
    if let Some(file) = &config.network.file {
        if file.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            config.network.file = Some(base.join(file));
        }
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply_backend(config: &mut ScenarioConfig, backend: Option<&str>) {
    match backend {
        None => {}
        Some("off") => config.backend.enabled = false,
        Some(url) => {
            config.backend.enabled = true;
            config.backend.endpoint = url.to_string();
        }
    }
}

fn write_table(out: Option<&Path>, name: &str, csv: String) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn golden(backend: Option<&str>) -> Result<bool> {
    let http = backend.filter(|b| *b != "off").map(|url| {
        HttpBackend::new(&dynroute::gateway::BackendConfig {
            endpoint: url.to_string(),
            enabled: true,
            ..Default::default()
        })
    });
    let mut all_ok = true;
    for case in &golden::CASES {
        let outcome = golden::run_case(case, http.as_ref().map(|b| b as _))?;
        let diffs = outcome.mismatches();
        println!(
            "{}: {} ({} engine)",
            case.name,
            if diffs.is_empty() { "ok" } else { "MISMATCH" },
            format!("{:?}", outcome.record.engine).to_lowercase()
        );
        println!("{}", outcome.record.rationale);
        println!("route: [{}]\n", outcome.route.join(", "));
        for d in &diffs {
            println!("  - {d}");
        }
        all_ok &= diffs.is_empty();
    }
    Ok(all_ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            backend,
            method,
            out,
        } => {
            let mut config = load_scenario(&scenario, seed)?;
            apply_backend(&mut config, backend.as_deref());
            if let Some(m) = method {
                config.method = m;
            }
            let report = run_loaded(config, None)?;
            report.write_to(&out)?;
            print!("{}", report.summary_text());
            if report.summary.incomplete > 0 {
                log::warn!("{} vehicles did not arrive", report.summary.incomplete);
            }
        }
        Command::Compare {
            scenario,
            methods,
            seed,
            out,
        } => {
            if methods.is_empty() {
                bail!("--methods needs at least one method");
            }
            let config = load_scenario(&scenario, seed)?;
            let reports = run_comparison(&config, &methods)?;
            print!("{}", render_table(&reports));
            write_table(out.as_deref(), "comparison.csv", report_csv(&reports)?)?;
        }
        Command::Sweep {
            scenario,
            pr,
            seed,
            out,
        } => {
            let config = load_scenario(&scenario, seed)?;
            let reports = pr_sweep(&config, &pr)?;
            print!("{}", render_table(&reports));
            write_table(out.as_deref(), "sweep.csv", report_csv(&reports)?)?;
        }
        Command::GenerateNetwork {
            kind,
            rows,
            cols,
            out,
        } => {
            let net = match kind {
                NetworkKind::Manhattan => generate_manhattan(rows, cols)?,
                NetworkKind::Grid4x4 => generate_grid4x4(),
            };
            std::fs::write(&out, net.serialize())
                .with_context(|| format!("writing {}", out.display()))?;
            println!(
                "wrote {} junctions, {} edges to {}",
                net.junctions().len(),
                net.edge_count(),
                out.display()
            );
        }
        Command::GoldenAppendixA { backend } => return golden(backend.as_deref()),
        Command::ServeStub { addr } => {
            let server = StubServer::bind(&addr, StubMode::Reference)
                .with_context(|| format!("binding {addr}"))?;
            println!("serving reference decisions at {}", server.url());
            server.join();
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
