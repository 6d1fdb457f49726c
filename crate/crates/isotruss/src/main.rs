use std::collections::BTreeSet;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use isotruss::bridge::{serve, BridgeOptions};
use isotruss::report::{compare, manip_table, ray_rows, write_csv, write_table, WorkspaceSummary};
use isotruss::scenario::SweepMode;
use isotruss::{parse_scenario, run_scenario, Error, Result, RunLog, Scenario, WallClock};
use isotruss_core::analysis::{greedy_failure_order, workspace, WorkspaceMode};

#[derive(Parser)]
#[command(name = "isotruss", version, about = "Simulate and analyse isoperimetric truss robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its JSON-lines log.
    Run {
        scenario: String,
        #[arg(long)]
        out: Option<String>,
    },
    /// Sweep the reachable workspace of the target vertex.
    Workspace {
        scenario: String,
        /// Comma-separated broken rollers.
        #[arg(long, value_delimiter = ',')]
        failures: Vec<usize>,
        #[arg(long)]
        rays: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Writes `<prefix>.csv` and `<prefix>.json` instead of stdout/stderr.
        #[arg(long)]
        out: Option<String>,
    },
    /// Per-step manipulability along the scenario trajectory, as CSV.
    Manip {
        scenario: String,
        #[arg(long)]
        out: Option<String>,
    },
    /// Greedy failure ordering by retained workspace area, as JSON.
    Greedy {
        scenario: String,
        #[arg(long)]
        rays: Option<usize>,
    },
    /// Target-vertex RMSE between two run logs, optionally against a reference log.
    Compare {
        log_a: String,
        log_b: String,
        #[arg(long = "ref")]
        reference: Option<String>,
        /// Print one CSV row instead of a table.
        #[arg(long)]
        csv: bool,
        /// Omit the CSV header row.
        #[arg(long, requires = "csv")]
        no_header: bool,
    },
    /// Serve the bridge for the operator console.
    Serve {
        scenario: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Wall time between steps (ms); the scenario's dt by default.
        #[arg(long)]
        pace_ms: Option<u64>,
        #[arg(long, default_value_t = 36)]
        overlay_rays: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Dtcbf,
    Hard,
}

fn load(path: &str) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
    Ok(parse_scenario(&text)?)
}

fn create(path: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
    Ok(std::io::BufWriter::new(f))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, out } => {
            let s = load(&scenario)?;
            let log = run_scenario(&s, &WallClock::new())?;
            let out = out.or_else(|| s.output.clone()).unwrap_or_else(|| {
                let stem = Path::new(&scenario).file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                format!("{stem}.log.jsonl")
            });
            log.save(&out)?;
            eprintln!(
                "{} steps, min h {:.6}, median solve {:.2} ms -> {out}",
                log.records.len(),
                log.min_h(),
                1e3 * log.median_solve_time().unwrap_or(0.0)
            );
            if let Some(e) = &log.header.error {
                return Err(Error::RunLog(format!("run stopped early: {e}")));
            }
        }
        Command::Workspace { scenario, failures, rays, mode, out } => {
            let s = load(&scenario)?;
            let setup = s.setup()?;
            let mut options = setup.workspace;
            if let Some(r) = rays {
                options.n_rays = r;
            }
            let mode = match mode {
                Some(ModeArg::Dtcbf) => SweepMode::Dtcbf,
                Some(ModeArg::Hard) => SweepMode::Hard,
                None => s.analysis.mode,
            };
            options.mode = WorkspaceMode::from(mode);
            let failures: BTreeSet<usize> = failures.into_iter().collect();
            let poly = workspace(&setup.truss, &setup.home, &setup.spec, &failures, &options)?;
            let origin = setup.truss.vertex_position(&setup.home, setup.spec.target_vertex);
            let rows = ray_rows(&poly, &origin);
            let summary = WorkspaceSummary {
                mode: serde_json::to_value(mode)?.as_str().unwrap_or_default().into(),
                failures: failures.into_iter().collect(),
                rays: options.n_rays,
                area: poly.area,
            };
            match out {
                Some(prefix) => {
                    write_csv(create(&format!("{prefix}.csv"))?, &rows)?;
                    serde_json::to_writer_pretty(create(&format!("{prefix}.json"))?, &summary)?;
                    eprintln!("area {:.6} m^2 -> {prefix}.csv, {prefix}.json", poly.area);
                }
                None => {
                    write_csv(std::io::stdout().lock(), &rows)?;
                    eprintln!("{}", serde_json::to_string(&summary)?);
                }
            }
        }
        Command::Manip { scenario, out } => {
            let s = load(&scenario)?;
            let setup = s.setup()?;
            let log = run_scenario(&s, &WallClock::new())?;
            let (header, rows) = manip_table(&setup.truss, &log)?;
            match out {
                Some(path) => write_table(create(&path)?, &header, &rows)?,
                None => write_table(std::io::stdout().lock(), &header, &rows)?,
            }
        }
        Command::Greedy { scenario, rays } => {
            let s = load(&scenario)?;
            let setup = s.setup()?;
            let mut options = setup.workspace;
            options.mode = WorkspaceMode::Dtcbf;
            if let Some(r) = rays {
                options.n_rays = r;
            }
            let g = greedy_failure_order(&setup.truss, &setup.home, &setup.spec, &options)?;
            let nominal = g.cumulative_areas[0];
            let summary = serde_json::json!({
                "order": g.order,
                "cumulative_areas": g.cumulative_areas,
                "retention": g.cumulative_areas.iter().map(|a| a / nominal).collect::<Vec<_>>(),
                "single_failure_areas": g.single_failures.iter().map(|p| p.area).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { log_a, log_b, reference, csv, no_header } => {
            let a = RunLog::load(&log_a)?;
            let b = RunLog::load(&log_b)?;
            let r = reference.as_deref().map(RunLog::load).transpose()?;
            let c = compare((&log_a, &a), (&log_b, &b), reference.as_deref().zip(r.as_ref()))?;
            let mut stdout = std::io::stdout().lock();
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            let io = |source| Error::Io { path: "<stdout>".into(), source };
            if csv {
                if !no_header {
                    writeln!(stdout, "a,b,rmse_a_b,rmse_a_ref,rmse_b_ref,improvement_pct").map_err(io)?;
                }
                writeln!(
                    stdout,
                    "{},{},{:.6},{},{},{}",
                    c.a,
                    c.b,
                    c.rmse_a_b,
                    fmt(c.rmse_a_ref),
                    fmt(c.rmse_b_ref),
                    c.improvement_pct.map_or(String::new(), |v| format!("{v:.2}"))
                )
                .map_err(io)?;
            } else {
                writeln!(stdout, "{:<40} {:>12}", "log", "RMSE (m)").map_err(io)?;
                match &c.reference {
                    Some(name) => {
                        writeln!(stdout, "{:<40} {:>12}", c.a, fmt(c.rmse_a_ref)).map_err(io)?;
                        writeln!(stdout, "{:<40} {:>12}", c.b, fmt(c.rmse_b_ref)).map_err(io)?;
                        writeln!(stdout, "reference: {name}").map_err(io)?;
                        writeln!(stdout, "improvement: {}%", c.improvement_pct.map_or("n/a".into(), |v| format!("{v:.2}")))
                            .map_err(io)?;
                    }
                    None => writeln!(stdout, "{:<40} {:>12.6}", format!("{} vs {}", c.a, c.b), c.rmse_a_b).map_err(io)?,
                }
            }
        }
        Command::Serve { scenario, port, host, pace_ms, overlay_rays } => {
            let s = load(&scenario)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::RunLog(format!("bad address {host}:{port}: {e}")))?;
            let options = BridgeOptions { pace: pace_ms.map(Duration::from_millis), overlay_rays };
            let rt = tokio::runtime::Runtime::new().map_err(|source| Error::Io { path: "runtime".into(), source })?;
            rt.block_on(serve(&s, options, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
