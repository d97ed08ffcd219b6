//! Thin operator CLI over the library: run the service, fire single
//! queries, ingest corpora, sweep and select the routing threshold, and
//! emit emission reports and significance tests as tables or CSV.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use joulegate::config::ServiceConfig;
use joulegate::energy::{energy_saving, read_ledger_file, aggregate_records, EmissionReport, PathKind, ReportFilter};
use joulegate::error::Error;
use joulegate::router::GenParams;
use joulegate::service::{serve, Gateway, QueryRequest};
use joulegate::stats::paired_t_test;
use joulegate::sweep::{
    rows_to_csv, rows_to_table, select_gamma, sweep_gamma, GammaSelection, LabeledWorkload,
    SweepRow,
};

#[derive(Parser)]
#[command(name = "joulegate", version, about = "Energy-metered adaptive inference gateway")]
struct Cli {
    /// Path to the TOML config file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Override the configured listen address.
        #[arg(long)]
        listen: Option<String>,
        /// Worker threads handling requests.
        #[arg(long, default_value_t = 8)]
        workers: usize,
    },
    /// Route (and optionally answer) a single query.
    Query {
        text: String,
        /// Only route; never call a generation backend.
        #[arg(long)]
        dry_run: bool,
        /// Include the reasoning trace for deep answers.
        #[arg(long)]
        include_trace: bool,
    },
    /// Ingest line-delimited documents into the store snapshot.
    Ingest { file: PathBuf },
    /// Aggregate the ledger into an emission report.
    Report(ReportArgs),
    /// Sweep the routing threshold over a workload.
    SweepGamma(SweepArgs),
    /// Select the cheapest threshold meeting a quality floor from sweep CSV.
    SelectGamma {
        /// CSV produced by `sweep-gamma --format csv`.
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        tau: f64,
    },
    /// Paired t-test between two matched sample files (one float per line).
    PairedTTest {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Ledger file; defaults to the configured path.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// RFC 3339 lower bound.
    #[arg(long)]
    from: Option<String>,
    /// RFC 3339 upper bound.
    #[arg(long)]
    to: Option<String>,
    /// Comma-separated path filter (green, deep, router_overhead).
    #[arg(long)]
    path: Option<String>,
    /// Emit the per-path / per-component breakdown table.
    #[arg(long)]
    breakdown: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Args)]
struct SweepArgs {
    /// Line-delimited workload items.
    #[arg(long)]
    workload: PathBuf,
    /// Comma-separated gamma values, or an integer point count for a
    /// uniform grid over [0,1].
    #[arg(long, default_value = "21")]
    gamma_grid: String,
    /// Quality floor; when set, also prints the selected gamma.
    #[arg(long)]
    tau: Option<f64>,
    /// Execute every item against the configured backends instead of
    /// estimating energy from per-path costs.
    #[arg(long)]
    execute: bool,
    /// Seed recorded into the run (routing itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match ServiceConfig::from_toml_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ServiceConfig::default(),
    };
    match run(cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli, config: ServiceConfig) -> joulegate::Result<()> {
    match cli.command {
        Command::Serve { listen, workers } => {
            let mut gateway = Gateway::from_config(&config)?;
            if let Some(path) = &cli.config {
                gateway.set_config_path(path);
            }
            let listen = listen.unwrap_or_else(|| config.listen.clone());
            let handle = serve(Arc::new(gateway), &listen, workers)?;
            eprintln!("listening on {}", handle.addr());
            loop {
                std::thread::park();
            }
        }
        Command::Query { text, dry_run, include_trace } => {
            let gateway = Gateway::from_config(&config)?;
            if dry_run {
                let response = gateway.handle_route(&text).map_err(service_error)?;
                println!("{}", serde_json::to_string_pretty(&response)?);
            } else {
                let response = gateway
                    .handle_query(QueryRequest {
                        text,
                        params: GenParams::default(),
                        include_trace,
                    })
                    .map_err(service_error)?;
                println!("{}", serde_json::to_string_pretty(&response)?);
            }
            Ok(())
        }
        Command::Ingest { file } => {
            let reader = std::fs::File::open(&file).map_err(|e| {
                Error::Usage(format!("cannot open workload file {}: {e}", file.display()))
            })?;
            let gateway = Gateway::from_config(&config)?;
            let mut body = Vec::new();
            use std::io::Read;
            BufReader::new(reader).read_to_end(&mut body)?;
            let stats = gateway.handle_ingest(&body).map_err(service_error)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            if config.store_snapshot_path.is_none() {
                eprintln!(
                    "note: no store_snapshot_path configured; the ingested corpus was not persisted"
                );
            }
            Ok(())
        }
        Command::Report(args) => report(&config, args),
        Command::SweepGamma(args) => sweep(&config, args),
        Command::SelectGamma { rows, tau } => {
            let parsed = read_rows_csv(&rows)?;
            match select_gamma(&parsed, tau)? {
                GammaSelection::Selected { gamma, total_joules, avg_quality } => {
                    println!(
                        "selected gamma={gamma} total_joules={total_joules} avg_quality={avg_quality}"
                    );
                }
                GammaSelection::Infeasible { tau } => {
                    println!("infeasible: no gamma meets quality floor tau={tau}");
                }
            }
            Ok(())
        }
        Command::PairedTTest { a, b } => {
            let sa = read_floats(&a)?;
            let sb = read_floats(&b)?;
            let result = paired_t_test(&sa, &sb)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(())
        }
    }
}

/// Maps service failures onto CLI error classes (bad requests are misuse).
fn service_error(e: joulegate::service::ServiceError) -> Error {
    if e.status() == 400 {
        Error::Usage(e.to_string())
    } else {
        Error::Domain(e.to_string())
    }
}

fn read_floats(path: &PathBuf) -> joulegate::Result<Vec<f64>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Usage(format!("bad float `{l}` in {}: {e}", path.display())))
        })
        .collect()
}

fn read_rows_csv(path: &PathBuf) -> joulegate::Result<Vec<SweepRow>> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Usage(format!("row {} has {} fields, expected 6", i + 1, fields.len())));
        }
        let parse = |s: &str, what: &str| -> joulegate::Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Usage(format!("row {}: bad {what} `{s}`: {e}", i + 1)))
        };
        rows.push(SweepRow {
            gamma: parse(fields[0], "gamma")?,
            green_fraction: parse(fields[1], "green_fraction")?,
            deep_fraction: parse(fields[2], "deep_fraction")?,
            avg_quality: if fields[3].is_empty() { None } else { Some(parse(fields[3], "avg_quality")?) },
            total_joules: parse(fields[4], "total_joules")?,
            saving_vs_baseline: parse(fields[5], "saving_vs_baseline")?,
        });
    }
    Ok(rows)
}

fn parse_gamma_grid(spec: &str) -> joulegate::Result<Vec<f64>> {
    if spec.contains(',') || spec.contains('.') {
        spec.split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Usage(format!("bad gamma `{s}`: {e}")))
            })
            .collect()
    } else {
        let points: usize = spec
            .parse()
            .map_err(|e| Error::Usage(format!("bad grid point count `{spec}`: {e}")))?;
        if points < 2 {
            return Err(Error::Usage("grid needs at least 2 points".into()));
        }
        Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
    }
}

fn report(config: &ServiceConfig, args: ReportArgs) -> joulegate::Result<()> {
    let ledger_path = args.ledger.unwrap_or_else(|| config.ledger_path.clone());
    let records = read_ledger_file(&ledger_path)?;
    let mut filter = ReportFilter::default();
    if let Some(from) = &args.from {
        filter.from = Some(
            chrono::DateTime::parse_from_rfc3339(from)
                .map_err(|e| Error::Usage(format!("bad --from: {e}")))?
                .with_timezone(&chrono::Utc),
        );
    }
    if let Some(to) = &args.to {
        filter.to = Some(
            chrono::DateTime::parse_from_rfc3339(to)
                .map_err(|e| Error::Usage(format!("bad --to: {e}")))?
                .with_timezone(&chrono::Utc),
        );
    }
    if let Some(paths) = &args.path {
        let mut set = std::collections::BTreeSet::new();
        for part in paths.split(',').filter(|p| !p.is_empty()) {
            set.insert(
                PathKind::parse(part).ok_or_else(|| Error::Usage(format!("unknown path `{part}`")))?,
            );
        }
        filter.paths = Some(set);
    }
    let report = aggregate_records(records.iter(), &filter);
    match args.format {
        OutputFormat::Csv => print!("{}", report_csv(&report, args.breakdown)),
        OutputFormat::Table => print!("{}", report_table(&report, args.breakdown)),
    }
    Ok(())
}

fn report_table(report: &EmissionReport, breakdown: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "queries: {}   green_fraction: {:.3}\ntotal: {:.3} J   {:.6} Wh   {:.6} gCO2e\n",
        report.query_count,
        report.green_fraction,
        report.total.joules,
        report.total.watt_hours,
        report.total.grams_co2e
    ));
    if breakdown {
        out.push_str("\nper path:\n");
        for (path, e) in &report.per_path {
            out.push_str(&format!(
                "  {:<16} {:>12.3} J {:>12.6} gCO2e\n",
                path.as_str(),
                e.joules,
                e.grams_co2e
            ));
        }
        out.push_str("per component:\n");
        for (component, e) in &report.per_component {
            out.push_str(&format!(
                "  {:<16} {:>12.3} J {:>12.6} gCO2e\n",
                component.as_str(),
                e.joules,
                e.grams_co2e
            ));
        }
    }
    out
}

fn report_csv(report: &EmissionReport, breakdown: bool) -> String {
    let mut out = String::from("section,key,joules,watt_hours,grams_co2e\n");
    out.push_str(&format!(
        "total,all,{},{},{}\n",
        report.total.joules, report.total.watt_hours, report.total.grams_co2e
    ));
    if breakdown {
        for (path, e) in &report.per_path {
            out.push_str(&format!(
                "path,{},{},{},{}\n",
                path.as_str(),
                e.joules,
                e.watt_hours,
                e.grams_co2e
            ));
        }
        for (component, e) in &report.per_component {
            out.push_str(&format!(
                "component,{},{},{},{}\n",
                component.as_str(),
                e.joules,
                e.watt_hours,
                e.grams_co2e
            ));
        }
    }
    out
}

fn sweep(config: &ServiceConfig, args: SweepArgs) -> joulegate::Result<()> {
    let file = std::fs::File::open(&args.workload).map_err(|e| {
        Error::Usage(format!("cannot open workload {}: {e}", args.workload.display()))
    })?;
    let workload = LabeledWorkload::from_jsonl(BufReader::new(file))?;
    let grid = parse_gamma_grid(&args.gamma_grid)?;
    let _ = args.seed; // routing is deterministic; the seed is part of the record

    let rows = if args.execute {
        sweep_executed(config, &workload, &grid)?
    } else {
        sweep_gamma(&workload, &grid, &config.router, config.sweep_costs)?
    };

    match args.format {
        OutputFormat::Csv => print!("{}", rows_to_csv(&rows)),
        OutputFormat::Table => print!("{}", rows_to_table(&rows)),
    }
    if let Some(tau) = args.tau {
        match select_gamma(&rows, tau)? {
            GammaSelection::Selected { gamma, total_joules, avg_quality } => {
                println!(
                    "selected gamma={gamma} total_joules={total_joules} avg_quality={avg_quality}"
                );
            }
            GammaSelection::Infeasible { tau } => {
                println!("infeasible: no gamma meets quality floor tau={tau}");
            }
        }
    }
    Ok(())
}

/// Execute-mode sweep: runs every workload item through the full pipeline
/// at each gamma, measuring energy from the responses and quality against
/// the expected answers. The saving baseline is a dedicated all-deep run
/// at gamma = 0.
fn sweep_executed(
    config: &ServiceConfig,
    workload: &LabeledWorkload,
    grid: &[f64],
) -> joulegate::Result<Vec<SweepRow>> {
    if workload.items.is_empty() {
        return Err(Error::Usage("sweep requires a non-empty workload".into()));
    }
    let n = workload.items.len() as f64;
    let labeled = workload.items.iter().all(|i| i.expected_answer.is_some());

    // each gamma runs against a scratch ledger so the sweep does not pollute
    // the service ledger with reused request ids
    let scratch = std::env::temp_dir().join(format!("joulegate-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&scratch)?;

    let run_at = |gamma: f64| -> joulegate::Result<(u64, f64, u64)> {
        let mut cfg = config.clone();
        cfg.router.gamma = gamma;
        cfg.ledger_path = scratch.join(format!("gamma-{gamma}.jsonl"));
        cfg.audit_traces = false;
        let gateway = Gateway::from_config(&cfg)?;
        let mut green = 0u64;
        let mut total_joules = 0.0;
        let mut matches = 0u64;
        for item in &workload.items {
            let response = gateway
                .handle_query(QueryRequest {
                    text: item.text.clone(),
                    params: GenParams::default(),
                    include_trace: false,
                })
                .map_err(|e| Error::Domain(e.to_string()))?;
            if response.path == joulegate::router::RoutePath::Green {
                green += 1;
            }
            total_joules += response.energy.joules;
            if let Some(expected) = &item.expected_answer {
                if joulegate::sweep::quality_match(expected, &response.answer, false) {
                    matches += 1;
                }
            }
        }
        Ok((green, total_joules, matches))
    };

    let baseline_run = run_at(0.0)?;
    let baseline = baseline_run.1;
    let mut rows = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let (green, total_joules, matches) =
            if gamma == 0.0 { baseline_run } else { run_at(gamma)? };
        rows.push(SweepRow {
            gamma,
            green_fraction: green as f64 / n,
            deep_fraction: 1.0 - green as f64 / n,
            avg_quality: labeled.then(|| matches as f64 / n),
            total_joules,
            saving_vs_baseline: if baseline > 0.0 {
                energy_saving(baseline, total_joules)?
            } else {
                0.0
            },
        });
    }
    let _ = std::fs::remove_dir_all(&scratch);
    Ok(rows)
}
