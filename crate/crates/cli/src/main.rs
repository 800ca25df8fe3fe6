//! `reach`: offline backward-set solving, event evaluation and sweeps.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use reach_core::belief::BeliefVector;
use reach_core::brs::{solve_table, ValueTable};
use reach_core::config::RunConfig;
use reach_core::dynamics::PointMassState;
use reach_core::framework::{history, Evaluator, EventResult, Gate, Variant};
use reach_core::frs::{write_field_csv, FrsEngine, ProbabilityField};
use reach_core::scenario::{self, simulate, ScenarioConfig, SimTrace};

/// Exit status of `run` when at least one alert fired.
const ALERT_EXIT: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "reach",
    version,
    about = "Reachability-based collision detection for highway cut-in events"
)]
struct Cli {
    /// JSON configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the backward reachable set and write the value table.
    BrsSolve {
        /// Output file; defaults to the configured table path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured horizon (s).
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Export the (y1, y2) plane of a value table as CSV.
    BrsSlice {
        #[arg(long)]
        table: Option<PathBuf>,
        /// Relative heading (rad).
        #[arg(long, default_value_t = 0.0)]
        psi: f64,
        #[arg(long)]
        v_ego: f64,
        #[arg(long)]
        v_s: f64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one event and write per-tick records and a summary.
    Run {
        #[arg(long)]
        table: Option<PathBuf>,
        /// Trace CSV to evaluate instead of simulating the configured scenario.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        v_ego: Option<f64>,
        #[arg(long)]
        v_sur: Option<f64>,
        /// hsrs, psrs, psrs3 or psrs5; defaults to the configured variant.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate the speed sweep for every configured variant.
    Sweep {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Export one predicted step of the forward set of an event as CSV,
    /// propagated under the prior belief.
    ExportField {
        #[arg(long)]
        v_ego: Option<f64>,
        #[arg(long)]
        v_sur: Option<f64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Assessment time (s); must fall on a tick.
        #[arg(long)]
        time: f64,
        /// Predicted step, 1-based; defaults to the last.
        #[arg(long)]
        step: Option<usize>,
        /// Cells with probability strictly above this are written.
        #[arg(long, default_value_t = 0.01)]
        min_p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load and check a configuration, then print it with defaults filled in.
    ValidateConfig,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "hsrs" => Ok(Variant::Hsrs),
        "psrs" => Ok(Variant::Psrs),
        "psrs3" | "psrs3beta" => Ok(Variant::Psrs3),
        "psrs5" | "psrs5beta" => Ok(Variant::Psrs5),
        _ => Err(format!("unknown variant `{s}` (expected hsrs, psrs, psrs3 or psrs5)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    if cli.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build()?;
    let workers = cli.workers;
    pool.install(|| match cli.command {
        Command::ValidateConfig => {
            println!("{}", cfg.to_json()?);
            Ok(ExitCode::SUCCESS)
        }
        Command::BrsSolve { out, horizon } => brs_solve(&cfg, out, horizon).map(|_| ExitCode::SUCCESS),
        Command::BrsSlice {
            table,
            psi,
            v_ego,
            v_s,
            out,
        } => brs_slice(&cfg, table, psi, v_ego, v_s, out).map(|_| ExitCode::SUCCESS),
        Command::Run {
            table,
            trace,
            v_ego,
            v_sur,
            variant,
            out_dir,
        } => run(&cfg, workers, table, trace, v_ego, v_sur, variant, out_dir),
        Command::Sweep { table, out_dir } => sweep(&cfg, table, out_dir).map(|_| ExitCode::SUCCESS),
        Command::ExportField {
            v_ego,
            v_sur,
            variant,
            time,
            step,
            min_p,
            out,
        } => export_field(&cfg, workers, v_ego, v_sur, variant, time, step, min_p, out).map(|_| ExitCode::SUCCESS),
    })
}

fn load_table(cfg: &RunConfig, table: Option<PathBuf>) -> Result<ValueTable> {
    let path = table.unwrap_or_else(|| cfg.table_path.clone());
    if !path.exists() {
        bail!("value table {} not found; run `reach brs-solve` first", path.display());
    }
    ValueTable::load(&path).with_context(|| format!("reading value table {}", path.display()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn brs_solve(cfg: &RunConfig, out: Option<PathBuf>, horizon: Option<f64>) -> Result<()> {
    let mut solver = cfg.brs.solver;
    if let Some(h) = horizon {
        solver.horizon = h;
    }
    solver.validate()?;
    let grid = cfg.brs.grid.grid();
    let system = cfg.relative_system()?;
    let start = Instant::now();
    let table = solve_table(&system, &grid, &solver)?;
    let elapsed = start.elapsed().as_secs_f64();
    let path = out.unwrap_or_else(|| cfg.table_path.clone());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    table
        .save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let unsafe_nodes = table.values().iter().filter(|v| **v <= 0.0).count();
    let stats = &table.stats;
    println!(
        "solved {} nodes to horizon {} s: {} iterations, dt {:.4} s, cfl {}, {:.2} s; {} unsafe nodes; wrote {}",
        table.len(),
        table.horizon(),
        stats.iterations,
        stats.dt,
        stats.cfl,
        elapsed,
        unsafe_nodes,
        path.display()
    );
    Ok(())
}

fn brs_slice(
    cfg: &RunConfig,
    table: Option<PathBuf>,
    psi: f64,
    v_ego: f64,
    v_s: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let table = load_table(cfg, table)?;
    let mut w = csv::Writer::from_writer(output(out.as_deref())?);
    w.write_record(["y1", "y2", "value", "unsafe"])?;
    for (y1, y2, v) in table.slice(psi, v_ego, v_s)? {
        w.serialize((y1, y2, v, u8::from(v <= 0.0)))?;
    }
    w.flush()?;
    Ok(())
}

fn event_trace(
    cfg: &RunConfig,
    trace: Option<&Path>,
    v_ego: Option<f64>,
    v_sur: Option<f64>,
) -> Result<(ScenarioConfig, SimTrace)> {
    let scenario = ScenarioConfig {
        v_ego: v_ego.unwrap_or(cfg.scenario.v_ego),
        v_sur: v_sur.unwrap_or(cfg.scenario.v_sur),
        ..cfg.scenario.clone()
    };
    scenario.validate()?;
    let trace = match trace {
        Some(p) => SimTrace::read_csv(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
            &cfg.geometry,
        )
        .with_context(|| format!("reading trace {}", p.display()))?,
        None => simulate(&scenario)?,
    };
    Ok((scenario, trace))
}

fn evaluate(
    cfg: &RunConfig,
    engine: &FrsEngine,
    table: &ValueTable,
    scenario: &ScenarioConfig,
    trace: &SimTrace,
    variant: Variant,
) -> Result<EventResult> {
    let predictor = cfg.predictor(variant, scenario)?;
    let preset = cfg.beta_preset.unwrap_or(variant.preset());
    Ok(Evaluator {
        engine,
        table,
        config: cfg.framework,
        window: cfg.belief_window,
    }
    .evaluate(trace, predictor.as_ref(), preset)?)
}

#[derive(Serialize)]
struct Summary {
    format_version: u32,
    variant: &'static str,
    v_ego: f64,
    v_sur: f64,
    threshold: f64,
    ticks: usize,
    escalated_ticks: usize,
    crash_time: Option<f64>,
    first_alert: Option<f64>,
    max_p_col: f64,
    alerts: usize,
    false_positive: bool,
    timeliness: Option<f64>,
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

#[allow(clippy::too_many_arguments)]
fn run(
    cfg: &RunConfig,
    workers: usize,
    table: Option<PathBuf>,
    trace: Option<PathBuf>,
    v_ego: Option<f64>,
    v_sur: Option<f64>,
    variant: Option<Variant>,
    out_dir: Option<PathBuf>,
) -> Result<ExitCode> {
    let table = load_table(cfg, table)?;
    let (scenario, trace) = event_trace(cfg, trace.as_deref(), v_ego, v_sur)?;
    let variant = variant.unwrap_or(cfg.variant);
    let engine = cfg.engine(workers)?;
    let result = evaluate(cfg, &engine, &table, &scenario, &trace, variant)?;

    let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("ticks.csv"))?;
    w.write_record(["t", "gate", "brs_value", "p_col", "alert", "step_sums", "belief"])?;
    for r in &result.records {
        let gate = match r.gate {
            Gate::SafeByBrs => "safe",
            Gate::Escalated => "escalated",
        };
        w.write_record([
            format!("{:.3}", r.t),
            gate.to_string(),
            format!("{:.6}", r.brs_value),
            format!("{:.9}", r.p_col),
            u8::from(r.alert).to_string(),
            list(&r.step_sums),
            list(&r.belief),
        ])?;
    }
    w.flush()?;

    let summary = Summary {
        format_version: 1,
        variant: variant.name(),
        v_ego: trace.samples[0].ego.v1,
        v_sur: trace.samples[0].sur.v1,
        threshold: cfg.framework.threshold,
        ticks: result.records.len(),
        escalated_ticks: result.records.iter().filter(|r| r.gate == Gate::Escalated).count(),
        crash_time: result.crash_time,
        first_alert: result.records.iter().find(|r| r.alert).map(|r| r.t),
        max_p_col: result.max_p_col,
        alerts: result.alerts,
        false_positive: result.false_positive,
        timeliness: result.timeliness,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(dir.join("summary.json"), &json)?;
    println!("{json}");
    Ok(if result.alerts > 0 {
        ExitCode::from(ALERT_EXIT)
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(cfg: &RunConfig, table: Option<PathBuf>, out_dir: Option<PathBuf>) -> Result<()> {
    let table = load_table(cfg, table)?;
    let s = &cfg.sweep;
    let speeds = scenario::speed_range(s.v_min, s.v_max, s.v_step);
    let events = scenario::sweep(&speeds, &speeds, &cfg.scenario)?;
    // Events already run in parallel; each propagation stays sequential.
    let engine = cfg.engine(1)?;
    let jobs: Vec<(usize, Variant)> = (0..events.len())
        .flat_map(|i| s.variants.iter().map(move |&v| (i, v)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, v)| {
            let e = &events[i];
            let scenario = ScenarioConfig {
                v_ego: e.v_ego,
                v_sur: e.v_sur,
                ..cfg.scenario.clone()
            };
            let trace = simulate(&scenario)?;
            evaluate(cfg, &engine, &table, &scenario, &trace, v)
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir)?;
    let mut ev = csv::Writer::from_path(dir.join("events.csv"))?;
    ev.write_record([
        "v_ego",
        "v_sur",
        "variant",
        "crash_time",
        "max_p_col",
        "alerts",
        "false_positive",
        "timeliness",
    ])?;
    let mut tl = csv::Writer::from_path(dir.join("timeliness.csv"))?;
    tl.write_record(["v_ego", "v_sur", "variant", "threshold", "timeliness"])?;
    for (&(i, v), r) in jobs.iter().zip(&results) {
        let e = &events[i];
        ev.serialize((
            e.v_ego,
            e.v_sur,
            v.name(),
            r.crash_time,
            r.max_p_col,
            r.alerts,
            r.false_positive,
            r.timeliness,
        ))?;
        if r.crash_time.is_some() {
            for &th in &s.thresholds {
                tl.serialize((e.v_ego, e.v_sur, v.name(), th, r.timeliness_at(th)))?;
            }
        }
    }
    ev.flush()?;
    tl.flush()?;

    // Mean over crash events, a missed alert counting as zero.
    let mut table_out = csv::Writer::from_path(dir.join("timeliness_summary.csv"))?;
    let mut header = vec!["threshold".to_string()];
    header.extend(s.variants.iter().map(|v| v.name().to_string()));
    table_out.write_record(&header)?;
    let crashes = events.iter().filter(|e| e.crash_time.is_some()).count();
    println!("{} events, {} crashes", events.len(), crashes);
    println!("{}", header.join("\t"));
    for &th in &s.thresholds {
        let mut row = vec![format!("{th:.2}")];
        for &v in &s.variants {
            let (sum, n) = jobs
                .iter()
                .zip(&results)
                .filter(|((_, var), r)| *var == v && r.crash_time.is_some())
                .fold((0.0, 0usize), |(sum, n), (_, r)| {
                    (sum + r.timeliness_at(th).unwrap_or(0.0), n + 1)
                });
            row.push(if n == 0 {
                String::new()
            } else {
                format!("{:.4}", sum / n as f64)
            });
        }
        println!("{}", row.join("\t"));
        table_out.write_record(&row)?;
    }
    table_out.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn export_field(
    cfg: &RunConfig,
    workers: usize,
    v_ego: Option<f64>,
    v_sur: Option<f64>,
    variant: Option<Variant>,
    time: f64,
    step: Option<usize>,
    min_p: f64,
    out: Option<PathBuf>,
) -> Result<()> {
    let (scenario, trace) = event_trace(cfg, None, v_ego, v_sur)?;
    let variant = variant.unwrap_or(cfg.variant);
    let engine = cfg.engine(workers)?;
    let preset = cfg.beta_preset.unwrap_or(variant.preset());
    let predictor = cfg.predictor(variant, &scenario)?;
    let history = history(&trace, time, &cfg.framework)?;
    let forecast = predictor.forecast(&history)?;
    let steps = forecast.steps.len();
    let k = step.unwrap_or(steps);
    if k == 0 || k > steps {
        bail!("step must lie in 1..={steps}");
    }
    let now = trace
        .at(time)
        .with_context(|| format!("no trace sample at t = {time}"))?;
    let belief = BeliefVector::from_preset(preset, cfg.belief_window)?;
    let start = PointMassState::new(now.sur.y1 - now.ego.y1, now.sur.y2 - now.ego.y2, now.sur.v1, now.sur.v2);
    let initial = ProbabilityField::point_mass(engine.grid(), &start)?;
    let fields = engine.propagate(&initial, &forecast, &belief)?;
    write_field_csv(&fields[k - 1], engine.grid(), min_p, output(out.as_deref())?)?;
    Ok(())
}
