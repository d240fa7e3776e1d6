use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use esctrack::analysis::{reference_diameter, sweep_summary};
use esctrack::config::ExperimentConfig;
use esctrack::experiment::{cell_dir_name, fig1_config, prepare, run, run_cell, write_run_artifacts, RunOutput};
use esctrack::integrate::Termination;
use esctrack::verify::Suite;
use esctrack::{Error, Waveform};
use rayon::prelude::*;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Extremum-seeking tracking experiments on the nonisothermal CSTR.
#[derive(Parser)]
#[command(name = "esctrack", version)]
struct Cli {
    /// Root directory for run and sweep artifacts.
    #[arg(long, global = true, env = "ESCTRACK_OUTPUT_ROOT", default_value = "esctrack-out")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment.
    Run { config: PathBuf },
    /// Run the Cartesian product of the config's sweep axes.
    Sweep {
        config: PathBuf,
        /// Worker threads; defaults to the number of available processors.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run a self-check suite, or `all`.
    Verify { suite: String },
    /// Print a complete config with every default spelled out.
    PrintDefaults {
        #[arg(long, value_enum, default_value_t = WaveArg::Trig)]
        waveform: WaveArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WaveArg {
    Trig,
    BangBang,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, &cli.output_root),
        Command::Sweep { config, jobs } => cmd_sweep(config, *jobs, &cli.output_root),
        Command::Verify { suite } => cmd_verify(suite),
        Command::PrintDefaults { waveform } => cmd_print_defaults(*waveform),
    };
    match result {
        Ok(code) => code,
        Err(Error::Config(e)) => {
            eprintln!("error: invalid config: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn output_dir(root: &Path, config_path: &Path, cfg: &ExperimentConfig) -> PathBuf {
    match &cfg.output_dir {
        Some(d) => root.join(d),
        None => root.join(config_path.file_stem().unwrap_or_default()),
    }
}

/// Structured error report next to the artifacts of a failed run.
fn write_failure(dir: &Path, kind: &str, message: &str) {
    let mut table = toml::Table::new();
    table.insert("kind".into(), kind.into());
    table.insert("message".into(), message.into());
    let _ = std::fs::create_dir_all(dir);
    if let Ok(text) = toml::to_string(&table) {
        let _ = std::fs::write(dir.join("error.toml"), text);
    }
}

fn summarize(out: &RunOutput) {
    let traj = &out.trajectory;
    println!(
        "  {} samples, {} steps, {:.2} s",
        traj.samples.len(),
        traj.meta.stats.accepted,
        traj.meta.wall_time_s
    );
    if let Some(rep) = &out.report {
        let costs: Vec<String> = rep.mean_sqrt_cost_per_period.iter().map(|c| format!("{c:.6e}")).collect();
        println!("  mean sqrt(y) per period: [{}]", costs.join(", "));
        match rep.t_f {
            Some(t) => println!(
                "  rho = {}: t_f = {t:.3}, sup error after t_f = {:.4}, bound {}",
                rep.rho,
                rep.sup_error_after_tf,
                if rep.bound_satisfied { "holds" } else { "violated" }
            ),
            None => println!("  rho = {}: never settles", rep.rho),
        }
    }
}

fn cmd_run(config: &Path, root: &Path) -> Result<ExitCode, Error> {
    let cfg = ExperimentConfig::from_path(config)?;
    let dir = output_dir(root, config, &cfg);
    let out = match run(&cfg) {
        Ok(out) => out,
        Err(e) => {
            write_failure(&dir, "runtime", &e.to_string());
            return Err(e);
        }
    };
    write_run_artifacts(&out, &dir)?;
    println!("run {} -> {}", config.display(), dir.display());
    summarize(&out);
    if let Termination::DomainExit { t, x1, x2 } = out.trajectory.meta.termination {
        let msg = format!("state left the domain at t = {t} (x1 = {x1}, x2 = {x2}); partial trajectory written");
        write_failure(&dir, "domain-exit", &msg);
        eprintln!("error: {msg}");
        return Ok(ExitCode::from(EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(config: &Path, jobs: Option<usize>, root: &Path) -> Result<ExitCode, Error> {
    let cfg = ExperimentConfig::from_path(config)?;
    let dir = output_dir(root, config, &cfg);
    let cells = cfg.sweep_cells();
    let prepared = prepare(&cfg)?;
    let jobs = jobs
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    println!("sweep {}: {} cells on {jobs} workers", config.display(), cells.len());

    // workers only compute; this thread writes every file
    let results: Vec<_> = pool.install(|| cells.par_iter().map(|g| run_cell(&cfg, &prepared, g)).collect());

    std::fs::create_dir_all(&dir)?;
    let mut table_input = Vec::with_capacity(cells.len());
    let mut failed = 0;
    for (k, (gains, (outcome, out))) in cells.iter().zip(results).enumerate() {
        let cell_dir = dir.join(cell_dir_name(k, gains));
        if let Some(out) = &out {
            write_run_artifacts(out, &cell_dir)?;
        }
        match &outcome {
            esctrack::analysis::CellOutcome::Completed(_) => {}
            esctrack::analysis::CellOutcome::DomainExit { t } => {
                failed += 1;
                write_failure(&cell_dir, "domain-exit", &format!("state left the domain at t = {t}"));
            }
            esctrack::analysis::CellOutcome::Failed(msg) => {
                failed += 1;
                write_failure(&cell_dir, "runtime", msg);
            }
        }
        table_input.push((*gains, outcome));
    }
    let table = sweep_summary(&table_input, reference_diameter(&prepared.reference.spec));
    table.write_csv(std::fs::File::create(dir.join("sweep.csv"))?)?;
    for r in &table.rows {
        println!(
            "  γ={} ε={} η={}: {}{}",
            r.gamma,
            r.epsilon,
            r.eta,
            r.status,
            r.final_mean_sqrt_cost
                .map(|c| format!(", final mean sqrt(y) {c:.4e}"))
                .unwrap_or_default()
        );
    }
    println!("sweep table -> {}", dir.join("sweep.csv").display());
    if failed > 0 {
        eprintln!("error: {failed} of {} cells failed", cells.len());
        return Ok(ExitCode::from(EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(name: &str) -> Result<ExitCode, Error> {
    let suites: Vec<Suite> = if name == "all" {
        Suite::ALL.to_vec()
    } else {
        match name.parse() {
            Ok(s) => vec![s],
            Err(msg) => {
                eprintln!("error: {msg}, or all");
                return Ok(ExitCode::from(EXIT_CONFIG));
            }
        }
    };
    let mut ok = true;
    for s in suites {
        let report = s.run()?;
        println!("{report}");
        ok &= report.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUNTIME) })
}

fn cmd_print_defaults(waveform: WaveArg) -> Result<ExitCode, Error> {
    let w = match waveform {
        WaveArg::Trig => Waveform::Trig,
        WaveArg::BangBang => Waveform::BangBang,
    };
    let mut cfg = fig1_config(w);
    cfg.plant.params = esctrack::config::ParamsChoice::Explicit(cfg.plant.params.resolve());
    cfg.reference.amplitudes = Some(cfg.reference_spec().amplitudes);
    cfg.analysis.window = Some(cfg.window());
    print!("{}", cfg.to_toml_string()?);
    Ok(ExitCode::SUCCESS)
}
