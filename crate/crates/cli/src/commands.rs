//! Subcommands.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use enrich_npp::borrowing::{linearize_summary, ClosedFormNormalizer};
use enrich_npp::simharness::{run_prepared, run_trial_detailed, PreparedScenario};
use enrich_npp::NormalizationMethod;

use crate::output::{self, LookSummary, OcRecord, OcRow, TrialSummary};
use crate::scenario_file::{ExpandedScenario, ScenarioFile};
use crate::validation::{self, Hooks, Level};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "enrich-npp", version, about = "Adaptive enrichment trials with normalized power prior borrowing")]
pub struct Cli {
    /// Worker threads for replicate simulation.
    #[arg(long, global = true, env = "ENRICH_NPP_THREADS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operating characteristics of every scenario in a file.
    Oc {
        scenario: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the replicate count of every scenario.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the base seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// One replicate with subject data, draws, decision trace and posterior
    /// summaries written to a directory.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// The log normalizing-constant table of a scenario's summary.
    Logc {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Oracle checks of the engine.
    Validate {
        #[arg(long, value_enum, default_value_t = Level::Full)]
        level: Level,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Offset added to analytic Jacobians (self-test of the suite).
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_jacobian: f64,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Scenario(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Scenario(format!("writing output: {e}"))
}

fn load_scenarios(path: &Path, reps: Option<usize>, seed: Option<u64>) -> Result<Vec<ExpandedScenario>, CliError> {
    let mut rows = ScenarioFile::load(path)?.expand()?;
    for r in &mut rows {
        if let Some(n) = reps {
            if n == 0 {
                return Err(CliError::Config("--reps must be positive".into()));
            }
            r.config.n_reps = n;
        }
        if let Some(s) = seed {
            r.config.base_seed = s;
        }
    }
    Ok(rows)
}

fn single_scenario(path: &Path, seed: Option<u64>) -> Result<ExpandedScenario, CliError> {
    let mut rows = load_scenarios(path, None, seed)?;
    if rows.len() != 1 {
        return Err(CliError::Config(format!(
            "{} expands to {} scenarios; this command needs exactly one",
            path.display(),
            rows.len()
        )));
    }
    Ok(rows.remove(0))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    match cli.command {
        Command::Oc {
            scenario,
            out,
            reps,
            seed,
            format,
        } => cmd_oc(&scenario, out.as_deref(), workers, reps, seed, format),
        Command::Simulate { scenario, seed, out } => cmd_simulate(&scenario, seed, &out),
        Command::Logc {
            scenario,
            out,
            seed,
            format,
        } => cmd_logc(&scenario, out.as_deref(), seed, format),
        Command::Validate {
            level,
            format,
            perturb_jacobian,
        } => cmd_validate(
            level,
            Hooks {
                jacobian_offset: perturb_jacobian,
            },
            format,
        ),
    }
}

/// Runs every scenario; a failing scenario is reported and skipped, and the
/// command then exits with the scenario-failure code.
pub fn cmd_oc(
    path: &Path,
    out: Option<&Path>,
    workers: usize,
    reps: Option<usize>,
    seed: Option<u64>,
    format: Format,
) -> Result<(), CliError> {
    let scenarios = load_scenarios(path, reps, seed)?;
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    for (k, s) in scenarios.iter().enumerate() {
        eprintln!("[{}/{}] {} ({} reps)", k + 1, scenarios.len(), s.config.id, s.config.n_reps);
        match PreparedScenario::new(s.config.clone()).and_then(|p| run_prepared(&p, workers)) {
            Ok(oc) => {
                rows.push(OcRow::new(s, &oc));
                metrics.push((s, oc));
            }
            Err(e) => {
                eprintln!("  failed: {e}");
                failures.push(format!("{}: {e}", s.config.id));
            }
        }
    }
    let w = open_out(out)?;
    match format {
        Format::Csv => output::write_oc_csv(w, &rows).map_err(write_err)?,
        Format::Json => {
            let records: Vec<OcRecord> = rows
                .iter()
                .zip(&metrics)
                .map(|(row, (s, oc))| OcRecord {
                    row,
                    metrics: oc,
                    config: &s.config,
                })
                .collect();
            output::write_json(w, &records).map_err(write_err)?
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Scenario(failures.join("; ")))
    }
}

/// Replicate 0 of the scenario. Writes `subjects.csv`, one
/// `draws_look<k>.csv` per analysis, `trace.json`, `summary.json` and the
/// `config.json` that produced them.
pub fn cmd_simulate(path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<(), CliError> {
    let scenario = single_scenario(path, seed)?;
    let prepared = PreparedScenario::new(scenario.config.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let (result, fits) = run_trial_detailed(&prepared, 0).map_err(|e| CliError::Scenario(e.to_string()))?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Scenario(format!("cannot create {}: {e}", out_dir.display())))?;
    let file = |name: &str| open_out(Some(&out_dir.join(name)));

    if let Some(last) = fits.last() {
        output::write_subjects_csv(file("subjects.csv")?, &last.data).map_err(write_err)?;
    }
    for fit in &fits {
        output::write_draws_csv(file(&format!("draws_look{}.csv", fit.stage))?, &fit.draws).map_err(write_err)?;
    }
    output::write_json(file("trace.json")?, &result).map_err(write_err)?;
    let summary = TrialSummary {
        scenario_id: &scenario.config.id,
        base_seed: scenario.config.base_seed,
        result: &result,
        looks: fits.iter().map(LookSummary::new).collect(),
    };
    output::write_json(file("summary.json")?, &summary).map_err(write_err)?;
    output::write_json(file("config.json")?, &scenario.config).map_err(write_err)?;
    for look in &summary.looks {
        eprintln!(
            "look {} (n = {}): effect x=0 {:.3} [{:.3}, {:.3}], x=1 {:.3} [{:.3}, {:.3}]",
            look.stage,
            look.n,
            look.effect_x0.mean,
            look.effect_x0.lower,
            look.effect_x0.upper,
            look.effect_x1.mean,
            look.effect_x1.lower,
            look.effect_x1.upper
        );
    }
    Ok(())
}

/// One row of the `logc` table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LogCRow {
    pub a: f64,
    #[serde(rename = "logC")]
    pub log_c: f64,
    /// Closed form of the summary linearized at the scenario truth; exact
    /// for linear mappings.
    #[serde(rename = "logC_closed_form")]
    pub log_c_closed_form: f64,
}

/// Monte-Carlo table of the scenario's summary, alongside the closed form.
/// The Monte-Carlo column uses the file's grid settings and the same stream
/// as a simulation run, so it is the table the nonlinear method uses.
pub fn logc_table(scenario: &ExpandedScenario) -> Result<Vec<LogCRow>, CliError> {
    let mut config = scenario.config.clone();
    config.normalization = scenario.mc_grid.clone();
    config.linearized = false;
    let prepared = PreparedScenario::new(config).map_err(|e| CliError::Config(e.to_string()))?;
    let (Some(table), [summary]) = (prepared.grid.as_ref(), prepared.summaries.as_slice()) else {
        return Err(CliError::Config(format!(
            "scenario `{}` needs exactly one active historical summary",
            scenario.config.id
        )));
    };
    let lin = linearize_summary(summary, &prepared.config.beta_true).map_err(|e| CliError::Scenario(e.to_string()))?;
    let cf = ClosedFormNormalizer::new(&[lin], &prepared.config.prior).map_err(|e| CliError::Scenario(e.to_string()))?;
    table
        .rows()
        .map(|(a, log_c)| {
            let log_c_closed_form = cf.log_c(&[a]).map_err(|e| CliError::Scenario(e.to_string()))?;
            Ok(LogCRow {
                a,
                log_c,
                log_c_closed_form,
            })
        })
        .collect()
}

pub fn cmd_logc(path: &Path, out: Option<&Path>, seed: Option<u64>, format: Format) -> Result<(), CliError> {
    let scenario = single_scenario(path, seed)?;
    if !matches!(scenario.mc_grid, NormalizationMethod::MonteCarloGrid { .. }) {
        return Err(CliError::Config("grid settings do not describe a Monte-Carlo grid".into()));
    }
    let rows = logc_table(&scenario)?;
    let w = open_out(out)?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(w);
            for r in &rows {
                w.serialize(r).map_err(write_err)?;
            }
            w.flush().map_err(write_err)
        }
        Format::Json => output::write_json(w, &rows).map_err(write_err),
    }
}

pub fn cmd_validate(level: Level, hooks: Hooks, format: Format) -> Result<(), CliError> {
    let reports = validation::run(level, hooks);
    let mut w = io::stdout().lock();
    match format {
        Format::Csv => {
            for r in &reports {
                writeln!(w, "{r}").map_err(write_err)?;
            }
        }
        Format::Json => output::write_json(&mut w, &reports).map_err(write_err)?,
    }
    match reports.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(CliError::Validation(n)),
    }
}
