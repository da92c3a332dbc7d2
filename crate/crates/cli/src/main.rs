use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metapop_cli::config::{parse_document, parse_table, Experiment};
use metapop_cli::output::read_to_string;
use metapop_cli::{run, CliError};
use toml::{Table, Value};

/// Simulation and verification toolkit for lattice metapopulation models.
#[derive(Parser)]
#[command(name = "metapop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count (overrides the configuration).
    #[arg(long)]
    replicas: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Record trajectories of one model.
    Simulate(Common),
    /// Estimate the finite-horizon survival probability.
    Survival(Common),
    /// Survival estimates along one parameter axis.
    Sweep(Common),
    /// Bisect for the parameter where survival crosses a threshold.
    Bisect(Common),
    /// Check the stochastic order between two models.
    CheckOrder(Common),
    /// Hitting probability of a random walk on an interval.
    Ruin {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        r1: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        r2: Option<i64>,
        #[arg(long, allow_hyphen_values = true)]
        j: Option<i64>,
        #[arg(long)]
        p: Option<f64>,
        /// Also run this many simulated walks.
        #[arg(long)]
        walks: Option<u64>,
    },
    /// Survival-block, extinction-block or dominator estimates.
    Blocks(Common),
    /// Oriented percolation reachability.
    Percolation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        width: Option<u64>,
        #[arg(long)]
        height: Option<u64>,
        /// Open probabilities, comma separated.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long)]
        radius: Option<u64>,
    },
    /// Edge event of the mass-migration model.
    EdgeEvent(Common),
    /// Spatially averaged mean occupancy over time.
    MeanOccupancy(Common),
    /// Run whatever experiment a configuration file names.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn section<'a>(doc: &'a mut Table, name: &str) -> Result<&'a mut Table, CliError> {
    doc.entry(name)
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| CliError::Config(vec![format!("`{name}` must be a table")]))
}

fn build(experiment: Option<Experiment>, common: &Common, extra: impl FnOnce(&mut Table) -> Result<(), CliError>) -> Result<Table, CliError> {
    let mut doc = match &common.config {
        Some(path) => parse_document(&read_to_string(path)?)?,
        None => Table::new(),
    };
    if let Some(e) = experiment {
        match doc.get("experiment").and_then(Value::as_str) {
            Some(named) if named != e.name() => {
                return Err(CliError::Config(vec![format!(
                    "configuration names experiment {named:?} but the subcommand is {:?}",
                    e.name()
                )]))
            }
            _ => {
                doc.insert("experiment".into(), e.name().into());
            }
        }
    }
    if let Some(s) = common.seed {
        doc.insert("seed".into(), Value::Integer(s as i64));
    }
    if let Some(r) = common.replicas {
        doc.insert("replicas".into(), Value::Integer(r as i64));
    }
    if let Some(out) = &common.out {
        section(&mut doc, "output")?.insert("dir".into(), out.display().to_string().into());
    }
    extra(&mut doc)?;
    Ok(doc)
}

fn set(doc: &mut Table, name: &str, key: &str, value: Option<Value>) -> Result<(), CliError> {
    if let Some(v) = value {
        section(doc, name)?.insert(key.into(), v);
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    let none = |_: &mut Table| Ok(());
    let (doc, threads) = match cli.command {
        Command::Simulate(c) => (build(Some(Experiment::Simulate), &c, none)?, c.threads),
        Command::Survival(c) => (build(Some(Experiment::Survival), &c, none)?, c.threads),
        Command::Sweep(c) => (build(Some(Experiment::Sweep), &c, none)?, c.threads),
        Command::Bisect(c) => (build(Some(Experiment::Bisect), &c, none)?, c.threads),
        Command::CheckOrder(c) => (build(Some(Experiment::CheckOrder), &c, none)?, c.threads),
        Command::Blocks(c) => (build(Some(Experiment::Blocks), &c, none)?, c.threads),
        Command::EdgeEvent(c) => (build(Some(Experiment::EdgeEvent), &c, none)?, c.threads),
        Command::MeanOccupancy(c) => (build(Some(Experiment::MeanOccupancy), &c, none)?, c.threads),
        Command::Ruin { common, r1, r2, j, p, walks } => {
            let doc = build(Some(Experiment::Ruin), &common, |doc| {
                set(doc, "ruin", "r1", r1.map(Value::Integer))?;
                set(doc, "ruin", "r2", r2.map(Value::Integer))?;
                set(doc, "ruin", "j", j.map(Value::Integer))?;
                set(doc, "ruin", "p", p.map(Value::Float))?;
                set(doc, "ruin", "walks", walks.map(|w| Value::Integer(w as i64)))
            })?;
            (doc, common.threads)
        }
        Command::Percolation { common, width, height, p, radius } => {
            let doc = build(Some(Experiment::Percolation), &common, |doc| {
                set(doc, "percolation", "width", width.map(|w| Value::Integer(w as i64)))?;
                set(doc, "percolation", "height", height.map(|h| Value::Integer(h as i64)))?;
                let p = (!p.is_empty()).then(|| Value::Array(p.into_iter().map(Value::Float).collect()));
                set(doc, "percolation", "p", p)?;
                set(doc, "percolation", "radius", radius.map(|r| Value::Integer(r as i64)))
            })?;
            (doc, common.threads)
        }
        Command::Run { config, seed, replicas, threads, out } => {
            let common = Common { config: Some(config), seed, replicas, threads, out };
            (build(None, &common, none)?, threads)
        }
    };
    let config = parse_table(&doc).map_err(CliError::Config)?;
    let outcome = run(&config, threads)?;
    println!("{}", outcome.summary);
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
