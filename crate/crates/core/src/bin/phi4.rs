//! Command-line front end. Experiments write CSV tables and `manifest.json` into one
//! directory per run. Exit codes: 0 all checks pass, 1 module error, 2 usage error,
//! 3 run completed with failing checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phi4lab::harness::{self, Experiment, ExperimentConfig};
use phi4lab::langevin::{LangevinConfig, Simulation};
use phi4lab::persist::write_atomic;
use phi4lab::{Error, Result};

#[derive(Parser)]
#[command(name = "phi4", version, about = "Hartree/Phi^4 Gibbs measures, counterterms, Langevin dynamics and Fock-space thermal states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat TOML file; keys overlay the experiment preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<experiment>-<config hash>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compose theta from the continuum counterterm sums.
    #[arg(long)]
    paper_constants: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Counterterm identities and eps scaling; also writes the full counterterm table.
    Counterterms(RunArgs),
    /// Ideal-gas density expansion; also writes the lambda sweep.
    IdealGas(RunArgs),
    /// Langevin invariance of the truncated Gibbs measure.
    Invariance(RunArgs),
    /// Free thermal occupations against free-field variances.
    FreeLimit(RunArgs),
    /// Quantum vs classical free energies and moments on matched modes.
    SemiclassicalBridge(RunArgs),
    /// de Finetti moment identity checks.
    DefinettiIdentity(RunArgs),
    /// Hartree dynamics against the local model.
    Phi4Limit(RunArgs),
    /// Thermal-state table: logZ, occupations, correlation moments.
    Quantum(RunArgs),
    /// de Finetti residual tables only.
    Definetti(RunArgs),
    /// One Langevin trajectory with CSV time series and a checkpoint.
    Langevin(LangevinArgs),
}

#[derive(Args)]
struct LangevinArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/langevin")]
    out: PathBuf,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

fn load(exp: Experiment, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_toml(exp, &std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::preset(exp),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.paper_constants |= args.paper_constants;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, args: &RunArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| harness::run_dir(Path::new("runs"), cfg))
}

fn experiment(exp: Experiment, args: &RunArgs) -> Result<bool> {
    let cfg = load(exp, args)?;
    let out = out_dir(&cfg, args);
    std::fs::create_dir_all(&out)?;
    let hash = cfg.hash();
    match exp {
        Experiment::Counterterms => {
            let table = harness::counterterm_table(&cfg)?;
            write_atomic(&out.join("counterterms.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
            harness::write_named_rows(&out.join("counterterms.csv"), &table.rows(), &hash, cfg.seed)?;
        }
        Experiment::IdealGas => harness::ideal_gas_table(&cfg)?.write_csv(&out.join("ideal_gas_sweep.csv"), &hash, cfg.seed)?,
        _ => {}
    }
    let manifest = harness::run(&cfg, &out)?;
    for c in &manifest.checks {
        println!("{} criterion {:>2} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.criterion, c.title, c.detail);
    }
    println!("wrote {}", out.display());
    Ok(manifest.all_pass)
}

fn tables(exp: Experiment, name: &str, args: &RunArgs) -> Result<bool> {
    let cfg = load(exp, args)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{name}-{}", &cfg.hash()[..12])));
    std::fs::create_dir_all(&out)?;
    let list = if name == "quantum" { harness::quantum_table(&cfg)? } else { harness::definetti_table(&cfg)? };
    for t in &list {
        t.write_csv(&out.join(format!("{}.csv", t.name)), &cfg.hash(), cfg.seed)?;
    }
    write_atomic(&out.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(true)
}

fn langevin(args: &LangevinArgs) -> Result<bool> {
    std::fs::create_dir_all(&args.out)?;
    let stem = args.out.join("checkpoint");
    let mut sim = if args.resume {
        Simulation::resume(&stem)?
    } else {
        let mut cfg: LangevinConfig = match &args.config {
            Some(path) => toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?,
            None => LangevinConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        Simulation::new(cfg)?
    };
    sim.run()?;
    sim.checkpoint(&stem)?;
    sim.write_csv(&args.out.join("observables.csv"))?;
    write_atomic(&args.out.join("summary.json"), serde_json::to_string_pretty(&sim.summary())?.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Counterterms(a) => experiment(Experiment::Counterterms, a),
        Command::IdealGas(a) => experiment(Experiment::IdealGas, a),
        Command::Invariance(a) => experiment(Experiment::Invariance, a),
        Command::FreeLimit(a) => experiment(Experiment::FreeLimit, a),
        Command::SemiclassicalBridge(a) => experiment(Experiment::SemiclassicalBridge, a),
        Command::DefinettiIdentity(a) => experiment(Experiment::DefinettiIdentity, a),
        Command::Phi4Limit(a) => experiment(Experiment::Phi4Limit, a),
        Command::Quantum(a) => tables(Experiment::SemiclassicalBridge, "quantum", a),
        Command::Definetti(a) => tables(Experiment::DefinettiIdentity, "definetti", a),
        Command::Langevin(a) => langevin(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            let report = serde_json::json!({ "error": e.to_string(), "kind": format!("{e:?}") });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
