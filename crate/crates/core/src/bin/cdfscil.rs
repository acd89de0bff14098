use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdfscil::data::{generate_synthetic, save_dataset, SyntheticSpec};
use cdfscil::experiment::{run_experiment, Ablation, ExperimentConfig, ExperimentSummary};
use cdfscil::gradcheck::{run_gradcheck, Component, GradcheckOptions, DEFAULT_TOLERANCE};
use cdfscil::protocol::ProtocolReport;
use cdfscil::{Error, Result};

const OUT_ENV: &str = "CDFSCIL_OUT";

#[derive(Parser)]
#[command(name = "cdfscil", version, about = "Cross-domain few-shot class-incremental learning")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset (train and test manifests).
    GenSynth(GenSynth),
    /// Run the protocol from an experiment config.
    Run(Run),
    /// Finite-difference gradient checks.
    Gradcheck(Gradcheck),
    /// Re-render the CSV and session table of a stored report or summary.
    Report(Report),
}

#[derive(Args)]
struct GenSynth {
    /// Number of domains; must match the length of --classes when both are given.
    #[arg(long)]
    domains: Option<usize>,
    /// Classes per domain, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
    classes: Vec<usize>,
    #[arg(long, default_value_t = 40)]
    train_per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// Output directory; defaults to $CDFSCIL_OUT/data or out/data.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    /// Extra ablation arms (no-ld, no-pseudo, baseline, plain).
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Seeds overriding run.seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Worker threads for forward/backward passes.
    #[arg(long)]
    threads: Option<usize>,
    /// Output root; overrides $CDFSCIL_OUT and run.out.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict to components (ce, loss_la, loss_ld, total, normalize, network, pipeline).
    #[arg(long, value_delimiter = ',')]
    component: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct Report {
    /// A report.json, a summary.json, or a run directory holding one.
    path: PathBuf,
    /// Where to write the CSV; next to the report by default.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Run(a) => run(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn gen_synth(a: GenSynth) -> Result<()> {
    if let Some(d) = a.domains {
        if d == 0 {
            return Err(Error::Validation("--domains must be at least 1".into()));
        }
        if d != a.classes.len() {
            return Err(Error::Validation(format!(
                "--domains {d} but --classes lists {} domains",
                a.classes.len()
            )));
        }
    }
    let spec = SyntheticSpec {
        name: a.name.clone(),
        height: a.height,
        width: a.width,
        channels: a.channels,
        classes_per_domain: a.classes,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        ..SyntheticSpec::new(Vec::new(), 1, 1)
    };
    let (train, test) = generate_synthetic(&spec, a.seed)?;
    let dir = a
        .out
        .unwrap_or_else(|| env_out().unwrap_or_else(|| PathBuf::from("out")).join("data"));
    for ds in [&train, &test] {
        let manifest = save_dataset(ds, &dir, &a.name)?;
        println!("{} ({} samples)", manifest.display(), ds.len());
    }
    Ok(())
}

fn run(a: Run) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if !a.seeds.is_empty() {
        cfg.run.seeds = a.seeds;
    }
    if let Some(t) = a.threads {
        cfg.train.threads = t;
    }
    cfg.validate()?;
    let extra = a.ablate.iter().map(|s| Ablation::parse(s)).collect::<Result<Vec<_>>>()?;
    let out = a.out.or_else(env_out);
    let (summary, outputs) = run_experiment(&cfg, &extra, out.as_deref())?;
    for o in &outputs {
        println!("{} seed {}: PD {:.2} -> {}", o.arm, o.seed, 100.0 * o.report.pd, o.dir.display());
    }
    print!("{}", summary.table());
    Ok(())
}

fn gradcheck(a: Gradcheck) -> Result<()> {
    let components = if a.component.is_empty() {
        Component::ALL.to_vec()
    } else {
        a.component.iter().map(|s| s.parse()).collect::<Result<Vec<Component>>>()?
    };
    let reports = run_gradcheck(&GradcheckOptions {
        trials: a.trials,
        seed: a.seed,
        tolerance: a.tolerance,
        components,
    })?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.component.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn report(a: Report) -> Result<()> {
    let path = if a.path.is_dir() {
        ["report.json", "summary.json"]
            .iter()
            .map(|f| a.path.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Usage(format!("{} holds no report.json or summary.json", a.path.display())))?
    } else {
        a.path.clone()
    };
    if path.file_name().and_then(|f| f.to_str()) == Some("summary.json") {
        print!("{}", ExperimentSummary::read_json(&path)?.table());
        return Ok(());
    }
    let rep = ProtocolReport::read_json(&path)?;
    let csv = a.csv.unwrap_or_else(|| path.with_extension("csv"));
    rep.write_csv(&csv)?;
    print!("{}", rep.table(label_of(&path)));
    println!("csv: {}", csv.display());
    Ok(())
}

/// Arm name for a report stored as `<arm>/seed-<s>/report.json`.
fn label_of(path: &Path) -> &str {
    path.parent()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .and_then(|s| s.to_str())
        .unwrap_or("run")
}
