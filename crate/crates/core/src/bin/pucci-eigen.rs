use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use pucci_eigen::cli::{diagnostic, exit_code, run, EXIT_INTERNAL};
use pucci_eigen::config::parse_config_for;
use pucci_eigen::record::{write_json, Meta};
use pucci_eigen::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "kebab-case")]
enum Command {
    Eigen,
    Solve,
    Radial,
    VerifyOperator,
    Barrier,
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Solve => "solve",
            Command::Radial => "radial",
            Command::VerifyOperator => "verify-operator",
            Command::Barrier => "barrier",
            Command::Compare => "compare",
        }
    }
}

/// Principal eigenvalues, Dirichlet solves and barrier certificates for |Du|^alpha M(D^2u).
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    command: Command,
    /// TOML run configuration; every block is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records and fields.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker cap. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for sampling; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let name = args.command.name();
    let threads = args.threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let mut meta = Meta::start(name, threads);
    let mut cfg = None;
    let result = (|| {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        let text = match &args.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut c = parse_config_for(&text, Some(name))?;
        if let Some(seed) = args.seed {
            c.seed = seed;
        }
        cfg = Some(c.clone());
        run(&c, &args.out)
    })();
    let code = match result {
        Ok(out) => {
            println!("{}", out.record_path.display());
            out.exit_code
        }
        Err(err) => {
            eprintln!("error: {err}");
            let code = exit_code(&err);
            let _ = std::fs::create_dir_all(&args.out);
            if let Err(e) = write_json(&args.out.join("error.json"), &diagnostic(name, &err, cfg.as_ref())) {
                eprintln!("error: cannot write diagnostic: {e}");
                return ExitCode::from(EXIT_INTERNAL as u8);
            }
            code
        }
    };
    meta.finish(code);
    if let Err(e) = write_json(&args.out.join("meta.json"), &meta) {
        eprintln!("error: cannot write metadata: {e}");
    }
    ExitCode::from(code as u8)
}
