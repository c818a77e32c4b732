use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jpo_noise::cli::{self, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};
use jpo_noise::config::RunConfig;
use jpo_noise::{Error, Result};

#[derive(Parser)]
#[command(name = "jpo", about = "Simulate and analyze JPO homodyne noise traces", version)]
struct Args {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "JPO_NOISE_OUT", default_value = "jpo-out")]
    out: PathBuf,
    /// Overrides `seeds.master`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one trace file per pump power and repeat.
    Simulate,
    /// Analyze trace files or directories and write the report bundle.
    Analyze { inputs: Vec<PathBuf> },
    /// Map the parametric oscillation region.
    Plane,
    /// Fit a reflection measurement given as frequency,re,im CSV.
    FitS11 { csv: PathBuf },
    /// Decimate a trace through the configured FIR chain.
    Decimate { trace: PathBuf },
    /// Print the version.
    Version,
}

fn load_config(args: &Args, required: bool) -> Result<Option<RunConfig>> {
    let cfg = match &args.config {
        Some(p) => Some(RunConfig::load(p)?),
        None if required => {
            return Err(Error::Config {
                path: "--config".into(),
                reason: "this command needs a run configuration".into(),
            })
        }
        None => None,
    };
    Ok(cfg.map(|mut c| {
        if let Some(s) = args.seed {
            c.seeds.master = s;
        }
        c
    }))
}

fn run(args: &Args) -> Result<i32> {
    let out: &Path = &args.out;
    match &args.command {
        Command::Version => println!("jpo {}", cli::version()),
        Command::Simulate => {
            let cfg = load_config(args, true)?.unwrap();
            let r = cli::cmd_simulate(&cfg, out)?;
            println!("wrote {} traces to {}", r.traces.len(), out.display());
            println!("manifest sha256 {}", r.manifest.digest);
        }
        Command::Analyze { inputs } => {
            let cfg = load_config(args, true)?.unwrap();
            let r = cli::cmd_analyze(inputs, &cfg, out)?;
            for p in &r.analysis.sweep.points {
                let rate = p.gamma_r.map_or("-".to_string(), |g| format!("{g:.4}"));
                println!("{:>8.2} dBm  Γ_r = {rate} Hz  ({})", p.pump_power_dbm, p.method.as_str());
            }
            if let Some(t) = &r.analysis.sweep.exp_fit {
                println!("exponential fit: Γ0 = {:.4} Hz at {} dBm, α = {:.4}/dB", t.rate_at_ref, t.ref_power_dbm, t.slope_per_db);
            }
            println!("manifest sha256 {}", r.manifest.digest);
            if !r.failures.is_empty() {
                for f in &r.failures {
                    eprintln!("failure: {f}");
                }
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::Plane => {
            let cfg = load_config(args, true)?.unwrap();
            let (map, manifest) = cli::cmd_plane(&cfg, out)?;
            let cells = map.oscillating.iter().flatten().filter(|o| **o).count();
            println!("{cells} oscillating grid cells; manifest sha256 {}", manifest.digest);
        }
        Command::FitS11 { csv } => {
            let cfg = load_config(args, false)?;
            let (fit, manifest) = cli::cmd_fit_s11(csv, cfg.as_ref(), out)?;
            println!(
                "f_r = {:.6e} Hz  κ_ext = {:.6e} Hz  κ_int = {:.6e} Hz  converged = {}",
                fit.resonance, fit.kappa_ext, fit.kappa_int, fit.converged
            );
            println!("manifest sha256 {}", manifest.digest);
            if !fit.converged {
                eprintln!("failure: S11 fit did not converge");
                return Ok(EXIT_RUNTIME);
            }
        }
        Command::Decimate { trace } => {
            let cfg = load_config(args, false)?;
            let (path, manifest) = cli::cmd_decimate(trace, cfg.as_ref(), out)?;
            println!("wrote {}; manifest sha256 {}", path.display(), manifest.digest);
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME as u8);
        }
    };
    let code = pool.install(|| match run(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            cli::exit_code(&e)
        }
    });
    ExitCode::from(code as u8)
}
