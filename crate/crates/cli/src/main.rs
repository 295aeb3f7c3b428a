use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use specguard::artifacts::OutDir;
use specguard::campaign::Campaign;
use specguard::config::CampaignConfig;
use specguard::pipeline::{self, FalsifyOptions};
use specguard_core::certify::Certificate;

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_CERTIFIED: u8 = 3;

#[derive(Parser, Debug)]
#[command(version, about = "Probabilistic safety certificates for black-box closed-loop systems")]
struct Cli {
    /// Campaign file. Without it the built-in configuration of `--preset` is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides the config. SPECGUARD_OUT overrides this flag.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Derive every stage seed from this master seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    /// Benchmark preset; overrides the config.
    #[arg(long, global = true)]
    preset: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// calibrate, falsify, certify, validate and report in sequence
    Run,
    /// Estimate the nominal model's accuracy
    Calibrate,
    /// Minimize nominal robustness; resumes a stored history
    Falsify {
        /// Ignore any stored history
        #[arg(long)]
        fresh: bool,
        /// Stop after this many evaluations in total
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Apply the certificate condition to stored artifacts
    Certify,
    /// Roll out the true system at the worst configuration found
    Validate,
    /// Regenerate plot tables from stored artifacts
    Report,
    /// Print the effective configuration as TOML
    ShowConfig,
}

fn load(cli: &Cli) -> Result<(CampaignConfig, PathBuf)> {
    let mut config = match &cli.config {
        Some(path) => CampaignConfig::load(path)?,
        None => CampaignConfig::preset(cli.preset.as_deref().unwrap_or("default"))?,
    };
    if let Some(p) = &cli.preset {
        config.models.preset = p.clone();
    }
    if let Some(seed) = cli.seed_override {
        config.override_seeds(seed);
    }
    let out = std::env::var_os("SPECGUARD_OUT")
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| config.output.dir.clone());
    config.output.dir = out.clone();
    Ok((config, out))
}

fn print_certificate(c: &Certificate) {
    match c.probability {
        Some(p) => println!(
            "certified: h* = {} >= L*eps = {} (margin {}); satisfied with probability >= {p}",
            c.h_star,
            c.lipschitz * c.epsilon,
            c.margin
        ),
        None => {
            println!("not certified: h* = {} < L*eps = {} (margin {})", c.h_star, c.lipschitz * c.epsilon, c.margin)
        }
    }
}

fn verdict(c: &Certificate) -> u8 {
    if c.certified {
        0
    } else {
        EXIT_NOT_CERTIFIED
    }
}

fn execute(cli: &Cli) -> Result<u8> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global().context("configuring --jobs")?;
    }
    let (config, out_dir) = load(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_toml());
        return Ok(0);
    }
    let campaign = Campaign::resolve(config)?;
    let out = OutDir::create(&out_dir)?;
    match &cli.command {
        Command::Run => {
            let s = pipeline::run(&campaign, &out)?;
            println!("epsilon = {} over {} pairs ({} diverged)", s.profile.epsilon, s.profile.n, s.profile.divergences);
            println!("h* = {} at d* = {:?}", s.falsification.h_star, s.falsification.d_star);
            print_certificate(&s.certificate);
            println!(
                "validation: {}/{} trials satisfied (rate {}), min robustness {}",
                s.validation.satisfied_count(),
                s.validation.trials,
                s.validation.rate,
                s.validation.min_robustness
            );
            println!("artifacts in {}", out_dir.display());
            Ok(verdict(&s.certificate))
        }
        Command::Calibrate => {
            let p = pipeline::calibrate(&campaign, &out)?;
            println!("epsilon = {} over {} pairs ({} diverged)", p.epsilon, p.n, p.divergences);
            Ok(0)
        }
        Command::Falsify { fresh, stop_after } => {
            let r = pipeline::falsify(&campaign, &out, FalsifyOptions { fresh: *fresh, stop_after: *stop_after })?;
            println!("h* = {} at d* = {:?} after {} of {} evaluations", r.h_star, r.d_star, r.history.len(), r.budget);
            Ok(0)
        }
        Command::Certify => {
            let c = pipeline::certify(&campaign, &out)?;
            print_certificate(&c);
            Ok(verdict(&c))
        }
        Command::Validate => {
            let v = pipeline::validate(&campaign, &out)?;
            println!(
                "{}/{} trials satisfied (rate {}), min robustness {}",
                v.satisfied_count(),
                v.trials,
                v.rate,
                v.min_robustness
            );
            Ok(0)
        }
        Command::Report => {
            for name in pipeline::report(&campaign, &out)? {
                println!("wrote {}", out.path(name).display());
            }
            Ok(0)
        }
        Command::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
