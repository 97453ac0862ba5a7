use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use backup_cbf::harness::{
    emit_csv, emit_overlay, emit_plots, emit_summary, read_csv, run_grid, simulate, synthesize_segway_gain,
    verdict_table, HarnessConfig, Record, Variant, DEFAULT_CONFIG,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "backup-cbf", version, about = "Sampled-data backup CBF simulator for a Segway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write CSV, summary and plots.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Controller rate in Hz.
        #[arg(long)]
        frequency: Option<f64>,
        /// Input delay in seconds.
        #[arg(long)]
        delay: Option<f64>,
        /// Turn sensor noise and the estimator on.
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Run the rate and delay grid and print the verdict table.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out/grid")]
        out: PathBuf,
        /// Exit with status 2 when a verdict differs from its expectation.
        #[arg(long)]
        check: bool,
    },
    /// Overlay previously written run CSVs into `<out>/overlay.svg`.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "out/plots")]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Synthesize the pre-feedback gain and write its certificate as JSON.
    SynthesizeGain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "gain_certificate.json")]
        out: PathBuf,
    },
    /// Print the shipped configuration.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; the shipped defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Unfiltered,
    Nominal,
    Robust,
    DelayAware,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Unfiltered => Variant::Unfiltered,
            VariantArg::Nominal => Variant::Nominal,
            VariantArg::Robust => Variant::Robust,
            VariantArg::DelayAware => Variant::DelayAware,
        }
    }
}

fn load(path: Option<&Path>) -> Result<HarnessConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            HarnessConfig::from_toml(&text).with_context(|| format!("loading {}", p.display()))?
        }
        None => HarnessConfig::from_toml(DEFAULT_CONFIG)?,
    };
    Ok(cfg)
}

fn load_common(common: &Common) -> Result<HarnessConfig> {
    let mut cfg = load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate {
            common,
            variant,
            frequency,
            delay,
            noise,
            out,
        } => {
            let mut cfg = load_common(&common)?;
            if let Some(v) = variant {
                cfg.scenario.variant = v.into();
            }
            if let Some(f) = frequency {
                cfg.scenario.frequency = f;
            }
            if let Some(d) = delay {
                cfg.scenario.delay = d;
            }
            cfg.scenario.noise |= noise;
            cfg.validate()?;
            let run = simulate(&cfg)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            emit_csv(&run, &out.join("run.csv"))?;
            emit_summary(&run, &out.join("summary.json"))?;
            emit_plots(&run, &out, cfg.safety.position_limit)?;
            let s = &run.summary;
            println!(
                "{} at {} Hz: {:?}, min h {:.5}, max |p| {:.4}, fallbacks {}, {:.2} s",
                cfg.scenario.variant.name(),
                cfg.scenario.frequency,
                s.verdict,
                s.min_h_continuous,
                s.max_abs_position,
                s.fallbacks,
                s.wall_time
            );
        }
        Command::Grid { common, out, check } => {
            let cfg = load_common(&common)?;
            let (rows, _) = run_grid(&cfg, Some(&out))?;
            print!("{}", verdict_table(&rows));
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{}: {}", r.name, r.error.as_deref().unwrap_or_default());
            }
            if check && !rows.iter().all(|r| r.matches_expectation()) {
                std::process::exit(2);
            }
        }
        Command::Plot { runs, out, config } => {
            let cfg = load(config.as_deref())?;
            let mut loaded: Vec<(String, Vec<Record>)> = Vec::new();
            for path in &runs {
                let records = read_csv(path)?;
                if records.is_empty() {
                    bail!("{} has no records", path.display());
                }
                loaded.push((run_label(path), records));
            }
            let named: Vec<(String, &[Record])> = loaded.iter().map(|(n, r)| (n.clone(), r.as_slice())).collect();
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("overlay.svg");
            emit_overlay(&named, &path, cfg.safety.position_limit)?;
            println!("wrote {}", path.display());
        }
        Command::SynthesizeGain { config, out } => {
            let cfg = load(config.as_deref())?;
            let cert = synthesize_segway_gain(&cfg)?;
            let text = serde_json::to_string_pretty(&cert.to_file())?;
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            println!("K = {:?}, rho = {:.6}", cert.k.as_slice(), cert.rho);
        }
        Command::DefaultConfig => print!("{DEFAULT_CONFIG}"),
    }
    Ok(())
}

/// `out/grid/nominal-40hz/run.csv` is labeled `nominal-40hz`.
fn run_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "run" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_owned();
        }
    }
    stem.to_owned()
}
