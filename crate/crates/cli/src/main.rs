//! rmtlab: run and inspect random-matrix spectral experiments.

use anyhow::Context;
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rmtlab_core::ensemble::{EnsembleSpec, EntryLaw};
use rmtlab_core::harness::{self, EmitKind, ExperimentConfig, ExperimentKind, ParamBlock};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "rmtlab", about = "Random-matrix spectral laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config file.
    Run { config: PathBuf },
    /// Reshape a finished run's tables into plot-ready CSVs.
    Emit {
        run_id: String,
        /// density | scaling | scatter | probes
        which: String,
        /// Output root holding the run (or set RMTLAB_OUTPUT_ROOT).
        #[arg(long, default_value = "runs")]
        root: PathBuf,
    },
    /// List finished runs under the output root.
    List {
        #[arg(long, default_value = "runs")]
        root: PathBuf,
    },
    /// Local-law scaling experiment without a config file.
    Locallaw {
        #[arg(long, value_parser = parse_law)]
        law: EntryLaw,
        #[arg(long, default_value_t = 0.25)]
        s: f64,
        /// Center z0 as "re,im".
        #[arg(long, default_value = "1,0", value_parser = parse_complex)]
        z0: Complex64,
        /// Comma-separated dimensions.
        #[arg(long = "N-list", value_delimiter = ',', default_value = "256,512,1024")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: String,
    },
    /// Swap-state comparison: coefficients and the v^4 remainder sweep.
    Compare {
        #[arg(long, value_parser = parse_law)]
        law: EntryLaw,
        #[arg(long = "law-prime", value_parser = parse_law)]
        law_prime: EntryLaw,
        #[arg(long = "N")]
        n: usize,
        /// Swap index k = (a-1) N + b.
        #[arg(long, conflicts_with = "ab")]
        k: Option<usize>,
        /// Entry "a,b" (1-based).
        #[arg(long, value_parser = parse_pair)]
        ab: Option<(usize, usize)>,
        #[arg(long, value_parser = parse_complex, default_value = "0.5,0.2")]
        w: Complex64,
        #[arg(long, value_parser = parse_complex, default_value = "0.5,0")]
        z: Complex64,
        /// Comma-separated v values.
        #[arg(long = "v-sweep", value_delimiter = ',', default_value = "0.01,0.005,0.0025")]
        v_sweep: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: String,
    },
    /// Evaluate one of the A/Z/scriptP functionals from a config file.
    Functional {
        /// A | Z | P1 | P2 | P3
        #[arg(long)]
        which: String,
        #[arg(long)]
        config: PathBuf,
    },
    /// rho_c density curve at one z.
    Density {
        #[arg(long, value_parser = parse_complex, default_value = "0,0")]
        z: Complex64,
        #[arg(long = "x-min")]
        x_min: Option<f64>,
        #[arg(long = "x-max")]
        x_max: Option<f64>,
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
        #[arg(long, default_value_t = 1e-5)]
        eta: f64,
        #[arg(long, default_value = "runs")]
        out: String,
    },
}

fn parse_law(s: &str) -> Result<EntryLaw, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown law '{s}'"))
}

fn parse_complex(s: &str) -> Result<Complex64, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [re] => Ok(Complex64::new(re.trim().parse().map_err(|e| format!("{e}"))?, 0.0)),
        [re, im] => Ok(Complex64::new(
            re.trim().parse().map_err(|e| format!("{e}"))?,
            im.trim().parse().map_err(|e| format!("{e}"))?,
        )),
        _ => Err(format!("expected 're,im', got '{s}'")),
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected 'a,b', got '{s}'"));
    }
    Ok((
        parts[0].trim().parse().map_err(|e| format!("{e}"))?,
        parts[1].trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn finish(store: harness::ResultStore) -> anyhow::Result<()> {
    println!("run {}", store.run_id);
    println!("{}", serde_json::to_string_pretty(&store.summary)?);
    if !store.hard_failures.is_empty() {
        for failure in &store.hard_failures {
            eprintln!("HARD FAIL: {failure}");
        }
        std::process::exit(1);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = ExperimentConfig::from_json(&text)?;
            finish(harness::run(&cfg)?)
        }
        Command::Emit { run_id, which, root } => {
            let root = std::env::var(harness::OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or(root);
            let kind: EmitKind = which.parse()?;
            let path = harness::emit_plotdata(&root.join(&run_id), kind)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::List { root } => {
            let root = std::env::var(harness::OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or(root);
            for id in harness::list_runs(&root)? {
                println!("{id}");
            }
            Ok(())
        }
        Command::Locallaw {
            law,
            s,
            z0,
            n_list,
            trials,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig {
                experiment: ExperimentKind::Scaling,
                ensemble: EnsembleSpec::new(n_list[0], law),
                params: ParamBlock {
                    n_list: Some(n_list),
                    s: Some(s),
                    z0: Some([z0.re, z0.im]),
                    trials: Some(trials),
                    seed: Some(seed),
                    radius: Some(1.0),
                    ..ParamBlock::default()
                },
                output_dir: out,
                parallelism: 0,
            };
            finish(harness::run(&cfg)?)
        }
        Command::Compare {
            law,
            law_prime,
            n,
            k,
            ab,
            w,
            z,
            v_sweep,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig {
                experiment: ExperimentKind::Compare,
                ensemble: EnsembleSpec::new(n, law),
                params: ParamBlock {
                    law_prime: Some(law_prime),
                    k,
                    ab,
                    w: Some([w.re, w.im]),
                    z: Some([z.re, z.im]),
                    v_sweep: Some(v_sweep),
                    seed: Some(seed),
                    ..ParamBlock::default()
                },
                output_dir: out,
                parallelism: 0,
            };
            finish(harness::run(&cfg)?)
        }
        Command::Functional { which, config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            cfg.experiment = ExperimentKind::Functional;
            cfg.params.which = Some(which);
            finish(harness::run(&cfg)?)
        }
        Command::Density {
            z,
            x_min,
            x_max,
            nodes,
            eta,
            out,
        } => {
            let cfg = ExperimentConfig {
                experiment: ExperimentKind::Density,
                ensemble: EnsembleSpec::new(8, EntryLaw::Gaussian),
                params: ParamBlock {
                    z: Some([z.re, z.im]),
                    x_min,
                    x_max,
                    x_nodes: Some(nodes),
                    eta: Some(eta),
                    ..ParamBlock::default()
                },
                output_dir: out,
                parallelism: 0,
            };
            finish(harness::run(&cfg)?)
        }
    }
}
