use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lisa_sim::controller::Features;
use lisa_sim::copy::{cost_table, fit_energy};
use lisa_sim::cpu::{generate_copy_workload, parse_trace, serialize_trace, GeneratorSpec, TraceEvent};
use lisa_sim::dram::DramConfig;
use lisa_sim::experiment::{copy_suite_spec, summary_csv, sweep, Workload};
use lisa_sim::metrics::RunStats;
use lisa_sim::sim::System;

#[derive(Parser)]
#[command(name = "lisa-sim", version, about = "Cycle-level DRAM simulator with in-DRAM bulk copy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Toml,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Toml => "toml",
        }
    }

    fn render(self, stats: &RunStats) -> String {
        match self {
            Format::Csv => stats.to_csv(),
            Format::Toml => stats.to_toml(),
        }
    }
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    cores: usize,
    #[arg(long, default_value_t = 0.1)]
    copy_fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    footprint_mb: f64,
    #[arg(long, default_value_t = 3000)]
    length: usize,
    #[arg(long, default_value_t = 16)]
    hot_rows: usize,
    #[arg(long, default_value_t = 0.9)]
    hot_fraction: f64,
    #[arg(long, default_value_t = 0)]
    hot_shift_period: usize,
}

impl GenArgs {
    fn spec(&self) -> Result<GeneratorSpec> {
        if !(0.0..=1.0).contains(&self.copy_fraction) {
            bail!("--copy-fraction must lie in [0, 1], got {}", self.copy_fraction);
        }
        if !(0.0..=1.0).contains(&self.hot_fraction) {
            bail!("--hot-fraction must lie in [0, 1], got {}", self.hot_fraction);
        }
        Ok(GeneratorSpec {
            seed: self.seed,
            cores: self.cores,
            copy_fraction: self.copy_fraction,
            footprint_mb: self.footprint_mb,
            length: self.length,
            hot_rows: self.hot_rows,
            hot_fraction: self.hot_fraction,
            hot_shift_period: self.hot_shift_period,
            ..GeneratorSpec::default()
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the latency and energy of one row copy per mechanism.
    Costs {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Add a column with the command-macro latency.
        #[arg(long)]
        measured: bool,
    },
    /// Generate synthetic copy-heavy traces, one file per core.
    Gen {
        #[command(flatten)]
        args: GenArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run traces (one per core) and write a report.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "trace", required = true, num_args = 1..)]
        traces: Vec<PathBuf>,
        /// `baseline`, `all`, or a comma list of rowclone, risc, villa, lip.
        #[arg(long, default_value = "baseline")]
        features: Features,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write every issued DRAM command to commands.txt.
        #[arg(long)]
        dump_commands: bool,
    },
    /// Run workloads under several feature sets and summarize weighted
    /// speedup normalized to the first set.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace files of one workload; omit to generate the synthetic suite.
        #[arg(long = "trace", num_args = 1..)]
        traces: Vec<PathBuf>,
        /// Seeds of the synthetic suite.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Feature sets, first one is the reference.
        #[arg(long = "features", num_args = 1.., default_values = ["baseline", "risc", "risc,villa", "risc,villa,lip"])]
        feature_sets: Vec<Features>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Fit per-command energies to the reference copy costs.
    FitEnergy {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<DramConfig> {
    match path {
        Some(p) => DramConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(DramConfig::default()),
    }
}

fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_trace(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Costs { config, measured } => {
            let cfg = load_config(config.as_deref())?;
            let rows = cost_table(&cfg)?;
            if measured {
                println!("mechanism,hops,latency_ns,energy_uJ,macro_ns");
            } else {
                println!("mechanism,hops,latency_ns,energy_uJ");
            }
            for r in rows {
                if measured {
                    println!("{},{},{},{:.2},{}", r.mechanism, r.hops, r.latency_ns, r.energy_uj, r.macro_ns);
                } else {
                    println!("{},{},{},{:.2}", r.mechanism, r.hops, r.latency_ns, r.energy_uj);
                }
            }
        }
        Command::Gen { args, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let spec = args.spec()?;
            create_dir(&out)?;
            for (i, t) in generate_copy_workload(&spec, &cfg).iter().enumerate() {
                write(&out.join(format!("core{i}.trace")), &serialize_trace(t))?;
            }
        }
        Command::Simulate {
            config,
            traces,
            features,
            out,
            format,
            dump_commands,
        } => {
            let cfg = load_config(config.as_deref())?;
            let traces = traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>>>()?;
            let mut system = System::new(&cfg, features, traces);
            if dump_commands {
                system.enable_command_log();
            }
            let stats = system.run()?;
            create_dir(&out)?;
            write(&out.join(format!("report.{}", format.ext())), &format.render(&stats))?;
            if dump_commands {
                let mut text = String::new();
                for (ch, rec) in system.command_log() {
                    text.push_str(&format!("{ch} {rec}\n"));
                }
                write(&out.join("commands.txt"), &text)?;
            }
        }
        Command::Sweep {
            config,
            traces,
            seeds,
            feature_sets,
            out,
            format,
        } => {
            let cfg = load_config(config.as_deref())?;
            let workloads = if traces.is_empty() {
                (1..=seeds)
                    .map(|s| Workload::generate(format!("seed{s}"), &copy_suite_spec(s), &cfg))
                    .collect()
            } else {
                vec![Workload {
                    name: "traces".to_string(),
                    traces: traces.iter().map(|p| load_trace(p)).collect::<Result<_>>()?,
                }]
            };
            let rows = sweep(&cfg, &workloads, &feature_sets)?;
            for r in &rows {
                let dir = out.join(&r.workload);
                create_dir(&dir)?;
                write(&dir.join(format!("{}.{}", r.features, format.ext())), &format.render(&r.stats))?;
            }
            create_dir(&out)?;
            write(&out.join("summary.csv"), &summary_csv(&rows))?;
        }
        Command::FitEnergy { config } => {
            let cfg = load_config(config.as_deref())?;
            let fit = fit_energy(&cfg.geometry);
            println!("[energy]");
            print!("{}", toml::to_string(&fit.params)?);
            println!();
            println!("mechanism,hops,target_uJ,fitted_uJ,residual_uJ");
            for (r, e) in &fit.cells {
                println!("{},{},{},{:.4},{:+.4}", r.mechanism, r.hops, r.energy_uj, e, e - r.energy_uj);
            }
            println!("max_abs_residual_uJ,{:.4}", fit.max_abs_residual());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
