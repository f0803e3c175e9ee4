use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mcpredict::cache::{hit_rate, CacheLevelConfig};
use mcpredict::mimic::{core_trace_file_name, shared_trace_file_name, InterleaveStrategy};
use mcpredict::pipeline::{
    compare_oracle, core_dir, mimic_traces, run_pipeline, MachineSource, MimicOptions, PipelineConfig, PipelineError, Stage,
    TraceSource, DEFAULT_SEED,
};
use mcpredict::reuse::{profile_at_line_size, ReuseProfile};
use mcpredict::runtime::MachineConfig;
use mcpredict::trace::synth::{generate_synthetic_trace, WorkloadSpec};
use mcpredict::trace::{read_trace_file, write_trace, write_trace_file, Nesting, DEFAULT_SHARED_PREFIX};

/// Multicore cache hit-rate and runtime prediction from one sequential trace.
#[derive(Parser)]
#[command(name = "mcpredict", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace from a workload spec.
    Gen {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output trace file; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-core private traces and the interleaved shared trace.
    Mimic(MimicArgs),
    /// Reuse profile of a trace as CSV.
    Profile {
        #[arg(long)]
        trace: PathBuf,
        /// Cache line size in bytes; 1 gives address granularity.
        #[arg(long, default_value_t = 1)]
        line_size: u64,
        /// Merge distances into power-of-two buckets.
        #[arg(long)]
        pow2_bins: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hit rate of a reuse profile for each cache level of a machine.
    Hitrate {
        #[arg(long)]
        profile: PathBuf,
        /// Machine TOML file or preset name.
        #[arg(long)]
        machine: String,
    },
    /// Full pipeline: hit rates and runtime for each core count.
    Predict(RunArgs),
    /// Compare the analytical model against an LRU simulation.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        /// Refuse traces with more events than this.
        #[arg(long)]
        event_cap: Option<usize>,
    },
}

#[derive(Args)]
struct MimicArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    cores: Vec<usize>,
    #[arg(long, default_value = "round-robin")]
    strategy: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    shared_prefix: Option<String>,
    /// Static-schedule chunk size for split blocks.
    #[arg(long)]
    chunk: Option<u64>,
    /// Alignment of the per-core address offset.
    #[arg(long, default_value_t = 64)]
    line_size: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline TOML file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "workload")]
    trace: Option<PathBuf>,
    /// Synthetic workload spec used instead of a trace file.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Machine TOML file or preset name (haswell, broadwell, zen2).
    #[arg(long)]
    machine: Option<String>,
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    cores: Option<Vec<usize>>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shared_prefix: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the line size of every cache level.
    #[arg(long)]
    line_size: Option<u64>,
    #[arg(long)]
    chunk: Option<u64>,
    /// Keep intermediate traces and profiles in memory.
    #[arg(long)]
    no_persist: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => {
                let source = match (self.trace.clone(), self.workload.clone()) {
                    (Some(t), _) => TraceSource::File(t),
                    (None, Some(w)) => TraceSource::Workload(w),
                    (None, None) => {
                        return Err(PipelineError::msg(Stage::Config, "one of --trace, --workload or --config is required"))
                    }
                };
                let machine = self
                    .machine
                    .as_deref()
                    .ok_or_else(|| PipelineError::msg(Stage::Config, "--machine is required"))?;
                let kernel = self
                    .kernel
                    .clone()
                    .ok_or_else(|| PipelineError::msg(Stage::Config, "--kernel is required"))?;
                PipelineConfig::new(source, MachineSource::from_arg(machine), kernel)
            }
        };
        if self.config.is_some() {
            if let Some(t) = self.trace {
                cfg.source = TraceSource::File(t);
            } else if let Some(w) = self.workload {
                cfg.source = TraceSource::Workload(w);
            }
            if let Some(m) = &self.machine {
                cfg.machine = MachineSource::from_arg(m);
            }
            if let Some(k) = self.kernel {
                cfg.kernel = k;
            }
        }
        if let Some(c) = self.cores {
            cfg.core_counts = c;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let strategy = self.strategy.unwrap_or_else(|| cfg.strategy.name().to_string());
        cfg.strategy = InterleaveStrategy::parse(&strategy, cfg.seed).map_err(|e| PipelineError::new(Stage::Config, e))?;
        if let Some(p) = self.shared_prefix {
            cfg.shared_label_prefix = p;
        }
        if let Some(o) = self.out {
            cfg.out_dir = Some(o);
        }
        if self.line_size.is_some() {
            cfg.line_size = self.line_size;
        }
        if self.chunk.is_some() {
            cfg.chunk = self.chunk;
        }
        if self.no_persist {
            cfg.persist = false;
        }
        Ok(cfg)
    }
}

fn staged<T, E>(stage: Stage, r: std::result::Result<T, E>) -> Result<T>
where
    E: std::error::Error + Send + Sync + 'static,
{
    r.map_err(|e| PipelineError::new(stage, e).into())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| PipelineError::new(Stage::Output, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_machine(arg: &str) -> Result<MachineConfig> {
    let m = match MachineSource::from_arg(arg) {
        MachineSource::File(p) => MachineConfig::load(&p),
        MachineSource::Preset(name) => MachineConfig::preset(&name),
    };
    staged(Stage::Config, m)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { workload, seed, out } => {
            let spec = staged(Stage::Config, WorkloadSpec::load(&workload))?;
            let trace = staged(Stage::Trace, generate_synthetic_trace(&spec, seed))?;
            let mut w = output(out.as_deref())?;
            staged(Stage::Output, write_trace(&trace, &mut w).and_then(|_| w.flush()))?;
        }
        Command::Mimic(a) => {
            let trace = staged(Stage::Trace, read_trace_file(&a.trace, Nesting::Strict))?;
            let strategy = staged(Stage::Config, InterleaveStrategy::parse(&a.strategy, a.seed))?;
            let opts = MimicOptions {
                strategy,
                shared_label_prefix: a.shared_prefix.unwrap_or_else(|| DEFAULT_SHARED_PREFIX.to_string()),
                chunk: a.chunk,
                max_line_size: a.line_size,
            };
            let stem = a.trace.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
            for &n in &a.cores {
                let (privates, shared) = mimic_traces(&trace, n, &opts)?;
                let dir = core_dir(&a.out, n);
                staged(Stage::Output, fs::create_dir_all(&dir))?;
                for (k, t) in privates.iter().enumerate() {
                    let p = dir.join(core_trace_file_name(&stem, k));
                    staged(Stage::Output, write_trace_file(t, &p))?;
                }
                let p = dir.join(shared_trace_file_name(&stem, strategy));
                staged(Stage::Output, write_trace_file(&shared, &p))?;
                println!("{n} cores: {}", dir.display());
            }
        }
        Command::Profile { trace, line_size, pow2_bins, out } => {
            let trace = staged(Stage::Trace, read_trace_file(&trace, Nesting::Merged))?;
            let mut profile = staged(Stage::Profile, profile_at_line_size(&trace, line_size))?;
            if pow2_bins {
                profile = profile.binned_pow2();
            }
            let mut w = output(out.as_deref())?;
            staged(Stage::Output, profile.write_csv(&mut w).and_then(|_| w.flush()))?;
        }
        Command::Hitrate { profile, machine } => {
            let file = staged(Stage::Profile, fs::File::open(&profile))?;
            let profile = staged(Stage::Profile, ReuseProfile::read_csv(BufReader::new(file)))?;
            let machine = load_machine(&machine)?;
            let levels: Vec<&CacheLevelConfig> = machine
                .levels
                .iter()
                .filter(|l| profile.line_size().is_none_or(|s| s == l.line_size))
                .collect();
            if levels.is_empty() {
                return Err(PipelineError::msg(
                    Stage::HitRate,
                    format!(
                        "profile line size {} matches no level of machine `{}`",
                        profile.line_size().unwrap_or(0),
                        machine.name
                    ),
                )
                .into());
            }
            let mut w = output(None)?;
            writeln!(w, "level,hit_rate")?;
            for lvl in levels {
                let r = staged(Stage::HitRate, hit_rate(&profile, lvl))?;
                writeln!(w, "{},{r:.12}", lvl.name)?;
            }
            w.flush()?;
        }
        Command::Predict(args) => {
            let cfg = args.into_config()?;
            let report = run_pipeline(&cfg)?;
            let mut w = output(None)?;
            report.write_text(&mut w)?;
            w.flush()?;
        }
        Command::Oracle { run, event_cap } => {
            let mut cfg = run.into_config()?;
            if let Some(cap) = event_cap {
                cfg.oracle_event_cap = cap;
            }
            let table = compare_oracle(&cfg)?;
            if let Some(dir) = &cfg.out_dir {
                staged(Stage::Output, fs::create_dir_all(dir))?;
                let mut w = output(Some(&dir.join("oracle.csv")))?;
                table.write_csv(&mut w).and_then(|_| w.flush()).context("writing oracle.csv")?;
            }
            let mut w = output(None)?;
            table.write_csv(&mut w)?;
            writeln!(w, "# mean_abs_diff={:.12} max_abs_diff={:.12}", table.mean_abs_diff(), table.max_abs_diff())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
