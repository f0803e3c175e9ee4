use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};
use crate::mimic::InterleaveStrategy;
use crate::trace::DEFAULT_SHARED_PREFIX;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ORACLE_EVENT_CAP: usize = 2_000_000;

/// Where the sequential trace comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceSource {
    File(PathBuf),
    /// Synthetic workload spec, expanded with the pipeline seed.
    Workload(PathBuf),
}

/// Machine description: a TOML file or a built-in preset name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MachineSource {
    File(PathBuf),
    Preset(String),
}

impl MachineSource {
    /// Existing files win; otherwise the name is taken as a preset.
    pub fn from_arg(arg: &str) -> Self {
        let path = PathBuf::from(arg);
        if path.exists() || arg.contains(std::path::MAIN_SEPARATOR) || arg.ends_with(".toml") {
            MachineSource::File(path)
        } else {
            MachineSource::Preset(arg.to_string())
        }
    }
}

/// Everything one prediction run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source: TraceSource,
    pub machine: MachineSource,
    pub kernel: PathBuf,
    pub core_counts: Vec<usize>,
    pub strategy: InterleaveStrategy,
    pub shared_label_prefix: String,
    /// Output directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Write intermediate traces and profiles next to the report.
    pub persist: bool,
    pub seed: u64,
    /// Replaces the line size of every cache level.
    pub line_size: Option<u64>,
    /// Static-schedule chunk for split blocks; `None` is one contiguous run
    /// per core.
    pub chunk: Option<u64>,
    /// Oracle runs refuse sequential traces longer than this many events.
    pub oracle_event_cap: usize,
}

impl PipelineConfig {
    pub fn new(source: TraceSource, machine: MachineSource, kernel: PathBuf) -> Self {
        Self {
            source,
            machine,
            kernel,
            core_counts: vec![1, 2, 4, 8],
            strategy: InterleaveStrategy::RoundRobin,
            shared_label_prefix: DEFAULT_SHARED_PREFIX.to_string(),
            out_dir: None,
            persist: true,
            seed: DEFAULT_SEED,
            line_size: None,
            chunk: None,
            oracle_event_cap: DEFAULT_ORACLE_EVENT_CAP,
        }
    }

    /// Reads a pipeline TOML file; relative paths resolve against its
    /// directory.
    ///
    /// ```toml
    /// trace = "kernel.trace"        # or: workload = "kernel.workload.toml"
    /// machine = "haswell"           # preset name or path
    /// kernel = "kernel.stats.toml"
    /// cores = [1, 2, 4, 8]
    /// strategy = "round-robin"      # or "uniform"
    /// seed = 42
    /// out = "results"
    /// ```
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Config, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let file: PipelineFile = toml::from_str(text).map_err(|e| PipelineError::msg(Stage::Config, e))?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let source = match (&file.trace, &file.workload) {
            (Some(t), None) => TraceSource::File(resolve(t)),
            (None, Some(w)) => TraceSource::Workload(resolve(w)),
            _ => {
                return Err(PipelineError::msg(
                    Stage::Config,
                    "exactly one of `trace` or `workload` must be given",
                ))
            }
        };
        let machine = match MachineSource::from_arg(&file.machine) {
            MachineSource::File(p) => MachineSource::File(resolve(&p.to_string_lossy())),
            preset => preset,
        };
        let seed = file.seed.unwrap_or(DEFAULT_SEED);
        let strategy = InterleaveStrategy::parse(file.strategy.as_deref().unwrap_or("round-robin"), seed)
            .map_err(|e| PipelineError::new(Stage::Config, e))?;
        let mut cfg = Self::new(source, machine, resolve(&file.kernel));
        cfg.core_counts = file.cores.unwrap_or(cfg.core_counts);
        cfg.strategy = strategy;
        cfg.seed = seed;
        if let Some(p) = file.shared_prefix {
            cfg.shared_label_prefix = p;
        }
        cfg.out_dir = file.out.as_deref().map(resolve);
        cfg.persist = file.persist.unwrap_or(true);
        cfg.line_size = file.line_size;
        cfg.chunk = file.chunk;
        if let Some(cap) = file.oracle_event_cap {
            cfg.oracle_event_cap = cap;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct PipelineFile {
    trace: Option<String>,
    workload: Option<String>,
    machine: String,
    kernel: String,
    cores: Option<Vec<usize>>,
    strategy: Option<String>,
    shared_prefix: Option<String>,
    out: Option<String>,
    persist: Option<bool>,
    seed: Option<u64>,
    line_size: Option<u64>,
    chunk: Option<u64>,
    oracle_event_cap: Option<usize>,
}
