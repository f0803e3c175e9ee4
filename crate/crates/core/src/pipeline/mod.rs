//! End-to-end prediction runs: one sequential trace in, hit rates and
//! runtimes for several core counts out.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/report.csv              cores,level,core,hit_rate
//! <out>/runtime.csv             one row per core count
//! <out>/report.txt              provenance plus both tables
//! <out>/cores<n>/<stem>.core<k>.trace
//! <out>/cores<n>/<stem>.shared.<strategy>.trace
//! <out>/cores<n>/<stem>.core<k>.<level>.profile.csv
//! <out>/cores<n>/<stem>.shared.<strategy>.<level>.profile.csv
//! <out>/cores<n>/hitrates.csv
//! ```
//!
//! Everything under `cores<n>/` is skipped when persistence is off.

mod config;
mod report;

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cache::{hierarchy_profiles, hit_rate, rates_from_profiles, simulate_lru, HitRateReport, Sharing};
use crate::mimic::{
    compute_offset, core_trace_file_name, gen_private_traces_chunked, interleave_traces, shared_trace_file_name,
    CoreCount, InterleaveStrategy,
};
use crate::runtime::{predict_runtime, KernelFile, MachineConfig, RuntimePrediction};
use crate::trace::synth::{generate_synthetic_trace, WorkloadSpec};
use crate::trace::{block_stats, parse_trace, read_trace_file, shared_refs, write_trace, MemoryTrace, Nesting};

pub use config::{MachineSource, PipelineConfig, TraceSource, DEFAULT_ORACLE_EVENT_CAP, DEFAULT_SEED};
pub use report::{CoreSection, OracleRow, OracleTable, PredictionReport, Provenance, RowCore};

pub const TOOL_VERSION: &str = concat!("mcpredict ", env!("CARGO_PKG_VERSION"));

/// Pipeline step an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Trace,
    Analyze,
    Mimic,
    Interleave,
    Profile,
    HitRate,
    Runtime,
    Oracle,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Trace => "trace",
            Stage::Analyze => "analyze",
            Stage::Mimic => "mimic",
            Stage::Interleave => "interleave",
            Stage::Profile => "profile",
            Stage::HitRate => "hitrate",
            Stage::Runtime => "runtime",
            Stage::Oracle => "oracle",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl std::error::Error + Send + Sync + 'static) -> Self {
        Self { stage, source: Box::new(source) }
    }

    pub fn msg(stage: Stage, message: impl fmt::Display) -> Self {
        Self { stage, source: message.to_string().into() }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

/// Validated inputs of a run, with their content hashes.
pub struct LoadedInputs {
    pub trace: MemoryTrace,
    pub machine: MachineConfig,
    pub kernel: KernelFile,
    pub stem: String,
    pub provenance: Provenance,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "trace".to_string())
}

/// Reads and validates every input file named by `cfg`.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<LoadedInputs, PipelineError> {
    let (machine_text, machine_label) = match &cfg.machine {
        MachineSource::File(p) => (fs::read_to_string(p).stage(Stage::Config)?, p.display().to_string()),
        MachineSource::Preset(name) => {
            let text = MachineConfig::preset_source(name).ok_or_else(|| {
                let known: Vec<_> = MachineConfig::preset_names().collect();
                PipelineError::msg(
                    Stage::Config,
                    format!("unknown machine preset `{name}` (known: {})", known.join(", ")),
                )
            })?;
            (text.to_string(), format!("preset:{name}"))
        }
    };
    let mut machine = MachineConfig::from_toml_str(&machine_text).stage(Stage::Config)?;
    if let Some(line) = cfg.line_size {
        machine = machine.with_line_size(line).stage(Stage::Config)?;
    }
    let kernel_text = fs::read_to_string(&cfg.kernel).stage(Stage::Config)?;
    let kernel = KernelFile::from_toml_str(&kernel_text).stage(Stage::Config)?;

    if cfg.core_counts.is_empty() {
        return Err(PipelineError::msg(Stage::Config, "no core counts requested"));
    }
    for &n in &cfg.core_counts {
        if n == 0 || n > machine.core_count {
            return Err(PipelineError::msg(
                Stage::Config,
                format!("core count {n} outside 1..={} of machine `{}`", machine.core_count, machine.name),
            ));
        }
    }

    let (trace, trace_bytes, stem, trace_label) = match &cfg.source {
        TraceSource::File(p) => {
            let bytes = fs::read(p).stage(Stage::Trace)?;
            let trace = parse_trace(bytes.as_slice()).stage(Stage::Trace)?;
            (trace, bytes, file_stem(p), p.display().to_string())
        }
        TraceSource::Workload(p) => {
            let text = fs::read_to_string(p).stage(Stage::Trace)?;
            let spec = WorkloadSpec::from_toml_str(&text).stage(Stage::Trace)?;
            let trace = generate_synthetic_trace(&spec, cfg.seed).stage(Stage::Trace)?;
            let stem = file_stem(p);
            let stem = stem.strip_suffix(".workload").unwrap_or(&stem).to_string();
            (trace, text.into_bytes(), stem, format!("workload:{}", p.display()))
        }
    };

    let provenance = Provenance {
        tool_version: TOOL_VERSION.to_string(),
        seed: cfg.seed,
        strategy: cfg.strategy.name().to_string(),
        trace: trace_label,
        trace_sha256: sha256_hex(&trace_bytes),
        machine: machine_label,
        machine_sha256: sha256_hex(machine_text.as_bytes()),
        kernel: cfg.kernel.display().to_string(),
        kernel_sha256: sha256_hex(kernel_text.as_bytes()),
        line_size: cfg.line_size,
        chunk: cfg.chunk,
    };
    Ok(LoadedInputs { trace, machine, kernel, stem, provenance })
}

/// Files written so far, removed again if the run fails.
struct OutputTracker {
    files: Mutex<Vec<PathBuf>>,
    dirs: Mutex<Vec<PathBuf>>,
}

impl OutputTracker {
    fn new() -> Self {
        Self { files: Mutex::new(Vec::new()), dirs: Mutex::new(Vec::new()) }
    }

    fn create_dir(&self, dir: &Path) -> Result<(), PipelineError> {
        if !dir.exists() {
            fs::create_dir_all(dir).stage(Stage::Output)?;
            self.dirs.lock().expect("tracker lock").push(dir.to_path_buf());
        }
        Ok(())
    }

    fn write(&self, path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), PipelineError> {
        self.files.lock().expect("tracker lock").push(path.to_path_buf());
        let file = fs::File::create(path).stage(Stage::Output)?;
        let mut out = BufWriter::new(file);
        body(&mut out).stage(Stage::Output)?;
        out.flush().stage(Stage::Output)
    }

    fn remove_all(&self) {
        for f in self.files.lock().expect("tracker lock").iter() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.lock().expect("tracker lock").iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Everything derived for one core count.
pub struct CoreRun {
    pub privates: Vec<MemoryTrace>,
    pub shared: MemoryTrace,
    pub section: CoreSection,
}

/// Settings of the mimicking step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MimicOptions {
    pub strategy: InterleaveStrategy,
    pub shared_label_prefix: String,
    pub chunk: Option<u64>,
    /// Alignment of the per-core address offset.
    pub max_line_size: u64,
}

impl MimicOptions {
    pub fn from_config(cfg: &PipelineConfig, machine: &MachineConfig) -> Self {
        Self {
            strategy: cfg.strategy,
            shared_label_prefix: cfg.shared_label_prefix.clone(),
            chunk: cfg.chunk,
            max_line_size: machine.max_line_size(),
        }
    }
}

/// Mimics `cores` cores from the sequential trace: private traces plus the
/// interleaved shared stream.
pub fn mimic_traces(
    trace: &MemoryTrace,
    cores: usize,
    opts: &MimicOptions,
) -> Result<(Vec<MemoryTrace>, MemoryTrace), PipelineError> {
    let stats = block_stats(trace);
    let shared = shared_refs(trace, &opts.shared_label_prefix);
    let scheme = compute_offset(trace, opts.max_line_size).stage(Stage::Mimic)?;
    let n = CoreCount::new(cores).stage(Stage::Mimic)?;
    let privates = gen_private_traces_chunked(trace, n, &shared, &stats, scheme, opts.chunk).stage(Stage::Mimic)?;
    let merged = interleave_traces(&privates, opts.strategy).stage(Stage::Interleave)?;
    Ok((privates, merged))
}

/// Downstream half of the pipeline: profiles, hit rates and runtime from
/// already mimicked traces.
pub fn evaluate_traces(
    privates: &[MemoryTrace],
    shared: &MemoryTrace,
    machine: &MachineConfig,
    kernel: &KernelFile,
) -> Result<(crate::cache::HierarchyProfiles, HitRateReport, RuntimePrediction), PipelineError> {
    let cores = CoreCount::new(privates.len()).stage(Stage::Mimic)?;
    let profiles = hierarchy_profiles(privates, shared, machine).stage(Stage::Profile)?;
    let rates = rates_from_profiles(&profiles, machine).stage(Stage::HitRate)?;
    let runtime = predict_runtime(&rates, &kernel.stats(), machine, cores, &kernel.gaps).stage(Stage::Runtime)?;
    Ok((profiles, rates, runtime))
}

/// Reads back the traces persisted for `cores` cores.
pub fn read_persisted_traces(
    dir: &Path,
    stem: &str,
    cores: usize,
    strategy: InterleaveStrategy,
) -> Result<(Vec<MemoryTrace>, MemoryTrace), PipelineError> {
    let privates = (0..cores)
        .map(|k| read_trace_file(&dir.join(core_trace_file_name(stem, k)), Nesting::Strict))
        .collect::<Result<Vec<_>, _>>()
        .stage(Stage::Trace)?;
    let shared = read_trace_file(&dir.join(shared_trace_file_name(stem, strategy)), Nesting::Merged).stage(Stage::Trace)?;
    Ok((privates, shared))
}

/// Directory holding the intermediate files of one core count.
pub fn core_dir(out: &Path, cores: usize) -> PathBuf {
    out.join(format!("cores{cores}"))
}

fn run_one(
    inputs: &LoadedInputs,
    cfg: &PipelineConfig,
    cores: usize,
    tracker: Option<&OutputTracker>,
) -> Result<CoreSection, PipelineError> {
    let opts = MimicOptions::from_config(cfg, &inputs.machine);
    let (privates, shared) = mimic_traces(&inputs.trace, cores, &opts)?;
    let (profiles, rates, runtime) = evaluate_traces(&privates, &shared, &inputs.machine, &inputs.kernel)?;

    if let (Some(tracker), Some(out)) = (tracker, cfg.out_dir.as_deref()) {
        let dir = core_dir(out, cores);
        tracker.create_dir(&dir)?;
        let stem = &inputs.stem;
        for (k, t) in privates.iter().enumerate() {
            tracker.write(&dir.join(core_trace_file_name(stem, k)), |w| write_trace(t, w))?;
            for (li, lvl) in inputs.machine.levels[..2].iter().enumerate() {
                if let Some(p) = &profiles.private[k][li] {
                    let name = format!("{stem}.core{k}.{}.profile.csv", lvl.name);
                    tracker.write(&dir.join(name), |w| p.write_csv(w))?;
                }
            }
        }
        tracker.write(&dir.join(shared_trace_file_name(stem, cfg.strategy)), |w| write_trace(&shared, w))?;
        let l3 = &inputs.machine.levels[2].name;
        let name = format!("{stem}.shared.{}.{l3}.profile.csv", cfg.strategy.name());
        tracker.write(&dir.join(name), |w| profiles.shared.write_csv(w))?;
        tracker.write(&dir.join("hitrates.csv"), |w| rates.write_csv(w))?;
    }

    Ok(CoreSection {
        cores,
        private_events: privates.iter().map(MemoryTrace::len).collect(),
        shared_events: shared.len(),
        rates,
        runtime,
    })
}

/// Runs the whole pipeline for every requested core count.
///
/// Core counts are evaluated in parallel; the report lists them in request
/// order. When an output directory is set the report files are written
/// there, and on any failure every file written by this run is removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PredictionReport, PipelineError> {
    let inputs = load_inputs(cfg)?;
    let tracker = cfg.out_dir.as_ref().map(|_| OutputTracker::new());
    let result = run_with_inputs(&inputs, cfg, tracker.as_ref());
    if result.is_err() {
        if let Some(t) = &tracker {
            t.remove_all();
        }
    }
    result
}

fn run_with_inputs(
    inputs: &LoadedInputs,
    cfg: &PipelineConfig,
    tracker: Option<&OutputTracker>,
) -> Result<PredictionReport, PipelineError> {
    if let (Some(t), Some(out)) = (tracker, cfg.out_dir.as_deref()) {
        t.create_dir(out)?;
    }
    let persist = if cfg.persist { tracker } else { None };
    let sections = cfg
        .core_counts
        .par_iter()
        .map(|&n| run_one(inputs, cfg, n, persist))
        .collect::<Result<Vec<_>, _>>()?;
    let report = PredictionReport {
        provenance: inputs.provenance.clone(),
        machine: inputs.machine.name.clone(),
        sections,
    };
    if let (Some(t), Some(out)) = (tracker, cfg.out_dir.as_deref()) {
        t.write(&out.join("report.csv"), |w| report.write_rates_csv(w))?;
        t.write(&out.join("runtime.csv"), |w| report.write_runtime_csv(w))?;
        t.write(&out.join("report.txt"), |w| report.write_text(w))?;
    }
    Ok(report)
}

/// Analytical rates against the LRU simulator on the same mimicked traces,
/// for every level and requested core count.
pub fn compare_oracle(cfg: &PipelineConfig) -> Result<OracleTable, PipelineError> {
    let inputs = load_inputs(cfg)?;
    if inputs.trace.len() > cfg.oracle_event_cap {
        return Err(PipelineError::msg(
            Stage::Oracle,
            format!(
                "trace has {} events, above the oracle cap of {}; the simulator is meant for desk-scale traces",
                inputs.trace.len(),
                cfg.oracle_event_cap
            ),
        ));
    }
    let machine = &inputs.machine;
    let opts = MimicOptions::from_config(cfg, machine);
    let per_count = cfg
        .core_counts
        .par_iter()
        .map(|&n| -> Result<Vec<OracleRow>, PipelineError> {
            let (privates, shared) = mimic_traces(&inputs.trace, n, &opts)?;
            let profiles = hierarchy_profiles(&privates, &shared, machine).stage(Stage::Profile)?;
            let mut rows = Vec::new();
            for (li, lvl) in machine.levels.iter().enumerate() {
                match lvl.sharing {
                    Sharing::Private => {
                        let mut sum = (0.0, 0.0);
                        let mut active = 0usize;
                        for (k, t) in privates.iter().enumerate() {
                            let Some(p) = &profiles.private[k][li] else { continue };
                            let model = hit_rate(p, lvl).stage(Stage::HitRate)?;
                            let sim = simulate_lru(t, lvl).hit_rate();
                            rows.push(OracleRow::new(n, &lvl.name, RowCore::Core(k), model, sim));
                            sum.0 += model;
                            sum.1 += sim;
                            active += 1;
                        }
                        let a = active.max(1) as f64;
                        rows.push(OracleRow::new(n, &lvl.name, RowCore::Mean, sum.0 / a, sum.1 / a));
                    }
                    Sharing::Shared => {
                        let model = hit_rate(&profiles.shared, lvl).stage(Stage::HitRate)?;
                        let sim = simulate_lru(&shared, lvl).hit_rate();
                        rows.push(OracleRow::new(n, &lvl.name, RowCore::Shared, model, sim));
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleTable { rows: per_count.into_iter().flatten().collect() })
}
