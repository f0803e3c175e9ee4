use std::fmt;
use std::io::{self, Write};

use crate::cache::{HitRateReport, Sharing};
use crate::runtime::RuntimePrediction;

/// Where a run's inputs came from. Contains no timestamps so that reports
/// are a pure function of the inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub strategy: String,
    pub trace: String,
    pub trace_sha256: String,
    pub machine: String,
    pub machine_sha256: String,
    pub kernel: String,
    pub kernel_sha256: String,
    pub line_size: Option<u64>,
    pub chunk: Option<u64>,
}

/// Results for one core count.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreSection {
    pub cores: usize,
    pub private_events: Vec<usize>,
    pub shared_events: usize,
    pub rates: HitRateReport,
    pub runtime: RuntimePrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub provenance: Provenance,
    pub machine: String,
    pub sections: Vec<CoreSection>,
}

impl PredictionReport {
    pub fn section(&self, cores: usize) -> Option<&CoreSection> {
        self.sections.iter().find(|s| s.cores == cores)
    }

    /// `cores,level,core,hit_rate` for every section.
    pub fn write_rates_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "cores,level,core,hit_rate")?;
        for s in &self.sections {
            for lvl in &s.rates.levels {
                match lvl.sharing {
                    Sharing::Private => {
                        for (k, r) in lvl.per_core.iter().enumerate() {
                            match r {
                                Some(r) => writeln!(out, "{},{},{k},{r:.12}", s.cores, lvl.name)?,
                                None => writeln!(out, "{},{},{k},idle", s.cores, lvl.name)?,
                            }
                        }
                        writeln!(out, "{},{},mean,{:.12}", s.cores, lvl.name, lvl.summary)?;
                    }
                    Sharing::Shared => writeln!(out, "{},{},shared,{:.12}", s.cores, lvl.name, lvl.summary)?,
                }
            }
        }
        Ok(())
    }

    /// One row per core count with the runtime components.
    pub fn write_runtime_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(
            out,
            "cores,avg_latency_cycles,avg_throughput_cycles,block_size_bytes,mem_cycles,cpu_cycles,total_cycles,seconds"
        )?;
        for s in &self.sections {
            let r = &s.runtime;
            writeln!(
                out,
                "{},{:.9},{:.9},{:.3},{:.6},{:.6},{:.6},{:.9e}",
                s.cores,
                r.avg_latency,
                r.avg_throughput,
                r.block_size,
                r.mem_cycles,
                r.cpu_cycles,
                r.total_cycles(),
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn write_text(&self, out: &mut dyn Write) -> io::Result<()> {
        let p = &self.provenance;
        writeln!(out, "{}", p.tool_version)?;
        writeln!(out, "machine   {} ({})", self.machine, p.machine)?;
        writeln!(out, "          sha256 {}", p.machine_sha256)?;
        writeln!(out, "trace     {}", p.trace)?;
        writeln!(out, "          sha256 {}", p.trace_sha256)?;
        writeln!(out, "kernel    {}", p.kernel)?;
        writeln!(out, "          sha256 {}", p.kernel_sha256)?;
        writeln!(out, "seed      {}", p.seed)?;
        writeln!(out, "strategy  {}", p.strategy)?;
        if let Some(l) = p.line_size {
            writeln!(out, "line size {l} (override)")?;
        }
        if let Some(c) = p.chunk {
            writeln!(out, "chunk     {c}")?;
        }
        for s in &self.sections {
            writeln!(out)?;
            writeln!(out, "== {} core{} ==", s.cores, if s.cores == 1 { "" } else { "s" })?;
            writeln!(out, "events    private {:?}, shared {}", s.private_events, s.shared_events)?;
            for lvl in &s.rates.levels {
                match lvl.sharing {
                    Sharing::Private => {
                        let cores: Vec<String> = lvl
                            .per_core
                            .iter()
                            .map(|r| r.map_or_else(|| "idle".to_string(), |r| format!("{r:.4}")))
                            .collect();
                        writeln!(out, "{:<9} mean {:.6}  per core [{}]", lvl.name, lvl.summary, cores.join(" "))?;
                    }
                    Sharing::Shared => writeln!(out, "{:<9} shared {:.6}", lvl.name, lvl.summary)?,
                }
            }
            let r = &s.runtime;
            writeln!(out, "latency   {:.4} cycles/access, throughput {:.4}", r.avg_latency, r.avg_throughput)?;
            writeln!(out, "block     {:.1} bytes", r.block_size)?;
            writeln!(
                out,
                "runtime   {:.6e} s ({:.1} memory + {:.1} cpu cycles)",
                r.seconds, r.mem_cycles, r.cpu_cycles
            )?;
        }
        Ok(())
    }
}

/// Which stream an oracle row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowCore {
    Core(usize),
    Mean,
    Shared,
}

impl fmt::Display for RowCore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowCore::Core(k) => write!(f, "{k}"),
            RowCore::Mean => f.write_str("mean"),
            RowCore::Shared => f.write_str("shared"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub cores: usize,
    pub level: String,
    pub core: RowCore,
    pub model: f64,
    pub simulated: f64,
    pub abs_diff: f64,
}

impl OracleRow {
    pub fn new(cores: usize, level: &str, core: RowCore, model: f64, simulated: f64) -> Self {
        Self { cores, level: level.to_string(), core, model, simulated, abs_diff: (model - simulated).abs() }
    }
}

/// Analytical against simulated hit rates.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub rows: Vec<OracleRow>,
}

impl OracleTable {
    /// Largest absolute difference over all rows.
    pub fn max_abs_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max)
    }

    /// Mean absolute difference over per-core and shared rows (mean rows
    /// excluded).
    pub fn mean_abs_diff(&self) -> f64 {
        let d: Vec<f64> = self.rows.iter().filter(|r| r.core != RowCore::Mean).map(|r| r.abs_diff).collect();
        if d.is_empty() {
            0.0
        } else {
            d.iter().sum::<f64>() / d.len() as f64
        }
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> io::Result<()> {
        writeln!(out, "cores,level,core,model,simulated,abs_diff")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.12},{:.12},{:.12}",
                r.cores, r.level, r.core, r.model, r.simulated, r.abs_diff
            )?;
        }
        Ok(())
    }
}
