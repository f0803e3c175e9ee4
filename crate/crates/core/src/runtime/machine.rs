use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RuntimeError;
use crate::cache::{CacheLevelConfig, Sharing};

/// Per-level timing in cycles: latency (delta) or reciprocal throughput (beta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelTimings {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub ram: f64,
}

impl LevelTimings {
    pub fn as_array(&self) -> [f64; 4] {
        [self.l1, self.l2, self.l3, self.ram]
    }
}

/// Instruction timings in cycles. The ALU class covers integer and floating
/// point add/sub/mul; division is modelled separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionTimings {
    pub alu_latency: f64,
    pub alu_throughput: f64,
    pub div_latency: f64,
    pub div_throughput: f64,
}

/// A modelled machine. Timings are in core cycles, sizes in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    pub name: String,
    pub core_count: usize,
    pub frequency_hz: f64,
    /// Stored for completeness; no prediction equation uses it.
    pub data_bus_width: u64,
    /// Bytes moved from memory to cache per transfer (C).
    pub transfer_unit: u64,
    /// Default data block size (b).
    pub word_size: u64,
    pub levels: Vec<CacheLevelConfig>,
    pub latency: LevelTimings,
    pub throughput: LevelTimings,
    pub instructions: InstructionTimings,
}

const PRESETS: [(&str, &str); 3] = [
    ("haswell", include_str!("../../presets/haswell-i7-5960x.toml")),
    ("broadwell", include_str!("../../presets/broadwell-e5-2699v4.toml")),
    ("zen2", include_str!("../../presets/zen2-epyc-7702p.toml")),
];

impl MachineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RuntimeError> {
        let m: Self = toml::from_str(text).map_err(|e| RuntimeError::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Names accepted by [`MachineConfig::preset`].
    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Result<Self, RuntimeError> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| RuntimeError::Config(format!("unknown machine preset `{name}`")))?;
        Self::from_toml_str(text)
    }

    pub fn preset_source(name: &str) -> Option<&'static str> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("machine config serializes")
    }

    /// Largest line size over all levels.
    pub fn max_line_size(&self) -> u64 {
        self.levels.iter().map(|l| l.line_size).max().unwrap_or(1)
    }

    /// Shared-level capacity, the upper bound on the effective block size.
    pub fn shared_capacity(&self) -> u64 {
        self.levels.last().map(|l| l.capacity).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: String| Err(RuntimeError::Config(m));
        if self.core_count == 0 {
            return bad("core_count must be at least 1".into());
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return bad(format!("frequency_hz must be positive, got {}", self.frequency_hz));
        }
        if self.levels.len() != 3 {
            return bad(format!("expected exactly 3 cache levels, found {}", self.levels.len()));
        }
        for (i, lvl) in self.levels.iter().enumerate() {
            lvl.validate().map_err(|e| RuntimeError::Config(e.to_string()))?;
            let expected = if i < 2 { Sharing::Private } else { Sharing::Shared };
            if lvl.sharing != expected {
                return bad(format!("level {} ({}) must be {expected}", i + 1, lvl.name));
            }
        }
        let lat = self.latency.as_array();
        let thr = self.throughput.as_array();
        let ins = &self.instructions;
        let ins = [ins.alu_latency, ins.alu_throughput, ins.div_latency, ins.div_throughput];
        for &v in lat.iter().chain(&thr).chain(&ins) {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("timings must be positive and finite, got {v}"));
            }
        }
        if !lat.windows(2).all(|w| w[0] <= w[1]) {
            return bad(format!(
                "latencies must satisfy L1 <= L2 <= L3 <= RAM, got {} / {} / {} / {}",
                lat[0], lat[1], lat[2], lat[3]
            ));
        }
        if self.transfer_unit == 0 || self.word_size == 0 {
            return bad("transfer_unit and word_size must be positive".into());
        }
        if self.shared_capacity() < self.transfer_unit {
            return bad("shared cache capacity is smaller than the transfer unit".into());
        }
        Ok(())
    }

    /// Copy with every level's line size replaced.
    pub fn with_line_size(&self, line_size: u64) -> Result<Self, RuntimeError> {
        let mut m = self.clone();
        for lvl in &mut m.levels {
            lvl.line_size = line_size;
        }
        m.validate()?;
        Ok(m)
    }
}

/// Whether CPU time is dominated by issue throughput or by dependent
/// instruction latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpuMode {
    #[default]
    Throughput,
    Latency,
}

/// Whole-kernel operation counts and memory volume of the parallel section.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelStats {
    pub n_int_alu: u64,
    pub n_float_alu: u64,
    pub n_div: u64,
    /// Bytes of memory traffic.
    pub total_mem: u64,
    #[serde(default)]
    pub mode: CpuMode,
}

/// Layout of program data in memory: `gap` bytes between blocks of the given
/// sizes. An empty `block_sizes` means one block of the machine word size.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapModel {
    #[serde(default)]
    pub gap: u64,
    #[serde(default)]
    pub block_sizes: Vec<u64>,
}

/// Kernel description file: the operation counts plus an optional `[gaps]`
/// table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub n_int_alu: u64,
    pub n_float_alu: u64,
    pub n_div: u64,
    pub total_mem: u64,
    #[serde(default)]
    pub mode: CpuMode,
    #[serde(default)]
    pub gaps: GapModel,
}

impl KernelFile {
    pub fn from_toml_str(text: &str) -> Result<Self, RuntimeError> {
        toml::from_str(text).map_err(|e| RuntimeError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RuntimeError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn stats(&self) -> KernelStats {
        KernelStats {
            n_int_alu: self.n_int_alu,
            n_float_alu: self.n_float_alu,
            n_div: self.n_div,
            total_mem: self.total_mem,
            mode: self.mode,
        }
    }
}
