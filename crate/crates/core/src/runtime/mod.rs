//! Runtime of the parallel section from hit rates, machine timings and
//! kernel operation counts.
//!
//! `T = T_mem + T_cpu`, both in cycles per core; the work (operations and
//! memory bytes) is divided evenly over the cores. Seconds appear only at the
//! very end, by dividing by the clock frequency.

mod machine;

use thiserror::Error;

use crate::cache::{CacheError, HitRateReport};
use crate::mimic::CoreCount;

pub use machine::{CpuMode, GapModel, InstructionTimings, KernelFile, KernelStats, LevelTimings, MachineConfig};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("hit probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("block size must be at least 1 byte, got {0}")]
    BadBlockSize(f64),
    #[error("transfer unit {transfer} must be positive and no larger than the cap {cap}")]
    BadTransfer { transfer: u64, cap: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `P1*c1 + (1-P1)*(P2*c2 + (1-P2)*(P3*c3 + (1-P3)*c_ram))`
fn three_level_average(hits: [f64; 3], cost: [f64; 4]) -> Result<f64, RuntimeError> {
    if let Some(&p) = hits.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(RuntimeError::BadProbability(p));
    }
    let [p1, p2, p3] = hits;
    let [c1, c2, c3, ram] = cost;
    Ok(p1 * c1 + (1.0 - p1) * (p2 * c2 + (1.0 - p2) * (p3 * c3 + (1.0 - p3) * ram)))
}

/// Average access latency in cycles.
pub fn avg_latency(rates: &HitRateReport, m: &MachineConfig) -> Result<f64, RuntimeError> {
    three_level_average(rates.summaries()?, m.latency.as_array())
}

/// Average reciprocal throughput in cycles per access.
pub fn avg_throughput(rates: &HitRateReport, m: &MachineConfig) -> Result<f64, RuntimeError> {
    three_level_average(rates.summaries()?, m.throughput.as_array())
}

/// Bytes actually moved for a data block of `block` bytes followed by a
/// `gap`: at least one transfer unit, whole transfer units in between, and
/// never more than `cap` (the shared cache capacity).
pub fn effective_block_size(block: u64, gap: u64, transfer: u64, cap: u64) -> Result<u64, RuntimeError> {
    if transfer == 0 || cap < transfer {
        return Err(RuntimeError::BadTransfer { transfer, cap });
    }
    let b = block.saturating_add(gap);
    Ok(if b <= transfer {
        transfer
    } else if b >= cap {
        cap
    } else {
        (b.div_ceil(transfer) * transfer).min(cap)
    })
}

/// Memory time per core in cycles:
/// `(delta + (b-1)*beta) / b * total_mem / cores`.
pub fn mem_time(
    avg_latency: f64,
    avg_throughput: f64,
    block: f64,
    total_mem: u64,
    cores: CoreCount,
) -> Result<f64, RuntimeError> {
    if block.is_nan() || block < 1.0 {
        return Err(RuntimeError::BadBlockSize(block));
    }
    let per_byte = (avg_latency + (block - 1.0) * avg_throughput) / block;
    Ok(per_byte * (total_mem as f64 / cores.get() as f64))
}

/// CPU time per core in cycles.
///
/// With `N_in` all instructions and `N_div` divisions per core:
/// throughput mode charges one full latency per class plus reciprocal
/// throughput for the rest, latency mode charges full latency for all but
/// one instruction per class. `(N - 1)` factors clamp at zero and a class
/// with no instructions costs nothing.
pub fn cpu_time(stats: &KernelStats, m: &MachineConfig, cores: CoreCount) -> f64 {
    let n = cores.get() as f64;
    let n_in = (stats.n_int_alu + stats.n_float_alu + stats.n_div) as f64 / n;
    let n_div = stats.n_div as f64 / n;
    let n_alu = n_in - n_div;
    let t = &m.instructions;
    let rest = |count: f64| (count - 1.0).max(0.0);

    match stats.mode {
        CpuMode::Throughput => {
            let alu = if n_alu > 0.0 { t.alu_latency + rest(n_alu) * t.alu_throughput } else { 0.0 };
            let div = if n_div > 0.0 { t.div_latency + rest(n_div) * t.div_throughput } else { 0.0 };
            alu + div
        }
        CpuMode::Latency => rest(n_alu) * t.alu_latency + rest(n_div) * t.div_latency,
    }
}

/// Components of one runtime prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimePrediction {
    pub avg_latency: f64,
    pub avg_throughput: f64,
    pub block_size: f64,
    pub mem_cycles: f64,
    pub cpu_cycles: f64,
    pub seconds: f64,
}

impl RuntimePrediction {
    pub fn total_cycles(&self) -> f64 {
        self.mem_cycles + self.cpu_cycles
    }
}

/// Predicted runtime of the parallel section on `cores` cores.
///
/// The block size is the mean effective size of the data blocks in `gaps`,
/// each padded by the gap and capped by the shared cache capacity.
pub fn predict_runtime(
    rates: &HitRateReport,
    stats: &KernelStats,
    m: &MachineConfig,
    cores: CoreCount,
    gaps: &GapModel,
) -> Result<RuntimePrediction, RuntimeError> {
    let delta = avg_latency(rates, m)?;
    let beta = avg_throughput(rates, m)?;
    let default_block = [m.word_size];
    let blocks: &[u64] = if gaps.block_sizes.is_empty() { &default_block } else { &gaps.block_sizes };
    let mut sum = 0.0;
    for &b in blocks {
        sum += effective_block_size(b, gaps.gap, m.transfer_unit, m.shared_capacity())? as f64;
    }
    let block_size = sum / blocks.len() as f64;

    let mem_cycles = mem_time(delta, beta, block_size, stats.total_mem, cores)?;
    let cpu_cycles = cpu_time(stats, m, cores);
    Ok(RuntimePrediction {
        avg_latency: delta,
        avg_throughput: beta,
        block_size,
        mem_cycles,
        cpu_cycles,
        seconds: (mem_cycles + cpu_cycles) / m.frequency_hz,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Machine with round-number timings used by the worked examples.
    pub(crate) fn example_machine() -> MachineConfig {
        let mut m = MachineConfig::preset("haswell").unwrap();
        m.frequency_hz = 2.0e9;
        m.latency = LevelTimings { l1: 4.0, l2: 12.0, l3: 40.0, ram: 200.0 };
        m.throughput = LevelTimings { l1: 1.0, l2: 3.0, l3: 10.0, ram: 50.0 };
        m.instructions = InstructionTimings {
            alu_latency: 3.0,
            alu_throughput: 1.0,
            div_latency: 20.0,
            div_throughput: 10.0,
        };
        m.transfer_unit = 8;
        m.word_size = 8;
        m
    }

    fn one() -> CoreCount {
        CoreCount::new(1).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn latency_extremes_and_mixed() {
        let m = example_machine();
        let r = HitRateReport::from_summaries(1.0, 0.3, 0.7);
        assert_eq!(avg_latency(&r, &m).unwrap(), 4.0);
        assert_eq!(avg_throughput(&r, &m).unwrap(), 1.0);
        let r = HitRateReport::from_summaries(0.0, 0.0, 0.0);
        assert_eq!(avg_latency(&r, &m).unwrap(), 200.0);
        assert_eq!(avg_throughput(&r, &m).unwrap(), 50.0);
        // 0.9*4 + 0.1*(0.5*12 + 0.5*(0.5*40 + 0.5*200))
        let r = HitRateReport::from_summaries(0.9, 0.5, 0.5);
        assert!(rel(avg_latency(&r, &m).unwrap(), 10.2) < 1e-12);
        // 0.9*1 + 0.1*(0.5*3 + 0.5*(0.5*10 + 0.5*50))
        assert!(rel(avg_throughput(&r, &m).unwrap(), 2.55) < 1e-12);
    }

    #[test]
    fn probabilities_are_checked() {
        let m = example_machine();
        let r = HitRateReport::from_summaries(1.2, 0.5, 0.5);
        assert!(matches!(avg_latency(&r, &m), Err(RuntimeError::BadProbability(_))));
        let mut r = HitRateReport::from_summaries(0.5, 0.5, 0.5);
        r.levels.truncate(2);
        assert!(avg_latency(&r, &m).is_err());
    }

    #[test]
    fn effective_block_cases() {
        assert_eq!(effective_block_size(32, 0, 64, 32768).unwrap(), 64);
        assert_eq!(effective_block_size(100, 50, 64, 32768).unwrap(), 192);
        assert_eq!(effective_block_size(1_000_000, 0, 64, 32768).unwrap(), 32768);
        assert_eq!(effective_block_size(64, 0, 64, 32768).unwrap(), 64);
        assert_eq!(effective_block_size(95, 0, 64, 100).unwrap(), 100);
        assert!(effective_block_size(8, 0, 64, 32).is_err());
        assert!(effective_block_size(8, 0, 0, 32).is_err());
    }

    #[test]
    fn mem_time_examples() {
        let c = one();
        assert_eq!(mem_time(7.0, 99.0, 1.0, 100, c).unwrap(), 700.0);
        assert_eq!(mem_time(7.0, 1.0, 8.0, 0, c).unwrap(), 0.0);
        // (10.2 + 7*2.55)/8 * 8000
        assert!(rel(mem_time(10.2, 2.55, 8.0, 8000, c).unwrap(), 28050.0) < 1e-12);
        assert!(mem_time(1.0, 1.0, 0.0, 8, c).is_err());
        let four = CoreCount::new(4).unwrap();
        assert_eq!(mem_time(7.0, 1.0, 1.0, 100, four).unwrap(), 175.0);
    }

    #[test]
    fn cpu_time_examples() {
        let m = example_machine();
        let tp = KernelStats { n_int_alu: 60, n_float_alu: 40, n_div: 1, total_mem: 0, mode: CpuMode::Throughput };
        assert_eq!(cpu_time(&tp, &m, one()), 122.0);
        let lat = KernelStats { n_int_alu: 11, n_float_alu: 0, n_div: 0, total_mem: 0, mode: CpuMode::Latency };
        assert_eq!(cpu_time(&lat, &m, one()), 30.0);
        for mode in [CpuMode::Throughput, CpuMode::Latency] {
            let empty = KernelStats { mode, ..KernelStats::default() };
            assert_eq!(cpu_time(&empty, &m, one()), 0.0);
        }
    }

    #[test]
    fn composite_prediction() {
        let m = example_machine();
        let r = HitRateReport::from_summaries(0.9, 0.5, 0.5);
        let stats = KernelStats { n_int_alu: 60, n_float_alu: 40, n_div: 1, total_mem: 8000, mode: CpuMode::Throughput };
        let p = predict_runtime(&r, &stats, &m, one(), &GapModel::default()).unwrap();
        assert_eq!(p.block_size, 8.0);
        assert!(rel(p.mem_cycles, 28050.0) < 1e-9);
        assert_eq!(p.cpu_cycles, 122.0);
        assert!(rel(p.seconds, 28172.0 / 2.0e9) < 1e-9);
        assert!(rel(p.seconds, 1.409e-5) < 1e-3);
    }

    #[test]
    fn degenerate_components() {
        let m = example_machine();
        let r = HitRateReport::from_summaries(0.9, 0.5, 0.5);
        let no_mem = KernelStats { n_int_alu: 60, n_float_alu: 40, n_div: 1, total_mem: 0, mode: CpuMode::Throughput };
        let p = predict_runtime(&r, &no_mem, &m, one(), &GapModel::default()).unwrap();
        assert_eq!(p.seconds, cpu_time(&no_mem, &m, one()) / m.frequency_hz);
        let no_ops = KernelStats { total_mem: 8000, ..KernelStats::default() };
        let p = predict_runtime(&r, &no_ops, &m, one(), &GapModel::default()).unwrap();
        assert_eq!(p.seconds, p.mem_cycles / m.frequency_hz);
    }

    #[test]
    fn contiguous_default_uses_one_transfer_unit() {
        let mut m = example_machine();
        m.transfer_unit = 64;
        let r = HitRateReport::from_summaries(0.9, 0.5, 0.5);
        let stats = KernelStats { total_mem: 6400, ..KernelStats::default() };
        let p = predict_runtime(&r, &stats, &m, one(), &GapModel::default()).unwrap();
        assert_eq!(p.block_size, 64.0);
        let direct = mem_time(p.avg_latency, p.avg_throughput, 64.0, 6400, one()).unwrap();
        assert_eq!(p.mem_cycles, direct);
    }

    #[test]
    fn gaps_average_effective_sizes() {
        let mut m = example_machine();
        m.transfer_unit = 64;
        let r = HitRateReport::from_summaries(0.9, 0.5, 0.5);
        let gaps = GapModel { gap: 50, block_sizes: vec![8, 100] };
        let p = predict_runtime(&r, &KernelStats::default(), &m, one(), &gaps).unwrap();
        // 58 -> 64, 150 -> 192
        assert_eq!(p.block_size, 128.0);
    }
}
