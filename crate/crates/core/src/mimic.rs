//! Mimicking a multicore execution from one sequential trace.
//!
//! Per-core private traces follow static scheduling: blocks that ran fewer
//! times than there are cores are replicated on every core, the instances of
//! all other blocks are split into contiguous runs. Non-shared addresses on
//! core `k` are relocated by `k * offset` so that each core appears to work
//! on its own data. The shared-cache stream is a merge of the private traces
//! under a round-robin or seeded uniform-random schedule.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::DetRng;
use crate::trace::{BlockRef, BlockStats, MemoryTrace, SharedRefSet, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MimicError {
    #[error("core count must be at least 1")]
    ZeroCores,
    #[error("trace has no memory accesses")]
    NoAccesses,
    #[error("line size {0} is not a power of two")]
    BadLineSize(u64),
    #[error("offset {offset:#x} is not a positive multiple of line size {line_size}")]
    BadOffset { offset: u64, line_size: u64 },
    #[error("address span is too large for a non-colliding offset")]
    SpanTooLarge,
    #[error("block {0} occurs in the trace but not in the block statistics")]
    MissingStats(String),
    #[error("block {block} has more instances than its recorded count {count}")]
    StatsMismatch { block: String, count: u64 },
    #[error("relocating address {address:#x} for core {core} overflows")]
    AddressOverflow { address: u64, core: usize },
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error("no private traces to interleave")]
    NothingToInterleave,
    #[error("unknown interleaving strategy `{0}` (expected round-robin or uniform)")]
    UnknownStrategy(String),
}

/// Number of cores (threads) being mimicked; always at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoreCount(usize);

impl CoreCount {
    pub fn new(n: usize) -> Result<Self, MimicError> {
        if n == 0 {
            Err(MimicError::ZeroCores)
        } else {
            Ok(Self(n))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for CoreCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Per-core address relocation: core `k` adds `k * offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetScheme {
    offset: u64,
}

impl OffsetScheme {
    /// Uses an explicit offset; it must be a positive multiple of `line_size`.
    pub fn new(offset: u64, line_size: u64) -> Result<Self, MimicError> {
        if !line_size.is_power_of_two() {
            return Err(MimicError::BadLineSize(line_size));
        }
        if offset == 0 || !offset.is_multiple_of(line_size) {
            return Err(MimicError::BadOffset { offset, line_size });
        }
        Ok(Self { offset })
    }

    pub fn offset(self) -> u64 {
        self.offset
    }

    pub fn relocate(self, address: u64, core: usize) -> Option<u64> {
        self.offset
            .checked_mul(core as u64)
            .and_then(|shift| address.checked_add(shift))
    }
}

/// Smallest power of two covering the address span plus one line.
///
/// Being a power of two no smaller than `max_line_size` (itself a power of
/// two), the offset is line aligned; exceeding the span keeps relocated
/// addresses, and their cache lines, clear of the originals.
pub fn compute_offset(trace: &MemoryTrace, max_line_size: u64) -> Result<OffsetScheme, MimicError> {
    if !max_line_size.is_power_of_two() {
        return Err(MimicError::BadLineSize(max_line_size));
    }
    let (lo, hi) = trace.address_range().ok_or(MimicError::NoAccesses)?;
    let offset = (hi - lo)
        .checked_add(max_line_size)
        .and_then(u64::checked_next_power_of_two)
        .ok_or(MimicError::SpanTooLarge)?;
    Ok(OffsetScheme { offset })
}

#[derive(Debug, Clone, Copy)]
enum Target {
    AllCores,
    Core(usize),
}

/// Splits a sequential trace into per-core private traces with static
/// scheduling (contiguous runs of `ceil(count / cores)` instances).
pub fn gen_private_traces(
    trace: &MemoryTrace,
    num_cores: CoreCount,
    shared: &SharedRefSet,
    stats: &BlockStats,
    scheme: OffsetScheme,
) -> Result<Vec<MemoryTrace>, MimicError> {
    gen_private_traces_chunked(trace, num_cores, shared, stats, scheme, None)
}

/// As [`gen_private_traces`], but with `Some(chunk)` the instances of split
/// blocks are dealt to cores in round-robin runs of `chunk`, like OpenMP
/// `schedule(static, chunk)`.
pub fn gen_private_traces_chunked(
    trace: &MemoryTrace,
    num_cores: CoreCount,
    shared: &SharedRefSet,
    stats: &BlockStats,
    scheme: OffsetScheme,
    chunk: Option<u64>,
) -> Result<Vec<MemoryTrace>, MimicError> {
    if chunk == Some(0) {
        return Err(MimicError::ZeroChunk);
    }
    let n = num_cores.get();
    let mut out: Vec<Vec<TraceEvent>> = vec![Vec::new(); n];
    let mut done: HashMap<BlockRef, u64> = HashMap::new();
    let mut target = Target::AllCores;

    let emit = |out: &mut Vec<Vec<TraceEvent>>, target: Target, ev: &TraceEvent| -> Result<(), MimicError> {
        let cores = match target {
            Target::AllCores => 0..n,
            Target::Core(k) => k..k + 1,
        };
        for k in cores {
            let ev = match ev {
                TraceEvent::Access(a) if !shared.contains(*a) => {
                    let moved = scheme
                        .relocate(*a, k)
                        .ok_or(MimicError::AddressOverflow { address: *a, core: k })?;
                    TraceEvent::Access(moved)
                }
                other => other.clone(),
            };
            out[k].push(ev);
        }
        Ok(())
    };

    for ev in trace.events() {
        match ev {
            TraceEvent::BlockStart(bb) => {
                let count = stats
                    .get(bb)
                    .ok_or_else(|| MimicError::MissingStats(bb.to_string()))?;
                let instance = done.get(bb).copied().unwrap_or(0);
                if instance >= count {
                    return Err(MimicError::StatsMismatch { block: bb.to_string(), count });
                }
                target = if count < n as u64 {
                    Target::AllCores
                } else {
                    let core = match chunk {
                        Some(c) => (instance / c) % n as u64,
                        None => (instance / count.div_ceil(n as u64)).min(n as u64 - 1),
                    };
                    Target::Core(core as usize)
                };
                emit(&mut out, target, ev)?;
            }
            TraceEvent::BlockEnd(bb) => {
                emit(&mut out, target, ev)?;
                *done.entry(bb.clone()).or_insert(0) += 1;
            }
            TraceEvent::Access(_) => emit(&mut out, target, ev)?,
        }
    }
    Ok(out.into_iter().map(MemoryTrace::from_trusted).collect())
}

/// How private streams are merged into the shared-cache stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterleaveStrategy {
    /// One event from each core in turn, skipping exhausted cores.
    RoundRobin,
    /// Each draw picks a core uniformly; draws on exhausted cores are skipped.
    UniformRandom { seed: u64 },
}

impl InterleaveStrategy {
    /// Short name used in file names and reports.
    pub fn name(self) -> &'static str {
        match self {
            InterleaveStrategy::RoundRobin => "round-robin",
            InterleaveStrategy::UniformRandom { .. } => "uniform",
        }
    }

    /// Parses `round-robin` or `uniform`; the seed applies to `uniform`.
    pub fn parse(name: &str, seed: u64) -> Result<Self, MimicError> {
        match name {
            "round-robin" | "round_robin" | "rr" => Ok(InterleaveStrategy::RoundRobin),
            "uniform" | "uniform-random" | "random" => Ok(InterleaveStrategy::UniformRandom { seed }),
            other => Err(MimicError::UnknownStrategy(other.to_string())),
        }
    }
}

impl FromStr for InterleaveStrategy {
    type Err = MimicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, 0)
    }
}

/// Source core of every output position when merging streams of the given
/// lengths.
pub fn interleave_schedule(lengths: &[usize], strategy: InterleaveStrategy) -> Vec<usize> {
    let n = lengths.len();
    let total: usize = lengths.iter().sum();
    let mut taken = vec![0usize; n];
    let mut schedule = Vec::with_capacity(total);

    match strategy {
        InterleaveStrategy::RoundRobin => {
            while schedule.len() < total {
                for core in 0..n {
                    if taken[core] < lengths[core] {
                        taken[core] += 1;
                        schedule.push(core);
                    }
                }
            }
        }
        InterleaveStrategy::UniformRandom { seed } => {
            let mut rng = DetRng::new(seed);
            while schedule.len() < total {
                let core = rng.below(n as u64) as usize;
                if taken[core] < lengths[core] {
                    taken[core] += 1;
                    schedule.push(core);
                }
            }
        }
    }
    schedule
}

/// Merges private traces event by event. Block markers of different cores
/// may overlap in the result, so it only satisfies merged nesting.
pub fn interleave_traces(
    privates: &[MemoryTrace],
    strategy: InterleaveStrategy,
) -> Result<MemoryTrace, MimicError> {
    if privates.is_empty() {
        return Err(MimicError::NothingToInterleave);
    }
    let lengths: Vec<usize> = privates.iter().map(MemoryTrace::len).collect();
    let schedule = interleave_schedule(&lengths, strategy);
    let mut cursors: Vec<_> = privates.iter().map(|t| t.events().iter()).collect();
    let events = schedule
        .into_iter()
        .map(|core| cursors[core].next().expect("schedule within length").clone())
        .collect();
    Ok(MemoryTrace::from_trusted(events))
}

/// `<stem>.core<k>.trace`
pub fn core_trace_file_name(stem: &str, core: usize) -> String {
    format!("{stem}.core{core}.trace")
}

/// `<stem>.shared.<strategy>.trace`
pub fn shared_trace_file_name(stem: &str, strategy: InterleaveStrategy) -> String {
    format!("{stem}.shared.{}.trace", strategy.name())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::trace::{block_stats, shared_refs, BasicBlockId};

    fn bb(f: &str, l: &str) -> BlockRef {
        Arc::new(BasicBlockId::new(f, l).unwrap())
    }

    fn block(b: &BlockRef, addrs: &[u64]) -> Vec<TraceEvent> {
        let mut v = vec![TraceEvent::BlockStart(b.clone())];
        v.extend(addrs.iter().map(|&a| TraceEvent::Access(a)));
        v.push(TraceEvent::BlockEnd(b.clone()));
        v
    }

    fn trace_of(blocks: &[(&BlockRef, &[u64])]) -> MemoryTrace {
        MemoryTrace::new(blocks.iter().flat_map(|(b, a)| block(b, a)).collect()).unwrap()
    }

    /// Access-only trace used to exercise the merge rules on labelled items.
    fn items(addrs: &[u64]) -> MemoryTrace {
        MemoryTrace::from_trusted(addrs.iter().map(|&a| TraceEvent::Access(a)).collect())
    }

    #[test]
    fn offset_examples() {
        let b = bb("f", "b");
        let t = trace_of(&[(&b, &[0x100, 0x1F0, 0x180])]);
        assert_eq!(compute_offset(&t, 64).unwrap().offset(), 0x200);
        let t = trace_of(&[(&b, &[0x0])]);
        assert_eq!(compute_offset(&t, 64).unwrap().offset(), 64);
    }

    #[test]
    fn offset_errors() {
        let b = bb("f", "b");
        assert_eq!(compute_offset(&trace_of(&[(&b, &[])]), 64), Err(MimicError::NoAccesses));
        assert_eq!(compute_offset(&trace_of(&[(&b, &[1])]), 48), Err(MimicError::BadLineSize(48)));
        assert_eq!(
            compute_offset(&trace_of(&[(&b, &[0, u64::MAX])]), 64),
            Err(MimicError::SpanTooLarge)
        );
        assert!(OffsetScheme::new(96, 64).is_err());
        assert!(OffsetScheme::new(0, 64).is_err());
        assert_eq!(OffsetScheme::new(128, 64).unwrap().offset(), 128);
    }

    #[test]
    fn one_core_is_identity() {
        let e = bb("f", "entry");
        let body = bb("f", "for.body");
        let t = trace_of(&[(&e, &[0x10]), (&body, &[0x20]), (&body, &[0x28])]);
        let scheme = compute_offset(&t, 64).unwrap();
        let out = gen_private_traces(
            &t,
            CoreCount::new(1).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            scheme,
        )
        .unwrap();
        assert_eq!(out, vec![t]);
    }

    #[test]
    fn fig4_two_core_construction() {
        let entry = bb("OUT__7285__", "entry");
        let body = bb("OUT__7285__", "for.body");
        let shared = bb("OUT__7285__", "shared_var_trace0");
        let t = trace_of(&[
            (&entry, &[0x1000, 0x1008]),
            (&shared, &[0x2000]),
            (&body, &[0x1100, 0x2000]),
            (&body, &[0x1108, 0x2000]),
            (&body, &[0x1110, 0x2000]),
            (&body, &[0x1118, 0x2000]),
        ]);
        let stats = block_stats(&t);
        let refs = shared_refs(&t, "shared_var_trace");
        let scheme = compute_offset(&t, 64).unwrap();
        let off = scheme.offset();
        let out = gen_private_traces(&t, CoreCount::new(2).unwrap(), &refs, &stats, scheme).unwrap();

        // entry and the single shared block are copied to both cores; the four
        // loop-body instances are split two per core.
        let expect0 = trace_of(&[
            (&entry, &[0x1000, 0x1008]),
            (&shared, &[0x2000]),
            (&body, &[0x1100, 0x2000]),
            (&body, &[0x1108, 0x2000]),
        ]);
        let expect1 = trace_of(&[
            (&entry, &[0x1000 + off, 0x1008 + off]),
            (&shared, &[0x2000]),
            (&body, &[0x1110 + off, 0x2000]),
            (&body, &[0x1118 + off, 0x2000]),
        ]);
        assert_eq!(out, vec![expect0, expect1]);
    }

    #[test]
    fn five_instances_on_two_cores() {
        let body = bb("f", "for.body");
        let blocks: Vec<Vec<u64>> = (0..5u64).map(|i| vec![i * 8]).collect();
        let t = trace_of(&blocks.iter().map(|a| (&body, a.as_slice())).collect::<Vec<_>>());
        let scheme = OffsetScheme::new(1 << 20, 64).unwrap();
        let out = gen_private_traces(
            &t,
            CoreCount::new(2).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            scheme,
        )
        .unwrap();
        // per_core = ceil(5/2) = 3: instances 0..=2 on core 0, 3..=4 on core 1.
        assert_eq!(out[0].addresses().collect::<Vec<_>>(), vec![0, 8, 16]);
        assert_eq!(out[1].addresses().collect::<Vec<_>>(), vec![24 + (1 << 20), 32 + (1 << 20)]);
    }

    #[test]
    fn ceil_split_may_leave_last_core_idle() {
        let body = bb("f", "for.body");
        let blocks: Vec<Vec<u64>> = (0..5u64).map(|i| vec![i]).collect();
        let t = trace_of(&blocks.iter().map(|a| (&body, a.as_slice())).collect::<Vec<_>>());
        let out = gen_private_traces(
            &t,
            CoreCount::new(4).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            OffsetScheme::new(64, 64).unwrap(),
        )
        .unwrap();
        let sizes: Vec<usize> = out.iter().map(MemoryTrace::access_count).collect();
        assert_eq!(sizes, vec![2, 2, 1, 0]);
    }

    #[test]
    fn chunked_distribution_round_robins_chunks() {
        let body = bb("f", "for.body");
        let blocks: Vec<Vec<u64>> = (0..6u64).map(|i| vec![i]).collect();
        let t = trace_of(&blocks.iter().map(|a| (&body, a.as_slice())).collect::<Vec<_>>());
        let out = gen_private_traces_chunked(
            &t,
            CoreCount::new(2).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            OffsetScheme::new(64, 64).unwrap(),
            Some(1),
        )
        .unwrap();
        assert_eq!(out[0].addresses().collect::<Vec<_>>(), vec![0, 2, 4]);
        assert_eq!(out[1].addresses().collect::<Vec<_>>(), vec![65, 67, 69]);
    }

    #[test]
    fn blocks_rarer_than_cores_are_replicated() {
        let body = bb("f", "for.body");
        let t = trace_of(&[(&body, &[0]), (&body, &[8])]);
        let out = gen_private_traces(
            &t,
            CoreCount::new(4).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            OffsetScheme::new(64, 64).unwrap(),
        )
        .unwrap();
        for (k, core) in out.iter().enumerate() {
            let k = k as u64;
            assert_eq!(core.addresses().collect::<Vec<_>>(), vec![64 * k, 8 + 64 * k]);
        }
    }

    #[test]
    fn inconsistent_stats_are_rejected() {
        let a = bb("f", "a");
        let b = bb("f", "b");
        let t = trace_of(&[(&a, &[0]), (&b, &[8])]);
        let partial: BlockStats = [(a.clone(), 1)].into_iter().collect();
        let err = gen_private_traces(
            &t,
            CoreCount::new(2).unwrap(),
            &SharedRefSet::default(),
            &partial,
            OffsetScheme::new(64, 64).unwrap(),
        )
        .unwrap_err();
        assert_eq!(err, MimicError::MissingStats("f:b".into()));

        let t = trace_of(&[(&a, &[0]), (&a, &[8])]);
        let undercount: BlockStats = [(a.clone(), 1)].into_iter().collect();
        assert!(matches!(
            gen_private_traces(
                &t,
                CoreCount::new(1).unwrap(),
                &SharedRefSet::default(),
                &undercount,
                OffsetScheme::new(64, 64).unwrap()
            ),
            Err(MimicError::StatsMismatch { .. })
        ));
    }

    #[test]
    fn relocation_overflow_is_an_error() {
        let a = bb("f", "a");
        let t = trace_of(&[(&a, &[u64::MAX - 10])]);
        let err = gen_private_traces(
            &t,
            CoreCount::new(2).unwrap(),
            &SharedRefSet::default(),
            &block_stats(&t),
            OffsetScheme::new(64, 64).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, MimicError::AddressOverflow { core: 1, .. }));
    }

    #[test]
    fn round_robin_examples() {
        let rr = InterleaveStrategy::RoundRobin;
        let out = interleave_traces(&[items(&[0xa, 0xb]), items(&[0xc, 0xd])], rr).unwrap();
        assert_eq!(out.addresses().collect::<Vec<_>>(), vec![0xa, 0xc, 0xb, 0xd]);
        let out = interleave_traces(&[items(&[0xa, 0xb, 0xc]), items(&[0xd])], rr).unwrap();
        assert_eq!(out.addresses().collect::<Vec<_>>(), vec![0xa, 0xd, 0xb, 0xc]);
    }

    #[test]
    fn uniform_produces_a_valid_merge() {
        // The only merges of [a,b] with [c] keeping a before b.
        let valid = [vec![0xa, 0xb, 0xc], vec![0xa, 0xc, 0xb], vec![0xc, 0xa, 0xb]];
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let out = interleave_traces(
                &[items(&[0xa, 0xb]), items(&[0xc])],
                InterleaveStrategy::UniformRandom { seed },
            )
            .unwrap();
            let got: Vec<u64> = out.addresses().collect();
            assert!(valid.contains(&got), "{got:?}");
            seen.insert(got);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn uniform_is_seed_deterministic() {
        let privates = [items(&[1, 2, 3, 4]), items(&[5, 6, 7]), items(&[8])];
        let s = InterleaveStrategy::UniformRandom { seed: 5 };
        assert_eq!(interleave_traces(&privates, s).unwrap(), interleave_traces(&privates, s).unwrap());
    }

    #[test]
    fn interleave_requires_input() {
        assert_eq!(
            interleave_traces(&[], InterleaveStrategy::RoundRobin),
            Err(MimicError::NothingToInterleave)
        );
    }

    #[test]
    fn strategy_names() {
        assert_eq!(InterleaveStrategy::parse("round-robin", 1).unwrap(), InterleaveStrategy::RoundRobin);
        assert_eq!(
            InterleaveStrategy::parse("uniform", 9).unwrap(),
            InterleaveStrategy::UniformRandom { seed: 9 }
        );
        assert!(InterleaveStrategy::parse("lottery", 0).is_err());
        assert_eq!(core_trace_file_name("k", 3), "k.core3.trace");
        assert_eq!(
            shared_trace_file_name("k", InterleaveStrategy::RoundRobin),
            "k.shared.round-robin.trace"
        );
    }
}
