//! Basic-block labeled memory traces.
//!
//! A trace is the flat event stream recorded from one sequential run of the
//! parallel region: every memory access is bracketed by the start and end
//! markers of the basic block whose straight-line code issued it.
//!
//! Text format, one event per line:
//!
//! ```text
//! BB_START:<function>:<label>
//! 0x7ffd0010
//! BB_END:<function>:<label>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Addresses are
//! hexadecimal with an optional `0x` prefix.

mod io;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use io::{parse_merged_trace, parse_trace, read_trace_file, write_trace, write_trace_file};

/// Separator between the marker keyword, function name and label.
pub const FIELD_SEPARATOR: char = ':';

/// Default label prefix of blocks that hold shared-variable references.
pub const DEFAULT_SHARED_PREFIX: &str = "shared_var_trace";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed entry `{content}`: {reason}")]
    Malformed {
        line: usize,
        content: String,
        reason: &'static str,
    },
    #[error("line {line}: address `{content}` is not a hexadecimal u64")]
    BadAddress { line: usize, content: String },
    #[error("line {line}: unbalanced block markers: {reason}")]
    Unbalanced { line: usize, reason: String },
    #[error("event {index}: {reason}")]
    Structure { index: usize, reason: String },
    #[error("trace must contain at least one block")]
    Empty,
    #[error("invalid block name `{0}`: must be non-empty without newlines or `:`")]
    BadName(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identity of a basic block: enclosing function plus block label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasicBlockId {
    function: String,
    label: String,
}

impl BasicBlockId {
    pub fn new(function: impl Into<String>, label: impl Into<String>) -> Result<Self, TraceError> {
        let function = function.into();
        let label = label.into();
        for part in [&function, &label] {
            if !valid_name(part) {
                return Err(TraceError::BadName(part.clone()));
            }
        }
        Ok(Self { function, label })
    }

    pub fn function(&self) -> &str {
        &self.function
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Display for BasicBlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{FIELD_SEPARATOR}{}", self.function, self.label)
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains(['\n', '\r', FIELD_SEPARATOR])
}

/// Shared handle to an interned block id; events of the same block share one
/// allocation.
pub type BlockRef = Arc<BasicBlockId>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    BlockStart(BlockRef),
    Access(u64),
    BlockEnd(BlockRef),
}

impl TraceEvent {
    pub fn address(&self) -> Option<u64> {
        match self {
            TraceEvent::Access(a) => Some(*a),
            _ => None,
        }
    }
}

/// How strictly block markers are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nesting {
    /// Blocks never nest; every access sits in the single open block. This
    /// holds for sequential and per-core traces.
    Strict,
    /// Markers of independent streams may overlap, as in an interleaved
    /// shared-cache trace. Every end must close an open instance of the same
    /// block and every access needs at least one open block.
    Merged,
}

/// An ordered, validated sequence of trace events.
///
/// The event list may be empty (a core that received no work), but the text
/// parser rejects empty input.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryTrace {
    events: Vec<TraceEvent>,
}

impl MemoryTrace {
    /// Builds a strictly nested trace.
    pub fn new(events: Vec<TraceEvent>) -> Result<Self, TraceError> {
        Self::with_nesting(events, Nesting::Strict)
    }

    pub fn with_nesting(events: Vec<TraceEvent>, nesting: Nesting) -> Result<Self, TraceError> {
        let mut checker = NestingChecker::new(nesting);
        for (index, ev) in events.iter().enumerate() {
            checker
                .step(ev)
                .map_err(|reason| TraceError::Structure { index, reason })?;
        }
        checker
            .finish()
            .map_err(|reason| TraceError::Structure { index: events.len(), reason })?;
        Ok(Self { events })
    }

    /// Wraps events produced by a transformation that preserves validity.
    pub(crate) fn from_trusted(events: Vec<TraceEvent>) -> Self {
        Self { events }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn addresses(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().filter_map(TraceEvent::address)
    }

    pub fn access_count(&self) -> usize {
        self.addresses().count()
    }

    /// Minimum and maximum accessed address, if any access exists.
    pub fn address_range(&self) -> Option<(u64, u64)> {
        self.addresses().fold(None, |acc, a| match acc {
            None => Some((a, a)),
            Some((lo, hi)) => Some((lo.min(a), hi.max(a))),
        })
    }

    /// Rewrites every access address, leaving block markers untouched.
    pub fn map_addresses(&self, mut f: impl FnMut(u64) -> u64) -> MemoryTrace {
        let events = self
            .events
            .iter()
            .map(|ev| match ev {
                TraceEvent::Access(a) => TraceEvent::Access(f(*a)),
                other => other.clone(),
            })
            .collect();
        MemoryTrace { events }
    }
}

/// Incremental marker validation shared by the parser and `MemoryTrace::new`.
pub(crate) struct NestingChecker {
    nesting: Nesting,
    open: BTreeMap<BlockRef, usize>,
    open_total: usize,
}

impl NestingChecker {
    pub(crate) fn new(nesting: Nesting) -> Self {
        Self { nesting, open: BTreeMap::new(), open_total: 0 }
    }

    pub(crate) fn step(&mut self, ev: &TraceEvent) -> Result<(), String> {
        match ev {
            TraceEvent::BlockStart(bb) => {
                if self.nesting == Nesting::Strict && self.open_total > 0 {
                    let current = self.open.keys().next().expect("open block");
                    return Err(format!("block {bb} starts inside open block {current}"));
                }
                *self.open.entry(bb.clone()).or_insert(0) += 1;
                self.open_total += 1;
            }
            TraceEvent::BlockEnd(bb) => match self.open.get_mut(bb) {
                Some(n) => {
                    *n -= 1;
                    if *n == 0 {
                        self.open.remove(bb);
                    }
                    self.open_total -= 1;
                }
                None => return Err(format!("end of block {bb} without matching start")),
            },
            TraceEvent::Access(a) => {
                if self.open_total == 0 {
                    return Err(format!("access 0x{a:x} outside any block"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<(), String> {
        match self.open.keys().next() {
            Some(bb) => Err(format!("block {bb} is never closed")),
            None => Ok(()),
        }
    }
}

/// Execution count of every basic block in a trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockStats {
    counts: BTreeMap<BlockRef, u64>,
}

impl BlockStats {
    pub fn get(&self, bb: &BasicBlockId) -> Option<u64> {
        self.counts.get(bb).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BasicBlockId, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_ref(), *v))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

impl FromIterator<(BlockRef, u64)> for BlockStats {
    fn from_iter<I: IntoIterator<Item = (BlockRef, u64)>>(iter: I) -> Self {
        Self { counts: iter.into_iter().collect() }
    }
}

/// Counts `BlockStart` events per block.
pub fn block_stats(trace: &MemoryTrace) -> BlockStats {
    let mut counts: BTreeMap<BlockRef, u64> = BTreeMap::new();
    for ev in trace.events() {
        if let TraceEvent::BlockStart(bb) = ev {
            *counts.entry(bb.clone()).or_insert(0) += 1;
        }
    }
    BlockStats { counts }
}

/// Addresses that belong to shared variables and must not be relocated when
/// mimicking per-core traces.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SharedRefSet {
    addresses: HashSet<u64>,
}

impl SharedRefSet {
    pub fn contains(&self, address: u64) -> bool {
        self.addresses.contains(&address)
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    /// Addresses in ascending order.
    pub fn sorted(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.addresses.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl FromIterator<u64> for SharedRefSet {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        Self { addresses: iter.into_iter().collect() }
    }
}

/// Every distinct address accessed inside a block whose label starts with
/// `shared_label_prefix`.
pub fn shared_refs(trace: &MemoryTrace, shared_label_prefix: &str) -> SharedRefSet {
    let mut addresses = HashSet::new();
    let mut inside_shared = 0usize;
    for ev in trace.events() {
        match ev {
            TraceEvent::BlockStart(bb) if bb.label().starts_with(shared_label_prefix) => {
                inside_shared += 1;
            }
            TraceEvent::BlockEnd(bb) if bb.label().starts_with(shared_label_prefix) => {
                inside_shared -= 1;
            }
            TraceEvent::Access(a) if inside_shared > 0 => {
                addresses.insert(*a);
            }
            _ => {}
        }
    }
    SharedRefSet { addresses }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(f: &str, l: &str) -> BlockRef {
        Arc::new(BasicBlockId::new(f, l).unwrap())
    }

    fn block(b: &BlockRef, addrs: &[u64]) -> Vec<TraceEvent> {
        let mut v = vec![TraceEvent::BlockStart(b.clone())];
        v.extend(addrs.iter().map(|&a| TraceEvent::Access(a)));
        v.push(TraceEvent::BlockEnd(b.clone()));
        v
    }

    #[test]
    fn names_reject_separator_and_empty() {
        assert!(BasicBlockId::new("f", "a:b").is_err());
        assert!(BasicBlockId::new("", "x").is_err());
        assert!(BasicBlockId::new("f", "x\ny").is_err());
        assert!(BasicBlockId::new("OUT__7285__", "for.body").is_ok());
    }

    #[test]
    fn strict_rejects_nested_blocks() {
        let a = bb("f", "a");
        let b = bb("f", "b");
        let events = vec![
            TraceEvent::BlockStart(a.clone()),
            TraceEvent::BlockStart(b.clone()),
            TraceEvent::BlockEnd(b.clone()),
            TraceEvent::BlockEnd(a.clone()),
        ];
        assert!(MemoryTrace::new(events.clone()).is_err());
        assert!(MemoryTrace::with_nesting(events, Nesting::Merged).is_ok());
    }

    #[test]
    fn rejects_access_outside_block_and_dangling_markers() {
        let a = bb("f", "a");
        assert!(MemoryTrace::new(vec![TraceEvent::Access(1)]).is_err());
        assert!(MemoryTrace::new(vec![TraceEvent::BlockStart(a.clone())]).is_err());
        assert!(MemoryTrace::new(vec![TraceEvent::BlockEnd(a)]).is_err());
    }

    #[test]
    fn merged_end_must_match_an_open_instance() {
        let a = bb("f", "a");
        let b = bb("f", "b");
        let events = vec![TraceEvent::BlockStart(a), TraceEvent::BlockEnd(b)];
        assert!(MemoryTrace::with_nesting(events, Nesting::Merged).is_err());
    }

    #[test]
    fn stats_count_block_starts() {
        let entry = bb("f", "entry");
        let body = bb("f", "for.body");
        let exit = bb("f", "exit");
        let mut events = block(&entry, &[0]);
        for i in 0..3 {
            events.extend(block(&body, &[8 * i]));
        }
        events.extend(block(&exit, &[]));
        let trace = MemoryTrace::new(events).unwrap();
        let stats = block_stats(&trace);
        assert_eq!(stats.get(&entry), Some(1));
        assert_eq!(stats.get(&body), Some(3));
        assert_eq!(stats.get(&exit), Some(1));
        assert_eq!(stats.total(), 5);
    }

    #[test]
    fn single_block_stats() {
        let b = bb("f", "bb");
        let trace = MemoryTrace::new(block(&b, &[1, 2])).unwrap();
        let stats = block_stats(&trace);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats.get(&b), Some(1));
    }

    #[test]
    fn fig4_shaped_counts() {
        let entry = bb("OUT__7285__", "entry");
        let body = bb("OUT__7285__", "for.body");
        let mut events = block(&entry, &[0x10, 0x18]);
        for i in 0..4 {
            events.extend(block(&body, &[0x100 + 8 * i]));
        }
        let stats = block_stats(&MemoryTrace::new(events).unwrap());
        assert_eq!(stats.get(&entry), Some(1));
        assert_eq!(stats.get(&body), Some(4));
    }

    #[test]
    fn shared_refs_from_labelled_block() {
        let body = bb("f", "for.body");
        let shared = bb("f", "shared_var_trace0");
        let mut events = block(&body, &[0x10]);
        events.extend(block(&shared, &[0xA0, 0xA8, 0xA0]));
        let trace = MemoryTrace::new(events).unwrap();
        let refs = shared_refs(&trace, DEFAULT_SHARED_PREFIX);
        assert_eq!(refs.sorted(), vec![0xA0, 0xA8]);
    }

    #[test]
    fn shared_refs_empty_without_label() {
        let body = bb("f", "for.body");
        let trace = MemoryTrace::new(block(&body, &[0x10, 0x20])).unwrap();
        assert!(shared_refs(&trace, DEFAULT_SHARED_PREFIX).is_empty());
    }

    #[test]
    fn shared_refs_union_over_matching_labels() {
        // 10 events: two shared blocks and one private block.
        let s0 = bb("f", "shared_var_trace0");
        let s1 = bb("f", "shared_var_trace1");
        let p = bb("f", "for.body");
        let mut events = block(&s0, &[0xA0, 0xA8]);
        events.extend(block(&p, &[0x10]));
        events.extend(block(&s1, &[0xA8]));
        assert_eq!(events.len(), 10);
        let trace = MemoryTrace::new(events).unwrap();
        // By hand: s0 contributes {A0, A8}, s1 contributes {A8}; 0x10 is private.
        let refs = shared_refs(&trace, "shared_var_trace");
        assert_eq!(refs.sorted(), vec![0xA0, 0xA8]);
        assert!(!refs.contains(0x10));
    }

    #[test]
    fn address_range_and_map() {
        let b = bb("f", "b");
        let trace = MemoryTrace::new(block(&b, &[0x100, 0x1F0, 0x140])).unwrap();
        assert_eq!(trace.address_range(), Some((0x100, 0x1F0)));
        let shifted = trace.map_addresses(|a| a + 1);
        assert_eq!(shifted.addresses().collect::<Vec<_>>(), vec![0x101, 0x1F1, 0x141]);
        assert_eq!(MemoryTrace::default().address_range(), None);
    }
}
