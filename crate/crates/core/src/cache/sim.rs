//! Exact trace-driven set-associative LRU simulation.

use std::collections::{BTreeMap, HashMap};

use super::CacheLevelConfig;
use crate::trace::MemoryTrace;

/// Sets wider than this switch from a linear recency list to indexed LRU.
const LINEAR_SET_MAX: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimStats {
    pub hits: u64,
    pub accesses: u64,
}

impl SimStats {
    /// Hits over accesses; zero for an empty stream.
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses as f64
        }
    }
}

enum Set {
    /// Most recently used tag last.
    Linear(Vec<u64>),
    Indexed {
        stamp_of: HashMap<u64, u64>,
        by_stamp: BTreeMap<u64, u64>,
    },
}

impl Set {
    fn new(ways: u64) -> Self {
        if ways <= LINEAR_SET_MAX {
            Set::Linear(Vec::with_capacity(ways as usize))
        } else {
            Set::Indexed { stamp_of: HashMap::new(), by_stamp: BTreeMap::new() }
        }
    }

    /// Touches `line`, returning whether it was resident.
    fn access(&mut self, line: u64, ways: u64, now: u64) -> bool {
        match self {
            Set::Linear(lines) => {
                if let Some(pos) = lines.iter().rposition(|&x| x == line) {
                    lines.remove(pos);
                    lines.push(line);
                    true
                } else {
                    if lines.len() as u64 == ways {
                        lines.remove(0);
                    }
                    lines.push(line);
                    false
                }
            }
            Set::Indexed { stamp_of, by_stamp } => {
                let hit = match stamp_of.insert(line, now) {
                    Some(old) => {
                        by_stamp.remove(&old);
                        true
                    }
                    None => {
                        if stamp_of.len() as u64 > ways {
                            let (_, victim) = by_stamp.pop_first().expect("non-empty set");
                            stamp_of.remove(&victim);
                        }
                        false
                    }
                };
                by_stamp.insert(now, line);
                hit
            }
        }
    }
}

/// Replays the trace through a cold cache of geometry `cfg`.
///
/// Lines are `address / line_size`; the set index is `line mod sets`.
pub fn simulate_lru(trace: &MemoryTrace, cfg: &CacheLevelConfig) -> SimStats {
    let ways = cfg.ways();
    let num_sets = cfg.blocks() / ways;
    let shift = cfg.line_size.trailing_zeros();
    let mut sets: HashMap<u64, Set> = HashMap::new();
    let mut stats = SimStats::default();

    for (now, addr) in trace.addresses().enumerate() {
        let line = addr >> shift;
        let set = sets.entry(line % num_sets).or_insert_with(|| Set::new(ways));
        if set.access(line, ways, now as u64) {
            stats.hits += 1;
        }
        stats.accesses += 1;
    }
    stats
}
