//! Reuse distances and reuse profiles.
//!
//! The reuse distance of an access is the number of distinct addresses
//! touched since the previous access to the same address, or infinite on a
//! first touch. Block markers play no part; only the access stream counts.

mod fenwick;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::trace::{MemoryTrace, TraceEvent};
use fenwick::Fenwick;

#[derive(Debug, Error)]
pub enum ReuseError {
    #[error("line size {0} is not a power of two")]
    BadLineSize(u64),
    #[error("cannot build a reuse profile from zero accesses")]
    EmptyProfile,
    #[error("profile line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite stack distance or a compulsory (first-touch) access.
///
/// Ordering places every finite distance before `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReuseDistance {
    Finite(u64),
    Infinite,
}

impl ReuseDistance {
    pub fn finite(self) -> Option<u64> {
        match self {
            ReuseDistance::Finite(d) => Some(d),
            ReuseDistance::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == ReuseDistance::Infinite
    }
}

impl fmt::Display for ReuseDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReuseDistance::Finite(d) => d.fmt(f),
            ReuseDistance::Infinite => f.write_str("inf"),
        }
    }
}

/// Replaces every address by its cache-line index `address / line_size`.
pub fn to_line_granularity(trace: &MemoryTrace, line_size: u64) -> Result<MemoryTrace, ReuseError> {
    if !line_size.is_power_of_two() {
        return Err(ReuseError::BadLineSize(line_size));
    }
    let shift = line_size.trailing_zeros();
    Ok(trace.map_addresses(|a| a >> shift))
}

/// Reference LRU-stack algorithm, O(N·M) for N accesses over M addresses.
pub fn reuse_distances_naive(trace: &MemoryTrace) -> Vec<ReuseDistance> {
    // Most recent address at the end.
    let mut stack: Vec<u64> = Vec::new();
    trace
        .addresses()
        .map(|a| match stack.iter().rposition(|&x| x == a) {
            Some(pos) => {
                let depth = stack.len() - 1 - pos;
                stack.remove(pos);
                stack.push(a);
                ReuseDistance::Finite(depth as u64)
            }
            None => {
                stack.push(a);
                ReuseDistance::Infinite
            }
        })
        .collect()
}

/// Stack distances in O(N log N).
///
/// Every address keeps a mark at the time of its latest access inside a
/// Fenwick tree over access times. The distance of a reuse is the number of
/// marks strictly between the previous access and now, i.e. the number of
/// distinct addresses touched in between.
pub fn reuse_distances_tree(trace: &MemoryTrace) -> Vec<ReuseDistance> {
    reuse_distances_of(trace.addresses(), trace.len())
}

pub(crate) fn reuse_distances_of(
    addresses: impl Iterator<Item = u64>,
    capacity_hint: usize,
) -> Vec<ReuseDistance> {
    let mut marks = Fenwick::with_capacity(capacity_hint);
    let mut last_seen: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(capacity_hint);

    for (now, a) in addresses.enumerate() {
        marks.push();
        let d = match last_seen.insert(a, now) {
            Some(prev) => {
                marks.add(prev, -1);
                ReuseDistance::Finite(marks.range_sum(prev + 1, now) as u64)
            }
            None => ReuseDistance::Infinite,
        };
        marks.add(now, 1);
        out.push(d);
    }
    out
}

/// Normalized histogram of reuse distances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReuseProfile {
    histogram: BTreeMap<ReuseDistance, u64>,
    total: u64,
    line_size: Option<u64>,
}

/// Exact histogram of `distances`.
pub fn build_profile(distances: &[ReuseDistance]) -> Result<ReuseProfile, ReuseError> {
    if distances.is_empty() {
        return Err(ReuseError::EmptyProfile);
    }
    let mut histogram = BTreeMap::new();
    for &d in distances {
        *histogram.entry(d).or_insert(0) += 1;
    }
    Ok(ReuseProfile { histogram, total: distances.len() as u64, line_size: None })
}

/// Profile of `trace` at cache-line granularity, tagged with `line_size`.
pub fn profile_at_line_size(trace: &MemoryTrace, line_size: u64) -> Result<ReuseProfile, ReuseError> {
    if !line_size.is_power_of_two() {
        return Err(ReuseError::BadLineSize(line_size));
    }
    let shift = line_size.trailing_zeros();
    let distances = reuse_distances_of(
        trace.events().iter().filter_map(TraceEvent::address).map(|a| a >> shift),
        trace.len(),
    );
    Ok(build_profile(&distances)?.with_line_size(line_size))
}

impl ReuseProfile {
    /// Builds a profile from `(distance, count)` pairs; zero counts are dropped.
    pub fn from_counts(
        counts: impl IntoIterator<Item = (ReuseDistance, u64)>,
    ) -> Result<Self, ReuseError> {
        let mut histogram = BTreeMap::new();
        for (d, c) in counts {
            if c > 0 {
                *histogram.entry(d).or_insert(0) += c;
            }
        }
        let total: u64 = histogram.values().sum();
        if total == 0 {
            return Err(ReuseError::EmptyProfile);
        }
        Ok(Self { histogram, total, line_size: None })
    }

    /// Records the line size the distances were measured at.
    pub fn with_line_size(mut self, line_size: u64) -> Self {
        self.line_size = Some(line_size);
        self
    }

    pub fn line_size(&self) -> Option<u64> {
        self.line_size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, d: ReuseDistance) -> u64 {
        self.histogram.get(&d).copied().unwrap_or(0)
    }

    pub fn probability(&self, d: ReuseDistance) -> f64 {
        self.count(d) as f64 / self.total as f64
    }

    /// `(distance, count, probability)` in ascending distance, infinite last.
    pub fn iter(&self) -> impl Iterator<Item = (ReuseDistance, u64, f64)> + '_ {
        let total = self.total as f64;
        self.histogram.iter().map(move |(&d, &c)| (d, c, c as f64 / total))
    }

    /// Number of distinct distances present.
    pub fn len(&self) -> usize {
        self.histogram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histogram.is_empty()
    }

    /// Coarsens finite distances to power-of-two buckets: `d >= 1` is
    /// reported at `2^floor(log2 d)`, zero and infinity are kept. Lossy; meant
    /// for very large traces only.
    pub fn binned_pow2(&self) -> ReuseProfile {
        let mut histogram = BTreeMap::new();
        for (&d, &c) in &self.histogram {
            let key = match d {
                ReuseDistance::Finite(0) | ReuseDistance::Infinite => d,
                ReuseDistance::Finite(x) => ReuseDistance::Finite(1 << x.ilog2()),
            };
            *histogram.entry(key).or_insert(0) += c;
        }
        ReuseProfile { histogram, total: self.total, line_size: self.line_size }
    }

    /// Writes `distance,count` rows, ascending, `inf` last. A tagged profile
    /// starts with a `# line_size=<bytes>` comment.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if let Some(l) = self.line_size {
            writeln!(out, "# line_size={l}")?;
        }
        for (d, c) in &self.histogram {
            writeln!(out, "{d},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, ReuseError> {
        let mut line_size = None;
        let mut counts = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let text = line.trim();
            let err = |reason: String| ReuseError::Parse { line: lineno, reason };
            if text.is_empty() || text == "distance,count" {
                continue;
            }
            if let Some(comment) = text.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("line_size=") {
                    line_size = Some(v.trim().parse::<u64>().map_err(|e| err(e.to_string()))?);
                }
                continue;
            }
            let (d, c) = text
                .split_once(',')
                .ok_or_else(|| err(format!("expected distance,count: `{text}`")))?;
            let d = match d.trim() {
                "inf" => ReuseDistance::Infinite,
                other => ReuseDistance::Finite(
                    other.parse().map_err(|_| err(format!("bad distance `{other}`")))?,
                ),
            };
            let c: u64 = c.trim().parse().map_err(|_| err(format!("bad count `{}`", c.trim())))?;
            counts.push((d, c));
        }
        let profile = Self::from_counts(counts)?;
        Ok(match line_size {
            Some(l) => profile.with_line_size(l),
            None => profile,
        })
    }
}
