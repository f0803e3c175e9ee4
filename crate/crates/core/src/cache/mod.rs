//! Cache geometry, the analytical hit-rate model, the LRU simulator and the
//! three-level hierarchy mapping.
//!
//! Private levels (L1, L2) are evaluated on each core's private trace, the
//! shared level (L3) on the interleaved trace. Every level sees the full
//! access stream of its trace at its own line size; there is no filtering of
//! hits from upper levels.

mod sdcm;
mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reuse::{profile_at_line_size, ReuseError, ReuseProfile};
use crate::runtime::MachineConfig;
use crate::trace::MemoryTrace;

pub use sdcm::{cond_hit_assoc, cond_hit_direct, hit_rate};
pub use sim::{simulate_lru, SimStats};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("associativity {assoc} invalid for a cache of {blocks} blocks")]
    BadAssociativity { assoc: u64, blocks: u64 },
    #[error("cache level `{name}`: {reason}")]
    BadGeometry { name: String, reason: String },
    #[error("profile measured at {profile}-byte lines used for a {level}-byte-line cache")]
    GranularityMismatch { profile: u64, level: u64 },
    #[error("expected 3 cache levels (L1, L2 private; L3 shared), found {0}")]
    LevelCount(usize),
    #[error("level {index} must be {expected}")]
    LevelSharing { index: usize, expected: Sharing },
    #[error("no memory accesses to evaluate for {0}")]
    NoAccesses(String),
    #[error("hit rate for {0} missing from report")]
    MissingLevel(String),
    #[error(transparent)]
    Reuse(#[from] ReuseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AssocRepr", into = "AssocRepr")]
pub enum Associativity {
    Ways(u64),
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AssocRepr {
    Ways(u64),
    Word(String),
}

impl TryFrom<AssocRepr> for Associativity {
    type Error = String;

    fn try_from(r: AssocRepr) -> Result<Self, String> {
        match r {
            AssocRepr::Ways(n) => Ok(Associativity::Ways(n)),
            AssocRepr::Word(w) if w == "full" => Ok(Associativity::Full),
            AssocRepr::Word(w) => Err(format!("associativity must be a way count or \"full\", got `{w}`")),
        }
    }
}

impl From<Associativity> for AssocRepr {
    fn from(a: Associativity) -> Self {
        match a {
            Associativity::Ways(n) => AssocRepr::Ways(n),
            Associativity::Full => AssocRepr::Word("full".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sharing {
    Private,
    Shared,
}

impl fmt::Display for Sharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sharing::Private => "private",
            Sharing::Shared => "shared",
        })
    }
}

/// Geometry of one cache level. Sizes are in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheLevelConfig {
    pub name: String,
    pub capacity: u64,
    pub line_size: u64,
    pub associativity: Associativity,
    pub sharing: Sharing,
}

impl CacheLevelConfig {
    pub fn new(
        name: impl Into<String>,
        capacity: u64,
        line_size: u64,
        associativity: Associativity,
        sharing: Sharing,
    ) -> Result<Self, CacheError> {
        let cfg = Self { name: name.into(), capacity, line_size, associativity, sharing };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let bad = |reason: String| {
            Err(CacheError::BadGeometry { name: self.name.clone(), reason })
        };
        if !self.line_size.is_power_of_two() {
            return bad(format!("line size {} is not a power of two", self.line_size));
        }
        if self.capacity == 0 || !self.capacity.is_multiple_of(self.line_size) {
            return bad(format!(
                "capacity {} is not a positive multiple of the line size {}",
                self.capacity, self.line_size
            ));
        }
        let blocks = self.blocks();
        if let Associativity::Ways(a) = self.associativity {
            if a < 1 || a > blocks {
                return Err(CacheError::BadAssociativity { assoc: a, blocks });
            }
            if !blocks.is_multiple_of(a) {
                return bad(format!("{blocks} blocks do not split into {a}-way sets"));
            }
        }
        Ok(())
    }

    /// Capacity in lines (B).
    pub fn blocks(&self) -> u64 {
        self.capacity / self.line_size
    }

    /// Lines per set (A); equals B when fully associative.
    pub fn ways(&self) -> u64 {
        match self.associativity {
            Associativity::Ways(a) => a,
            Associativity::Full => self.blocks(),
        }
    }
}

/// Hit rates of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRates {
    pub name: String,
    pub sharing: Sharing,
    /// Private levels: one entry per core, `None` for a core that issued no
    /// accesses. Empty for the shared level.
    pub per_core: Vec<Option<f64>>,
    /// Mean over active cores (private) or the interleaved-trace rate (shared).
    pub summary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitRateReport {
    pub levels: Vec<LevelRates>,
}

impl HitRateReport {
    /// Report carrying only summary rates for L1, L2 and L3.
    pub fn from_summaries(l1: f64, l2: f64, l3: f64) -> Self {
        let level = |name: &str, sharing, summary| LevelRates {
            name: name.into(),
            sharing,
            per_core: Vec::new(),
            summary,
        };
        Self {
            levels: vec![
                level("L1", Sharing::Private, l1),
                level("L2", Sharing::Private, l2),
                level("L3", Sharing::Shared, l3),
            ],
        }
    }

    /// Summary rates of the first three levels, outermost last.
    pub fn summaries(&self) -> Result<[f64; 3], CacheError> {
        let get = |i: usize| {
            self.levels
                .get(i)
                .map(|l| l.summary)
                .ok_or_else(|| CacheError::MissingLevel(format!("L{}", i + 1)))
        };
        Ok([get(0)?, get(1)?, get(2)?])
    }

    /// Rows of `level,core,hit_rate`; private levels list every core and a
    /// `mean` row, the shared level a single `shared` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,core,hit_rate")?;
        for lvl in &self.levels {
            match lvl.sharing {
                Sharing::Private => {
                    for (core, rate) in lvl.per_core.iter().enumerate() {
                        match rate {
                            Some(r) => writeln!(out, "{},{core},{r:.12}", lvl.name)?,
                            None => writeln!(out, "{},{core},idle", lvl.name)?,
                        }
                    }
                    writeln!(out, "{},mean,{:.12}", lvl.name, lvl.summary)?;
                }
                Sharing::Shared => writeln!(out, "{},shared,{:.12}", lvl.name, lvl.summary)?,
            }
        }
        Ok(())
    }
}

/// Reuse profiles backing one hierarchy evaluation.
#[derive(Debug, Clone)]
pub struct HierarchyProfiles {
    /// `private[core][level]` for each private level, `None` for idle cores.
    pub private: Vec<Vec<Option<ReuseProfile>>>,
    pub shared: ReuseProfile,
}

fn check_hierarchy(machine: &MachineConfig) -> Result<(), CacheError> {
    let levels = &machine.levels;
    if levels.len() != 3 {
        return Err(CacheError::LevelCount(levels.len()));
    }
    for (index, lvl) in levels.iter().enumerate() {
        let expected = if index < 2 { Sharing::Private } else { Sharing::Shared };
        if lvl.sharing != expected {
            return Err(CacheError::LevelSharing { index, expected });
        }
    }
    Ok(())
}

/// Computes the line-granularity profiles for every private level of every
/// core and for the shared level. Cores and line sizes run in parallel.
pub fn hierarchy_profiles(
    privates: &[MemoryTrace],
    shared: &MemoryTrace,
    machine: &MachineConfig,
) -> Result<HierarchyProfiles, CacheError> {
    check_hierarchy(machine)?;
    let private_levels = &machine.levels[..2];

    let private = privates
        .par_iter()
        .map(|trace| {
            if trace.access_count() == 0 {
                return Ok(vec![None; private_levels.len()]);
            }
            // Levels sharing a line size share one profile.
            let mut by_line: BTreeMap<u64, ReuseProfile> = BTreeMap::new();
            private_levels
                .iter()
                .map(|lvl| {
                    if let Some(p) = by_line.get(&lvl.line_size) {
                        return Ok(Some(p.clone()));
                    }
                    let p = profile_at_line_size(trace, lvl.line_size)?;
                    by_line.insert(lvl.line_size, p.clone());
                    Ok(Some(p))
                })
                .collect::<Result<Vec<_>, CacheError>>()
        })
        .collect::<Result<Vec<_>, CacheError>>()?;

    if shared.access_count() == 0 {
        return Err(CacheError::NoAccesses("the shared trace".into()));
    }
    let shared = profile_at_line_size(shared, machine.levels[2].line_size)?;
    Ok(HierarchyProfiles { private, shared })
}

/// Applies the analytical model to precomputed profiles.
pub fn rates_from_profiles(
    profiles: &HierarchyProfiles,
    machine: &MachineConfig,
) -> Result<HitRateReport, CacheError> {
    check_hierarchy(machine)?;
    let mut levels = Vec::with_capacity(3);
    for (li, lvl) in machine.levels[..2].iter().enumerate() {
        let per_core = profiles
            .private
            .iter()
            .map(|core| core[li].as_ref().map(|p| hit_rate(p, lvl)).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        let active: Vec<f64> = per_core.iter().flatten().copied().collect();
        if active.is_empty() {
            return Err(CacheError::NoAccesses(format!("{} on every core", lvl.name)));
        }
        let summary = active.iter().sum::<f64>() / active.len() as f64;
        levels.push(LevelRates { name: lvl.name.clone(), sharing: lvl.sharing, per_core, summary });
    }
    let l3 = &machine.levels[2];
    levels.push(LevelRates {
        name: l3.name.clone(),
        sharing: l3.sharing,
        per_core: Vec::new(),
        summary: hit_rate(&profiles.shared, l3)?,
    });
    Ok(HitRateReport { levels })
}

/// Private-level rates from each core's trace, shared-level rate from the
/// interleaved trace.
pub fn predict_hierarchy(
    privates: &[MemoryTrace],
    shared: &MemoryTrace,
    machine: &MachineConfig,
) -> Result<HitRateReport, CacheError> {
    let profiles = hierarchy_profiles(privates, shared, machine)?;
    rates_from_profiles(&profiles, machine)
}
