//! Synthetic trace generation.
//!
//! A workload is a block plan plus an address pattern, written as TOML:
//!
//! ```toml
//! [pattern]
//! kind = "strided"        # "sequential" | "strided" | "random" | "scattered"
//! base = 0x10000
//! stride = 64
//! footprint = 8192        # strided: wrap after this many bytes (optional)
//!
//! [shared]                # optional shared-variable region
//! label = "shared_var_trace0"
//! base = 0x900000
//! words = 4
//!
//! [[blocks]]
//! function = "OUT__1__"
//! label = "entry"
//! repeat = 1
//! accesses = 4
//!
//! [[blocks]]
//! function = "OUT__1__"
//! label = "for.body"
//! repeat = 100
//! accesses = 8
//! shared_accesses = 1     # companion shared block after every instance
//! ```
//!
//! Blocks are emitted in plan order, each repeated `repeat` times. When
//! `shared_accesses > 0`, every instance is followed by a block labelled
//! `shared.label` in the same function that touches the shared words in
//! rotation. Private addresses come from one cursor that runs across the
//! whole plan.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BasicBlockId, BlockRef, MemoryTrace, TraceError, TraceEvent, DEFAULT_SHARED_PREFIX};
use crate::rng::DetRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub pattern: AddressPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared: Option<SharedPlan>,
    pub blocks: Vec<BlockPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPlan {
    pub function: String,
    pub label: String,
    pub repeat: u64,
    pub accesses: u64,
    #[serde(default)]
    pub shared_accesses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AddressPattern {
    /// `base, base+step, base+2*step, ...` without reuse.
    Sequential {
        #[serde(default)]
        base: u64,
        #[serde(default = "default_word")]
        step: u64,
    },
    /// `base + (i*stride mod footprint)`; no wrap when `footprint` is absent.
    Strided {
        #[serde(default)]
        base: u64,
        stride: u64,
        #[serde(default)]
        footprint: Option<u64>,
    },
    /// Uniform `align`-aligned addresses in `[base, base+footprint)`.
    Random {
        #[serde(default)]
        base: u64,
        footprint: u64,
        #[serde(default = "default_word")]
        align: u64,
    },
    /// A working set of `lines` lines of `line_size` bytes placed at random
    /// in `[base, base+span)`; each access picks a line and an
    /// `align`-aligned word in it uniformly.
    Scattered {
        #[serde(default)]
        base: u64,
        span: u64,
        lines: u64,
        #[serde(default = "default_line")]
        line_size: u64,
        #[serde(default = "default_word")]
        align: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedPlan {
    #[serde(default = "default_shared_label")]
    pub label: String,
    pub base: u64,
    pub words: u64,
    #[serde(default = "default_word")]
    pub word_size: u64,
}

fn default_word() -> u64 {
    8
}

fn default_line() -> u64 {
    64
}

fn default_shared_label() -> String {
    format!("{DEFAULT_SHARED_PREFIX}0")
}

impl WorkloadSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, TraceError> {
        toml::from_str(text).map_err(|e| TraceError::Workload(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("workload spec serializes")
    }

    /// A random plan: one to five blocks, about a third of them repeated
    /// only 1 to 3 times, an optional shared region and any of the three
    /// address patterns. Pure in `seed`.
    pub fn random(seed: u64, max_repeat: u64) -> Self {
        let mut rng = DetRng::new(seed ^ 0x5eed_b10c);
        let mut range = |lo: u64, hi: u64| lo + rng.below(hi - lo + 1);
        let base = range(0, 1 << 20) * 8;
        let pattern = match range(0, 2) {
            0 => AddressPattern::Sequential { base, step: [4, 8, 64][range(0, 2) as usize] },
            1 => AddressPattern::Strided {
                base,
                stride: range(1, 32) * 8,
                footprint: Some(range(8, 2048) * 8),
            },
            _ => AddressPattern::Random { base, footprint: range(4, 1024) * 8, align: 8 },
        };
        let shared = (range(0, 1) == 1).then(|| SharedPlan {
            label: default_shared_label(),
            base: (1 << 40) + range(0, 1 << 16) * 64,
            words: range(1, 8),
            word_size: 8,
        });
        let max_repeat = max_repeat.max(1);
        let blocks = (0..range(1, 5))
            .map(|i| BlockPlan {
                function: "OUT__1__".into(),
                label: format!("bb{i}"),
                repeat: if range(0, 2) == 0 { range(1, 3.min(max_repeat)) } else { range(1, max_repeat) },
                accesses: range(1, 8),
                shared_accesses: if shared.is_some() { range(0, 2) } else { 0 },
            })
            .collect();
        Self { pattern, shared, blocks }
    }

    fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Workload(m));
        if self.blocks.is_empty() {
            return bad("empty block plan".into());
        }
        for b in &self.blocks {
            if b.repeat == 0 {
                return bad(format!("block {}:{} has repeat 0", b.function, b.label));
            }
            if b.shared_accesses > 0 && self.shared.is_none() {
                return bad(format!(
                    "block {}:{} has shared_accesses but no [shared] region",
                    b.function, b.label
                ));
            }
        }
        match self.pattern {
            AddressPattern::Sequential { step: 0, .. } => bad("step must be > 0".into()),
            AddressPattern::Strided { footprint: Some(0), .. } => bad("footprint must be > 0".into()),
            AddressPattern::Random { footprint, align, .. } if align == 0 || footprint < align => {
                bad("random pattern needs align > 0 and footprint >= align".into())
            }
            AddressPattern::Scattered { span, lines, line_size, align, .. }
                if lines == 0 || align == 0 || line_size < align || span < line_size =>
            {
                bad("scattered pattern needs lines > 0, align <= line_size <= span".into())
            }
            _ => Ok(()),
        }?;
        if let Some(s) = &self.shared {
            if s.words == 0 || s.word_size == 0 {
                return bad("shared region needs words > 0 and word_size > 0".into());
            }
        }
        Ok(())
    }
}

struct AddressStream<'a> {
    pattern: &'a AddressPattern,
    index: u64,
    rng: DetRng,
    /// Line offsets of the scattered working set.
    pool: Vec<u64>,
}

impl<'a> AddressStream<'a> {
    fn new(pattern: &'a AddressPattern, seed: u64) -> Self {
        let mut rng = DetRng::new(seed);
        let pool = match *pattern {
            AddressPattern::Scattered { span, lines, line_size, .. } => {
                (0..lines).map(|_| rng.below(span / line_size) * line_size).collect()
            }
            _ => Vec::new(),
        };
        Self { pattern, index: 0, rng, pool }
    }
}

impl AddressStream<'_> {
    fn next(&mut self) -> Result<u64, TraceError> {
        let i = self.index;
        self.index += 1;
        let addr = match *self.pattern {
            AddressPattern::Sequential { base, step } => {
                i.checked_mul(step).and_then(|o| base.checked_add(o))
            }
            AddressPattern::Strided { base, stride, footprint } => {
                let off = match footprint {
                    Some(f) => ((u128::from(i) * u128::from(stride)) % u128::from(f)) as u64,
                    None => match i.checked_mul(stride) {
                        Some(o) => o,
                        None => return Err(overflow()),
                    },
                };
                base.checked_add(off)
            }
            AddressPattern::Random { base, footprint, align } => {
                let slot = self.rng.below(footprint / align);
                base.checked_add(slot * align)
            }
            AddressPattern::Scattered { base, line_size, align, .. } => {
                let line = self.pool[self.rng.below(self.pool.len() as u64) as usize];
                let word = self.rng.below(line_size / align) * align;
                base.checked_add(line + word)
            }
        };
        addr.ok_or_else(overflow)
    }
}

fn overflow() -> TraceError {
    TraceError::Workload("address pattern overflows 64-bit address space".into())
}

/// Expands a workload into a trace. Pure in `(spec, seed)`.
pub fn generate_synthetic_trace(spec: &WorkloadSpec, seed: u64) -> Result<MemoryTrace, TraceError> {
    spec.validate()?;
    let mut stream = AddressStream::new(&spec.pattern, seed);
    let mut shared_cursor = 0u64;
    let mut events = Vec::new();

    for plan in &spec.blocks {
        let bb: BlockRef = Arc::new(BasicBlockId::new(plan.function.as_str(), plan.label.as_str())?);
        let companion = match (&spec.shared, plan.shared_accesses) {
            (Some(s), n) if n > 0 => {
                let id = BasicBlockId::new(plan.function.as_str(), s.label.as_str())?;
                Some((Arc::new(id), s))
            }
            _ => None,
        };
        for _ in 0..plan.repeat {
            events.push(TraceEvent::BlockStart(bb.clone()));
            for _ in 0..plan.accesses {
                events.push(TraceEvent::Access(stream.next()?));
            }
            events.push(TraceEvent::BlockEnd(bb.clone()));

            if let Some((sbb, region)) = &companion {
                events.push(TraceEvent::BlockStart(sbb.clone()));
                for _ in 0..plan.shared_accesses {
                    let word = shared_cursor % region.words;
                    shared_cursor += 1;
                    let addr = word
                        .checked_mul(region.word_size)
                        .and_then(|o| region.base.checked_add(o))
                        .ok_or_else(overflow)?;
                    events.push(TraceEvent::Access(addr));
                }
                events.push(TraceEvent::BlockEnd(sbb.clone()));
            }
        }
    }
    Ok(MemoryTrace::from_trusted(events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{block_stats, shared_refs};

    fn one_block(pattern: AddressPattern, repeat: u64, accesses: u64) -> WorkloadSpec {
        WorkloadSpec {
            pattern,
            shared: None,
            blocks: vec![BlockPlan {
                function: "f".into(),
                label: "bb".into(),
                repeat,
                accesses,
                shared_accesses: 0,
            }],
        }
    }

    #[test]
    fn scattered_stays_in_its_working_set() {
        let pattern = AddressPattern::Scattered { base: 1 << 30, span: 1 << 30, lines: 32, line_size: 64, align: 8 };
        let t = generate_synthetic_trace(&one_block(pattern, 100, 10), 5).unwrap();
        let lines: std::collections::HashSet<u64> = t.addresses().map(|a| a / 64).collect();
        assert!(lines.len() <= 32 && lines.len() > 16);
        assert!(t.addresses().all(|a| a % 8 == 0 && (1 << 30..2 << 30).contains(&a)));
        let bad = AddressPattern::Scattered { base: 0, span: 32, lines: 4, line_size: 64, align: 8 };
        assert!(generate_synthetic_trace(&one_block(bad, 1, 1), 0).is_err());
    }

    #[test]
    fn random_plans_are_valid_and_reproducible() {
        for seed in 0..200 {
            let spec = WorkloadSpec::random(seed, 50);
            assert_eq!(spec, WorkloadSpec::random(seed, 50));
            let t = generate_synthetic_trace(&spec, seed).unwrap();
            assert!(t.access_count() > 0);
            MemoryTrace::new(t.events().to_vec()).unwrap();
        }
    }

    #[test]
    fn sequential_stride_eight() {
        let spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 1, 3);
        let t = generate_synthetic_trace(&spec, 0).unwrap();
        assert_eq!(t.len(), 5);
        assert!(matches!(t.events()[0], TraceEvent::BlockStart(_)));
        assert_eq!(t.addresses().collect::<Vec<_>>(), vec![0x0, 0x8, 0x10]);
        assert!(matches!(t.events()[4], TraceEvent::BlockEnd(_)));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = one_block(AddressPattern::Random { base: 0, footprint: 1 << 16, align: 8 }, 10, 10);
        assert_eq!(
            generate_synthetic_trace(&spec, 9).unwrap(),
            generate_synthetic_trace(&spec, 9).unwrap()
        );
    }

    #[test]
    fn random_seeds_change_addresses_not_structure() {
        let spec = one_block(AddressPattern::Random { base: 0, footprint: 1 << 20, align: 8 }, 5, 20);
        let a = generate_synthetic_trace(&spec, 1).unwrap();
        let b = generate_synthetic_trace(&spec, 2).unwrap();
        assert_ne!(a.addresses().collect::<Vec<_>>(), b.addresses().collect::<Vec<_>>());
        let shape = |t: &MemoryTrace| {
            t.events().iter().map(|e| e.address().is_some()).collect::<Vec<_>>()
        };
        assert_eq!(shape(&a), shape(&b));
        assert_eq!(block_stats(&a), block_stats(&b));
    }

    #[test]
    fn strided_wraps_within_footprint() {
        let spec = one_block(
            AddressPattern::Strided { base: 0x100, stride: 64, footprint: Some(256) },
            1,
            6,
        );
        let t = generate_synthetic_trace(&spec, 0).unwrap();
        assert_eq!(
            t.addresses().collect::<Vec<_>>(),
            vec![0x100, 0x140, 0x180, 0x1c0, 0x100, 0x140]
        );
    }

    #[test]
    fn shared_companion_blocks() {
        let mut spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 3, 2);
        spec.blocks[0].shared_accesses = 1;
        spec.shared = Some(SharedPlan {
            label: "shared_var_trace0".into(),
            base: 0x1000,
            words: 2,
            word_size: 8,
        });
        let t = generate_synthetic_trace(&spec, 0).unwrap();
        let stats = block_stats(&t);
        assert_eq!(stats.total(), 6);
        assert_eq!(shared_refs(&t, DEFAULT_SHARED_PREFIX).sorted(), vec![0x1000, 0x1008]);
    }

    #[test]
    fn rejects_bad_plans() {
        let mut spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 1, 1);
        spec.blocks.clear();
        assert!(generate_synthetic_trace(&spec, 0).is_err());
        let spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 0, 1);
        assert!(generate_synthetic_trace(&spec, 0).is_err());
        let mut spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 1, 1);
        spec.blocks[0].shared_accesses = 2;
        assert!(generate_synthetic_trace(&spec, 0).is_err());
        let spec = one_block(AddressPattern::Sequential { base: u64::MAX - 8, step: 8 }, 1, 3);
        assert!(generate_synthetic_trace(&spec, 0).is_err());
    }

    #[test]
    fn zero_accesses_per_instance_is_allowed() {
        let spec = one_block(AddressPattern::Sequential { base: 0, step: 8 }, 2, 0);
        let t = generate_synthetic_trace(&spec, 0).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.access_count(), 0);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            [pattern]
            kind = "random"
            base = 4096
            footprint = 65536

            [shared]
            base = 0x900000
            words = 4

            [[blocks]]
            function = "OUT__1__"
            label = "for.body"
            repeat = 4
            accesses = 2
            shared_accesses = 1
        "#;
        let spec = WorkloadSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.pattern, AddressPattern::Random { base: 4096, footprint: 65536, align: 8 });
        assert_eq!(spec.shared.as_ref().unwrap().label, "shared_var_trace0");
        let again = WorkloadSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(spec, again);
        assert!(WorkloadSpec::from_toml_str("[pattern]\nkind = \"zigzag\"\n").is_err());
    }
}
