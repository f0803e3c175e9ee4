use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{
    BasicBlockId, BlockRef, MemoryTrace, Nesting, NestingChecker, TraceError, TraceEvent,
    FIELD_SEPARATOR,
};

const START: &str = "BB_START";
const END: &str = "BB_END";

/// Parses a sequential (strictly nested) trace.
pub fn parse_trace<R: BufRead>(input: R) -> Result<MemoryTrace, TraceError> {
    parse(input, Nesting::Strict)
}

/// Parses an interleaved trace whose block markers may overlap.
pub fn parse_merged_trace<R: BufRead>(input: R) -> Result<MemoryTrace, TraceError> {
    parse(input, Nesting::Merged)
}

pub fn read_trace_file(path: &Path, nesting: Nesting) -> Result<MemoryTrace, TraceError> {
    parse(BufReader::new(File::open(path)?), nesting)
}

pub fn write_trace<W: Write>(trace: &MemoryTrace, mut out: W) -> std::io::Result<()> {
    for ev in trace.events() {
        match ev {
            TraceEvent::BlockStart(bb) => writeln!(out, "{START}{FIELD_SEPARATOR}{bb}")?,
            TraceEvent::Access(a) => writeln!(out, "0x{a:x}")?,
            TraceEvent::BlockEnd(bb) => writeln!(out, "{END}{FIELD_SEPARATOR}{bb}")?,
        }
    }
    Ok(())
}

pub fn write_trace_file(trace: &MemoryTrace, path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_trace(trace, &mut out)?;
    out.flush()
}

fn parse<R: BufRead>(input: R, nesting: Nesting) -> Result<MemoryTrace, TraceError> {
    let mut interner: HashMap<String, BlockRef> = HashMap::new();
    let mut checker = NestingChecker::new(nesting);
    let mut events = Vec::new();
    let mut last_line = 0;

    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        last_line = lineno;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let ev = parse_line(text, lineno, &mut interner)?;
        checker
            .step(&ev)
            .map_err(|reason| TraceError::Unbalanced { line: lineno, reason })?;
        events.push(ev);
    }
    if events.is_empty() {
        return Err(TraceError::Empty);
    }
    checker
        .finish()
        .map_err(|reason| TraceError::Unbalanced { line: last_line, reason })?;
    Ok(MemoryTrace { events })
}

fn parse_line(
    text: &str,
    lineno: usize,
    interner: &mut HashMap<String, BlockRef>,
) -> Result<TraceEvent, TraceError> {
    let malformed = |reason| TraceError::Malformed {
        line: lineno,
        content: text.to_string(),
        reason,
    };

    let marker = if let Some(rest) = strip_marker(text, START) {
        Some((true, rest))
    } else {
        strip_marker(text, END).map(|rest| (false, rest))
    };

    if let Some((is_start, rest)) = marker {
        let bb = match interner.get(rest) {
            Some(bb) => bb.clone(),
            None => {
                let (function, label) = rest
                    .split_once(FIELD_SEPARATOR)
                    .ok_or_else(|| malformed("expected <function>:<label>"))?;
                let id = BasicBlockId::new(function, label)
                    .map_err(|_| malformed("empty or invalid function/label"))?;
                let bb = Arc::new(id);
                interner.insert(rest.to_string(), bb.clone());
                bb
            }
        };
        return Ok(if is_start {
            TraceEvent::BlockStart(bb)
        } else {
            TraceEvent::BlockEnd(bb)
        });
    }

    if text.starts_with("BB_") {
        return Err(malformed("unknown marker"));
    }
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    if digits.is_empty() || digits.starts_with(['+', '-']) {
        return Err(TraceError::BadAddress { line: lineno, content: text.to_string() });
    }
    u64::from_str_radix(digits, 16)
        .map(TraceEvent::Access)
        .map_err(|_| TraceError::BadAddress { line: lineno, content: text.to_string() })
}

fn strip_marker<'a>(text: &'a str, keyword: &str) -> Option<&'a str> {
    text.strip_prefix(keyword)?.strip_prefix(FIELD_SEPARATOR)
}
