//! Line-oriented trace format.
//!
//! One op per line, `#` starts a comment. Registers are `r0`..`r31`,
//! numbers are decimal or `0x` hex. An expectation (`!ok` or
//! `!fault=<Kind>`) may follow an op on the same line, or sit alone on a
//! line and attach to the op before it.
//!
//! ```text
//! malloc r0 64
//! write r0 0 8
//! spill r0 3          # slot 3 of the spill region
//! free r0
//! reload r1 3
//! read r1 0 8 !fault=ProvenanceRetracted
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::machine::{FaultKind, NUM_REGISTERS};

/// Capability slots in the spill region.
pub const SPILL_SLOTS: u32 = 1 << 16;
/// Largest region a `stack` op may request.
pub const STACK_BYTES: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceOp {
    Malloc { reg: u8, size: u64 },
    Free { reg: u8 },
    Read { reg: u8, offset: u64, width: u64 },
    Write { reg: u8, offset: u64, width: u64 },
    Copy { dst: u8, src: u8 },
    Spill { reg: u8, slot: u32 },
    Reload { reg: u8, slot: u32 },
    /// Narrow `src` to `[src.base + offset, + len)` into `dst`.
    Derive { dst: u8, src: u8, offset: u64, len: u64 },
    /// Uncolored capability to a non-heap stack region of `size` bytes.
    Stack { reg: u8, size: u64 },
    /// Store the capability in `src` at `auth.address + offset`.
    StoreCap { auth: u8, offset: u64, src: u8 },
    LoadCap { dst: u8, auth: u8, offset: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expectation {
    Ok,
    Fault(FaultKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLine {
    pub op: TraceOp,
    pub expect: Option<Expectation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub lines: Vec<TraceLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, op: TraceOp) {
        self.lines.push(TraceLine { op, expect: None });
    }

    pub fn push_expect(&mut self, op: TraceOp, expect: Expectation) {
        self.lines.push(TraceLine { op, expect: Some(expect) });
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn ops(&self) -> impl Iterator<Item = TraceOp> + '_ {
        self.lines.iter().map(|l| l.op)
    }
}

impl FromIterator<TraceOp> for Trace {
    fn from_iter<I: IntoIterator<Item = TraceOp>>(iter: I) -> Self {
        Trace {
            lines: iter.into_iter().map(|op| TraceLine { op, expect: None }).collect(),
        }
    }
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TraceOp::Malloc { reg, size } => write!(f, "malloc r{reg} {size}"),
            TraceOp::Free { reg } => write!(f, "free r{reg}"),
            TraceOp::Read { reg, offset, width } => write!(f, "read r{reg} {offset} {width}"),
            TraceOp::Write { reg, offset, width } => write!(f, "write r{reg} {offset} {width}"),
            TraceOp::Copy { dst, src } => write!(f, "copy r{dst} r{src}"),
            TraceOp::Spill { reg, slot } => write!(f, "spill r{reg} {slot}"),
            TraceOp::Reload { reg, slot } => write!(f, "reload r{reg} {slot}"),
            TraceOp::Derive { dst, src, offset, len } => {
                write!(f, "derive r{dst} r{src} {offset} {len}")
            }
            TraceOp::Stack { reg, size } => write!(f, "stack r{reg} {size}"),
            TraceOp::StoreCap { auth, offset, src } => write!(f, "storecap r{auth} {offset} r{src}"),
            TraceOp::LoadCap { dst, auth, offset } => write!(f, "loadcap r{dst} r{auth} {offset}"),
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expectation::Ok => f.write_str("!ok"),
            Expectation::Fault(k) => write!(f, "!fault={k}"),
        }
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            match l.expect {
                Some(e) => writeln!(f, "{} {e}", l.op)?,
                None => writeln!(f, "{}", l.op)?,
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    line: usize,
    tokens: Vec<(usize, &'a str)>,
    next: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, column: usize, reason: impl Into<String>) -> ParseError {
        ParseError { line: self.line, column, reason: reason.into() }
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |(c, t)| c + t.len())
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let t = self
            .tokens
            .get(self.next)
            .copied()
            .ok_or_else(|| self.err(self.end_column(), format!("missing {what}")))?;
        self.next += 1;
        Ok(t)
    }

    fn reg(&mut self) -> Result<u8, ParseError> {
        let (col, t) = self.token("register")?;
        let n: usize = t
            .strip_prefix('r')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| self.err(col, format!("expected register, found `{t}`")))?;
        if n >= NUM_REGISTERS {
            return Err(self.err(col, format!("register r{n} out of range (r0..r{})", NUM_REGISTERS - 1)));
        }
        Ok(n as u8)
    }

    fn num(&mut self, what: &str) -> Result<u64, ParseError> {
        let (col, t) = self.token(what)?;
        let parsed = match t.strip_prefix("0x") {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => t.parse(),
        };
        parsed.map_err(|_| self.err(col, format!("expected {what}, found `{t}`")))
    }

    fn slot(&mut self) -> Result<u32, ParseError> {
        let col = self.tokens.get(self.next).map_or(self.end_column(), |t| t.0);
        let n = self.num("slot")?;
        if n >= SPILL_SLOTS as u64 {
            return Err(self.err(col, format!("slot {n} out of range (0..{SPILL_SLOTS})")));
        }
        Ok(n as u32)
    }
}

fn parse_expectation(cur: &Cursor, col: usize, t: &str) -> Result<Expectation, ParseError> {
    if t == "!ok" {
        return Ok(Expectation::Ok);
    }
    let kind = t
        .strip_prefix("!fault=")
        .ok_or_else(|| cur.err(col, format!("bad expectation `{t}`")))?;
    FaultKind::from_str(kind)
        .map(Expectation::Fault)
        .map_err(|e| cur.err(col + "!fault=".len(), e))
}

fn parse_op(cur: &mut Cursor) -> Result<TraceOp, ParseError> {
    let (col, name) = cur.token("op")?;
    Ok(match name {
        "malloc" => {
            let reg = cur.reg()?;
            let size_col = cur.tokens.get(cur.next).map_or(cur.end_column(), |t| t.0);
            let size = cur.num("size")?;
            if size == 0 {
                return Err(cur.err(size_col, "allocation size must be positive"));
            }
            TraceOp::Malloc { reg, size }
        }
        "free" => TraceOp::Free { reg: cur.reg()? },
        "read" => TraceOp::Read { reg: cur.reg()?, offset: cur.num("offset")?, width: cur.num("width")? },
        "write" => TraceOp::Write { reg: cur.reg()?, offset: cur.num("offset")?, width: cur.num("width")? },
        "copy" => TraceOp::Copy { dst: cur.reg()?, src: cur.reg()? },
        "spill" => TraceOp::Spill { reg: cur.reg()?, slot: cur.slot()? },
        "reload" => TraceOp::Reload { reg: cur.reg()?, slot: cur.slot()? },
        "derive" => TraceOp::Derive {
            dst: cur.reg()?,
            src: cur.reg()?,
            offset: cur.num("offset")?,
            len: cur.num("length")?,
        },
        "stack" => {
            let reg = cur.reg()?;
            let size_col = cur.tokens.get(cur.next).map_or(cur.end_column(), |t| t.0);
            let size = cur.num("size")?;
            if size == 0 || size > STACK_BYTES {
                return Err(cur.err(size_col, format!("stack size must be in 1..={STACK_BYTES}")));
            }
            TraceOp::Stack { reg, size }
        }
        "storecap" => TraceOp::StoreCap { auth: cur.reg()?, offset: cur.num("offset")?, src: cur.reg()? },
        "loadcap" => TraceOp::LoadCap { dst: cur.reg()?, auth: cur.reg()?, offset: cur.num("offset")? },
        _ => return Err(cur.err(col, format!("unknown op `{name}`"))),
    })
}

/// Parses trace text. Errors carry 1-based line and column.
pub fn parse_trace(text: &str) -> Result<Trace, ParseError> {
    let mut trace = Trace::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut rest = body;
        let mut offset = 0;
        while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
            let tail = &rest[start..];
            let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
            tokens.push((offset + start + 1, &tail[..len]));
            offset += start + len;
            rest = &tail[len..];
        }
        if tokens.is_empty() {
            continue;
        }
        let mut cur = Cursor { line: i + 1, tokens, next: 0 };
        let expect = match cur.tokens.last() {
            Some(&(col, t)) if t.starts_with('!') => {
                let e = parse_expectation(&cur, col, t)?;
                cur.tokens.pop();
                Some(e)
            }
            _ => None,
        };
        if cur.tokens.is_empty() {
            let prev = trace
                .lines
                .last_mut()
                .ok_or_else(|| cur.err(1, "expectation before any op"))?;
            prev.expect = expect;
            continue;
        }
        let op = parse_op(&mut cur)?;
        if let Some(&(col, t)) = cur.tokens.get(cur.next) {
            return Err(cur.err(col, format!("unexpected `{t}`")));
        }
        trace.lines.push(TraceLine { op, expect });
    }
    Ok(trace)
}

impl FromStr for Trace {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_trace(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ops() {
        let t = parse_trace("malloc r0 64\nfree r0").unwrap();
        assert_eq!(
            t.ops().collect::<Vec<_>>(),
            vec![TraceOp::Malloc { reg: 0, size: 64 }, TraceOp::Free { reg: 0 }]
        );
    }

    #[test]
    fn inline_expectation() {
        let t = parse_trace("read r0 0 8 !fault=ProvenanceRetracted").unwrap();
        assert_eq!(t.lines[0].op, TraceOp::Read { reg: 0, offset: 0, width: 8 });
        assert_eq!(t.lines[0].expect, Some(Expectation::Fault(FaultKind::ProvenanceRetracted)));
    }

    #[test]
    fn standalone_expectation_attaches_to_previous_op() {
        let t = parse_trace("malloc r1 0x20\n  # comment\n!ok\n").unwrap();
        assert_eq!(t.lines.len(), 1);
        assert_eq!(t.lines[0].op, TraceOp::Malloc { reg: 1, size: 32 });
        assert_eq!(t.lines[0].expect, Some(Expectation::Ok));
    }

    #[test]
    fn register_out_of_range() {
        let e = parse_trace("malloc r99 8").unwrap_err();
        assert_eq!((e.line, e.column), (1, 8));
        assert!(e.reason.contains("r99"), "{e}");
    }

    #[test]
    fn error_locations() {
        let e = parse_trace("free r0\nfrob r1").unwrap_err();
        assert_eq!((e.line, e.column), (2, 1));
        let e = parse_trace("read r0 0").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.reason.contains("width"));
        let e = parse_trace("free r0 r1").unwrap_err();
        assert_eq!(e.column, 9);
        let e = parse_trace("read r0 0 8 !fault=Nope").unwrap_err();
        assert_eq!(e.column, 20);
        assert!(parse_trace("!ok").is_err());
        assert!(parse_trace("malloc r0 0").is_err());
        assert!(parse_trace("spill r0 65536").is_err());
    }

    #[test]
    fn display_round_trips() {
        let text = "malloc r0 64\nwrite r0 0 8 !ok\ncopy r1 r0\nspill r1 7\nreload r2 7\n\
                    derive r3 r0 16 16\nstack r4 128\nstorecap r0 16 r4\nloadcap r5 r0 16\n\
                    free r0\nread r2 0 8 !fault=ProvenanceRetracted\n";
        let t = parse_trace(text).unwrap();
        assert_eq!(t.to_string(), text);
        assert_eq!(parse_trace(&t.to_string()).unwrap(), t);
    }
}
