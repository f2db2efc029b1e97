//! Seeded workload generators.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64`, so a (generator, parameters, seed) triple names
//! the same trace on every platform.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{Oracle, Region};
use super::trace::{Trace, TraceOp};

/// Steady-state alloc/free churn over a live set kept in spill slots.
///
/// Setup allocates `live` blocks and spills each to its own slot. Every
/// pair then reloads a random slot, frees it, allocates a replacement,
/// writes to it and spills it back, so the live set stays constant and
/// every live capability sits in memory where sweeps must visit it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChurnConfig {
    pub pairs: u64,
    pub live: u32,
    pub sizes: Vec<u64>,
    pub seed: u64,
    /// Ring of spill slots that keep a dangling copy of each freed block.
    pub stale: u32,
    /// Also read back each new block.
    pub reads: bool,
    /// Probability per pair of an injected use-after-free or double free.
    pub inject_rate: f64,
}

impl Default for ChurnConfig {
    fn default() -> Self {
        ChurnConfig {
            pairs: 1000,
            live: 10,
            sizes: vec![64],
            seed: 0,
            stale: 0,
            reads: false,
            inject_rate: 0.0,
        }
    }
}

impl ChurnConfig {
    pub fn new(pairs: u64, live: u32, seed: u64) -> Self {
        ChurnConfig { pairs, live, seed, ..Default::default() }
    }

    pub fn ops(&self) -> Churn {
        Churn {
            cfg: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            setup: 0,
            pair: 0,
            buf: VecDeque::new(),
        }
    }

    pub fn trace(&self) -> Trace {
        self.ops().collect()
    }

    /// Total ops, for progress reporting.
    pub fn len_hint(&self) -> u64 {
        let per_pair = 5 + u64::from(self.stale > 0) + u64::from(self.reads);
        self.live as u64 * 3 + self.pairs * per_pair
    }
}

pub struct Churn {
    cfg: ChurnConfig,
    rng: ChaCha8Rng,
    setup: u32,
    pair: u64,
    buf: VecDeque<TraceOp>,
}

impl Churn {
    fn size(&mut self) -> u64 {
        *self.cfg.sizes.choose(&mut self.rng).expect("at least one size")
    }

    fn refill(&mut self) -> bool {
        let width = |size: u64| size.min(8);
        if self.setup < self.cfg.live {
            let size = self.size();
            let slot = self.setup;
            self.buf.extend([
                TraceOp::Malloc { reg: 1, size },
                TraceOp::Write { reg: 1, offset: 0, width: width(size) },
                TraceOp::Spill { reg: 1, slot },
            ]);
            self.setup += 1;
            return true;
        }
        if self.pair >= self.cfg.pairs || self.cfg.live == 0 {
            return false;
        }
        let k = self.pair;
        self.pair += 1;
        let slot = self.rng.gen_range(0..self.cfg.live);
        self.buf.push_back(TraceOp::Reload { reg: 1, slot });
        if self.cfg.stale > 0 {
            let ring = self.cfg.live + (k % self.cfg.stale as u64) as u32;
            self.buf.push_back(TraceOp::Spill { reg: 1, slot: ring });
        }
        self.buf.push_back(TraceOp::Free { reg: 1 });
        if self.cfg.inject_rate > 0.0 && self.rng.gen_bool(self.cfg.inject_rate) {
            match self.rng.gen_range(0..3) {
                0 => self.buf.push_back(TraceOp::Read { reg: 1, offset: 0, width: 1 }),
                1 => self.buf.push_back(TraceOp::Free { reg: 1 }),
                _ if self.cfg.stale > 0 && k > 0 => {
                    let back = self.rng.gen_range(0..self.cfg.stale.min(k as u32) as u64);
                    let ring = self.cfg.live + ((k - back) % self.cfg.stale as u64) as u32;
                    self.buf.extend([
                        TraceOp::Reload { reg: 2, slot: ring },
                        TraceOp::Read { reg: 2, offset: 0, width: 1 },
                    ]);
                }
                _ => self.buf.push_back(TraceOp::Write { reg: 1, offset: 0, width: 1 }),
            }
        }
        let size = self.size();
        self.buf.extend([
            TraceOp::Malloc { reg: 1, size },
            TraceOp::Write { reg: 1, offset: 0, width: width(size) },
        ]);
        if self.cfg.reads {
            self.buf.push_back(TraceOp::Read { reg: 1, offset: 0, width: width(size) });
        }
        self.buf.push_back(TraceOp::Spill { reg: 1, slot });
        true
    }
}

impl Iterator for Churn {
    type Item = TraceOp;

    fn next(&mut self) -> Option<TraceOp> {
        loop {
            if let Some(op) = self.buf.pop_front() {
                return Some(op);
            }
            if !self.refill() {
                return None;
            }
        }
    }
}

/// Random programs over a handful of registers. Choices are steered by a
/// private lifetime model so that ops are mostly well-formed while dangling
/// registers, stale spill slots and stored capabilities keep producing
/// temporal violations.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConfig {
    pub seed: u64,
    pub len: usize,
    pub regs: u8,
    pub slots: u32,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig { seed: 0, len: 200, regs: 6, slots: 8 }
    }
}

const RANDOM_SIZES: [u64; 5] = [16, 32, 48, 64, 128];

impl RandomConfig {
    pub fn trace(&self) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut model = Oracle::new();
        let mut spilled: Vec<u32> = Vec::new();
        let mut trace = Trace::new();
        let regs = self.regs.max(2);
        while trace.len() < self.len {
            let op = self.pick(&mut rng, &model, &spilled, regs);
            if let TraceOp::Spill { slot, .. } = op {
                if !spilled.contains(&slot) {
                    spilled.push(slot);
                }
            }
            let v = model.verdict(&op);
            model.apply(&op, v == super::oracle::Verdict::Legal);
            trace.push(op);
        }
        trace
    }

    fn pick(&self, rng: &mut ChaCha8Rng, model: &Oracle, spilled: &[u32], regs: u8) -> TraceOp {
        let any_reg = |rng: &mut ChaCha8Rng| rng.gen_range(0..regs);
        let heap_regs: Vec<u8> = (0..regs)
            .filter(|&r| matches!(model.reg(r).region, Region::Heap(_)))
            .collect();
        let sized_regs: Vec<u8> = (0..regs)
            .filter(|&r| model.reg(r).region != Region::Null && model.reg(r).len >= 8)
            .collect();
        let malloc = |rng: &mut ChaCha8Rng| TraceOp::Malloc {
            reg: rng.gen_range(0..regs),
            size: *RANDOM_SIZES.choose(rng).unwrap(),
        };
        match rng.gen_range(0..100) {
            0..=19 => malloc(rng),
            20..=33 => match heap_regs.choose(rng) {
                Some(&reg) if rng.gen_bool(0.9) => TraceOp::Free { reg },
                _ => TraceOp::Free { reg: any_reg(rng) },
            },
            34..=63 => {
                let Some(&reg) = sized_regs.choose(rng) else {
                    return malloc(rng);
                };
                let len = model.reg(reg).len;
                let width = *[1u64, 4, 8].choose(rng).unwrap();
                let offset = rng.gen_range(0..=len - width);
                if rng.gen_bool(0.5) {
                    TraceOp::Read { reg, offset, width }
                } else {
                    TraceOp::Write { reg, offset, width }
                }
            }
            64..=68 => TraceOp::Copy { dst: any_reg(rng), src: any_reg(rng) },
            69..=75 => TraceOp::Spill { reg: any_reg(rng), slot: rng.gen_range(0..self.slots) },
            76..=82 => match spilled.choose(rng) {
                Some(&slot) => TraceOp::Reload { reg: any_reg(rng), slot },
                None => malloc(rng),
            },
            83..=86 => {
                let wide: Vec<u8> = heap_regs.iter().copied().filter(|&r| model.reg(r).len >= 32).collect();
                match wide.choose(rng) {
                    Some(&src) => TraceOp::Derive { dst: any_reg(rng), src, offset: 16, len: 16 },
                    None => malloc(rng),
                }
            }
            87..=88 => TraceOp::Stack { reg: any_reg(rng), size: 64 },
            89..=94 => match heap_regs.choose(rng) {
                Some(&auth) => {
                    let words = model.reg(auth).len / 16;
                    let offset = rng.gen_range(0..words.max(1)) * 16;
                    TraceOp::StoreCap { auth, offset, src: any_reg(rng) }
                }
                None => malloc(rng),
            },
            _ => {
                let mut candidates = Vec::new();
                for &auth in &heap_regs {
                    let p = model.reg(auth);
                    for offset in (0..p.len).step_by(16) {
                        if model.stored(p.region, p.offset + offset).is_some() {
                            candidates.push((auth, offset));
                        }
                    }
                }
                match candidates.choose(rng) {
                    Some(&(auth, offset)) => TraceOp::LoadCap { dst: any_reg(rng), auth, offset },
                    None => malloc(rng),
                }
            }
        }
    }
}

/// Compressor-shaped locality workload: 29 long-lived buffers of mixed
/// size, phases of skewed accesses, and a few scratch buffers recycled
/// between phases.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityConfig {
    pub seed: u64,
    pub phases: u32,
    pub accesses_per_phase: u32,
}

impl Default for LocalityConfig {
    fn default() -> Self {
        LocalityConfig { seed: 0, phases: 8, accesses_per_phase: 4000 }
    }
}

/// Buffer sizes of the locality workload: window, lookahead, hash chains,
/// Huffman tables and small state blocks.
pub const LOCALITY_SIZES: [u64; 29] = [
    32768, 32768, 16384, 16384, 8192, 4096, 4096, 2048, 2048, 1024, 1024, 1024, 576, 512, 512, 256,
    256, 256, 128, 128, 128, 64, 64, 64, 64, 32, 32, 16, 16,
];

impl LocalityConfig {
    pub fn trace(&self) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut t = Trace::new();
        for (i, &size) in LOCALITY_SIZES.iter().enumerate() {
            t.push(TraceOp::Malloc { reg: i as u8, size });
        }
        let scratch = [20u8, 21, 22];
        for _ in 0..self.phases {
            for _ in 0..self.accesses_per_phase {
                let i = if rng.gen_bool(0.7) { rng.gen_range(0..6) } else { rng.gen_range(0..29) };
                let size = LOCALITY_SIZES[i];
                let offset = rng.gen_range(0..size / 8) * 8;
                let width = 8.min(size);
                let reg = i as u8;
                if rng.gen_bool(0.6) {
                    t.push(TraceOp::Read { reg, offset, width });
                } else {
                    t.push(TraceOp::Write { reg, offset, width });
                }
            }
            for &reg in &scratch {
                t.push(TraceOp::Free { reg });
                t.push(TraceOp::Malloc { reg, size: LOCALITY_SIZES[reg as usize] });
            }
        }
        for reg in 0..29 {
            t.push(TraceOp::Free { reg });
        }
        t
    }
}

/// A generator named on the command line, e.g. `churn:n=1000,live=10,seed=1`.
#[derive(Debug, Clone, PartialEq)]
pub enum GenSpec {
    Churn(ChurnConfig),
    Random(RandomConfig),
    Locality(LocalityConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad generator spec `{spec}`: {reason}")]
pub struct GenSpecError {
    pub spec: String,
    pub reason: String,
}

impl GenSpec {
    pub fn ops(&self) -> Box<dyn Iterator<Item = TraceOp>> {
        match self {
            GenSpec::Churn(c) => Box::new(c.ops()),
            GenSpec::Random(r) => Box::new(r.trace().lines.into_iter().map(|l| l.op)),
            GenSpec::Locality(l) => Box::new(l.trace().lines.into_iter().map(|l| l.op)),
        }
    }

    /// Overrides the seed, used when `--seed` is given.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            GenSpec::Churn(c) => c.seed = seed,
            GenSpec::Random(r) => r.seed = seed,
            GenSpec::Locality(l) => l.seed = seed,
        }
        self
    }

    pub fn seed(&self) -> u64 {
        match self {
            GenSpec::Churn(c) => c.seed,
            GenSpec::Random(r) => r.seed,
            GenSpec::Locality(l) => l.seed,
        }
    }
}

impl FromStr for GenSpec {
    type Err = GenSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| GenSpecError { spec: s.to_string(), reason };
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = Vec::new();
        for item in params.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{item}`")))?;
            kv.push((k, v));
        }
        let num = |k: &str, v: &str| v.parse::<u64>().map_err(|_| err(format!("`{k}` needs an integer, found `{v}`")));
        match name {
            "churn" => {
                let mut c = ChurnConfig::default();
                for (k, v) in kv {
                    match k {
                        "n" | "pairs" => c.pairs = num(k, v)?,
                        "live" => c.live = num(k, v)? as u32,
                        "seed" => c.seed = num(k, v)?,
                        "stale" => c.stale = num(k, v)? as u32,
                        "reads" => c.reads = num(k, v)? != 0,
                        "sizes" | "size" => {
                            c.sizes = v
                                .split('/')
                                .map(|x| num(k, x))
                                .collect::<Result<_, _>>()?;
                            if c.sizes.contains(&0) {
                                return Err(err("sizes must be positive".into()));
                            }
                        }
                        "inject" => {
                            c.inject_rate = v
                                .parse()
                                .ok()
                                .filter(|r: &f64| (0.0..=1.0).contains(r))
                                .ok_or_else(|| err(format!("`inject` needs a rate in [0,1], found `{v}`")))?
                        }
                        _ => return Err(err(format!("unknown churn parameter `{k}`"))),
                    }
                }
                if c.live as u64 + c.stale as u64 > super::trace::SPILL_SLOTS as u64 {
                    return Err(err("live + stale exceeds the spill region".into()));
                }
                Ok(GenSpec::Churn(c))
            }
            "random" => {
                let mut r = RandomConfig::default();
                for (k, v) in kv {
                    match k {
                        "seed" => r.seed = num(k, v)?,
                        "len" | "n" => r.len = num(k, v)? as usize,
                        "regs" => r.regs = num(k, v)?.clamp(2, 32) as u8,
                        _ => return Err(err(format!("unknown random parameter `{k}`"))),
                    }
                }
                Ok(GenSpec::Random(r))
            }
            "locality" => {
                let mut l = LocalityConfig::default();
                for (k, v) in kv {
                    match k {
                        "seed" => l.seed = num(k, v)?,
                        "phases" => l.phases = num(k, v)? as u32,
                        "accesses" => l.accesses_per_phase = num(k, v)? as u32,
                        _ => return Err(err(format!("unknown locality parameter `{k}`"))),
                    }
                }
                Ok(GenSpec::Locality(l))
            }
            _ => Err(err(format!("unknown generator `{name}` (churn, random, locality)"))),
        }
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenSpec::Churn(c) => {
                let sizes: Vec<String> = c.sizes.iter().map(u64::to_string).collect();
                write!(f, "churn:n={},live={},seed={},sizes={}", c.pairs, c.live, c.seed, sizes.join("/"))?;
                if c.stale > 0 {
                    write!(f, ",stale={}", c.stale)?;
                }
                if c.reads {
                    f.write_str(",reads=1")?;
                }
                if c.inject_rate > 0.0 {
                    write!(f, ",inject={}", c.inject_rate)?;
                }
                Ok(())
            }
            GenSpec::Random(r) => write!(f, "random:seed={},len={},regs={}", r.seed, r.len, r.regs),
            GenSpec::Locality(l) => {
                write!(f, "locality:seed={},phases={},accesses={}", l.seed, l.phases, l.accesses_per_phase)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn churn_is_seeded() {
        let c = ChurnConfig { sizes: vec![32], ..ChurnConfig::new(100, 10, 7) };
        assert_eq!(c.trace().to_string(), c.trace().to_string());
        assert_eq!(c.trace().len() as u64, c.len_hint());
        let other = ChurnConfig { seed: 8, ..c.clone() };
        assert_ne!(c.trace(), other.trace());
    }

    #[test]
    fn churn_keeps_live_set_constant() {
        let mut o = Oracle::new();
        for op in ChurnConfig::new(500, 20, 3).ops() {
            o.apply(&op, true);
        }
        assert_eq!(o.live_count(), 20);
    }

    #[test]
    fn spec_round_trip() {
        for s in [
            "churn:n=1000,live=10,seed=1,sizes=64",
            "churn:n=50,live=5,seed=2,sizes=16/48,stale=4,reads=1,inject=0.1",
            "random:seed=3,len=100,regs=4",
            "locality:seed=0,phases=2,accesses=10",
        ] {
            let g: GenSpec = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        let g: GenSpec = "churn:n=1000,live=10,seed=1".parse().unwrap();
        assert_eq!(g, GenSpec::Churn(ChurnConfig::new(1000, 10, 1)));
        assert!("churn:n=5,live=60000,stale=6000".parse::<GenSpec>().is_err());
        assert!("churn:bogus=1".parse::<GenSpec>().is_err());
        assert!("zipf".parse::<GenSpec>().is_err());
    }

    #[test]
    fn random_traces_differ_by_seed_and_stay_in_range() {
        let a = RandomConfig { seed: 1, ..Default::default() }.trace();
        let b = RandomConfig { seed: 2, ..Default::default() }.trace();
        assert_eq!(a.len(), 200);
        assert_ne!(a, b);
        let reparsed = super::super::trace::parse_trace(&a.to_string()).unwrap();
        assert_eq!(reparsed, a);
    }

    #[test]
    fn locality_has_29_buffers() {
        let t = LocalityConfig::default().trace();
        let mallocs = t.ops().filter(|op| matches!(op, TraceOp::Malloc { .. })).count();
        assert_eq!(mallocs, 29 + 8 * 3);
    }
}
