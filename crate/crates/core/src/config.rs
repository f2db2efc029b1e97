//! Machine geometry and run configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::MAX_COLOR_BITS;

/// Simulated virtual addresses are 32-bit.
pub const ADDRESS_SPACE: u64 = 1 << 32;

pub const DEFAULT_COLOR_BITS: u32 = 21;
pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_QUARANTINE_FRACTION: f64 = 0.25;
/// Quarantines smaller than this never trigger a sweep.
pub const DEFAULT_QUARANTINE_MIN_BYTES: u64 = 4096;

/// Capability spill region used by trace `spill`/`reload`.
pub const SPILL_BASE: u64 = 0x0100_0000;
pub const HEAP_BASE: u64 = 0x1000_0000;
pub const DEFAULT_HEAP_SIZE: u64 = 64 << 20;
/// The PVT sits below the stack at a fixed address.
pub const PVT_BASE: u64 = 0xE000_0000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("color_bits must be in 1..={MAX_COLOR_BITS}, got {0}")]
    ColorBits(u32),
    #[error("otype threshold {otypeth} exceeds 2^{color_bits}")]
    Otypeth { otypeth: u32, color_bits: u32 },
    #[error("region {name} [{lo:#x}, {hi:#x}) does not fit the address space or overlaps another region")]
    Region { name: &'static str, lo: u64, hi: u64 },
    #[error("invalid PVT buffer geometry {sets} sets x {ways} ways")]
    BufferGeometry { sets: usize, ways: usize },
    #[error("{name} must be in [0, 1), got {value}")]
    Fraction { name: &'static str, value: f64 },
    #[error("windowed sweep needs a positive window")]
    SweepWindow,
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
}

/// Geometry and feature switches of one simulated machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub color_bits: u32,
    pub otypeth: u32,
    pub heap_base: u64,
    pub heap_size: u64,
    pub pvt_base: u64,
    pub capability_width: u64,
    pub pvt_buffer_sets: usize,
    pub pvt_buffer_ways: usize,
    pub pvt_buffer_enabled: bool,
    /// When off, colored capabilities are dereferenced without a PVT
    /// lookup. The versioning baseline reuses the otype for its version.
    pub provenance_checks: bool,
    /// Restricts the mapped part of the PVT; lookups beyond it fault with
    /// `PvtUnmapped`. `None` maps the whole table.
    pub pvt_mapped_bytes: Option<u64>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig::with_color_bits(DEFAULT_COLOR_BITS)
    }
}

impl MachineConfig {
    pub fn with_color_bits(color_bits: u32) -> Self {
        MachineConfig {
            color_bits,
            otypeth: 1u32.checked_shl(color_bits).unwrap_or(u32::MAX),
            heap_base: HEAP_BASE,
            heap_size: DEFAULT_HEAP_SIZE,
            pvt_base: PVT_BASE,
            capability_width: 16,
            pvt_buffer_sets: 16,
            pvt_buffer_ways: 4,
            pvt_buffer_enabled: true,
            provenance_checks: true,
            pvt_mapped_bytes: None,
        }
    }

    /// Number of assignable colors, `2^color_bits - 1` (color 0 is reserved).
    pub fn pool_size(&self) -> u32 {
        ((1u64 << self.color_bits) - 1) as u32
    }

    pub fn pvt_bytes(&self) -> u64 {
        ((1u64 << self.color_bits) / 8).max(16)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.color_bits == 0 || self.color_bits > MAX_COLOR_BITS {
            return Err(ConfigError::ColorBits(self.color_bits));
        }
        if self.otypeth as u64 > 1u64 << self.color_bits {
            return Err(ConfigError::Otypeth {
                otypeth: self.otypeth,
                color_bits: self.color_bits,
            });
        }
        if self.pvt_buffer_sets == 0 || self.pvt_buffer_ways == 0 {
            return Err(ConfigError::BufferGeometry {
                sets: self.pvt_buffer_sets,
                ways: self.pvt_buffer_ways,
            });
        }
        let heap = (self.heap_base, self.heap_base + self.heap_size);
        let pvt = (self.pvt_base, self.pvt_base + self.pvt_bytes());
        if heap.1 > ADDRESS_SPACE || self.heap_size == 0 || !self.heap_base.is_multiple_of(16) {
            return Err(ConfigError::Region { name: "heap", lo: heap.0, hi: heap.1 });
        }
        if pvt.1 > ADDRESS_SPACE || (pvt.0 < heap.1 && heap.0 < pvt.1) {
            return Err(ConfigError::Region { name: "pvt", lo: pvt.0, hi: pvt.1 });
        }
        Ok(())
    }
}

/// Temporal-safety scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Picasso,
    Cornucopia,
    CornucopiaRof,
    Versioning,
    None,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::Picasso,
        SchemeKind::Cornucopia,
        SchemeKind::CornucopiaRof,
        SchemeKind::Versioning,
        SchemeKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Picasso => "picasso",
            SchemeKind::Cornucopia => "cornucopia",
            SchemeKind::CornucopiaRof => "cornucopia-rof",
            SchemeKind::Versioning => "versioning",
            SchemeKind::None => "none",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::Unknown { what: "scheme", value: s.to_string() })
    }
}

/// How revocation sweeps interleave with the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    /// One unbounded sweep at trigger time (stop-the-world).
    Sync,
    /// Sweep at most this many tagged words after each trace op.
    Windowed(usize),
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepMode::Sync => f.write_str("sync"),
            SweepMode::Windowed(n) => write!(f, "windowed:{n}"),
        }
    }
}

impl FromStr for SweepMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "sync" {
            return Ok(SweepMode::Sync);
        }
        s.strip_prefix("windowed:")
            .and_then(|n| n.parse().ok())
            .map(SweepMode::Windowed)
            .ok_or_else(|| ConfigError::Unknown { what: "sweep mode", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
    Human,
}

impl FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "human" => Ok(OutputFormat::Human),
            _ => Err(ConfigError::Unknown { what: "output format", value: s.to_string() }),
        }
    }
}

/// Everything a single trace run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scheme: SchemeKind,
    pub color_bits: u32,
    /// Revoke once fewer than this fraction of colors remain unclaimed.
    pub threshold_fraction: f64,
    /// Cornucopia sweeps once quarantine reaches this fraction of the bytes
    /// held from the heap (live plus quarantined).
    pub quarantine_fraction: f64,
    pub quarantine_min_bytes: u64,
    pub heap_size: u64,
    pub pvt_buffer: bool,
    pub sweep: SweepMode,
    pub seed: u64,
    /// Versioning only: quarantine and sweep a block once its granules have
    /// used every version, instead of letting versions wrap.
    pub version_fallback: bool,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: SchemeKind::Picasso,
            color_bits: DEFAULT_COLOR_BITS,
            threshold_fraction: DEFAULT_THRESHOLD,
            quarantine_fraction: DEFAULT_QUARANTINE_FRACTION,
            quarantine_min_bytes: DEFAULT_QUARANTINE_MIN_BYTES,
            heap_size: DEFAULT_HEAP_SIZE,
            pvt_buffer: true,
            sweep: SweepMode::Sync,
            seed: 0,
            version_fallback: true,
            format: OutputFormat::Json,
        }
    }
}

impl RunConfig {
    pub fn for_scheme(scheme: SchemeKind) -> Self {
        RunConfig { scheme, ..Default::default() }
    }

    pub fn machine_config(&self) -> MachineConfig {
        MachineConfig {
            heap_size: self.heap_size,
            pvt_buffer_enabled: self.pvt_buffer,
            provenance_checks: self.scheme == SchemeKind::Picasso,
            ..MachineConfig::with_color_bits(self.color_bits)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.machine_config().validate()?;
        if HEAP_BASE + self.heap_size > PVT_BASE {
            return Err(ConfigError::Region {
                name: "heap",
                lo: HEAP_BASE,
                hi: HEAP_BASE + self.heap_size,
            });
        }
        for (name, value) in [
            ("threshold_fraction", self.threshold_fraction),
            ("quarantine_fraction", self.quarantine_fraction),
        ] {
            if !(0.0..1.0).contains(&value) {
                return Err(ConfigError::Fraction { name, value });
            }
        }
        if self.sweep == SweepMode::Windowed(0) {
            return Err(ConfigError::SweepWindow);
        }
        Ok(())
    }
}
