//! Unit grammar shared by the DSL and the command line.
//!
//! All conversions are exact integer arithmetic. Size units are decimal:
//! `1kB = 1000 B`, `1MB = 1000 kB`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("expected an integer followed by a unit, found `{0}`")]
    Malformed(String),
    #[error("unknown unit `{unit}` (expected one of {expected})")]
    UnknownUnit {
        unit: String,
        expected: &'static str,
    },
    #[error("value must be greater than zero")]
    Zero,
    #[error("value `{0}` is too large")]
    Overflow(String),
}

/// A time span in whole nanoseconds, remembering the unit it was written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DurationLit {
    pub value: u64,
    pub unit: TimeUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeUnit {
    Ms,
    S,
    M,
    H,
}

impl TimeUnit {
    pub fn nanos(self) -> u64 {
        match self {
            TimeUnit::Ms => 1_000_000,
            TimeUnit::S => 1_000_000_000,
            TimeUnit::M => 60_000_000_000,
            TimeUnit::H => 3_600_000_000_000,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Ms => "ms",
            TimeUnit::S => "s",
            TimeUnit::M => "m",
            TimeUnit::H => "h",
        }
    }
}

impl DurationLit {
    pub fn as_nanos(&self) -> u64 {
        // range-checked at parse time
        self.value * self.unit.nanos()
    }

    /// Largest unit that represents `nanos` exactly (`ms` as a floor).
    pub fn from_nanos(nanos: u64) -> Option<Self> {
        [TimeUnit::H, TimeUnit::M, TimeUnit::S, TimeUnit::Ms]
            .into_iter()
            .find(|u| nanos.is_multiple_of(u.nanos()))
            .map(|unit| DurationLit {
                value: nanos / unit.nanos(),
                unit,
            })
    }
}

impl fmt::Display for DurationLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

const TIME_UNITS: &str = "ms, s, m, h";
const SIZE_UNITS: &str = "B, kB, MB";
const MEMORY_UNITS: &str = "K, M, G, T";

fn split_number(token: &str) -> Result<(u64, &str), UnitError> {
    let digits = token.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(UnitError::Malformed(token.to_string()));
    }
    let (num, unit) = token.split_at(digits);
    let value = num
        .parse::<u64>()
        .map_err(|_| UnitError::Overflow(token.to_string()))?;
    Ok((value, unit))
}

fn parse_time(token: &str, allow_zero: bool) -> Result<DurationLit, UnitError> {
    let (value, unit) = split_number(token)?;
    let unit = match unit {
        "ms" => TimeUnit::Ms,
        "s" => TimeUnit::S,
        "m" => TimeUnit::M,
        "h" => TimeUnit::H,
        "" if allow_zero && value == 0 => TimeUnit::Ms,
        other => {
            return Err(UnitError::UnknownUnit {
                unit: other.to_string(),
                expected: TIME_UNITS,
            })
        }
    };
    if value == 0 && !allow_zero {
        return Err(UnitError::Zero);
    }
    value
        .checked_mul(unit.nanos())
        .ok_or_else(|| UnitError::Overflow(token.to_string()))?;
    Ok(DurationLit { value, unit })
}

/// Parses a strictly positive duration such as `500ms`, `10s`, `2m`, `1h`.
pub fn parse_duration(token: &str) -> Result<DurationLit, UnitError> {
    parse_time(token, false)
}

/// Like [`parse_duration`], but also accepts zero (`0`, `0ms`, ...).
pub fn parse_duration_or_zero(token: &str) -> Result<DurationLit, UnitError> {
    parse_time(token, true)
}

/// Convenience wrapper returning nanoseconds.
pub fn parse_duration_ns(token: &str) -> Result<u64, UnitError> {
    parse_duration(token).map(|d| d.as_nanos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SizeUnit {
    B,
    KB,
    MB,
}

impl SizeUnit {
    pub fn bytes(self) -> u64 {
        match self {
            SizeUnit::B => 1,
            SizeUnit::KB => 1_000,
            SizeUnit::MB => 1_000_000,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            SizeUnit::B => "B",
            SizeUnit::KB => "kB",
            SizeUnit::MB => "MB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeLit {
    pub value: u64,
    pub unit: SizeUnit,
}

impl SizeLit {
    pub fn as_bytes(&self) -> u64 {
        self.value * self.unit.bytes()
    }
}

impl fmt::Display for SizeLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

/// Parses a payload size: `8B`, `1kB`, `2MB`.
pub fn parse_payload_size(token: &str) -> Result<SizeLit, UnitError> {
    let (value, unit) = split_number(token)?;
    let unit = match unit {
        "B" => SizeUnit::B,
        "kB" => SizeUnit::KB,
        "MB" => SizeUnit::MB,
        other => {
            return Err(UnitError::UnknownUnit {
                unit: other.to_string(),
                expected: SIZE_UNITS,
            })
        }
    };
    if value == 0 {
        return Err(UnitError::Zero);
    }
    value
        .checked_mul(unit.bytes())
        .ok_or_else(|| UnitError::Overflow(token.to_string()))?;
    Ok(SizeLit { value, unit })
}

/// Platform memory, written the way container and VM tooling expects (`2G`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryLit {
    pub value: u64,
    pub unit: MemoryUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemoryUnit {
    K,
    M,
    G,
    T,
}

impl MemoryUnit {
    pub fn suffix(self) -> &'static str {
        match self {
            MemoryUnit::K => "K",
            MemoryUnit::M => "M",
            MemoryUnit::G => "G",
            MemoryUnit::T => "T",
        }
    }

    /// Binary multiplier, as used by docker and hypervisors.
    pub fn bytes(self) -> u64 {
        match self {
            MemoryUnit::K => 1 << 10,
            MemoryUnit::M => 1 << 20,
            MemoryUnit::G => 1 << 30,
            MemoryUnit::T => 1 << 40,
        }
    }
}

impl fmt::Display for MemoryLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

/// Parses `2G`, `512M`, `2GB` (trailing `B` tolerated), case-insensitive.
pub fn parse_memory(token: &str) -> Result<MemoryLit, UnitError> {
    let (value, unit) = split_number(token)?;
    let upper = unit.to_ascii_uppercase();
    let unit = match upper.strip_suffix('B').unwrap_or(&upper) {
        "K" => MemoryUnit::K,
        "M" => MemoryUnit::M,
        "G" => MemoryUnit::G,
        "T" => MemoryUnit::T,
        _ => {
            return Err(UnitError::UnknownUnit {
                unit: unit.to_string(),
                expected: MEMORY_UNITS,
            })
        }
    };
    if value == 0 {
        return Err(UnitError::Zero);
    }
    Ok(MemoryLit { value, unit })
}

/// Formats nanoseconds with the largest exact unit, e.g. `2000000000` -> `2s`.
/// Sub-millisecond values fall back to `ns`.
pub fn format_nanos(nanos: u64) -> String {
    if nanos == 0 {
        return "0".to_string();
    }
    match DurationLit::from_nanos(nanos) {
        Some(d) => d.to_string(),
        None if nanos.is_multiple_of(1_000) => format!("{}us", nanos / 1_000),
        None => format!("{nanos}ns"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration_ns("500ms").unwrap(), 500_000_000);
        assert_eq!(parse_duration_ns("1h").unwrap(), 3_600_000_000_000);
        assert_eq!(parse_duration_ns("10s").unwrap(), 10_000_000_000);
        assert_eq!(parse_duration_ns("2m").unwrap(), 120_000_000_000);
        assert!(matches!(
            parse_duration("10x"),
            Err(UnitError::UnknownUnit { .. })
        ));
        assert_eq!(parse_duration("0s"), Err(UnitError::Zero));
        assert!(matches!(
            parse_duration("-1s"),
            Err(UnitError::Malformed(_))
        ));
        assert!(matches!(parse_duration("s"), Err(UnitError::Malformed(_))));
        assert!(matches!(
            parse_duration("99999999999999999h"),
            Err(UnitError::Overflow(_))
        ));
        assert!(matches!(
            parse_duration("10"),
            Err(UnitError::UnknownUnit { .. })
        ));
    }

    #[test]
    fn zero_allowed_variant() {
        assert_eq!(parse_duration_or_zero("0").unwrap().as_nanos(), 0);
        assert_eq!(parse_duration_or_zero("0ms").unwrap().as_nanos(), 0);
        assert_eq!(
            parse_duration_or_zero("20ms").unwrap().as_nanos(),
            20_000_000
        );
        assert!(parse_duration_or_zero("5").is_err());
    }

    #[test]
    fn payload_sizes_are_decimal() {
        assert_eq!(parse_payload_size("8B").unwrap().as_bytes(), 8);
        assert_eq!(parse_payload_size("60B").unwrap().as_bytes(), 60);
        assert_eq!(parse_payload_size("1kB").unwrap().as_bytes(), 1000);
        assert_eq!(parse_payload_size("2MB").unwrap().as_bytes(), 2_000_000);
        assert_eq!(parse_payload_size("0B"), Err(UnitError::Zero));
        assert!(matches!(
            parse_payload_size("1KB"),
            Err(UnitError::UnknownUnit { .. })
        ));
    }

    #[test]
    fn memory() {
        let m = parse_memory("2G").unwrap();
        assert_eq!(m.to_string(), "2G");
        assert_eq!(parse_memory("512mb").unwrap().to_string(), "512M");
        assert!(parse_memory("2X").is_err());
    }

    #[test]
    fn formatting_picks_exact_unit() {
        assert_eq!(format_nanos(2_000_000_000), "2s");
        assert_eq!(format_nanos(100_000_000), "100ms");
        assert_eq!(format_nanos(3_600_000_000_000), "1h");
        assert_eq!(format_nanos(1_500), "1500ns");
        assert_eq!(format_nanos(0), "0");
    }
}
