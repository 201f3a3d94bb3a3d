//! Ukrainian one-line plate codes (regular and electric-vehicle subtype,
//! 2004 and 2013 regional prefixes): validation, parsing, region lookup
//! and sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Region table as published, one row per region: `prefix2004,prefix2013,region`.
pub const REGION_TABLE_CSV: &str = include_str!("../data/regions.csv");

/// The twelve Cyrillic letters with Latin look-alikes, alphabetical.
pub const BASE_LETTERS: [char; 12] = ['A', 'B', 'C', 'E', 'H', 'I', 'K', 'M', 'O', 'P', 'T', 'X'];

/// Letters reserved for electric-vehicle plates.
pub const EV_LETTERS: [char; 2] = ['Y', 'Z'];

/// Every letter allowed in a suffix position: base letters followed by Y and Z.
pub const SUFFIX_LETTERS: [char; 14] = [
    'A', 'B', 'C', 'E', 'H', 'I', 'K', 'M', 'O', 'P', 'T', 'X', 'Y', 'Z',
];

pub const DIGITS: [char; 10] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9'];

/// Detector class map: ids 0-9 are digits, 10-23 the suffix letters in order.
pub const CLASS_CHARS: [char; 24] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', 'A', 'B', 'C', 'E', 'H', 'I', 'K', 'M', 'O',
    'P', 'T', 'X', 'Y', 'Z',
];

pub const NUM_CLASSES: usize = CLASS_CHARS.len();

pub fn class_of_char(c: char) -> Option<usize> {
    CLASS_CHARS.iter().position(|&k| k == c)
}

pub fn char_of_class(id: usize) -> Option<char> {
    CLASS_CHARS.get(id).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    BadPattern,
    InvalidPrefix,
    InvalidSuffix,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::BadPattern => "bad_pattern",
            InvalidReason::InvalidPrefix => "invalid_prefix",
            InvalidReason::InvalidSuffix => "invalid_suffix",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Valid { ev: bool },
    Invalid(InvalidReason),
}

impl Validation {
    pub fn is_valid(self) -> bool {
        matches!(self, Validation::Valid { .. })
    }

    pub fn reason(self) -> Option<InvalidReason> {
        match self {
            Validation::Valid { .. } => None,
            Validation::Invalid(r) => Some(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Era {
    P2004,
    P2013,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionEntry {
    pub prefix2004: String,
    pub prefix2013: String,
    pub region: String,
}

#[derive(Debug, Clone)]
pub struct RegionTable {
    entries: Vec<RegionEntry>,
}

impl RegionTable {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: "regions.csv".into(),
                line: i + 2,
                message: e.to_string(),
            })?;
            if row.len() != 3 {
                return Err(Error::Parse {
                    path: "regions.csv".into(),
                    line: i + 2,
                    message: format!("expected 3 fields, got {}", row.len()),
                });
            }
            entries.push(RegionEntry {
                prefix2004: row[0].trim().to_string(),
                prefix2013: row[1].trim().to_string(),
                region: row[2].trim().to_string(),
            });
        }
        Ok(RegionTable { entries })
    }

    /// The embedded table.
    pub fn standard() -> &'static RegionTable {
        &REGIONS
    }

    pub fn entries(&self) -> &[RegionEntry] {
        &self.entries
    }

    /// All prefixes, 2004 column first, then the 2013 column, in table order.
    pub fn prefixes(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .map(|e| e.prefix2004.as_str())
            .chain(self.entries.iter().map(|e| e.prefix2013.as_str()))
    }

    pub fn lookup(&self, prefix: &str) -> Option<(&RegionEntry, Era)> {
        self.entries.iter().find_map(|e| {
            if e.prefix2004 == prefix {
                Some((e, Era::P2004))
            } else if e.prefix2013 == prefix {
                Some((e, Era::P2013))
            } else {
                None
            }
        })
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.region.as_str())
    }
}

static REGIONS: LazyLock<RegionTable> =
    LazyLock::new(|| RegionTable::from_csv(REGION_TABLE_CSV).expect("embedded region table"));

static PREFIXES: LazyLock<Vec<&'static str>> =
    LazyLock::new(|| RegionTable::standard().prefixes().collect());

/// The 54 valid prefixes in table order (2004 column, then 2013).
pub fn valid_prefixes() -> &'static [&'static str] {
    &PREFIXES
}

pub fn region_of_prefix(prefix: &str) -> Option<&'static str> {
    RegionTable::standard()
        .lookup(prefix)
        .map(|(e, _)| e.region.as_str())
}

pub fn is_suffix_letter(c: char) -> bool {
    SUFFIX_LETTERS.contains(&c)
}

/// Checks the three success criteria in order: pattern, prefix, suffix.
pub fn validate_plate(text: &str) -> Validation {
    let chars: Vec<char> = text.chars().collect();
    let pattern_ok = chars.len() == 8
        && chars.iter().enumerate().all(|(i, c)| match i {
            2..=5 => c.is_ascii_digit(),
            _ => c.is_ascii_uppercase(),
        });
    if !pattern_ok {
        return Validation::Invalid(InvalidReason::BadPattern);
    }
    let prefix: String = chars[..2].iter().collect();
    if RegionTable::standard().lookup(&prefix).is_none() {
        return Validation::Invalid(InvalidReason::InvalidPrefix);
    }
    if !chars[6..].iter().all(|&c| is_suffix_letter(c)) {
        return Validation::Invalid(InvalidReason::InvalidSuffix);
    }
    let ev = chars[6..].iter().any(|c| EV_LETTERS.contains(c));
    Validation::Valid { ev }
}

/// A validated plate. Serialized as its eight-character text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub struct PlateSpec {
    prefix: [u8; 2],
    digits: [u8; 4],
    suffix: [u8; 2],
    region: &'static str,
    era: Era,
    ev: bool,
}

impl PlateSpec {
    pub fn prefix(&self) -> &str {
        std::str::from_utf8(&self.prefix).expect("ascii")
    }

    pub fn digits(&self) -> &str {
        std::str::from_utf8(&self.digits).expect("ascii")
    }

    pub fn suffix(&self) -> &str {
        std::str::from_utf8(&self.suffix).expect("ascii")
    }

    pub fn region(&self) -> &'static str {
        self.region
    }

    pub fn era(&self) -> Era {
        self.era
    }

    pub fn is_ev(&self) -> bool {
        self.ev
    }

    /// The eight characters left to right.
    pub fn chars(&self) -> [char; 8] {
        let mut out = ['\0'; 8];
        for (i, b) in self
            .prefix
            .iter()
            .chain(&self.digits)
            .chain(&self.suffix)
            .enumerate()
        {
            out[i] = *b as char;
        }
        out
    }

    pub fn text(&self) -> String {
        self.chars().iter().collect()
    }
}

impl fmt::Display for PlateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.chars() {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

pub fn parse_plate(text: &str) -> Result<PlateSpec> {
    let ev = match validate_plate(text) {
        Validation::Valid { ev } => ev,
        Validation::Invalid(reason) => {
            return Err(Error::InvalidPlate {
                text: text.to_string(),
                reason,
            })
        }
    };
    let b = text.as_bytes();
    let (entry, era) = RegionTable::standard()
        .lookup(&text[..2])
        .expect("validated prefix");
    Ok(PlateSpec {
        prefix: [b[0], b[1]],
        digits: [b[2], b[3], b[4], b[5]],
        suffix: [b[6], b[7]],
        region: entry.region.as_str(),
        era,
        ev,
    })
}

impl FromStr for PlateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_plate(s)
    }
}

impl TryFrom<String> for PlateSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_plate(&s)
    }
}

impl<'de> Deserialize<'de> for PlateSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_plate(&text).map_err(serde::de::Error::custom)
    }
}

impl From<PlateSpec> for String {
    fn from(p: PlateSpec) -> String {
        p.text()
    }
}

/// Per-position sampling weights for synthetic plate text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateDistribution {
    /// Weight per prefix; prefixes not listed have weight zero.
    pub prefix: BTreeMap<String, f64>,
    /// Weights over `DIGITS` for each of the four digit positions.
    pub digits: [[f64; 10]; 4],
    /// Weights over `SUFFIX_LETTERS` for each of the two suffix positions.
    pub suffix: [[f64; 14]; 2],
}

impl PlateDistribution {
    pub fn uniform() -> Self {
        PlateDistribution {
            prefix: valid_prefixes().iter().map(|p| (p.to_string(), 1.0)).collect(),
            digits: [[1.0; 10]; 4],
            suffix: [[1.0; 14]; 2],
        }
    }

    /// Scales the weight of one suffix letter in both suffix positions.
    pub fn with_suffix_weight(mut self, letter: char, weight: f64) -> Result<Self> {
        let idx = SUFFIX_LETTERS
            .iter()
            .position(|&c| c == letter)
            .ok_or_else(|| Error::arg(format!("{letter:?} is not a suffix letter")))?;
        for pos in &mut self.suffix {
            pos[idx] = weight;
        }
        Ok(self)
    }

    fn compile(&self) -> Result<CompiledDistribution> {
        let mut prefixes = Vec::with_capacity(self.prefix.len());
        let mut weights = Vec::with_capacity(self.prefix.len());
        for (p, &w) in &self.prefix {
            if RegionTable::standard().lookup(p).is_none() {
                return Err(Error::arg(format!("prefix {p:?} not in the region table")));
            }
            prefixes.push(p.clone());
            weights.push(w);
        }
        let table = |name: &str, w: &[f64]| -> Result<WeightedIndex<f64>> {
            WeightedIndex::new(w).map_err(|e| Error::arg(format!("{name} weights: {e}")))
        };
        Ok(CompiledDistribution {
            prefix_index: table("prefix", &weights)?,
            prefixes,
            digits: [
                table("digit 1", &self.digits[0])?,
                table("digit 2", &self.digits[1])?,
                table("digit 3", &self.digits[2])?,
                table("digit 4", &self.digits[3])?,
            ],
            suffix: [
                table("suffix 1", &self.suffix[0])?,
                table("suffix 2", &self.suffix[1])?,
            ],
        })
    }
}

struct CompiledDistribution {
    prefixes: Vec<String>,
    prefix_index: WeightedIndex<f64>,
    digits: [WeightedIndex<f64>; 4],
    suffix: [WeightedIndex<f64>; 2],
}

impl CompiledDistribution {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PlateSpec {
        let mut text = String::with_capacity(8);
        text.push_str(&self.prefixes[self.prefix_index.sample(rng)]);
        for d in &self.digits {
            text.push(DIGITS[d.sample(rng)]);
        }
        for s in &self.suffix {
            text.push(SUFFIX_LETTERS[s.sample(rng)]);
        }
        parse_plate(&text).expect("sampled plate is valid by construction")
    }
}

/// Reusable sampler; compiling the weight tables once is worthwhile for large batches.
pub struct PlateSampler {
    inner: Option<CompiledDistribution>,
}

impl PlateSampler {
    pub fn new(dist: Option<&PlateDistribution>) -> Result<Self> {
        Ok(PlateSampler {
            inner: dist.map(PlateDistribution::compile).transpose()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PlateSpec {
        match &self.inner {
            Some(d) => d.sample(rng),
            None => {
                let prefixes = valid_prefixes();
                let mut text = String::with_capacity(8);
                text.push_str(prefixes[rng.random_range(0..prefixes.len())]);
                for _ in 0..4 {
                    text.push(DIGITS[rng.random_range(0..10)]);
                }
                for _ in 0..2 {
                    text.push(SUFFIX_LETTERS[rng.random_range(0..SUFFIX_LETTERS.len())]);
                }
                parse_plate(&text).expect("sampled plate is valid by construction")
            }
        }
    }
}

pub fn sample_plate<R: Rng + ?Sized>(rng: &mut R, dist: Option<&PlateDistribution>) -> Result<PlateSpec> {
    Ok(PlateSampler::new(dist)?.sample(rng))
}
