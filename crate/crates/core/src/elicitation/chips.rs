//! Roulette chip allocations over equal-width bins of `R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChips")]
pub struct ChipAllocation {
    pub lower: f64,
    pub upper: f64,
    pub nbins: usize,
    pub chips: Vec<u32>,
    pub total_chips: u32,
}

#[derive(Deserialize)]
struct RawChips {
    lower: f64,
    upper: f64,
    nbins: usize,
    chips: Vec<u32>,
    #[serde(default)]
    total_chips: Option<u32>,
}

impl TryFrom<RawChips> for ChipAllocation {
    type Error = Error;

    fn try_from(raw: RawChips) -> Result<Self> {
        let total = raw.total_chips.unwrap_or_else(|| raw.chips.iter().sum());
        ChipAllocation::new(raw.lower, raw.upper, raw.nbins, raw.chips, total)
    }
}

impl ChipAllocation {
    pub fn new(lower: f64, upper: f64, nbins: usize, chips: Vec<u32>, total_chips: u32) -> Result<Self> {
        if !(lower.is_finite() && lower >= 1.0) {
            return Err(Error::Domain(format!("lower limit must be >= 1, got {lower}")));
        }
        if !(upper.is_finite() && upper > lower) {
            return Err(Error::Domain(format!("upper limit {upper} must exceed lower limit {lower}")));
        }
        if nbins < 2 {
            return Err(Error::Domain(format!("need at least 2 bins, got {nbins}")));
        }
        if chips.len() != nbins {
            return Err(Error::Domain(format!("{} chip counts for {nbins} bins", chips.len())));
        }
        if total_chips == 0 {
            return Err(Error::Domain("total_chips must be >= 1".into()));
        }
        let placed: u32 = chips.iter().sum();
        if placed > total_chips {
            return Err(Error::Domain(format!("{placed} chips placed but only {total_chips} available")));
        }
        Ok(Self {
            lower,
            upper,
            nbins,
            chips,
            total_chips,
        })
    }

    /// All chips placed, no bins filled yet.
    pub fn empty(lower: f64, upper: f64, nbins: usize, total_chips: u32) -> Result<Self> {
        Self::new(lower, upper, nbins, vec![0; nbins], total_chips)
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.nbins as f64
    }

    /// Bin boundaries, `nbins + 1` values from `lower` to `upper`.
    pub fn edges(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..=self.nbins)
            .map(|j| if j == self.nbins { self.upper } else { self.lower + w * j as f64 })
            .collect()
    }

    pub fn placed(&self) -> u32 {
        self.chips.iter().sum()
    }

    pub fn remaining(&self) -> u32 {
        self.total_chips - self.placed()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining() == 0
    }

    pub fn positive_bins(&self) -> usize {
        self.chips.iter().filter(|&&c| c > 0).count()
    }

    /// Fewer than two bins hold chips; no spread can be inferred.
    pub fn is_degenerate(&self) -> bool {
        self.positive_bins() < 2
    }

    /// `(upper edge, cumulative probability)` for every bin.
    pub fn cumulative(&self) -> Vec<(f64, f64)> {
        let edges = self.edges();
        let total = f64::from(self.total_chips);
        let mut acc = 0u32;
        self.chips
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                acc += c;
                (edges[j + 1], f64::from(acc) / total)
            })
            .collect()
    }

    /// Parses `lower,upper,nbins,chips...` with an optional header row.
    ///
    /// A header column named `total_chips` (after `nbins`) sets the chip budget;
    /// otherwise the budget is the number of chips placed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut has_total = false;
        for (idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::parse(idx + 1, 1, e.to_string()))?;
            let line = record.position().map_or(idx + 1, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            let first = record.get(0).unwrap_or_default();
            if first.parse::<f64>().is_err() {
                has_total = record.iter().any(|h| h.eq_ignore_ascii_case("total_chips"));
                continue;
            }
            let num = |col: usize| -> Result<&str> {
                record
                    .get(col)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::parse(line, col + 1, "missing field"))
            };
            let float = |col: usize| -> Result<f64> {
                num(col)?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(line, col + 1, e.to_string()))
            };
            let int = |col: usize| -> Result<u32> {
                num(col)?
                    .parse::<u32>()
                    .map_err(|e| Error::parse(line, col + 1, e.to_string()))
            };
            let lower = float(0)?;
            let upper = float(1)?;
            let nbins = int(2)? as usize;
            let first_chip = if has_total { 4 } else { 3 };
            let chips = (first_chip..record.len()).map(int).collect::<Result<Vec<_>>>()?;
            if chips.len() != nbins {
                return Err(Error::parse(
                    line,
                    record.len(),
                    format!("expected {nbins} chip counts, found {}", chips.len()),
                ));
            }
            let total = if has_total { int(3)? } else { chips.iter().sum() };
            return Self::new(lower, upper, nbins, chips, total)
                .map_err(|e| Error::parse(line, 1, e.to_string()));
        }
        Err(Error::parse(1, 1, "no chip allocation row found"))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,nbins,total_chips");
        for j in 1..=self.nbins {
            out.push_str(&format!(",bin{j}"));
        }
        out.push('\n');
        out.push_str(&format!("{},{},{},{}", self.lower, self.upper, self.nbins, self.total_chips));
        for c in &self.chips {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        out
    }
}
