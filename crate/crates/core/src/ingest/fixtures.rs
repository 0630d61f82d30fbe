//! Datasets and chip allocations bundled with the crate.

use super::dataset_io::parse_dataset;
use crate::elicitation::{ChipAllocation, FittedRatioDistribution};
use crate::engine::TrialDataset;
use crate::error::{Error, Result};

pub const DATASETS: [&str; 2] = ["ta163", "ta336"];

const TA163: &str = include_str!("../../fixtures/ta163.txt");
const TA336: &str = include_str!("../../fixtures/ta336.txt");
const TA163_CHIPS: &str = include_str!("../../fixtures/ta163_chips.csv");
const TA336_CHIPS: &str = include_str!("../../fixtures/ta336_chips.csv");

pub fn dataset_text(name: &str) -> Result<&'static str> {
    match name {
        "ta163" => Ok(TA163),
        "ta336" => Ok(TA336),
        other => Err(Error::NotFound(format!("no bundled dataset named '{other}'"))),
    }
}

pub fn dataset(name: &str) -> Result<TrialDataset> {
    parse_dataset(dataset_text(name)?)
}

/// Chip allocation recorded for a bundled dataset.
pub fn chips(name: &str) -> Result<ChipAllocation> {
    let text = match name {
        "ta163" => TA163_CHIPS,
        "ta336" => TA336_CHIPS,
        other => return Err(Error::NotFound(format!("no bundled chips named '{other}'"))),
    };
    ChipAllocation::from_csv(text)
}

/// Published gamma law on `R - 1` fitted to the bundled chips.
pub fn elicited_prior(name: &str) -> Result<FittedRatioDistribution> {
    match name {
        "ta163" => FittedRatioDistribution::gamma(2.62, 0.721),
        "ta336" => FittedRatioDistribution::gamma(1.94, 0.741),
        other => Err(Error::NotFound(format!("no elicited prior recorded for '{other}'"))),
    }
}

/// `(a, b)` contrasts reported for each bundled dataset.
pub fn headline_contrasts(name: &str) -> Result<Vec<(usize, usize)>> {
    match name {
        "ta163" => Ok(vec![(2, 1), (3, 1)]),
        "ta336" => Ok(vec![(3, 1), (3, 4)]),
        other => Err(Error::NotFound(format!("no bundled dataset named '{other}'"))),
    }
}
