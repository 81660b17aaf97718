//! Expectation-based zero-inflated Poisson (EB-ZIP) space-time scan
//! statistic for prospective outbreak detection.
//!
//! Time is counted backwards throughout: period `t = 1` is the most recent.

pub mod error;
pub mod inference;
pub mod io;
pub mod rng;
pub mod scan;
pub mod sim;
pub mod zip;
pub mod zones;

pub use error::{Error, Result};
pub use scan::{
    scan, BaselineGrid, Cell, CountGrid, EmOptions, ScanOptions, ScanResult, StatisticKind, Window, WindowScore,
};
pub use zip::ZipParams;
pub use zones::{AdjacencyRelation, DistanceMatrix, Zone, ZoneSet};
