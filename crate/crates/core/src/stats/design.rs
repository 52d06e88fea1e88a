use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ContextGrid;

/// Column names of the Stage-2 design, intercept first.
pub const PREDICTORS: [&str; 6] = [
    "Intercept",
    "Time-to-collision",
    "Vehicle behind",
    "Passenger urgency",
    "Following time",
    "Explanation length",
];

const RANGE_EPS: f64 = 1e-9;

/// One raw Stage-2 observation as written to `rows.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Row {
    pub ttc: Option<f64>,
    pub behind: u8,
    pub urgency: u8,
    pub following: f64,
    pub length: u8,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub y: f64,
    pub x: Vec<f64>,
}

/// Min-max scaling of the two continuous predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ttc_min: f64,
    pub ttc_max: f64,
    pub following_min: f64,
    pub following_max: f64,
}

impl Normalization {
    pub fn from_grid(grid: &ContextGrid) -> Result<Self> {
        let (ttc_min, ttc_max) = grid.ttc_range();
        let (following_min, following_max) = grid.following_range();
        if ttc_max - ttc_min <= 0.0 || following_max - following_min <= 0.0 {
            return Err(Error::Config(
                "normalization needs at least two distinct ttc and following levels".into(),
            ));
        }
        Ok(Normalization {
            ttc_min,
            ttc_max,
            following_min,
            following_max,
        })
    }

    pub fn ttc(&self, ttc: f64) -> Result<f64> {
        scale("ttc", ttc, self.ttc_min, self.ttc_max)
    }

    pub fn following(&self, following: f64) -> Result<f64> {
        scale("following", following, self.following_min, self.following_max)
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::from_grid(&ContextGrid::default()).expect("default grid spans both ranges")
    }
}

fn scale(name: &str, value: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(value >= lo - RANGE_EPS && value <= hi + RANGE_EPS) {
        return Err(Error::Validation(format!(
            "{name} = {value} lies outside the design range [{lo}, {hi}]"
        )));
    }
    Ok(((value - lo) / (hi - lo)).clamp(0.0, 1.0))
}

fn indicator(name: &str, value: u8) -> Result<f64> {
    match value {
        0 => Ok(0.0),
        1 => Ok(1.0),
        other => Err(Error::Validation(format!("{name} must be 0 or 1, got {other}"))),
    }
}

pub fn design_row(row: &Stage2Row, norm: &Normalization) -> Result<DesignRow> {
    let ttc = row.ttc.ok_or_else(|| {
        Error::Validation("ttc is absent; every design row needs an oncoming vehicle".into())
    })?;
    Ok(DesignRow {
        y: indicator("y", row.y)?,
        x: vec![
            1.0,
            norm.ttc(ttc)?,
            indicator("behind", row.behind)?,
            indicator("urgency", row.urgency)?,
            norm.following(row.following)?,
            indicator("length", row.length)?,
        ],
    })
}

pub fn build_design(rows: &[Stage2Row], norm: &Normalization) -> Result<Vec<DesignRow>> {
    rows.iter().map(|r| design_row(r, norm)).collect()
}
