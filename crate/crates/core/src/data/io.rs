//! Versioned JSON dataset files.
//!
//! Numbers are written with the shortest decimal text that parses back to the
//! same `f64`, so a write/read cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MultiviewSample, Skeleton};

pub const DATASET_FORMAT: &str = "mvpose-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub format_version: String,
    pub skeleton: Skeleton,
    pub samples: Vec<MultiviewSample>,
}

impl Dataset {
    pub fn new(skeleton: Skeleton, samples: Vec<MultiviewSample>) -> Self {
        Self {
            format_version: DATASET_FORMAT.to_string(),
            skeleton,
            samples,
        }
    }
}

/// Parses `text` as JSON of type `T` after checking its `format_version` field.
pub(crate) fn parse_versioned<T: for<'de> Deserialize<'de>>(
    text: &str,
    expected: &str,
) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>")
        .to_string();
    if found != expected {
        return Err(Error::Version {
            found,
            expected: expected.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        column: 0,
        message: e.to_string(),
    })
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(dataset).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let dataset: Dataset = parse_versioned(&text, DATASET_FORMAT)?;
    dataset.skeleton.validate()?;
    Ok(dataset)
}

/// Subject split for real recordings; synthetic data uses motion seeds as subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SubjectSplit {
    /// SportsPose protocol: validation S04/S07/S09/S14/S22, test S06/S12/S19, the rest train.
    pub fn sportspose() -> Self {
        let to_vec = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            train: Vec::new(),
            validation: to_vec(&["S04", "S07", "S09", "S14", "S22"]),
            test: to_vec(&["S06", "S12", "S19"]),
        }
    }

    /// Subjects listed in none of the three lists count as training subjects when `train` is empty.
    pub fn role_of(&self, subject: &str) -> &'static str {
        let has = |list: &[String]| list.iter().any(|s| s == subject);
        if has(&self.test) {
            "test"
        } else if has(&self.validation) {
            "validation"
        } else if self.train.is_empty() || has(&self.train) {
            "train"
        } else {
            "unused"
        }
    }
}
