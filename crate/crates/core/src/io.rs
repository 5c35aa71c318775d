//! JSON documents on disk.
//!
//! Models, beliefs, sources and distortion matrices share one format family:
//! a JSON object holding the dimensions plus flattened row-major arrays.
//!
//! ```json
//! {"num_states": 2, "num_actions": 1, "horizon": 3,
//!  "rewards": [0.0, 1.0],
//!  "transitions": [0.0, 1.0, 1.0, 0.0],
//!  "initial_dist": [1.0, 0.0]}
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
