//! Versioned JSON persistence with byte-offset parse errors.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parses a JSON document whose top-level object carries `schema_version`.
/// A different version is refused before the body is interpreted.
pub fn from_json<T: DeserializeOwned>(text: &str, expected_version: u32) -> Result<T> {
    let header: Header = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    if header.schema_version != expected_version {
        return Err(Error::Version {
            found: header.schema_version.to_string(),
            expected: expected_version,
        });
    }
    serde_json::from_str(text).map_err(|e| json_error(text, &e))
}

fn json_error(text: &str, err: &serde_json::Error) -> Error {
    Error::parse(byte_offset(text, err.line(), err.column()), err.to_string())
}

/// Converts serde_json's 1-based line and column to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        schema_version: u32,
        x: f64,
    }

    #[test]
    fn round_trip_and_version_check() {
        let doc = Doc {
            schema_version: 3,
            x: 0.1 + 0.2,
        };
        let text = to_json(&doc).unwrap();
        assert_eq!(from_json::<Doc>(&text, 3).unwrap(), doc);
        assert!(matches!(from_json::<Doc>(&text, 4), Err(Error::Version { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let text = "{\n  \"schema_version\": 3,\n  \"x\": ";
        match from_json::<Doc>(text, 3) {
            Err(Error::Parse { offset, .. }) => assert!(offset <= text.len() && offset > 20),
            other => panic!("{other:?}"),
        }
    }
}
