//! Flat key-value text format shared by configuration, potential, grid and
//! checkpoint files.
//!
//! ```text
//! # comment
//! key = value
//! [section]
//! other.key = value with spaces
//! ```
//!
//! Sections listed as raw keep their lines verbatim (used for ASCII maps).
//! Every error carries the byte offset of the offending line.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// Byte offset of the start of the line.
    pub offset: usize,
}

impl Entry {
    pub fn parse<T: FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| Error::parse(self.offset, format!("cannot parse value {:?} for key {:?}", self.value, self.key)))
    }

    pub fn parse_list<T: FromStr>(&self) -> Result<Vec<T>> {
        self.value
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::parse(self.offset, format!("cannot parse list item {t:?} for key {:?}", self.key)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    /// Empty for the leading unnamed section.
    pub name: String,
    pub offset: usize,
    pub entries: Vec<Entry>,
    /// Verbatim lines (with offsets) for raw sections.
    pub lines: Vec<(usize, String)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| {
            let label = if self.name.is_empty() { String::from("header") } else { format!("[{}]", self.name) };
            Error::parse(self.offset, format!("missing key {key:?} in {label}"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub sections: Vec<Section>,
    /// Total input length, used as the offset for end-of-input errors.
    pub len: usize,
}

impl Document {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn root(&self) -> &Section {
        &self.sections[0]
    }

    pub fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::parse(self.len, format!("missing section [{name}]")))
    }
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses a document. Sections named in `raw_sections` keep their lines
/// verbatim instead of being split into key-value pairs.
pub fn parse(text: &str, raw_sections: &[&str]) -> Result<Document> {
    let mut doc = Document {
        sections: vec![Section::default()],
        len: text.len(),
    };
    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let current = doc.sections.last_mut().expect("root section");
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            let name = trimmed
                .strip_prefix('[')
                .and_then(|t| t.strip_suffix(']'))
                .map(str::trim)
                .filter(|n| valid_key(n))
                .ok_or_else(|| Error::parse(line_offset, format!("malformed section header {trimmed:?}")))?;
            if doc.sections.iter().any(|s| s.name == name) {
                return Err(Error::parse(line_offset, format!("duplicate section [{name}]")));
            }
            doc.sections.push(Section {
                name: name.to_string(),
                offset: line_offset,
                ..Section::default()
            });
            continue;
        }
        if raw_sections.contains(&current.name.as_str()) && !current.name.is_empty() {
            if !trimmed.is_empty() {
                current.lines.push((line_offset, line.to_string()));
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| Error::parse(line_offset, format!("expected `key = value`, found {trimmed:?}")))?;
        let key = key.trim();
        if !valid_key(key) {
            return Err(Error::parse(line_offset, format!("invalid key {key:?}")));
        }
        if current.get(key).is_some() {
            return Err(Error::parse(line_offset, format!("duplicate key {key:?}")));
        }
        current.entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            offset: line_offset,
        });
    }
    Ok(doc)
}

/// Formats floats with the shortest representation that round-trips exactly.
pub fn format_f64_list(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:?}").expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_offsets() {
        let text = "a = 1\n# note\n[pmd]\neta = 0.1\nname = two words\n[map]\n#..\n.S.\n";
        let doc = parse(text, &["map"]).unwrap();
        assert_eq!(doc.root().require("a").unwrap().parse::<u32>().unwrap(), 1);
        let pmd = doc.section("pmd").unwrap();
        assert_eq!(pmd.require("eta").unwrap().parse::<f64>().unwrap(), 0.1);
        assert_eq!(pmd.get("name").unwrap().value, "two words");
        assert_eq!(pmd.get("eta").unwrap().offset, text.find("eta").unwrap());
        let map = doc.section("map").unwrap();
        assert_eq!(map.lines.iter().map(|l| l.1.as_str()).collect::<Vec<_>>(), vec!["#..", ".S."]);
    }

    #[test]
    fn reports_byte_offsets() {
        let text = "a = 1\nbroken line\n";
        match parse(text, &[]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        let doc = parse("x = nope\n", &[]).unwrap();
        assert!(matches!(doc.root().require("x").unwrap().parse::<f64>(), Err(Error::Parse { offset: 0, .. })));
        assert!(parse("a = 1\na = 2\n", &[]).is_err());
        assert!(parse("[s]\n[s]\n", &[]).is_err());
        assert!(parse("[bad name]\n", &[]).is_err());
    }

    #[test]
    fn float_lists_round_trip() {
        let values = [0.1, -1e-300, 1.0 / 3.0, f64::MAX, 5e-324, 0.0];
        let entry = Entry {
            key: "p".into(),
            value: format_f64_list(&values),
            offset: 0,
        };
        let back: Vec<f64> = entry.parse_list().unwrap();
        assert_eq!(back.len(), values.len());
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
