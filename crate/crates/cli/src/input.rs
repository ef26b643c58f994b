//! Long-format CSV input: `center,group,value` (group optional).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use fedstat::{FedError, GroupedSampleF64};

#[derive(Debug, Deserialize)]
struct Row {
    center: String,
    #[serde(default)]
    group: Option<String>,
    value: f64,
}

/// Parse failure with the offending location.
#[derive(Debug)]
pub struct ParseError(pub String);

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn parse_group(raw: Option<&str>, line: u64) -> Result<bool, ParseError> {
    match raw.map(str::trim).map(str::to_ascii_lowercase).as_deref() {
        None | Some("") | Some("x") => Ok(false),
        Some("y") => Ok(true),
        Some(other) => Err(ParseError(format!(
            "line {line}: group must be x or y, got {other:?}"
        ))),
    }
}

/// Reads a dataset from `path`, or stdin when `path` is `-`.
pub fn read_dataset(path: &Path) -> Result<Vec<GroupedSampleF64>, ParseError> {
    let mut text = String::new();
    if path == Path::new("-") {
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| ParseError(format!("stdin: {e}")))?;
    } else {
        text = std::fs::read_to_string(path)
            .map_err(|e| ParseError(format!("{}: {e}", path.display())))?;
    }
    parse_dataset(&text)
}

/// Groups rows by center, keeping first-appearance order.
pub fn parse_dataset(text: &str) -> Result<Vec<GroupedSampleF64>, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| ParseError(format!("header: {e}")))?
        .clone();
    for needed in ["center", "value"] {
        if !headers.iter().any(|h| h == needed) {
            return Err(ParseError(format!(
                "missing column {needed:?}; expected center[,group],value"
            )));
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut data: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = rec.map_err(|e| ParseError(format!("line {line}: {e}")))?;
        if !row.value.is_finite() {
            return Err(ParseError(format!("line {line}: value must be finite")));
        }
        let is_y = parse_group(row.group.as_deref(), line)?;
        let entry = data.entry(row.center.clone()).or_insert_with(|| {
            order.push(row.center.clone());
            (Vec::new(), Vec::new())
        });
        if is_y {
            entry.1.push(row.value);
        } else {
            entry.0.push(row.value);
        }
    }
    if order.is_empty() {
        return Err(ParseError("dataset has no rows".into()));
    }
    order
        .into_iter()
        .map(|c| {
            let (x, y) = data.remove(&c).expect("center recorded");
            GroupedSampleF64::new(c, x, y).map_err(|e: FedError| ParseError(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_rows_by_center() {
        let d = parse_dataset("center,group,value\na,x,1\nb,y,2\na,y,3.5\na,x,0\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].center_id, "a");
        assert_eq!(d[0].x, vec![0.0, 1.0]);
        assert_eq!(d[0].y, vec![3.5]);
        assert_eq!(d[1].y, vec![2.0]);
    }

    #[test]
    fn group_column_is_optional() {
        let d = parse_dataset("center,value\nc,1\nc,2\n").unwrap();
        assert_eq!(d[0].x.len(), 2);
        assert!(d[0].y.is_empty());
    }

    #[test]
    fn reports_bad_rows() {
        assert!(parse_dataset("center,value\nc,abc\n")
            .unwrap_err()
            .0
            .contains("line 2"));
        assert!(parse_dataset("center,group,value\nc,z,1\n")
            .unwrap_err()
            .0
            .contains("x or y"));
        assert!(parse_dataset("centre,value\nc,1\n").is_err());
        assert!(parse_dataset("center,value\n").is_err());
    }
}
