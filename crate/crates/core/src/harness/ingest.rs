//! CSV ingestion.

use std::path::Path;

use ndarray::Array2;

use crate::data::{Dataset, Standardizer};
use crate::error::{Error, Result};

/// Reads a headed CSV file, takes `label_column` as the binary target and
/// every other column as a numeric feature. Features are returned raw.
pub fn read_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    read_csv_from(file, label_column)
}

/// [`read_csv`] followed by z-scoring every feature column.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let raw = read_csv(path, label_column)?;
    Standardizer::fit(raw.features()).transform_dataset(&raw)
}

pub fn read_csv_from(input: impl std::io::Read, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(Error::InvalidData("empty file".into()));
    }
    let label_at = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::InvalidData(format!("label column '{label_column}' not found in header")))?;
    let names: Vec<String> =
        header.iter().enumerate().filter(|&(j, _)| j != label_at).map(|(_, h)| h.to_string()).collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = r + 2;
        if record.len() != header.len() {
            return Err(Error::InvalidData(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_at {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidData(format!("line {line}, column '{}': '{cell}' is not numeric", &header[j]))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!(
                    "line {line}, column '{}': non-finite value {cell}",
                    &header[j]
                )));
            }
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let labels = encode_labels(&raw_labels)?;
    let features =
        Array2::from_shape_vec((labels.len(), names.len()), values).map_err(|e| Error::InvalidData(e.to_string()))?;
    Dataset::new(features, labels, names)
}

/// Maps a label column with at most two distinct values onto `{0, 1}`.
///
/// Numeric labels `0`/`1` keep their meaning; any other pair is ordered
/// (numerically when both parse, else lexically) and mapped to 0 and 1.
fn encode_labels(raw: &[String]) -> Result<Vec<u8>> {
    let mut distinct: Vec<&str> = raw.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 2 {
        return Err(Error::InvalidData(format!(
            "label column is not binary: {} distinct values ({})",
            distinct.len(),
            distinct.iter().take(5).cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
    let positive: Option<&str> = match (&numeric, distinct.len()) {
        (Some(nums), _) if nums.iter().all(|&v| v == 0.0 || v == 1.0) => {
            return raw.iter().map(|s| Ok(u8::from(s.parse::<f64>().unwrap_or(0.0) == 1.0))).collect();
        }
        (Some(nums), 2) => Some(if nums[0] > nums[1] { distinct[0] } else { distinct[1] }),
        (None, 2) => Some(distinct[1]),
        _ => None,
    };
    let positive =
        positive.ok_or_else(|| Error::InvalidData(format!("single label value '{}' is not 0 or 1", distinct[0])))?;
    Ok(raw.iter().map(|s| u8::from(s == positive)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reads_fixture_and_standardizes() {
        let text = "a,b,y\n1,10,0\n2,20,1\n3,30,1\n";
        let raw = read_csv_from(text.as_bytes(), "y").unwrap();
        assert_eq!(raw.features(), array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        assert_eq!(raw.labels(), &[0, 1, 1]);
        assert_eq!(raw.column_names(), &["a", "b"]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, text).unwrap();
        let z = load_csv(&path, "y").unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        for (got, want) in z.features().column(0).iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn label_column_anywhere_and_crlf() {
        let lf = read_csv_from("y,a\nyes,1.5\nno,2\n".as_bytes(), "y").unwrap();
        let crlf = read_csv_from("y,a\r\nyes,1.5\r\nno,2\r\n".as_bytes(), "y").unwrap();
        assert_eq!(lf, crlf);
        assert_eq!(lf.labels(), &[1, 0]);
    }

    #[test]
    fn numeric_label_pairs() {
        let d = read_csv_from("a,y\n0,-1\n1,1\n2,-1\n".as_bytes(), "y").unwrap();
        assert_eq!(d.labels(), &[0, 1, 0]);
        let d = read_csv_from("a,y\n0,1\n1,1\n".as_bytes(), "y").unwrap();
        assert_eq!(d.labels(), &[1, 1]);
    }

    #[test]
    fn rejections() {
        let three = read_csv_from("a,y\n1,0\n2,1\n3,2\n".as_bytes(), "y").unwrap_err();
        assert!(three.to_string().contains("not binary"), "{three}");
        let text = read_csv_from("a,y\n1,0\nfoo,1\n".as_bytes(), "y").unwrap_err();
        assert!(text.to_string().contains("line 3"), "{text}");
        let nan = read_csv_from("a,y\n1,0\nNaN,1\n".as_bytes(), "y").unwrap_err();
        assert!(nan.to_string().contains("non-finite"), "{nan}");
        assert!(read_csv_from("".as_bytes(), "y").is_err());
        assert!(read_csv_from("a,y\n".as_bytes(), "y").is_err());
        assert!(read_csv_from("a,b\n1,0\n".as_bytes(), "y").is_err());
        assert!(read_csv_from("a,y\n1,0,3\n".as_bytes(), "y").is_err());
    }
}
