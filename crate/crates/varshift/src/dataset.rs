//! External datasets from CSV files.

use std::path::Path;

use varshift_core::data::Dataset;
use varshift_core::Tensor;

use crate::error::{AppError, AppResult};

/// Reads a CSV file with a header row whose last column is `label` (a
/// class index starting at 0) and whose other columns are numeric features.
pub fn load_csv_dataset(path: &Path) -> AppResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_csv_dataset(&text).map_err(|e| AppError::invalid(format!("{}: {e}", path.display())))
}

pub fn parse_csv_dataset(text: &str) -> Result<Dataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.len() < 2 || header.get(header.len() - 1) != Some("label") {
        return Err("the last column must be named `label` after at least one feature".into());
    }
    let d = header.len() - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let row = i + 2;
        for field in record.iter().take(d) {
            let v = field
                .parse::<f64>()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| format!("line {row}: `{field}` is not a finite number"))?;
            features.push(v);
        }
        let label = &record[d];
        labels.push(
            label
                .parse::<usize>()
                .map_err(|_| format!("line {row}: label `{label}` is not a class index"))?,
        );
    }
    if labels.is_empty() {
        return Err("no data rows".into());
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let x = Tensor::new(vec![labels.len(), d], features).map_err(|e| e.to_string())?;
    Dataset::new(x, labels, num_classes).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_features_and_labels() {
        let ds = parse_csv_dataset("a,b,label\n1.0,2.0,0\n3.5, -1,2\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.features().data(), &[1.0, 2.0, 3.5, -1.0]);
        assert_eq!(ds.labels(), &[0, 2]);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "",
            "a,b\n1,2\n",
            "label\n1\n",
            "a,label\n",
            "a,label\nx,1\n",
            "a,label\n1,-1\n",
            "a,label\n1,0,5\n",
            "a,label\ninf,0\n",
        ] {
            assert!(parse_csv_dataset(text).is_err(), "{text:?}");
        }
    }
}
