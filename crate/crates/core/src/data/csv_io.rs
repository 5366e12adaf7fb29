//! CSV schema: feature columns, `y_b`, one `c_<name>` per concept and an
//! optional `y` task label (0/1). Every other column is a feature.

use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

const SCORE_COLUMN: &str = "y_b";
const LABEL_COLUMN: &str = "y";
const CONCEPT_PREFIX: &str = "c_";

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Concept names in header order, taken from the `c_<name>` columns.
pub fn csv_concept_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?;
    Ok(headers
        .iter()
        .filter_map(|h| h.strip_prefix(CONCEPT_PREFIX).map(str::to_owned))
        .collect())
}

/// Loads and validates a dataset for the given concepts.
pub fn load_csv(path: impl AsRef<Path>, concept_names: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = open(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
    };
    let score_col = find(SCORE_COLUMN)?;
    let concept_cols = concept_names
        .iter()
        .map(|c| find(&format!("{CONCEPT_PREFIX}{c}")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(h) = headers.iter().enumerate().find(|(i, h)| {
        h.starts_with(CONCEPT_PREFIX) && !concept_cols.contains(i)
    }) {
        return Err(Error::Data(format!("column `{}` names no declared concept", h.1)));
    }
    let label_col = headers.iter().position(|h| h == LABEL_COLUMN);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|i| *i != score_col && !concept_cols.contains(i) && Some(*i) != label_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut feats = Vec::new();
    let mut scores = Vec::new();
    let mut concepts = Vec::new();
    let mut labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        // header is line 1; data rows are reported 1-based
        let row = r + 1;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column `{}`: `{raw}` is not a number",
                    headers[i]
                ))
            })
        };
        let unit = |i: usize| -> Result<f64> {
            let v = cell(i)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!(
                    "row {row}, column `{}`: {v} outside [0, 1]",
                    headers[i]
                )));
            }
            Ok(v)
        };
        for &i in &feature_cols {
            let v = cell(i)?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {row}, column `{}`: non-finite value",
                    headers[i]
                )));
            }
            feats.push(v);
        }
        scores.push(unit(score_col)?);
        for &i in &concept_cols {
            concepts.push(unit(i)?);
        }
        if let Some(i) = label_col {
            let v = cell(i)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!("row {row}, column `y`: label must be 0 or 1")));
            }
            labels.push(v == 1.0);
        }
    }
    let m = scores.len();
    Dataset::new(
        Array2::from_shape_vec((m, feature_cols.len()), feats).expect("row-major features"),
        feature_cols.iter().map(|&i| headers[i].clone()).collect(),
        scores,
        Array2::from_shape_vec((m, concept_cols.len()), concepts).expect("row-major concepts"),
        concept_names.to_vec(),
        label_col.map(|_| labels),
    )
}

/// Writes `data` in the schema read by [`load_csv`]. Numbers use the
/// shortest representation that round-trips exactly.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = data.feature_names.clone();
    header.push(SCORE_COLUMN.into());
    header.extend(data.concept_names.iter().map(|c| format!("{CONCEPT_PREFIX}{c}")));
    if data.labels.is_some() {
        header.push(LABEL_COLUMN.into());
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.scores[i].to_string());
        rec.extend(data.concepts.row(i).iter().map(|v| v.to_string()));
        if let Some(l) = &data.labels {
            rec.push(if l[i] { "1".into() } else { "0".into() });
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn a() -> Vec<String> {
        vec!["A".into()]
    }

    #[test]
    fn loads_three_rows() {
        let f = file("f1,f2,y_b,c_A\n1,2,0.5,1\n3,4,0.1,0\n5,6,0.9,0.3\n");
        let d = load_csv(f.path(), &a()).unwrap();
        assert_eq!((d.len(), d.n_features(), d.n_concepts()), (3, 2, 1));
        assert_eq!(d.scores, vec![0.5, 0.1, 0.9]);
        assert_eq!(csv_concept_names(f.path()).unwrap(), a());
    }

    #[test]
    fn missing_score_column() {
        let f = file("f1,c_A\n1,1\n");
        let err = load_csv(f.path(), &a()).unwrap_err().to_string();
        assert!(err.contains("y_b"), "{err}");
    }

    #[test]
    fn out_of_range_concept_names_row() {
        let f = file("f1,y_b,c_A\n1,0.5,0.2\n1,0.5,1.2\n");
        let err = load_csv(f.path(), &a()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("c_A"), "{err}");
    }

    #[test]
    fn non_numeric_cell() {
        let f = file("f1,y_b,c_A\nabc,0.5,0.2\n");
        assert!(load_csv(f.path(), &a()).unwrap_err().to_string().contains("not a number"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv("/nonexistent/file.csv", &a()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn optional_labels_and_roundtrip() {
        let f = file("f1,y_b,c_A,y\n0.25,0.5,0.2,1\n-3,0.125,0.7,0\n");
        let d = load_csv(f.path(), &a()).unwrap();
        assert_eq!(d.labels, Some(vec![true, false]));
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, out.path()).unwrap();
        assert_eq!(load_csv(out.path(), &a()).unwrap(), d);
    }
}
