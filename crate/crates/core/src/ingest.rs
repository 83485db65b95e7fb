//! CSV cohort ingestion against a JSON schema, and the inverse export.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FeatureDescriptor, FeatureKind};
use crate::error::{Error, Result};

pub const DEFAULT_LABEL_COLUMN: &str = "label";

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".into(), "NaN".into()]
}

/// Describes the columns of a cohort CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaFile {
    pub features: Vec<FeatureDescriptor>,
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

impl SchemaFile {
    pub fn new(features: Vec<FeatureDescriptor>, label_column: impl Into<String>) -> Self {
        SchemaFile {
            features,
            label_column: label_column.into(),
            id_column: None,
            missing_tokens: default_missing_tokens(),
        }
    }

    /// Schema that reproduces `dataset` through [`ingest_csv`] after [`export_csv`].
    pub fn for_dataset(dataset: &Dataset) -> Self {
        SchemaFile {
            features: dataset.schema().to_vec(),
            label_column: dataset.label_column().unwrap_or(DEFAULT_LABEL_COLUMN).to_string(),
            id_column: dataset.id_column().map(str::to_string),
            missing_tokens: default_missing_tokens(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::InvalidArgument(format!("schema lists `{}` twice", f.name)));
            }
            if f.kind == FeatureKind::Numeric && !f.levels.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "numeric feature `{}` declares levels",
                    f.name
                )));
            }
        }
        if names.contains(self.label_column.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "label column `{}` is also a feature",
                self.label_column
            )));
        }
        if let Some(id) = &self.id_column {
            if names.contains(id.as_str()) || *id == self.label_column {
                return Err(Error::InvalidArgument(format!("id column `{id}` clashes")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: SchemaFile = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn ingest_csv(path: &Path, schema: &SchemaFile) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Parses CSV from any reader. Tokens are trimmed of surrounding whitespace;
/// numbers use `.` as the decimal point and no grouping separators.
pub fn read_csv<R: Read>(reader: R, schema: &SchemaFile) -> Result<Dataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let mut position = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if position.insert(h.as_str(), i).is_some() {
            return Err(Error::DuplicateHeader(h.clone()));
        }
    }
    let known: HashSet<&str> = schema
        .features
        .iter()
        .map(|f| f.name.as_str())
        .chain(std::iter::once(schema.label_column.as_str()))
        .chain(schema.id_column.as_deref())
        .collect();
    if let Some(unknown) = header.iter().find(|h| !known.contains(h.as_str())) {
        return Err(Error::UnknownColumn(unknown.clone()));
    }
    if let Some(missing) = known.iter().find(|k| !position.contains_key(*k)) {
        // Report in schema order for a stable message.
        let first = schema
            .features
            .iter()
            .map(|f| f.name.as_str())
            .chain(std::iter::once(schema.label_column.as_str()))
            .chain(schema.id_column.as_deref())
            .find(|k| !position.contains_key(k))
            .unwrap_or(missing);
        return Err(Error::MissingColumn(first.to_string()));
    }

    let missing_tokens: HashSet<&str> = schema.missing_tokens.iter().map(String::as_str).collect();
    let feature_pos: Vec<usize> = schema.features.iter().map(|f| position[f.name.as_str()]).collect();
    let label_pos = position[schema.label_column.as_str()];
    let id_pos = schema.id_column.as_deref().map(|c| position[c]);

    let mut levels: Vec<Vec<String>> = schema.features.iter().map(|f| f.levels.clone()).collect();
    let fixed_levels: Vec<bool> = schema.features.iter().map(|f| !f.levels.is_empty()).collect();
    let mut level_index: Vec<HashMap<String, usize>> = levels
        .iter()
        .map(|ls| ls.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect())
        .collect();

    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.features.len()];
    let mut labels = Vec::new();
    let mut row_ids = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (j, desc) in schema.features.iter().enumerate() {
            let token = record.get(feature_pos[j]).unwrap_or("").trim();
            if missing_tokens.contains(token) {
                cells[j].push(None);
                continue;
            }
            let value = match desc.kind {
                FeatureKind::Numeric => parse_number(token).ok_or_else(|| Error::ParseNumber {
                    row,
                    column: desc.name.clone(),
                    token: token.to_string(),
                })?,
                FeatureKind::Categorical => match level_index[j].get(token) {
                    Some(&code) => code as f64,
                    None if fixed_levels[j] => {
                        return Err(Error::UnknownCategory {
                            row,
                            column: desc.name.clone(),
                            token: token.to_string(),
                        })
                    }
                    None => {
                        let code = levels[j].len();
                        levels[j].push(token.to_string());
                        level_index[j].insert(token.to_string(), code);
                        code as f64
                    }
                },
            };
            cells[j].push(Some(value));
        }
        let label_token = record.get(label_pos).unwrap_or("").trim();
        labels.push(match parse_number(label_token) {
            Some(v) if v == 0.0 => 0u8,
            Some(v) if v == 1.0 => 1u8,
            _ => return Err(Error::InvalidLabel { row, token: label_token.to_string() }),
        });
        row_ids.push(match id_pos {
            Some(p) => record.get(p).unwrap_or("").to_string(),
            None => row.to_string(),
        });
    }

    let features: Vec<FeatureDescriptor> = schema
        .features
        .iter()
        .zip(levels)
        .map(|(f, levels)| FeatureDescriptor { levels, ..f.clone() })
        .collect();
    let columns = cells.iter().map(|c| Column::from_options(c)).collect();
    Ok(Dataset::new(features, columns, Some(labels), row_ids)?
        .with_source_columns(Some(schema.label_column.clone()), schema.id_column.clone()))
}

fn parse_number(token: &str) -> Option<f64> {
    // Rust's float grammar also accepts "inf"/"nan"; cohort values must be finite.
    let looks_numeric = !token.is_empty()
        && token.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
    if !looks_numeric {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn export_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, file)
}

/// Writes `dataset` as CSV: optional id column, features, then the label.
/// Masked cells become empty strings; categorical codes become their labels.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = dataset.id_column() {
        header.push(id);
    }
    header.extend(dataset.schema().iter().map(|f| f.name.as_str()));
    let labels = dataset.labels();
    if labels.is_some() {
        header.push(dataset.label_column().unwrap_or(DEFAULT_LABEL_COLUMN));
    }
    w.write_record(&header)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..dataset.n_rows() {
        record.clear();
        if dataset.id_column().is_some() {
            record.push(dataset.row_ids()[i].clone());
        }
        for (desc, col) in dataset.schema().iter().zip(dataset.columns()) {
            record.push(match col.get(i) {
                None => String::new(),
                Some(v) => match desc.kind {
                    FeatureKind::Numeric => format_number(v),
                    FeatureKind::Categorical => desc.levels[v as usize].clone(),
                },
            });
        }
        if let Some(labels) = labels {
            record.push(labels[i].to_string());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaFile {
        SchemaFile::new(
            vec![
                FeatureDescriptor::numeric("SOFA", "Severity of Illness Scores"),
                FeatureDescriptor::numeric("Serum Lactate", "Laboratory and Biochemical Markers"),
            ],
            "mortality",
        )
    }

    #[test]
    fn empty_cell_is_masked() {
        let csv = "SOFA,Serum Lactate,mortality\n5,2.1,0\n,3.4,1\n7,NA,0\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(d.n_rows(), 3);
        let sofa = d.column_by_name("SOFA").unwrap();
        assert_eq!(sofa.missing_mask(), &[false, true, false]);
        let lac = d.column_by_name("Serum Lactate").unwrap();
        assert_eq!(lac.missing_mask(), &[false, false, true]);
        assert_eq!(d.labels().unwrap(), &[0, 1, 0]);
        assert_eq!(d.row_ids(), &["0", "1", "2"]);
    }

    #[test]
    fn missing_header_names_column() {
        let csv = "SOFA,mortality\n5,0\n";
        match read_csv(csv.as_bytes(), &schema()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "Serum Lactate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_duplicate_headers() {
        let csv = "SOFA,Serum Lactate,mortality,extra\n5,1,0,9\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::UnknownColumn(c)) if c == "extra"));
        let csv = "SOFA,SOFA,Serum Lactate,mortality\n5,5,1,0\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::DuplicateHeader(_))));
    }

    #[test]
    fn bad_tokens() {
        let csv = "SOFA,Serum Lactate,mortality\n5,abc,0\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::ParseNumber { row: 0, .. })));
        let csv = "SOFA,Serum Lactate,mortality\n\"1,000\",1,0\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::ParseNumber { .. })));
        let csv = "SOFA,Serum Lactate,mortality\n5,inf,0\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::ParseNumber { .. })));
        let csv = "SOFA,Serum Lactate,mortality\n5,1,2\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(Error::InvalidLabel { .. })));
    }

    #[test]
    fn categorical_round_trip() {
        let mut s = schema();
        s.features.push(FeatureDescriptor::categorical("Sex", "Demographic and Clinical Information", vec![]));
        s.id_column = Some("stay_id".into());
        let csv = "stay_id,SOFA,Serum Lactate,Sex,mortality\na,5,2,F,0\nb,6,,M,1\nc,7,1.5,,0\n";
        let d = read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.schema()[2].levels, vec!["F", "M"]);
        let mut out = Vec::new();
        write_csv(&d, &mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.contains("b,6,,M,1"));
        let back = read_csv(out.as_slice(), &SchemaFile::for_dataset(&d)).unwrap();
        assert_eq!(back, d);
    }
}
