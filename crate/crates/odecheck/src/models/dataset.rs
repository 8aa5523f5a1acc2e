//! Observation tables: CSV with a header row, first column `time`.

use std::io::{Read, Write};
use std::path::Path;

use super::ModelError;

/// Observation times plus one column per observed quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub columns: Vec<String>,
    /// Row-major `times.len() x columns.len()`.
    pub values: Vec<f64>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, columns: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), times.len() * columns.len());
        Dataset {
            times,
            columns,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ModelError::Dataset(e.to_string()))?
            .clone();
        if headers.is_empty() || headers.get(0) != Some("time") {
            return Err(ModelError::Dataset("first column must be `time`".into()));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        if columns.is_empty() {
            return Err(ModelError::Dataset("no observable columns".into()));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| ModelError::Dataset(e.to_string()))?;
            let mut fields = record.iter();
            let t: f64 = fields
                .next()
                .ok_or_else(|| ModelError::Dataset("empty row".into()))?
                .parse()
                .map_err(|e| ModelError::Dataset(format!("bad time: {e}")))?;
            times.push(t);
            for f in fields {
                values.push(
                    f.parse()
                        .map_err(|e| ModelError::Dataset(format!("bad value: {e}")))?,
                );
            }
        }
        if values.len() != times.len() * columns.len() {
            return Err(ModelError::Dataset("ragged rows".into()));
        }
        Ok(Dataset {
            times,
            columns,
            values,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ModelError::Dataset(format!("{}: {e}", path.display())))?;
        Dataset::from_reader(file)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["time".to_string()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header)
            .map_err(|e| ModelError::Dataset(e.to_string()))?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![t.to_string()];
            for c in 0..self.columns.len() {
                row.push(self.get(i, c).to_string());
            }
            wtr.write_record(&row)
                .map_err(|e| ModelError::Dataset(e.to_string()))?;
        }
        wtr.flush().map_err(|e| ModelError::Dataset(e.to_string()))
    }
}
