use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{AttributeKind, FeatureSchema, Label, LabeledInstance};
use crate::error::{Error, Result};

/// Streaming CSV reader producing instances in file order.
///
/// Dialect: comma separated, UTF-8, mandatory header row, `.` as decimal
/// separator. Categorical cells hold level names, the label cell holds a
/// class name from the schema. Rows are numbered from 1, header excluded.
pub struct CsvStream<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    schema: FeatureSchema,
    feature_columns: Vec<(usize, String)>,
    label_column: (usize, String),
    row: usize,
}

/// Opens `path` and resolves columns. `keep_columns[i]` feeds schema
/// attribute `i`; an empty slice means "use the attribute names".
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    label_column: &str,
    keep_columns: &[String],
) -> Result<CsvStream<File>> {
    CsvStream::new(File::open(path)?, schema, label_column, keep_columns)
}

impl<R: Read> CsvStream<R> {
    pub fn new(
        reader: R,
        schema: &FeatureSchema,
        label_column: &str,
        keep_columns: &[String],
    ) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = reader.headers()?.clone();
        if headers.is_empty() {
            return Err(Error::EmptyFile);
        }
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .map(|i| (i, name.to_string()))
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let names: Vec<String> = if keep_columns.is_empty() {
            schema.attributes().iter().map(|a| a.name.clone()).collect()
        } else {
            keep_columns.to_vec()
        };
        if names.len() != schema.len() {
            return Err(Error::Config(format!(
                "{} columns kept for a schema of {} attributes",
                names.len(),
                schema.len()
            )));
        }
        let feature_columns = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
        let label_column = find(label_column)?;
        Ok(CsvStream {
            records: reader.into_records(),
            schema: schema.clone(),
            feature_columns,
            label_column,
            row: 0,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn parse(&self, record: &csv::StringRecord) -> Result<LabeledInstance> {
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();
        let parse_err = |column: &str, value: &str| Error::Parse {
            row: self.row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let mut features = Vec::with_capacity(self.feature_columns.len());
        for ((idx, name), attr) in self.feature_columns.iter().zip(self.schema.attributes()) {
            let raw = cell(*idx);
            let value = match &attr.kind {
                AttributeKind::Categorical { levels } => levels
                    .iter()
                    .position(|l| l == raw)
                    .ok_or_else(|| parse_err(name, raw))?
                    as f64,
                AttributeKind::Numeric { min, max } => {
                    let v: f64 = raw.parse().map_err(|_| parse_err(name, raw))?;
                    if !(v >= *min && v <= *max) {
                        return Err(parse_err(name, raw));
                    }
                    v
                }
            };
            features.push(value);
        }
        let raw = cell(self.label_column.0);
        let label = self
            .schema
            .classes()
            .iter()
            .position(|c| c == raw)
            .ok_or_else(|| parse_err(&self.label_column.1, raw))? as Label;
        Ok(LabeledInstance::new(self.row as u64, features, label))
    }
}

impl<R: Read> Iterator for CsvStream<R> {
    type Item = Result<LabeledInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.row += 1;
        Some(record.map_err(Error::from).and_then(|r| self.parse(&r)))
    }
}

/// Writes `instances` as `features..., label` in the dialect [`CsvStream`]
/// reads.
pub fn write_csv<W: Write>(
    writer: W,
    schema: &FeatureSchema,
    instances: impl IntoIterator<Item = LabeledInstance>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema
        .attributes()
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    header.push("label");
    out.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for z in instances {
        schema.check_instance(&z)?;
        row.clear();
        for (attr, v) in schema.attributes().iter().zip(&z.features) {
            row.push(match &attr.kind {
                AttributeKind::Categorical { levels } => levels[*v as usize].clone(),
                AttributeKind::Numeric { .. } => format!("{v:?}"),
            });
        }
        row.push(schema.classes()[z.label as usize].clone());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
