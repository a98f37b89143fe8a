use crate::error::{GradselError, Result};

/// A CSV table with leading `# key=value` metadata lines. The first line
/// is always `# schema=1`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub const SCHEMA_VERSION: u32 = 1;

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { meta: Vec::new(), columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(GradselError::DimensionMismatch { what: "table row", expected: self.columns.len(), got: row.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# schema={SCHEMA_VERSION}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| GradselError::Format(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| GradselError::Format(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| GradselError::Format(e.to_string()))?);
        Ok(out)
    }
}

/// Fixed-precision float formatting so output bytes are reproducible.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.9e}")
}
