//! Rectangular observations with an optional grouping column.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupColumn {
    pub name: String,
    /// Distinct labels in order of first appearance.
    pub labels: Vec<String>,
    /// Per-row index into `labels`.
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    group: Option<GroupColumn>,
    rows: usize,
}

impl Dataset {
    /// Builds a dataset from numeric columns and an optional column of group labels.
    pub fn new(columns: Vec<(String, Vec<f64>)>, group: Option<(String, Vec<String>)>) -> Result<Self> {
        let rows = columns.first().map(|c| c.1.len()).or(group.as_ref().map(|g| g.1.len())).unwrap_or(0);
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, col) in columns {
            if col.len() != rows {
                return Err(Error::Data(format!("column `{name}` has {} rows, expected {rows}", col.len())));
            }
            if let Some(r) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column `{name}` row {r} is missing or not finite")));
            }
            if names.contains(&name) {
                return Err(Error::Data(format!("duplicate column `{name}`")));
            }
            names.push(name);
            values.push(col);
        }
        let group = match group {
            None => None,
            Some((name, labels)) => {
                if labels.len() != rows {
                    return Err(Error::Data(format!("group column `{name}` has {} rows, expected {rows}", labels.len())));
                }
                let mut index: HashMap<String, usize> = HashMap::new();
                let mut distinct = Vec::new();
                let mut ids = Vec::with_capacity(rows);
                for lab in labels {
                    if lab.is_empty() {
                        return Err(Error::Data(format!("group column `{name}` has an empty label")));
                    }
                    let next = distinct.len();
                    let id = *index.entry(lab.clone()).or_insert_with(|| {
                        distinct.push(lab);
                        next
                    });
                    ids.push(id);
                }
                Some(GroupColumn { name, labels: distinct, ids })
            }
        };
        Ok(Self { names, columns: values, group, rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.columns[k].as_slice())
    }

    pub fn group(&self) -> Option<&GroupColumn> {
        self.group.as_ref()
    }

    pub fn n_groups(&self) -> usize {
        self.group.as_ref().map_or(0, |g| g.labels.len())
    }

    /// Reads CSV with a header row. Every column except `group_column` must be numeric.
    pub fn from_csv<R: Read>(reader: R, group_column: Option<&str>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let gidx = match group_column {
            Some(g) => Some(header.iter().position(|h| h == g).ok_or_else(|| Error::MissingColumn(g.to_string()))?),
            None => None,
        };
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        let mut labels = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                if Some(k) == gidx {
                    labels.push(field.to_string());
                } else {
                    let v: f64 = field.trim().parse().map_err(|_| {
                        Error::Data(format!("row {} column `{}`: `{field}` is not a number", r + 1, header[k]))
                    })?;
                    cols[k].push(v);
                }
            }
        }
        let columns: Vec<(String, Vec<f64>)> = header
            .iter()
            .cloned()
            .zip(cols)
            .enumerate()
            .filter(|(k, _)| Some(*k) != gidx)
            .map(|(_, c)| c)
            .collect();
        let group = gidx.map(|k| (header[k].clone(), labels));
        Self::new(columns, group)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if let Some(g) = &self.group {
            header.push(&g.name);
        }
        w.write_record(&header)?;
        for r in 0..self.rows {
            let mut rec: Vec<String> = self.columns.iter().map(|c| format!("{}", c[r])).collect();
            if let Some(g) = &self.group {
                rec.push(g.labels[g.ids[r]].clone());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
