use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// The four indicator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndicatorType {
    /// Procedural justice.
    PJ,
    /// Distributive justice.
    DJ,
    /// Judicial efficiency.
    JE,
    /// Judicial characteristics.
    JC,
}

impl IndicatorType {
    pub const ALL: [IndicatorType; 4] = [
        IndicatorType::PJ,
        IndicatorType::DJ,
        IndicatorType::JE,
        IndicatorType::JC,
    ];

    pub fn parse(s: &str) -> Option<IndicatorType> {
        match s {
            "PJ" => Some(IndicatorType::PJ),
            "DJ" => Some(IndicatorType::DJ),
            "JE" => Some(IndicatorType::JE),
            "JC" => Some(IndicatorType::JC),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            IndicatorType::PJ => 0,
            IndicatorType::DJ => 1,
            IndicatorType::JE => 2,
            IndicatorType::JC => 3,
        }
    }

    pub fn from_index(i: usize) -> IndicatorType {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorType::PJ => "PJ",
            IndicatorType::DJ => "DJ",
            IndicatorType::JE => "JE",
            IndicatorType::JC => "JC",
        }
    }
}

impl fmt::Display for IndicatorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One indicator column: name plus type tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub itype: IndicatorType,
}

/// One city-year sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub city_id: String,
    pub year: i32,
    pub indicators: Vec<f64>,
    pub fdi: f64,
}

/// The tabular dataset: schema-ordered indicator columns plus an FDI
/// target per row. Immutable after construction.
#[derive(Debug, Clone)]
pub struct IndicatorTable {
    schema: Vec<SchemaColumn>,
    rows: Vec<SampleRow>,
}

impl IndicatorTable {
    /// Validate the table invariants: K finite values per row, unique
    /// (city, year) keys, and at least one indicator of every type.
    pub fn new(schema: Vec<SchemaColumn>, rows: Vec<SampleRow>) -> Result<Self> {
        let k = schema.len();
        for t in IndicatorType::ALL {
            if !schema.iter().any(|c| c.itype == t) {
                return Err(Error::Load {
                    location: "schema".into(),
                    detail: format!("no indicator of type {t}"),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (i, row) in rows.iter().enumerate() {
            if row.indicators.len() != k {
                return Err(Error::Load {
                    location: format!("row {i}"),
                    detail: format!("{} indicator values, expected {k}", row.indicators.len()),
                });
            }
            if let Some(j) = row.indicators.iter().position(|v| !v.is_finite()) {
                return Err(Error::Load {
                    location: format!("row {i}, column {}", schema[j].name),
                    detail: "non-finite indicator value".into(),
                });
            }
            if !row.fdi.is_finite() {
                return Err(Error::Load {
                    location: format!("row {i}, column fdi"),
                    detail: "non-finite target".into(),
                });
            }
            if !seen.insert((row.city_id.clone(), row.year)) {
                return Err(Error::Load {
                    location: format!("row {i}"),
                    detail: format!("duplicate (city, year) key ({}, {})", row.city_id, row.year),
                });
            }
        }
        Ok(IndicatorTable { schema, rows })
    }

    pub fn schema(&self) -> &[SchemaColumn] {
        &self.schema
    }

    pub fn rows(&self) -> &[SampleRow] {
        &self.rows
    }

    pub fn k(&self) -> usize {
        self.schema.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct years in ascending order.
    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.rows.iter().map(|r| r.year).collect();
        set.into_iter().collect()
    }

    /// Indicator column indices per type, in canonical column order.
    pub fn type_indices(&self) -> [Vec<usize>; 4] {
        let mut out: [Vec<usize>; 4] = Default::default();
        for (j, col) in self.schema.iter().enumerate() {
            out[col.itype.index()].push(j);
        }
        out
    }
}

/// Parse a schema CSV (`indicator,type` header, row order is canonical).
pub fn load_schema(path: &Path) -> Result<Vec<SchemaColumn>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "indicator" || &headers[1] != "type" {
        return Err(Error::Load {
            location: format!("{}: header", path.display()),
            detail: format!("expected 'indicator,type', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut schema = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let name = record
            .get(0)
            .ok_or_else(|| Error::Load {
                location: format!("{}: line {}", path.display(), i + 2),
                detail: "missing indicator name".into(),
            })?
            .to_string();
        let type_str = record.get(1).unwrap_or("");
        let itype = IndicatorType::parse(type_str).ok_or_else(|| Error::Load {
            location: format!("{}: column {name}", path.display()),
            detail: format!("unknown indicator type '{type_str}'"),
        })?;
        schema.push(SchemaColumn { name, itype });
    }
    Ok(schema)
}

/// Load a data CSV against a schema file.
///
/// The data header must contain `city_id`, `year`, every schema indicator,
/// and `fdi`; indicator cells are reordered into canonical schema order.
pub fn load_table(data_path: &Path, schema_path: &Path) -> Result<IndicatorTable> {
    let schema = load_schema(schema_path)?;
    let mut reader = csv::Reader::from_path(data_path)?;
    let headers = reader.headers()?.clone();

    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Load {
            location: format!("{}: header", data_path.display()),
            detail: format!("missing column '{name}'"),
        })
    };
    let city_idx = find("city_id")?;
    let year_idx = find("year")?;
    let fdi_idx = find("fdi")?;
    let mut indicator_idx = Vec::with_capacity(schema.len());
    for col in &schema {
        indicator_idx.push(find(&col.name)?);
    }
    let expected_cols = 3 + schema.len();
    if headers.len() != expected_cols {
        return Err(Error::Load {
            location: format!("{}: header", data_path.display()),
            detail: format!("{} columns, expected {expected_cols}", headers.len()),
        });
    }

    let parse_float = |cell: &str, line: usize, col: &str| -> Result<f64> {
        cell.trim().parse::<f64>().map_err(|_| Error::Load {
            location: format!("{}: line {line}, column {col}", data_path.display()),
            detail: format!("non-numeric cell '{cell}'"),
        })
    };

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let city_id = record.get(city_idx).unwrap_or("").to_string();
        let year_cell = record.get(year_idx).unwrap_or("");
        let year: i32 = year_cell.trim().parse().map_err(|_| Error::Load {
            location: format!("{}: line {line}, column year", data_path.display()),
            detail: format!("non-integer year '{year_cell}'"),
        })?;
        let mut indicators = Vec::with_capacity(schema.len());
        for (j, &idx) in indicator_idx.iter().enumerate() {
            let cell = record.get(idx).unwrap_or("");
            indicators.push(parse_float(cell, line, &schema[j].name)?);
        }
        let fdi = parse_float(record.get(fdi_idx).unwrap_or(""), line, "fdi")?;
        rows.push(SampleRow {
            city_id,
            year,
            indicators,
            fdi,
        });
    }

    IndicatorTable::new(schema, rows)
}

/// Write the schema CSV (row order = canonical column order).
pub fn write_schema(path: &Path, schema: &[SchemaColumn]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "indicator,type")?;
    for col in schema {
        writeln!(w, "{},{}", col.name, col.itype)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the data CSV in canonical column order.
pub fn write_table(path: &Path, table: &IndicatorTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let names: Vec<&str> = table.schema().iter().map(|c| c.name.as_str()).collect();
    writeln!(w, "city_id,year,{},fdi", names.join(","))?;
    for row in table.rows() {
        write!(w, "{},{}", row.city_id, row.year)?;
        for v in &row.indicators {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{}", row.fdi)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_schema() -> Vec<SchemaColumn> {
        [
            ("a", IndicatorType::PJ),
            ("b", IndicatorType::DJ),
            ("c", IndicatorType::JE),
            ("d", IndicatorType::JC),
        ]
        .into_iter()
        .map(|(n, t)| SchemaColumn {
            name: n.into(),
            itype: t,
        })
        .collect()
    }

    fn row(city: &str, year: i32, vals: [f64; 4], fdi: f64) -> SampleRow {
        SampleRow {
            city_id: city.into(),
            year,
            indicators: vals.to_vec(),
            fdi,
        }
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        let schema = dir.path().join("schema.csv");
        let table = IndicatorTable::new(
            tiny_schema(),
            vec![
                row("X", 2016, [0.1, 0.2, 0.3, 0.4], 1.5),
                row("Y", 2016, [0.9, 0.8, 0.7, 0.6], -2.25),
            ],
        )
        .unwrap();
        write_schema(&schema, table.schema()).unwrap();
        write_table(&data, &table).unwrap();
        let loaded = load_table(&data, &schema).unwrap();
        assert_eq!(loaded.k(), 4);
        assert_eq!(loaded.rows(), table.rows());
        assert_eq!(loaded.schema(), table.schema());
    }

    #[test]
    fn unknown_type_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let schema = dir.path().join("schema.csv");
        std::fs::write(&schema, "indicator,type\na,PJ\nb,XX\n").unwrap();
        let err = load_schema(&schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b") && msg.contains("XX"), "{msg}");
    }

    #[test]
    fn duplicate_city_year_rejected() {
        let err = IndicatorTable::new(
            tiny_schema(),
            vec![
                row("X", 2016, [0.0; 4], 0.0),
                row("X", 2016, [1.0; 4], 1.0),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn missing_type_block_rejected() {
        let schema: Vec<SchemaColumn> = [("a", IndicatorType::PJ), ("b", IndicatorType::PJ)]
            .into_iter()
            .map(|(n, t)| SchemaColumn {
                name: n.into(),
                itype: t,
            })
            .collect();
        let err = IndicatorTable::new(
            schema,
            vec![SampleRow {
                city_id: "X".into(),
                year: 2016,
                indicators: vec![0.0, 0.0],
                fdi: 0.0,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("no indicator of type"));
    }

    #[test]
    fn non_numeric_cell_located() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.csv");
        let schema = dir.path().join("schema.csv");
        std::fs::write(&schema, "indicator,type\na,PJ\nb,DJ\nc,JE\nd,JC\n").unwrap();
        std::fs::write(
            &data,
            "city_id,year,a,b,c,d,fdi\nX,2016,0.1,oops,0.3,0.4,1.0\n",
        )
        .unwrap();
        let err = load_table(&data, &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("column b"), "{msg}");
    }
}
