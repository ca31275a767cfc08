//! Tabular schema, CSV ingestion and the `[0,1]` feature encoding.
//!
//! Encoded rows lay out the non-label columns in schema order (continuous
//! columns scaled to `[0,1]`, categorical columns one-hot), followed by the
//! one-hot label block when a label column is set.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const MAX_CATEGORIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous { range: [f64; 2] },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous { range: [lo, hi] },
        }
    }

    pub fn categorical<S: AsRef<str>>(name: &str, categories: &[S]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.iter().map(|c| c.as_ref().to_string()).collect(),
            },
        }
    }

    fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Continuous { .. } => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    #[serde(default)]
    pub label_column: Option<String>,
}

/// Position of one column inside an encoded row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub column: usize,
    pub offset: usize,
    pub width: usize,
    pub categorical: bool,
}

impl Schema {
    pub fn new(columns: Vec<Column>, label_column: Option<String>) -> Result<Self> {
        let s = Self { columns, label_column };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::data("schema has no columns"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::data(format!("duplicate column name {:?}", c.name)));
            }
            match &c.kind {
                ColumnKind::Continuous { range: [lo, hi] } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::data(format!("column {:?}: need finite lo < hi", c.name)));
                    }
                }
                ColumnKind::Categorical { categories } => {
                    if categories.is_empty() {
                        return Err(Error::data(format!("column {:?}: empty category list", c.name)));
                    }
                    if categories.len() > MAX_CATEGORIES {
                        return Err(Error::data(format!("column {:?}: too many categories", c.name)));
                    }
                    let uniq: BTreeSet<_> = categories.iter().collect();
                    if uniq.len() != categories.len() {
                        return Err(Error::data(format!("column {:?}: duplicate categories", c.name)));
                    }
                }
            }
        }
        if let Some(label) = &self.label_column {
            let idx = self
                .column_index(label)
                .ok_or_else(|| Error::data(format!("label column {label:?} not in schema")))?;
            if !matches!(self.columns[idx].kind, ColumnKind::Categorical { .. }) {
                return Err(Error::data("label column must be categorical"));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn label_index(&self) -> Option<usize> {
        self.label_column.as_deref().and_then(|l| self.column_index(l))
    }

    /// Number of label classes, 0 when unconditional.
    pub fn label_count(&self) -> usize {
        self.label_index().map_or(0, |i| self.columns[i].width())
    }

    /// Encoded blocks in row order: features first, label last.
    pub fn layout(&self) -> Vec<Block> {
        let label = self.label_index();
        let mut blocks = Vec::with_capacity(self.columns.len());
        let mut offset = 0;
        let order = (0..self.columns.len())
            .filter(|&i| Some(i) != label)
            .chain(label);
        for i in order {
            let c = &self.columns[i];
            blocks.push(Block {
                column: i,
                offset,
                width: c.width(),
                categorical: matches!(c.kind, ColumnKind::Categorical { .. }),
            });
            offset += c.width();
        }
        blocks
    }

    /// Full encoded width including the label block.
    pub fn d_aug(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    /// Width of the non-label part of the encoding.
    pub fn feature_width(&self) -> usize {
        self.d_aug() - self.label_count()
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Schema = serde_json::from_reader(std::fs::File::open(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A decoded cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{}` on f64 prints the shortest string that round-trips.
            Value::Num(x) => write!(f, "{x}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

/// One row, cells in schema column order.
pub type Record = Vec<Value>;

/// Header plus string cells, straight from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::data("CSV has no header"));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::data(format!(
                    "row {i} has {} fields, header has {}",
                    rec.len(),
                    header.len()
                )));
            }
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::data("CSV has no data rows"));
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }
}

/// Infers column kinds: all-numeric columns become continuous over their
/// observed range, everything else (and the label column) categorical with
/// lexicographically sorted categories.
pub fn infer_schema(table: &RawTable, label_column: Option<&str>) -> Result<Schema> {
    let mut columns = Vec::with_capacity(table.header.len());
    for (j, name) in table.header.iter().enumerate() {
        let cells = table.rows.iter().map(|r| r[j].as_str());
        if let Some(i) = table.rows.iter().position(|r| r[j].trim().is_empty()) {
            return Err(Error::data(format!("missing value in column {name:?} at row {i}")));
        }
        let is_label = label_column == Some(name.as_str());
        let numeric: Option<Vec<f64>> = if is_label {
            None
        } else {
            cells.clone().map(|c| c.trim().parse::<f64>().ok().filter(|x| x.is_finite())).collect()
        };
        match numeric {
            Some(vals) => {
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let mut hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi <= lo {
                    hi = lo + 1.0;
                }
                columns.push(Column::continuous(name, lo, hi));
            }
            None => {
                let cats: BTreeSet<&str> = cells.collect();
                if cats.len() > MAX_CATEGORIES {
                    return Err(Error::data(format!("column {name:?} has more than {MAX_CATEGORIES} categories")));
                }
                columns.push(Column::categorical(name, &cats.into_iter().collect::<Vec<_>>()));
            }
        }
    }
    if columns.iter().any(|c| matches!(c.kind, ColumnKind::Continuous { .. })) {
        log::warn!("continuous ranges were inferred from the data itself; publish or DP-release them before treating the pipeline as private");
    }
    let schema = Schema::new(columns, label_column.map(str::to_string))?;
    Ok(schema)
}

/// An explicit schema file wins; otherwise infer from the CSV.
pub fn infer_or_load_schema(csv_path: Option<&Path>, schema_path: Option<&Path>, label_column: Option<&str>) -> Result<Schema> {
    match (schema_path, csv_path) {
        (Some(p), _) => Schema::load(p),
        (None, Some(c)) => infer_schema(&RawTable::read(c)?, label_column),
        (None, None) => Err(Error::param("need a CSV or a schema file")),
    }
}

/// Parses string cells into typed records, matching columns by header name.
pub fn parse_records(table: &RawTable, schema: &Schema) -> Result<Vec<Record>> {
    let pos: HashMap<&str, usize> = table.header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let src: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            pos.get(c.name.as_str())
                .copied()
                .ok_or_else(|| Error::data(format!("CSV lacks column {:?}", c.name)))
        })
        .collect::<Result<_>>()?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            schema
                .columns
                .iter()
                .zip(&src)
                .map(|(c, &j)| {
                    let cell = row[j].trim();
                    if cell.is_empty() {
                        return Err(Error::data(format!("missing value in column {:?} at row {i}", c.name)));
                    }
                    match c.kind {
                        ColumnKind::Continuous { .. } => cell
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .map(Value::Num)
                            .ok_or_else(|| Error::data(format!("row {i}: {cell:?} is not numeric ({:?})", c.name))),
                        ColumnKind::Categorical { .. } => Ok(Value::Cat(cell.to_string())),
                    }
                })
                .collect()
        })
        .collect()
}

pub fn read_records(path: &Path, schema: &Schema) -> Result<Vec<Record>> {
    parse_records(&RawTable::read(path)?, schema)
}

/// Encoded rows in `[0,1]^{d_aug}` plus the label index of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub features: Matrix,
    pub n: usize,
    pub schema_hash: String,
    pub labels: Option<Vec<usize>>,
    /// Continuous cells clipped into range during encoding.
    pub clipped: usize,
}

pub fn encode(records: &[Record], schema: &Schema) -> Result<EncodedDataset> {
    let layout = schema.layout();
    let d = schema.d_aug();
    let label_idx = schema.label_index();
    let lookups: Vec<Option<HashMap<&str, usize>>> = schema
        .columns
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Categorical { categories } => {
                Some(categories.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
            }
            ColumnKind::Continuous { .. } => None,
        })
        .collect();
    let mut features = Matrix::zeros(records.len(), d);
    let mut labels = label_idx.map(|_| Vec::with_capacity(records.len()));
    let mut clipped = 0;
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != schema.columns.len() {
            return Err(Error::data(format!("record {r} has {} cells, schema has {}", rec.len(), schema.columns.len())));
        }
        let row = features.row_mut(r);
        for b in &layout {
            let col = &schema.columns[b.column];
            match (&col.kind, &rec[b.column]) {
                (ColumnKind::Continuous { range: [lo, hi] }, Value::Num(x)) => {
                    let v = (x - lo) / (hi - lo);
                    if !(0.0..=1.0).contains(&v) {
                        clipped += 1;
                    }
                    row[b.offset] = v.clamp(0.0, 1.0);
                }
                (ColumnKind::Categorical { .. }, Value::Cat(s)) => {
                    let idx = *lookups[b.column]
                        .as_ref()
                        .and_then(|m| m.get(s.as_str()))
                        .ok_or_else(|| Error::data(format!("row {r}: unknown category {s:?} in column {:?}", col.name)))?;
                    row[b.offset + idx] = 1.0;
                    if Some(b.column) == label_idx {
                        if let Some(l) = labels.as_mut() {
                            l.push(idx);
                        }
                    }
                }
                _ => {
                    return Err(Error::data(format!("row {r}: wrong value type for column {:?}", col.name)));
                }
            }
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} continuous values fell outside their schema range and were clipped");
    }
    Ok(EncodedDataset {
        n: records.len(),
        features,
        schema_hash: schema.hash(),
        labels,
        clipped,
    })
}

/// Inverse of [`encode`] for one row: continuous cells are mapped back to
/// their range, categorical blocks decode to their argmax (lowest index on ties).
pub fn decode_row(row: &[f64], schema: &Schema) -> Result<Record> {
    if row.len() != schema.d_aug() {
        return Err(Error::param(format!("row width {} does not match schema width {}", row.len(), schema.d_aug())));
    }
    let mut out: Vec<Option<Value>> = vec![None; schema.columns.len()];
    for b in schema.layout() {
        let col = &schema.columns[b.column];
        out[b.column] = Some(match &col.kind {
            ColumnKind::Continuous { range: [lo, hi] } => Value::Num(lo + row[b.offset] * (hi - lo)),
            ColumnKind::Categorical { categories } => {
                let block = &row[b.offset..b.offset + b.width];
                let mut best = 0;
                for (i, &x) in block.iter().enumerate() {
                    if x > block[best] {
                        best = i;
                    }
                }
                Value::Cat(categories[best].clone())
            }
        });
    }
    Ok(out.into_iter().map(|v| v.expect("every column decoded")).collect())
}

/// RFC-4180 CSV, LF line endings, header in schema column order.
pub fn write_records<W: std::io::Write>(records: &[Record], schema: &Schema, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != schema.columns.len() {
            return Err(Error::data(format!("record {i} does not match schema width")));
        }
        w.write_record(rec.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_synthetic(records: &[Record], schema: &Schema, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_records(records, schema, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> RawTable {
        RawTable::from_reader(csv.as_bytes()).unwrap()
    }

    fn schema() -> Schema {
        Schema::new(
            vec![
                Column::continuous("age", 20.0, 80.0),
                Column::categorical("color", &["blue", "red"]),
                Column::categorical("y", &["no", "yes"]),
            ],
            Some("y".into()),
        )
        .unwrap()
    }

    #[test]
    fn infer_kinds() {
        let s = infer_schema(&table("c,x\na,1.5\nb,2.5\na,2.0\n"), None).unwrap();
        assert_eq!(s.columns[0], Column::categorical("c", &["a", "b"]));
        assert_eq!(s.columns[1], Column::continuous("x", 1.5, 2.5));
    }

    #[test]
    fn label_column_forced_categorical() {
        let s = infer_schema(&table("x,y\n0.5,1\n0.7,0\n"), Some("y")).unwrap();
        assert_eq!(s.columns[1], Column::categorical("y", &["0", "1"]));
        assert_eq!(s.label_count(), 2);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(RawTable::from_reader("a,b\n".as_bytes()).is_err());
        assert!(RawTable::from_reader("".as_bytes()).is_err());
        assert!(RawTable::from_reader("a,b\n1\n".as_bytes()).is_err());
        assert!(infer_schema(&table("a,b\n1,\n2,3\n"), None).is_err());
        let many: String = std::iter::once("c\n".to_string())
            .chain((0..=MAX_CATEGORIES).map(|i| format!("k{i}\n")))
            .collect();
        assert!(matches!(infer_schema(&table(&many), None), Err(Error::InvalidData(_))));
    }

    #[test]
    fn schema_round_trip_and_hash() {
        let s = schema();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schema.json");
        s.save(&p).unwrap();
        let back = Schema::load(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"kind\":\"continuous\"") && json.contains("\"range\":[20.0,80.0]"));
    }

    #[test]
    fn invalid_schemas() {
        assert!(Schema::new(vec![Column::continuous("a", 1.0, 1.0)], None).is_err());
        assert!(Schema::new(vec![Column::categorical::<&str>("a", &[])], None).is_err());
        assert!(Schema::new(vec![Column::categorical("a", &["x", "x"])], None).is_err());
        assert!(Schema::new(vec![Column::continuous("a", 0.0, 1.0)], Some("a".into())).is_err());
    }

    #[test]
    fn layout_puts_label_last() {
        let s = Schema::new(
            vec![
                Column::categorical("y", &["a", "b", "c"]),
                Column::continuous("x", 0.0, 1.0),
            ],
            Some("y".into()),
        )
        .unwrap();
        let l = s.layout();
        assert_eq!((l[0].column, l[0].offset), (1, 0));
        assert_eq!((l[1].column, l[1].offset, l[1].width), (0, 1, 3));
        assert_eq!(s.d_aug(), 4);
        assert_eq!(s.feature_width(), 1);
    }

    #[test]
    fn encode_scaling_and_clipping() {
        let s = schema();
        let recs = vec![
            vec![Value::Num(20.0), Value::Cat("red".into()), Value::Cat("yes".into())],
            vec![Value::Num(80.0), Value::Cat("blue".into()), Value::Cat("no".into())],
            vec![Value::Num(160.0), Value::Cat("blue".into()), Value::Cat("no".into())],
        ];
        let e = encode(&recs, &s).unwrap();
        assert_eq!(e.features.row(0), &[0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(e.features.row(1), &[1.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(e.features.get(2, 0), 1.0);
        assert_eq!(e.clipped, 1);
        assert_eq!(e.labels, Some(vec![1, 0, 0]));
    }

    #[test]
    fn unknown_category_reports_row() {
        let recs = vec![
            vec![Value::Num(20.0), Value::Cat("red".into()), Value::Cat("yes".into())],
            vec![Value::Num(20.0), Value::Cat("green".into()), Value::Cat("yes".into())],
        ];
        match encode(&recs, &schema()) {
            Err(Error::InvalidData(m)) => assert!(m.contains("row 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decode_inverts_encode() {
        let s = schema();
        let rec = vec![Value::Num(50.0), Value::Cat("red".into()), Value::Cat("no".into())];
        let e = encode(std::slice::from_ref(&rec), &s).unwrap();
        assert_eq!(decode_row(e.features.row(0), &s).unwrap(), rec);
        // continuous 0.5 on [20, 80] → 50, uniform block → first category
        let back = decode_row(&[0.5, 0.5, 0.5, 0.5, 0.5], &s).unwrap();
        assert_eq!(back[0], Value::Num(50.0));
        assert_eq!(back[1], Value::Cat("blue".into()));
    }

    #[test]
    fn write_header_only_and_quoting() {
        let s = Schema::new(vec![Column::categorical("a,b", &["x \"q\""]), Column::continuous("z", 0.0, 1.0)], None).unwrap();
        let mut buf = Vec::new();
        write_records(&[], &s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "\"a,b\",z\n");
        let mut buf = Vec::new();
        write_records(&[vec![Value::Cat("x \"q\"".into()), Value::Num(0.1)]], &s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "\"a,b\",z\n\"x \"\"q\"\"\",0.1\n");
    }

    #[test]
    fn write_then_read_reencodes() {
        let s = schema();
        let recs = vec![
            vec![Value::Num(33.3), Value::Cat("red".into()), Value::Cat("yes".into())],
            vec![Value::Num(71.25), Value::Cat("blue".into()), Value::Cat("no".into())],
        ];
        let mut buf = Vec::new();
        write_records(&recs, &s, &mut buf).unwrap();
        let back = parse_records(&RawTable::from_reader(buf.as_slice()).unwrap(), &s).unwrap();
        assert_eq!(back, recs);
        assert_eq!(encode(&back, &s).unwrap(), encode(&recs, &s).unwrap());
    }

    #[test]
    fn parse_matches_columns_by_name() {
        let s = schema();
        let t = table("y,color,age\nyes,red,30\n");
        let r = parse_records(&t, &s).unwrap();
        assert_eq!(r[0], vec![Value::Num(30.0), Value::Cat("red".into()), Value::Cat("yes".into())]);
        assert!(parse_records(&table("age\n30\n"), &s).is_err());
    }
}
