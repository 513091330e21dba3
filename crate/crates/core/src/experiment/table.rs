use std::io::{Read, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::model::{TaskSpec, Transfer};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl Cell {
    pub fn opt(x: Option<f64>) -> Cell {
        x.map_or(Cell::Empty, Cell::Num)
    }

    /// 17 significant digits, enough to round-trip any double; non-finite
    /// values are left blank.
    pub fn to_csv(&self) -> String {
        match self {
            Cell::Num(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Num(_) | Cell::Empty => String::new(),
            Cell::Int(n) => n.to_string(),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(n) => Value::from(*n),
            Cell::Bool(b) => Value::Bool(*b),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Empty => Value::Null,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(n) => Some(*n as f64),
            _ => None,
        }
    }
}

/// Column-named rows; every row carries every column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// Builder for one row, keeping column order stable across rows.
#[derive(Debug, Default)]
pub struct Row {
    cells: Vec<(&'static str, Cell)>,
}

impl Row {
    pub fn put(&mut self, name: &'static str, cell: Cell) -> &mut Self {
        self.cells.push((name, cell));
        self
    }

    pub fn num(&mut self, name: &'static str, x: f64) -> &mut Self {
        self.put(name, Cell::Num(x))
    }

    pub fn text(&mut self, name: &'static str, s: impl Into<String>) -> &mut Self {
        self.put(name, Cell::Text(s.into()))
    }

    /// Echoes every field of the resolved spec.
    pub fn spec(&mut self, spec: &TaskSpec) -> &mut Self {
        self.num("alpha_s", spec.alpha_s)
            .num("alpha_t", spec.alpha_t)
            .num("rho", spec.rho)
            .num("lambda", spec.lambda)
            .text("loss", spec.loss.name())
            .text("phi", spec.phi.name())
            .text("phi_hat", spec.phi_hat.name())
            .put("upsilon", Cell::Int(spec.upsilon as u64))
            .text("transfer", spec.transfer.mode_name());
        let (delta, spectrum) = match &spec.transfer {
            Transfer::NoTransfer => (Cell::Empty, Cell::Empty),
            Transfer::Hard { delta } => (Cell::Num(*delta), Cell::Empty),
            Transfer::Soft { spectrum } => (
                Cell::Empty,
                Cell::Text(serde_json::to_string(spectrum).expect("spectrum serializes")),
            ),
        };
        self.put("delta", delta).put("spectrum", spectrum)
    }
}

impl Table {
    pub fn with_columns(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) -> Result<()> {
        if self.columns.is_empty() && self.rows.is_empty() {
            self.columns = row.cells.iter().map(|(n, _)| n.to_string()).collect();
        }
        let names: Vec<&str> = row.cells.iter().map(|(n, _)| *n).collect();
        if names != self.columns {
            return Err(Error::invalid(format!("row columns {names:?} do not match table")));
        }
        self.rows.push(row.cells.into_iter().map(|(_, c)| c).collect());
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_csv))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"config": …, "rows": [{column: value, …}, …]}`
    pub fn to_json(&self, config: &Value) -> Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> =
                    self.columns.iter().cloned().zip(row.iter().map(Cell::to_json)).collect();
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "config": config, "rows": Value::Array(rows) })
    }

    /// Reads a table written by [`Table::write_csv`]. Cells that parse as
    /// numbers come back as numbers.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(parse_cell).collect());
        }
        Ok(Table { columns, rows })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let rows = value
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::invalid("JSON result needs a rows array"))?;
        let mut table = Table::default();
        for row in rows {
            let obj = row.as_object().ok_or_else(|| Error::invalid("JSON rows must be objects"))?;
            if table.columns.is_empty() {
                table.columns = obj.keys().cloned().collect();
            }
            let cells = table
                .columns
                .iter()
                .map(|c| match obj.get(c) {
                    Some(Value::Number(n)) => Cell::Num(n.as_f64().unwrap_or(f64::NAN)),
                    Some(Value::Bool(b)) => Cell::Bool(*b),
                    Some(Value::String(s)) => Cell::Text(s.clone()),
                    _ => Cell::Empty,
                })
                .collect();
            table.rows.push(cells);
        }
        Ok(table)
    }
}

fn parse_cell(s: &str) -> Cell {
    if s.is_empty() {
        Cell::Empty
    } else if let Ok(x) = s.parse::<f64>() {
        Cell::Num(x)
    } else {
        Cell::Text(s.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::default();
        for x in [0.1, 1.0 / 3.0, f64::NAN] {
            let mut row = Row::default();
            row.num("x", x).text("curve", "hard").put("n", Cell::Int(3)).put("gap", Cell::Empty);
            t.push(row).unwrap();
        }
        t
    }

    #[test]
    fn csv_round_trips_doubles() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,curve,n,gap\n"));
        assert!(text.contains("3.3333333333333331e-1,hard,3,"));
        let back = Table::read_csv(&buf[..]).unwrap();
        assert_eq!(back.rows[1][0], Cell::Num(1.0 / 3.0));
        assert_eq!(back.rows[2][0], Cell::Empty);
    }

    #[test]
    fn json_agrees_with_csv() {
        let t = sample();
        let v = t.to_json(&Value::Null);
        let back = Table::from_json(&v).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let csv = Table::read_csv(&buf[..]).unwrap();
        for (a, b) in back.rows.iter().zip(&csv.rows) {
            let xa = a[back.column("x").unwrap()].as_f64();
            let xb = b[csv.column("x").unwrap()].as_f64();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn mismatched_row_rejected() {
        let mut t = sample();
        let mut row = Row::default();
        row.num("y", 1.0);
        assert!(t.push(row).is_err());
    }
}
