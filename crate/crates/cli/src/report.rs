//! JSON and CSV rendering of command results.

use ergodic_core::growth::{IterationRun, IterationStatus};
use ergodic_core::scalar::{decimal_digits, RationalJson};
use ergodic_core::{BigUint, Rational, Scalar};
use serde_json::{json, Map, Value};

/// Leading digits shown for integers too long to print in full.
pub const LEADING_DIGITS: usize = 20;

/// A command's result.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub body: Value,
    /// Rows for `--format csv`; reports without one are flattened.
    pub table: Option<Table>,
    /// A budget, cap or horizon ran out; `body` holds what was reached.
    pub exhausted: bool,
    /// Outcome of `--verify`, when requested.
    pub verified: Option<bool>,
}

impl Report {
    pub fn new(body: Value) -> Self {
        Report {
            body,
            table: None,
            exhausted: false,
            verified: None,
        }
    }

    pub fn with_table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }

    pub fn exhausted_if(mut self, exhausted: bool) -> Self {
        self.exhausted = exhausted;
        self
    }

    /// Records a verification result in the body and on the report.
    pub fn verified(mut self, ok: bool, checks: Value) -> Self {
        if let Value::Object(map) = &mut self.body {
            map.insert("verification".into(), json!({ "passed": ok, "checks": checks }));
        }
        self.verified = Some(ok);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// One row from the scalar top-level fields of an object; nested values
    /// are written as compact JSON.
    pub fn flatten(body: &Value) -> Self {
        let mut table = Table::new(&[]);
        let mut row = Vec::new();
        if let Value::Object(map) = body {
            for (k, v) in map {
                table.header.push(k.clone());
                row.push(cell(v));
            }
        }
        table.rows.push(row);
        table
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// A scalar as JSON: floats as numbers, rationals as `{num, den}`.
pub fn scalar<S: Scalar>(x: &S) -> Value {
    if S::EXACT {
        match x.to_rational() {
            Some(q) => rational(&q),
            None => Value::Null,
        }
    } else {
        json!(Scalar::to_f64(x))
    }
}

pub fn rational(q: &Rational) -> Value {
    serde_json::to_value(RationalJson::from_rational(q)).expect("rational serializes")
}

/// Integers up to `u64` as numbers; longer ones as a digit count plus the
/// leading digits, or the full decimal string with `full`.
pub fn integer(x: &BigUint, full: bool) -> Value {
    if let Ok(v) = u64::try_from(x) {
        return json!(v);
    }
    let text = x.to_string();
    let mut out = Map::new();
    out.insert("digits".into(), json!(decimal_digits(x)));
    if full {
        out.insert("value".into(), json!(text));
    } else {
        out.insert("leading".into(), json!(&text[..LEADING_DIGITS]));
    }
    Value::Object(out)
}

/// Outcome of an iterated growth function.
pub fn iteration(run: &IterationRun, full: bool) -> Value {
    let status = match &run.status {
        IterationStatus::Complete => json!("complete"),
        IterationStatus::BudgetExceeded { budget } => json!(format!("digit budget of {budget} exceeded")),
        IterationStatus::Failed(msg) => json!(format!("failed: {msg}")),
    };
    let mut out = Map::new();
    out.insert("status".into(), status);
    out.insert("iterations_completed".into(), integer(&run.completed, full));
    if let Some(at) = &run.fixed_point_at {
        out.insert("fixed_point_after".into(), integer(at, full));
    }
    let key = if run.is_complete() { "value" } else { "last_value" };
    out.insert(key.into(), integer(&run.value, full));
    Value::Object(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ergodic_core::scalar::ratio;

    #[test]
    fn long_integers_are_abbreviated() {
        let x = BigUint::from(10u32).pow(30);
        assert_eq!(integer(&x, false), json!({"digits": 31, "leading": "10000000000000000000"}));
        assert_eq!(integer(&x, true)["value"], json!(x.to_string()));
        assert_eq!(integer(&BigUint::from(512u32), false), json!(512));
    }

    #[test]
    fn rationals_are_canonical() {
        assert_eq!(scalar(&ratio(6, 16)), json!({"num": 3, "den": 8}));
        assert_eq!(scalar(&0.5f64), json!(0.5));
    }

    #[test]
    fn flattened_tables_keep_key_order() {
        let t = Table::flatten(&json!({"b": 1, "a": "x", "c": [1, 2]}));
        assert_eq!(t.header, ["a", "b", "c"]);
        assert_eq!(t.rows[0], ["x", "1", "[1,2]"]);
    }
}
