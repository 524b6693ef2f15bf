//! CSV and JSON emission with a provenance comment and fixed precision.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::Value;

use crate::CliError;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Shortest decimal for `x` rounded to six significant digits, or every
/// digit when `full` is set.
pub fn fmt_num(x: f64, full: bool) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if full {
        return format!("{x}");
    }
    format!("{}", round_sig(x))
}

fn round_sig(x: f64) -> f64 {
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float in a JSON tree; non-finite values were already
/// turned into `null` by the serializer.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

pub fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

pub struct CsvOut {
    writer: csv::Writer<Box<dyn Write>>,
    full: bool,
}

impl CsvOut {
    /// Writes `# seed=... config_hash=...` (plus any `extra` fields) and
    /// the header row.
    pub fn create(
        path: Option<&Path>,
        seed: u64,
        hash: &str,
        extra: &[(&str, String)],
        header: &[&str],
        full: bool,
    ) -> Result<Self, CliError> {
        let mut sink = open_sink(path)?;
        let mut comment = format!("# seed={seed} config_hash={hash}");
        for (k, v) in extra {
            comment.push_str(&format!(" {k}={v}"));
        }
        writeln!(sink, "{comment}").map_err(io_err)?;
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(header).map_err(csv_err)?;
        Ok(Self { writer, full })
    }

    pub fn num(&self, x: f64) -> String {
        fmt_num(x, self.full)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(io_err)
    }
}

pub fn write_json(path: Option<&Path>, mut value: Value, full: bool) -> Result<(), CliError> {
    if !full {
        round_json(&mut value);
    }
    let mut sink = open_sink(path)?;
    serde_json::to_writer_pretty(&mut sink, &value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(sink).map_err(io_err)?;
    sink.flush().map_err(io_err)
}

fn io_err(e: io::Error) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_num(6.000000012, false), "6");
        assert_eq!(fmt_num(0.123456789, false), "0.123457");
        assert_eq!(fmt_num(123456789.0, false), "123457000");
        assert_eq!(fmt_num(1.5e-9, false), "0.0000000015");
        assert_eq!(fmt_num(0.1 + 0.2, true), "0.30000000000000004");
        assert_eq!(fmt_num(f64::INFINITY, false), "inf");
        assert_eq!(fmt_num(f64::NAN, true), "nan");
    }

    #[test]
    fn json_rounding() {
        let mut v = serde_json::json!({"a": 0.123456789, "b": [1, 2.000000001], "c": "x"});
        round_json(&mut v);
        assert_eq!(v, serde_json::json!({"a": 0.123457, "b": [1, 2.0], "c": "x"}));
    }
}
