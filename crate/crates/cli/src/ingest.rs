//! Turning raw behavioral logs into symbol streams, and the symbol file
//! format those streams are stored in.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use qh_core::sources::Symbol;

use crate::CliError;

pub const TIMING_BINS: usize = 8;
const LINE_WIDTH: usize = 64;

/// One bit per consecutive pair of positions: 1 (horizontal) when
/// `|dx| >= |dy|`, else 0. `invert` swaps the encoding.
pub fn binarize_trajectory(points: &[(f64, f64)], invert: bool) -> Vec<Symbol> {
    points
        .windows(2)
        .map(|w| {
            let horizontal = (w[1].0 - w[0].0).abs() >= (w[1].1 - w[0].1).abs();
            Symbol((horizontal != invert) as u8)
        })
        .collect()
}

/// Min-max normalizes and maps each value to one of eight uniform bins.
/// Returns the bins and whether the input was constant (all bin 0).
pub fn binarize_timings(values: &[f64]) -> (Vec<Symbol>, bool) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return (vec![Symbol(0); values.len()], true);
    }
    let bins = values
        .iter()
        .map(|v| {
            let u = (v - lo) / range;
            Symbol(((u * TIMING_BINS as f64).floor() as usize).min(TIMING_BINS - 1) as u8)
        })
        .collect();
    (bins, false)
}

/// Each bin as three bits, most significant first.
pub fn bins_to_bits(bins: &[Symbol]) -> Vec<Symbol> {
    bins.iter().flat_map(|b| [2, 1, 0].map(|i| Symbol((b.0 >> i) & 1))).collect()
}

#[derive(Debug, Default, PartialEq)]
pub struct Table {
    pub rows: Vec<Vec<f64>>,
    pub skipped: usize,
}

/// Reads the named columns of a headed CSV. Rows where any of them is
/// missing or non-numeric are skipped and counted.
pub fn read_columns<R: Read>(input: R, wanted: &[&str]) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| CliError::Runtime(format!("reading header: {e}")))?.clone();
    let idx: Vec<usize> = wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(w))
                .ok_or_else(|| CliError::Config(format!("input has no column {w:?} (columns: {:?})", headers.iter().collect::<Vec<_>>())))
        })
        .collect::<Result<_, _>>()?;
    let mut table = Table::default();
    for record in reader.records() {
        let Ok(record) = record else {
            table.skipped += 1;
            continue;
        };
        let row: Option<Vec<f64>> = idx
            .iter()
            .map(|&i| record.get(i).and_then(|v| v.parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match row {
            Some(r) => table.rows.push(r),
            None => table.skipped += 1,
        }
    }
    Ok(table)
}

/// `# alphabet=A count=N` followed by the symbols as digits, 64 per line.
pub fn write_symbols(path: &Path, alphabet: usize, symbols: &[Symbol]) -> Result<(), CliError> {
    std::fs::write(path, render_symbols(alphabet, symbols))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn render_symbols(alphabet: usize, symbols: &[Symbol]) -> String {
    let mut out = format!("# alphabet={alphabet} count={}\n", symbols.len());
    for chunk in symbols.chunks(LINE_WIDTH) {
        for s in chunk {
            write!(out, "{}", s.0).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_symbols(path: &Path) -> Result<(usize, Vec<Symbol>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read symbol file {}: {e}", path.display())))?;
    parse_symbols(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_symbols(text: &str) -> Result<(usize, Vec<Symbol>), String> {
    let mut alphabet = None;
    let mut symbols = Vec::new();
    for line in text.lines() {
        if let Some(comment) = line.strip_prefix('#') {
            for field in comment.split_whitespace() {
                if let Some(a) = field.strip_prefix("alphabet=") {
                    alphabet = Some(a.parse::<usize>().map_err(|_| format!("bad alphabet {a:?}"))?);
                }
            }
            continue;
        }
        for c in line.chars().filter(|c| !c.is_whitespace()) {
            let d = c.to_digit(10).ok_or_else(|| format!("unexpected character {c:?}"))?;
            symbols.push(Symbol(d as u8));
        }
    }
    if symbols.is_empty() {
        return Err("no symbols".into());
    }
    let seen = symbols.iter().map(|s| s.index() + 1).max().unwrap_or(0).max(2);
    let alphabet = alphabet.unwrap_or(seen);
    if seen > alphabet {
        return Err(format!("symbol {} exceeds alphabet {alphabet}", seen - 1));
    }
    Ok((alphabet, symbols))
}
