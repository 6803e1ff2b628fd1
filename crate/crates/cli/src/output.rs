//! CSV and JSON writers for result rows.

use std::io::Write;

use serde::Serialize;

use crate::config::Format;
use crate::run::Row;

pub const CSV_HEADER: [&str; 9] = [
    "task",
    "i",
    "j",
    "T",
    "estimate",
    "stderr",
    "reference",
    "pass",
    "note",
];

/// Ten significant digits, trailing zeros dropped, like C's `%.10g`.
pub fn sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // the exponent after rounding, so 9.9999999999 becomes 10
    let sci = format!("{:.9e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!(
            "{}e{}{:02}",
            trim_zeros(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig10).unwrap_or_default()
}

#[derive(Serialize)]
struct JsonRow<'a> {
    task: &'a str,
    i: usize,
    j: usize,
    #[serde(rename = "T")]
    t: Option<f64>,
    estimate: Option<f64>,
    stderr: Option<f64>,
    reference: Option<f64>,
    pass: Option<bool>,
    note: &'a str,
}

/// Writes `rows` in `format`.
pub fn write_rows<W: Write>(out: W, rows: &[Row], format: Format) -> std::io::Result<()> {
    match format {
        Format::Csv => write_csv(out, rows),
        Format::Json => write_json(out, rows),
    }
}

fn write_csv<W: Write>(out: W, rows: &[Row]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.task.clone(),
            r.i.to_string(),
            r.j.to_string(),
            opt(r.t),
            opt(r.estimate),
            opt(r.stderr),
            opt(r.reference),
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
            r.note.clone(),
        ])?;
    }
    w.flush()
}

fn write_json<W: Write>(mut out: W, rows: &[Row]) -> std::io::Result<()> {
    let json: Vec<JsonRow> = rows
        .iter()
        .map(|r| JsonRow {
            task: &r.task,
            i: r.i,
            j: r.j,
            t: r.t,
            estimate: r.estimate,
            stderr: r.stderr,
            reference: r.reference,
            pass: r.pass,
            note: &r.note,
        })
        .collect();
    serde_json::to_writer_pretty(&mut out, &json)?;
    writeln!(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(sig10(0.390_451_577_784_603_04), "0.3904515778");
        assert_eq!(sig10(1.0), "1");
        assert_eq!(sig10(-2.5), "-2.5");
        assert_eq!(sig10(1.234e-7), "1.234e-07");
        assert_eq!(sig10(12_345_678_901.0), "1.23456789e+10");
        assert_eq!(sig10(9.999_999_999_9), "10");
        assert_eq!(sig10(0.0), "0");
    }

    #[test]
    fn csv_leaves_missing_fields_blank() {
        let row = Row {
            task: "degeneracy".into(),
            i: 0,
            j: 1,
            t: None,
            estimate: None,
            stderr: None,
            reference: None,
            pass: Some(true),
            note: "a, b".into(),
        };
        let mut buf = Vec::new();
        write_rows(&mut buf, &[row], Format::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "task,i,j,T,estimate,stderr,reference,pass,note\ndegeneracy,0,1,,,,,true,\"a, b\"\n"
        );
    }
}
