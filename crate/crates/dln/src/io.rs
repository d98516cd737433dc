//! Output formatting: floats at 17 significant digits everywhere, JSON via a
//! custom serde formatter, and small CSV helpers.
//!
//! Fixed formatting is what makes reruns byte-identical, so every number that
//! reaches a file goes through [`fmt_f64`].

use std::io::{self, Write};

use serde::Serialize;

/// 17 significant digits in scientific notation; the round-trip-exact f64
/// representation used for all persisted numbers.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

struct SigFigFormatter;

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{:.16e}", value)
        } else {
            // JSON has no literal for non-finite floats.
            writer.write_all(b"null")
        }
    }
}

/// Serialize to JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> io::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok(String::from_utf8(out).expect("json is utf8"))
}

/// One CSV row from already-formatted cells.
pub fn csv_row(cells: &[String]) -> String {
    cells.join(",")
}

/// CSV row of floats, each at 17 significant digits.
pub fn csv_row_f64(prefix: &[String], values: &[f64]) -> String {
    let mut cells = prefix.to_vec();
    cells.extend(values.iter().map(|v| fmt_f64(*v)));
    cells.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_significant_digits() {
        let s = fmt_f64(1.0 / 3.0);
        assert_eq!(s, "3.3333333333333331e-1");
        let back: f64 = s.parse().unwrap();
        assert_eq!(back, 1.0 / 3.0);
    }

    #[test]
    fn json_uses_fixed_float_format() {
        #[derive(Serialize)]
        struct Doc {
            x: f64,
        }
        let s = to_json_string(&Doc { x: 0.1 }).unwrap();
        assert_eq!(s, "{\"x\":1.0000000000000001e-1}");
    }
}
