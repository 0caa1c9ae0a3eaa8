//! Shared CSV conventions: mandatory header, floats with 17 significant digits.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_float(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::InvalidArgument(format!("bad float {s:?}: {e}")))
}

/// Writes a header plus rows to `path`, creating parent directories.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(parse_float(&fmt_float(0.1)).unwrap(), 0.1);
        assert_eq!(fmt_float(-2.0), "-2.0000000000000000e0");
    }
}
