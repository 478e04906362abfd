//! Deterministic text output: profile CSVs, rate tables and log-log plot
//! data. All floats go through [`format_float`], which mimics C's `%.12g`
//! without consulting the locale.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::grid::GridSpec;
use crate::scheme::Trajectory;
use crate::state::StateField;
use crate::studies::ErrorTable;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed,
/// scientific notation outside `1e-4 ≤ |x| < 1e12`.
pub fn format_float(x: f64) -> String {
    format_float_with(x, SIGNIFICANT_DIGITS)
}

pub fn format_float_with(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let digits = digits.max(1);
    // Round once in scientific form to learn the decimal exponent.
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `x,U1,...,UN` rows for one state, LF line endings.
pub fn write_profile_csv<W: Write>(mut w: W, grid: &GridSpec, state: &StateField, digits: usize) -> Result<()> {
    let mut line = String::from("x");
    for k in 0..state.n_components() {
        line.push_str(&format!(",U{}", k + 1));
    }
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for i in 0..state.cells() {
        line.clear();
        line.push_str(&format_float_with(grid.cell_center(i), digits));
        for k in 0..state.n_components() {
            line.push(',');
            line.push_str(&format_float_with(state.components[k][i], digits));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// File name used for the `index`-th recorded profile at time `t`.
pub fn profile_file_name(index: usize, t: f64) -> String {
    format!("profile_{index:03}_t{}.csv", format_float_with(t, 6))
}

/// One CSV per recorded state of `traj` under `dir`; returns the paths.
pub fn emit_profile_csv(traj: &Trajectory, dir: &Path, digits: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    traj.records
        .iter()
        .enumerate()
        .map(|(i, (t, state))| {
            let path = dir.join(profile_file_name(i, *t));
            let mut buf = Vec::new();
            write_profile_csv(&mut buf, &traj.grid, state, digits)?;
            fs::write(&path, buf)?;
            Ok(path)
        })
        .collect()
}

/// CSV `parameter,error,rate,lambda_used`; the rate is blank when absent.
pub fn write_rate_table_csv<W: Write>(mut w: W, table: &ErrorTable, digits: usize) -> Result<()> {
    let fmt = |x: f64| format_float_with(x, digits);
    w.write_all(b"parameter,error,rate,lambda_used\n")?;
    for r in &table.rows {
        let rate = r.rate.map(fmt).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            fmt(r.parameter),
            fmt(r.error),
            rate,
            fmt(r.lambda_used)
        )?;
    }
    Ok(())
}

/// Whitespace-separated log-log data with reference lines of slope 1 and
/// 1/2 through the first row.
pub fn write_rate_plot_data<W: Write>(mut w: W, table: &ErrorTable, digits: usize) -> Result<()> {
    let fmt = |x: f64| format_float_with(x, digits);
    w.write_all(b"# parameter error slope1 slope0.5\n")?;
    let Some(first) = table.rows.first() else {
        return Ok(());
    };
    for r in &table.rows {
        let s = r.parameter / first.parameter;
        writeln!(
            w,
            "{} {} {} {}",
            fmt(r.parameter),
            fmt(r.error),
            fmt(first.error * s),
            fmt(first.error * s.sqrt())
        )?;
    }
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.dat` under `dir`.
pub fn emit_rate_table(table: &ErrorTable, dir: &Path, stem: &str, digits: usize) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let dat_path = dir.join(format!("{stem}.dat"));
    let mut buf = Vec::new();
    write_rate_table_csv(&mut buf, table, digits)?;
    fs::write(&csv_path, &buf)?;
    buf.clear();
    write_rate_plot_data(&mut buf, table, digits)?;
    fs::write(&dat_path, &buf)?;
    Ok((csv_path, dat_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::studies::ErrorTable;

    #[test]
    fn g_style_formatting() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(-4.996875), "-4.996875");
        assert_eq!(format_float(0.1 + 0.2), "0.3");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_float(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_float(1e-12), "1e-12");
        assert_eq!(format_float(1.5e-5), "1.5e-05");
        assert_eq!(format_float(0.0001), "0.0001");
        assert_eq!(format_float(123456789012.0), "123456789012");
        assert_eq!(format_float(1234567890123.0), "1.23456789012e+12");
        assert_eq!(format_float(f64::INFINITY), "inf");
        assert_eq!(format_float(20480.0), "20480");
        assert_eq!(format_float(0.99999999999999), "1");
    }

    #[test]
    fn profile_csv_layout() {
        let grid = GridSpec::new(-5.0, 5.0, 2.5).unwrap();
        let state = StateField::from_components(vec![vec![0.0, 0.25, 0.25, 0.0], vec![0.0, 1.0, 1.0, 0.0]]);
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &grid, &state, 12).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,U1,U2\n-3.75,0,0\n-1.25,0.25,1\n1.25,0.25,1\n3.75,0,0\n");
    }

    #[test]
    fn empty_rate_table_is_header_only() {
        let mut buf = Vec::new();
        write_rate_table_csv(&mut buf, &ErrorTable::default(), 12).unwrap();
        assert_eq!(buf, b"parameter,error,rate,lambda_used\n");
        let mut buf = Vec::new();
        write_rate_plot_data(&mut buf, &ErrorTable::default(), 12).unwrap();
        assert_eq!(buf, b"# parameter error slope1 slope0.5\n");
    }

    #[test]
    fn rate_table_rows() {
        let t = ErrorTable::from_errors(&[(0.8, 0.4, 0.1286), (0.4, 0.2, 0.1286)]);
        let mut buf = Vec::new();
        write_rate_table_csv(&mut buf, &t, 12).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "parameter,error,rate,lambda_used\n0.8,0.4,,0.1286\n0.4,0.2,1,0.1286\n"
        );
        let mut buf = Vec::new();
        write_rate_plot_data(&mut buf, &t, 12).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("0.4 0.2 0.2 0.282842712475\n"), "{text}");
    }

    #[test]
    fn profile_names() {
        assert_eq!(profile_file_name(1, 0.017), "profile_001_t0.017.csv");
        assert_eq!(profile_file_name(0, 0.0), "profile_000_t0.csv");
    }
}
