//! Surface rasters: a CSV grid and an 8-bit binary PGM.

use std::fs;
use std::path::Path;

use crate::error::CliError;

/// Min-max scale to `0..=255`; a constant surface maps to all zeros.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let range = hi - lo;
    values
        .iter()
        .map(|v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Binary PGM (P5) of a row-major raster.
pub fn pgm(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Every numeric cell of a headerless CSV in reading order.
pub fn read_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Validation(format!("{}: '{s}' is not a number", path.display())))
        })
        .collect()
}

/// Write `surface.csv` and `surface.pgm` for a `rows x cols` raster.
pub fn write_heatmap(values: &[f64], rows: usize, cols: usize, exp: bool, out: &Path) -> Result<(), CliError> {
    if rows * cols != values.len() {
        return Err(CliError::Validation(format!(
            "{rows} x {cols} raster needs {} values, found {}",
            rows * cols,
            values.len()
        )));
    }
    let values: Vec<f64> = if exp { values.iter().map(|v| v.exp()).collect() } else { values.to_vec() };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Validation("surface has non-finite values".into()));
    }
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", out.display()));
    fs::create_dir_all(out).map_err(io)?;
    let csv: String = values
        .chunks(cols)
        .map(|r| r.iter().map(|v| afbart::io::fmt_f64(*v)).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    fs::write(out.join("surface.csv"), csv).map_err(io)?;
    fs::write(out.join("surface.pgm"), pgm(rows, cols, &to_gray(&values))).map_err(io)
}
