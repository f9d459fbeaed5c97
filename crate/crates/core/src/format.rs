//! Number formatting shared by every CSV exporter.

/// Formats `x` with six significant digits, `%g` style: fixed notation for
/// decimal exponents in `[-5, 6)`, scientific otherwise, trailing zeros
/// removed. Always uses `.` as the decimal separator.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// `sig6` for optional cells; absent values become empty fields.
pub fn sig6_opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// Parses an optional CSV cell written by [`sig6_opt`].
pub fn parse_opt(cell: &str) -> crate::Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| crate::Error::Parse(format!("{cell:?}: {e}")))
}

pub(crate) fn parse_f64(cell: &str) -> crate::Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|e| crate::Error::Parse(format!("{cell:?}: {e}")))
}

pub(crate) fn parse_usize(cell: &str) -> crate::Result<usize> {
    cell.trim()
        .parse::<usize>()
        .map_err(|e| crate::Error::Parse(format!("{cell:?}: {e}")))
}
