//! Canonical number formatting shared by every file writer.
//!
//! Values are rounded to 12 significant digits and then printed with the
//! shortest representation that reads back to the same `f64`, so formatting
//! is idempotent: `fmt(parse(fmt(x))) == fmt(x)`.

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Round to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("scientific formatting always parses")
}

pub fn fmt_num(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 {
        // avoid "-0"
        return "0".to_string();
    }
    format!("{r}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}
