//! Number formatting and CSV conventions shared by every report.

use std::io::{self, Write};

/// Identifies the build in report headers. Overridable at compile time with
/// `CTP_BUILD_ID` (e.g. the output of `git describe`).
pub const BUILD_ID: &str = match option_env!("CTP_BUILD_ID") {
    Some(id) => id,
    None => concat!("ctp-core-", env!("CARGO_PKG_VERSION")),
};

/// 17 significant digits, scientific notation.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Leading `# ...` line carried by every CSV report.
pub fn write_comment_header<W: Write>(w: &mut W, params: &str) -> io::Result<()> {
    let flat: String = params.replace(['\n', '\r'], "; ");
    writeln!(w, "# build={BUILD_ID}; {flat}")
}

/// Joins formatted numbers with commas.
pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(",")
}
