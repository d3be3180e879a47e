//! CSV outputs: per-sample attack results and robustness curves, plus the
//! epsilon-grid syntax used on the command line.
//!
//! Every file starts with `#` comment lines carrying the audit trail; the
//! readers here skip them.

use std::fs;
use std::path::Path;

use crate::attack::{AttackResult, RobustnessCurve};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub index: usize,
    pub label: usize,
    pub success: bool,
    pub norm: f64,
    pub iterations: u64,
}

impl ResultRow {
    pub fn from_result(index: usize, label: usize, r: &AttackResult) -> Self {
        Self {
            index,
            label,
            success: r.success,
            norm: if r.success { r.norm } else { f64::INFINITY },
            iterations: r.iterations_run,
        }
    }
}

fn comment_block(header: &[String]) -> String {
    header.iter().map(|l| format!("# {l}\n")).collect()
}

pub fn results_csv(header: &[String], rows: &[ResultRow]) -> String {
    let mut out = comment_block(header);
    out.push_str("index,label,success,norm,iterations\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.index,
            r.label,
            r.success,
            format_float(r.norm),
            r.iterations
        ));
    }
    out
}

pub fn curve_csv(header: &[String], curve: &RobustnessCurve) -> String {
    let mut out = comment_block(header);
    out.push_str("epsilon,robust_accuracy\n");
    for (e, a) in curve.epsilons.iter().zip(&curve.accuracy) {
        out.push_str(&format!("{},{}\n", format_float(*e), format_float(*a)));
    }
    out
}

/// Shortest round-trip representation, `inf` for infinity.
pub fn format_float(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Comment lines (without the leading `# `) and data rows of a results file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsFile {
    pub header: Vec<String>,
    pub rows: Vec<ResultRow>,
}

pub fn parse_results(text: &str) -> Result<ResultsFile> {
    let header = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let cols = reader
        .headers()
        .map_err(|e| parse_err("header", e.to_string()))?
        .clone();
    if cols.iter().collect::<Vec<_>>() != ["index", "label", "success", "norm", "iterations"] {
        return Err(parse_err("header", format!("unexpected columns {cols:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(&format!("row {i}"), e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or_default();
        let bad = |c: usize| parse_err(&format!("row {i} column {c}"), format!("bad value {:?}", field(c)));
        rows.push(ResultRow {
            index: field(0).parse().map_err(|_| bad(0))?,
            label: field(1).parse().map_err(|_| bad(1))?,
            success: field(2).parse().map_err(|_| bad(2))?,
            norm: field(3).parse().map_err(|_| bad(3))?,
            iterations: field(4).parse().map_err(|_| bad(4))?,
        });
    }
    Ok(ResultsFile { header, rows })
}

pub fn load_results(path: impl AsRef<Path>) -> Result<ResultsFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text).map_err(|e| match e {
        Error::Parse {
            location, message, ..
        } => Error::Parse {
            file: path.display().to_string(),
            location,
            message,
        },
        other => other,
    })
}

fn parse_err(location: &str, message: String) -> Error {
    Error::Parse {
        file: "<results>".into(),
        location: location.into(),
        message,
    }
}

fn grid_err(text: &str, message: &str) -> Error {
    Error::InvalidConfig(format!("grid {text:?}: {message}"))
}

/// Parses `a/b` or a decimal literal.
pub fn parse_rational(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::InvalidConfig(format!("bad number {s:?}"));
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            n / d
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if !v.is_finite() || v < 0.0 {
        return Err(bad());
    }
    Ok(v)
}

/// `start:stop:Npts` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [start, stop, count] => {
            let n: usize = count
                .trim()
                .strip_suffix("pts")
                .unwrap_or(count.trim())
                .parse()
                .map_err(|_| grid_err(text, "point count must look like `64pts`"))?;
            let a = parse_rational(start)?;
            let b = parse_rational(stop)?;
            match n {
                0 => return Err(grid_err(text, "needs at least one point")),
                1 => vec![a],
                _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
            }
        }
        [list] => list.split(',').map(parse_rational).collect::<Result<_>>()?,
        _ => return Err(grid_err(text, "expected start:stop:Npts or a list")),
    };
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(grid_err(text, "values must be strictly increasing"));
    }
    Ok(grid)
}
