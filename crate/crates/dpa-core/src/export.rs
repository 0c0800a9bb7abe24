//! Figure-ready series extraction from metrics CSVs.
//!
//! Each input run produces one two-column (`iteration,value`) file per
//! quantity: the global probability gap, the instance probability gap, and
//! the global weight gap `|w_source - w_target|`. Files are named after the
//! input's parent directory so sweep outputs stay distinguishable.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::write_atomic;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: missing columns: {}", columns.join(", "))]
    MissingColumns { path: String, columns: Vec<String> },
    #[error("{path}:{line}: {detail}")]
    Malformed { path: String, line: usize, detail: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
}

struct Series {
    name: &'static str,
    points: Vec<(u64, f64)>,
}

/// Extract the figure series from one or more metrics CSVs into `out_dir`.
/// Returns the written paths.
pub fn export_figdata(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let mut written = Vec::new();
    for input in inputs {
        let series = extract_series(input)?;
        let label = run_label(input);
        for s in series {
            let path = out_dir.join(format!("{label}.{}.csv", s.name));
            let mut text = String::from("iteration,value\n");
            for (it, v) in &s.points {
                text.push_str(&format!("{it},{v}\n"));
            }
            write_atomic(&path, &text)
                .map_err(|e| ExportError::Io { path: path.display().to_string(), source: e })?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Label for output files: `<parent-dir>-<stem>` when a parent exists (sweep
/// layouts put each run in its own directory), else just the stem.
fn run_label(input: &Path) -> String {
    let stem = input.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    match input.parent().and_then(|p| p.file_name()) {
        Some(parent) => format!("{}-{stem}", parent.to_string_lossy()),
        None => stem,
    }
}

fn extract_series(path: &Path) -> Result<Vec<Series>, ExportError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExportError::Io { path: path.display().to_string(), source: e })?;
    let p = || path.display().to_string();

    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| ExportError::Empty { path: p() })?;
    let columns: Vec<&str> = header.split(',').collect();
    let required = ["iteration", "global_gap", "instance_gap", "w_source", "w_target"];
    let missing: Vec<String> = required
        .iter()
        .filter(|c| !columns.contains(*c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ExportError::MissingColumns { path: p(), columns: missing });
    }
    let idx = |name: &str| columns.iter().position(|c| *c == name).expect("checked above");
    let (i_it, i_gg, i_ig, i_ws, i_wt) = (
        idx("iteration"),
        idx("global_gap"),
        idx("instance_gap"),
        idx("w_source"),
        idx("w_target"),
    );

    let mut global = Vec::new();
    let mut instance = Vec::new();
    let mut weight = Vec::new();
    for (line_no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(ExportError::Malformed {
                path: p(),
                line: line_no + 1,
                detail: format!("{} fields, expected {}", fields.len(), columns.len()),
            });
        }
        let parse_f = |i: usize| -> Result<f64, ExportError> {
            fields[i].parse().map_err(|_| ExportError::Malformed {
                path: p(),
                line: line_no + 1,
                detail: format!("column {} is not a number: {:?}", columns[i], fields[i]),
            })
        };
        let it: u64 = fields[i_it].parse().map_err(|_| ExportError::Malformed {
            path: p(),
            line: line_no + 1,
            detail: format!("iteration is not an integer: {:?}", fields[i_it]),
        })?;
        global.push((it, parse_f(i_gg)?));
        instance.push((it, parse_f(i_ig)?));
        weight.push((it, (parse_f(i_ws)? - parse_f(i_wt)?).abs()));
    }
    if global.is_empty() {
        return Err(ExportError::Empty { path: p() });
    }
    Ok(vec![
        Series { name: "global_gap", points: global },
        Series { name: "instance_gap", points: instance },
        Series { name: "weight_gap", points: weight },
    ])
}
