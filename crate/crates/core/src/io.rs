//! Scenario files (TOML), trace files (CSV), and metrics documents (JSON).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{ConfigError, IoError};
use crate::scenario::Scenario;
use crate::sim::SimTrace;

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(Scenario::from_toml(&text)?)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, scenario.to_toml()).map_err(|e| io_err(path, e))
}

/// Column names in file order.
pub fn trace_header(trace: &SimTrace) -> Vec<String> {
    let mut cols: Vec<String> = ["t", "r", "y", "y_E", "y_P", "e", "e_E"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["u", "soc", "phi", "attached"] {
        cols.extend(trace.battery_ids.iter().map(|id| format!("{prefix}_{id}")));
    }
    cols
}

/// Writes every `decimate`-th row (always including the first) as CSV.
pub fn write_trace_to<W: Write>(
    trace: &SimTrace,
    out: &mut W,
    decimate: usize,
) -> std::io::Result<()> {
    let decimate = decimate.max(1);
    writeln!(out, "{}", trace_header(trace).join(","))?;
    let mut line = String::with_capacity(512);
    for k in (0..trace.len()).step_by(decimate) {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(
            line,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            trace.t[k],
            trace.r[k],
            trace.y[k],
            trace.y_e[k],
            trace.y_p[k],
            trace.e[k],
            trace.e_e[k]
        );
        for col in &trace.u {
            let _ = write!(line, ",{:.6}", col[k]);
        }
        for col in trace.soc.iter().chain(&trace.phi) {
            let _ = write!(line, ",{:.12}", col[k]);
        }
        for col in &trace.attached {
            line.push_str(if col[k] { ",1" } else { ",0" });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn write_trace(
    trace: &SimTrace,
    path: impl AsRef<Path>,
    decimate: usize,
) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace_to(trace, &mut out, decimate)
        .and_then(|_| out.flush())
        .map_err(|e| io_err(path, e))
}

/// Reads a trace file written by [`write_trace`]; battery kinds come from `scenario`.
pub fn read_trace(path: impl AsRef<Path>, scenario: &Scenario) -> Result<SimTrace, IoError> {
    let path = path.as_ref();
    let parse_err = |message: String| IoError::Parse {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err("empty file".into()))?
        .map_err(|e| io_err(path, e))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 7 || !(cols.len() - 7).is_multiple_of(4) {
        return Err(parse_err(format!("unexpected column count {}", cols.len())));
    }
    let n = (cols.len() - 7) / 4;
    let ids: Vec<String> = cols[7..7 + n]
        .iter()
        .map(|c| c.strip_prefix("u_").map(str::to_string))
        .collect::<Option<_>>()
        .ok_or_else(|| parse_err("power columns must be named u_<id>".into()))?;
    let kinds = ids
        .iter()
        .map(|id| {
            scenario
                .batteries
                .iter()
                .find(|b| &b.id == id)
                .map(|b| b.kind)
                .ok_or_else(|| {
                    IoError::Config(ConfigError::new(
                        "batteries",
                        format!("trace battery {id} not in scenario"),
                    ))
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut trace = SimTrace {
        battery_ids: ids,
        kinds,
        t: Vec::new(),
        r: Vec::new(),
        y: Vec::new(),
        y_e: Vec::new(),
        y_p: Vec::new(),
        e: Vec::new(),
        e_e: Vec::new(),
        u: vec![Vec::new(); n],
        soc: vec![Vec::new(); n],
        phi: vec![Vec::new(); n],
        attached: vec![Vec::new(); n],
    };
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(format!(
                "line {}: expected {} fields",
                lineno + 2,
                cols.len()
            )));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(format!("line {}, column {}: {e}", lineno + 2, cols[i])))
        };
        trace.t.push(num(0)?);
        trace.r.push(num(1)?);
        trace.y.push(num(2)?);
        trace.y_e.push(num(3)?);
        trace.y_p.push(num(4)?);
        trace.e.push(num(5)?);
        trace.e_e.push(num(6)?);
        for i in 0..n {
            trace.u[i].push(num(7 + i)?);
            trace.soc[i].push(num(7 + n + i)?);
            trace.phi[i].push(num(7 + 2 * n + i)?);
            trace.attached[i].push(match fields[7 + 3 * n + i] {
                "1" => true,
                "0" => false,
                other => return Err(parse_err(format!("line {}: bad flag {other}", lineno + 2))),
            });
        }
    }
    Ok(trace)
}

/// Writes any serializable report as pretty-printed JSON.
pub fn write_metrics<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}
