//! CSV files: datasets (`t,u,y` or `t,u1..,y1..`) and the tables the CLI
//! emits. Comment lines start with `#` and carry `key=value` metadata.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use qlpv_core::qlpv::IoDataset;
use qlpv_core::Mat;

use crate::error::{CliError, Result};

/// 17 significant digits, enough to round-trip any finite double.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn channel_names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }
}

/// Writes comment lines, a header and rows of already formatted cells.
pub fn write_table(path: &Path, comments: &[String], header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let io = |e| CliError::io(path, e);
    let mut f = BufWriter::new(File::create(path).map_err(io)?);
    for c in comments {
        writeln!(f, "# {c}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(f);
    let csv_err = |e: csv::Error| CliError::format(path, e);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub fn save_dataset(data: &IoDataset, path: &Path, comments: &[String]) -> Result<()> {
    let mut header = vec![String::from("t")];
    header.extend(channel_names("u", data.nu()));
    header.extend(channel_names("y", data.ny()));
    let rows: Vec<Vec<String>> = (0..data.len())
        .map(|t| {
            let mut r = vec![fmt_f64(t as f64 * data.dt)];
            r.extend(data.u.row(t).iter().map(|&v| fmt_f64(v)));
            r.extend(data.y.row(t).iter().map(|&v| fmt_f64(v)));
            r
        })
        .collect();
    let mut all = vec![format!("dt={}", fmt_f64(data.dt))];
    all.extend_from_slice(comments);
    write_table(path, &all, &header, &rows)
}

/// `key=value` pairs from the leading comment lines.
pub fn read_metadata(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let Some(rest) = line.strip_prefix('#') else { break };
        for tok in rest.split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                out.push((k.to_string(), v.to_string()));
            }
        }
    }
    Ok(out)
}

fn split_header(path: &Path, header: &csv::StringRecord) -> Result<(usize, usize)> {
    let bad = |msg: String| CliError::Parse { path: path.into(), line: 1, msg };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(bad(format!("header must start with `t`, found {names:?}")));
    }
    let nu = names.iter().filter(|n| n.starts_with('u')).count();
    let ny = names.iter().filter(|n| n.starts_with('y')).count();
    if nu == 0 || ny == 0 || names.len() != 1 + nu + ny {
        return Err(bad(format!("expected columns t, u…, y…; found {names:?}")));
    }
    let expected: Vec<String> = ["t"].iter().map(|s| s.to_string()).chain(channel_names("u", nu)).chain(channel_names("y", ny)).collect();
    if names != expected {
        return Err(bad(format!("expected header {expected:?}, found {names:?}")));
    }
    Ok((nu, ny))
}

pub fn load_dataset(path: &Path) -> Result<IoDataset> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f);
    let header = rdr.headers().map_err(|e| CliError::format(path, e))?.clone();
    if header.is_empty() {
        return Err(CliError::Parse { path: path.into(), line: 1, msg: String::from("empty file") });
    }
    let (nu, ny) = split_header(path, &header)?;
    let (mut t, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse { path: path.into(), line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Parse { path: path.into(), line, msg: format!("bad number: {e}") })?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Parse { path: path.into(), line, msg: String::from("non-finite value") });
        }
        t.push(vals[0]);
        u.extend_from_slice(&vals[1..1 + nu]);
        y.extend_from_slice(&vals[1 + nu..]);
    }
    if t.is_empty() {
        return Err(CliError::Parse { path: path.into(), line: 2, msg: String::from("no data rows") });
    }
    let meta_dt = read_metadata(path)?.into_iter().find(|(k, _)| k == "dt").and_then(|(_, v)| v.parse::<f64>().ok());
    let dt = match meta_dt {
        Some(dt) => dt,
        None if t.len() > 1 => t[1] - t[0],
        None => 1.0,
    };
    let n = t.len();
    Ok(IoDataset::new(Mat::from_vec(n, nu, u), Mat::from_vec(n, ny, y), dt)?)
}
