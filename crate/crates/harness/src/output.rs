//! CSV artifacts. Each file starts with a one-line `# schema:` header naming
//! its columns and units, followed by an ordinary CSV header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use empc_core::oracle::{format_value, Dataset};

use crate::closedloop::RunLog;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes `schema`, the column header and `rows` to `path`.
pub fn write_table(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "# schema: {schema}")?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`], skipping the schema line.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body = text.strip_prefix("# schema:").map(|r| r.split_once('\n').map_or("", |(_, b)| b)).unwrap_or(&text);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| Ok(rec?.iter().map(str::to_string).collect())).collect::<Result<_>>()?;
    Ok((header, rows))
}

pub fn fmt(v: f64) -> String {
    format_value(v)
}

pub fn write_equilibrium_curve(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let rows: Vec<Vec<String>> = curve.iter().map(|&(u, l)| vec![fmt(u), fmt(l)]).collect();
    write_table(path, "u (m3/min), l_ss ($/min) along the equilibrium manifold", &["u", "l_ss"], &rows)
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let mut f = create(path)?;
    let cols = Dataset::csv_header(d.spec()).join(", ");
    writeln!(f, "# schema: oracle samples, regressor then input then label: {cols}")?;
    d.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path, spec: empc_core::narx::RegressorSpec) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body = text.strip_prefix("# schema:").map(|r| r.split_once('\n').map_or("", |(_, b)| b)).unwrap_or(&text);
    Ok(Dataset::read_csv(body.as_bytes(), spec)?)
}

/// `(t, l_true, l_pred, residual)` with `residual = l_true - l_pred`.
pub fn write_validation(path: &Path, holdout: &Dataset, predictions: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = holdout
        .samples()
        .iter()
        .zip(predictions)
        .map(|(s, &p)| vec![s.tag.time.to_string(), fmt(s.cost), fmt(p), fmt(s.cost - p)])
        .collect();
    write_table(
        path,
        "t (sample index), l_true ($/min), l_pred ($/min), residual = l_true - l_pred",
        &["t", "l_true", "l_pred", "residual"],
        &rows,
    )
}

pub const RUNLOG_HEADER: [&str; 9] = ["k", "u", "l_true", "l_measured", "cA", "cB", "V_opt", "feasible", "solve_time"];

const RUNLOG_SCHEMA: &str = "k (step), u (m3/min), l_true, l_measured ($/min), cA, cB (kmol/m3), V_opt, feasible (0/1), solve_time (s, empty unless recorded)";

/// One formatted row per step, in [`RUNLOG_HEADER`] order.
pub fn runlog_rows(log: &RunLog) -> Vec<Vec<String>> {
    log.rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                fmt(r.u),
                fmt(r.l_true),
                fmt(r.l_measured),
                fmt(r.ca),
                fmt(r.cb),
                fmt(r.v_opt),
                (r.feasible as u8).to_string(),
                r.solve_time.map(fmt).unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_runlog(path: &Path, log: &RunLog) -> Result<()> {
    write_table(path, RUNLOG_SCHEMA, &RUNLOG_HEADER, &runlog_rows(log))
}

/// Several runs in one file, prefixed by run index and controller name.
pub fn write_runlogs(path: &Path, logs: &[(usize, &str, &RunLog)]) -> Result<()> {
    let mut rows = Vec::new();
    for (index, who, log) in logs {
        for r in runlog_rows(log) {
            let mut full = vec![index.to_string(), who.to_string()];
            full.extend(r);
            rows.push(full);
        }
    }
    let mut header = vec!["run", "controller"];
    header.extend(RUNLOG_HEADER);
    write_table(path, &format!("run, controller (oracle|ideal), then {RUNLOG_SCHEMA}"), &header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closedloop::RunRow;

    #[test]
    fn runlog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("closedloop_1.csv");
        let log = RunLog {
            rows: vec![RunRow {
                k: 0,
                u: 1.25,
                l_true: -0.5,
                l_measured: -0.51,
                ca: 0.4,
                cb: 0.3,
                v_opt: -4.0,
                feasible: true,
                solve_time: None,
            }],
            fallbacks: 0,
        };
        write_runlog(&p, &log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# schema: "));
        let (h, rows) = read_table(&p).unwrap();
        assert_eq!(h.len(), 9);
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.25);
        assert_eq!(rows[0][7], "1");
        assert_eq!(rows[0][8], "");
    }
}
