use std::fs::File;
use std::path::Path;

use nalgebra::DVector;

use super::{HarnessError, Record, RunResult};
use crate::safety_filter::QpOutcome;

/// Fixed columns after the vector-valued groups.
pub const CSV_COLUMNS: [&str; 5] = ["h", "membership_margin", "min_constraint_margin", "fallback", "qp_status"];

/// Header for `n` states and `m` inputs.
pub fn csv_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_owned()];
    for prefix in ["x", "xhat", "dx"] {
        cols.extend((0..n).map(|i| format!("{prefix}{i}")));
    }
    for prefix in ["u_des", "u_command", "u_applied"] {
        cols.extend((0..m).map(|j| format!("{prefix}{j}")));
    }
    cols.extend(CSV_COLUMNS.iter().map(|s| (*s).to_owned()));
    cols
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn status_name(s: QpOutcome) -> &'static str {
    match s {
        QpOutcome::Optimal => "optimal",
        QpOutcome::Infeasible => "infeasible",
        QpOutcome::Skipped => "skipped",
    }
}

fn parse_status(s: &str) -> Result<QpOutcome, HarnessError> {
    match s {
        "optimal" => Ok(QpOutcome::Optimal),
        "infeasible" => Ok(QpOutcome::Infeasible),
        "skipped" => Ok(QpOutcome::Skipped),
        other => Err(HarnessError::Csv(format!("unknown qp status {other:?}"))),
    }
}

/// One header row and one row per record, floats at 17 significant digits.
pub fn emit_csv(result: &RunResult, path: &Path) -> Result<(), HarnessError> {
    let first = result.records.first().ok_or_else(|| HarnessError::Csv("no records".into()))?;
    let (n, m) = (first.state.len(), first.u_des.len());
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(csv_header(n, m)).map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in &result.records {
        let mut row = vec![num(r.t)];
        for v in [&r.state, &r.estimate, &r.delta_radius, &r.u_des, &r.u_command, &r.u_applied] {
            row.extend(v.iter().map(|x| num(*x)));
        }
        row.push(num(r.h));
        row.push(num(r.membership_margin));
        row.push(num(r.min_constraint_margin));
        row.push(u8::from(r.fallback).to_string());
        row.push(status_name(r.status).to_owned());
        w.write_record(&row).map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Summary and scenario as pretty JSON.
pub fn emit_summary(result: &RunResult, path: &Path) -> Result<(), HarnessError> {
    let doc = serde_json::json!({
        "scenario": result.scenario,
        "summary": result.summary,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| HarnessError::Csv(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Parses a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<Record>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rd = csv::Reader::from_reader(file);
    let header = rd.headers().map_err(|e| HarnessError::Csv(e.to_string()))?.clone();
    let count = |prefix: &str| {
        header
            .iter()
            .filter(|c| c.strip_prefix(prefix).is_some_and(|d| d.parse::<usize>().is_ok()))
            .count()
    };
    let (n, m) = (count("x"), count("u_des"));
    let expected = csv_header(n, m);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(HarnessError::Csv("unrecognized header".into()));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| HarnessError::Csv(e.to_string()))?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            row[i]
                .parse::<f64>()
                .map_err(|e| HarnessError::Csv(format!("column {i}: {e}")))
        };
        let mut idx = 1;
        let mut vector = |len: usize| -> Result<DVector<f64>, HarnessError> {
            let v = (idx..idx + len).map(f).collect::<Result<Vec<_>, _>>()?;
            idx += len;
            Ok(DVector::from_vec(v))
        };
        let state = vector(n)?;
        let estimate = vector(n)?;
        let delta_radius = vector(n)?;
        let u_des = vector(m)?;
        let u_command = vector(m)?;
        let u_applied = vector(m)?;
        let base = 1 + 3 * n + 3 * m;
        out.push(Record {
            t: f(0)?,
            state,
            estimate,
            delta_radius,
            u_des,
            u_command,
            u_applied,
            h: f(base)?,
            membership_margin: f(base + 1)?,
            min_constraint_margin: f(base + 2)?,
            fallback: &row[base + 3] == "1",
            status: parse_status(&row[base + 4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ScenarioConfig, Summary, Verdict};

    fn sample(k: usize) -> Record {
        let x = k as f64;
        Record {
            t: 0.025 * x,
            state: DVector::from_vec(vec![0.1 * x, -1.0 / 3.0, std::f64::consts::PI, 1e-300]),
            estimate: DVector::from_vec(vec![0.1 * x + 1e-17, 2.0 / 3.0, 0.0, -0.0]),
            delta_radius: DVector::from_vec(vec![0.0, 0.1, 0.2, 0.3]),
            u_des: DVector::from_vec(vec![-20.0]),
            u_command: DVector::from_vec(vec![1.0 / 7.0]),
            u_applied: DVector::from_vec(vec![0.0]),
            h: 1.0 - 4.0 * (0.1 * x).powi(2),
            membership_margin: f64::INFINITY,
            min_constraint_margin: f64::NEG_INFINITY,
            fallback: k.is_multiple_of(2),
            status: [QpOutcome::Optimal, QpOutcome::Infeasible, QpOutcome::Skipped][k % 3],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let records: Vec<Record> = (0..7).map(sample).collect();
        let result = RunResult {
            scenario: ScenarioConfig::default(),
            records: records.clone(),
            summary: Summary {
                min_h: 0.0,
                min_h_continuous: 0.0,
                max_abs_position: 0.0,
                verdict: Verdict::Safe,
                fallbacks: 0,
                faults: 0,
                startup_ok: None,
                wall_time: 0.0,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        emit_csv(&result, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 8);
        assert!(text.lines().next().unwrap().starts_with("t,x0,x1,x2,x3,xhat0"));
    }

    #[test]
    fn header_layout() {
        let h = csv_header(4, 1);
        assert_eq!(h.len(), 1 + 12 + 3 + 5);
        assert_eq!(h.last().unwrap(), "qp_status");
    }
}
