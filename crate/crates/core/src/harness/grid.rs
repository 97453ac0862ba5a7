use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{
    build_system, emit_csv, emit_overlay, emit_plots, emit_summary, run_scenario, HarnessConfig, HarnessError,
    Record, RunResult, ScenarioConfig, Variant, Verdict,
};

#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub expected: Verdict,
}

/// One verdict-table line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub name: String,
    pub variant: Variant,
    pub frequency: f64,
    pub delay: f64,
    pub expected: Verdict,
    /// `None` when the run failed.
    pub verdict: Option<Verdict>,
    pub min_h: f64,
    pub max_abs_position: f64,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl GridRow {
    pub fn matches_expectation(&self) -> bool {
        self.verdict == Some(self.expected)
    }
}

/// Sampling-rate and delay experiments on top of `base`.
pub fn canonical_grid(base: &ScenarioConfig) -> Vec<GridEntry> {
    let entry = |name: &str, variant, frequency, delay, expected| GridEntry {
        name: name.to_owned(),
        scenario: ScenarioConfig {
            variant,
            frequency,
            delay,
            ..base.clone()
        },
        expected,
    };
    vec![
        entry("nominal-40hz", Variant::Nominal, 40.0, 0.0, Verdict::Safe),
        entry("nominal-20hz", Variant::Nominal, 20.0, 0.0, Verdict::Unsafe),
        entry("robust-20hz", Variant::Robust, 20.0, 0.0, Verdict::Safe),
        entry("nominal-delay-30ms", Variant::Nominal, 100.0, 0.03, Verdict::Unsafe),
        entry("delay-aware-30ms", Variant::DelayAware, 100.0, 0.03, Verdict::Safe),
    ]
}

/// Runs every canonical scenario concurrently and, when `out` is given,
/// writes per-run CSV, summaries, plots, an overlay and `verdicts.csv`.
pub fn run_grid(cfg: &HarnessConfig, out: Option<&Path>) -> Result<(Vec<GridRow>, Vec<Option<RunResult>>), HarnessError> {
    cfg.validate()?;
    let system = build_system(cfg)?;
    let entries = canonical_grid(&cfg.scenario);
    let results: Vec<Result<RunResult, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = entries
            .iter()
            .map(|e| {
                let mut local = cfg.clone();
                local.scenario = e.scenario.clone();
                let system = &system;
                s.spawn(move || run_scenario(&local, system).map_err(|err| err.to_string()))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("scenario panicked".to_owned())))
            .collect()
    });
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (e, r) in entries.iter().zip(results) {
        let row = match &r {
            Ok(run) => GridRow {
                name: e.name.clone(),
                variant: e.scenario.variant,
                frequency: e.scenario.frequency,
                delay: e.scenario.delay,
                expected: e.expected,
                verdict: Some(run.summary.verdict),
                min_h: run.summary.min_h_continuous,
                max_abs_position: run.summary.max_abs_position,
                wall_time: run.summary.wall_time,
                error: None,
            },
            Err(msg) => GridRow {
                name: e.name.clone(),
                variant: e.scenario.variant,
                frequency: e.scenario.frequency,
                delay: e.scenario.delay,
                expected: e.expected,
                verdict: None,
                min_h: f64::NAN,
                max_abs_position: f64::NAN,
                wall_time: 0.0,
                error: Some(msg.clone()),
            },
        };
        rows.push(row);
        runs.push(r.ok());
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (e, run) in entries.iter().zip(&runs) {
            if let Some(run) = run {
                let sub = dir.join(&e.name);
                std::fs::create_dir_all(&sub).map_err(|err| HarnessError::io(&sub, err))?;
                emit_csv(run, &sub.join("run.csv"))?;
                emit_summary(run, &sub.join("summary.json"))?;
                emit_plots(run, &sub, cfg.safety.position_limit)?;
            }
        }
        let named: Vec<(String, &[Record])> = entries
            .iter()
            .zip(&runs)
            .filter_map(|(e, r)| r.as_ref().map(|r| (e.name.clone(), r.records.as_slice())))
            .collect();
        if !named.is_empty() {
            emit_overlay(&named, &dir.join("overlay.svg"), cfg.safety.position_limit)?;
        }
        write_verdicts(&rows, &dir.join("verdicts.csv"))?;
    }
    Ok((rows, runs))
}

pub fn write_verdicts(rows: &[GridRow], path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "scenario",
        "variant",
        "frequency",
        "delay",
        "expected",
        "verdict",
        "min_h",
        "max_abs_position",
        "wall_time",
        "error",
    ])
    .map_err(|e| HarnessError::Csv(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.variant.name().to_owned(),
            r.frequency.to_string(),
            r.delay.to_string(),
            verdict_name(Some(r.expected)).to_owned(),
            verdict_name(r.verdict).to_owned(),
            format!("{:.6}", r.min_h),
            format!("{:.6}", r.max_abs_position),
            format!("{:.3}", r.wall_time),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| HarnessError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn verdict_name(v: Option<Verdict>) -> &'static str {
    match v {
        Some(Verdict::Safe) => "SAFE",
        Some(Verdict::Unsafe) => "UNSAFE",
        None => "ERROR",
    }
}

/// Plain-text verdict table.
pub fn verdict_table(rows: &[GridRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:>8} {:>7} {:>8} {:>8} {:>10} {:>9}",
        "scenario", "rate Hz", "delay", "expected", "verdict", "min h", "max |p|"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>7} {:>8} {:>8} {:>10.5} {:>9.4}",
            r.name,
            r.frequency,
            r.delay,
            verdict_name(Some(r.expected)),
            verdict_name(r.verdict),
            r.min_h,
            r.max_abs_position
        );
    }
    s
}
