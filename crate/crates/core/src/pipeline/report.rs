//! Run-directory writer: config snapshot, per-state metrics CSV, aggregated
//! summary JSON, JSON-lines event logs, memory snapshots and SVG plots.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::metrics::balance_trace;
use crate::pipeline::AggregateReport;
use crate::plot::{write_line_chart, Series};

/// Write-temp-then-rename so partially written files never appear under the
/// final name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!("{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes all artifacts of an aggregated experiment into `out_dir`.
///
/// Layout: `config.toml` (when a snapshot is given), `summary.json`,
/// `events_run{r}.jsonl`, `state_metrics_run{r}.csv`,
/// `memory_run{r}_state{t}.json`, `accuracy_curves.svg` and
/// `balance_trace_run0.svg`.
pub fn write_run_directory(
    out_dir: &Path,
    config_snapshot: Option<&str>,
    report: &AggregateReport,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    if let Some(snapshot) = config_snapshot {
        atomic_write(&out_dir.join("config.toml"), snapshot.as_bytes())?;
    }

    let mut report = report.clone();
    for (r, run) in report.runs.iter_mut().enumerate() {
        if !run.events.is_empty() {
            let name = format!("events_run{r}.jsonl");
            let mut lines = String::new();
            for ev in &run.events {
                lines.push_str(&serde_json::to_string(ev)?);
                lines.push('\n');
            }
            atomic_write(&out_dir.join(&name), lines.as_bytes())?;
            run.event_log = name;
        }

        let mut csv = String::from("state,acc_top1,cv_labeled,n_labeled\n");
        for t in 0..run.per_state_accuracy.len() {
            csv.push_str(&format!(
                "{t},{},{},{}\n",
                run.per_state_accuracy[t], run.per_state_labeled_cv[t], run.n_labeled_per_state[t]
            ));
        }
        atomic_write(&out_dir.join(format!("state_metrics_run{r}.csv")), csv.as_bytes())?;

        for (t, snap) in run.memory_snapshots.iter().enumerate() {
            atomic_write(
                &out_dir.join(format!("memory_run{r}_state{t}.json")),
                serde_json::to_string_pretty(snap)?.as_bytes(),
            )?;
        }
    }

    atomic_write(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;

    let acc_series: Vec<Series> = report
        .runs
        .iter()
        .map(|run| Series {
            name: format!("seed {}", run.seed),
            points: run
                .per_state_accuracy
                .iter()
                .enumerate()
                .map(|(t, a)| (t as f64, *a))
                .collect(),
        })
        .collect();
    write_line_chart(
        &out_dir.join("accuracy_curves.svg"),
        &format!("{}: top-1 accuracy per state", report.label),
        "state",
        "accuracy",
        &acc_series,
    )?;

    if let Some(first) = report.runs.first() {
        if !first.events.is_empty() {
            let trace = balance_trace(&first.events, &report.new_classes_by_state)?;
            let series = vec![Series {
                name: format!("seed {}", first.seed),
                points: trace
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i as f64, *v))
                    .collect(),
            }];
            write_line_chart(
                &out_dir.join("balance_trace_run0.svg"),
                &format!("{}: labeled-count cv per labeling event", report.label),
                "labeling event",
                "cv of labeled counts",
                &series,
            )?;
        }
    }
    Ok(())
}
