//! The five subcommands: run, sweep, gen-data, export-report, validate-config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use acil_core::acquisition::{BalancingAf, ClassicalAf};
use acil_core::data::write_dataset_csv;
use acil_core::pipeline::{
    atomic_write, build_stream, preflight, run_experiment, write_run_directory, AggregateReport,
    ExperimentConfig,
};
use acil_core::plot::{write_line_chart, Series};
use rayon::prelude::*;

use crate::config::{load_config, LoadedConfig};
use crate::{CliError, CliResult};

/// Environment variable naming the default output root when `--out` is
/// omitted; the run label becomes the subdirectory.
pub const OUT_ROOT_ENV: &str = "ACIL_OUT_ROOT";

fn resolve_out(out: Option<PathBuf>, label: &str) -> CliResult<PathBuf> {
    if let Some(dir) = out {
        return Ok(dir);
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(label)),
        None => Err(CliError::Config(format!(
            "no --out directory given and {OUT_ROOT_ENV} is not set"
        ))),
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `acil run`: execute one experiment and write its run directory.
pub fn run(
    config_path: &Path,
    out: Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
) -> CliResult<PathBuf> {
    let LoadedConfig {
        config,
        effective_toml,
    } = load_config(config_path, overrides, seed)?;
    preflight(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let out_dir = resolve_out(out, &config.label)?;
    let report = run_experiment(&config).map_err(runtime)?;
    write_run_directory(&out_dir, Some(&effective_toml), &report).map_err(runtime)?;
    println!(
        "{}: avg incremental accuracy {:.4} ± {:.4}, labeled cv {:.4} ± {:.4} ({} runs) -> {}",
        report.label,
        report.mean_avg_incremental_accuracy,
        report.std_avg_incremental_accuracy,
        report.mean_labeled_cv,
        report.std_labeled_cv,
        report.num_runs,
        out_dir.display()
    );
    Ok(out_dir)
}

/// `acil validate-config`: accept or reject exactly as the runner would.
pub fn validate_config(config_path: &Path, overrides: &[String]) -> CliResult<()> {
    let LoadedConfig { config, .. } = load_config(config_path, overrides, None)?;
    let stream = preflight(&config).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "OK: {} ({} states, {} classes, {} train samples)",
        config.label,
        stream.num_states(),
        stream.total_classes(),
        stream.states.iter().map(|s| s.train.len()).sum::<usize>()
    );
    Ok(())
}

/// `acil gen-data`: export the configured synthetic stream as dataset CSVs.
pub fn gen_data(config_path: &Path, out: Option<PathBuf>, overrides: &[String]) -> CliResult<()> {
    let LoadedConfig { config, .. } = load_config(config_path, overrides, None)?;
    let stream = build_stream(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let out_dir = resolve_out(out, &config.label)?;
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    let train: Vec<_> = stream.states.iter().flat_map(|s| s.train.iter()).collect();
    let test: Vec<_> = stream.states.iter().flat_map(|s| s.test.iter()).collect();
    write_dataset_csv(&out_dir.join("train.csv"), stream.dim, &train).map_err(runtime)?;
    write_dataset_csv(&out_dir.join("test.csv"), stream.dim, &test).map_err(runtime)?;
    println!(
        "wrote {} train and {} test samples ({} classes, dim {}) to {}",
        train.len(),
        test.len(),
        stream.total_classes(),
        stream.dim,
        out_dir.display()
    );
    Ok(())
}

struct SweepCell {
    budget: f64,
    classical: ClassicalAf,
    balancing: BalancingAf,
}

impl SweepCell {
    fn pair_name(&self) -> String {
        let second = match self.balancing {
            BalancingAf::Same => self.classical.name(),
            other => other.name(),
        };
        format!("{}-{}", self.classical.name(), second)
    }

    fn dir_name(&self) -> String {
        format!("b{:.2}_{}", self.budget, self.pair_name())
    }
}

/// `acil sweep`: run every budget x classical x balancing combination, one
/// run directory per cell, plus a combined CSV of mean±std accuracies.
/// Failed cells are marked and do not stop the sweep.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    config_path: &Path,
    out: Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
    budgets: Option<Vec<f64>>,
    classical: Option<Vec<ClassicalAf>>,
    balancing: Option<Vec<BalancingAf>>,
    jobs: usize,
) -> CliResult<PathBuf> {
    let LoadedConfig { config, .. } = load_config(config_path, overrides, seed)?;
    let out_dir = resolve_out(out, &format!("{}-sweep", config.label))?;
    let budgets = budgets.unwrap_or_else(|| vec![config.budget]);
    let classical = classical.unwrap_or_else(|| vec![config.plan.classical]);
    let balancing = balancing.unwrap_or_else(|| vec![config.plan.balancing]);
    if budgets.is_empty() || classical.is_empty() || balancing.is_empty() {
        return Err(CliError::Config("sweep axes must be non-empty".into()));
    }

    let mut cells = Vec::new();
    for &budget in &budgets {
        for &caf in &classical {
            for &baf in &balancing {
                cells.push(SweepCell {
                    budget,
                    classical: caf,
                    balancing: baf,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(runtime)?;
    let results: Vec<Result<AggregateReport, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_sweep_cell(&config, cell, &out_dir))
            .collect()
    });

    // Combined table shaped like the headline results: one row per budget,
    // one column per AF pair, cells formatted as percent mean±std.
    let mut columns: Vec<String> = Vec::new();
    for &caf in &classical {
        for &baf in &balancing {
            let name = SweepCell {
                budget: 0.0,
                classical: caf,
                balancing: baf,
            }
            .pair_name();
            if !columns.contains(&name) {
                columns.push(name);
            }
        }
    }
    let mut by_key: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut failures = 0usize;
    for (cell, result) in cells.iter().zip(&results) {
        let text = match result {
            Ok(report) => format!(
                "{:.2}±{:.2}",
                report.mean_avg_incremental_accuracy * 100.0,
                report.std_avg_incremental_accuracy * 100.0
            ),
            Err(msg) => {
                failures += 1;
                log::warn!("cell {} failed: {msg}", cell.dir_name());
                "FAILED".to_string()
            }
        };
        by_key.insert((format!("{:.2}", cell.budget), cell.pair_name()), text);
    }

    let mut csv = String::from("dataset,budget");
    for c in &columns {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for &budget in &budgets {
        csv.push_str(&format!("{},{:.2}", config.label, budget));
        for c in &columns {
            let cell = by_key
                .get(&(format!("{budget:.2}"), c.clone()))
                .cloned()
                .unwrap_or_default();
            csv.push(',');
            csv.push_str(&cell);
        }
        csv.push('\n');
    }
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;
    atomic_write(&out_dir.join("sweep_summary.csv"), csv.as_bytes()).map_err(runtime)?;
    println!(
        "sweep over {} cells ({} failed) -> {}",
        cells.len(),
        failures,
        out_dir.display()
    );
    Ok(out_dir)
}

fn run_sweep_cell(
    base: &ExperimentConfig,
    cell: &SweepCell,
    out_dir: &Path,
) -> Result<AggregateReport, String> {
    let mut cfg = base.clone();
    cfg.budget = cell.budget;
    cfg.plan.classical = cell.classical;
    cfg.plan.balancing = cell.balancing;
    cfg.label = format!("{}_{}", base.label, cell.dir_name());
    let snapshot = toml::to_string_pretty(&cfg).map_err(|e| e.to_string())?;
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    write_run_directory(&out_dir.join("cells").join(cell.dir_name()), Some(&snapshot), &report)
        .map_err(|e| e.to_string())?;
    Ok(report)
}

/// `acil export-report`: regenerate plots and a per-run digest from an
/// existing run directory's summary.json.
pub fn export_report(run_dir: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let summary_path = run_dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", summary_path.display())))?;
    let report: AggregateReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", summary_path.display())))?;
    let out_dir = out.unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&out_dir).map_err(runtime)?;

    let mut digest = String::from("seed,avg_incremental_accuracy,mean_labeled_cv\n");
    for run in &report.runs {
        digest.push_str(&format!(
            "{},{},{}\n",
            run.seed, run.avg_incremental_accuracy, run.mean_labeled_cv
        ));
    }
    atomic_write(&out_dir.join("run_digest.csv"), digest.as_bytes()).map_err(runtime)?;

    let series: Vec<Series> = report
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
        &series,
    )
    .map_err(runtime)?;

    println!(
        "{}: {} runs, mean avg incremental accuracy {:.4} ± {:.4}",
        report.label,
        report.num_runs,
        report.mean_avg_incremental_accuracy,
        report.std_avg_incremental_accuracy
    );
    for run in &report.runs {
        println!(
            "  seed {}: acc {:.4}, labeled cv {:.4}",
            run.seed, run.avg_incremental_accuracy, run.mean_labeled_cv
        );
    }
    Ok(())
}
