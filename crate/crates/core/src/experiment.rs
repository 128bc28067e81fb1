//! Experiment driver: per-seed runs, the ablation grid, and their on-disk
//! artifacts.
//!
//! Layout of one invocation:
//!
//! ```text
//! <output_dir>/<kind>-<YYYYmmdd-HHMMSS>/
//!     config.toml            input config, verbatim (when read from a file)
//!     resolved.toml          every key with its effective value
//!     summary.csv, summary.md
//!     seed-<s>/              (run)
//!         log.csv, checkpoint.json, training_state.json
//!         css/epoch_<e>.csv, pseudo/epoch_<e>.csv
//!         accuracy.svg, gates.svg, css_first.svg, css_final.svg
//!     ablation.csv, ablation.md, M-<r>/seed-<s>/log.csv   (ablate)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::ablation::AblationRow;
use crate::checkpoint::ModelCheckpoint;
use crate::config::ExperimentConfig;
use crate::data::{dump_csv, generate, load_csv, Pools};
use crate::error::{Error, Result};
use crate::plots;
use crate::trainer::{AblationFlags, EpochRecord, Trainer};

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// How much a single training run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifacts {
    /// Nothing on disk.
    None,
    /// The epoch log only.
    LogOnly,
    /// Log, checkpoints, CSS and pseudo-label dumps, plots.
    Full,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub final_accuracy: f64,
    pub log: Vec<EpochRecord>,
}

/// Creates `<base>/<kind>-<timestamp>`, adding a numeric suffix if taken.
pub fn create_output_dir(base: &Path, kind: &str) -> Result<PathBuf> {
    fs::create_dir_all(base)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut dir = base.join(format!("{kind}-{stamp}"));
    let mut n = 1;
    while dir.exists() {
        dir = base.join(format!("{kind}-{stamp}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir)?;
    Ok(dir)
}

fn echo_config(dir: &Path, config: &ExperimentConfig, raw: Option<&str>) -> Result<()> {
    if let Some(text) = raw {
        fs::write(dir.join("config.toml"), text)?;
    }
    fs::write(dir.join("resolved.toml"), config.to_toml_string()?)?;
    Ok(())
}

/// Pools for one seed: loaded from `data_path` or generated.
pub fn load_pools(config: &ExperimentConfig, seed: u64) -> Result<Pools> {
    match &config.data_path {
        Some(path) => load_csv(path),
        None => generate(&config.domain, config.data_seed.unwrap_or(seed)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per epoch.
pub fn write_log_csv(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lr",
        "ce",
        "lab",
        "con",
        "wdbc",
        "adbc",
        "overall",
        "target_accuracy",
        "pseudo_count",
        "pseudo_accuracy",
        "node_kept_ratio",
        "combined_gate_ratio",
    ])?;
    for r in log {
        let l = r.losses;
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            opt(l.map(|l| l.ce)),
            opt(l.map(|l| l.lab)),
            opt(l.map(|l| l.con)),
            opt(l.map(|l| l.wdbc)),
            opt(l.map(|l| l.adbc)),
            opt(l.map(|l| l.overall)),
            r.target_accuracy.to_string(),
            r.pseudo_count.to_string(),
            opt(r.pseudo_accuracy),
            r.gates.node_kept.to_string(),
            r.gates.combined_open.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains one seed, writing artifacts under `dir` as requested.
pub fn train_seed(
    config: &ExperimentConfig,
    flags: &AblationFlags,
    seed: u64,
    dir: Option<&Path>,
    artifacts: Artifacts,
) -> Result<SeedResult> {
    let pools = load_pools(config, seed)?;
    let train = config.train_for_seed(seed);
    let dir = match (dir, artifacts) {
        (Some(d), a) if a != Artifacts::None => {
            fs::create_dir_all(d)?;
            Some(d)
        }
        _ => None,
    };
    let full = dir.filter(|_| artifacts == Artifacts::Full);
    if let Some(d) = full {
        fs::create_dir_all(d.join("css"))?;
        fs::create_dir_all(d.join("pseudo"))?;
    }

    let mut trainer = Trainer::new(train.clone(), *flags, &pools)?;
    while trainer.epoch() < train.epochs {
        trainer.run_epoch()?;
        if let Some(d) = full {
            let e = trainer.epoch();
            let record = trainer.log().last().expect("epoch recorded");
            if let Some(css) = &record.css {
                css.write_csv(&d.join(format!("css/epoch_{e:03}.csv")))?;
            }
            if flags.needs_pseudo() {
                trainer
                    .pseudo_labels()
                    .write_csv(&d.join(format!("pseudo/epoch_{e:03}.csv")))?;
            }
            trainer.checkpoint().save(&d.join("training_state.json"))?;
        }
    }
    let log = trainer.log().to_vec();
    if let Some(d) = dir {
        write_log_csv(&d.join("log.csv"), &log)?;
    }
    if let Some(d) = full {
        ModelCheckpoint::from_params(trainer.params(), seed).save(&d.join("checkpoint.json"))?;
        plots::accuracy_curve(&d.join("accuracy.svg"), &log)?;
        plots::gate_curve(&d.join("gates.svg"), &log)?;
        let first = log.iter().find(|r| r.epoch == 1).or(log.first());
        if let Some(css) = first.and_then(|r| r.css.as_ref()) {
            plots::css_heatmap(&d.join("css_first.svg"), "class-wise similarity, epoch 1", css)?;
        }
        if let Some(css) = log.last().and_then(|r| r.css.as_ref()) {
            plots::css_heatmap(&d.join("css_final.svg"), "class-wise similarity, final epoch", css)?;
        }
    }
    let final_accuracy = log.last().expect("epoch 0 always recorded").target_accuracy;
    log::info!("seed {seed}: final target accuracy {final_accuracy:.4}");
    Ok(SeedResult {
        seed,
        final_accuracy,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub seeds: Vec<SeedResult>,
    pub accuracy: MeanStd,
}

/// Trains every configured seed with the configured flags.
pub fn cmd_run(config: &ExperimentConfig, raw: Option<&str>, out: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let dir = create_output_dir(out.unwrap_or(&config.output_dir), "run")?;
    echo_config(&dir, config, raw)?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&s| train_seed(config, &config.flags, s, Some(&dir.join(format!("seed-{s}"))), Artifacts::Full))
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = seeds.iter().map(|r| r.final_accuracy).collect();
    let accuracy = MeanStd::of(&accs);

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["seed", "final_accuracy"])?;
    for r in &seeds {
        w.write_record([r.seed.to_string(), r.final_accuracy.to_string()])?;
    }
    w.write_record(["mean".to_string(), accuracy.mean.to_string()])?;
    w.write_record(["std".to_string(), accuracy.std.to_string()])?;
    w.flush()?;

    let mut md = String::from("| seed | final target accuracy (%) |\n|---|---|\n");
    for r in &seeds {
        let _ = writeln!(md, "| {} | {:.2} |", r.seed, 100.0 * r.final_accuracy);
    }
    let _ = writeln!(md, "| mean ± std | {accuracy} |");
    fs::write(dir.join("summary.md"), md)?;

    let series = seeds
        .iter()
        .map(|r| {
            let pts = r.log.iter().map(|e| (e.epoch as f64, e.target_accuracy)).collect();
            (format!("seed {}", r.seed), pts)
        })
        .collect::<Vec<_>>();
    plots::line_chart(&dir.join("accuracy.svg"), "target accuracy", "epoch", &series)?;
    Ok(RunReport { dir, seeds, accuracy })
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub row: &'static AblationRow,
    /// Final accuracy per seed, in config seed order.
    pub accuracies: Vec<f64>,
}

impl AblationResult {
    pub fn summary(&self) -> MeanStd {
        MeanStd::of(&self.accuracies)
    }
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub results: Vec<AblationResult>,
}

fn mark(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        ""
    }
}

impl AblationTable {
    pub fn get(&self, id: usize) -> Option<&AblationResult> {
        self.results.iter().find(|r| r.row.id == id)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = [
            "row", "adbc", "wdbc", "lab", "con", "augment_abc", "pseudo_in_wdbc", "abc_positive", "abc_negative", "mean",
            "std",
        ]
        .map(String::from)
        .to_vec();
        header.extend(self.seeds.iter().map(|s| format!("seed_{s}")));
        w.write_record(&header)?;
        for r in &self.results {
            let f = r.row.flags;
            let s = r.summary();
            let mut rec = vec![r.row.label()];
            rec.extend(
                [f.adbc, f.wdbc, f.lab, f.con, f.augment_abc, f.pseudo_in_wdbc, f.abc_positive, f.abc_negative]
                    .map(|b| u8::from(b).to_string()),
            );
            rec.push(s.mean.to_string());
            rec.push(s.std.to_string());
            rec.extend(r.accuracies.iter().map(|a| a.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from(
            "| row | adbc | wdbc | lab | con | setting | accuracy (%) |\n|---|---|---|---|---|---|---|\n",
        );
        for r in &self.results {
            let f = r.row.flags;
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.row.label(),
                mark(f.adbc),
                mark(f.wdbc),
                mark(f.lab),
                mark(f.con),
                r.row.description,
                r.summary()
            );
        }
        md
    }
}

/// Runs the selected ablation rows for every configured seed. Pass `None`
/// as `out` to skip writing anything.
pub fn run_ablation(
    config: &ExperimentConfig,
    rows: &[&'static AblationRow],
    out: Option<&Path>,
) -> Result<AblationTable> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::config("rows", "no rows selected"));
    }
    let cells: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| config.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let accs = cells
        .par_iter()
        .map(|&(r, seed)| {
            let row = rows[r];
            let dir = out.map(|d| d.join(row.label()).join(format!("seed-{seed}")));
            let artifacts = if dir.is_some() { Artifacts::LogOnly } else { Artifacts::None };
            train_seed(config, &row.flags, seed, dir.as_deref(), artifacts).map(|res| res.final_accuracy)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = config.seeds.len();
    let results = rows
        .iter()
        .enumerate()
        .map(|(i, row)| AblationResult {
            row,
            accuracies: accs[i * n..(i + 1) * n].to_vec(),
        })
        .collect();
    Ok(AblationTable {
        seeds: config.seeds.clone(),
        results,
    })
}

/// Runs the ablation grid into a fresh output directory.
pub fn cmd_ablate(
    config: &ExperimentConfig,
    rows: &[&'static AblationRow],
    raw: Option<&str>,
    out: Option<&Path>,
) -> Result<(PathBuf, AblationTable)> {
    config.validate()?;
    let dir = create_output_dir(out.unwrap_or(&config.output_dir), "ablate")?;
    echo_config(&dir, config, raw)?;
    let table = run_ablation(config, rows, Some(&dir))?;
    table.write_csv(&dir.join("ablation.csv"))?;
    fs::write(dir.join("ablation.md"), table.to_markdown())?;
    Ok((dir, table))
}

/// Writes the pools of one seed as CSV (plus the evaluation-label sidecar).
pub fn cmd_dump_data(config: &ExperimentConfig, seed: u64, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    dump_csv(&generate(&config.domain, config.data_seed.unwrap_or(seed))?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[0.9, 0.92, 0.94]);
        assert!((m.mean - 0.92).abs() < 1e-12);
        assert!((m.std - 0.02).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
        assert_eq!(format!("{m}"), "92.00 ± 2.00");
    }

    #[test]
    fn output_dirs_do_not_collide() {
        let base = tempfile::tempdir().unwrap();
        let a = create_output_dir(base.path(), "run").unwrap();
        let b = create_output_dir(base.path(), "run").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }
}
