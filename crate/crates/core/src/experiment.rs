//! Experiment orchestration: runs the configured sweep and persists results,
//! summary, and the run manifest. All files are UTF-8 with LF line endings
//! and `.` decimal separators; identical inputs produce byte-identical
//! outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{monte_carlo, outage_probability, TrialRecord};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub const RESULTS_HEADER: &str = "snr_db,scheme,trial,seed,spectral_efficiency_bpshz,slots_used,max_aoa_bin_error,max_aod_bin_error";

/// Paths written by [`run_experiment`] plus the in-memory records.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    pub manifest_path: PathBuf,
    pub records: Vec<TrialRecord>,
}

/// One results.csv row. Floats use the shortest lossless decimal form.
pub fn format_record(r: &TrialRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.snr_db,
        r.scheme,
        r.trial,
        r.seed,
        r.spectral_efficiency,
        r.slots_used,
        r.max_aoa_bin_error,
        r.max_aod_bin_error
    )
}

/// Parses one results.csv row.
pub fn parse_record(line: &str) -> Result<TrialRecord> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 8 {
        return Err(Error::Parse(format!(
            "results row has {} fields, expected 8: {line}",
            fields.len()
        )));
    }
    let bad = |field: &str, what: &str| Error::Parse(format!("bad {what} '{field}' in: {line}"));
    Ok(TrialRecord {
        snr_db: fields[0].parse().map_err(|_| bad(fields[0], "snr_db"))?,
        scheme: fields[1].parse()?,
        trial: fields[2].parse().map_err(|_| bad(fields[2], "trial"))?,
        seed: fields[3].parse().map_err(|_| bad(fields[3], "seed"))?,
        spectral_efficiency: fields[4]
            .parse()
            .map_err(|_| bad(fields[4], "spectral_efficiency_bpshz"))?,
        slots_used: fields[5].parse().map_err(|_| bad(fields[5], "slots_used"))?,
        max_aoa_bin_error: fields[6]
            .parse()
            .map_err(|_| bad(fields[6], "max_aoa_bin_error"))?,
        max_aod_bin_error: fields[7]
            .parse()
            .map_err(|_| bad(fields[7], "max_aod_bin_error"))?,
    })
}

/// Reads a results.csv produced by [`run_experiment`].
pub fn read_results(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == RESULTS_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: unexpected results header {other:?}",
                path.display()
            )))
        }
    }
    lines.map(parse_record).collect()
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn results_csv(records: &[TrialRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 48 + 128);
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format_record(r));
        out.push('\n');
    }
    out
}

fn summary_csv(config: &ExperimentConfig, records: &[TrialRecord]) -> Result<String> {
    let mut header = String::from("snr_db,scheme,trials,mean_spectral_efficiency_bpshz");
    for r_th in &config.sweep.r_th {
        header.push_str(&format!(",outage_rth_{r_th}"));
    }
    let mut out = header;
    out.push('\n');
    for &snr in &config.sweep.snr_db {
        for &scheme in &config.sweep.schemes {
            let samples: Vec<f64> = records
                .iter()
                .filter(|r| r.snr_db == snr && r.scheme == scheme)
                .map(|r| r.spectral_efficiency)
                .collect();
            if samples.is_empty() {
                continue;
            }
            let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
            out.push_str(&format!("{snr},{scheme},{},{mean}", samples.len()));
            for &r_th in &config.sweep.r_th {
                out.push_str(&format!(",{}", outage_probability(&samples, r_th)?));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Runs the configured experiment and writes `results.csv`, `summary.csv`,
/// and `manifest.toml` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let records = monte_carlo(config)?;

    let results_path = out_dir.join(RESULTS_FILE);
    write_atomic(&results_path, &results_csv(&records))?;

    let summary_path = out_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, &summary_csv(config, &records)?)?;

    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_atomic(&manifest_path, &config.to_toml_string()?)?;

    Ok(RunArtifacts {
        results_path,
        summary_path,
        manifest_path,
        records,
    })
}

/// Emits one plot-ready file per curve from an existing results file:
/// `curve_se_<scheme>.csv` with the mean spectral efficiency per SNR, and
/// `curve_outage_<scheme>_rth<r>.csv` per outage threshold.
pub fn sweep_dump(
    config: &ExperimentConfig,
    results_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let records = read_results(results_path)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for &scheme in &config.sweep.schemes {
        let per_snr: Vec<(f64, Vec<f64>)> = config
            .sweep
            .snr_db
            .iter()
            .map(|&snr| {
                (
                    snr,
                    records
                        .iter()
                        .filter(|r| r.scheme == scheme && r.snr_db == snr)
                        .map(|r| r.spectral_efficiency)
                        .collect(),
                )
            })
            .collect();
        if per_snr.iter().all(|(_, v)| v.is_empty()) {
            continue;
        }

        let mut se = String::from("snr_db,mean_spectral_efficiency_bpshz\n");
        for (snr, samples) in &per_snr {
            if samples.is_empty() {
                continue;
            }
            let mean: f64 = samples.iter().sum::<f64>() / samples.len() as f64;
            se.push_str(&format!("{snr},{mean}\n"));
        }
        let se_path = out_dir.join(format!("curve_se_{scheme}.csv"));
        write_atomic(&se_path, &se)?;
        written.push(se_path);

        for &r_th in &config.sweep.r_th {
            let mut curve = String::from("snr_db,outage\n");
            for (snr, samples) in &per_snr {
                if samples.is_empty() {
                    continue;
                }
                curve.push_str(&format!("{snr},{}\n", outage_probability(samples, r_th)?));
            }
            let path = out_dir.join(format!("curve_outage_{scheme}_rth{r_th}.csv"));
            write_atomic(&path, &curve)?;
            written.push(path);
        }
    }
    Ok(written)
}
