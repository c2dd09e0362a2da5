//! Experiment configuration: TOML schema, validation that reports every
//! violation with its field path, and the built-in default parameter set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ScenarioConfig, ThzLinkParams, UpaGeometry};
use crate::error::{Error, Result};
use crate::evaluation::Scheme;

/// RF chain counts per side; each auxiliary slot sounds `chains` codebook
/// beams, each refinement slot applies `chains` narrow beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub aux_tx_rf_chains: usize,
    pub aux_rx_rf_chains: usize,
    pub data_tx_rf_chains: usize,
    pub data_rx_rf_chains: usize,
}

/// Per-axis sizes of the fine transmit/receive angular grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tx_y: usize,
    pub tx_z: usize,
    pub rx_y: usize,
    pub rx_z: usize,
}

/// Monte-Carlo sweep: SNR points, trial count, outage thresholds, schemes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub trials: u64,
    pub r_th: Vec<f64>,
    pub schemes: Vec<Scheme>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub scenario: ScenarioConfig,
    pub schedule: ScheduleConfig,
    pub grids: GridConfig,
    pub sweep: SweepConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    /// The standard desk-scale setup: 8x8 data and 4x4 auxiliary arrays, 4 RF
    /// chains everywhere, 64-point grids per axis, 3 paths at 200 GHz, and a
    /// -20..10 dB sweep with outage thresholds 0.1 and 0.5 bps/Hz.
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 20,
            output: default_output(),
            scenario: ScenarioConfig {
                data_tx: UpaGeometry::new(8, 8),
                data_rx: UpaGeometry::new(8, 8),
                aux_tx: UpaGeometry::new(4, 4),
                aux_rx: UpaGeometry::new(4, 4),
                link: ThzLinkParams {
                    carrier_freq_hz: 200e9,
                    k_abs_per_m: 0.0033,
                    reflection_loss: 0.05,
                },
                num_paths: 3,
                los_distance_m: 100.0,
                nlos_detour_factor: 1.2,
                normalize_to_los: true,
            },
            schedule: ScheduleConfig {
                aux_tx_rf_chains: 4,
                aux_rx_rf_chains: 4,
                data_tx_rf_chains: 4,
                data_rx_rf_chains: 4,
            },
            grids: GridConfig {
                tx_y: 64,
                tx_z: 64,
                rx_y: 64,
                rx_z: 64,
            },
            sweep: SweepConfig {
                snr_db: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0],
                trials: 500,
                r_th: vec![0.1, 0.5],
                schemes: vec![
                    Scheme::Proposed,
                    Scheme::Exhaustive,
                    Scheme::OmniOmp,
                    Scheme::PerfectCsi,
                ],
            },
        }
    }
}

impl ExperimentConfig {
    /// Collects every constraint violation, each prefixed with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut issues = self.scenario.validate("scenario");
        let sc = &self.scenario;
        let sch = &self.schedule;

        for (field, chains) in [
            ("schedule.aux_tx_rf_chains", sch.aux_tx_rf_chains),
            ("schedule.aux_rx_rf_chains", sch.aux_rx_rf_chains),
            ("schedule.data_tx_rf_chains", sch.data_tx_rf_chains),
            ("schedule.data_rx_rf_chains", sch.data_rx_rf_chains),
        ] {
            if chains == 0 {
                issues.push(format!("{field}: must be >= 1"));
            }
        }
        if sch.aux_tx_rf_chains > 0 && sc.aux_tx.total() % sch.aux_tx_rf_chains != 0 {
            issues.push(format!(
                "schedule.aux_tx_rf_chains: transmit codebook size {} must be divisible by the \
                 {} RF chains so the pilot slots tile the codebook",
                sc.aux_tx.total(),
                sch.aux_tx_rf_chains
            ));
        }
        if sch.aux_rx_rf_chains > 0 && sc.aux_rx.total() % sch.aux_rx_rf_chains != 0 {
            issues.push(format!(
                "schedule.aux_rx_rf_chains: receive codebook size {} must be divisible by the \
                 {} RF chains so the combiner slots tile the codebook",
                sc.aux_rx.total(),
                sch.aux_rx_rf_chains
            ));
        }

        if sc.data_rx.n_y % sc.aux_rx.n_y.max(1) != 0 || sc.data_rx.n_z % sc.aux_rx.n_z.max(1) != 0
        {
            issues.push(
                "scenario.data_rx: per-axis counts must be integer multiples of aux_rx".into(),
            );
        } else if sch.data_rx_rf_chains
            != (sc.data_rx.n_y / sc.aux_rx.n_y.max(1)) * (sc.data_rx.n_z / sc.aux_rx.n_z.max(1))
        {
            issues.push(format!(
                "schedule.data_rx_rf_chains: must equal the narrow-beam refinement product {}",
                (sc.data_rx.n_y / sc.aux_rx.n_y.max(1)) * (sc.data_rx.n_z / sc.aux_rx.n_z.max(1))
            ));
        }
        if sc.data_tx.n_y % sc.aux_tx.n_y.max(1) != 0 || sc.data_tx.n_z % sc.aux_tx.n_z.max(1) != 0
        {
            issues.push(
                "scenario.data_tx: per-axis counts must be integer multiples of aux_tx".into(),
            );
        } else if sch.data_tx_rf_chains
            != (sc.data_tx.n_y / sc.aux_tx.n_y.max(1)) * (sc.data_tx.n_z / sc.aux_tx.n_z.max(1))
        {
            issues.push(format!(
                "schedule.data_tx_rf_chains: must equal the narrow-beam refinement product {}",
                (sc.data_tx.n_y / sc.aux_tx.n_y.max(1)) * (sc.data_tx.n_z / sc.aux_tx.n_z.max(1))
            ));
        }

        if sc.num_paths > sc.aux_tx.total().min(sc.aux_rx.total()) {
            issues.push(format!(
                "scenario.num_paths: at most {} paths are separable by the auxiliary stage",
                sc.aux_tx.total().min(sc.aux_rx.total())
            ));
        }

        for (field, g) in [
            ("grids.tx_y", self.grids.tx_y),
            ("grids.tx_z", self.grids.tx_z),
            ("grids.rx_y", self.grids.rx_y),
            ("grids.rx_z", self.grids.rx_z),
        ] {
            if g == 0 {
                issues.push(format!("{field}: must be >= 1"));
            }
        }

        if self.sweep.snr_db.is_empty() {
            issues.push("sweep.snr_db: must list at least one SNR point".into());
        }
        if self.sweep.trials == 0 {
            issues.push("sweep.trials: must be >= 1".into());
        }
        if self.sweep.r_th.is_empty() {
            issues.push("sweep.r_th: must list at least one outage threshold".into());
        }
        if self.sweep.r_th.iter().any(|r| !(*r > 0.0)) {
            issues.push("sweep.r_th: thresholds must be > 0".into());
        }
        if self.sweep.schemes.is_empty() {
            issues.push("sweep.schemes: must list at least one scheme".into());
        }
        let mut seen = Vec::new();
        for s in &self.sweep.schemes {
            if seen.contains(s) {
                issues.push(format!("sweep.schemes: duplicate entry {s}"));
            }
            seen.push(*s);
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }

    /// Serialized form written into the run manifest.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parses a config file without semantic validation.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let config = parse_config(path)?;
    config.validate()?;
    Ok(config)
}
