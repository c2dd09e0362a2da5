//! Link-level simulator and library for two-stage multi-beam training in THz
//! hybrid-beamforming systems.
//!
//! A small auxiliary array pair produces coarse arrival/departure estimates
//! with an SVD over swept pilot measurements; the large data arrays then
//! refine each path with a windowed compressed-sensing step on one slot per
//! path and side. Schemes are compared by spectral efficiency and outage
//! probability over deterministic seeded Monte-Carlo sweeps.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release -p beamtrain --example path_gains
//! cargo run --release -p beamtrain --example steering_and_grids
//! cargo run --release -p beamtrain --example sparse_recovery
//! cargo run --release -p beamtrain --example coarse_svd_estimation
//! cargo run --release -p beamtrain --example two_stage_training
//! cargo run --release -p beamtrain --example snr_sweep
//! ```
//!
//! or drive a full experiment through the `beamtrain` binary
//! (`run` / `validate` / `sweep-dump`).

pub mod channel;
pub mod codebook;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod sparse;
pub mod training;
mod util;

pub use channel::{
    angular_domain_image, assemble_matrix, dirichlet_kernel, freq_from_physical, los_path_gain,
    nlos_path_gain, sample_channel, sample_separated_channel, steering_vector, ChannelRealization,
    FreqPair, PathKind, PathParams, ScenarioConfig, ThzLinkParams, UpaGeometry,
};
pub use codebook::{
    angles_to_index, build_dictionary, dft_codebook, index_to_angles, make_grid, narrow_beam_set,
    AngularGrid, Codebook, Dictionary,
};
pub use config::{load_config, parse_config, ExperimentConfig};
pub use error::{Error, Result};
pub use evaluation::{
    build_precoders, exhaustive_search_baseline, monte_carlo, omni_omp_baseline,
    outage_probability, perfect_csi_bound, perfect_csi_precoders, spectral_efficiency,
    PrecoderCombiner, Scheme, TrialRecord,
};
pub use experiment::{run_experiment, sweep_dump, RunArtifacts};
pub use sparse::{cosamp, least_squares, omp, oracle_sparse_fit, Measurement, SparseEstimate};
pub use training::{
    default_aux_schedule, run_full_training, rx_refine_path, simulate_aux_rx,
    svd_angle_estimation, tx_refine_path, AuxSchedule, CoarseEstimates, FineEstimates,
    TrainingReport, TrainingSetup,
};
pub use util::derive_seed;
