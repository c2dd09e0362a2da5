//! Link evaluation: log-det spectral efficiency, outage probability, the
//! exhaustive-search and omnidirectional-probe OMP baselines, a perfect-CSI
//! reference, and deterministic Monte-Carlo sweeps.
//!
//! The `omni_omp` baseline is a simplified stand-in for digital-architecture
//! assisted training: quasi-omnidirectional probes with full digital
//! snapshots on the data arrays and OMP recovery, on the same L+1 slot
//! budget. It is a labeled approximation, not a reproduction of that scheme.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    assemble_matrix, sample_channel, steering_vector, CMat, CVec, FreqPair, PathParams,
    UpaGeometry, C64,
};
use crate::codebook::{dft_codebook, make_grid, AngularGrid, Codebook, Dictionary};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sparse::{omp, Measurement, SparseEstimate};
use crate::training::{
    default_aux_schedule, run_full_training, FineEstimates, TrainingSetup,
};
use crate::util::{derive_seed, draw_cn01, draw_cn01_vec, draw_unit_vec, sorted_svd};

/// Transmit power; the sweep varies the noise variance against it.
pub const TRANSMIT_POWER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Exhaustive,
    OmniOmp,
    PerfectCsi,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Exhaustive => "exhaustive",
            Scheme::OmniOmp => "omni_omp",
            Scheme::PerfectCsi => "perfect_csi",
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            Scheme::Proposed => 0xA1,
            Scheme::Exhaustive => 0xA2,
            Scheme::OmniOmp => 0xA3,
            Scheme::PerfectCsi => 0xA4,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "exhaustive" => Ok(Scheme::Exhaustive),
            "omni_omp" => Ok(Scheme::OmniOmp),
            "perfect_csi" => Ok(Scheme::PerfectCsi),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Precoder / combiner pair: one unit-norm column per stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderCombiner {
    pub p: CMat,
    pub c: CMat,
}

/// Steering-vector precoders at the estimated departure/arrival directions.
pub fn build_precoders(
    est: &FineEstimates,
    tx_geom: &UpaGeometry,
    rx_geom: &UpaGeometry,
) -> PrecoderCombiner {
    let p: Vec<CVec> = est.aod_set.iter().map(|d| steering_vector(tx_geom, *d)).collect();
    let c: Vec<CVec> = est.aoa_set.iter().map(|d| steering_vector(rx_geom, *d)).collect();
    PrecoderCombiner {
        p: CMat::from_columns(&p),
        c: CMat::from_columns(&c),
    }
}

/// Spectral efficiency over `L` parallel streams:
/// `log2 det(I_L + (P_t/L) R_n^-1 C^H H P P^H H^H C)` with
/// `R_n = sigma^2 C^H C`. Near-singular `C^H C` (duplicated estimated beams)
/// gets a trace-scaled diagonal floor before inversion.
pub fn spectral_efficiency(
    h_d: &CMat,
    pc: &PrecoderCombiner,
    p_t: f64,
    noise_var: f64,
) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::invalid("spectral_efficiency: noise variance must be > 0"));
    }
    if !(p_t >= 0.0) {
        return Err(Error::invalid("spectral_efficiency: transmit power must be >= 0"));
    }
    let l = pc.p.ncols();
    if l == 0 || pc.c.ncols() != l {
        return Err(Error::invalid("spectral_efficiency: precoder/combiner stream mismatch"));
    }
    if pc.c.nrows() != h_d.nrows() || pc.p.nrows() != h_d.ncols() {
        return Err(Error::invalid(format!(
            "spectral_efficiency: channel is {}x{}, precoders are {}x{} / {}x{}",
            h_d.nrows(),
            h_d.ncols(),
            pc.p.nrows(),
            pc.p.ncols(),
            pc.c.nrows(),
            pc.c.ncols()
        )));
    }

    let a = pc.c.ad_mul(&(h_d * &pc.p)); // C^H H P
    let mut g = pc.c.ad_mul(&pc.c); // C^H C

    let sv = crate::util::singular_values(&g);
    let s_max = sv.first().copied().unwrap_or(0.0);
    let s_min = sv.last().copied().unwrap_or(0.0);
    if !(s_min > 0.0) || s_max / s_min > 1e12 {
        let floor = 1e-10 * (g.trace().re / l as f64).max(0.0);
        for i in 0..l {
            g[(i, i)] += C64::new(floor, 0.0);
        }
    }
    let r_n = &g * C64::new(noise_var, 0.0);
    let chol = Cholesky::new(r_n).ok_or_else(|| {
        Error::Numeric(format!(
            "spectral_efficiency: noise covariance not positive definite \
             (singular values {s_min:.3e}..{s_max:.3e} before the floor)"
        ))
    })?;
    let k = chol
        .l()
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Numeric("spectral_efficiency: triangular solve failed".into()))?;
    // det(I + c R_n^-1 A A^H) = det(I + c (L^-1 A)(L^-1 A)^H), Hermitian PSD
    let m = CMat::identity(l, l) + (&k * k.adjoint()) * C64::new(p_t / l as f64, 0.0);
    let chol_m = Cholesky::new(m).ok_or_else(|| {
        Error::Numeric("spectral_efficiency: log-det factorization failed".into())
    })?;
    let mut log_det = 0.0;
    for i in 0..l {
        log_det += 2.0 * chol_m.l()[(i, i)].re.ln();
    }
    Ok((log_det / std::f64::consts::LN_2).max(0.0))
}

/// Exhaustive beam sweep: measures every transmit/receive codebook pair and
/// keeps the `num_paths` strongest pairs with pairwise-distinct transmit and
/// receive beams (ties toward the lower flat index). Costs
/// `|tx| * |rx|` slots.
pub fn exhaustive_search_baseline<R: Rng>(
    h_d: &CMat,
    tx_codebook: &Codebook,
    rx_codebook: &Codebook,
    num_paths: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<(FineEstimates, u64)> {
    if tx_codebook.is_empty() || rx_codebook.is_empty() {
        return Err(Error::invalid("exhaustive search: codebooks must be non-empty"));
    }
    let n_tx = tx_codebook.len();
    let n_rx = rx_codebook.len();
    if num_paths == 0 || num_paths > n_tx.min(n_rx) {
        return Err(Error::invalid(format!(
            "exhaustive search: cannot pick {num_paths} distinct pairs from {n_tx}x{n_rx} beams"
        )));
    }
    if h_d.nrows() != rx_codebook.beams.nrows() || h_d.ncols() != tx_codebook.beams.nrows() {
        return Err(Error::invalid("exhaustive search: codebooks do not match the channel"));
    }

    let sigma = noise_var.sqrt();
    let mut meas = rx_codebook.beams.ad_mul(&(h_d * &tx_codebook.beams)) * C64::new(TRANSMIT_POWER.sqrt(), 0.0);
    for t in 0..n_tx {
        for r in 0..n_rx {
            meas[(r, t)] += draw_cn01(rng) * sigma;
        }
    }

    let mut order: Vec<(usize, usize)> = (0..n_tx)
        .flat_map(|t| (0..n_rx).map(move |r| (t, r)))
        .collect();
    order.sort_by(|&(ta, ra), &(tb, rb)| {
        let pa = meas[(ra, ta)].norm_sqr();
        let pb = meas[(rb, tb)].norm_sqr();
        pb.partial_cmp(&pa)
            .unwrap()
            .then((ta * n_rx + ra).cmp(&(tb * n_rx + rb)))
    });

    let mut used_tx = vec![false; n_tx];
    let mut used_rx = vec![false; n_rx];
    let mut selected = Vec::with_capacity(num_paths);
    for (t, r) in order {
        if used_tx[t] || used_rx[r] {
            continue;
        }
        used_tx[t] = true;
        used_rx[r] = true;
        selected.push((t, r));
        if selected.len() == num_paths {
            break;
        }
    }

    let gain_scale = ((h_d.ncols() * h_d.nrows()) as f64 / num_paths as f64).sqrt();
    let mut est = FineEstimates {
        aoa_set: Vec::with_capacity(num_paths),
        aod_set: Vec::with_capacity(num_paths),
        gains: Vec::with_capacity(num_paths),
    };
    for (t, r) in selected {
        est.aod_set.push(tx_codebook.beam_dir(t)?);
        est.aoa_set.push(rx_codebook.beam_dir(r)?);
        est.gains.push(meas[(r, t)] / gain_scale);
    }
    Ok((est, (n_tx * n_rx) as u64))
}

/// Support entries ordered by coefficient magnitude (descending, ties toward
/// lower index), mapped to grid points.
fn ranked_dirs(est: &SparseEstimate, grid: &AngularGrid) -> Result<Vec<(FreqPair, C64)>> {
    let mut order: Vec<usize> = (0..est.support.len()).collect();
    order.sort_by(|&a, &b| {
        est.coefficients[b]
            .norm()
            .partial_cmp(&est.coefficients[a].norm())
            .unwrap()
            .then(est.support[a].cmp(&est.support[b]))
    });
    order
        .into_iter()
        .map(|k| Ok((grid.point(est.support[k] + 1)?, est.coefficients[k])))
        .collect()
}

fn pad_dirs(mut dirs: Vec<(FreqPair, C64)>, grid: &AngularGrid, l: usize) -> Result<Vec<(FreqPair, C64)>> {
    while dirs.len() < l {
        let filler = dirs
            .first()
            .copied()
            .unwrap_or((grid.point(1)?, C64::new(0.0, 0.0)));
        dirs.push(filler);
    }
    Ok(dirs)
}

/// Omnidirectional-probe + OMP baseline on the data arrays (the labeled
/// stand-in described in the module docs). Spends `L+1` slots: roughly half
/// on downlink probes for AoA recovery, the rest on uplink probes for AoD
/// recovery; repeated probe snapshots are averaged.
pub fn omni_omp_baseline<R: Rng>(
    h_d: &CMat,
    dict_t: &Dictionary,
    dict_r: &Dictionary,
    num_paths: usize,
    noise_var: f64,
    rng: &mut R,
) -> Result<(FineEstimates, u64)> {
    if num_paths == 0 {
        return Err(Error::invalid("omni_omp: path count must be >= 1"));
    }
    if h_d.nrows() != dict_r.matrix.nrows() || h_d.ncols() != dict_t.matrix.nrows() {
        return Err(Error::invalid("omni_omp: dictionaries do not match the channel"));
    }
    let slots = num_paths + 1;
    let rx_slots = slots / 2 + slots % 2;
    let tx_slots = slots - rx_slots;
    let sigma = noise_var.sqrt();

    // downlink: BS sends one quasi-omni probe, MS takes full digital
    // snapshots and averages them before the sparse AoA recovery
    let probe_dn = draw_unit_vec(rng, h_d.ncols());
    let clean_dn = h_d * &probe_dn * C64::new(TRANSMIT_POWER.sqrt(), 0.0);
    let mut y_dn = CVec::zeros(h_d.nrows());
    for _ in 0..rx_slots {
        y_dn += &clean_dn + draw_cn01_vec(rng, h_d.nrows()) * C64::new(sigma, 0.0);
    }
    y_dn /= C64::new(rx_slots as f64, 0.0);
    let tol_dn = 1e-6 * y_dn.norm();
    let est_rx = omp(&Measurement::new(y_dn, &dict_r.matrix)?, num_paths, tol_dn)?;

    // uplink over the reciprocal channel: y = conj(S_t) theta + n, so OMP
    // runs on conj(y) against S_t itself and the coefficients conjugate back
    let probe_up = draw_unit_vec(rng, h_d.nrows());
    let clean_up = h_d.transpose() * &probe_up * C64::new(TRANSMIT_POWER.sqrt(), 0.0);
    let mut y_up = CVec::zeros(h_d.ncols());
    for _ in 0..tx_slots.max(1) {
        y_up += &clean_up + draw_cn01_vec(rng, h_d.ncols()) * C64::new(sigma, 0.0);
    }
    y_up /= C64::new(tx_slots.max(1) as f64, 0.0);
    let y_up = y_up.conjugate();
    let tol_up = 1e-6 * y_up.norm();
    let mut est_tx = omp(&Measurement::new(y_up, &dict_t.matrix)?, num_paths, tol_up)?;
    est_tx.coefficients = est_tx.coefficients.conjugate();

    let aoas = pad_dirs(ranked_dirs(&est_rx, &dict_r.grid)?, &dict_r.grid, num_paths)?;
    let aods = pad_dirs(ranked_dirs(&est_tx, &dict_t.grid)?, &dict_t.grid, num_paths)?;
    let gain_scale =
        ((dict_t.geom.total() * dict_r.geom.total()) as f64 / num_paths as f64).sqrt();
    let est = FineEstimates {
        aoa_set: aoas.iter().map(|(d, _)| *d).collect(),
        aod_set: aods.iter().map(|(d, _)| *d).collect(),
        gains: aods.iter().map(|(_, g)| g / gain_scale).collect(),
    };
    Ok((est, slots as u64))
}

/// Top-`L` singular beams of the channel as precoder/combiner.
pub fn perfect_csi_precoders(h_d: &CMat, num_streams: usize) -> Result<PrecoderCombiner> {
    if num_streams == 0 || num_streams > h_d.nrows().min(h_d.ncols()) {
        return Err(Error::invalid(format!(
            "perfect CSI: cannot form {num_streams} streams on a {}x{} channel",
            h_d.nrows(),
            h_d.ncols()
        )));
    }
    let (u, _, v) = sorted_svd(h_d);
    Ok(PrecoderCombiner {
        p: v.columns(0, num_streams).into_owned(),
        c: u.columns(0, num_streams).into_owned(),
    })
}

/// Spectral efficiency of the top-`L` singular beams; the reference curve the
/// training schemes are measured against.
pub fn perfect_csi_bound(h_d: &CMat, num_streams: usize, p_t: f64, noise_var: f64) -> Result<f64> {
    let pc = perfect_csi_precoders(h_d, num_streams)?;
    spectral_efficiency(h_d, &pc, p_t, noise_var)
}

/// Fraction of samples strictly below the threshold.
pub fn outage_probability(samples: &[f64], r_th: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("outage_probability: empty sample list"));
    }
    Ok(samples.iter().filter(|s| **s < r_th).count() as f64 / samples.len() as f64)
}

/// One Monte-Carlo data point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub scheme: Scheme,
    pub trial: u64,
    pub seed: u64,
    pub spectral_efficiency: f64,
    pub slots_used: u64,
    pub max_aoa_bin_error: u32,
    pub max_aod_bin_error: u32,
}

const CHANNEL_STREAM: u64 = 0x43;
const SCHEME_STREAM: u64 = 0x53;

/// Channel seed of one trial; every scheme at every SNR of that trial sees
/// the channel drawn from this seed.
pub fn trial_channel_seed(master_seed: u64, trial: u64) -> u64 {
    derive_seed(master_seed, &[CHANNEL_STREAM, trial])
}

fn scheme_stream_seed(master_seed: u64, trial: u64, scheme: Scheme) -> u64 {
    derive_seed(master_seed, &[SCHEME_STREAM, trial, scheme.seed_tag()])
}

fn circular_bin_distance(a: i64, b: i64, g: i64) -> i64 {
    let d = (a - b).rem_euclid(g);
    d.min(g - d)
}

fn freq_bins(p: &FreqPair, grid: &AngularGrid) -> (i64, i64) {
    let gz = grid.g_z as i64;
    let gy = grid.g_y as i64;
    (
        (((p.theta + 0.5) * gz as f64).round() as i64).rem_euclid(gz),
        (((p.phi + 0.5) * gy as f64).round() as i64).rem_euclid(gy),
    )
}

/// Chebyshev fine-grid bin distance per angle pair, maximized over paths
/// under the total-cost-minimizing assignment of estimates to true paths.
pub fn bin_errors(
    true_paths: &[PathParams],
    est: &FineEstimates,
    grid_t: &AngularGrid,
    grid_r: &AngularGrid,
) -> (u32, u32) {
    let l = true_paths.len().min(est.num_paths());
    if l == 0 {
        return (0, 0);
    }
    let truth: Vec<((i64, i64), (i64, i64))> = true_paths[..l]
        .iter()
        .map(|p| (freq_bins(&p.aoa, grid_r), freq_bins(&p.aod, grid_t)))
        .collect();
    let guess: Vec<((i64, i64), (i64, i64))> = (0..l)
        .map(|i| {
            (
                freq_bins(&est.aoa_set[i], grid_r),
                freq_bins(&est.aod_set[i], grid_t),
            )
        })
        .collect();

    let cheb = |a: (i64, i64), b: (i64, i64), gz: i64, gy: i64| {
        circular_bin_distance(a.0, b.0, gz).max(circular_bin_distance(a.1, b.1, gy))
    };
    let cost = |t: usize, e: usize| {
        cheb(truth[t].0, guess[e].0, grid_r.g_z as i64, grid_r.g_y as i64)
            + cheb(truth[t].1, guess[e].1, grid_t.g_z as i64, grid_t.g_y as i64)
    };

    let assign: Vec<usize> = if l <= 8 {
        let mut best: Option<(i64, Vec<usize>)> = None;
        for perm in (0..l).permutations(l) {
            let total: i64 = (0..l).map(|t| cost(t, perm[t])).sum();
            if best.as_ref().map_or(true, |(b, _)| total < *b) {
                best = Some((total, perm));
            }
        }
        best.unwrap().1
    } else {
        // greedy fallback for very large path counts
        let mut taken = vec![false; l];
        (0..l)
            .map(|t| {
                let e = (0..l)
                    .filter(|e| !taken[*e])
                    .min_by_key(|&e| cost(t, e))
                    .unwrap();
                taken[e] = true;
                e
            })
            .collect()
    };

    let mut max_aoa = 0i64;
    let mut max_aod = 0i64;
    for (t, &e) in assign.iter().enumerate() {
        max_aoa = max_aoa.max(cheb(
            truth[t].0,
            guess[e].0,
            grid_r.g_z as i64,
            grid_r.g_y as i64,
        ));
        max_aod = max_aod.max(cheb(
            truth[t].1,
            guess[e].1,
            grid_t.g_z as i64,
            grid_t.g_y as i64,
        ));
    }
    (max_aoa as u32, max_aod as u32)
}

/// Everything the sweep shares across trials.
struct SweepContext {
    setup: TrainingSetup,
    tx_codebook: Codebook,
    rx_codebook: Codebook,
}

impl SweepContext {
    fn build(config: &ExperimentConfig) -> Result<Self> {
        let sc = &config.scenario;
        let sched = default_aux_schedule(
            &sc.aux_tx,
            &sc.aux_rx,
            config.schedule.aux_tx_rf_chains,
            config.schedule.aux_rx_rf_chains,
        )?;
        let grid_t = make_grid(config.grids.tx_y, config.grids.tx_z)?;
        let grid_r = make_grid(config.grids.rx_y, config.grids.rx_z)?;
        let setup = TrainingSetup::new(
            &sc.data_tx,
            &sc.data_rx,
            sched,
            &grid_t,
            &grid_r,
            sc.num_paths,
            config.schedule.data_tx_rf_chains,
            config.schedule.data_rx_rf_chains,
        )?;
        Ok(SweepContext {
            setup,
            tx_codebook: dft_codebook(&sc.data_tx),
            rx_codebook: dft_codebook(&sc.data_rx),
        })
    }
}

/// Runs the configured sweep: per `(snr, trial)` every scheme sees the same
/// channel, and a scheme's noise stream is seeded independently of the SNR so
/// curves vary smoothly along the sweep. Rows come back sorted by
/// (snr position, trial, scheme position) regardless of execution order.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let ctx = SweepContext::build(config)?;

    let keyed: Result<Vec<Vec<(usize, u64, usize, TrialRecord)>>> = (0..config.sweep.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, &ctx, trial))
        .collect();
    let mut keyed: Vec<(usize, u64, usize, TrialRecord)> =
        keyed?.into_iter().flatten().collect();
    keyed.sort_by_key(|(si, trial, ki, _)| (*si, *trial, *ki));
    Ok(keyed.into_iter().map(|(_, _, _, r)| r).collect())
}

fn run_trial(
    config: &ExperimentConfig,
    ctx: &SweepContext,
    trial: u64,
) -> Result<Vec<(usize, u64, usize, TrialRecord)>> {
    let sc = &config.scenario;
    let num_paths = sc.num_paths;
    let channel_seed = trial_channel_seed(config.master_seed, trial);
    let mut ch_rng = ChaCha8Rng::seed_from_u64(channel_seed);
    let realization = sample_channel(&mut ch_rng, sc)?;
    let h_d = realization.matrix()?;
    let h_s = assemble_matrix(&realization.on_arrays(sc.aux_tx, sc.aux_rx))?;
    let csi = if config.sweep.schemes.contains(&Scheme::PerfectCsi) {
        Some(perfect_csi_precoders(&h_d, num_paths)?)
    } else {
        None
    };

    let grid_t = &ctx.setup.dict_t.grid;
    let grid_r = &ctx.setup.dict_r.grid;
    let mut out = Vec::with_capacity(config.sweep.schemes.len() * config.sweep.snr_db.len());
    for (ki, &scheme) in config.sweep.schemes.iter().enumerate() {
        let stream_seed = scheme_stream_seed(config.master_seed, trial, scheme);
        for (si, &snr_db) in config.sweep.snr_db.iter().enumerate() {
            let noise_var = TRANSMIT_POWER * 10f64.powf(-snr_db / 10.0);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
            let (se, slots, aoa_err, aod_err) = match scheme {
                Scheme::Proposed => {
                    let (est, report) =
                        run_full_training(&h_s, &h_d, &ctx.setup, noise_var, &mut rng)?;
                    let pc = build_precoders(&est, &sc.data_tx, &sc.data_rx);
                    let se = spectral_efficiency(&h_d, &pc, TRANSMIT_POWER, noise_var)?;
                    let (ea, ed) = bin_errors(&realization.paths, &est, grid_t, grid_r);
                    (se, (report.aux_slots + report.data_slots) as u64, ea, ed)
                }
                Scheme::Exhaustive => {
                    let (est, slots) = exhaustive_search_baseline(
                        &h_d,
                        &ctx.tx_codebook,
                        &ctx.rx_codebook,
                        num_paths,
                        noise_var,
                        &mut rng,
                    )?;
                    let pc = build_precoders(&est, &sc.data_tx, &sc.data_rx);
                    let se = spectral_efficiency(&h_d, &pc, TRANSMIT_POWER, noise_var)?;
                    let (ea, ed) = bin_errors(&realization.paths, &est, grid_t, grid_r);
                    (se, slots, ea, ed)
                }
                Scheme::OmniOmp => {
                    let (est, slots) = omni_omp_baseline(
                        &h_d,
                        &ctx.setup.dict_t,
                        &ctx.setup.dict_r,
                        num_paths,
                        noise_var,
                        &mut rng,
                    )?;
                    let pc = build_precoders(&est, &sc.data_tx, &sc.data_rx);
                    let se = spectral_efficiency(&h_d, &pc, TRANSMIT_POWER, noise_var)?;
                    let (ea, ed) = bin_errors(&realization.paths, &est, grid_t, grid_r);
                    (se, slots, ea, ed)
                }
                Scheme::PerfectCsi => {
                    let pc = csi.as_ref().expect("precomputed when scheme is listed");
                    let se = spectral_efficiency(&h_d, pc, TRANSMIT_POWER, noise_var)?;
                    (se, 0, 0, 0)
                }
            };
            out.push((
                si,
                trial,
                ki,
                TrialRecord {
                    snr_db,
                    scheme,
                    trial,
                    seed: channel_seed,
                    spectral_efficiency: se,
                    slots_used: slots,
                    max_aoa_bin_error: aoa_err,
                    max_aod_bin_error: aod_err,
                },
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        sample_separated_channel, ChannelRealization, PathKind, ScenarioConfig, ThzLinkParams,
    };
    use crate::codebook::build_dictionary;

    fn rank1_channel(
        tx: &UpaGeometry,
        rx: &UpaGeometry,
        aoa: FreqPair,
        aod: FreqPair,
        gain: C64,
    ) -> CMat {
        assemble_matrix(&ChannelRealization {
            paths: vec![PathParams {
                gain,
                aoa,
                aod,
                kind: PathKind::Los,
            }],
            tx_geom: *tx,
            rx_geom: *rx,
        })
        .unwrap()
    }

    fn small_scenario() -> ScenarioConfig {
        ScenarioConfig {
            data_tx: UpaGeometry::new(4, 4),
            data_rx: UpaGeometry::new(4, 4),
            aux_tx: UpaGeometry::new(2, 2),
            aux_rx: UpaGeometry::new(2, 2),
            link: ThzLinkParams {
                carrier_freq_hz: 200e9,
                k_abs_per_m: 0.0033,
                reflection_loss: 0.05,
            },
            num_paths: 2,
            los_distance_m: 100.0,
            nlos_detour_factor: 1.2,
            normalize_to_los: true,
        }
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario = small_scenario();
        cfg.schedule.aux_tx_rf_chains = 2;
        cfg.schedule.aux_rx_rf_chains = 2;
        cfg.schedule.data_tx_rf_chains = 4;
        cfg.schedule.data_rx_rf_chains = 4;
        cfg.grids = crate::config::GridConfig {
            tx_y: 16,
            tx_z: 16,
            rx_y: 16,
            rx_z: 16,
        };
        cfg.sweep.snr_db = vec![-5.0, 5.0];
        cfg.sweep.trials = 3;
        cfg.sweep.schemes = vec![Scheme::Proposed, Scheme::PerfectCsi];
        cfg
    }

    #[test]
    fn zero_power_gives_zero_rate() {
        let tx = UpaGeometry::new(4, 4);
        let rx = UpaGeometry::new(4, 4);
        let h = rank1_channel(
            &tx,
            &rx,
            FreqPair::new(0.1, 0.2),
            FreqPair::new(-0.3, 0.0),
            C64::new(1.0, 0.0),
        );
        let pc = PrecoderCombiner {
            p: CMat::from_columns(&[steering_vector(&tx, FreqPair::new(-0.3, 0.0))]),
            c: CMat::from_columns(&[steering_vector(&rx, FreqPair::new(0.1, 0.2))]),
        };
        let r = spectral_efficiency(&h, &pc, 0.0, 0.5).unwrap();
        assert_eq!(r, 0.0);
        assert!(spectral_efficiency(&h, &pc, 1.0, 0.0).is_err());
    }

    #[test]
    fn rank1_matched_beams_hit_closed_form() {
        let tx = UpaGeometry::new(4, 4);
        let rx = UpaGeometry::new(8, 4);
        let aoa = FreqPair::new(0.17, -0.29);
        let aod = FreqPair::new(-0.41, 0.03);
        let gain = C64::new(0.6, -0.8);
        let h = rank1_channel(&tx, &rx, aoa, aod, gain);
        let pc = PrecoderCombiner {
            p: CMat::from_columns(&[steering_vector(&tx, aod)]),
            c: CMat::from_columns(&[steering_vector(&rx, aoa)]),
        };
        let p_t = 2.0;
        let noise_var = 0.3;
        let r = spectral_efficiency(&h, &pc, p_t, noise_var).unwrap();
        let nt_nr = (tx.total() * rx.total()) as f64;
        let want = (1.0 + p_t / noise_var * nt_nr * gain.norm_sqr()).log2();
        assert!((r - want).abs() / want < 1e-12, "{r} vs {want}");
    }

    #[test]
    fn rate_monotone_in_power_and_matches_complex_logdet() {
        let scenario = small_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let re = sample_channel(&mut rng, &scenario).unwrap();
        let h = re.matrix().unwrap();
        let est = FineEstimates {
            aoa_set: re.paths.iter().map(|p| p.aoa).collect(),
            aod_set: re.paths.iter().map(|p| p.aod).collect(),
            gains: re.paths.iter().map(|p| p.gain).collect(),
        };
        let pc = build_precoders(&est, &scenario.data_tx, &scenario.data_rx);
        let noise_var = 0.1;
        let mut prev = 0.0;
        for p_t in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let r = spectral_efficiency(&h, &pc, p_t, noise_var).unwrap();
            assert!(r + 1e-12 >= prev);
            prev = r;
        }

        // independent route: complex log-det of the unsymmetrized matrix
        let l = pc.p.ncols();
        let p_t = 1.7;
        let a = pc.c.ad_mul(&(&h * &pc.p));
        let g = pc.c.ad_mul(&pc.c);
        let rn_inv = (g * C64::new(noise_var, 0.0)).try_inverse().unwrap();
        let m = CMat::identity(l, l)
            + rn_inv * &a * a.adjoint() * C64::new(p_t / l as f64, 0.0);
        let det = m.determinant();
        let want = det.ln().re / std::f64::consts::LN_2;
        assert!(det.ln().im.abs() < 1e-9);
        let got = spectral_efficiency(&h, &pc, p_t, noise_var).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn duplicated_combiner_columns_are_regularized() {
        let tx = UpaGeometry::new(4, 4);
        let rx = UpaGeometry::new(4, 4);
        let aoa = FreqPair::new(0.0, 0.25);
        let aod = FreqPair::new(0.25, 0.0);
        let h = rank1_channel(&tx, &rx, aoa, aod, C64::new(1.0, 0.0));
        let est = FineEstimates {
            aoa_set: vec![aoa, aoa],
            aod_set: vec![aod, aod],
            gains: vec![C64::new(1.0, 0.0); 2],
        };
        let pc = build_precoders(&est, &tx, &rx);
        let r = spectral_efficiency(&h, &pc, 1.0, 0.5).unwrap();
        assert!(r.is_finite() && r > 0.0);
    }

    #[test]
    fn build_precoders_matched_beams_beat_codebook_scan() {
        // matched steering beams maximize the rank-1 rate over the codebook
        let tx = UpaGeometry::new(4, 4);
        let rx = UpaGeometry::new(4, 4);
        let cb_t = dft_codebook(&tx);
        let cb_r = dft_codebook(&rx);
        let aoa = cb_r.beam_dir(7).unwrap();
        let aod = cb_t.beam_dir(11).unwrap();
        let h = rank1_channel(&tx, &rx, aoa, aod, C64::new(0.9, 0.3));
        let est = FineEstimates {
            aoa_set: vec![aoa],
            aod_set: vec![aod],
            gains: vec![C64::new(1.0, 0.0)],
        };
        let pc = build_precoders(&est, &tx, &rx);
        assert!((pc.p.column(0).norm() - 1.0).abs() < 1e-12);
        assert!((pc.c.column(0).norm() - 1.0).abs() < 1e-12);
        let r_matched = spectral_efficiency(&h, &pc, 1.0, 0.25).unwrap();
        for t in 0..cb_t.len() {
            for r in 0..cb_r.len() {
                let cand = PrecoderCombiner {
                    p: CMat::from_columns(&[CVec::from(cb_t.beams.column(t))]),
                    c: CMat::from_columns(&[CVec::from(cb_r.beams.column(r))]),
                };
                let val = spectral_efficiency(&h, &cand, 1.0, 0.25).unwrap();
                assert!(val <= r_matched + 1e-9);
            }
        }
    }

    #[test]
    fn exhaustive_finds_on_grid_path_and_counts_slots() {
        let geom = UpaGeometry::new(4, 4);
        let cb = dft_codebook(&geom);
        let aoa = cb.beam_dir(9).unwrap();
        let aod = cb.beam_dir(3).unwrap();
        let h = rank1_channel(&geom, &geom, aoa, aod, C64::new(1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (est, slots) = exhaustive_search_baseline(&h, &cb, &cb, 1, 0.0, &mut rng).unwrap();
        assert_eq!(slots, 256);
        assert_eq!(est.aoa_set[0], aoa);
        assert_eq!(est.aod_set[0], aod);
    }

    #[test]
    fn exhaustive_zero_channel_is_deterministic() {
        let geom = UpaGeometry::new(2, 2);
        let cb = dft_codebook(&geom);
        let h = CMat::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (est, _) = exhaustive_search_baseline(&h, &cb, &cb, 2, 0.0, &mut rng).unwrap();
        // lowest-index pairs with distinct components: (beam 1, beam 1), (2, 2)
        assert_eq!(est.aod_set[0], cb.beam_dir(0).unwrap());
        assert_eq!(est.aoa_set[0], cb.beam_dir(0).unwrap());
        assert_eq!(est.aod_set[1], cb.beam_dir(1).unwrap());
        assert_eq!(est.aoa_set[1], cb.beam_dir(1).unwrap());
        assert!(est.gains.iter().all(|g| g.norm() == 0.0));
        assert!(exhaustive_search_baseline(&h, &cb, &cb, 5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn omni_omp_recovers_separated_paths_noiselessly() {
        let scenario = small_scenario();
        let grid_t = make_grid(16, 16).unwrap();
        let grid_r = make_grid(16, 16).unwrap();
        let dict_t = build_dictionary(&scenario.data_tx, &grid_t);
        let dict_r = build_dictionary(&scenario.data_rx, &grid_r);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let re = sample_separated_channel(&mut rng, &scenario, &grid_t, &grid_r).unwrap();
        let h = re.matrix().unwrap();
        let (est, slots) = omni_omp_baseline(&h, &dict_t, &dict_r, 2, 0.0, &mut rng).unwrap();
        assert_eq!(slots, 3); // L + 1

        let mut want_aoa: Vec<(i64, i64)> = re
            .paths
            .iter()
            .map(|p| freq_bins(&p.aoa, &grid_r))
            .collect();
        let mut got_aoa: Vec<(i64, i64)> =
            est.aoa_set.iter().map(|p| freq_bins(p, &grid_r)).collect();
        want_aoa.sort_unstable();
        got_aoa.sort_unstable();
        assert_eq!(want_aoa, got_aoa);

        let (ea, ed) = bin_errors(&re.paths, &est, &grid_t, &grid_r);
        assert_eq!((ea, ed), (0, 0));
    }

    #[test]
    fn perfect_csi_matches_matched_beam_on_rank1() {
        let tx = UpaGeometry::new(4, 4);
        let rx = UpaGeometry::new(4, 4);
        let aoa = FreqPair::new(0.11, -0.37);
        let aod = FreqPair::new(0.29, 0.41);
        let gain = C64::new(-0.2, 0.9);
        let h = rank1_channel(&tx, &rx, aoa, aod, gain);
        let bound = perfect_csi_bound(&h, 1, 1.0, 0.2).unwrap();
        let nt_nr = (tx.total() * rx.total()) as f64;
        let want = (1.0 + 1.0 / 0.2 * nt_nr * gain.norm_sqr()).log2();
        assert!((bound - want).abs() / want < 1e-9);

        let zero = CMat::zeros(16, 16);
        assert_eq!(perfect_csi_bound(&zero, 2, 1.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn outage_probability_basics() {
        assert_eq!(outage_probability(&[1.0, 2.0, 3.0], 0.5).unwrap(), 0.0);
        assert_eq!(outage_probability(&[0.1, 0.9], 0.5).unwrap(), 0.5);
        assert_eq!(outage_probability(&[0.5], 0.5).unwrap(), 0.0); // strict
        assert!(outage_probability(&[], 0.5).is_err());
    }

    #[test]
    fn monte_carlo_cardinality_order_and_determinism() {
        let cfg = small_config();
        let records = monte_carlo(&cfg).unwrap();
        assert_eq!(records.len(), 2 * 3 * 2);
        // sorted by (snr position, trial, scheme position)
        let mut expect = Vec::new();
        for (si, &snr) in cfg.sweep.snr_db.iter().enumerate() {
            for trial in 0..cfg.sweep.trials {
                for scheme in &cfg.sweep.schemes {
                    expect.push((si, snr, trial, *scheme));
                }
            }
        }
        for (rec, (_, snr, trial, scheme)) in records.iter().zip(expect.iter()) {
            assert_eq!(rec.snr_db, *snr);
            assert_eq!(rec.trial, *trial);
            assert_eq!(rec.scheme, *scheme);
        }

        let again = monte_carlo(&cfg).unwrap();
        assert_eq!(records, again);

        // paired channels: every scheme of a trial carries the same seed
        for trial in 0..cfg.sweep.trials {
            let seeds: Vec<u64> = records
                .iter()
                .filter(|r| r.trial == trial)
                .map(|r| r.seed)
                .collect();
            assert!(seeds.windows(2).all(|w| w[0] == w[1]));
            assert_eq!(seeds[0], trial_channel_seed(cfg.master_seed, trial));
        }

        // proposed slot budget: 2x2 aux with 2 chains -> (4/2)*(4/2) = 4 aux
        // slots, plus 2L = 4 refinement slots
        for rec in records.iter().filter(|r| r.scheme == Scheme::Proposed) {
            assert_eq!(rec.slots_used, 8);
        }
    }
}
