//! The two-stage training protocol: pilot/combiner scheduling and SVD-based
//! coarse estimation on the auxiliary arrays, then per-path compressed-sensing
//! refinement on the data arrays, with slot accounting.

use rand::Rng;

use crate::channel::{circ_dist, steering_vector, CMat, CVec, FreqPair, UpaGeometry, C64};
use crate::codebook::{
    beam_matrix, build_dictionary, dft_codebook, narrow_beam_set, AngularGrid, Dictionary,
};
use crate::error::{Error, Result};
use crate::sparse::{cosamp, Measurement};
use crate::util::{draw_cn01_vec, sorted_svd};

/// Pilot and combiner schedule for the auxiliary stage. The full transmit and
/// receive codebooks are sounded beam by beam; with `m` RF chains per side a
/// slot covers `m` beams, so the stage costs `pilot_slots * combine_slots`
/// slots in total.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxSchedule {
    pub tx_geom: UpaGeometry,
    pub rx_geom: UpaGeometry,
    /// `N_s^t x N_X` pilot beams, unit-norm columns.
    pub pilots: CMat,
    /// `N_s^r x N_Y` receive beams, unit-norm columns.
    pub combiners: CMat,
    /// P: transmit slot count (`N_X / m_tx`).
    pub pilot_slots: usize,
    /// Q: receive slot count (`N_Y / m_rx`).
    pub combine_slots: usize,
    pub m_tx: usize,
    pub m_rx: usize,
}

impl AuxSchedule {
    /// Slot cost of the auxiliary stage: `Q * P`.
    pub fn aux_slots(&self) -> usize {
        self.pilot_slots * self.combine_slots
    }

    pub fn num_tx_beams(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn num_rx_beams(&self) -> usize {
        self.combiners.ncols()
    }
}

/// Full-DFT-codebook schedule: every transmit beam is sounded against every
/// receive beam.
pub fn default_aux_schedule(
    aux_tx: &UpaGeometry,
    aux_rx: &UpaGeometry,
    m_tx: usize,
    m_rx: usize,
) -> Result<AuxSchedule> {
    if m_tx == 0 || m_rx == 0 {
        return Err(Error::invalid("aux schedule: RF chain counts must be >= 1"));
    }
    let n_x = aux_tx.total();
    let n_y = aux_rx.total();
    if n_x % m_tx != 0 {
        return Err(Error::invalid(format!(
            "aux schedule: transmit codebook size {n_x} is not divisible by {m_tx} RF chains"
        )));
    }
    if n_y % m_rx != 0 {
        return Err(Error::invalid(format!(
            "aux schedule: receive codebook size {n_y} is not divisible by {m_rx} RF chains"
        )));
    }
    Ok(AuxSchedule {
        tx_geom: *aux_tx,
        rx_geom: *aux_rx,
        pilots: dft_codebook(aux_tx).beams,
        combiners: dft_codebook(aux_rx).beams,
        pilot_slots: n_x / m_tx,
        combine_slots: n_y / m_rx,
        m_tx,
        m_rx,
    })
}

/// Collected auxiliary receive matrix `Y_s = W_s^H H_s X_s + W_s^H N`, with
/// fresh per-slot noise: slot `(p, q)` applies the `q`-th combiner block to
/// its own antenna-domain noise draw.
pub fn simulate_aux_rx<R: Rng>(
    h_s: &CMat,
    sched: &AuxSchedule,
    noise_var: f64,
    rng: &mut R,
) -> Result<CMat> {
    if noise_var < 0.0 {
        return Err(Error::invalid("simulate_aux_rx: noise variance must be >= 0"));
    }
    if h_s.nrows() != sched.combiners.nrows() || h_s.ncols() != sched.pilots.nrows() {
        return Err(Error::invalid(format!(
            "simulate_aux_rx: channel is {}x{} but schedule expects {}x{}",
            h_s.nrows(),
            h_s.ncols(),
            sched.combiners.nrows(),
            sched.pilots.nrows()
        )));
    }
    let sigma = noise_var.sqrt();
    let mut y = sched.combiners.ad_mul(&(h_s * &sched.pilots));
    let n_r = sched.combiners.nrows();
    for c in 0..y.ncols() {
        for q in 0..sched.combine_slots {
            let noise = draw_cn01_vec(rng, n_r) * C64::new(sigma, 0.0);
            let w_q = sched.combiners.columns(q * sched.m_rx, sched.m_rx);
            let projected = w_q.ad_mul(&noise);
            for (k, v) in projected.iter().enumerate() {
                y[(q * sched.m_rx + k, c)] += *v;
            }
        }
    }
    Ok(y)
}

/// Coarse angle estimates on the search grids, path-paired through the
/// singular-triplet ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimates {
    pub aoa_set: Vec<FreqPair>,
    pub aod_set: Vec<FreqPair>,
}

/// Refined per-path estimates on the fine grids.
#[derive(Debug, Clone, PartialEq)]
pub struct FineEstimates {
    pub aoa_set: Vec<FreqPair>,
    pub aod_set: Vec<FreqPair>,
    pub gains: Vec<C64>,
}

impl FineEstimates {
    pub fn num_paths(&self) -> usize {
        self.aoa_set.len()
    }
}

/// Slot accounting and per-stage refinement residuals of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub aux_slots: usize,
    pub data_slots: usize,
    pub rx_residuals: Vec<f64>,
    pub tx_residuals: Vec<f64>,
}

/// Precomputed grid-correlation matrices for the SVD stage.
#[derive(Debug, Clone)]
pub struct CoarseScanner {
    pub grid_t: AngularGrid,
    pub grid_r: AngularGrid,
    /// `W_s^H S_r` over the receive search grid (`N_Y x G_r`).
    rx_scan: CMat,
    /// `X_s^H S_t` over the transmit search grid (`N_X x G_t`).
    tx_scan: CMat,
}

fn argmax_norm(scores: &CVec) -> usize {
    let mut best = 0;
    let mut best_mag = scores[0].norm();
    for (i, v) in scores.iter().enumerate().skip(1) {
        let m = v.norm();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    best
}

impl CoarseScanner {
    pub fn new(sched: &AuxSchedule, grid_t: &AngularGrid, grid_r: &AngularGrid) -> Self {
        let dict_r = build_dictionary(&sched.rx_geom, grid_r);
        let dict_t = build_dictionary(&sched.tx_geom, grid_t);
        CoarseScanner {
            grid_t: grid_t.clone(),
            grid_r: grid_r.clone(),
            rx_scan: sched.combiners.ad_mul(&dict_r.matrix),
            tx_scan: sched.pilots.ad_mul(&dict_t.matrix),
        }
    }

    /// Top-`num_paths` singular triplets of `Y_s`, each matched to the search
    /// grids by correlation magnitude (ties toward the lower flat index).
    pub fn estimate(&self, y_s: &CMat, num_paths: usize) -> Result<CoarseEstimates> {
        if num_paths == 0 {
            return Err(Error::invalid("svd estimation: path count must be >= 1"));
        }
        if num_paths > y_s.nrows().min(y_s.ncols()) {
            return Err(Error::invalid(format!(
                "svd estimation: {} paths exceed the {}x{} received block",
                num_paths,
                y_s.nrows(),
                y_s.ncols()
            )));
        }
        if y_s.nrows() != self.rx_scan.nrows() || y_s.ncols() != self.tx_scan.nrows() {
            return Err(Error::invalid(
                "svd estimation: received block does not match the schedule".to_string(),
            ));
        }
        let (u, _, v) = sorted_svd(y_s);
        let mut aoa_set = Vec::with_capacity(num_paths);
        let mut aod_set = Vec::with_capacity(num_paths);
        for l in 0..num_paths {
            let u_l = CVec::from(u.column(l));
            let v_l = CVec::from(v.column(l));
            // entries are conjugates of u_l^H W^H a_r(.), same magnitudes
            let rx_scores = self.rx_scan.ad_mul(&u_l);
            let tx_scores = self.tx_scan.ad_mul(&v_l);
            aoa_set.push(self.grid_r.point(argmax_norm(&rx_scores) + 1)?);
            aod_set.push(self.grid_t.point(argmax_norm(&tx_scores) + 1)?);
        }
        Ok(CoarseEstimates { aoa_set, aod_set })
    }
}

/// SVD-based coarse estimation over explicit search grids.
pub fn svd_angle_estimation(
    y_s: &CMat,
    sched: &AuxSchedule,
    num_paths: usize,
    grid_t: &AngularGrid,
    grid_r: &AngularGrid,
) -> Result<CoarseEstimates> {
    CoarseScanner::new(sched, grid_t, grid_r).estimate(y_s, num_paths)
}

/// Result of one per-path refinement slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOutcome {
    pub dir: FreqPair,
    pub gain: C64,
    pub residual_norm: f64,
}

/// 0-based dictionary columns inside the per-axis circular window.
fn window_columns(grid: &AngularGrid, center: FreqPair, radius: (f64, f64)) -> Vec<usize> {
    let cols: Vec<usize> = grid
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            circ_dist(p.theta, center.theta) <= radius.0 + 1e-12
                && circ_dist(p.phi, center.phi) <= radius.1 + 1e-12
        })
        .map(|(i, _)| i)
        .collect();
    if cols.len() >= 2 {
        cols
    } else {
        // degenerate window (radius below the grid step): search everywhere
        (0..grid.len()).collect()
    }
}

fn refine_on_window<R: Rng>(
    received: CVec,
    beams: &CMat,
    dict: &Dictionary,
    center: FreqPair,
    window_radius: (f64, f64),
    gain_scale: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<RefineOutcome> {
    let sigma = noise_var.sqrt();
    let noisy = received + draw_cn01_vec(rng, beams.nrows()) * C64::new(sigma, 0.0);
    let y = beams.ad_mul(&noisy);

    let cols = window_columns(&dict.grid, center, window_radius);
    let sub_cols: Vec<CVec> = cols
        .iter()
        .map(|&j| CVec::from(dict.matrix.column(j)))
        .collect();
    let phi = beams.ad_mul(&CMat::from_columns(&sub_cols));

    let tol = 1e-6 * y.norm();
    let meas = Measurement::new(y, &phi)?;
    let est = cosamp(&meas, 1, 1, tol)?;
    match est.support.first() {
        Some(&local) => Ok(RefineOutcome {
            dir: dict.grid.point(cols[local] + 1)?,
            gain: est.coefficients[0] / gain_scale,
            residual_norm: est.residual_norm,
        }),
        None => Ok(RefineOutcome {
            // nothing received (e.g. zero channel): report the snapped coarse
            // direction with zero gain so the caller can mark the path absent
            dir: dict.grid.point(dict.grid.nearest_index(center))?,
            gain: C64::new(0.0, 0.0),
            residual_norm: est.residual_norm,
        }),
    }
}

/// One RX refinement slot: the BS steers a pilot at the coarse AoD, the MS
/// receives with the narrow beams tiling the coarse AoA lobe, and a
/// sparsity-1 recovery over the window picks the fine AoA.
#[allow(clippy::too_many_arguments)]
pub fn rx_refine_path<R: Rng>(
    h_d: &CMat,
    tx_geom: &UpaGeometry,
    aux_rx_geom: &UpaGeometry,
    coarse_aoa: FreqPair,
    coarse_aod: FreqPair,
    dict_r: &Dictionary,
    m_rx: usize,
    window_radius: (f64, f64),
    gain_scale: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<RefineOutcome> {
    if noise_var < 0.0 {
        return Err(Error::invalid("rx_refine_path: noise variance must be >= 0"));
    }
    let pilot = steering_vector(tx_geom, coarse_aod);
    let beams = beam_matrix(&narrow_beam_set(
        coarse_aoa,
        &dict_r.geom,
        aux_rx_geom,
        m_rx,
    )?);
    refine_on_window(
        h_d * pilot,
        &beams,
        dict_r,
        coarse_aoa,
        window_radius,
        gain_scale,
        noise_var,
        rng,
    )
}

/// One TX refinement slot, the mirror of [`rx_refine_path`]: the MS transmits
/// the conjugate receive beam at the fine AoA over the reciprocal (transposed)
/// channel, the BS receives with narrow beams around the coarse AoD, and the
/// window recovery runs on the conjugate transmit dictionary.
#[allow(clippy::too_many_arguments)]
pub fn tx_refine_path<R: Rng>(
    h_d: &CMat,
    rx_geom: &UpaGeometry,
    aux_tx_geom: &UpaGeometry,
    fine_aoa: FreqPair,
    coarse_aod: FreqPair,
    dict_t: &Dictionary,
    m_tx: usize,
    window_radius: (f64, f64),
    gain_scale: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<RefineOutcome> {
    let conj_dict = Dictionary {
        grid: dict_t.grid.clone(),
        geom: dict_t.geom,
        matrix: dict_t.matrix.conjugate(),
    };
    tx_refine_conjugated(
        h_d,
        rx_geom,
        aux_tx_geom,
        fine_aoa,
        coarse_aod,
        &conj_dict,
        m_tx,
        window_radius,
        gain_scale,
        noise_var,
        rng,
    )
}

/// Core of [`tx_refine_path`] taking the already-conjugated transmit
/// dictionary so hot callers can cache it.
#[allow(clippy::too_many_arguments)]
fn tx_refine_conjugated<R: Rng>(
    h_d: &CMat,
    rx_geom: &UpaGeometry,
    aux_tx_geom: &UpaGeometry,
    fine_aoa: FreqPair,
    coarse_aod: FreqPair,
    conj_dict_t: &Dictionary,
    m_tx: usize,
    window_radius: (f64, f64),
    gain_scale: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<RefineOutcome> {
    if noise_var < 0.0 {
        return Err(Error::invalid("tx_refine_path: noise variance must be >= 0"));
    }
    let probe = steering_vector(rx_geom, fine_aoa).conjugate();
    // the uplink signature at the BS is the conjugate steering vector, so the
    // narrow receive beams conjugate as well
    let beams = beam_matrix(&narrow_beam_set(
        coarse_aod,
        &conj_dict_t.geom,
        aux_tx_geom,
        m_tx,
    )?)
    .conjugate();
    refine_on_window(
        h_d.transpose() * probe,
        &beams,
        conj_dict_t,
        coarse_aod,
        window_radius,
        gain_scale,
        noise_var,
        rng,
    )
}

/// Everything the protocol reuses across runs: the schedule, the fine
/// dictionaries on the data arrays, the coarse scan matrices, and the
/// refinement windows.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub sched: AuxSchedule,
    pub dict_t: Dictionary,
    pub dict_r: Dictionary,
    pub num_paths: usize,
    pub m_data_tx: usize,
    pub m_data_rx: usize,
    /// (theta, phi) window half-widths around the coarse AoA / AoD; defaults
    /// to the auxiliary null-to-null half lobe `1/n_aux` per axis.
    pub window_radius_rx: (f64, f64),
    pub window_radius_tx: (f64, f64),
    scanner: CoarseScanner,
    dict_t_conj: Dictionary,
}

impl TrainingSetup {
    pub fn new(
        data_tx: &UpaGeometry,
        data_rx: &UpaGeometry,
        sched: AuxSchedule,
        grid_t: &AngularGrid,
        grid_r: &AngularGrid,
        num_paths: usize,
        m_data_tx: usize,
        m_data_rx: usize,
    ) -> Result<Self> {
        if num_paths == 0 {
            return Err(Error::invalid("training setup: path count must be >= 1"));
        }
        // fail fast on inconsistent refinement geometry
        let origin = FreqPair::new(0.0, 0.0);
        narrow_beam_set(origin, data_rx, &sched.rx_geom, m_data_rx)?;
        narrow_beam_set(origin, data_tx, &sched.tx_geom, m_data_tx)?;
        let scanner = CoarseScanner::new(&sched, grid_t, grid_r);
        let window_radius_rx = (1.0 / sched.rx_geom.n_z as f64, 1.0 / sched.rx_geom.n_y as f64);
        let window_radius_tx = (1.0 / sched.tx_geom.n_z as f64, 1.0 / sched.tx_geom.n_y as f64);
        let dict_t = build_dictionary(data_tx, grid_t);
        let dict_t_conj = Dictionary {
            grid: dict_t.grid.clone(),
            geom: dict_t.geom,
            matrix: dict_t.matrix.conjugate(),
        };
        Ok(TrainingSetup {
            dict_t,
            dict_r: build_dictionary(data_rx, grid_r),
            sched,
            num_paths,
            m_data_tx,
            m_data_rx,
            window_radius_rx,
            window_radius_tx,
            scanner,
            dict_t_conj,
        })
    }

    pub fn scanner(&self) -> &CoarseScanner {
        &self.scanner
    }

    /// Known coefficient-to-gain divisor of the channel model,
    /// `sqrt(N_t * N_r / L)`.
    pub fn gain_scale(&self) -> f64 {
        ((self.dict_t.geom.total() * self.dict_r.geom.total()) as f64 / self.num_paths as f64)
            .sqrt()
    }
}

/// Runs the full two-stage protocol on one `(H_s, H_d)` pair.
pub fn run_full_training<R: Rng>(
    h_s: &CMat,
    h_d: &CMat,
    setup: &TrainingSetup,
    noise_var: f64,
    rng: &mut R,
) -> Result<(FineEstimates, TrainingReport)> {
    let y_s = simulate_aux_rx(h_s, &setup.sched, noise_var, rng)?;
    let coarse = setup.scanner.estimate(&y_s, setup.num_paths)?;

    let gain_scale = setup.gain_scale();
    let mut fine = FineEstimates {
        aoa_set: Vec::with_capacity(setup.num_paths),
        aod_set: Vec::with_capacity(setup.num_paths),
        gains: Vec::with_capacity(setup.num_paths),
    };
    let mut rx_residuals = Vec::with_capacity(setup.num_paths);
    let mut tx_residuals = Vec::with_capacity(setup.num_paths);

    for l in 0..setup.num_paths {
        let rx = rx_refine_path(
            h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            coarse.aoa_set[l],
            coarse.aod_set[l],
            &setup.dict_r,
            setup.m_data_rx,
            setup.window_radius_rx,
            gain_scale,
            noise_var,
            rng,
        )?;
        let tx = tx_refine_conjugated(
            h_d,
            &setup.dict_r.geom,
            &setup.sched.tx_geom,
            rx.dir,
            coarse.aod_set[l],
            &setup.dict_t_conj,
            setup.m_data_tx,
            setup.window_radius_tx,
            gain_scale,
            noise_var,
            rng,
        )?;
        fine.aoa_set.push(rx.dir);
        fine.aod_set.push(tx.dir);
        fine.gains.push(tx.gain);
        rx_residuals.push(rx.residual_norm);
        tx_residuals.push(tx.residual_norm);
    }

    let report = TrainingReport {
        aux_slots: setup.sched.aux_slots(),
        data_slots: 2 * setup.num_paths,
        rx_residuals,
        tx_residuals,
    };
    Ok((fine, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        assemble_matrix, sample_separated_channel, ChannelRealization, PathKind, PathParams,
        ScenarioConfig, ThzLinkParams,
    };
    use crate::codebook::make_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_scenario() -> ScenarioConfig {
        ScenarioConfig {
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
        }
    }

    fn paper_setup() -> TrainingSetup {
        let sc = paper_scenario();
        let sched = default_aux_schedule(&sc.aux_tx, &sc.aux_rx, 4, 4).unwrap();
        TrainingSetup::new(
            &sc.data_tx,
            &sc.data_rx,
            sched,
            &make_grid(64, 64).unwrap(),
            &make_grid(64, 64).unwrap(),
            3,
            4,
            4,
        )
        .unwrap()
    }

    #[test]
    fn default_schedule_counts() {
        let sched = default_aux_schedule(&UpaGeometry::new(4, 4), &UpaGeometry::new(4, 4), 4, 4)
            .unwrap();
        assert_eq!(sched.num_tx_beams(), 16);
        assert_eq!(sched.num_rx_beams(), 16);
        assert_eq!(sched.pilot_slots, 4);
        assert_eq!(sched.combine_slots, 4);
        assert_eq!(sched.aux_slots(), 16);
        for j in 0..16 {
            assert!((sched.pilots.column(j).norm() - 1.0).abs() < 1e-12);
            assert!((sched.combiners.column(j).norm() - 1.0).abs() < 1e-12);
        }
        let gram = sched.combiners.ad_mul(&sched.combiners);
        assert!((gram - CMat::identity(16, 16)).norm() < 1e-10);
        assert!(
            default_aux_schedule(&UpaGeometry::new(4, 4), &UpaGeometry::new(4, 4), 3, 4).is_err()
        );
    }

    #[test]
    fn aux_rx_zero_channel_zero_noise() {
        let sched = default_aux_schedule(&UpaGeometry::new(4, 4), &UpaGeometry::new(4, 4), 4, 4)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = simulate_aux_rx(&CMat::zeros(16, 16), &sched, 0.0, &mut rng).unwrap();
        assert!(y.norm() < 1e-15);
        assert!(simulate_aux_rx(&CMat::zeros(16, 16), &sched, -1.0, &mut rng).is_err());
        assert!(simulate_aux_rx(&CMat::zeros(8, 16), &sched, 0.0, &mut rng).is_err());
    }

    #[test]
    fn aux_rx_preserves_rank_and_is_deterministic() {
        let sc = paper_scenario();
        let sched = default_aux_schedule(&sc.aux_tx, &sc.aux_rx, 4, 4).unwrap();
        let grid = make_grid(64, 64).unwrap();
        let re = sample_separated_channel(&mut ChaCha8Rng::seed_from_u64(3), &sc, &grid, &grid)
            .unwrap()
            .on_arrays(sc.aux_tx, sc.aux_rx);
        let h_s = assemble_matrix(&re).unwrap();
        let y = simulate_aux_rx(&h_s, &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let sv = crate::util::singular_values(&y);
        let rank = sv.iter().filter(|s| **s > sv[0] * 1e-10).count();
        assert_eq!(rank, 3);

        let y1 = simulate_aux_rx(&h_s, &sched, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let y2 = simulate_aux_rx(&h_s, &sched, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(y1, y2);
    }

    fn single_path_channel(
        tx: UpaGeometry,
        rx: UpaGeometry,
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
            tx_geom: tx,
            rx_geom: rx,
        })
        .unwrap()
    }

    #[test]
    fn svd_estimation_single_on_grid_path() {
        let aux = UpaGeometry::new(4, 4);
        let sched = default_aux_schedule(&aux, &aux, 4, 4).unwrap();
        let grid = make_grid(8, 8).unwrap();
        let aoa = grid.point(19).unwrap();
        let aod = grid.point(44).unwrap();
        let h_s = single_path_channel(aux, aux, aoa, aod, C64::new(0.7, -0.2));
        let y = simulate_aux_rx(&h_s, &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let est = svd_angle_estimation(&y, &sched, 1, &grid, &grid).unwrap();
        assert_eq!(est.aoa_set[0], aoa);
        assert_eq!(est.aod_set[0], aod);
        assert!(svd_angle_estimation(&y, &sched, 99, &grid, &grid).is_err());
    }

    #[test]
    fn svd_estimation_three_orthogonal_paths() {
        let aux = UpaGeometry::new(4, 4);
        let sched = default_aux_schedule(&aux, &aux, 4, 4).unwrap();
        let grid = make_grid(8, 8).unwrap();
        // per-axis separations are multiples of 1/4: orthogonal on a 4x4 UPA
        let aoas = [
            FreqPair::new(-0.5, -0.25),
            FreqPair::new(-0.25, 0.0),
            FreqPair::new(0.0, 0.25),
        ];
        let aods = [
            FreqPair::new(0.25, -0.5),
            FreqPair::new(-0.5, -0.25),
            FreqPair::new(-0.25, 0.25),
        ];
        let gains = [
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.5),
            C64::new(-0.25, 0.0),
        ];
        let re = ChannelRealization {
            paths: (0..3)
                .map(|l| PathParams {
                    gain: gains[l],
                    aoa: aoas[l],
                    aod: aods[l],
                    kind: if l == 0 { PathKind::Los } else { PathKind::Nlos },
                })
                .collect(),
            tx_geom: aux,
            rx_geom: aux,
        };
        let h_s = assemble_matrix(&re).unwrap();
        let y = simulate_aux_rx(&h_s, &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let est = svd_angle_estimation(&y, &sched, 3, &grid, &grid).unwrap();
        // singular values sort by |gain|, so the sets come back in gain order
        assert_eq!(est.aoa_set, vec![aoas[0], aoas[1], aoas[2]]);
        assert_eq!(est.aod_set, vec![aods[0], aods[1], aods[2]]);

        // scale invariance: any nonzero complex scaling leaves the argmax alone
        let y2 = &y * C64::new(-0.3, 1.7);
        let est2 = svd_angle_estimation(&y2, &sched, 3, &grid, &grid).unwrap();
        assert_eq!(est.aoa_set, est2.aoa_set);
        assert_eq!(est.aod_set, est2.aod_set);
    }

    #[test]
    fn svd_estimation_ignores_path_order() {
        let aux = UpaGeometry::new(4, 4);
        let sched = default_aux_schedule(&aux, &aux, 4, 4).unwrap();
        let grid = make_grid(8, 8).unwrap();
        let mk = |order: [usize; 2]| {
            let paths = [
                PathParams {
                    gain: C64::new(1.0, 0.0),
                    aoa: FreqPair::new(-0.5, -0.5),
                    aod: FreqPair::new(0.0, 0.0),
                    kind: PathKind::Los,
                },
                PathParams {
                    gain: C64::new(0.4, 0.0),
                    aoa: FreqPair::new(-0.25, -0.25),
                    aod: FreqPair::new(0.25, 0.25),
                    kind: PathKind::Nlos,
                },
            ];
            assemble_matrix(&ChannelRealization {
                paths: order.iter().map(|&i| paths[i]).collect(),
                tx_geom: aux,
                rx_geom: aux,
            })
            .unwrap()
        };
        let y_a = simulate_aux_rx(&mk([0, 1]), &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let y_b = simulate_aux_rx(&mk([1, 0]), &sched, 0.0, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap();
        let est_a = svd_angle_estimation(&y_a, &sched, 2, &grid, &grid).unwrap();
        let est_b = svd_angle_estimation(&y_b, &sched, 2, &grid, &grid).unwrap();
        assert_eq!(est_a, est_b);
    }

    #[test]
    fn rx_refine_exact_within_lobe() {
        let setup = paper_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // truth on the fine grid, one fine bin off the coarse estimate
        let truth = setup.dict_r.grid.point(64 * 20 + 34).unwrap();
        let coarse_aoa = setup.dict_r.grid.point(64 * 20 + 33).unwrap();
        let aod = setup.dict_t.grid.point(64 * 5 + 12).unwrap();
        let h_d = single_path_channel(
            setup.dict_t.geom,
            setup.dict_r.geom,
            truth,
            aod,
            C64::new(0.9, 0.1),
        );
        let out = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            coarse_aoa,
            aod,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.dir, truth);

        // fixed point: exact coarse estimate refines to itself
        let out2 = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            truth,
            aod,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out2.dir, truth);
    }

    #[test]
    fn rx_refine_flags_out_of_window_truth() {
        let setup = paper_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = setup.dict_r.grid.point(64 * 10 + 11).unwrap();
        let aod = setup.dict_t.grid.point(64 * 40 + 7).unwrap();
        let h_d = single_path_channel(
            setup.dict_t.geom,
            setup.dict_r.geom,
            truth,
            aod,
            C64::new(1.0, 0.0),
        );
        let well_posed = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            truth,
            aod,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        // coarse estimate half the frequency plane away
        let bad_coarse = FreqPair::new(truth.theta + 0.5, truth.phi + 0.5);
        let adv = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            bad_coarse,
            aod,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        let (dt, dp) = adv.dir.circ_dist(&bad_coarse);
        assert!(dt <= setup.window_radius_rx.0 + 1e-9);
        assert!(dp <= setup.window_radius_rx.1 + 1e-9);
        assert!(adv.residual_norm > 10.0 * well_posed.residual_norm.max(1e-12));
        assert!(adv.gain.norm() < well_posed.gain.norm());
    }

    #[test]
    fn tx_refine_mirror_and_zero_channel() {
        let setup = paper_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let aoa = setup.dict_r.grid.point(64 * 30 + 3).unwrap();
        let truth_aod = setup.dict_t.grid.point(64 * 17 + 50).unwrap();
        let coarse_aod = setup.dict_t.grid.point(64 * 17 + 49).unwrap();
        let gain = C64::new(0.4, -0.6);
        let h_d = single_path_channel(setup.dict_t.geom, setup.dict_r.geom, aoa, truth_aod, gain);
        let out = tx_refine_path(
            &h_d,
            &setup.dict_r.geom,
            &setup.sched.tx_geom,
            aoa,
            coarse_aod,
            &setup.dict_t,
            4,
            setup.window_radius_tx,
            setup.gain_scale(),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.dir, truth_aod);
        // exact fine AoA makes the recovered coefficient the exact path gain
        assert!((out.gain - gain).norm() < 1e-9);

        let zero = CMat::zeros(64, 64);
        let out0 = tx_refine_path(
            &zero,
            &setup.dict_r.geom,
            &setup.sched.tx_geom,
            aoa,
            coarse_aod,
            &setup.dict_t,
            4,
            setup.window_radius_tx,
            setup.gain_scale(),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out0.gain, C64::new(0.0, 0.0));
        assert_eq!(out0.residual_norm, 0.0);
    }

    #[test]
    fn refine_order_symmetric_on_reciprocal_channel() {
        // symmetric single-path channel: refining RX-then-TX or TX-then-RX
        // lands on the same (AoA, AoD) pair
        let setup = paper_setup();
        let dir = setup.dict_r.grid.point(64 * 22 + 41).unwrap();
        let h_d = single_path_channel(
            setup.dict_t.geom,
            setup.dict_r.geom,
            dir,
            dir,
            C64::new(0.8, 0.0),
        );
        let coarse = setup.dict_r.grid.point(64 * 22 + 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);

        let rx_first = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            coarse,
            coarse,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        let then_tx = tx_refine_path(
            &h_d,
            &setup.dict_r.geom,
            &setup.sched.tx_geom,
            rx_first.dir,
            coarse,
            &setup.dict_t,
            4,
            setup.window_radius_tx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();

        // mirrored order: probe with the coarse AoA, refine the AoD first
        let tx_first = tx_refine_path(
            &h_d,
            &setup.dict_r.geom,
            &setup.sched.tx_geom,
            coarse,
            coarse,
            &setup.dict_t,
            4,
            setup.window_radius_tx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();
        let then_rx = rx_refine_path(
            &h_d,
            &setup.dict_t.geom,
            &setup.sched.rx_geom,
            coarse,
            tx_first.dir,
            &setup.dict_r,
            4,
            setup.window_radius_rx,
            1.0,
            0.0,
            &mut rng,
        )
        .unwrap();

        assert_eq!(rx_first.dir, dir);
        assert_eq!(then_tx.dir, dir);
        assert_eq!(tx_first.dir, dir);
        assert_eq!(then_rx.dir, dir);
    }

    #[test]
    fn full_training_slot_accounting_and_exact_recovery() {
        let sc = paper_scenario();
        let setup = paper_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let grid = make_grid(64, 64).unwrap();
        let re = sample_separated_channel(&mut rng, &sc, &grid, &grid).unwrap();
        let h_d = re.matrix().unwrap();
        let h_s = assemble_matrix(&re.on_arrays(sc.aux_tx, sc.aux_rx)).unwrap();

        let mut proto_rng = ChaCha8Rng::seed_from_u64(13);
        let (fine, report) = run_full_training(&h_s, &h_d, &setup, 0.0, &mut proto_rng).unwrap();
        assert_eq!(report.aux_slots, 16);
        assert_eq!(report.data_slots, 6);

        let mut want_aoa: Vec<(i64, i64)> = re
            .paths
            .iter()
            .map(|p| ((p.aoa.theta * 1e6).round() as i64, (p.aoa.phi * 1e6).round() as i64))
            .collect();
        let mut got_aoa: Vec<(i64, i64)> = fine
            .aoa_set
            .iter()
            .map(|p| ((p.theta * 1e6).round() as i64, (p.phi * 1e6).round() as i64))
            .collect();
        want_aoa.sort_unstable();
        got_aoa.sort_unstable();
        assert_eq!(want_aoa, got_aoa);

        let mut want_aod: Vec<(i64, i64)> = re
            .paths
            .iter()
            .map(|p| ((p.aod.theta * 1e6).round() as i64, (p.aod.phi * 1e6).round() as i64))
            .collect();
        let mut got_aod: Vec<(i64, i64)> = fine
            .aod_set
            .iter()
            .map(|p| ((p.theta * 1e6).round() as i64, (p.phi * 1e6).round() as i64))
            .collect();
        want_aod.sort_unstable();
        got_aod.sort_unstable();
        assert_eq!(want_aod, got_aod);

        // same seed, same outputs
        let rerun = run_full_training(
            &h_s,
            &h_d,
            &setup,
            0.0,
            &mut ChaCha8Rng::seed_from_u64(13),
        )
        .unwrap();
        assert_eq!(rerun.0, fine);
    }
}
