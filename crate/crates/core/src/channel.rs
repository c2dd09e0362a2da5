//! THz channel model: spreading/absorption/reflection path gains, UPA steering
//! vectors, multipath realizations for the data and auxiliary array pairs, and
//! the angular-domain image of a channel matrix.
//!
//! Angles are handled exclusively as normalized spatial frequencies in
//! `[-1/2, 1/2)`; physical elevation/azimuth enter only through
//! [`freq_from_physical`].

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::{AngularGrid, Dictionary};
use crate::error::{Error, Result};
use crate::util::draw_cn01;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

const TAU: f64 = std::f64::consts::TAU;

/// Wraps a normalized spatial frequency onto `[-1/2, 1/2)`.
pub fn wrap_freq(x: f64) -> f64 {
    let w = (x + 0.5).rem_euclid(1.0) - 0.5;
    // rem_euclid may round up to exactly 1.0 for tiny negative inputs
    if w >= 0.5 {
        w - 1.0
    } else {
        w
    }
}

/// Circular distance between two normalized frequencies (period 1).
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// A pair of normalized spatial frequencies: `theta` rides the elevation (z)
/// phase ramp, `phi` the azimuth (y) ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqPair {
    pub theta: f64,
    pub phi: f64,
}

impl FreqPair {
    /// Builds a pair, wrapping both components onto `[-1/2, 1/2)`.
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta: wrap_freq(theta),
            phi: wrap_freq(phi),
        }
    }

    /// Component-wise circular distance `(theta, phi)`.
    pub fn circ_dist(&self, other: &FreqPair) -> (f64, f64) {
        (
            circ_dist(self.theta, other.theta),
            circ_dist(self.phi, other.phi),
        )
    }

    pub fn in_range(&self) -> bool {
        (-0.5..0.5).contains(&self.theta) && (-0.5..0.5).contains(&self.phi)
    }
}

/// Converts physical elevation/azimuth (radians) into normalized spatial
/// frequencies for an array with the given element spacing in wavelengths.
pub fn freq_from_physical(spacing_wavelengths: f64, theta: f64, phi: f64) -> FreqPair {
    FreqPair::new(
        spacing_wavelengths * theta.cos(),
        spacing_wavelengths * theta.sin() * phi.sin(),
    )
}

/// Geometry of one uniform planar array: `n_y` azimuth columns, `n_z`
/// elevation rows, element spacing as a fraction of the wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpaGeometry {
    pub n_y: usize,
    pub n_z: usize,
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl UpaGeometry {
    /// Half-wavelength-spaced UPA.
    pub fn new(n_y: usize, n_z: usize) -> Self {
        Self {
            n_y,
            n_z,
            spacing_wavelengths: 0.5,
        }
    }

    pub fn total(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn validate(&self, field: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if self.n_y == 0 {
            issues.push(format!("{field}.n_y: must be >= 1"));
        }
        if self.n_z == 0 {
            issues.push(format!("{field}.n_z: must be >= 1"));
        }
        if !(self.spacing_wavelengths > 0.0) {
            issues.push(format!("{field}.spacing_wavelengths: must be > 0"));
        }
        issues
    }
}

/// Unit-norm UPA array response at the given frequency pair.
///
/// Element `i_z * n_y + i_y` carries phase `2*pi*(i_z*theta + i_y*phi)`; the
/// whole vector is scaled by `1/sqrt(n_y*n_z)` so its Euclidean norm is 1.
pub fn steering_vector(geom: &UpaGeometry, dir: FreqPair) -> CVec {
    let n = geom.total();
    let scale = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |i, _| {
        let iz = (i / geom.n_y) as f64;
        let iy = (i % geom.n_y) as f64;
        C64::from_polar(scale, TAU * (iz * dir.theta + iy * dir.phi))
    })
}

/// Normalized geometric phase sum `(1/N) * sum_{i=0}^{N-1} exp(-j*2*pi*x*i)`.
///
/// Equals 1 at integer `x` and vanishes at every other multiple of `1/N`; it
/// governs the grid leakage of off-grid paths.
pub fn dirichlet_kernel(n: usize, x: f64) -> C64 {
    debug_assert!(n >= 1);
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += C64::from_polar(1.0, -TAU * x * i as f64);
    }
    acc / n as f64
}

/// Carrier and medium parameters of one THz link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThzLinkParams {
    /// Carrier frequency `f` in Hz.
    pub carrier_freq_hz: f64,
    /// Molecular absorption coefficient in 1/m.
    pub k_abs_per_m: f64,
    /// Rough-surface reflection loss in (0, 1], applied once per NLOS path.
    pub reflection_loss: f64,
}

impl ThzLinkParams {
    pub fn validate(&self, field: &str) -> Vec<String> {
        let mut issues = Vec::new();
        if !(self.carrier_freq_hz > 0.0) {
            issues.push(format!("{field}.carrier_freq_hz: must be > 0"));
        }
        if !(self.k_abs_per_m >= 0.0) {
            issues.push(format!("{field}.k_abs_per_m: must be >= 0"));
        }
        if !(self.reflection_loss > 0.0 && self.reflection_loss <= 1.0) {
            issues.push(format!("{field}.reflection_loss: must be in (0, 1]"));
        }
        issues
    }
}

/// LOS power gain `|alpha|^2 = (c / (4*pi*f*d0))^2 * exp(-k_abs*d0)`.
pub fn los_path_gain(link: &ThzLinkParams, d0_m: f64) -> Result<f64> {
    if !(d0_m > 0.0) {
        return Err(Error::invalid(format!(
            "los_path_gain: distance must be positive, got {d0_m}"
        )));
    }
    let spreading =
        (SPEED_OF_LIGHT_M_S / (4.0 * std::f64::consts::PI * link.carrier_freq_hz * d0_m)).powi(2);
    let absorption = (-link.k_abs_per_m * d0_m).exp();
    Ok(spreading * absorption)
}

/// NLOS power gain: reflection loss times the LOS gain over the total
/// reflected distance `d1 + d2`.
pub fn nlos_path_gain(link: &ThzLinkParams, d1_m: f64, d2_m: f64) -> Result<f64> {
    if !(d1_m > 0.0) || !(d2_m > 0.0) {
        return Err(Error::invalid(format!(
            "nlos_path_gain: distances must be positive, got ({d1_m}, {d2_m})"
        )));
    }
    Ok(link.reflection_loss * los_path_gain(link, d1_m + d2_m)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Los,
    Nlos,
}

/// One propagation path: complex gain plus arrival/departure frequency pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    pub gain: C64,
    pub aoa: FreqPair,
    pub aod: FreqPair,
    pub kind: PathKind,
}

/// Scenario description for channel sampling: the four arrays, the link
/// budget inputs, and the path mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub data_tx: UpaGeometry,
    pub data_rx: UpaGeometry,
    pub aux_tx: UpaGeometry,
    pub aux_rx: UpaGeometry,
    pub link: ThzLinkParams,
    pub num_paths: usize,
    pub los_distance_m: f64,
    /// Total NLOS propagation distance as a multiple of the LOS distance.
    pub nlos_detour_factor: f64,
    /// When true, path gains are expressed relative to the LOS amplitude so
    /// that the simulated SNR is a post-pathloss receive-side quantity.
    #[serde(default = "default_true")]
    pub normalize_to_los: bool,
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn validate(&self, field: &str) -> Vec<String> {
        let mut issues = Vec::new();
        issues.extend(self.data_tx.validate(&format!("{field}.data_tx")));
        issues.extend(self.data_rx.validate(&format!("{field}.data_rx")));
        issues.extend(self.aux_tx.validate(&format!("{field}.aux_tx")));
        issues.extend(self.aux_rx.validate(&format!("{field}.aux_rx")));
        issues.extend(self.link.validate(&format!("{field}.link")));
        if self.num_paths == 0 {
            issues.push(format!("{field}.num_paths: must be >= 1"));
        }
        if !(self.los_distance_m > 0.0) {
            issues.push(format!("{field}.los_distance_m: must be > 0"));
        }
        if !(self.nlos_detour_factor > 1.0) {
            issues.push(format!("{field}.nlos_detour_factor: must be > 1"));
        }
        issues
    }

    /// Mean NLOS path power divided by the LOS path power under this scenario.
    pub fn nlos_to_los_power_ratio(&self) -> Result<f64> {
        let half = self.los_distance_m * self.nlos_detour_factor / 2.0;
        Ok(nlos_path_gain(&self.link, half, half)? / los_path_gain(&self.link, self.los_distance_m)?)
    }
}

/// A sampled multipath channel between one TX/RX array pair. The dense matrix
/// is assembled on demand from the stored paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<PathParams>,
    pub tx_geom: UpaGeometry,
    pub rx_geom: UpaGeometry,
}

impl ChannelRealization {
    /// Dense `N_r x N_t` channel matrix.
    pub fn matrix(&self) -> Result<CMat> {
        assemble_matrix(self)
    }

    /// Reuses the same path set on a different array pair. The auxiliary and
    /// data channels of one link differ only in antenna counts.
    pub fn on_arrays(&self, tx_geom: UpaGeometry, rx_geom: UpaGeometry) -> ChannelRealization {
        ChannelRealization {
            paths: self.paths.clone(),
            tx_geom,
            rx_geom,
        }
    }
}

/// Draws one channel realization on the scenario's data arrays.
///
/// Path 1 is LOS with a deterministic gain magnitude and uniform random phase;
/// the remaining paths are NLOS with complex-Gaussian coefficients scaled by
/// the NLOS gain. All four frequencies of every path are uniform over
/// `[-1/2, 1/2)`. Deterministic given the RNG state.
pub fn sample_channel<R: Rng>(rng: &mut R, scenario: &ScenarioConfig) -> Result<ChannelRealization> {
    if scenario.num_paths == 0 {
        return Err(Error::invalid("sample_channel: num_paths must be >= 1"));
    }
    let los_pow = los_path_gain(&scenario.link, scenario.los_distance_m)?;
    let half = scenario.los_distance_m * scenario.nlos_detour_factor / 2.0;
    let nlos_pow = nlos_path_gain(&scenario.link, half, half)?;
    let ref_amp = if scenario.normalize_to_los {
        los_pow.sqrt()
    } else {
        1.0
    };

    let mut paths = Vec::with_capacity(scenario.num_paths);
    for l in 0..scenario.num_paths {
        let gain = if l == 0 {
            let phase = rng.gen::<f64>() * TAU;
            C64::from_polar(los_pow.sqrt() / ref_amp, phase)
        } else {
            draw_cn01(rng) * (nlos_pow.sqrt() / ref_amp)
        };
        let aoa = FreqPair::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let aod = FreqPair::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        paths.push(PathParams {
            gain,
            aoa,
            aod,
            kind: if l == 0 { PathKind::Los } else { PathKind::Nlos },
        });
    }
    Ok(ChannelRealization {
        paths,
        tx_geom: scenario.data_tx,
        rx_geom: scenario.data_rx,
    })
}

/// Draws per-axis path frequencies on the fine grid such that every pair of
/// paths is separated, on every axis, by a nonzero multiple of one auxiliary
/// beam-grid step (`1/n_aux` on that axis). Such paths have exactly
/// orthogonal steering vectors on the auxiliary arrays and land on nulls of
/// the data-array kernels, so noiseless training recovers them exactly.
fn separated_axis_bins<R: Rng>(
    rng: &mut R,
    num_paths: usize,
    g: usize,
    n_aux: usize,
) -> Result<Vec<usize>> {
    if n_aux < num_paths {
        return Err(Error::invalid(format!(
            "separated paths: need at least {num_paths} auxiliary positions per axis, have {n_aux}"
        )));
    }
    if g % n_aux != 0 {
        return Err(Error::invalid(format!(
            "separated paths: grid size {g} must be divisible by aux count {n_aux}"
        )));
    }
    let stride = g / n_aux;
    // distinct coarse slots (partial Fisher-Yates), then a shared fine offset
    let mut slots: Vec<usize> = (0..n_aux).collect();
    for i in 0..num_paths {
        let j = rng.gen_range(i..n_aux);
        slots.swap(i, j);
    }
    let offset = rng.gen_range(0..g);
    Ok(slots[..num_paths]
        .iter()
        .map(|&s| (s * stride + offset) % g)
        .collect())
}

/// Variant of [`sample_channel`] whose angles sit on the fine grids with
/// pairwise per-axis separation of at least two coarse half-lobe bins (one
/// full auxiliary grid step), the well-separated regime of the training
/// protocol. Gains are drawn exactly as in [`sample_channel`].
pub fn sample_separated_channel<R: Rng>(
    rng: &mut R,
    scenario: &ScenarioConfig,
    grid_t: &AngularGrid,
    grid_r: &AngularGrid,
) -> Result<ChannelRealization> {
    let mut base = sample_channel(rng, scenario)?;
    let l = scenario.num_paths;
    let aoa_theta = separated_axis_bins(rng, l, grid_r.g_z, scenario.aux_rx.n_z)?;
    let aoa_phi = separated_axis_bins(rng, l, grid_r.g_y, scenario.aux_rx.n_y)?;
    let aod_theta = separated_axis_bins(rng, l, grid_t.g_z, scenario.aux_tx.n_z)?;
    let aod_phi = separated_axis_bins(rng, l, grid_t.g_y, scenario.aux_tx.n_y)?;
    for (i, path) in base.paths.iter_mut().enumerate() {
        path.aoa = FreqPair {
            theta: aoa_theta[i] as f64 / grid_r.g_z as f64 - 0.5,
            phi: aoa_phi[i] as f64 / grid_r.g_y as f64 - 0.5,
        };
        path.aod = FreqPair {
            theta: aod_theta[i] as f64 / grid_t.g_z as f64 - 0.5,
            phi: aod_phi[i] as f64 / grid_t.g_y as f64 - 0.5,
        };
    }
    Ok(base)
}

/// Assembles `sqrt(N_t*N_r/L) * sum_l gain_l * a_r(aoa_l) * a_t(aod_l)^H`.
pub fn assemble_matrix(realization: &ChannelRealization) -> Result<CMat> {
    if realization.paths.is_empty() {
        return Err(Error::invalid("assemble_matrix: path list is empty"));
    }
    let n_t = realization.tx_geom.total();
    let n_r = realization.rx_geom.total();
    let scale = ((n_t * n_r) as f64 / realization.paths.len() as f64).sqrt();
    let mut h = CMat::zeros(n_r, n_t);
    for path in &realization.paths {
        let a_r = steering_vector(&realization.rx_geom, path.aoa);
        let a_t = steering_vector(&realization.tx_geom, path.aod);
        h += a_r * a_t.adjoint() * (path.gain * scale);
    }
    Ok(h)
}

/// Angular-domain image `S_r^H * H * S_t` of a channel matrix on the given
/// receive/transmit dictionaries.
pub fn angular_domain_image(h: &CMat, dict_r: &Dictionary, dict_t: &Dictionary) -> Result<CMat> {
    if h.nrows() != dict_r.matrix.nrows() || h.ncols() != dict_t.matrix.nrows() {
        return Err(Error::invalid(format!(
            "angular_domain_image: channel is {}x{} but dictionaries expect {}x{}",
            h.nrows(),
            h.ncols(),
            dict_r.matrix.nrows(),
            dict_t.matrix.nrows()
        )));
    }
    Ok(dict_r.matrix.adjoint() * h * &dict_t.matrix)
}
