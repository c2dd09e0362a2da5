//! Angular grids, steering-vector dictionaries, DFT beam codebooks, and the
//! narrow-beam sets that tile a coarse beam's main lobe.
//!
//! Flat grid indices are 1-based at the API boundary and run row-major with
//! the theta (elevation) axis fastest.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::{steering_vector, CMat, CVec, FreqPair, UpaGeometry};
use crate::error::{Error, Result};

/// Uniform grid of quantized frequency pairs covering `[-1/2, 1/2)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    pub g_y: usize,
    pub g_z: usize,
    points: Vec<FreqPair>,
}

impl AngularGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid point at 1-based flat index `i`.
    pub fn point(&self, i: usize) -> Result<FreqPair> {
        index_to_angles(self, i)
    }

    pub fn points(&self) -> &[FreqPair] {
        &self.points
    }

    /// Per-axis spacing `(theta, phi)`.
    pub fn spacing(&self) -> (f64, f64) {
        (1.0 / self.g_z as f64, 1.0 / self.g_y as f64)
    }

    /// 1-based flat index of the grid point nearest to `dir` (circular metric,
    /// ties toward the lower index).
    pub fn nearest_index(&self, dir: FreqPair) -> usize {
        let n = nearest_axis_index(dir.theta, self.g_z);
        let m = nearest_axis_index(dir.phi, self.g_y);
        (m - 1) * self.g_z + n
    }
}

fn nearest_axis_index(freq: f64, g: usize) -> usize {
    // axis values are (k-1)/g - 1/2 for k = 1..g
    let k = ((freq + 0.5) * g as f64).round() as i64;
    (k.rem_euclid(g as i64) as usize) + 1
}

/// Builds the `g_y * g_z` grid with theta-frequency `(n-1)/g_z - 1/2` and
/// phi-frequency `(m-1)/g_y - 1/2` at flat index `i = (m-1)*g_z + n`.
pub fn make_grid(g_y: usize, g_z: usize) -> Result<AngularGrid> {
    if g_y == 0 || g_z == 0 {
        return Err(Error::invalid(format!(
            "make_grid: sizes must be positive, got ({g_y}, {g_z})"
        )));
    }
    let mut points = Vec::with_capacity(g_y * g_z);
    for m in 1..=g_y {
        for n in 1..=g_z {
            points.push(FreqPair {
                theta: (n - 1) as f64 / g_z as f64 - 0.5,
                phi: (m - 1) as f64 / g_y as f64 - 0.5,
            });
        }
    }
    Ok(AngularGrid { g_y, g_z, points })
}

/// Frequency pair at 1-based flat index `i`.
pub fn index_to_angles(grid: &AngularGrid, i: usize) -> Result<FreqPair> {
    if i == 0 || i > grid.len() {
        return Err(Error::invalid(format!(
            "index_to_angles: index {i} out of range 1..={}",
            grid.len()
        )));
    }
    Ok(grid.points[i - 1])
}

/// Inverse of [`index_to_angles`]; the pair must sit on the grid to within
/// 1e-9 per axis.
pub fn angles_to_index(grid: &AngularGrid, dir: FreqPair) -> Result<usize> {
    let idx = grid.nearest_index(dir);
    let p = grid.points[idx - 1];
    let (dt, dp) = p.circ_dist(&dir);
    if dt > 1e-9 || dp > 1e-9 {
        return Err(Error::invalid(format!(
            "angles_to_index: ({}, {}) is not a grid point",
            dir.theta, dir.phi
        )));
    }
    Ok(idx)
}

/// Steering-vector dictionary: column `i` is the array response at grid
/// point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub grid: AngularGrid,
    pub geom: UpaGeometry,
    pub matrix: CMat,
}

pub fn build_dictionary(geom: &UpaGeometry, grid: &AngularGrid) -> Dictionary {
    let cols: Vec<CVec> = grid
        .points()
        .iter()
        .map(|p| steering_vector(geom, *p))
        .collect();
    Dictionary {
        grid: grid.clone(),
        geom: *geom,
        matrix: CMat::from_columns(&cols),
    }
}

/// DFT beam codebook with per-grid-point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub beams: CMat,
    /// 1-based grid index of each beam.
    pub labels: Vec<usize>,
    pub grid: AngularGrid,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frequency pair the given beam points at.
    pub fn beam_dir(&self, beam: usize) -> Result<FreqPair> {
        self.grid.point(self.labels[beam])
    }
}

/// Orthonormal DFT codebook: the dictionary over the grid whose per-axis
/// sizes equal the per-axis antenna counts.
pub fn dft_codebook(geom: &UpaGeometry) -> Codebook {
    let grid = make_grid(geom.n_y, geom.n_z).expect("antenna counts are positive");
    let dict = build_dictionary(geom, &grid);
    Codebook {
        beams: dict.matrix,
        labels: (1..=grid.len()).collect(),
        grid,
    }
}

/// The narrow data-array beams tiling one coarse auxiliary beam's main lobe.
///
/// With per-axis refinement factor `r = n_data/n_aux`, the offsets are
/// `(2k + 1 - r) / (2 * r * n_aux)` for `k = 0..r`, which places all `r*r`
/// beam peaks strictly inside the coarse null-to-null lobe of width
/// `2/n_aux` per axis.
pub fn narrow_beam_set(
    coarse_dir: FreqPair,
    data_geom: &UpaGeometry,
    aux_geom: &UpaGeometry,
    m: usize,
) -> Result<Vec<(FreqPair, CVec)>> {
    if data_geom.n_y % aux_geom.n_y != 0 || data_geom.n_z % aux_geom.n_z != 0 {
        return Err(Error::invalid(format!(
            "narrow_beam_set: data counts ({}, {}) must be integer multiples of aux counts ({}, {})",
            data_geom.n_y, data_geom.n_z, aux_geom.n_y, aux_geom.n_z
        )));
    }
    let r_y = data_geom.n_y / aux_geom.n_y;
    let r_z = data_geom.n_z / aux_geom.n_z;
    if m != r_y * r_z {
        return Err(Error::invalid(format!(
            "narrow_beam_set: beam count {m} must equal the refinement product {}",
            r_y * r_z
        )));
    }
    let mut beams = Vec::with_capacity(m);
    for ky in 0..r_y {
        let d_phi = ((2 * ky + 1) as f64 - r_y as f64) / (2.0 * r_y as f64 * aux_geom.n_y as f64);
        for kz in 0..r_z {
            let d_theta =
                ((2 * kz + 1) as f64 - r_z as f64) / (2.0 * r_z as f64 * aux_geom.n_z as f64);
            let dir = FreqPair::new(coarse_dir.theta + d_theta, coarse_dir.phi + d_phi);
            beams.push((dir, steering_vector(data_geom, dir)));
        }
    }
    Ok(beams)
}

/// Stacks narrow-beam vectors as the columns of a combiner matrix.
pub fn beam_matrix(beams: &[(FreqPair, CVec)]) -> CMat {
    let cols: Vec<DVector<_>> = beams.iter().map(|(_, v)| v.clone()).collect();
    CMat::from_columns(&cols)
}
