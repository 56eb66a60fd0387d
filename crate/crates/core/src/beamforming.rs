//! Bartlett and MVDR beamformers, grid power scans and PSF metrics.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, Direction, SteeringVector};
use crate::linalg::HermitianCholesky;
use crate::signal_model::{covariance_analytic, CovarianceMatrix, Scene};

/// Floor applied when power maps are converted to dB for export.
pub const DB_FLOOR: f64 = -80.0;

/// Default loading for estimated covariances, as a fraction of trace(R)/L.
pub const DEFAULT_SAMPLE_LOADING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beamformer {
    Bartlett,
    /// `loading` is a fraction of trace(R)/L added to the diagonal.
    Mvdr {
        loading: f64,
    },
}

impl Beamformer {
    pub fn name(&self) -> &'static str {
        match self {
            Beamformer::Bartlett => "bartlett",
            Beamformer::Mvdr { .. } => "mvdr",
        }
    }
}

impl fmt::Display for Beamformer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beamformer::Bartlett => write!(f, "bartlett"),
            Beamformer::Mvdr { loading } => write!(f, "mvdr(loading={loading})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    pub entries: DVector<Complex64>,
    pub look: Direction,
}

impl BeamWeights {
    /// `wᴴ d`.
    pub fn response(&self, d: &SteeringVector) -> Complex64 {
        self.entries.dotc(&d.entries)
    }
}

fn check_dims(r: &CovarianceMatrix, d: &SteeringVector) -> Result<()> {
    if r.dim() != d.len() {
        return invalid(format!(
            "covariance is {0}x{0} but steering vector has {1} entries",
            r.dim(),
            d.len()
        ));
    }
    Ok(())
}

/// `wᴴ R w` with `w = d / L`.
pub fn bartlett_power(r: &CovarianceMatrix, d: &SteeringVector) -> Result<f64> {
    check_dims(r, d)?;
    Ok(bartlett_unchecked(r, d))
}

fn bartlett_unchecked(r: &CovarianceMatrix, d: &SteeringVector) -> f64 {
    let l = d.len() as f64;
    (crate::linalg::hermitian_form(r.as_matrix(), &d.entries) / (l * l)).max(0.0)
}

/// Factored `R + loading · trace(R)/L · I`, reused across look directions.
#[derive(Debug, Clone)]
pub struct MvdrSolver {
    factor: HermitianCholesky,
}

impl MvdrSolver {
    pub fn new(r: &CovarianceMatrix, loading: f64) -> Result<Self> {
        if !(loading >= 0.0) || !loading.is_finite() {
            return invalid(format!(
                "diagonal loading must be non-negative, got {loading}"
            ));
        }
        let l = r.dim();
        let mut loaded = r.as_matrix().clone();
        let delta = loading * r.trace() / l as f64;
        for i in 0..l {
            loaded[(i, i)] += delta;
        }
        Ok(Self {
            factor: HermitianCholesky::new(&loaded)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    /// `1 / (dᴴ R_l⁻¹ d)`.
    pub fn power(&self, d: &SteeringVector) -> f64 {
        1.0 / self.factor.inverse_quadratic_form(&d.entries)
    }

    /// `R_l⁻¹ d / (dᴴ R_l⁻¹ d)`.
    pub fn weights(&self, d: &SteeringVector) -> BeamWeights {
        let r_inv_d = self.factor.solve(&d.entries);
        let denom = d.entries.dotc(&r_inv_d);
        BeamWeights {
            entries: r_inv_d / denom,
            look: d.direction,
        }
    }
}

pub fn mvdr_weights(r: &CovarianceMatrix, d: &SteeringVector, loading: f64) -> Result<BeamWeights> {
    check_dims(r, d)?;
    Ok(MvdrSolver::new(r, loading)?.weights(d))
}

pub fn mvdr_power(r: &CovarianceMatrix, d: &SteeringVector, loading: f64) -> Result<f64> {
    check_dims(r, d)?;
    Ok(MvdrSolver::new(r, loading)?.power(d))
}

/// Uniform azimuth × elevation scan grid, degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub az_min: f64,
    pub az_max: f64,
    pub az_step: f64,
    pub el_min: f64,
    pub el_max: f64,
    pub el_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            az_min: -90.0,
            az_max: 90.0,
            az_step: 1.0,
            el_min: -90.0,
            el_max: 90.0,
            el_step: 1.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let axis = |name: &str, min: f64, max: f64, step: f64| -> Result<()> {
            if !(step > 0.0) || !step.is_finite() {
                return invalid(format!("grid.{name}_step must be positive, got {step}"));
            }
            if !(min <= max) || min < -90.0 || max > 90.0 {
                return invalid(format!(
                    "grid.{name}_min/grid.{name}_max must satisfy -90 <= min <= max <= 90, got [{min}, {max}]"
                ));
            }
            Ok(())
        };
        axis("az", self.az_min, self.az_max, self.az_step)?;
        axis("el", self.el_min, self.el_max, self.el_step)
    }

    fn axis(min: f64, max: f64, step: f64) -> Vec<f64> {
        let n = ((max - min) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| min + i as f64 * step).collect()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        Self::axis(self.az_min, self.az_max, self.az_step)
    }

    pub fn elevations(&self) -> Vec<f64> {
        Self::axis(self.el_min, self.el_max, self.el_step)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "az=[{}:{}:{}] el=[{}:{}:{}]",
            self.az_min, self.az_step, self.az_max, self.el_min, self.el_step, self.el_max
        )
    }
}

/// Linear power over an azimuth × elevation grid, stored elevation-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    azimuth_grid: Vec<f64>,
    elevation_grid: Vec<f64>,
    power: Vec<f64>,
}

impl PowerMap {
    /// `power[i_el * n_az + i_az]`.
    pub fn new(azimuth_grid: Vec<f64>, elevation_grid: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        let increasing = |g: &[f64]| !g.is_empty() && g.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&azimuth_grid) || !increasing(&elevation_grid) {
            return invalid("power map grids must be non-empty and strictly increasing");
        }
        if power.len() != azimuth_grid.len() * elevation_grid.len() {
            return invalid("power map size does not match its grid");
        }
        if power.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return invalid("power map values must be finite and non-negative");
        }
        Ok(Self {
            azimuth_grid,
            elevation_grid,
            power,
        })
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuth_grid
    }

    pub fn elevations(&self) -> &[f64] {
        &self.elevation_grid
    }

    pub fn n_az(&self) -> usize {
        self.azimuth_grid.len()
    }

    pub fn n_el(&self) -> usize {
        self.elevation_grid.len()
    }

    pub fn get(&self, i_az: usize, i_el: usize) -> f64 {
        self.power[i_el * self.n_az() + i_az]
    }

    pub fn values(&self) -> &[f64] {
        &self.power
    }

    /// Index `(i_az, i_el)` of the largest value; first in storage order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, p) in self.power.iter().enumerate() {
            if *p > self.power[best] {
                best = i;
            }
        }
        (best % self.n_az(), best / self.n_az())
    }

    pub fn max(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    pub fn direction_at(&self, i_az: usize, i_el: usize) -> Direction {
        Direction::new(self.azimuth_grid[i_az], self.elevation_grid[i_el])
            .expect("grid nodes are valid directions")
    }

    /// `10 log10(P / P_peak)`, floored at [`DB_FLOOR`].
    pub fn to_db(&self) -> Vec<f64> {
        let peak = self.max();
        self.power
            .iter()
            .map(|&p| {
                if peak > 0.0 && p > 0.0 {
                    (10.0 * (p / peak).log10()).max(DB_FLOOR)
                } else {
                    DB_FLOOR
                }
            })
            .collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let db = self.to_db();
        let mut out = String::from("azimuth_deg,elevation_deg,power_linear,power_db\n");
        for (i_el, el) in self.elevation_grid.iter().enumerate() {
            for (i_az, az) in self.azimuth_grid.iter().enumerate() {
                let k = i_el * self.n_az() + i_az;
                out.push_str(&format!("{az},{el},{:e},{:.4}\n", self.power[k], db[k]));
            }
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Binary 8-bit PGM, −80..0 dB mapped to 0..255, highest elevation on top.
    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        let db = self.to_db();
        let mut out = format!("P5\n{} {}\n255\n", self.n_az(), self.n_el()).into_bytes();
        for i_el in (0..self.n_el()).rev() {
            for i_az in 0..self.n_az() {
                let v = db[i_el * self.n_az() + i_az];
                out.push(
                    ((v - DB_FLOOR) / -DB_FLOOR * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8,
                );
            }
        }
        w.write_all(&out)?;
        Ok(())
    }
}

/// Evaluates the chosen beamformer at every grid node.
///
/// Rows are computed in parallel; every node is an independent computation,
/// so the result does not depend on scheduling.
pub fn power_map(
    geometry: &ArrayGeometry,
    r: &CovarianceMatrix,
    beamformer: Beamformer,
    grid: &GridSpec,
    frequency_hz: f64,
    c_mps: f64,
) -> Result<PowerMap> {
    grid.validate()?;
    crate::geometry::check_wave_params(frequency_hz, c_mps)?;
    if r.dim() != geometry.len() {
        return invalid(format!(
            "covariance is {0}x{0} but the array has {1} elements",
            r.dim(),
            geometry.len()
        ));
    }
    let solver = match beamformer {
        Beamformer::Bartlett => None,
        Beamformer::Mvdr { loading } => Some(MvdrSolver::new(r, loading)?),
    };
    let azimuths = grid.azimuths();
    let elevations = grid.elevations();

    let rows: Vec<Vec<f64>> = elevations
        .par_iter()
        .map(|&el| {
            azimuths
                .iter()
                .map(|&az| {
                    let d =
                        steering_vector(geometry, Direction::new(az, el)?, frequency_hz, c_mps)?;
                    Ok(match &solver {
                        None => bartlett_unchecked(r, &d),
                        Some(s) => s.power(&d),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    PowerMap::new(azimuths, elevations, rows.concat())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsfMetrics {
    pub peak_direction: Direction,
    /// Half-power width along azimuth through the peak, degrees.
    pub mainlobe_width_az_deg: f64,
    /// Half-power width along elevation through the peak, degrees.
    pub mainlobe_width_el_deg: f64,
    /// Highest response outside the main lobe relative to the peak, dB.
    /// `-inf` when the whole map belongs to the main lobe.
    pub peak_sidelobe_db: f64,
}

impl fmt::Display for PsfMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "peak_azimuth_deg = {}",
            self.peak_direction.azimuth_deg()
        )?;
        writeln!(
            f,
            "peak_elevation_deg = {}",
            self.peak_direction.elevation_deg()
        )?;
        writeln!(
            f,
            "mainlobe_width_az_deg = {:.4}",
            self.mainlobe_width_az_deg
        )?;
        writeln!(
            f,
            "mainlobe_width_el_deg = {:.4}",
            self.mainlobe_width_el_deg
        )?;
        writeln!(f, "peak_sidelobe_db = {:.4}", self.peak_sidelobe_db)
    }
}

/// Relative tolerance under which two map values count as the same peak.
const PEAK_TIE_TOL: f64 = 1e-9;

/// Half-power crossing on one side of the peak along a 1-D profile.
fn half_power_crossing(
    axis: &[f64],
    profile: &[f64],
    peak: usize,
    half: f64,
    step_dir: isize,
) -> f64 {
    let mut i = peak;
    loop {
        let next = i as isize + step_dir;
        if next < 0 || next as usize >= profile.len() {
            return axis[i];
        }
        let j = next as usize;
        if profile[j] < half {
            let t = (profile[i] - half) / (profile[i] - profile[j]);
            return axis[i] + t * (axis[j] - axis[i]);
        }
        i = j;
    }
}

/// Main-lobe widths and peak sidelobe level of a PSF map.
///
/// The main lobe is the set of nodes reachable from the peak along
/// 4-connected paths of non-increasing power, i.e. everything down to the
/// surrounding nulls. The peak sidelobe is the largest value outside it.
pub fn psf_metrics(map: &PowerMap) -> Result<PsfMetrics> {
    let (pa, pe) = map.argmax();
    let peak = map.get(pa, pe);
    if !(peak > 0.0) {
        return Err(Error::NoPeak);
    }
    let ties = map
        .values()
        .iter()
        .filter(|&&p| p >= peak * (1.0 - PEAK_TIE_TOL))
        .count();
    if ties != 1 {
        return Err(Error::NoPeak);
    }

    let half = peak / 2.0;
    let row: Vec<f64> = (0..map.n_az()).map(|i| map.get(i, pe)).collect();
    let col: Vec<f64> = (0..map.n_el()).map(|j| map.get(pa, j)).collect();
    let width_az = half_power_crossing(map.azimuths(), &row, pa, half, 1)
        - half_power_crossing(map.azimuths(), &row, pa, half, -1);
    let width_el = half_power_crossing(map.elevations(), &col, pe, half, 1)
        - half_power_crossing(map.elevations(), &col, pe, half, -1);

    let (n_az, n_el) = (map.n_az(), map.n_el());
    let mut in_lobe = vec![false; n_az * n_el];
    let mut queue = VecDeque::from([(pa, pe)]);
    in_lobe[pe * n_az + pa] = true;
    while let Some((i, j)) = queue.pop_front() {
        let here = map.get(i, j);
        let mut visit = |ni: usize, nj: usize| {
            let k = nj * n_az + ni;
            if !in_lobe[k] && map.get(ni, nj) <= here {
                in_lobe[k] = true;
                queue.push_back((ni, nj));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < n_az {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < n_el {
            visit(i, j + 1);
        }
    }
    let sidelobe = map
        .values()
        .iter()
        .zip(&in_lobe)
        .filter(|(_, inside)| !**inside)
        .map(|(p, _)| *p)
        .fold(f64::NEG_INFINITY, f64::max);
    let peak_sidelobe_db = if sidelobe > 0.0 {
        10.0 * (sidelobe / peak).log10()
    } else {
        f64::NEG_INFINITY
    };

    // A zero-width lobe can only come from a degenerate profile; report one grid step.
    let floor_az = map.azimuths().get(1).map_or(1.0, |a| a - map.azimuths()[0]);
    let floor_el = map
        .elevations()
        .get(1)
        .map_or(1.0, |e| e - map.elevations()[0]);
    Ok(PsfMetrics {
        peak_direction: map.direction_at(pa, pe),
        mainlobe_width_az_deg: if width_az > 0.0 { width_az } else { floor_az },
        mainlobe_width_el_deg: if width_el > 0.0 { width_el } else { floor_el },
        peak_sidelobe_db,
    })
}

/// Point spread function: scan of the single-source analytic covariance.
#[allow(clippy::too_many_arguments)]
pub fn psf(
    geometry: &ArrayGeometry,
    source: Direction,
    signal_power: f64,
    noise_power: f64,
    beamformer: Beamformer,
    grid: &GridSpec,
    frequency_hz: f64,
    c_mps: f64,
) -> Result<(PowerMap, PsfMetrics)> {
    if !(signal_power > 0.0) {
        return invalid(format!(
            "PSF source power must be positive, got {signal_power}"
        ));
    }
    let scene = Scene::single(source, signal_power, noise_power)?;
    let r = covariance_analytic(geometry, &scene, frequency_hz, c_mps)?;
    let map = power_map(geometry, &r, beamformer, grid, frequency_hz, c_mps)?;
    let metrics = psf_metrics(&map)?;
    Ok((map, metrics))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoaPeak {
    pub direction: Direction,
    pub power: f64,
}

fn angle_between_deg(a: Direction, b: Direction) -> f64 {
    a.unit_vector()
        .dot(&b.unit_vector())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// Local maxima of the map in descending power, greedily keeping only peaks at
/// least `min_separation_deg` (great-circle angle) away from stronger ones.
///
/// A node is a local maximum when no 8-neighbor exceeds it and at least one
/// neighbor is strictly lower, so flat maps yield nothing.
pub fn doa_peaks(map: &PowerMap, max_peaks: usize, min_separation_deg: f64) -> Vec<DoaPeak> {
    let (n_az, n_el) = (map.n_az() as isize, map.n_el() as isize);
    let tie = PEAK_TIE_TOL * map.max().abs();
    let mut candidates = Vec::new();
    for j in 0..n_el {
        for i in 0..n_az {
            let here = map.get(i as usize, j as usize);
            let mut dominates = true;
            let mut strictly_above_one = false;
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (ni, nj) = (i + di, j + dj);
                    if (di, dj) == (0, 0) || ni < 0 || nj < 0 || ni >= n_az || nj >= n_el {
                        continue;
                    }
                    let other = map.get(ni as usize, nj as usize);
                    if other > here + tie {
                        dominates = false;
                    } else if other < here - tie {
                        strictly_above_one = true;
                    }
                }
            }
            if dominates && strictly_above_one {
                candidates.push((i as usize, j as usize, here));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then(map.azimuths()[a.0].total_cmp(&map.azimuths()[b.0]))
            .then(map.elevations()[a.1].total_cmp(&map.elevations()[b.1]))
    });

    let mut peaks: Vec<DoaPeak> = Vec::new();
    for (i, j, power) in candidates {
        if peaks.len() >= max_peaks {
            break;
        }
        let direction = map.direction_at(i, j);
        if peaks
            .iter()
            .all(|p| angle_between_deg(p.direction, direction) >= min_separation_deg)
        {
            peaks.push(DoaPeak { direction, power });
        }
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::PointSource;
    use nalgebra::{DMatrix, Vector3};

    const F: f64 = 40_000.0;
    const C: f64 = 343.0;

    fn dir(a: f64, e: f64) -> Direction {
        Direction::new(a, e).unwrap()
    }

    fn sensor() -> ArrayGeometry {
        ArrayGeometry::default_sensor()
    }

    fn single(source: Direction, sd: f64, sv: f64) -> CovarianceMatrix {
        covariance_analytic(&sensor(), &Scene::single(source, sd, sv).unwrap(), F, C).unwrap()
    }

    #[test]
    fn bartlett_on_dyad_and_noise() {
        let s = dir(30.0, 0.0);
        let d = steering_vector(&sensor(), s, F, C).unwrap();
        assert!((bartlett_power(&single(s, 1.0, 0.0), &d).unwrap() - 1.0).abs() < 1e-12);

        let noise = single(s, 0.0, 0.1);
        for look in [dir(0.0, 0.0), dir(-60.0, 20.0)] {
            let dl = steering_vector(&sensor(), look, F, C).unwrap();
            assert!((bartlett_power(&noise, &dl).unwrap() - 0.00625).abs() < 1e-15);
        }
        assert!((bartlett_power(&single(s, 1.0, 0.1), &d).unwrap() - 1.00625).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = steering_vector(
            &ArrayGeometry::uniform_circular(4, 0.03).unwrap(),
            Direction::BORESIGHT,
            F,
            C,
        )
        .unwrap();
        let r = CovarianceMatrix::identity(16);
        assert!(matches!(
            bartlett_power(&r, &d),
            Err(Error::InvalidArgument(_))
        ));
        assert!(mvdr_power(&r, &d, 0.0).is_err());
    }

    #[test]
    fn mvdr_in_white_noise_is_bartlett() {
        let d = steering_vector(&sensor(), dir(17.0, -33.0), F, C).unwrap();
        let w = mvdr_weights(&CovarianceMatrix::identity(16), &d, 0.0).unwrap();
        for (wi, di) in w.entries.iter().zip(d.entries.iter()) {
            assert!((wi - di / 16.0).norm() < 1e-14);
        }
    }

    #[test]
    fn mvdr_closed_form_at_source() {
        let s = dir(30.0, 0.0);
        let r = single(s, 1.0, 0.1);
        let d = steering_vector(&sensor(), s, F, C).unwrap();
        let w = mvdr_weights(&r, &d, 0.0).unwrap();
        let out = crate::linalg::hermitian_form(r.as_matrix(), &w.entries);
        assert!((out - 1.00625).abs() / 1.00625 < 1e-9);
        assert!((mvdr_power(&r, &d, 0.0).unwrap() - 1.00625).abs() / 1.00625 < 1e-9);
        assert!((w.response(&d) - Complex64::from(1.0)).norm() < 1e-9);
    }

    #[test]
    fn mvdr_zero_covariance_is_singular() {
        let r = CovarianceMatrix::from_matrix(DMatrix::zeros(16, 16)).unwrap();
        let d = steering_vector(&sensor(), Direction::BORESIGHT, F, C).unwrap();
        assert!(matches!(
            mvdr_weights(&r, &d, 0.0),
            Err(Error::SingularMatrix(_))
        ));
        assert!(matches!(
            mvdr_power(&r, &d, 0.5),
            Err(Error::SingularMatrix(_))
        ));
        assert!(mvdr_power(&single(Direction::BORESIGHT, 1.0, 0.0), &d, 0.0).is_err());
        assert!(mvdr_power(&single(Direction::BORESIGHT, 1.0, 0.0), &d, 1e-3).is_ok());
        assert!(mvdr_power(&CovarianceMatrix::identity(16), &d, -1.0).is_err());
    }

    #[test]
    fn mvdr_power_equals_loaded_output_power() {
        let r = single(dir(-20.0, 10.0), 1.0, 0.05);
        let d = steering_vector(&sensor(), dir(5.0, 5.0), F, C).unwrap();
        for loading in [0.0, 1e-3, 0.1] {
            let w = mvdr_weights(&r, &d, loading).unwrap();
            let mut rl = r.as_matrix().clone();
            let delta = loading * r.trace() / 16.0;
            for i in 0..16 {
                rl[(i, i)] += delta;
            }
            let via_weights = crate::linalg::hermitian_form(&rl, &w.entries);
            let p = mvdr_power(&r, &d, loading).unwrap();
            assert!((p - via_weights).abs() / p < 1e-9);
        }
    }

    #[test]
    fn mvdr_flat_in_white_noise() {
        let r = single(Direction::BORESIGHT, 0.0, 0.1);
        for look in [dir(0.0, 0.0), dir(45.0, -30.0), dir(-89.0, 89.0)] {
            let d = steering_vector(&sensor(), look, F, C).unwrap();
            assert!((mvdr_power(&r, &d, 0.0).unwrap() - 0.00625).abs() < 1e-15);
        }
    }

    #[test]
    fn mvdr_orthogonal_look_sees_only_noise() {
        // Two elements half a wavelength apart: the boresight and 30° azimuth
        // steering vectors are orthogonal, (1,1)·(e^{jπ/2}, e^{-jπ/2}) = 0.
        let half_wave = C / F / 2.0;
        let g = ArrayGeometry::new(vec![
            Vector3::new(half_wave, 0.0, 0.0),
            Vector3::new(-half_wave, 0.0, 0.0),
        ])
        .unwrap();
        let sv = 0.1;
        let r = covariance_analytic(
            &g,
            &Scene::single(Direction::BORESIGHT, 1.0, sv).unwrap(),
            F,
            C,
        )
        .unwrap();
        let d0 = steering_vector(&g, Direction::BORESIGHT, F, C).unwrap();
        let d30 = steering_vector(&g, dir(30.0, 0.0), F, C).unwrap();
        assert!(d0.entries.dotc(&d30.entries).norm() < 1e-12);
        let p = mvdr_power(&r, &d30, 0.0).unwrap();
        assert!(p <= sv / 2.0 * (1.0 + 1e-6), "{p}");
    }

    #[test]
    fn interference_is_nulled_by_mvdr() {
        let sv = 0.01;
        let desired = Direction::BORESIGHT;
        let jammer = dir(35.0, 10.0);
        let scene = Scene::new(
            PointSource::new(desired, 1.0).unwrap(),
            vec![PointSource::new(jammer, 100.0 * sv).unwrap()],
            sv,
        )
        .unwrap();
        let r = covariance_analytic(&sensor(), &scene, F, C).unwrap();
        let d = steering_vector(&sensor(), desired, F, C).unwrap();
        let g = steering_vector(&sensor(), jammer, F, C).unwrap();
        let w_mvdr = mvdr_weights(&r, &d, 0.0).unwrap();
        let bartlett_gain = (d.entries.dotc(&g.entries) / 16.0).norm_sqr();
        let mvdr_gain = w_mvdr.entries.dotc(&g.entries).norm_sqr();
        assert!(
            10.0 * (bartlett_gain / mvdr_gain).log10() >= 10.0,
            "bartlett {bartlett_gain:e} mvdr {mvdr_gain:e}"
        );
    }

    #[test]
    fn scale_equivariance() {
        let r = single(dir(30.0, 0.0), 1.0, 0.01);
        let grid = GridSpec {
            az_step: 5.0,
            el_step: 5.0,
            ..GridSpec::default()
        };
        for bf in [Beamformer::Bartlett, Beamformer::Mvdr { loading: 0.0 }] {
            let a = power_map(&sensor(), &r, bf, &grid, F, C).unwrap();
            let b = power_map(&sensor(), &r.scaled(7.5), bf, &grid, F, C).unwrap();
            assert_eq!(a.argmax(), b.argmax());
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((y - 7.5 * x).abs() <= 1e-9 * y.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn noise_only_map_is_flat() {
        let r = single(Direction::BORESIGHT, 0.0, 0.1);
        let grid = GridSpec {
            az_step: 10.0,
            el_step: 10.0,
            ..GridSpec::default()
        };
        for bf in [Beamformer::Bartlett, Beamformer::Mvdr { loading: 0.0 }] {
            let m = power_map(&sensor(), &r, bf, &grid, F, C).unwrap();
            let (lo, hi) = m
                .values()
                .iter()
                .fold((f64::MAX, f64::MIN), |(a, b), &p| (a.min(p), b.max(p)));
            assert!((hi - lo) / hi <= 1e-9);
            assert!(doa_peaks(&m, 3, 5.0).is_empty());
            assert!(matches!(psf_metrics(&m), Err(Error::NoPeak)));
        }
    }

    #[test]
    fn grid_validation_names_field() {
        let bad = GridSpec {
            az_step: 0.0,
            ..GridSpec::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("grid.az_step"), "{err}");
        let bad = GridSpec {
            el_min: 10.0,
            el_max: -10.0,
            ..GridSpec::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(GridSpec::default().azimuths().len(), 181);
        assert_eq!(GridSpec::default().elevations()[0], -90.0);
        assert_eq!(*GridSpec::default().elevations().last().unwrap(), 90.0);
    }

    #[test]
    fn gaussian_fwhm() {
        // FWHM of exp(-x²/2σ²) is 2·sqrt(2 ln 2)·σ ≈ 2.3548σ.
        let sigma_az = 6.0;
        let sigma_el = 3.5;
        let fwhm = |s: f64| 2.0 * (2.0 * 2f64.ln()).sqrt() * s;
        let az: Vec<f64> = (-60..=60).map(f64::from).collect();
        let el: Vec<f64> = (-40..=40).map(f64::from).collect();
        let mut p = Vec::new();
        for &e in &el {
            for &a in &az {
                p.push(
                    (-(a - 10.0).powi(2) / (2.0 * sigma_az * sigma_az)
                        - (e + 5.0).powi(2) / (2.0 * sigma_el * sigma_el))
                        .exp(),
                );
            }
        }
        let map = PowerMap::new(az, el, p).unwrap();
        let m = psf_metrics(&map).unwrap();
        assert_eq!(m.peak_direction, dir(10.0, -5.0));
        assert!((m.mainlobe_width_az_deg - fwhm(sigma_az)).abs() <= 0.5);
        assert!((m.mainlobe_width_el_deg - fwhm(sigma_el)).abs() <= 0.5);
        assert_eq!(m.peak_sidelobe_db, f64::NEG_INFINITY);
    }

    #[test]
    fn sidelobe_outside_descent_region() {
        // main lobe at az 0 with a smaller bump at az 8 after a dip
        let az: Vec<f64> = (0..=10).map(f64::from).collect();
        let el = vec![0.0, 1.0];
        let row = [1.0, 0.6, 0.3, 0.1, 0.02, 0.05, 0.1, 0.2, 0.25, 0.2, 0.1];
        let p: Vec<f64> = row.iter().chain(row.iter()).map(|v| v * 0.5).collect();
        let mut p = p;
        p[0] = 1.0; // unique peak at (0, 0)
        let map = PowerMap::new(az, el, p).unwrap();
        let m = psf_metrics(&map).unwrap();
        assert!((m.peak_sidelobe_db - 10.0 * 0.125f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn two_equal_peaks_rejected() {
        let map = PowerMap::new(vec![0.0, 1.0, 2.0], vec![0.0], vec![1.0, 0.2, 1.0]).unwrap();
        assert!(matches!(psf_metrics(&map), Err(Error::NoPeak)));
    }

    #[test]
    fn doa_tie_break_and_separation() {
        let az: Vec<f64> = (0..10).map(|i| i as f64 * 5.0).collect();
        let el = vec![0.0, 5.0, 10.0];
        let mut p = vec![0.1; 30];
        p[10 + 2] = 1.0; // (10°, 5°)
        p[10 + 7] = 1.0; // (35°, 5°)
        p[10 + 3] = 0.9;
        let map = PowerMap::new(az, el, p).unwrap();
        let peaks = doa_peaks(&map, 5, 10.0);
        assert_eq!(peaks.len(), 2);
        assert_eq!(peaks[0].direction, dir(10.0, 5.0));
        assert_eq!(peaks[1].direction, dir(35.0, 5.0));
        assert_eq!(doa_peaks(&map, 1, 10.0).len(), 1);
    }

    #[test]
    fn two_source_mvdr_scan_finds_both() {
        let scene = Scene::new(
            PointSource::new(dir(-30.0, 0.0), 1.0).unwrap(),
            vec![PointSource::new(dir(30.0, 0.0), 1.0).unwrap()],
            0.01,
        )
        .unwrap();
        let r = covariance_analytic(&sensor(), &scene, F, C).unwrap();
        let map = power_map(
            &sensor(),
            &r,
            Beamformer::Mvdr { loading: 0.0 },
            &GridSpec::default(),
            F,
            C,
        )
        .unwrap();
        let peaks = doa_peaks(&map, 2, 10.0);
        assert_eq!(peaks.len(), 2);
        let mut az: Vec<f64> = peaks.iter().map(|p| p.direction.azimuth_deg()).collect();
        az.sort_by(f64::total_cmp);
        assert!(
            (az[0] + 30.0).abs() <= 1.0 && (az[1] - 30.0).abs() <= 1.0,
            "{az:?}"
        );
        for p in &peaks {
            assert!(p.direction.elevation_deg().abs() <= 1.0);
        }
    }

    #[test]
    fn single_source_peak_is_one_dominant_doa() {
        let (map, _) = psf(
            &sensor(),
            dir(30.0, 0.0),
            1.0,
            0.01,
            Beamformer::Bartlett,
            &GridSpec::default(),
            F,
            C,
        )
        .unwrap();
        let peaks = doa_peaks(&map, 3, 10.0);
        assert_eq!(peaks[0].direction, dir(30.0, 0.0));
        assert!(peaks.iter().skip(1).all(|p| p.power < 0.5 * peaks[0].power));
    }

    #[test]
    fn psf_rejects_zero_source_power() {
        assert!(psf(
            &sensor(),
            Direction::BORESIGHT,
            0.0,
            0.1,
            Beamformer::Bartlett,
            &GridSpec::default(),
            F,
            C
        )
        .is_err());
    }

    #[test]
    fn exports() {
        let az = vec![-1.0, 0.0, 1.0];
        let el = vec![0.0, 1.0];
        let map = PowerMap::new(az, el, vec![1e-9, 1.0, 0.5, 0.0, 0.1, 0.01]).unwrap();
        let db = map.to_db();
        assert_eq!(db[0], DB_FLOOR);
        assert_eq!(db[1], 0.0);
        assert_eq!(db[3], DB_FLOOR);
        assert!((db[4] + 10.0).abs() < 1e-12);

        let mut pgm = Vec::new();
        map.write_pgm(&mut pgm).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let pixels = &pgm[header.len()..];
        // top row is elevation 1°
        assert_eq!(pixels, &[0, 223, 191, 0, 255, 245]);

        let mut csv = Vec::new();
        map.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("azimuth_deg,elevation_deg,power_linear,power_db\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
