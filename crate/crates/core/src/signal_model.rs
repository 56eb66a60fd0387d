//! Narrowband received-signal model.
//!
//! A [`Scene`] holds one desired source, `K` uncorrelated interferers and
//! spatially white sensor noise. From it we build the analytic covariance
//!
//! ```text
//! R_y = σ_d² d dᴴ + G Λ Gᴴ + σ_v² I
//! ```
//!
//! or draw complex-envelope snapshots `y[n] = d s[n] + G s_I[n] + v[n]`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, Direction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSource {
    pub direction: Direction,
    power: f64,
}

impl PointSource {
    pub fn new(direction: Direction, power: f64) -> Result<Self> {
        if !(power >= 0.0) || !power.is_finite() {
            return invalid(format!("source power must be non-negative, got {power}"));
        }
        Ok(Self { direction, power })
    }

    pub fn power(&self) -> f64 {
        self.power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub desired: PointSource,
    pub interferers: Vec<PointSource>,
    noise_power: f64,
}

impl Scene {
    pub fn new(
        desired: PointSource,
        interferers: Vec<PointSource>,
        noise_power: f64,
    ) -> Result<Self> {
        if !(noise_power >= 0.0) || !noise_power.is_finite() {
            return invalid(format!(
                "noise power must be non-negative, got {noise_power}"
            ));
        }
        Ok(Self {
            desired,
            interferers,
            noise_power,
        })
    }

    /// One source plus white noise.
    pub fn single(direction: Direction, power: f64, noise_power: f64) -> Result<Self> {
        Self::new(PointSource::new(direction, power)?, Vec::new(), noise_power)
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }
}

/// Hermitian L×L spatial covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<Complex64>,
}

/// Hermitian symmetry tolerance, max-norm.
const HERMITIAN_TOL: f64 = 1e-12;

impl CovarianceMatrix {
    /// Wraps a square matrix, rejecting it when `‖R − Rᴴ‖_max > 1e-12`.
    pub fn from_matrix(entries: DMatrix<Complex64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return invalid("covariance must be a non-empty square matrix");
        }
        let asym = crate::linalg::max_abs_diff(&entries, &entries.adjoint());
        if asym > HERMITIAN_TOL {
            return invalid(format!(
                "covariance is not Hermitian (asymmetry {asym:.3e})"
            ));
        }
        Ok(Self { entries })
    }

    pub fn identity(l: usize) -> Self {
        Self {
            entries: DMatrix::identity(l, l),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            entries: self.entries.map(|z| z * alpha),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Smallest eigenvalue ≥ −1e-9 · trace / L.
    pub fn is_positive_semidefinite(&self) -> bool {
        let floor = -1e-9 * self.trace().abs() / self.dim() as f64;
        self.eigenvalues().first().is_some_and(|&min| min >= floor)
    }
}

/// L×N block of complex-envelope snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBlock {
    samples: DMatrix<Complex64>,
    sample_rate_hz: f64,
}

impl SnapshotBlock {
    pub fn new(samples: DMatrix<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return invalid("snapshot block needs at least one element and one snapshot");
        }
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return invalid(format!(
                "snapshot rate must be positive, got {sample_rate_hz}"
            ));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &DMatrix<Complex64> {
        &self.samples
    }

    pub fn n_elements(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

fn steering_matrix(
    geometry: &ArrayGeometry,
    sources: &[PointSource],
    frequency_hz: f64,
    c_mps: f64,
) -> Result<DMatrix<Complex64>> {
    let columns = sources
        .iter()
        .map(|s| steering_vector(geometry, s.direction, frequency_hz, c_mps).map(|v| v.entries))
        .collect::<Result<Vec<_>>>()?;
    Ok(if columns.is_empty() {
        DMatrix::zeros(geometry.len(), 0)
    } else {
        DMatrix::from_columns(&columns)
    })
}

/// `R_y = σ_d² d dᴴ + G Λ Gᴴ + σ_v² I`.
pub fn covariance_analytic(
    geometry: &ArrayGeometry,
    scene: &Scene,
    frequency_hz: f64,
    c_mps: f64,
) -> Result<CovarianceMatrix> {
    let l = geometry.len();
    let d = steering_vector(geometry, scene.desired.direction, frequency_hz, c_mps)?.entries;
    let mut r = &d * d.adjoint() * Complex64::from(scene.desired.power());
    for src in &scene.interferers {
        let g = steering_vector(geometry, src.direction, frequency_hz, c_mps)?.entries;
        r += &g * g.adjoint() * Complex64::from(src.power());
    }
    for i in 0..l {
        r[(i, i)] += scene.noise_power;
    }
    // Remove rounding asymmetry so the Hermitian invariant holds exactly.
    let r = (&r + r.adjoint()) * Complex64::from(0.5);
    Ok(CovarianceMatrix { entries: r })
}

/// `B = G Λ^{1/2}` (L×K; L×0 when there are no interferers).
pub fn interference_root(
    scene: &Scene,
    geometry: &ArrayGeometry,
    frequency_hz: f64,
    c_mps: f64,
) -> Result<DMatrix<Complex64>> {
    let mut b = steering_matrix(geometry, &scene.interferers, frequency_hz, c_mps)?;
    for (k, src) in scene.interferers.iter().enumerate() {
        b.column_mut(k).scale_mut(src.power().sqrt());
    }
    Ok(b)
}

fn circular_gaussian(rng: &mut ChaCha8Rng, power: f64) -> Complex64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws `n_snapshots` realizations of the scene. Reproducible per seed.
pub fn synthesize_snapshots(
    geometry: &ArrayGeometry,
    scene: &Scene,
    frequency_hz: f64,
    c_mps: f64,
    n_snapshots: usize,
    rng_seed: u64,
) -> Result<SnapshotBlock> {
    if n_snapshots == 0 {
        return invalid("need at least one snapshot");
    }
    let l = geometry.len();
    let d = steering_vector(geometry, scene.desired.direction, frequency_hz, c_mps)?.entries;
    let g = steering_matrix(geometry, &scene.interferers, frequency_hz, c_mps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut y = DMatrix::<Complex64>::zeros(l, n_snapshots);
    let mut s_i = DVector::<Complex64>::zeros(scene.interferers.len());
    for n in 0..n_snapshots {
        let s = circular_gaussian(&mut rng, scene.desired.power());
        for (k, src) in scene.interferers.iter().enumerate() {
            s_i[k] = circular_gaussian(&mut rng, src.power());
        }
        let mut col = &d * s + &g * &s_i;
        for v in col.iter_mut() {
            *v += circular_gaussian(&mut rng, scene.noise_power);
        }
        y.set_column(n, &col);
    }
    SnapshotBlock::new(y, crate::PCM_RATE_HZ)
}

/// `R̂ = Y Yᴴ / N`.
pub fn sample_covariance(block: &SnapshotBlock) -> CovarianceMatrix {
    let y = block.samples();
    let r = y * y.adjoint() * Complex64::from(1.0 / block.n_snapshots() as f64);
    let r = (&r + r.adjoint()) * Complex64::from(0.5);
    CovarianceMatrix { entries: r }
}

// --- scene description file -------------------------------------------------

/// A scene together with the carrier it is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFile {
    pub scene: Scene,
    pub frequency_hz: f64,
    pub c_mps: f64,
}

impl SceneFile {
    /// Parses the key-value scene format:
    ///
    /// ```text
    /// frequency_hz = 40000
    /// c_mps = 343
    /// noise_power = 0.01
    /// [desired]
    /// azimuth_deg = 0
    /// elevation_deg = 0
    /// power = 1
    /// [interferer]
    /// azimuth_deg = 30
    /// elevation_deg = 0
    /// power = 4
    /// ```
    ///
    /// `[interferer]` may repeat. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        #[derive(Default)]
        struct Block {
            az: Option<f64>,
            el: Option<f64>,
            power: Option<f64>,
        }
        impl Block {
            fn finish(self, what: &str) -> Result<PointSource> {
                let need = |v: Option<f64>, k: &str| {
                    v.ok_or_else(|| Error::Format(format!("{what} block lacks {k}")))
                };
                PointSource::new(
                    Direction::new(
                        need(self.az, "azimuth_deg")?,
                        need(self.el, "elevation_deg")?,
                    )?,
                    need(self.power, "power")?,
                )
            }
        }

        let mut frequency_hz = crate::CARRIER_HZ;
        let mut c_mps = crate::SPEED_OF_SOUND;
        let mut noise_power = 0.0;
        let mut desired: Option<Block> = None;
        let mut interferers: Vec<Block> = Vec::new();
        enum Section {
            Top,
            Desired,
            Interferer,
        }
        let mut section = Section::Top;

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "desired" => {
                        if desired.is_some() {
                            return Err(Error::Format(format!(
                                "line {}: duplicate [desired]",
                                n + 1
                            )));
                        }
                        desired = Some(Block::default());
                        Section::Desired
                    }
                    "interferer" => {
                        interferers.push(Block::default());
                        Section::Interferer
                    }
                    other => {
                        return Err(Error::Format(format!(
                            "line {}: unknown section [{other}]",
                            n + 1
                        )))
                    }
                };
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: {key} is not a number", n + 1)))?;
            let block = match section {
                Section::Top => {
                    match key {
                        "frequency_hz" => frequency_hz = value,
                        "c_mps" => c_mps = value,
                        "noise_power" => noise_power = value,
                        _ => {
                            return Err(Error::Format(format!("line {}: unknown key {key}", n + 1)))
                        }
                    }
                    continue;
                }
                Section::Desired => desired.as_mut().expect("section opened"),
                Section::Interferer => interferers.last_mut().expect("section opened"),
            };
            match key {
                "azimuth_deg" => block.az = Some(value),
                "elevation_deg" => block.el = Some(value),
                "power" => block.power = Some(value),
                _ => return Err(Error::Format(format!("line {}: unknown key {key}", n + 1))),
            }
        }

        crate::geometry::check_wave_params(frequency_hz, c_mps)?;
        let desired = desired
            .ok_or_else(|| Error::Format("scene has no [desired] block".into()))?
            .finish("desired")?;
        let interferers = interferers
            .into_iter()
            .map(|b| b.finish("interferer"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scene: Scene::new(desired, interferers, noise_power)?,
            frequency_hz,
            c_mps,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "frequency_hz = {}\nc_mps = {}\nnoise_power = {}\n",
            self.frequency_hz,
            self.c_mps,
            self.scene.noise_power()
        );
        let mut block = |name: &str, s: &PointSource| {
            out.push_str(&format!(
                "[{name}]\nazimuth_deg = {}\nelevation_deg = {}\npower = {}\n",
                s.direction.azimuth_deg(),
                s.direction.elevation_deg(),
                s.power()
            ));
        };
        block("desired", &self.scene.desired);
        for s in &self.scene.interferers {
            block("interferer", s);
        }
        out
    }
}

// --- snapshot binary file ---------------------------------------------------

const SNAP_MAGIC: &[u8; 4] = b"SNAP";
const SNAP_VERSION: u16 = 1;

impl SnapshotBlock {
    /// 32-byte header (`SNAP`, version u16, reserved u16, L u32, N u64,
    /// sample rate f64, reserved u32) then snapshot-major `(re, im)` f64 pairs,
    /// all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(SNAP_MAGIC);
        header.extend_from_slice(&SNAP_VERSION.to_le_bytes());
        header.extend_from_slice(&0u16.to_le_bytes());
        header.extend_from_slice(&(self.n_elements() as u32).to_le_bytes());
        header.extend_from_slice(&(self.n_snapshots() as u64).to_le_bytes());
        header.extend_from_slice(&self.sample_rate_hz.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        debug_assert_eq!(header.len(), 32);
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(16 * self.samples.len());
        for z in self.samples.iter() {
            // nalgebra storage is column-major, i.e. snapshot-major here
            body.extend_from_slice(&z.re.to_le_bytes());
            body.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)?;
        if &header[0..4] != SNAP_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != SNAP_VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let l = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let rate = f64::from_le_bytes(header[20..28].try_into().unwrap());
        let count = l
            .checked_mul(n)
            .filter(|c| *c <= (1 << 30))
            .ok_or_else(|| Error::Format("snapshot dimensions too large".into()))?;
        let mut body = vec![0u8; count * 16];
        r.read_exact(&mut body)?;
        let values = body.chunks_exact(16).map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        });
        Self::new(DMatrix::from_iterator(l, n, values), rate)
    }
}
