//! Array layout and far-field narrowband steering vectors.
//!
//! Directions use an azimuth/elevation pair with boresight along +z:
//! `u = (cos φ sin θ, sin φ, cos φ cos θ)`. The array lies in the z = 0
//! plane, so (0°, 0°) is the array normal.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// Minimum distance between two distinct elements, m.
const MIN_ELEMENT_SPACING_M: f64 = 1e-6;

/// Look direction in the front hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Direction {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        let in_range = |a: f64| a.is_finite() && (-90.0..=90.0).contains(&a);
        if !in_range(azimuth_deg) || !in_range(elevation_deg) {
            return invalid(format!(
                "direction ({azimuth_deg}°, {elevation_deg}°) outside [-90, 90]²"
            ));
        }
        Ok(Self {
            azimuth_deg,
            elevation_deg,
        })
    }

    pub const BORESIGHT: Direction = Direction {
        azimuth_deg: 0.0,
        elevation_deg: 0.0,
    };

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Unit vector pointing from the array toward this direction.
    pub fn unit_vector(&self) -> Vector3<f64> {
        let (st, ct) = self.azimuth_deg.to_radians().sin_cos();
        let (sp, cp) = self.elevation_deg.to_radians().sin_cos();
        Vector3::new(cp * st, sp, cp * ct)
    }

    /// Inverse of [`Direction::unit_vector`] for vectors with z ≥ 0.
    pub fn from_unit_vector(u: &Vector3<f64>) -> Result<Self> {
        let n = u.norm();
        if !(n > 0.0) || u.z < -1e-12 {
            return invalid("unit vector must be non-zero and in the front hemisphere");
        }
        let u = u / n;
        let elevation = u.y.clamp(-1.0, 1.0).asin().to_degrees();
        let azimuth = if u.x.abs() < 1e-15 && u.z.abs() < 1e-15 {
            0.0
        } else {
            u.x.atan2(u.z.max(0.0)).to_degrees()
        };
        Self::new(azimuth, elevation)
    }
}

/// Physical element layout in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    elements: Vec<Vector3<f64>>,
    reference_point: Vector3<f64>,
}

impl ArrayGeometry {
    pub fn new(elements: Vec<Vector3<f64>>) -> Result<Self> {
        if elements.is_empty() {
            return invalid("array needs at least one element");
        }
        if elements.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return invalid("element positions must be finite");
        }
        for i in 0..elements.len() {
            for j in (i + 1)..elements.len() {
                if (elements[i] - elements[j]).norm() <= MIN_ELEMENT_SPACING_M {
                    return invalid(format!("elements {i} and {j} coincide"));
                }
            }
        }
        Ok(Self {
            elements,
            reference_point: Vector3::zeros(),
        })
    }

    /// `n_elements` microphones evenly spaced on a circle in the z = 0 plane,
    /// element 0 on the +x axis.
    pub fn uniform_circular(n_elements: usize, diameter_m: f64) -> Result<Self> {
        if n_elements == 0 {
            return invalid("element count must be at least 1");
        }
        if !(diameter_m > 0.0) || !diameter_m.is_finite() {
            return invalid(format!("diameter must be positive, got {diameter_m}"));
        }
        let radius = diameter_m / 2.0;
        let elements = (0..n_elements)
            .map(|l| {
                let (s, c) = (2.0 * PI * l as f64 / n_elements as f64).sin_cos();
                Vector3::new(radius * c, radius * s, 0.0)
            })
            .collect();
        Self::new(elements)
    }

    /// The 16-microphone, 30 mm sensor layout.
    pub fn default_sensor() -> Self {
        Self::uniform_circular(crate::DEFAULT_ELEMENTS, crate::DEFAULT_DIAMETER_M)
            .expect("default geometry is valid")
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[Vector3<f64>] {
        &self.elements
    }

    /// Emitter location; always the origin.
    pub fn reference_point(&self) -> Vector3<f64> {
        self.reference_point
    }

    /// CSV with header `x_m,y_m,z_m,index`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_m,y_m,z_m,index\n");
        for (i, p) in self.elements.iter().enumerate() {
            let _ = writeln!(out, "{:e},{:e},{:e},{}", p.x, p.y, p.z, i);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty geometry CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let find = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::Format(format!("geometry CSV header lacks column {name}")))
        };
        let (ix, iy, iz, ii) = (find("x_m")?, find("y_m")?, find("z_m")?, find("index")?);

        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |k: usize| -> Result<&str> {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::Format(format!("row {}: missing field", n + 1)))
            };
            let num = |k: usize| -> Result<f64> {
                get(k)?
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad number", n + 1)))
            };
            let index: usize = get(ii)?
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad index", n + 1)))?;
            rows.push((index, Vector3::new(num(ix)?, num(iy)?, num(iz)?)));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.iter().enumerate().any(|(k, (i, _))| k != *i) {
            return Err(Error::Format(
                "geometry CSV indices must be 0..L-1 without gaps".into(),
            ));
        }
        Self::new(rows.into_iter().map(|(_, p)| p).collect())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// SHA-256 of the CSV form, hex encoded. Used to tag captures.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

/// Unit-modulus array response to a plane wave.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: DVector<Complex64>,
    pub frequency_hz: f64,
    pub direction: Direction,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn check_wave_params(frequency_hz: f64, c_mps: f64) -> Result<()> {
    if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
        return invalid(format!("frequency must be positive, got {frequency_hz}"));
    }
    if !(c_mps > 0.0) || !c_mps.is_finite() {
        return invalid(format!("speed of sound must be positive, got {c_mps}"));
    }
    Ok(())
}

/// Far-field steering vector, entry `l = exp(+j 2π f (p_l · u) / c)`.
///
/// The phase advances for elements closer to the source; snapshot synthesis
/// and demodulation use the same sign.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    direction: Direction,
    frequency_hz: f64,
    c_mps: f64,
) -> Result<SteeringVector> {
    check_wave_params(frequency_hz, c_mps)?;
    let u = direction.unit_vector();
    let k = 2.0 * PI * frequency_hz / c_mps;
    let entries = DVector::from_iterator(
        geometry.len(),
        geometry
            .elements()
            .iter()
            .map(|p| Complex64::from_polar(1.0, k * (p - geometry.reference_point()).dot(&u))),
    );
    Ok(SteeringVector {
        entries,
        frequency_hz,
        direction,
    })
}
