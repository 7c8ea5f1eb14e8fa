//! Synthetic 3D volumes standing in for reconstructed anatomy.
//!
//! A phantom is a superposition of smooth ellipsoidal blobs under an
//! anisotropic envelope, plus one off-center sharp-edged wedge, so that no
//! nontrivial rotation maps the volume onto itself (pose is observable from
//! slices). Volumes carry an age label used only for grouping reports.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid3d::{rotvec_to_matrix, RotationVector};
use crate::rng::rng_from_seed;

/// Smallest supported volume edge length.
pub const MIN_VOLUME_DIM: usize = 32;

/// Isotropic 3D scalar grid. Data is indexed `[z][y][x]` (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    pub spacing_mm: f64,
    pub subject_id: String,
    /// Scalar grouping tag for reports (gestational-age stand-in).
    pub age_label: f64,
}

impl Volume {
    /// Edge length D (volumes are cubic).
    pub fn dim(&self) -> usize {
        self.data.shape()[0]
    }

    /// Geometric center in voxel coordinates.
    pub fn center(&self) -> Vector3<f64> {
        let c = (self.dim() as f64 - 1.0) / 2.0;
        Vector3::new(c, c, c)
    }

    /// Trilinear sample at a continuous voxel coordinate; zero outside
    /// support.
    pub fn sample_trilinear(&self, x: f64, y: f64, z: f64) -> f32 {
        let d = self.dim() as isize;
        let (x0, y0, z0) = (x.floor(), y.floor(), z.floor());
        let (fx, fy, fz) = (x - x0, y - y0, z - z0);
        let (ix, iy, iz) = (x0 as isize, y0 as isize, z0 as isize);
        let mut acc = 0.0f64;
        for dz in 0..2isize {
            for dy in 0..2isize {
                for dx in 0..2isize {
                    let (px, py, pz) = (ix + dx, iy + dy, iz + dz);
                    if px < 0 || py < 0 || pz < 0 || px >= d || py >= d || pz >= d {
                        continue;
                    }
                    let w = (if dx == 0 { 1.0 - fx } else { fx })
                        * (if dy == 0 { 1.0 - fy } else { fy })
                        * (if dz == 0 { 1.0 - fz } else { fz });
                    acc += w * self.data[(pz as usize, py as usize, px as usize)] as f64;
                }
            }
        }
        acc as f32
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhantomParams {
    pub min_blobs: usize,
    pub max_blobs: usize,
    /// Blob centers are drawn within this fraction of D from the center.
    pub center_spread: f64,
    /// Blob semi-axis range as a fraction of D.
    pub blob_sigma: (f64, f64),
    /// Random cosine-field components multiplying the blob field; this
    /// volumetric texture is what makes orientation observable from a
    /// single slice.
    pub texture_components: usize,
    pub texture_amp: f64,
    /// Spatial frequency band in radians per voxel (wavelengths stay well
    /// above the interpolation scale).
    pub texture_freq: (f64, f64),
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            min_blobs: 5,
            max_blobs: 10,
            center_spread: 0.22,
            blob_sigma: (0.05, 0.14),
            texture_components: 24,
            texture_amp: 0.6,
            texture_freq: (0.3, 1.0),
        }
    }
}

struct Blob {
    center: Vector3<f64>,
    // Rows of the inverse-scaled rotated frame: q = sum ((r_i . (p-c)) / s_i)^2
    frame: Matrix3<f64>,
    inv_sigma: Vector3<f64>,
    weight: f64,
}

impl Blob {
    fn eval(&self, p: &Vector3<f64>) -> f64 {
        let d = self.frame * (p - self.center);
        let q = (d.x * self.inv_sigma.x).powi(2)
            + (d.y * self.inv_sigma.y).powi(2)
            + (d.z * self.inv_sigma.z).powi(2);
        self.weight * (-0.5 * q).exp()
    }
}

/// Generate a deterministic phantom volume of edge length `d`.
pub fn generate_phantom(seed: u64, d: usize, params: &PhantomParams) -> Result<Volume> {
    if d < MIN_VOLUME_DIM {
        return Err(Error::invalid(format!(
            "volume dimension {d} below the minimum {MIN_VOLUME_DIM}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let df = d as f64;
    let center = Vector3::new((df - 1.0) / 2.0, (df - 1.0) / 2.0, (df - 1.0) / 2.0);

    let random_rotation = |rng: &mut crate::rng::SeedRng| {
        let v = RotationVector::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        *rotvec_to_matrix(&v).expect("finite").matrix()
    };

    let n_blobs = rng.random_range(params.min_blobs..=params.max_blobs);
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let offset = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * (params.center_spread * df);
        let (lo, hi) = params.blob_sigma;
        let sigma = Vector3::new(
            rng.random_range(lo..hi) * df,
            rng.random_range(lo..hi) * df,
            rng.random_range(lo..hi) * df,
        );
        blobs.push(Blob {
            center: center + offset,
            frame: random_rotation(&mut rng),
            inv_sigma: sigma.map(|s| 1.0 / s),
            weight: rng.random_range(0.5..1.5),
        });
    }

    // Anisotropic envelope: gross shape distinguishable under 90-degree
    // rotations even if the blob cloud happens to look balanced.
    let envelope = Blob {
        center,
        frame: random_rotation(&mut rng),
        inv_sigma: Vector3::new(1.0 / (0.40 * df), 1.0 / (0.30 * df), 1.0 / (0.22 * df)),
        weight: 1.0,
    };

    // Off-center wedge: sharp half-space cut with an intensity ramp across
    // it; kills residual symmetry.
    let wedge_dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    let ramp_dir = wedge_dir
        .cross(&Vector3::new(0.1, 0.7, -0.3).normalize())
        .normalize();
    let wedge = Blob {
        center: center
            + Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * (0.25 * df),
        frame: random_rotation(&mut rng),
        inv_sigma: Vector3::new(1.0 / (0.18 * df), 1.0 / (0.14 * df), 1.0 / (0.10 * df)),
        weight: rng.random_range(1.0..2.0),
    };

    // Volumetric texture: sum of random plane-wave cosines.
    let mut waves = Vec::with_capacity(params.texture_components);
    for _ in 0..params.texture_components {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0f64),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = if dir.norm() < 1e-6 { Vector3::x() } else { dir.normalize() };
        let freq = rng.random_range(params.texture_freq.0..params.texture_freq.1);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.5..1.0);
        waves.push((dir * freq, phase, amp));
    }
    let wave_norm = waves.iter().map(|w| w.2).sum::<f64>().max(1.0);

    let age_label = rng.random_range(21.0..37.0f64).round();

    let mut data = Array3::<f32>::zeros((d, d, d));
    for z in 0..d {
        for y in 0..d {
            for x in 0..d {
                let p = Vector3::new(x as f64, y as f64, z as f64);
                let mut v: f64 = blobs.iter().map(|b| b.eval(&p)).sum();
                let rel = p - wedge.center;
                if rel.dot(&wedge_dir) > 0.0 {
                    v += wedge.eval(&p) * (1.0 + rel.dot(&ramp_dir) / df);
                }
                if !waves.is_empty() {
                    let t: f64 = waves
                        .iter()
                        .map(|(k, phase, amp)| amp * (k.dot(&p) + phase).cos())
                        .sum::<f64>()
                        / wave_norm;
                    v *= 1.0 + params.texture_amp * t;
                }
                v *= envelope.eval(&p);
                data[(z, y, x)] = v as f32;
            }
        }
    }

    Ok(Volume {
        data,
        spacing_mm: 1.0,
        subject_id: format!("phantom-{seed:08x}"),
        age_label,
    })
}

/// Affine intensity map to zero mean, unit variance over all voxels.
pub fn normalize(v: &Volume) -> Result<Volume> {
    let n = v.data.len() as f64;
    let mean = v.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .data
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    if var < 1e-20 {
        return Err(Error::DegenerateInput(
            "constant volume cannot be normalized".into(),
        ));
    }
    let std = var.sqrt();
    let data = v.data.mapv(|x| ((x as f64 - mean) / std) as f32);
    Ok(Volume {
        data,
        spacing_mm: v.spacing_mm,
        subject_id: v.subject_id.clone(),
        age_label: v.age_label,
    })
}

/// Normalized cross-correlation between two same-shape volumes, in [-1, 1].
pub fn ncc(a: &Volume, b: &Volume) -> f64 {
    assert_eq!(a.data.shape(), b.data.shape());
    let n = a.data.len() as f64;
    let ma = a.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mb = b.data.iter().map(|&x| x as f64).sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data.iter().zip(b.data.iter()) {
        let dx = x as f64 - ma;
        let dy = y as f64 - mb;
        num += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    num / (va.sqrt() * vb.sqrt())
}

#[derive(Serialize, Deserialize)]
struct VolumeHeader {
    d: usize,
    spacing_mm: f64,
    subject_id: String,
    age_label: f64,
    dtype: String,
}

/// File layout: one JSON header line, a NUL byte, then `d^3` little-endian
/// f32 values in x-fastest order.
pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    let header = VolumeHeader {
        d: v.dim(),
        spacing_mm: v.spacing_mm,
        subject_id: v.subject_id.clone(),
        age_label: v.age_label,
        dtype: "f32le".into(),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(&[0u8])?;
    let slice = v.data.as_slice().expect("contiguous");
    let mut buf = Vec::with_capacity(slice.len() * 4);
    for &x in slice {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let pathstr = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nul = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::corrupt(&pathstr, "missing header terminator"))?;
    let header: VolumeHeader = serde_json::from_slice(&bytes[..nul])
        .map_err(|e| Error::corrupt(&pathstr, format!("bad header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(Error::corrupt(
            &pathstr,
            format!("unsupported dtype {}", header.dtype),
        ));
    }
    if header.d < MIN_VOLUME_DIM {
        return Err(Error::corrupt(
            &pathstr,
            format!("dimension {} below minimum", header.d),
        ));
    }
    let payload = &bytes[nul + 1..];
    let expected = header.d * header.d * header.d * 4;
    if payload.len() != expected {
        return Err(Error::corrupt(
            &pathstr,
            format!(
                "payload is {} bytes, header declares {expected}",
                payload.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(expected / 4);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    let data = Array3::from_shape_vec((header.d, header.d, header.d), data)
        .expect("shape checked above");
    Ok(Volume {
        data,
        spacing_mm: header.spacing_mm,
        subject_id: header.subject_id,
        age_label: header.age_label,
    })
}
