//! Append-only dataset shard files.
//!
//! Layout:
//!
//! ```text
//! manifest JSON line + '\n'          {"format":"shard-v1","n":..,"m":..,"slice_size":..,"dtype":"f32le"}
//! record*                            appended open-ended; reader streams to EOF
//! ```
//!
//! Each record:
//!
//! ```text
//! u32 LE   meta_len
//! bytes    meta JSON {"subject_id","speed_class","age_label","order":[n+m ints]}
//! f32 LE   n * slice_size^2          slices, row-major per timestep
//! f32 LE   (n+m) * 4                 targets (vx, vy, vz, z) per timestep
//! u8       ceil(n/8)                 mask bitmask, LSB-first
//! ```
//!
//! Targets are stored in f32; re-reading and re-writing a shard is
//! byte-identical.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid3d::{Pose, RotationVector};
use crate::sampler::SliceSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format: String,
    pub n: usize,
    pub m: usize,
    pub slice_size: usize,
    pub dtype: String,
}

impl ShardManifest {
    pub fn new(n: usize, m: usize, slice_size: usize) -> Self {
        ShardManifest {
            format: "shard-v1".into(),
            n,
            m,
            slice_size,
            dtype: "f32le".into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    subject_id: String,
    speed_class: u32,
    age_label: f64,
    order: Vec<usize>,
}

pub struct ShardWriter {
    file: BufWriter<File>,
    manifest: ShardManifest,
}

impl ShardWriter {
    /// Create a new shard with the given geometry.
    pub fn create(path: &Path, manifest: ShardManifest) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut file, &manifest)?;
        file.write_all(b"\n")?;
        Ok(ShardWriter { file, manifest })
    }

    /// Reopen an existing shard for appending; geometry must match.
    pub fn append_to(path: &Path) -> Result<Self> {
        let manifest = ShardReader::open(path)?.manifest().clone();
        let file = BufWriter::new(OpenOptions::new().append(true).open(path)?);
        Ok(ShardWriter { file, manifest })
    }

    pub fn push(&mut self, seq: &SliceSequence) -> Result<()> {
        let (n, m, sz) = (self.manifest.n, self.manifest.m, self.manifest.slice_size);
        if seq.n() != n || seq.m() != m || seq.slice_size() != sz {
            return Err(Error::invalid(format!(
                "sequence geometry ({}, {}, {}) does not match shard ({n}, {m}, {sz})",
                seq.n(),
                seq.m(),
                seq.slice_size()
            )));
        }
        let meta = RecordMeta {
            subject_id: seq.subject_id.clone(),
            speed_class: seq.speed_class,
            age_label: seq.age_label,
            order: seq.acquisition_order.clone(),
        };
        let meta_bytes = serde_json::to_vec(&meta)?;
        self.file
            .write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
        self.file.write_all(&meta_bytes)?;
        let mut buf = Vec::with_capacity(n * sz * sz * 4);
        for s in &seq.slices {
            for &px in s.iter() {
                buf.extend_from_slice(&px.to_le_bytes());
            }
        }
        self.file.write_all(&buf)?;
        buf.clear();
        for t in &seq.targets {
            for v in [t.rotation.vx, t.rotation.vy, t.rotation.vz, t.z] {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        self.file.write_all(&buf)?;
        let mut mask = vec![0u8; n.div_ceil(8)];
        for (i, &f) in seq.mask_flags.iter().enumerate() {
            if f {
                mask[i / 8] |= 1 << (i % 8);
            }
        }
        self.file.write_all(&mask)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub struct ShardReader {
    reader: BufReader<File>,
    manifest: ShardManifest,
    path: String,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self> {
        let pathstr = path.display().to_string();
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            match reader.read(&mut byte)? {
                0 => return Err(Error::corrupt(&pathstr, "missing manifest line")),
                _ => {
                    if byte[0] == b'\n' {
                        break;
                    }
                    line.push(byte[0]);
                }
            }
        }
        let manifest: ShardManifest = serde_json::from_slice(&line)
            .map_err(|e| Error::corrupt(&pathstr, format!("bad manifest: {e}")))?;
        if manifest.format != "shard-v1" || manifest.dtype != "f32le" {
            return Err(Error::corrupt(
                &pathstr,
                format!("unsupported shard format {}/{}", manifest.format, manifest.dtype),
            ));
        }
        Ok(ShardReader {
            reader,
            manifest,
            path: pathstr,
        })
    }

    pub fn manifest(&self) -> &ShardManifest {
        &self.manifest
    }

    /// Read the next record; `Ok(None)` at a clean EOF.
    pub fn next_record(&mut self) -> Result<Option<SliceSequence>> {
        let mut len_bytes = [0u8; 4];
        match self.reader.read(&mut len_bytes)? {
            0 => return Ok(None),
            4 => {}
            k => {
                // Tolerate a partial read boundary before declaring corruption.
                self.reader.read_exact(&mut len_bytes[k..]).map_err(|_| {
                    Error::corrupt(&self.path, "truncated record header")
                })?;
            }
        }
        let meta_len = u32::from_le_bytes(len_bytes) as usize;
        if meta_len > 1 << 20 {
            return Err(Error::corrupt(
                &self.path,
                format!("implausible record meta length {meta_len}"),
            ));
        }
        let mut meta_bytes = vec![0u8; meta_len];
        self.read_payload(&mut meta_bytes)?;
        let meta: RecordMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::corrupt(&self.path, format!("bad record meta: {e}")))?;

        let (n, m, sz) = (self.manifest.n, self.manifest.m, self.manifest.slice_size);
        if meta.order.len() != n + m {
            return Err(Error::corrupt(
                &self.path,
                format!("order has {} entries, want {}", meta.order.len(), n + m),
            ));
        }
        let mut buf = vec![0u8; n * sz * sz * 4];
        self.read_payload(&mut buf)?;
        let mut slices = Vec::with_capacity(n);
        for t in 0..n {
            let mut data = Vec::with_capacity(sz * sz);
            for i in 0..sz * sz {
                let o = (t * sz * sz + i) * 4;
                data.push(f32::from_le_bytes([
                    buf[o],
                    buf[o + 1],
                    buf[o + 2],
                    buf[o + 3],
                ]));
            }
            slices.push(Array2::from_shape_vec((sz, sz), data).expect("shape"));
        }
        let mut tbuf = vec![0u8; (n + m) * 4 * 4];
        self.read_payload(&mut tbuf)?;
        let mut targets = Vec::with_capacity(n + m);
        for t in 0..n + m {
            let mut vals = [0.0f32; 4];
            for (i, v) in vals.iter_mut().enumerate() {
                let o = (t * 4 + i) * 4;
                *v = f32::from_le_bytes([tbuf[o], tbuf[o + 1], tbuf[o + 2], tbuf[o + 3]]);
            }
            targets.push(Pose::new(
                RotationVector::new(vals[0] as f64, vals[1] as f64, vals[2] as f64),
                vals[3] as f64,
            ));
        }
        let mut mask_bytes = vec![0u8; n.div_ceil(8)];
        self.read_payload(&mut mask_bytes)?;
        let mask_flags = (0..n)
            .map(|i| mask_bytes[i / 8] & (1 << (i % 8)) != 0)
            .collect();

        Ok(Some(SliceSequence {
            slices,
            mask_flags,
            acquisition_order: meta.order,
            targets,
            subject_id: meta.subject_id,
            speed_class: meta.speed_class,
            age_label: meta.age_label,
        }))
    }

    fn read_payload(&mut self, buf: &mut [u8]) -> Result<()> {
        self.reader
            .read_exact(buf)
            .map_err(|_| Error::corrupt(&self.path, "truncated record payload"))
    }

    pub fn read_all(mut self) -> Result<Vec<SliceSequence>> {
        let mut out = Vec::new();
        while let Some(seq) = self.next_record()? {
            out.push(seq);
        }
        Ok(out)
    }
}

/// Convenience: read every sequence of a shard.
pub fn load_shard(path: &Path) -> Result<(ShardManifest, Vec<SliceSequence>)> {
    let reader = ShardReader::open(path)?;
    let manifest = reader.manifest().clone();
    let seqs = reader.read_all()?;
    Ok((manifest, seqs))
}
