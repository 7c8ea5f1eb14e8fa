//! Self-describing checkpoint files.
//!
//! Layout: one JSON header terminated by NUL, then the f32 little-endian
//! payloads of every listed entry in order. The header carries the model
//! kind and config (enough to rebuild the object), training metadata, and
//! a name + shape for every parameter and state array. Round trips are
//! bit-exact.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, TrackerModel};
use super::params::ParamSet;
use super::pose_lstm::{PoseLstm, PoseLstmConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
    pub note: String,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    kind: String, // "param" | "state"
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    config: serde_json::Value,
    meta: CheckpointMeta,
    entries: Vec<Entry>,
}

fn collect_entries<P: ParamSet<f32>>(p: &P) -> (Vec<Entry>, Vec<f32>) {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let mut push = |name: &str, v: ArrayViewD<'_, f32>, kind: &str| {
        entries.push(Entry {
            name: name.to_string(),
            shape: v.shape().to_vec(),
            kind: kind.to_string(),
        });
        payload.extend(v.iter().copied());
    };
    p.visit(&mut |n, v| push(n, v, "param"));
    p.visit_state(&mut |n, v| push(n, v, "state"));
    (entries, payload)
}

fn write_file(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    meta: &CheckpointMeta,
    entries: Vec<Entry>,
    payload: &[f32],
) -> Result<()> {
    let header = Header {
        format: "ckpt-v1".into(),
        kind: kind.into(),
        config,
        meta: meta.clone(),
        entries,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(&[0])?;
    let mut buf = Vec::with_capacity(payload.len() * 4);
    for &x in payload {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    f.write_all(&buf)?;
    Ok(())
}

fn read_file(path: &Path, want_kind: &str) -> Result<(Header, HashMap<String, Vec<f32>>)> {
    let pathstr = path.display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nul = bytes
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::corrupt(&pathstr, "missing header terminator"))?;
    let header: Header = serde_json::from_slice(&bytes[..nul])
        .map_err(|e| Error::corrupt(&pathstr, format!("bad header: {e}")))?;
    if header.format != "ckpt-v1" {
        return Err(Error::corrupt(
            &pathstr,
            format!("unsupported checkpoint format {}", header.format),
        ));
    }
    if header.kind != want_kind {
        return Err(Error::corrupt(
            &pathstr,
            format!("checkpoint holds a {} model, expected {want_kind}", header.kind),
        ));
    }
    let payload = &bytes[nul + 1..];
    let total: usize = header
        .entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 4 {
        return Err(Error::corrupt(
            &pathstr,
            format!("payload {} bytes, header declares {}", payload.len(), total * 4),
        ));
    }
    let mut map = HashMap::new();
    let mut off = 0usize;
    for e in &header.entries {
        let len: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for k in 0..len {
            let o = (off + k) * 4;
            data.push(f32::from_le_bytes([
                payload[o],
                payload[o + 1],
                payload[o + 2],
                payload[o + 3],
            ]));
        }
        off += len;
        map.insert(e.name.clone(), data);
    }
    Ok((header, map))
}

fn fill_from_map<P: ParamSet<f32>>(
    p: &mut P,
    map: &mut HashMap<String, Vec<f32>>,
    pathstr: &str,
) -> Result<()> {
    let mut err: Option<Error> = None;
    let mut fill = |name: &str, mut v: ArrayViewMutD<'_, f32>| {
        if err.is_some() {
            return;
        }
        match map.remove(name) {
            None => err = Some(Error::corrupt(pathstr, format!("missing entry {name}"))),
            Some(data) => {
                if data.len() != v.len() {
                    err = Some(Error::corrupt(
                        pathstr,
                        format!("entry {name} has {} values, want {}", data.len(), v.len()),
                    ));
                    return;
                }
                for (dst, src) in v.iter_mut().zip(data) {
                    *dst = src;
                }
            }
        }
    };
    p.visit_mut(&mut fill);
    p.visit_state_mut(&mut fill);
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = map.keys().next() {
        return Err(Error::corrupt(pathstr, format!("unexpected entry {name}")));
    }
    Ok(())
}

pub fn save_tracker(path: &Path, model: &TrackerModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    let (entries, payload) = collect_entries(model);
    write_file(
        path,
        "tracker",
        serde_json::to_value(&model.cfg)?,
        meta,
        entries,
        &payload,
    )
}

pub fn load_tracker(path: &Path) -> Result<(TrackerModel<f32>, CheckpointMeta)> {
    let (header, mut map) = read_file(path, "tracker")?;
    let cfg: ModelConfig = serde_json::from_value(header.config)
        .map_err(|e| Error::corrupt(path.display().to_string(), format!("bad config: {e}")))?;
    let mut model = TrackerModel::init(cfg, 0)?;
    fill_from_map(&mut model, &mut map, &path.display().to_string())?;
    Ok((model, header.meta))
}

pub fn save_pose_lstm(path: &Path, model: &PoseLstm<f32>, meta: &CheckpointMeta) -> Result<()> {
    let (entries, payload) = collect_entries(model);
    write_file(
        path,
        "pose_lstm",
        serde_json::to_value(&model.cfg)?,
        meta,
        entries,
        &payload,
    )
}

pub fn load_pose_lstm(path: &Path) -> Result<(PoseLstm<f32>, CheckpointMeta)> {
    let (header, mut map) = read_file(path, "pose_lstm")?;
    let cfg: PoseLstmConfig = serde_json::from_value(header.config)
        .map_err(|e| Error::corrupt(path.display().to_string(), format!("bad config: {e}")))?;
    let mut model = PoseLstm::init(cfg, 0);
    fill_from_map(&mut model, &mut map, &path.display().to_string())?;
    Ok((model, header.meta))
}

/// Hex SHA-256 of a checkpoint file, for provenance headers.
pub fn file_hash(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
