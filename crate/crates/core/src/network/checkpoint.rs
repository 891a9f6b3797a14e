//! Binary checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then the raw little-endian tensor payloads in header order. The
//! header carries a SHA-256 of the payload so truncation and tampering are
//! caught on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Network, Tensor};
use super::spec::NetworkSpec;
use crate::datamodel::PreprocessSpec;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"TSSCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn of<S: Real>() -> Self {
        if std::mem::size_of::<S>() == 4 {
            DType::F32
        } else {
            DType::F64
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset within the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub spec_digest: String,
    pub class_names: Vec<String>,
    pub preprocess: PreprocessSpec,
    pub dtype: DType,
    pub tensors: Vec<TensorEntry>,
    pub payload_len: u64,
    pub payload_sha256: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes<S: Real>(net: &Network<S>, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let dtype = DType::of::<S>();
    let mut payload = Vec::with_capacity(net.num_params() * dtype.width());
    let mut tensors = Vec::with_capacity(net.params().len());
    for t in net.params() {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset: payload.len() as u64,
        });
        for v in &t.data {
            match dtype {
                DType::F32 => payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => payload.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        spec: net.spec().clone(),
        spec_digest: net.spec().digest(),
        class_names: net.class_names().to_vec(),
        preprocess: net.preprocess().clone(),
        dtype,
        tensors,
        payload_len: payload.len() as u64,
        payload_sha256: hex(&Sha256::digest(&payload)),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits a checkpoint into its header and verified payload.
fn parse(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let corrupt = |m: &str| Error::CheckpointCorrupt(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(corrupt("header extends past end of file"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| Error::CheckpointCorrupt(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointCorrupt(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let payload = &body[hlen..];
    if payload.len() as u64 != header.payload_len {
        return Err(Error::CheckpointCorrupt(format!(
            "payload is {} bytes, header declares {}",
            payload.len(),
            header.payload_len
        )));
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    if header.spec.digest() != header.spec_digest {
        return Err(corrupt("network plan does not match its digest"));
    }
    Ok((header, payload))
}

fn decode_tensors<S: Real>(header: &CheckpointHeader, payload: &[u8]) -> Result<Vec<Tensor<S>>> {
    let width = header.dtype.width();
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start
            .checked_add(n * width)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::CheckpointCorrupt(format!("tensor {} lies outside the payload", e.name)))?;
        let raw = &payload[start..end];
        let data = match header.dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| S::of(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        out.push(Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    Ok(out)
}

pub fn from_bytes<S: Real>(bytes: &[u8]) -> Result<(Network<S>, BTreeMap<String, String>)> {
    let (header, payload) = parse(bytes)?;
    let tensors = decode_tensors(&header, payload)?;
    let net = Network::from_parts(header.spec, tensors, header.class_names, header.preprocess)?;
    Ok((net, header.metadata))
}

pub fn save<S: Real>(net: &Network<S>, path: &Path) -> Result<()> {
    save_with_metadata(net, &BTreeMap::new(), path)
}

pub fn save_with_metadata<S: Real>(net: &Network<S>, metadata: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    fsutil::atomic_write(path, &to_bytes(net, metadata)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(parse(&read(path)?)?.0)
}

/// Loads using the layer plan stored in the file.
pub fn load<S: Real>(path: &Path) -> Result<Network<S>> {
    Ok(from_bytes(&read(path)?)?.0)
}

pub fn load_with_metadata<S: Real>(path: &Path) -> Result<(Network<S>, BTreeMap<String, String>)> {
    from_bytes(&read(path)?)
}

/// Loads into an expected layer plan; the first tensor whose name or shape
/// disagrees is reported.
pub fn load_into<S: Real>(path: &Path, expected: &NetworkSpec) -> Result<Network<S>> {
    let bytes = read(path)?;
    let (header, payload) = parse(&bytes)?;
    check_compatible(&header, expected)?;
    let tensors = decode_tensors(&header, payload)?;
    Network::from_parts(expected.clone(), tensors, header.class_names, header.preprocess)
}

pub fn check_compatible(header: &CheckpointHeader, expected: &NetworkSpec) -> Result<()> {
    let slots = expected.param_slots()?;
    for (i, slot) in slots.iter().enumerate() {
        match header.tensors.get(i) {
            None => {
                return Err(Error::CheckpointIncompatible {
                    tensor: slot.name.clone(),
                    message: "missing from checkpoint".into(),
                })
            }
            Some(e) if e.name != slot.name => {
                return Err(Error::CheckpointIncompatible {
                    tensor: slot.name.clone(),
                    message: format!("checkpoint has {} in this position", e.name),
                })
            }
            Some(e) if e.shape != slot.shape => {
                return Err(Error::CheckpointIncompatible {
                    tensor: slot.name.clone(),
                    message: format!("checkpoint shape {:?}, expected {:?}", e.shape, slot.shape),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = header.tensors.get(slots.len()) {
        return Err(Error::CheckpointIncompatible {
            tensor: extra.name.clone(),
            message: "not part of the expected network".into(),
        });
    }
    if header.spec_digest != expected.digest() {
        return Err(Error::CheckpointIncompatible {
            tensor: String::new(),
            message: "layer plans differ in a parameter-free layer".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network<f32> {
        Network::new(NetworkSpec::tiny(3), 5).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let n = net();
        let mut meta = BTreeMap::new();
        meta.insert("epoch".to_string(), "3".to_string());
        save_with_metadata(&n, &meta, &path).unwrap();
        let (back, meta2) = load_with_metadata::<f32>(&path).unwrap();
        assert_eq!(meta, meta2);
        for (a, b) in n.params().iter().zip(back.params()) {
            assert_eq!(a.name, b.name);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, n);
        assert_eq!(read_header(&path).unwrap().spec_digest, n.spec().digest());

        let wide = n.cast::<f64>();
        save(&wide, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap(), wide);
    }

    #[test]
    fn head_mismatch_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&Network::<f32>::new(NetworkSpec::tiny(10), 1).unwrap(), &path).unwrap();
        let err = load_into::<f32>(&path, &NetworkSpec::tiny(3)).unwrap_err();
        match err {
            Error::CheckpointIncompatible { tensor, .. } => assert_eq!(tensor, "classifier.3.weight"),
            e => panic!("{e}"),
        }
        assert!(load_into::<f32>(&path, &NetworkSpec::tiny(10)).is_ok());
    }

    #[test]
    fn truncation_and_tampering_detected() {
        let bytes = to_bytes(&net(), &BTreeMap::new()).unwrap();
        for cut in [0, 7, 15, 40, bytes.len() - 1] {
            assert!(matches!(from_bytes::<f32>(&bytes[..cut]), Err(Error::CheckpointCorrupt(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(from_bytes::<f32>(&flipped), Err(Error::CheckpointCorrupt(_))));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(from_bytes::<f32>(&bad_magic), Err(Error::CheckpointCorrupt(_))));
    }

    #[test]
    fn failed_save_leaves_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&net(), &path).unwrap();
        let before = std::fs::read(&path).unwrap();
        let blocked = dir.path().join("file_not_dir");
        std::fs::write(&blocked, b"x").unwrap();
        assert!(save(&net(), &blocked.join("m.ckpt")).is_err());
        assert_eq!(std::fs::read(&path).unwrap(), before);
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 2);
    }
}
