//! Bit-exact checkpoint format.
//!
//! Layout: magic `CLET` | version `u16` LE | header length `u32` LE |
//! JSON header (spec, training metadata, blob offsets and CRC32s) |
//! raw little-endian f32 blobs, weights then bias per parameter layer in
//! traversal order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::Network;
use super::spec::NetSpec;

pub const MAGIC: [u8; 4] = *b"CLET";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("checkpoint truncated: {context}")]
    Truncated { context: String },
    #[error("blob {blob} failed its CRC32 check (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { blob: usize, stored: u32, computed: u32 },
    #[error("checkpoint does not match its architecture: {0}")]
    SpecMismatch(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Epoch the weights were taken from (1-based).
    pub epoch: u32,
    pub seed: u64,
    /// Validation accuracy after each completed epoch.
    pub val_accuracy_history: Vec<f64>,
    /// Training-set mean pixel on the 0..1 scale, applied by preprocessing.
    pub mean_pixel: Option<f64>,
}

impl TrainMeta {
    pub fn untrained(seed: u64) -> Self {
        Self {
            epoch: 0,
            seed,
            val_accuracy_history: Vec::new(),
            mean_pixel: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BlobInfo {
    /// Offset in bytes from the start of the blob section.
    offset: u64,
    len_bytes: u64,
    crc32: u32,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetSpec,
    meta: TrainMeta,
    blobs: Vec<BlobInfo>,
}

/// Serialized weights plus architecture and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub meta: TrainMeta,
    pub blobs: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, meta: TrainMeta) -> Self {
        Self {
            spec: net.spec().clone(),
            meta,
            blobs: net.weight_blobs(),
        }
    }

    /// Rebuild a runnable network. Fails when the blobs do not fit the spec.
    pub fn to_network(&self) -> Result<Network<f32>, CheckpointError> {
        let mut net = Network::build_zeroed(&self.spec)
            .map_err(|e| CheckpointError::SpecMismatch(e.to_string()))?;
        net.load_blobs(&self.blobs)
            .map_err(|e| CheckpointError::SpecMismatch(e.to_string()))?;
        if let Some(mean) = self.meta.mean_pixel {
            net.set_mean_pixel(mean);
        }
        Ok(net)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let mut infos = Vec::with_capacity(self.blobs.len());
        let mut offset = 0u64;
        let mut payload: Vec<u8> = Vec::new();
        for blob in &self.blobs {
            let bytes = f32s_to_le_bytes(blob);
            infos.push(BlobInfo {
                offset,
                len_bytes: bytes.len() as u64,
                crc32: crc32(&bytes),
            });
            offset += bytes.len() as u64;
            payload.extend_from_slice(&bytes);
        }
        let header = Header {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            blobs: infos,
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;

        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic });
        }
        let mut version = [0u8; 2];
        read_exact(&mut r, &mut version, "version")?;
        let version = u16::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let mut header_len = [0u8; 4];
        read_exact(&mut r, &mut header_len, "header length")?;
        let header_len = u32::from_le_bytes(header_len) as usize;
        let mut header_json = vec![0u8; header_len];
        read_exact(&mut r, &mut header_json, "header")?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;

        let mut blobs = Vec::with_capacity(header.blobs.len());
        for (i, info) in header.blobs.iter().enumerate() {
            let start = info.offset as usize;
            let end = start + info.len_bytes as usize;
            if end > payload.len() {
                return Err(CheckpointError::Truncated {
                    context: format!(
                        "blob {i} spans bytes {start}..{end} but only {} payload bytes are present",
                        payload.len()
                    ),
                });
            }
            let bytes = &payload[start..end];
            let computed = crc32(bytes);
            if computed != info.crc32 {
                return Err(CheckpointError::ChecksumMismatch {
                    blob: i,
                    stored: info.crc32,
                    computed,
                });
            }
            blobs.push(le_bytes_to_f32s(bytes).map_err(CheckpointError::Header)?);
        }

        let checkpoint = Self {
            spec: header.spec,
            meta: header.meta,
            blobs,
        };
        // Fail early on blob-count or blob-shape mismatches.
        checkpoint.to_network()?;
        Ok(checkpoint)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Write a network's weights and metadata to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &Network<f32>,
    meta: &TrainMeta,
) -> Result<(), CheckpointError> {
    Checkpoint::from_network(net, meta.clone()).save(path)
}

/// Load a checkpoint and rebuild the network it describes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network<f32>, TrainMeta), CheckpointError> {
    let checkpoint = load_checkpoint_data(path)?;
    let net = checkpoint.to_network()?;
    Ok((net, checkpoint.meta))
}

pub fn load_checkpoint_data(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let file = File::open(path)?;
    Checkpoint::read_from(BufReader::new(file))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], context: &str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated {
                context: context.to_string(),
            }
        } else {
            CheckpointError::Io(e)
        }
    })
}

fn f32s_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_bytes_to_f32s(bytes: &[u8]) -> Result<Vec<f32>, String> {
    if !bytes.len().is_multiple_of(4) {
        return Err(format!("blob length {} is not a multiple of 4", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// CRC-32 (IEEE 802.3, reflected) over a byte slice.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, entry) in table.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        table
    });
    let mut c = !0u32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    !c
}
