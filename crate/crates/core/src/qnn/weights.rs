//! Binary weight file serialization.
//!
//! Layout (all multi-byte values little endian):
//!
//! ```text
//! magic   4 bytes  "SCQW"
//! version u16      currently 1
//! layers  u8
//! per layer:
//!   in_dim           u16
//!   out_dim          u16
//!   weight_scale     f64
//!   activation_scale f64
//!   biases           out_dim x i32
//!   weights          ceil(in_dim * out_dim / 2) bytes, row-major nibbles,
//!                    low nibble first, two's complement
//! crc32   u32      over every preceding byte
//! ```
//!
//! The input quantization scale is a fixed protocol constant and is not
//! stored. The checksum is the reflected CRC-32 used by zip and ethernet
//! (polynomial 0xEDB88320, init and xorout 0xFFFFFFFF).

use super::{QnnError, QuantLayer, QuantizedMlp};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"SCQW";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("file does not start with the weight-file magic")]
    BadMagic,
    #[error("unsupported weight-file version {got}, expected {expected}")]
    UnsupportedVersion { got: u16, expected: u16 },
    #[error("file ends early inside {section}")]
    Truncated { section: &'static str },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("file holds {got} trailing bytes past the checksum")]
    TrailingBytes { got: usize },
    #[error("a network needs at least one layer")]
    NoLayers,
    #[error("layer count {got} exceeds the format limit of 255")]
    TooManyLayers { got: usize },
    #[error("layer {layer} dimension {dim} exceeds the format limit of 65535")]
    DimensionTooLarge { layer: usize, dim: usize },
    #[error("decoded network is invalid: {0}")]
    Model(#[from] QnnError),
    #[error("weight file i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Reflected CRC-32 (polynomial 0xEDB88320, init/xorout 0xFFFFFFFF).
#[must_use]
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for byte in bytes {
        crc ^= *byte as u32;
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb != 0 {
                crc ^= 0xEDB8_8320;
            }
        }
    }
    !crc
}

fn pack_nibbles(values: &[i8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len().div_ceil(2));
    for pair in values.chunks(2) {
        let lo = (pair[0] as u8) & 0x0F;
        let hi = if pair.len() == 2 {
            (pair[1] as u8) & 0x0F
        } else {
            0
        };
        out.push(lo | (hi << 4));
    }
    out
}

fn unpack_nibbles(bytes: &[u8], count: usize) -> Vec<i8> {
    let mut out = Vec::with_capacity(count);
    for byte in bytes {
        for nibble in [byte & 0x0F, byte >> 4] {
            if out.len() == count {
                break;
            }
            let value = if nibble >= 8 {
                nibble as i8 - 16
            } else {
                nibble as i8
            };
            out.push(value);
        }
    }
    out
}

/// Serialize a network to the weight-file byte layout.
pub fn encode(mlp: &QuantizedMlp) -> Result<Vec<u8>, WeightsError> {
    let layers = mlp.layers();
    if layers.is_empty() {
        return Err(WeightsError::NoLayers);
    }
    if layers.len() > 255 {
        return Err(WeightsError::TooManyLayers { got: layers.len() });
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(layers.len() as u8);
    for (l, layer) in layers.iter().enumerate() {
        for dim in [layer.in_dim, layer.out_dim] {
            if dim > u16::MAX as usize {
                return Err(WeightsError::DimensionTooLarge { layer: l, dim });
            }
        }
        buf.extend_from_slice(&(layer.in_dim as u16).to_le_bytes());
        buf.extend_from_slice(&(layer.out_dim as u16).to_le_bytes());
        buf.extend_from_slice(&layer.weight_scale.to_le_bytes());
        buf.extend_from_slice(&layer.activation_scale.to_le_bytes());
        for bias in &layer.biases {
            buf.extend_from_slice(&bias.to_le_bytes());
        }
        buf.extend_from_slice(&pack_nibbles(&layer.weights));
    }
    let checksum = crc32(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], WeightsError> {
        if self.pos + n > self.bytes.len() {
            return Err(WeightsError::Truncated { section });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16_le(&mut self, section: &'static str) -> Result<u16, WeightsError> {
        let b = self.take(2, section)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f64_le(&mut self, section: &'static str) -> Result<f64, WeightsError> {
        let b = self.take(8, section)?;
        Ok(f64::from_le_bytes(b.try_into().expect("length checked")))
    }
}

/// Parse and validate a weight file image.
pub fn decode(bytes: &[u8]) -> Result<QuantizedMlp, WeightsError> {
    if bytes.len() < MAGIC.len() + 2 + 1 + 4 {
        if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        return Err(WeightsError::Truncated { section: "header" });
    }
    if bytes[..MAGIC.len()] != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("length checked"));
    let computed = crc32(&bytes[..body_len]);
    if stored != computed {
        return Err(WeightsError::ChecksumMismatch { stored, computed });
    }

    let mut cur = Cursor {
        bytes: &bytes[..body_len],
        pos: MAGIC.len(),
    };
    let version = cur.u16_le("header")?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion {
            got: version,
            expected: VERSION,
        });
    }
    let layer_count = cur.take(1, "header")?[0] as usize;
    if layer_count == 0 {
        return Err(WeightsError::NoLayers);
    }
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = cur.u16_le("layer dimensions")? as usize;
        let out_dim = cur.u16_le("layer dimensions")? as usize;
        let weight_scale = cur.f64_le("layer scales")?;
        let activation_scale = cur.f64_le("layer scales")?;
        let mut biases = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let b = cur.take(4, "biases")?;
            biases.push(i32::from_le_bytes(b.try_into().expect("length checked")));
        }
        let count = in_dim * out_dim;
        let packed = cur.take(count.div_ceil(2), "weights")?;
        layers.push(QuantLayer {
            in_dim,
            out_dim,
            weight_scale,
            activation_scale,
            weights: unpack_nibbles(packed, count),
            biases,
        });
    }
    if cur.pos != body_len {
        return Err(WeightsError::TrailingBytes {
            got: body_len - cur.pos,
        });
    }
    Ok(QuantizedMlp::new(layers)?)
}

/// Write a network to a weight file.
pub fn save(mlp: &QuantizedMlp, path: &Path) -> Result<(), WeightsError> {
    let bytes = encode(mlp)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a network from a weight file.
pub fn load(path: &Path) -> Result<QuantizedMlp, WeightsError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
