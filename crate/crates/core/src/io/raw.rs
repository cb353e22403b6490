//! The raw `.mlvr` format: a 33-byte little-endian header followed by the
//! voxel payload in canonical order.
//!
//! | offset | size | field                                     |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `MLVR`                              |
//! | 4      | 2    | version (u16, = 1)                        |
//! | 6      | 1    | dtype (0 = u16 labels, 1 = f32, 2 = f32 logits) |
//! | 7      | 2    | num_classes (u16, 1 unless dtype = 2)     |
//! | 9      | 12   | dims, three u32                           |
//! | 21     | 12   | spacing, three f32                        |
//! | 33     | ...  | payload                                   |

use super::{kind_mismatch, VolumeKind, VolumeRef};
use crate::error::{Error, FormatError, Result};
use crate::volume::{LabelVolume, LogitVolume, ScalarVolume, VolumeGeometry};

use super::Volume;

pub const RAW_MAGIC: [u8; 4] = *b"MLVR";
pub const RAW_VERSION: u16 = 1;
pub const RAW_HEADER_LEN: usize = 33;

const DTYPE_LABEL: u8 = 0;
const DTYPE_SCALAR: u8 = 1;
const DTYPE_LOGIT: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RawVolumeHeader {
    pub dtype_code: u8,
    pub num_classes: u16,
    pub dims: [u32; 3],
    pub spacing: [f32; 3],
}

impl RawVolumeHeader {
    pub fn to_bytes(&self) -> [u8; RAW_HEADER_LEN] {
        let mut out = [0u8; RAW_HEADER_LEN];
        out[0..4].copy_from_slice(&RAW_MAGIC);
        out[4..6].copy_from_slice(&RAW_VERSION.to_le_bytes());
        out[6] = self.dtype_code;
        out[7..9].copy_from_slice(&self.num_classes.to_le_bytes());
        for (i, d) in self.dims.iter().enumerate() {
            out[9 + 4 * i..13 + 4 * i].copy_from_slice(&d.to_le_bytes());
        }
        for (i, s) in self.spacing.iter().enumerate() {
            out[21 + 4 * i..25 + 4 * i].copy_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAW_HEADER_LEN {
            return Err(FormatError::MalformedHeader {
                offset: bytes.len(),
                reason: format!(
                    "header needs {RAW_HEADER_LEN} bytes, file has {}",
                    bytes.len()
                ),
            }
            .into());
        }
        if bytes[0..4] != RAW_MAGIC {
            return Err(FormatError::BadMagic {
                offset: 0,
                expected: "MLVR".into(),
                found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
            }
            .into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RAW_VERSION {
            return Err(FormatError::UnsupportedVersion {
                offset: 4,
                expected: RAW_VERSION.into(),
                found: version.into(),
            }
            .into());
        }
        let dtype_code = bytes[6];
        if dtype_code > DTYPE_LOGIT {
            return Err(FormatError::UnsupportedDatatype {
                offset: 6,
                code: dtype_code.into(),
            }
            .into());
        }
        let num_classes = u16::from_le_bytes([bytes[7], bytes[8]]);
        let classes_ok = if dtype_code == DTYPE_LOGIT {
            num_classes >= 2
        } else {
            num_classes == 1
        };
        if !classes_ok {
            return Err(FormatError::MalformedHeader {
                offset: 7,
                reason: format!("num_classes {num_classes} invalid for dtype {dtype_code}"),
            }
            .into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        Ok(Self {
            dtype_code,
            num_classes,
            dims: [u32_at(9), u32_at(13), u32_at(17)],
            spacing: [f32_at(21), f32_at(25), f32_at(29)],
        })
    }

    fn kind(&self) -> VolumeKind {
        match self.dtype_code {
            DTYPE_LABEL => VolumeKind::Label,
            DTYPE_SCALAR => VolumeKind::Scalar,
            _ => VolumeKind::Logit,
        }
    }

    fn dtype_size(&self) -> usize {
        if self.dtype_code == DTYPE_LABEL {
            2
        } else {
            4
        }
    }
}

pub(super) fn encode(volume: VolumeRef<'_>) -> Result<Vec<u8>> {
    let (geometry, dtype_code, num_classes) = match volume {
        VolumeRef::Label(v) => (v.geometry(), DTYPE_LABEL, 1),
        VolumeRef::Scalar(v) => (v.geometry(), DTYPE_SCALAR, 1),
        VolumeRef::Logit(v) => (v.geometry(), DTYPE_LOGIT, v.num_classes()),
    };
    let num_classes = u16::try_from(num_classes).map_err(|_| {
        Error::InvalidParameter(format!("{num_classes} classes exceed the raw format limit"))
    })?;
    let mut dims = [0u32; 3];
    for (out, &d) in dims.iter_mut().zip(geometry.dims().iter()) {
        *out =
            u32::try_from(d).map_err(|_| Error::InvalidGeometry(format!("dim {d} exceeds u32")))?;
    }
    let header = RawVolumeHeader {
        dtype_code,
        num_classes,
        dims,
        spacing: geometry.spacing(),
    };
    let mut out = Vec::with_capacity(
        RAW_HEADER_LEN + header.dtype_size() * num_classes as usize * geometry.num_voxels(),
    );
    out.extend_from_slice(&header.to_bytes());
    match volume {
        VolumeRef::Label(v) => v
            .data()
            .iter()
            .for_each(|l| out.extend_from_slice(&l.to_le_bytes())),
        VolumeRef::Scalar(v) => v
            .data()
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        VolumeRef::Logit(v) => v
            .data()
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub(super) fn decode(bytes: &[u8], expected: VolumeKind) -> Result<Volume> {
    let header = RawVolumeHeader::parse(bytes)?;
    if header.kind() != expected {
        return Err(kind_mismatch(expected, header.kind()));
    }
    let dims = header.dims.map(|d| d as usize);
    let geometry =
        VolumeGeometry::new(dims, header.spacing).map_err(|e| FormatError::MalformedHeader {
            offset: 9,
            reason: e.to_string(),
        })?;
    let values = geometry.num_voxels() * header.num_classes as usize;
    let expected_len = values * header.dtype_size();
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() < expected_len {
        return Err(FormatError::Truncated {
            offset: RAW_HEADER_LEN,
            expected: expected_len,
            actual: payload.len(),
        }
        .into());
    }
    if payload.len() > expected_len {
        return Err(FormatError::TrailingBytes {
            offset: RAW_HEADER_LEN + expected_len,
            extra: payload.len() - expected_len,
        }
        .into());
    }
    Ok(match header.kind() {
        VolumeKind::Label => {
            let data = payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            Volume::Label(LabelVolume::new(geometry, data)?)
        }
        VolumeKind::Scalar => Volume::Scalar(ScalarVolume::new(geometry, read_f32s(payload))?),
        VolumeKind::Logit => Volume::Logit(LogitVolume::new(
            geometry,
            header.num_classes as usize,
            read_f32s(payload),
        )?),
    })
}

fn read_f32s(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
