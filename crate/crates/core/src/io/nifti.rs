//! NIfTI-1 single-file (`n+1`) subset: dims, datatype, pixdim, vox_offset and
//! scaling. The qform/sform block is round-tripped as opaque bytes.

use super::{kind_mismatch, Volume, VolumeKind, VolumeRef};
use crate::error::{Error, FormatError, Result};
use crate::volume::{LabelVolume, LogitVolume, Orientation, ScalarVolume, VolumeGeometry};

const HEADER_LEN: usize = 348;
const VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const INTENT_NAME: usize = 328;
    pub const MAGIC: usize = 344;
}

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

const NIFTI_UNITS_MM: u8 = 2;

/// qfac (pixdim[0]) followed by qform_code..srow_z.
const ORIENTATION_LEN: usize = 4 + (offsets::INTENT_NAME - offsets::QFORM_CODE);

struct HeaderReader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl HeaderReader<'_> {
    fn i16(&self, offset: usize) -> i16 {
        let b = [self.bytes[offset], self.bytes[offset + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, offset: usize) -> i32 {
        let b: [u8; 4] = self.bytes[offset..offset + 4].try_into().unwrap();
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, offset: usize) -> f32 {
        f32::from_bits(self.i32(offset) as u32)
    }
}

fn malformed(offset: usize, reason: impl Into<String>) -> Error {
    FormatError::MalformedHeader {
        offset,
        reason: reason.into(),
    }
    .into()
}

pub(super) fn decode(bytes: &[u8], expected: VolumeKind) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(
            bytes.len(),
            format!(
                "NIfTI-1 header needs {HEADER_LEN} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let big_endian = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => false,
        (_, 348) => true,
        (found, _) => {
            return Err(malformed(
                offsets::SIZEOF_HDR,
                format!("sizeof_hdr is {found}, expected 348"),
            ))
        }
    };
    let r = HeaderReader { bytes, big_endian };

    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(FormatError::BadMagic {
            offset: offsets::MAGIC,
            expected: "n+1\\0".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        }
        .into());
    }

    let ndim = r.i16(offsets::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(malformed(
            offsets::DIM,
            format!("dim[0] = {ndim} outside 1..=7"),
        ));
    }
    let mut dim = [1usize; 7];
    for (i, slot) in dim.iter_mut().enumerate().take(ndim as usize) {
        let offset = offsets::DIM + 2 * (i + 1);
        let d = r.i16(offset);
        if d < 1 {
            return Err(malformed(
                offset,
                format!("dim[{}] = {d} must be >= 1", i + 1),
            ));
        }
        *slot = d as usize;
    }
    if dim[4..].iter().any(|&d| d != 1) {
        return Err(malformed(
            offsets::DIM + 12,
            format!("dims beyond the 4th must be 1, got {:?}", &dim[4..]),
        ));
    }
    let num_channels = dim[3];

    let datatype = r.i16(offsets::DATATYPE);
    let (value_size, found_kind) = match datatype {
        DT_UINT8 => (1, VolumeKind::Label),
        DT_INT16 | DT_UINT16 => (2, VolumeKind::Label),
        DT_FLOAT32 if num_channels == 1 => (4, VolumeKind::Scalar),
        DT_FLOAT32 => (4, VolumeKind::Logit),
        code => {
            return Err(FormatError::UnsupportedDatatype {
                offset: offsets::DATATYPE,
                code: code.into(),
            }
            .into())
        }
    };
    if found_kind == VolumeKind::Label && num_channels != 1 {
        return Err(malformed(
            offsets::DIM + 8,
            format!("label volumes must be 3D, dim[4] = {num_channels}"),
        ));
    }
    if found_kind != expected {
        return Err(kind_mismatch(expected, found_kind));
    }
    let bitpix = r.i16(offsets::BITPIX);
    if bitpix as usize != 8 * value_size {
        return Err(malformed(
            offsets::BITPIX,
            format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }

    let spacing = [
        r.f32(offsets::PIXDIM + 4),
        r.f32(offsets::PIXDIM + 8),
        r.f32(offsets::PIXDIM + 12),
    ];
    let geometry = VolumeGeometry::new([dim[0], dim[1], dim[2]], spacing)
        .map_err(|e| malformed(offsets::PIXDIM, e.to_string()))?
        .with_orientation(read_orientation(&r));

    let vox_offset = r.f32(offsets::VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(malformed(
            offsets::VOX_OFFSET,
            format!("vox_offset {vox_offset} is not a valid byte offset"),
        ));
    }
    let start = vox_offset as usize;
    let count = geometry.num_voxels() * num_channels;
    let needed = count * value_size;
    let available = bytes.len().saturating_sub(start);
    if available < needed {
        return Err(FormatError::Truncated {
            offset: start,
            expected: needed,
            actual: available,
        }
        .into());
    }
    let payload = &bytes[start..start + needed];

    let mut slope = r.f32(offsets::SCL_SLOPE);
    let mut inter = r.f32(offsets::SCL_INTER);
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    if !inter.is_finite() {
        inter = 0.0;
    }
    let identity = slope == 1.0 && inter == 0.0;

    let payload_reader = HeaderReader {
        bytes: payload,
        big_endian,
    };
    match found_kind {
        VolumeKind::Label => {
            let raw: Vec<f64> = (0..count)
                .map(|i| match datatype {
                    DT_UINT8 => f64::from(payload[i]),
                    DT_INT16 => f64::from(payload_reader.i16(2 * i)),
                    _ => f64::from(payload_reader.i16(2 * i) as u16),
                })
                .collect();
            let mut data = Vec::with_capacity(count);
            for (index, value) in raw.into_iter().enumerate() {
                let value = if identity {
                    value
                } else {
                    value * f64::from(slope) + f64::from(inter)
                };
                if value.fract() != 0.0 || !(0.0..=f64::from(u16::MAX)).contains(&value) {
                    return Err(FormatError::InvalidLabelValue { index, value }.into());
                }
                data.push(value as u16);
            }
            Ok(Volume::Label(LabelVolume::new(geometry, data)?))
        }
        VolumeKind::Scalar | VolumeKind::Logit => {
            let mut data: Vec<f32> = (0..count).map(|i| payload_reader.f32(4 * i)).collect();
            if !identity {
                for x in &mut data {
                    *x = (f64::from(*x) * f64::from(slope) + f64::from(inter)) as f32;
                }
            }
            if found_kind == VolumeKind::Scalar {
                Ok(Volume::Scalar(ScalarVolume::new(geometry, data)?))
            } else {
                Ok(Volume::Logit(LogitVolume::new(
                    geometry,
                    num_channels,
                    data,
                )?))
            }
        }
    }
}

fn read_orientation(r: &HeaderReader<'_>) -> Option<Orientation> {
    let qfac = r.f32(offsets::PIXDIM);
    let block = &r.bytes[offsets::QFORM_CODE..offsets::INTENT_NAME];
    if block.iter().all(|&b| b == 0) && (qfac == 0.0 || qfac == 1.0) {
        return None;
    }
    // normalize to little-endian so writing reproduces the same values
    let mut bytes = Vec::with_capacity(ORIENTATION_LEN);
    bytes.extend_from_slice(&qfac.to_le_bytes());
    bytes.extend_from_slice(&r.i16(offsets::QFORM_CODE).to_le_bytes());
    bytes.extend_from_slice(&r.i16(offsets::QFORM_CODE + 2).to_le_bytes());
    let mut offset = offsets::QFORM_CODE + 4;
    while offset < offsets::INTENT_NAME {
        bytes.extend_from_slice(&r.f32(offset).to_le_bytes());
        offset += 4;
    }
    Some(Orientation { bytes })
}

pub(super) fn encode(volume: VolumeRef<'_>) -> Result<Vec<u8>> {
    let (geometry, num_channels, datatype, bitpix) = match volume {
        VolumeRef::Label(v) => (v.geometry(), 1, DT_UINT16, 16),
        VolumeRef::Scalar(v) => (v.geometry(), 1, DT_FLOAT32, 32),
        VolumeRef::Logit(v) => (v.geometry(), v.num_classes(), DT_FLOAT32, 32),
    };
    let mut dims = [0i16; 4];
    for (out, &d) in dims
        .iter_mut()
        .zip(geometry.dims().iter().chain(std::iter::once(&num_channels)))
    {
        *out = i16::try_from(d)
            .map_err(|_| Error::InvalidGeometry(format!("dim {d} exceeds the NIfTI-1 limit")))?;
    }

    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], o: usize, v: i16| h[o..o + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], o: usize, v: f32| h[o..o + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_LEN as i32).to_le_bytes());
    h[38] = b'r';
    let ndim = if num_channels > 1 { 4 } else { 3 };
    put_i16(&mut h, offsets::DIM, ndim);
    for (i, &d) in dims.iter().enumerate() {
        put_i16(&mut h, offsets::DIM + 2 * (i + 1), d);
    }
    for i in 5..8 {
        put_i16(&mut h, offsets::DIM + 2 * i, 1);
    }
    put_i16(&mut h, offsets::DATATYPE, datatype);
    put_i16(&mut h, offsets::BITPIX, bitpix);
    for (i, s) in geometry.spacing().iter().enumerate() {
        put_f32(&mut h, offsets::PIXDIM + 4 * (i + 1), *s);
    }
    put_f32(&mut h, offsets::PIXDIM + 16, 1.0);
    put_f32(&mut h, offsets::VOX_OFFSET, VOX_OFFSET as f32);
    put_f32(&mut h, offsets::SCL_SLOPE, 1.0);
    put_f32(&mut h, offsets::SCL_INTER, 0.0);
    h[offsets::XYZT_UNITS] = NIFTI_UNITS_MM;
    let descrip = b"raterfuse";
    h[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip);
    match geometry.orientation() {
        Some(o) => {
            h[offsets::PIXDIM..offsets::PIXDIM + 4].copy_from_slice(&o.bytes[0..4]);
            h[offsets::QFORM_CODE..offsets::INTENT_NAME].copy_from_slice(&o.bytes[4..]);
        }
        None => put_f32(&mut h, offsets::PIXDIM, 1.0),
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    match volume {
        VolumeRef::Label(v) => v
            .data()
            .iter()
            .for_each(|l| h.extend_from_slice(&l.to_le_bytes())),
        VolumeRef::Scalar(v) => v
            .data()
            .iter()
            .for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
        VolumeRef::Logit(v) => v
            .data()
            .iter()
            .for_each(|x| h.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> VolumeGeometry {
        VolumeGeometry::new([2, 3, 2], [0.5, 0.5, 1.0]).unwrap()
    }

    /// Minimal int16 header written field by field, independent of `encode`.
    fn int16_file(values: &[i16], slope: f32, inter: f32) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in [3i16, 2, 3, 2, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&4i16.to_le_bytes());
        h[72..74].copy_from_slice(&16i16.to_le_bytes());
        for (i, p) in [1.0f32, 0.5, 0.5, 1.0].iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&slope.to_le_bytes());
        h[116..120].copy_from_slice(&inter.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        for v in values {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h
    }

    #[test]
    fn reads_int16_labels_and_pixdim() {
        let values: Vec<i16> = (0..12).collect();
        let v = decode(&int16_file(&values, 0.0, 0.0), VolumeKind::Label)
            .unwrap()
            .into_label()
            .unwrap();
        assert_eq!(v.geometry().spacing(), [0.5, 0.5, 1.0]);
        assert_eq!(v.geometry().dims(), [2, 3, 2]);
        assert_eq!(v.data(), (0..12).collect::<Vec<u16>>().as_slice());
        assert!(v.geometry().orientation().is_none());
    }

    #[test]
    fn applies_scaling_on_read() {
        let values = vec![0i16, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
        let v = decode(&int16_file(&values, 2.0, 1.0), VolumeKind::Label)
            .unwrap()
            .into_label()
            .unwrap();
        assert_eq!(v.data()[3], 7);
        let err = decode(&int16_file(&values, 0.5, 0.0), VolumeKind::Label).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::InvalidLabelValue { index: 1, .. })
        ));
    }

    #[test]
    fn negative_int16_label_rejected() {
        let mut values = vec![0i16; 12];
        values[5] = -1;
        let err = decode(&int16_file(&values, 1.0, 0.0), VolumeKind::Label).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::InvalidLabelValue { index: 5, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let file = int16_file(&[0; 11], 1.0, 0.0);
        assert!(matches!(
            decode(&file, VolumeKind::Label),
            Err(Error::Format(FormatError::Truncated {
                offset: 352,
                expected: 24,
                actual: 22
            }))
        ));
    }

    #[test]
    fn big_endian_header_is_read() {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 1, 1, 2, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        h[70..72].copy_from_slice(&16i16.to_be_bytes());
        h[72..74].copy_from_slice(&32i16.to_be_bytes());
        for (i, p) in [1.0f32, 0.5, 0.5, 1.0].iter().enumerate() {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_be_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[112..116].copy_from_slice(&1f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&1.5f32.to_be_bytes());
        h.extend_from_slice(&(-2.0f32).to_be_bytes());
        let v = decode(&h, VolumeKind::Scalar)
            .unwrap()
            .into_scalar()
            .unwrap();
        assert_eq!(v.data(), &[1.5, -2.0]);
        assert_eq!(v.geometry().spacing(), [0.5, 0.5, 1.0]);
    }

    #[test]
    fn logits_are_four_dimensional() {
        let g = geometry();
        let v = LogitVolume::new(g, 13, (0..12 * 13).map(|i| i as f32 * 0.25).collect()).unwrap();
        let bytes = encode(VolumeRef::Logit(&v)).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[40], bytes[41]]), 4);
        assert_eq!(i16::from_le_bytes([bytes[48], bytes[49]]), 13);
        let back = decode(&bytes, VolumeKind::Logit)
            .unwrap()
            .into_logit()
            .unwrap();
        assert_eq!(back, v);
        assert!(matches!(
            decode(&bytes, VolumeKind::Scalar),
            Err(Error::Format(FormatError::KindMismatch { .. }))
        ));
    }

    #[test]
    fn orientation_carried_through() {
        let mut file = int16_file(&[1; 12], 1.0, 0.0);
        file[76..80].copy_from_slice(&(-1.0f32).to_le_bytes());
        file[252..254].copy_from_slice(&1i16.to_le_bytes());
        file[280..284].copy_from_slice(&(-0.5f32).to_le_bytes());
        let v = decode(&file, VolumeKind::Label).unwrap();
        let encoded = encode((&v).into()).unwrap();
        assert_eq!(&encoded[76..80], &file[76..80]);
        assert_eq!(&encoded[252..328], &file[252..328]);
        assert_eq!(decode(&encoded, VolumeKind::Label).unwrap(), v);
    }

    #[test]
    fn rejects_pair_files_and_bad_datatype() {
        let mut file = int16_file(&[0; 12], 1.0, 0.0);
        file[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(
            decode(&file, VolumeKind::Label),
            Err(Error::Format(FormatError::BadMagic { offset: 344, .. }))
        ));
        let mut file = int16_file(&[0; 12], 1.0, 0.0);
        file[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(
            decode(&file, VolumeKind::Label),
            Err(Error::Format(FormatError::UnsupportedDatatype {
                offset: 70,
                code: 64
            }))
        ));
    }
}
