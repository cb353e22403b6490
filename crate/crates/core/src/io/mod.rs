//! Volume files (NIfTI-1 and the raw `.mlvr` format), JSON configs and reports.

mod nifti;
mod raw;
pub mod report;

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;

use crate::error::{Error, FormatError, Result};
use crate::volume::{LabelVolume, LogitVolume, ScalarVolume};

pub use raw::{RawVolumeHeader, RAW_HEADER_LEN, RAW_MAGIC, RAW_VERSION};

/// Which volume type a caller expects from a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Label,
    Scalar,
    Logit,
}

impl VolumeKind {
    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::Label => "label",
            VolumeKind::Scalar => "scalar",
            VolumeKind::Logit => "logit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Label(LabelVolume),
    Scalar(ScalarVolume),
    Logit(LogitVolume),
}

impl Volume {
    pub fn kind(&self) -> VolumeKind {
        match self {
            Volume::Label(_) => VolumeKind::Label,
            Volume::Scalar(_) => VolumeKind::Scalar,
            Volume::Logit(_) => VolumeKind::Logit,
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            Volume::Label(v) => Ok(v),
            other => Err(kind_mismatch(VolumeKind::Label, other.kind())),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            Volume::Scalar(v) => Ok(v),
            other => Err(kind_mismatch(VolumeKind::Scalar, other.kind())),
        }
    }

    pub fn into_logit(self) -> Result<LogitVolume> {
        match self {
            Volume::Logit(v) => Ok(v),
            other => Err(kind_mismatch(VolumeKind::Logit, other.kind())),
        }
    }
}

fn kind_mismatch(expected: VolumeKind, found: VolumeKind) -> Error {
    FormatError::KindMismatch {
        expected: expected.name(),
        found: found.name(),
    }
    .into()
}

/// Borrowed view used by [`write_volume`].
#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Label(&'a LabelVolume),
    Scalar(&'a ScalarVolume),
    Logit(&'a LogitVolume),
}

impl<'a> From<&'a LabelVolume> for VolumeRef<'a> {
    fn from(v: &'a LabelVolume) -> Self {
        VolumeRef::Label(v)
    }
}

impl<'a> From<&'a ScalarVolume> for VolumeRef<'a> {
    fn from(v: &'a ScalarVolume) -> Self {
        VolumeRef::Scalar(v)
    }
}

impl<'a> From<&'a LogitVolume> for VolumeRef<'a> {
    fn from(v: &'a LogitVolume) -> Self {
        VolumeRef::Logit(v)
    }
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        match v {
            Volume::Label(v) => VolumeRef::Label(v),
            Volume::Scalar(v) => VolumeRef::Scalar(v),
            Volume::Logit(v) => VolumeRef::Logit(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileFormat {
    Nifti { gzip: bool },
    Raw,
}

fn sniff_format(path: &Path) -> Result<FileFormat> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if name.ends_with(".nii.gz") {
        Ok(FileFormat::Nifti { gzip: true })
    } else if name.ends_with(".nii") {
        Ok(FileFormat::Nifti { gzip: false })
    } else if name.ends_with(".mlvr") {
        Ok(FileFormat::Raw)
    } else {
        Err(FormatError::UnknownExtension(path.to_path_buf()).into())
    }
}

/// Reads a NIfTI-1 (`.nii`, `.nii.gz`) or raw (`.mlvr`) volume of the expected kind.
pub fn read_volume(path: impl AsRef<Path>, expected: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let format = sniff_format(path)?;
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    match format {
        FileFormat::Nifti { gzip: true } => GzDecoder::new(file).read_to_end(&mut bytes),
        _ => file.read_to_end(&mut bytes),
    }
    .map_err(|e| Error::io(path, e))?;
    match format {
        FileFormat::Nifti { .. } => nifti::decode(&bytes, expected),
        FileFormat::Raw => raw::decode(&bytes, expected),
    }
}

pub fn read_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_volume(path, VolumeKind::Label)?.into_label()
}

pub fn read_scalar_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    read_volume(path, VolumeKind::Scalar)?.into_scalar()
}

pub fn read_logit_volume(path: impl AsRef<Path>) -> Result<LogitVolume> {
    read_volume(path, VolumeKind::Logit)?.into_logit()
}

/// Writes a volume; the format follows the file extension.
pub fn write_volume<'a>(volume: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let volume = volume.into();
    let path = path.as_ref();
    let format = sniff_format(path)?;
    let bytes = match format {
        FileFormat::Nifti { .. } => nifti::encode(volume)?,
        FileFormat::Raw => raw::encode(volume)?,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        FileFormat::Nifti { gzip: true } => {
            let mut gz = GzEncoder::new(out, Compression::default());
            gz.write_all(&bytes).map_err(|e| Error::io(path, e))?;
            out = gz.finish().map_err(|e| Error::io(path, e))?;
        }
        _ => out.write_all(&bytes).map_err(|e| Error::io(path, e))?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

/// Pretty JSON with a trailing LF.
pub fn write_json<T: serde::Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    fn labels() -> LabelVolume {
        let g = VolumeGeometry::new([3, 2, 2], [0.5, 0.5, 1.0]).unwrap();
        LabelVolume::new(g, (0..12).map(|i| (i % 13) as u16).collect()).unwrap()
    }

    #[test]
    fn extension_sniffing() {
        assert_eq!(
            sniff_format(Path::new("a/b.NII.GZ")).unwrap(),
            FileFormat::Nifti { gzip: true }
        );
        assert_eq!(
            sniff_format(Path::new("b.nii")).unwrap(),
            FileFormat::Nifti { gzip: false }
        );
        assert_eq!(sniff_format(Path::new("b.mlvr")).unwrap(), FileFormat::Raw);
        assert!(sniff_format(Path::new("b.nrrd")).is_err());
    }

    #[test]
    fn round_trip_all_extensions() {
        let dir = tempfile::tempdir().unwrap();
        let v = labels();
        for name in ["v.nii", "v.nii.gz", "v.mlvr"] {
            let p = dir.path().join(name);
            write_volume(&v, &p).unwrap();
            assert_eq!(read_label_volume(&p).unwrap(), v, "{name}");
        }
    }

    #[test]
    fn kind_mismatch_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mlvr");
        write_volume(&labels(), &p).unwrap();
        let err = read_volume(&p, VolumeKind::Scalar).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::KindMismatch { .. })
        ));
    }

    #[test]
    fn missing_file_carries_path() {
        let err = read_label_volume("/nonexistent/x.nii").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.nii"));
    }
}
