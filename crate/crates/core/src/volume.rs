//! Dense 3D/4D volumes and their geometry.
//!
//! All volumes share one canonical voxel ordering: x-fastest, i.e. the voxel at
//! `(h, w, d)` lives at `h + H * (w + W * d)`. Logit volumes stack whole 3D
//! grids class after class (class-major).

use std::fmt;

use crate::error::{Error, Result};

/// Opaque orientation block (qform/sform fields) carried through NIfTI read/write.
///
/// Never interpreted; voxelwise alignment between volumes is the caller's job.
#[derive(Debug, Clone, PartialEq)]
pub struct Orientation {
    pub(crate) bytes: Vec<u8>,
}

impl Orientation {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGeometry {
    dims: [usize; 3],
    spacing: [f32; 3],
    orientation: Option<Orientation>,
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f32; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!(
                "all dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "all spacings must be finite and > 0, got {spacing:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidGeometry(format!("voxel count overflows for {dims:?}")))?;
        Ok(Self {
            dims,
            spacing,
            orientation: None,
        })
    }

    /// Isotropic 1 mm grid.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn with_orientation(mut self, orientation: Option<Orientation>) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn spacing_f64(&self) -> [f64; 3] {
        self.spacing.map(f64::from)
    }

    pub fn orientation(&self) -> Option<&Orientation> {
        self.orientation.as_ref()
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_f64().iter().product()
    }

    #[inline]
    pub fn index(&self, h: usize, w: usize, d: usize) -> usize {
        h + self.dims[0] * (w + self.dims[1] * d)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let h = index % self.dims[0];
        let rest = index / self.dims[0];
        [h, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Grid equality: dims and spacing must agree; orientation is ignored.
    pub fn same_grid(&self, other: &Self) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch {
                left: Box::new(self.clone()),
                right: Box::new(other.clone()),
            })
        }
    }
}

impl fmt::Display for VolumeGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [h, w, d] = self.dims;
        let [sx, sy, sz] = self.spacing;
        write!(f, "{h}x{w}x{d} @ {sx}x{sy}x{sz} mm")
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

/// Integer label ids on a 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: VolumeGeometry,
    data: Vec<u16>,
    schema_id: Option<String>,
}

impl LabelVolume {
    pub fn new(geometry: VolumeGeometry, data: Vec<u16>) -> Result<Self> {
        check_len(geometry.num_voxels(), data.len())?;
        Ok(Self {
            geometry,
            data,
            schema_id: None,
        })
    }

    pub fn filled(geometry: VolumeGeometry, label: u16) -> Self {
        let data = vec![label; geometry.num_voxels()];
        Self {
            geometry,
            data,
            schema_id: None,
        }
    }

    /// Tags the volume with the identifier of the schema its ids live in.
    pub fn with_schema_id(mut self, schema_id: impl Into<String>) -> Self {
        self.schema_id = Some(schema_id.into());
        self
    }

    pub fn schema_id(&self) -> Option<&str> {
        self.schema_id.as_deref()
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    pub fn get(&self, h: usize, w: usize, d: usize) -> u16 {
        self.data[self.geometry.index(h, w, d)]
    }

    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Errors with the first voxel whose id is `>= limit`.
    pub fn check_labels_below(&self, limit: u32) -> Result<()> {
        match self.data.iter().position(|&l| u32::from(l) >= limit) {
            None => Ok(()),
            Some(voxel) => Err(Error::LabelOutOfRange {
                label: u32::from(self.data[voxel]),
                limit,
                voxel: Some(voxel),
            }),
        }
    }

    pub fn count_label(&self, label: u16) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }

    pub fn map_labels(&self, f: impl Fn(u16) -> u16) -> Self {
        Self {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&l| f(l)).collect(),
            schema_id: self.schema_id.clone(),
        }
    }
}

/// Real-valued 3D grid (image channels, uncertainty maps).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: VolumeGeometry,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        check_len(geometry.num_voxels(), data.len())?;
        Ok(Self { geometry, data })
    }

    pub fn constant(geometry: VolumeGeometry, value: f32) -> Self {
        let data = vec![value; geometry.num_voxels()];
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, h: usize, w: usize, d: usize) -> f32 {
        self.data[self.geometry.index(h, w, d)]
    }

    /// Whether every voxel holds the same bit pattern.
    pub fn is_constant(&self) -> bool {
        match self.data.first() {
            None => true,
            Some(first) => self.data.iter().all(|v| v.to_bits() == first.to_bits()),
        }
    }
}

/// Class scores of one model, class-major: `data[c * N + voxel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVolume {
    geometry: VolumeGeometry,
    num_classes: usize,
    data: Vec<f32>,
}

impl LogitVolume {
    pub fn new(geometry: VolumeGeometry, num_classes: usize, data: Vec<f32>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "logit volumes need at least 2 classes, got {num_classes}"
            )));
        }
        let expected = geometry
            .num_voxels()
            .checked_mul(num_classes)
            .ok_or_else(|| Error::InvalidGeometry("logit volume size overflows".into()))?;
        check_len(expected, data.len())?;
        Ok(Self {
            geometry,
            num_classes,
            data,
        })
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, class: usize) -> &[f32] {
        let n = self.geometry.num_voxels();
        &self.data[class * n..(class + 1) * n]
    }

    pub fn score(&self, class: usize, voxel: usize) -> f32 {
        self.data[class * self.geometry.num_voxels() + voxel]
    }
}

/// Decodes class scores to label ids. Ties go to the lowest class index.
///
/// NaN scores never win against a number.
pub fn argmax_labels(logits: &LogitVolume) -> LabelVolume {
    let n = logits.geometry.num_voxels();
    let mut best_score = logits.channel(0).to_vec();
    let mut best_class = vec![0u16; n];
    for class in 1..logits.num_classes {
        for (voxel, &s) in logits.channel(class).iter().enumerate() {
            if s > best_score[voxel] || (best_score[voxel].is_nan() && !s.is_nan()) {
                best_score[voxel] = s;
                best_class[voxel] = class as u16;
            }
        }
    }
    LabelVolume {
        geometry: logits.geometry.clone(),
        data: best_class,
        schema_id: None,
    }
}
