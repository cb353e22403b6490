//! Base and rater-specific label spaces.
//!
//! The base space is background `0` plus foreground regions `1..=F`. The
//! rater-specific space duplicates every foreground region once per rater and
//! keeps a single shared background, `R * F + 1` ids in total. Ids are laid
//! out region-major:
//!
//! ```text
//! id(f, r) = 1 + (f - 1) * R + r      f in 1..=F, r in 0..R
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

pub const BACKGROUND: u16 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    foreground_names: Vec<String>,
    num_raters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemapDirection {
    BaseToRater,
    RaterToBase,
}

impl LabelSchema {
    pub fn new(foreground_names: Vec<String>, num_raters: usize) -> Result<Self> {
        let schema = Self {
            foreground_names,
            num_raters,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Anterior / middle / posterior regions.
    pub fn three_region(num_raters: usize) -> Result<Self> {
        Self::new(
            ["Anterior", "Middle", "Posterior"]
                .map(String::from)
                .to_vec(),
            num_raters,
        )
    }

    /// Schema with generic region names `region1..regionF`.
    pub fn with_counts(num_foreground: usize, num_raters: usize) -> Result<Self> {
        Self::new(
            (1..=num_foreground).map(|f| format!("region{f}")).collect(),
            num_raters,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "label schema".into(),
            source,
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.foreground_names.is_empty() {
            return Err(Error::InvalidParameter(
                "schema needs at least one foreground label".into(),
            ));
        }
        if self.num_raters == 0 {
            return Err(Error::InvalidParameter(
                "schema needs at least one rater".into(),
            ));
        }
        if self.total_labels() > usize::from(u16::MAX) + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} rater-specific labels do not fit 16-bit ids",
                self.total_labels()
            )));
        }
        Ok(())
    }

    pub fn foreground_names(&self) -> &[String] {
        &self.foreground_names
    }

    pub fn num_foreground(&self) -> usize {
        self.foreground_names.len()
    }

    pub fn num_raters(&self) -> usize {
        self.num_raters
    }

    /// Size of the base space, background included.
    pub fn num_base_labels(&self) -> usize {
        self.num_foreground() + 1
    }

    /// Size of the rater-specific space: `R * F + 1`.
    pub fn total_labels(&self) -> usize {
        self.num_raters * self.num_foreground() + 1
    }

    /// Stable identifier, e.g. `F3xR4`.
    pub fn id(&self) -> String {
        format!("F{}xR{}", self.num_foreground(), self.num_raters)
    }

    fn check_rater(&self, rater_index: usize) -> Result<()> {
        if rater_index < self.num_raters {
            Ok(())
        } else {
            Err(Error::RaterOutOfRange {
                index: rater_index,
                num_raters: self.num_raters,
            })
        }
    }

    pub fn to_rater_label(&self, base_label: u16, rater_index: usize) -> Result<u16> {
        self.check_rater(rater_index)?;
        let f = usize::from(base_label);
        if f > self.num_foreground() {
            return Err(Error::LabelOutOfRange {
                label: base_label.into(),
                limit: self.num_base_labels() as u32,
                voxel: None,
            });
        }
        if f == 0 {
            return Ok(BACKGROUND);
        }
        Ok((1 + (f - 1) * self.num_raters + rater_index) as u16)
    }

    /// Inverse of [`to_rater_label`](Self::to_rater_label); background has no rater.
    pub fn collapse_to_base(&self, label: u16) -> Result<(u16, Option<usize>)> {
        let l = usize::from(label);
        if l >= self.total_labels() {
            return Err(Error::LabelOutOfRange {
                label: label.into(),
                limit: self.total_labels() as u32,
                voxel: None,
            });
        }
        if l == 0 {
            return Ok((BACKGROUND, None));
        }
        let k = l - 1;
        Ok(((k / self.num_raters + 1) as u16, Some(k % self.num_raters)))
    }

    /// Lookup table over the source space of `direction`.
    fn table(&self, rater_index: usize, direction: RemapDirection) -> Result<Vec<u16>> {
        self.check_rater(rater_index)?;
        match direction {
            RemapDirection::BaseToRater => (0..self.num_base_labels() as u16)
                .map(|b| self.to_rater_label(b, rater_index))
                .collect(),
            RemapDirection::RaterToBase => (0..self.total_labels())
                .map(|l| self.collapse_to_base(l as u16).map(|(b, _)| b))
                .collect(),
        }
    }

    /// Maps every voxel between the base and rater-specific spaces.
    ///
    /// Rater-to-base accepts the ids of any rater; `rater_index` is only validated.
    pub fn remap_volume(
        &self,
        volume: &LabelVolume,
        rater_index: usize,
        direction: RemapDirection,
    ) -> Result<LabelVolume> {
        let table = self.table(rater_index, direction)?;
        volume.check_labels_below(table.len() as u32)?;
        let target = match direction {
            RemapDirection::BaseToRater => self.id(),
            RemapDirection::RaterToBase => format!("{}-base", self.id()),
        };
        Ok(volume
            .map_labels(|l| table[usize::from(l)])
            .with_schema_id(target))
    }

    /// Rater-specific prediction collapsed to base ids.
    pub fn collapse_volume(&self, volume: &LabelVolume) -> Result<LabelVolume> {
        self.remap_volume(volume, 0, RemapDirection::RaterToBase)
    }
}
