//! Rater-conditioned network inputs.
//!
//! Each rater gets a zero-centered one-hot code: rater `i` owns channel
//! `i / 2` with value `+1` for even `i` and `-1` for odd `i`. The code is
//! broadcast into constant channels appended after the image channels. Z-score
//! normalization must skip those channels, otherwise every code collapses to 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{ScalarVolume, VolumeGeometry};

const STD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RaterCodebook {
    num_raters: usize,
    num_channels: usize,
    codes: Vec<Vec<i8>>,
}

impl RaterCodebook {
    pub fn num_raters(&self) -> usize {
        self.num_raters
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn codes(&self) -> &[Vec<i8>] {
        &self.codes
    }

    pub fn code(&self, rater_index: usize) -> Result<&[i8]> {
        self.codes
            .get(rater_index)
            .map(Vec::as_slice)
            .ok_or(Error::RaterOutOfRange {
                index: rater_index,
                num_raters: self.num_raters,
            })
    }
}

/// Builds the code table for `num_raters` raters using `ceil(R/2)` channels.
///
/// For odd R the last channel only carries `+1`, so the codes do not sum to zero.
pub fn build_codebook(num_raters: usize) -> Result<RaterCodebook> {
    if num_raters == 0 {
        return Err(Error::InvalidParameter(
            "at least one rater is required".into(),
        ));
    }
    let num_channels = num_raters.div_ceil(2);
    let codes = (0..num_raters)
        .map(|i| {
            let mut code = vec![0i8; num_channels];
            code[i / 2] = if i % 2 == 0 { 1 } else { -1 };
            code
        })
        .collect();
    Ok(RaterCodebook {
        num_raters,
        num_channels,
        codes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Image,
    RaterCode,
}

/// Image channels followed by constant rater-code channels.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    geometry: VolumeGeometry,
    channels: Vec<ScalarVolume>,
    rater_channel_start: usize,
}

impl InputStack {
    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn channels(&self) -> &[ScalarVolume] {
        &self.channels
    }

    pub fn rater_channel_start(&self) -> usize {
        self.rater_channel_start
    }

    pub fn image_channels(&self) -> &[ScalarVolume] {
        &self.channels[..self.rater_channel_start]
    }

    pub fn code_channels(&self) -> &[ScalarVolume] {
        &self.channels[self.rater_channel_start..]
    }

    pub fn role(&self, channel: usize) -> ChannelRole {
        if channel < self.rater_channel_start {
            ChannelRole::Image
        } else {
            ChannelRole::RaterCode
        }
    }
}

/// Appends the code channels of `rater_index` to the image channels.
///
/// `geometry` is explicit so that a stack can be built without any image
/// channel; every image channel must sit on that grid.
pub fn build_input(
    geometry: &VolumeGeometry,
    image_channels: &[ScalarVolume],
    rater_index: usize,
    codebook: &RaterCodebook,
) -> Result<InputStack> {
    for channel in image_channels {
        geometry.ensure_same_grid(channel.geometry())?;
    }
    let code = codebook.code(rater_index)?;
    let mut channels = image_channels.to_vec();
    let rater_channel_start = channels.len();
    channels.extend(
        code.iter()
            .map(|&c| ScalarVolume::constant(geometry.clone(), f32::from(c))),
    );
    Ok(InputStack {
        geometry: geometry.clone(),
        channels,
        rater_channel_start,
    })
}

/// Mean and population standard deviation, summed in canonical voxel order.
pub fn channel_stats(data: &[f32]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = data
        .iter()
        .map(|&x| {
            let d = f64::from(x) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Per-channel z-scoring of the image channels; code channels pass through untouched.
pub fn zscore_normalize(stack: &InputStack) -> InputStack {
    let channels = stack
        .channels
        .iter()
        .enumerate()
        .map(|(i, channel)| {
            if stack.role(i) == ChannelRole::RaterCode {
                return channel.clone();
            }
            let (mean, std) = channel_stats(channel.data());
            let data = if std < STD_EPSILON {
                vec![0.0; channel.data().len()]
            } else {
                channel
                    .data()
                    .iter()
                    .map(|&x| ((f64::from(x) - mean) / std) as f32)
                    .collect()
            };
            ScalarVolume::new(channel.geometry().clone(), data)
                .expect("normalization preserves length")
        })
        .collect();
    InputStack {
        geometry: stack.geometry.clone(),
        channels,
        rater_channel_start: stack.rater_channel_start,
    }
}
