//! Exact Euclidean distance transform with feature (nearest-voxel) tracking,
//! separable over the three axes with per-axis voxel spacing.
//!
//! Lower envelope of parabolas per line, after Felzenszwalb & Huttenlocher.

use crate::volume::VolumeGeometry;

pub const NO_FEATURE: usize = usize::MAX;

/// Squared distance in mm² to the nearest feature voxel, and that voxel's index.
///
/// Voxels are infinitely far (and map to [`NO_FEATURE`]) when the mask is empty.
pub struct DistanceField {
    pub dist_sq: Vec<f64>,
    pub nearest: Vec<usize>,
}

pub fn distance_transform(geometry: &VolumeGeometry, is_feature: &[bool]) -> DistanceField {
    let n = geometry.num_voxels();
    debug_assert_eq!(is_feature.len(), n);
    let mut dist_sq: Vec<f64> = is_feature
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let mut nearest: Vec<usize> = (0..n)
        .map(|i| if is_feature[i] { i } else { NO_FEATURE })
        .collect();

    let dims = geometry.dims();
    let spacing = geometry.spacing_f64();
    let strides = [1, dims[0], dims[0] * dims[1]];

    let mut line_f = Vec::new();
    let mut line_id = Vec::new();
    let mut out_f = Vec::new();
    let mut out_id = Vec::new();
    let mut env = Envelope::default();
    for axis in 0..3 {
        let len = dims[axis];
        let stride = strides[axis];
        let (o1, o2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for a in 0..dims[o1] {
            for b in 0..dims[o2] {
                let start = a * strides[o1] + b * strides[o2];
                line_f.clear();
                line_id.clear();
                for k in 0..len {
                    let idx = start + k * stride;
                    line_f.push(dist_sq[idx]);
                    line_id.push(nearest[idx]);
                }
                env.transform(&line_f, &line_id, spacing[axis], &mut out_f, &mut out_id);
                for k in 0..len {
                    let idx = start + k * stride;
                    dist_sq[idx] = out_f[k];
                    nearest[idx] = out_id[k];
                }
            }
        }
    }
    DistanceField { dist_sq, nearest }
}

#[derive(Default)]
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn transform(
        &mut self,
        f: &[f64],
        ids: &[usize],
        spacing: f64,
        out_f: &mut Vec<f64>,
        out_id: &mut Vec<usize>,
    ) {
        let len = f.len();
        out_f.clear();
        out_id.clear();
        self.vertices.clear();
        self.bounds.clear();
        let pos = |q: usize| q as f64 * spacing;
        for q in 0..len {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                match self.vertices.last() {
                    None => {
                        self.vertices.push(q);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&v) => {
                        let (xq, xv) = (pos(q), pos(v));
                        let s = ((f[q] + xq * xq) - (f[v] + xv * xv)) / (2.0 * (xq - xv));
                        if s <= *self.bounds.last().unwrap() {
                            self.vertices.pop();
                            self.bounds.pop();
                        } else {
                            self.vertices.push(q);
                            self.bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if self.vertices.is_empty() {
            out_f.extend(std::iter::repeat_n(f64::INFINITY, len));
            out_id.extend(std::iter::repeat_n(NO_FEATURE, len));
            return;
        }
        let mut k = 0;
        for q in 0..len {
            let x = pos(q);
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let v = self.vertices[k];
            let dx = x - pos(v);
            out_f.push(dx * dx + f[v]);
            out_id.push(ids[v]);
        }
    }
}
