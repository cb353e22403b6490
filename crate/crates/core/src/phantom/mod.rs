//! Synthetic ramified vessel phantoms and simulated rater styles.
//!
//! A phantom is a curved trunk tube with a recursive tree of straight branches
//! sprouting from evenly spaced trunk nodes. Each voxel inside a tube takes the
//! region label of the trunk arclength section its branch ultimately roots at.
//! All coordinates are in millimeters; voxel `(h, w, d)` sits at
//! `(h * sx, w * sy, d * sz)`.

pub mod distance;
mod style;

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{LabelVolume, ScalarVolume, VolumeGeometry};

pub use style::{moderate_styles, simulate_rater, RaterStyle};

type Vec3 = [f64; 3];

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Centerline of the trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trunk {
    /// Circular arc in the x-z plane at height `center_mm[1]`.
    Arc {
        center_mm: Vec3,
        radius_mm: f64,
        start_deg: f64,
        end_deg: f64,
    },
    Polyline {
        points_mm: Vec<Vec3>,
    },
}

impl Trunk {
    /// Dense centerline samples no further apart than `step` mm.
    fn sample(&self, step: f64) -> Result<Vec<Vec3>> {
        match self {
            Trunk::Arc {
                center_mm,
                radius_mm,
                start_deg,
                end_deg,
            } => {
                if radius_mm.is_nan() || *radius_mm <= 0.0 || start_deg == end_deg {
                    return Err(Error::InvalidParameter(
                        "trunk arc needs a positive radius and a non-empty angular span".into(),
                    ));
                }
                let span = (end_deg - start_deg).to_radians();
                let n = ((span.abs() * radius_mm / step).ceil() as usize).max(1);
                Ok((0..=n)
                    .map(|i| {
                        let t = start_deg.to_radians() + span * i as f64 / n as f64;
                        [
                            center_mm[0] + radius_mm * t.cos(),
                            center_mm[1],
                            center_mm[2] + radius_mm * t.sin(),
                        ]
                    })
                    .collect())
            }
            Trunk::Polyline { points_mm } => {
                if points_mm.len() < 2 {
                    return Err(Error::InvalidParameter(
                        "trunk polyline needs at least two points".into(),
                    ));
                }
                let mut out = vec![points_mm[0]];
                for pair in points_mm.windows(2) {
                    let len = norm(sub(pair[1], pair[0]));
                    let n = ((len / step).ceil() as usize).max(1);
                    for i in 1..=n {
                        out.push(add(
                            pair[0],
                            scale(sub(pair[1], pair[0]), i as f64 / n as f64),
                        ));
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub seed: u64,
    pub trunk: Trunk,
    pub radius_mm: f64,
    /// Radius multiplier per branching depth.
    pub radius_decay: f64,
    pub branch_depth: u32,
    pub branches_per_node: u32,
    /// Branching points spread evenly along the trunk.
    pub trunk_nodes: u32,
    pub branch_length_mm: f64,
    pub length_decay: f64,
    /// Half-angle of the cone around the parent direction.
    pub cone_angle_deg: f64,
    /// Arclength share of each trunk region, in label order.
    pub region_fractions: Vec<f64>,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            dims: [64, 32, 40],
            spacing: [0.5, 0.5, 1.0],
            seed: 0,
            trunk: Trunk::Arc {
                center_mm: [16.0, 8.0, 8.0],
                radius_mm: 13.0,
                start_deg: 170.0,
                end_deg: 10.0,
            },
            radius_mm: 1.0,
            radius_decay: 0.75,
            branch_depth: 2,
            branches_per_node: 2,
            trunk_nodes: 4,
            branch_length_mm: 6.0,
            length_decay: 0.7,
            cone_angle_deg: 35.0,
            region_fractions: vec![1.0 / 3.0; 3],
        }
    }
}

impl PhantomParams {
    pub fn geometry(&self) -> Result<VolumeGeometry> {
        VolumeGeometry::new(self.dims, self.spacing)
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = self.geometry()?;
        let invalid = |msg: String| Err(Error::InvalidParameter(msg));
        if self.region_fractions.is_empty()
            || self
                .region_fractions
                .iter()
                .any(|&f| f.is_nan() || f <= 0.0)
        {
            return invalid("region fractions must be positive".into());
        }
        let total: f64 = self.region_fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("region fractions sum to {total}, expected 1"));
        }
        if self.region_fractions.len() > usize::from(u16::MAX) {
            return invalid("too many regions".into());
        }
        if !(self.radius_decay > 0.0 && self.length_decay > 0.0) {
            return invalid("decay factors must be positive".into());
        }
        let min_spacing = geometry
            .spacing_f64()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let deepest = self.radius_mm * self.radius_decay.powi(self.branch_depth as i32);
        if deepest < min_spacing {
            return invalid(format!(
                "radius {deepest:.3} mm at depth {} is below one voxel ({min_spacing} mm)",
                self.branch_depth
            ));
        }
        if self.branch_depth > 0 && (self.branch_length_mm.is_nan() || self.branch_length_mm <= 0.0)
        {
            return invalid("branch length must be positive".into());
        }
        if !(0.0..=180.0).contains(&self.cone_angle_deg) {
            return invalid("cone angle must lie in [0, 180] degrees".into());
        }
        Ok(())
    }

    fn region_of(&self, fraction: f64) -> u16 {
        let mut acc = 0.0;
        for (i, f) in self.region_fractions.iter().enumerate() {
            acc += f;
            if fraction < acc {
                return (i + 1) as u16;
            }
        }
        self.region_fractions.len() as u16
    }
}

/// One tube piece: a capsule around the segment `a`-`b`.
#[derive(Debug, Clone)]
struct Segment {
    a: Vec3,
    b: Vec3,
    radius: f64,
    label: u16,
    branch: u32,
}

impl Segment {
    fn distance(&self, p: Vec3) -> f64 {
        let ab = sub(self.b, self.a);
        let len2 = dot(ab, ab);
        let t = if len2 == 0.0 {
            0.0
        } else {
            (dot(sub(p, self.a), ab) / len2).clamp(0.0, 1.0)
        };
        norm(sub(p, add(self.a, scale(ab, t))))
    }
}

/// Ground-truth phantom with its branch bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub labels: LabelVolume,
    /// Per voxel: 0 for trunk or background, otherwise the branch id.
    pub branch_ids: Vec<u32>,
    /// `branch_parents[id - 1]` is the parent branch id (0 = trunk).
    pub branch_parents: Vec<u32>,
}

impl Phantom {
    /// A phantom without branch structure; branch dropout has nothing to drop.
    pub fn from_labels(labels: LabelVolume) -> Self {
        let n = labels.geometry().num_voxels();
        Self {
            labels,
            branch_ids: vec![0; n],
            branch_parents: Vec::new(),
        }
    }

    pub fn num_branches(&self) -> usize {
        self.branch_parents.len()
    }
}

struct Builder<'a> {
    params: &'a PhantomParams,
    extent: Vec3,
    rng: rng::Rng,
    segments: Vec<Segment>,
    parents: Vec<u32>,
}

impl Builder<'_> {
    fn inside(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|k| p[k] - margin >= 0.0 && p[k] + margin <= self.extent[k])
    }

    /// Unit vector within the cone of half-angle `cone` around `axis`.
    fn cone_direction(&mut self, axis: Vec3, cone: f64) -> Vec3 {
        let axis = normalize(axis);
        let helper = if axis[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let u = normalize(cross(axis, helper));
        let v = cross(axis, u);
        let theta = self.rng.random_range(0.0..=cone);
        let phi = self.rng.random_range(0.0..2.0 * PI);
        let radial = add(scale(u, phi.cos()), scale(v, phi.sin()));
        normalize(add(scale(axis, theta.cos()), scale(radial, theta.sin())))
    }

    fn grow(&mut self, origin: Vec3, axis: Vec3, depth: u32, parent: u32, label: u16) {
        let p = self.params;
        if depth > p.branch_depth {
            return;
        }
        let radius = p.radius_mm * p.radius_decay.powi(depth as i32);
        let length = p.branch_length_mm * p.length_decay.powi(depth as i32 - 1);
        let cone = p.cone_angle_deg.to_radians();
        for _ in 0..p.branches_per_node {
            let dir = self.cone_direction(axis, cone);
            // shorten until the capsule fits the volume
            let mut len = length;
            while len > radius && !self.inside(add(origin, scale(dir, len)), radius) {
                len *= 0.9;
            }
            if len <= radius {
                continue;
            }
            let end = add(origin, scale(dir, len));
            self.parents.push(parent);
            let id = self.parents.len() as u32;
            self.segments.push(Segment {
                a: origin,
                b: end,
                radius,
                label,
                branch: id,
            });
            self.grow(end, dir, depth + 1, id, label);
        }
    }
}

/// Voxelizes a phantom. Deterministic in `params` (including the seed).
pub fn generate_phantom(params: &PhantomParams) -> Result<Phantom> {
    params.validate()?;
    let geometry = params.geometry()?;
    let spacing = geometry.spacing_f64();
    let extent: Vec3 = std::array::from_fn(|k| (params.dims[k] - 1) as f64 * spacing[k]);
    let min_spacing = spacing.into_iter().fold(f64::INFINITY, f64::min);

    let centerline = params.trunk.sample(min_spacing * 0.5)?;
    let mut builder = Builder {
        params,
        extent,
        rng: rng::seeded(params.seed),
        segments: Vec::new(),
        parents: Vec::new(),
    };
    for p in &centerline {
        if !builder.inside(*p, params.radius_mm) {
            return Err(Error::InvalidParameter(format!(
                "trunk tube at {p:?} mm exceeds the volume extent {extent:?} mm"
            )));
        }
    }

    let mut arclength = vec![0.0];
    for pair in centerline.windows(2) {
        arclength.push(arclength.last().unwrap() + norm(sub(pair[1], pair[0])));
    }
    let total = *arclength.last().unwrap();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("trunk has zero length".into()));
    }
    for (i, pair) in centerline.windows(2).enumerate() {
        let mid = 0.5 * (arclength[i] + arclength[i + 1]) / total;
        builder.segments.push(Segment {
            a: pair[0],
            b: pair[1],
            radius: params.radius_mm,
            label: params.region_of(mid),
            branch: 0,
        });
    }

    if params.branch_depth > 0 {
        for node in 0..params.trunk_nodes {
            let target = total * (node as f64 + 1.0) / (params.trunk_nodes as f64 + 1.0);
            let i = arclength
                .partition_point(|&s| s < target)
                .clamp(1, centerline.len() - 1);
            let origin = centerline[i];
            let tangent = normalize(sub(centerline[i], centerline[i - 1]));
            let label = params.region_of(target / total);
            // depth-1 branches leave roughly perpendicular to the trunk
            let helper = if tangent[1].abs() < 0.9 {
                [0.0, 1.0, 0.0]
            } else {
                [1.0, 0.0, 0.0]
            };
            let base = normalize(cross(tangent, helper));
            let phi = builder.rng.random_range(0.0..2.0 * PI);
            let side = normalize(add(
                scale(base, phi.cos()),
                scale(cross(tangent, base), phi.sin()),
            ));
            builder.grow(origin, side, 1, 0, label);
        }
    }

    let n = geometry.num_voxels();
    let mut best = vec![f64::INFINITY; n];
    let mut labels = vec![0u16; n];
    let mut branch_ids = vec![0u32; n];
    for seg in &builder.segments {
        let lo: [usize; 3] = std::array::from_fn(|k| {
            let v = ((seg.a[k].min(seg.b[k]) - seg.radius) / spacing[k]).floor();
            v.max(0.0) as usize
        });
        let hi: [usize; 3] = std::array::from_fn(|k| {
            let v = ((seg.a[k].max(seg.b[k]) + seg.radius) / spacing[k]).ceil();
            (v.max(0.0) as usize).min(params.dims[k] - 1)
        });
        for d in lo[2]..=hi[2] {
            for w in lo[1]..=hi[1] {
                for h in lo[0]..=hi[0] {
                    let p = [
                        h as f64 * spacing[0],
                        w as f64 * spacing[1],
                        d as f64 * spacing[2],
                    ];
                    let dist = seg.distance(p);
                    let idx = geometry.index(h, w, d);
                    if dist <= seg.radius && dist < best[idx] {
                        best[idx] = dist;
                        labels[idx] = seg.label;
                        branch_ids[idx] = seg.branch;
                    }
                }
            }
        }
    }
    Ok(Phantom {
        labels: LabelVolume::new(geometry, labels)?,
        branch_ids,
        branch_parents: builder.parents,
    })
}

/// Flat synthetic intensity channel: 1 inside vessels, 0 outside, plus Gaussian noise.
pub fn synthetic_image(labels: &LabelVolume, noise_sigma: f64, seed: u64) -> Result<ScalarVolume> {
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    let mut rng = rng::seeded(seed);
    let data = labels
        .data()
        .iter()
        .map(|&l| (if l != 0 { 1.0 } else { 0.0 } + noise.sample(&mut rng)) as f32)
        .collect();
    ScalarVolume::new(labels.geometry().clone(), data)
}
