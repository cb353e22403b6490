//! Evaluation: confusion counts, Dice, relative predicted volume and its
//! Dice-derived bounds, Fleiss' kappa, and two-sample t-tests.
//!
//! With `TP + FN` normalized to one, `DSC = 2 TP / (1 + TP + FP)` and
//! `V_rel = TP + FP = 2 TP / DSC - 1`. Since `0 <= FP` and `TP <= 1`:
//!
//! ```text
//! 2 / (2 - DSC) - 1  <=  V_rel  <=  2 / DSC - 1
//! ```

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::schema::LabelSchema;
use crate::volume::LabelVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn new(true_pos: u64, false_pos: u64, false_neg: u64, true_neg: u64) -> Self {
        Self {
            true_pos,
            false_pos,
            false_neg,
            true_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn predicted(&self) -> u64 {
        self.true_pos + self.false_pos
    }

    pub fn reference(&self) -> u64 {
        self.true_pos + self.false_neg
    }

    /// Prediction and reference exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            false_pos: self.false_neg,
            false_neg: self.false_pos,
            ..*self
        }
    }

    /// Exact integer form of the volume bounds. `None` when the reference is empty.
    ///
    /// Upper: `TP (TP + FP) <= (TP + FN)(TP + FN + FP)`.
    /// Lower: `TP (TP + FN) <= (TP + FP)(TP + FN + FP)`.
    pub fn within_volume_bounds(&self) -> Option<bool> {
        if self.reference() == 0 {
            return None;
        }
        let tp = u128::from(self.true_pos);
        let fp = u128::from(self.false_pos);
        let fneg = u128::from(self.false_neg);
        let union = tp + fp + fneg;
        Some(tp * (tp + fp) <= (tp + fneg) * union && tp * (tp + fneg) <= (tp + fp) * union)
    }
}

/// Binarizes both volumes by membership in `label_set` and counts agreement.
pub fn confusion(
    pred: &LabelVolume,
    reference: &LabelVolume,
    label_set: &[u16],
) -> Result<ConfusionCounts> {
    pred.geometry().ensure_same_grid(reference.geometry())?;
    let mut member = [false; 1 << 16];
    for &l in label_set {
        member[usize::from(l)] = true;
    }
    let mut c = ConfusionCounts::default();
    for (&p, &r) in pred.data().iter().zip(reference.data()) {
        match (member[usize::from(p)], member[usize::from(r)]) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dice {
    pub value: f64,
    /// Both prediction and reference were empty; `value` is 1 by convention.
    pub both_empty: bool,
}

/// `2 TP / (2 TP + FN + FP)`.
pub fn dice(c: &ConfusionCounts) -> Dice {
    let denom = 2 * c.true_pos + c.false_neg + c.false_pos;
    if denom == 0 {
        return Dice {
            value: 1.0,
            both_empty: true,
        };
    }
    Dice {
        value: (2 * c.true_pos) as f64 / denom as f64,
        both_empty: false,
    }
}

/// Predicted volume over reference volume, `(TP + FP) / (TP + FN)`.
pub fn relative_volume(c: &ConfusionCounts) -> Result<f64> {
    if c.reference() == 0 {
        return Err(Error::Undefined(
            "relative volume needs a non-empty reference".into(),
        ));
    }
    Ok(c.predicted() as f64 / c.reference() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeBounds {
    pub dsc: f64,
    pub lower: f64,
    pub upper: f64,
}

impl VolumeBounds {
    pub fn contains(&self, relative_volume: f64) -> bool {
        self.lower <= relative_volume && relative_volume <= self.upper
    }
}

pub fn volume_bounds(dsc: f64) -> Result<VolumeBounds> {
    if !(dsc > 0.0 && dsc <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "volume bounds need 0 < dsc <= 1, got {dsc}"
        )));
    }
    Ok(VolumeBounds {
        dsc,
        // same as 2/(2-dsc) - 1 and 2/dsc - 1 without the cancellation at small dsc
        lower: dsc / (2.0 - dsc),
        upper: (2.0 - dsc) / dsc,
    })
}

/// Landis & Koch agreement band.
pub fn interpret_kappa(kappa: f64) -> &'static str {
    if kappa < 0.0 {
        "poor"
    } else if kappa <= 0.2 {
        "slight"
    } else if kappa <= 0.4 {
        "fair"
    } else if kappa <= 0.6 {
        "moderate"
    } else if kappa <= 0.8 {
        "substantial"
    } else {
        "almost perfect"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    /// `None` when expected agreement is 1 and kappa is undefined.
    pub kappa: Option<f64>,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub num_items: u64,
    pub num_raters: usize,
    pub num_categories: usize,
    pub category_proportions: Vec<f64>,
    pub interpretation: Option<&'static str>,
}

impl KappaReport {
    pub fn value(&self) -> Result<f64> {
        self.kappa.ok_or_else(|| {
            Error::Undefined("kappa is undefined: all ratings fall in one category".into())
        })
    }
}

/// Streaming Fleiss accumulator over per-item category counts.
///
/// Sums stay in integers so the result is independent of item order.
struct FleissAccumulator {
    num_raters: usize,
    num_items: u64,
    sum_sq: u128,
    totals: Vec<u64>,
}

impl FleissAccumulator {
    fn new(num_raters: usize, num_categories: usize) -> Self {
        Self {
            num_raters,
            num_items: 0,
            sum_sq: 0,
            totals: vec![0; num_categories],
        }
    }

    fn add_item(&mut self, counts: &[u32]) {
        self.num_items += 1;
        for (total, &n) in self.totals.iter_mut().zip(counts) {
            *total += u64::from(n);
            self.sum_sq += u128::from(n) * u128::from(n);
        }
    }

    fn finish(self) -> KappaReport {
        let n = self.num_items as f64;
        let r = self.num_raters as f64;
        let ratings = n * r;
        let observed = (self.sum_sq as f64 - ratings) / (ratings * (r - 1.0));
        let proportions: Vec<f64> = self.totals.iter().map(|&t| t as f64 / ratings).collect();
        let expected: f64 = proportions.iter().map(|p| p * p).sum();
        // P_e reaches 1 only when one category holds every rating
        let degenerate = self.totals.iter().filter(|&&t| t > 0).count() <= 1;
        let kappa = (!degenerate).then(|| (observed - expected) / (1.0 - expected));
        KappaReport {
            kappa,
            observed_agreement: observed,
            expected_agreement: expected,
            num_items: self.num_items,
            num_raters: self.num_raters,
            num_categories: self.totals.len(),
            category_proportions: proportions,
            interpretation: kappa.map(interpret_kappa),
        }
    }
}

/// Fleiss' kappa over an items x raters matrix of category ids.
pub fn fleiss_kappa(ratings: &[Vec<u16>], num_categories: usize) -> Result<KappaReport> {
    let first = ratings
        .first()
        .ok_or(Error::EmptyInput("kappa needs at least one item"))?;
    let num_raters = first.len();
    if num_raters < 2 {
        return Err(Error::InvalidParameter(format!(
            "kappa needs at least 2 raters, got {num_raters}"
        )));
    }
    let mut acc = FleissAccumulator::new(num_raters, num_categories);
    let mut counts = vec![0u32; num_categories];
    for (item, row) in ratings.iter().enumerate() {
        if row.len() != num_raters {
            return Err(Error::InvalidParameter(format!(
                "item {item} has {} ratings, expected {num_raters}",
                row.len()
            )));
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for &category in row {
            let slot = counts
                .get_mut(usize::from(category))
                .ok_or(Error::LabelOutOfRange {
                    label: category.into(),
                    limit: num_categories as u32,
                    voxel: Some(item),
                })?;
            *slot += 1;
        }
        acc.add_item(&counts);
    }
    Ok(acc.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// Background vs. all foreground labels merged.
    BinaryForeground,
    MultiClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KappaOptions {
    /// Restrict items to the bounding box of the union of all foreground.
    pub restrict_to_bbox: bool,
}

/// Fleiss' kappa with voxels as items and annotations as raters.
///
/// Multi-class mode uses `num_categories` when given, else `max label + 1`.
pub fn kappa_from_volumes(
    annotations: &[LabelVolume],
    mode: KappaMode,
    num_categories: Option<usize>,
    options: KappaOptions,
) -> Result<KappaReport> {
    if annotations.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "kappa needs at least 2 annotations, got {}",
            annotations.len()
        )));
    }
    let geometry = annotations[0].geometry();
    for a in annotations {
        geometry.ensure_same_grid(a.geometry())?;
    }
    let k = match mode {
        KappaMode::BinaryForeground => 2,
        KappaMode::MultiClass => {
            let max = annotations.iter().map(|a| a.max_label()).max().unwrap_or(0);
            let needed = usize::from(max) + 1;
            match num_categories {
                Some(k) if k < needed => {
                    return Err(Error::LabelOutOfRange {
                        label: max.into(),
                        limit: k as u32,
                        voxel: None,
                    })
                }
                Some(k) => k,
                None => needed.max(2),
            }
        }
    };
    let category = |l: u16| match mode {
        KappaMode::BinaryForeground => usize::from(l != 0),
        KappaMode::MultiClass => usize::from(l),
    };

    let voxels: Box<dyn Iterator<Item = usize>> = if options.restrict_to_bbox {
        match foreground_bbox(annotations) {
            Some((lo, hi)) => {
                let g = geometry.clone();
                Box::new((0..g.num_voxels()).filter(move |&i| {
                    let c = g.coords(i);
                    (0..3).all(|a| lo[a] <= c[a] && c[a] <= hi[a])
                }))
            }
            None => Box::new(std::iter::empty()),
        }
    } else {
        Box::new(0..geometry.num_voxels())
    };

    let mut acc = FleissAccumulator::new(annotations.len(), k);
    let mut counts = vec![0u32; k];
    for voxel in voxels {
        counts.iter_mut().for_each(|c| *c = 0);
        for a in annotations {
            counts[category(a.data()[voxel])] += 1;
        }
        acc.add_item(&counts);
    }
    if acc.num_items == 0 {
        // no foreground anywhere, so the bounding box is empty
        return Ok(KappaReport {
            kappa: None,
            observed_agreement: 1.0,
            expected_agreement: 1.0,
            num_items: 0,
            num_raters: annotations.len(),
            num_categories: k,
            category_proportions: vec![0.0; k],
            interpretation: None,
        });
    }
    Ok(acc.finish())
}

fn foreground_bbox(volumes: &[LabelVolume]) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for v in volumes {
        for (i, &l) in v.data().iter().enumerate() {
            if l != 0 {
                any = true;
                let c = v.geometry().coords(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
            }
        }
    }
    any.then_some((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled-variance Student test.
    #[default]
    Student,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    pub kind: TTestKind,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub significant: bool,
}

pub const DEFAULT_ALPHA: f64 = 0.05;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided two-sample t-test, significant when `p < alpha`.
pub fn two_sample_ttest(
    group_a: &[f64],
    group_b: &[f64],
    kind: TTestKind,
    alpha: f64,
) -> Result<TTestResult> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "each group needs at least 2 samples, got {} and {}",
            group_a.len(),
            group_b.len()
        )));
    }
    if group_a.iter().chain(group_b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let (mean_a, var_a) = mean_var(group_a);
    let (mean_b, var_b) = mean_var(group_b);
    if var_a == 0.0 && var_b == 0.0 {
        return Err(Error::Undefined(
            "t statistic undefined: both groups have zero variance".into(),
        ));
    }
    let (t, df) = match kind {
        TTestKind::Student => {
            let df = na + nb - 2.0;
            let pooled = ((na - 1.0) * var_a + (nb - 1.0) * var_b) / df;
            (
                (mean_a - mean_b) / (pooled * (1.0 / na + 1.0 / nb)).sqrt(),
                df,
            )
        }
        TTestKind::Welch => {
            let (sa, sb) = (var_a / na, var_b / nb);
            let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            ((mean_a - mean_b) / (sa + sb).sqrt(), df)
        }
    };
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidParameter(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTestResult {
        kind,
        t,
        df,
        p,
        mean_a,
        mean_b,
        significant: p < alpha,
    })
}

/// Metrics of one region (or the merged foreground) of one case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub region: String,
    pub counts: ConfusionCounts,
    pub dsc: f64,
    pub dsc_both_empty: bool,
    pub v_rel: Option<f64>,
    pub v_mm3: f64,
    pub bounds: Option<VolumeBounds>,
    pub in_bounds: Option<bool>,
}

/// One CSV row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub case: String,
    pub region: String,
    pub dsc: f64,
    pub v_rel: Option<f64>,
    pub v_mm3: f64,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub in_bounds: Option<bool>,
}

impl RegionMetrics {
    pub fn compute(
        region: impl Into<String>,
        pred: &LabelVolume,
        reference: &LabelVolume,
        label_set: &[u16],
    ) -> Result<Self> {
        let counts = confusion(pred, reference, label_set)?;
        let d = dice(&counts);
        let v_rel = relative_volume(&counts).ok();
        // both-empty regions score 1 by convention but have no volume ratio to bound
        let bounds = if d.value > 0.0 && !d.both_empty {
            Some(volume_bounds(d.value)?)
        } else {
            None
        };
        Ok(Self {
            region: region.into(),
            counts,
            dsc: d.value,
            dsc_both_empty: d.both_empty,
            v_rel,
            v_mm3: counts.predicted() as f64 * pred.geometry().voxel_volume_mm3(),
            bounds,
            in_bounds: counts.within_volume_bounds(),
        })
    }

    pub fn to_row(&self, case: &str) -> MetricsRow {
        MetricsRow {
            case: case.to_string(),
            region: self.region.clone(),
            dsc: self.dsc,
            v_rel: self.v_rel,
            v_mm3: self.v_mm3,
            bound_lower: self.bounds.map(|b| b.lower),
            bound_upper: self.bounds.map(|b| b.upper),
            in_bounds: self.in_bounds,
        }
    }
}

/// Per-region rows followed by the merged `foreground` row.
pub fn region_metrics(
    pred: &LabelVolume,
    reference: &LabelVolume,
    schema: &LabelSchema,
) -> Result<Vec<RegionMetrics>> {
    let limit = schema.num_base_labels() as u32;
    pred.check_labels_below(limit)?;
    reference.check_labels_below(limit)?;
    let mut out = Vec::with_capacity(schema.num_foreground() + 1);
    for (i, name) in schema.foreground_names().iter().enumerate() {
        out.push(RegionMetrics::compute(
            name.to_lowercase(),
            pred,
            reference,
            &[(i + 1) as u16],
        )?);
    }
    let all: Vec<u16> = (1..=schema.num_foreground() as u16).collect();
    out.push(RegionMetrics::compute("foreground", pred, reference, &all)?);
    Ok(out)
}
