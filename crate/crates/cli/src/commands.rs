use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use raterfuse::encoding::{
    build_codebook, build_input, channel_stats, zscore_normalize, ChannelRole,
};
use raterfuse::fusion::{weighted_majority_vote, Axis, VoteConfig};
use raterfuse::io::{
    read_json, read_label_volume, read_scalar_volume, report, write_json, write_volume,
};
use raterfuse::metrics::{
    confusion, dice, kappa_from_volumes, region_metrics, two_sample_ttest, volume_bounds,
    KappaMode, KappaOptions, KappaReport, TTestKind, TTestResult,
};
use raterfuse::phantom::{
    generate_phantom, moderate_styles, simulate_rater, synthetic_image, PhantomParams, RaterStyle,
};
use raterfuse::rng::derive_seed;
use raterfuse::{LabelSchema, LabelVolume, VolumeGeometry};

use crate::report::{config_hash, print_json, Invariant};
use crate::{
    BoundsArgs, EncodeArgs, InputSpace, IrrArgs, KappaModeArg, MetricsArgs, PhantomArgs,
    ProjectionAxis, TtestArgs, VoteArgs,
};

fn load_schema(path: &Path) -> Result<LabelSchema> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading schema {}", path.display()))?;
    Ok(LabelSchema::from_json(&text)?)
}

fn read_labels(paths: &[impl AsRef<Path>]) -> Result<Vec<LabelVolume>> {
    paths
        .iter()
        .map(|p| read_label_volume(p).map_err(Into::into))
        .collect()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Serialize)]
struct ChannelEntry {
    index: usize,
    role: ChannelRole,
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f32>,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct EncodeManifest<'a> {
    config_sha256: String,
    num_raters: usize,
    rater: usize,
    code: &'a [i8],
    dims: [usize; 3],
    spacing: [f32; 3],
    image_channels: usize,
    code_channels: usize,
    channels: Vec<ChannelEntry>,
}

pub fn encode(args: &EncodeArgs) -> Result<()> {
    let codebook = build_codebook(args.raters)?;
    let code = codebook.code(args.rater)?;
    let images = args
        .images
        .iter()
        .map(|p| read_scalar_volume(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let geometry = match images.first() {
        Some(first) => first.geometry().clone(),
        None => {
            let dims = args
                .dims
                .as_deref()
                .ok_or_else(|| anyhow!("--dims is required when no --image is given"))?;
            eprintln!("warning: no image channels given; the stack holds rater code channels only");
            VolumeGeometry::new(
                [dims[0], dims[1], dims[2]],
                [args.spacing[0], args.spacing[1], args.spacing[2]],
            )?
        }
    };
    let stack = build_input(&geometry, &images, args.rater, &codebook)?;
    let normalized = zscore_normalize(&stack);
    if normalized.code_channels() != stack.code_channels() {
        return Err(Invariant("normalization altered rater code channels".into()).into());
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut channels = Vec::new();
    for (index, channel) in normalized.channels().iter().enumerate() {
        let file = format!("channel_{index:02}.nii.gz");
        write_volume(channel, args.out.join(&file))?;
        let (mean, std) = channel_stats(stack.channels()[index].data());
        let role = normalized.role(index);
        channels.push(ChannelEntry {
            index,
            role,
            file,
            source: (role == ChannelRole::Image).then(|| args.images[index].display().to_string()),
            value: (role == ChannelRole::RaterCode).then(|| channel.data()[0]),
            mean,
            std,
        });
    }
    let manifest = EncodeManifest {
        config_sha256: config_hash("encode", args)?,
        num_raters: args.raters,
        rater: args.rater,
        code,
        dims: geometry.dims(),
        spacing: geometry.spacing(),
        image_channels: normalized.image_channels().len(),
        code_channels: normalized.code_channels().len(),
        channels,
    };
    write_json(&manifest, args.out.join("manifest.json"))?;
    print_json(&manifest)
}

#[derive(Serialize)]
struct LabelCount {
    label: u16,
    name: String,
    voxels: usize,
}

#[derive(Serialize)]
struct VoteSummary {
    config_sha256: String,
    schema: String,
    input_space: InputSpace,
    num_voters: usize,
    foreground_weight: u32,
    num_voxels: usize,
    unanimous_voxels: usize,
    label_counts: Vec<LabelCount>,
}

pub fn vote(args: &VoteArgs) -> Result<()> {
    let preds = read_labels(&args.preds)?;
    let schema = match &args.schema {
        Some(path) => load_schema(path)?,
        None => LabelSchema::three_region(preds.len())?,
    };
    let config = VoteConfig::new(args.wfg)?;
    let f = schema.num_foreground();
    let space = match args.input_space {
        InputSpace::Auto if preds.iter().all(|p| usize::from(p.max_label()) <= f) => {
            InputSpace::Base
        }
        InputSpace::Auto => InputSpace::Rater,
        explicit => explicit,
    };
    let base = match space {
        InputSpace::Rater => preds
            .iter()
            .map(|p| schema.collapse_volume(p))
            .collect::<raterfuse::Result<Vec<_>>>()?,
        _ => preds,
    };
    let (fused, disagreement) = weighted_majority_vote(&base, f, &config)?;
    write_volume(&fused, &args.out_label)?;
    write_volume(disagreement.scores(), &args.out_uncertainty)?;
    if let Some(path) = &args.out_projection {
        let axis = match args.projection_axis {
            ProjectionAxis::X => Axis::X,
            ProjectionAxis::Y => Axis::Y,
            ProjectionAxis::Z => Axis::Z,
        };
        write_volume(&disagreement.max_projection(axis), path)?;
    }

    let mut label_counts = vec![LabelCount {
        label: 0,
        name: "background".into(),
        voxels: fused.count_label(0),
    }];
    for (i, name) in schema.foreground_names().iter().enumerate() {
        let label = (i + 1) as u16;
        label_counts.push(LabelCount {
            label,
            name: name.to_lowercase(),
            voxels: fused.count_label(label),
        });
    }
    let num_voxels = fused.geometry().num_voxels();
    if label_counts.iter().map(|c| c.voxels).sum::<usize>() != num_voxels {
        return Err(Invariant("fused labels outside the base label space".into()).into());
    }
    print_json(&VoteSummary {
        config_sha256: config_hash("vote", args)?,
        schema: schema.id(),
        input_space: space,
        num_voters: disagreement.num_voters(),
        foreground_weight: config.foreground_weight(),
        num_voxels,
        unanimous_voxels: disagreement
            .scores()
            .data()
            .iter()
            .filter(|&&d| d == 0.0)
            .count(),
        label_counts,
    })
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let pred = read_label_volume(&args.pred)?;
    let reference = read_label_volume(&args.reference).context("reading reference")?;
    let schema = match &args.schema {
        Some(path) => load_schema(path)?,
        None => LabelSchema::three_region(1)?,
    };
    let regions = region_metrics(&pred, &reference, &schema)?;
    if let Some(r) = regions.iter().find(|r| r.in_bounds == Some(false)) {
        return Err(Invariant(format!(
            "relative volume of region {} lies outside its DSC bounds",
            r.region
        ))
        .into());
    }
    let case = args.case.clone().unwrap_or_else(|| {
        let name = file_name(&args.pred);
        [".nii.gz", ".nii", ".mlvr"]
            .iter()
            .find_map(|ext| name.strip_suffix(ext).map(str::to_string))
            .unwrap_or(name)
    });
    let rows: Vec<_> = regions.iter().map(|r| r.to_row(&case)).collect();
    match &args.out {
        Some(path) => report::write_csv(&rows, path)?,
        None => print!("{}", report::csv_string(&rows)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct IrrReport {
    config_sha256: String,
    mode: KappaModeArg,
    bbox: bool,
    #[serde(flatten)]
    kappa: KappaReport,
}

pub fn irr(args: &IrrArgs) -> Result<()> {
    let annots = read_labels(&args.annots)?;
    let schema = args.schema.as_deref().map(load_schema).transpose()?;
    let (mode, categories) = match args.mode {
        KappaModeArg::Binary => (KappaMode::BinaryForeground, None),
        KappaModeArg::Multiclass => (KappaMode::MultiClass, schema.map(|s| s.num_base_labels())),
    };
    let options = KappaOptions {
        restrict_to_bbox: args.bbox,
    };
    let report = IrrReport {
        config_sha256: config_hash("irr", args)?,
        mode: args.mode,
        bbox: args.bbox,
        kappa: kappa_from_volumes(&annots, mode, categories, options)?,
    };
    match &args.out {
        Some(path) => write_json(&report, path)?,
        None => print_json(&report)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct RaterSummary {
    file: String,
    style: RaterStyle,
    dsc_vs_truth: f64,
}

#[derive(Serialize)]
struct CaseSummary {
    case: String,
    seed: u64,
    num_branches: usize,
    foreground_voxels: usize,
    raters: Vec<RaterSummary>,
}

#[derive(Serialize)]
struct PhantomManifest<'a> {
    config_sha256: String,
    seed: u64,
    params: &'a PhantomParams,
    styles: Option<&'a [RaterStyle]>,
    cases: Vec<CaseSummary>,
}

fn phantom_case(
    args: &PhantomArgs,
    params: &PhantomParams,
    styles: Option<&[RaterStyle]>,
    index: usize,
) -> Result<CaseSummary> {
    let seed = derive_seed(args.seed, index as u64);
    let params = PhantomParams {
        seed,
        ..params.clone()
    };
    let phantom = generate_phantom(&params)?;
    let styles = match styles {
        None => moderate_styles(seed),
        Some(given) => given
            .iter()
            .enumerate()
            .map(|(r, s)| RaterStyle {
                seed: derive_seed(s.seed ^ seed, r as u64),
                ..*s
            })
            .collect(),
    };
    let case = format!("case_{index:03}");
    let dir = args.out_dir.join(&case);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_volume(&phantom.labels, dir.join("truth.nii.gz"))?;
    let image = synthetic_image(&phantom.labels, args.noise, derive_seed(seed, u64::MAX))?;
    write_volume(&image, dir.join("image.nii.gz"))?;
    let foreground: Vec<u16> = (1..=params.region_fractions.len() as u16).collect();
    let mut raters = Vec::with_capacity(styles.len());
    for (r, style) in styles.into_iter().enumerate() {
        let annotation = simulate_rater(&phantom, &style)?;
        let file = format!("rater_{r}.nii.gz");
        write_volume(&annotation, dir.join(&file))?;
        raters.push(RaterSummary {
            file,
            style,
            dsc_vs_truth: dice(&confusion(&annotation, &phantom.labels, &foreground)?).value,
        });
    }
    Ok(CaseSummary {
        case,
        seed,
        num_branches: phantom.num_branches(),
        foreground_voxels: phantom.labels.data().iter().filter(|&&l| l != 0).count(),
        raters,
    })
}

pub fn phantom(args: &PhantomArgs) -> Result<()> {
    let params: PhantomParams = match &args.params {
        Some(path) => read_json(path)?,
        None => PhantomParams::default(),
    };
    params.validate()?;
    let styles = args
        .styles
        .iter()
        .map(|p| {
            let style: RaterStyle = read_json(p)?;
            style.validate()?;
            Ok(style)
        })
        .collect::<Result<Vec<_>>>()?;
    let styles = (!styles.is_empty()).then_some(styles);
    if args.cases == 0 {
        bail!("--cases must be at least 1");
    }
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()?;
    let cases = pool.install(|| {
        (0..args.cases)
            .into_par_iter()
            .map(|i| phantom_case(args, &params, styles.as_deref(), i))
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = PhantomManifest {
        config_sha256: config_hash("phantom", &(args, &params, &styles))?,
        seed: args.seed,
        params: &params,
        styles: styles.as_deref(),
        cases,
    };
    write_json(&manifest, args.out_dir.join("manifest.json"))?;
    print_json(&manifest)
}

pub fn bounds(args: &BoundsArgs) -> Result<()> {
    let b = volume_bounds(args.dsc)?;
    print_json(&b)
}

fn read_column(path: &Path, column: Option<&str>, region: Option<&str>) -> Result<Vec<f64>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let col = match column {
        Some(name) => {
            position(name).ok_or_else(|| anyhow!("{}: no column named {name:?}", path.display()))?
        }
        None => match position("dsc") {
            Some(i) => i,
            None if headers.len() == 1 => 0,
            None => bail!(
                "{}: several columns and no `dsc`; pass --column",
                path.display()
            ),
        },
    };
    let region_col = match region {
        Some(_) => Some(
            position("region").ok_or_else(|| anyhow!("{}: no `region` column", path.display()))?,
        ),
        None => None,
    };
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if let (Some(rc), Some(want)) = (region_col, region) {
            if &record[rc] != want {
                continue;
            }
        }
        let cell = record[col].trim();
        let value: f64 = cell.parse().with_context(|| {
            format!(
                "{}: row {}: {cell:?} is not a number",
                path.display(),
                row + 2
            )
        })?;
        values.push(value);
    }
    Ok(values)
}

#[derive(Serialize)]
struct TtestReport {
    config_sha256: String,
    n_a: usize,
    n_b: usize,
    alpha: f64,
    #[serde(flatten)]
    result: TTestResult,
}

pub fn ttest(args: &TtestArgs) -> Result<()> {
    let column = args.column.as_deref();
    let region = args.region.as_deref();
    let a = read_column(&args.group_a, column, region)?;
    let b = read_column(&args.group_b, column, region)?;
    let kind = if args.welch {
        TTestKind::Welch
    } else {
        TTestKind::Student
    };
    let result = two_sample_ttest(&a, &b, kind, args.alpha)?;
    print_json(&TtestReport {
        config_sha256: config_hash("ttest", args)?,
        n_a: a.len(),
        n_b: b.len(),
        alpha: args.alpha,
        result,
    })
}
