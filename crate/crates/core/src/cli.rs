//! Command-line front end. `main` returns the process exit code: 0 on
//! success, 1 on usage or configuration errors, 2 on data, format and
//! runtime errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{run_grid, speedup_report, times_csv, BenchConfig, Environment};
use crate::error::{Error, Result};
use crate::image::{binarize_mask, Image, Mask};
use crate::io::{
    export_phantoms, export_variants, load_image, load_phantom_dir, load_variant, pair_datasets, write_mask_pgm,
    write_pgm, ImageFormat, PgmDepth, RunManifest,
};
use crate::model::{build_classifier, load_checkpoint, save_checkpoint, ClassifierConfig};
use crate::phantom::{generate_dataset, PhantomConfig};
use crate::tensor::Exec;
use crate::train::{
    render_svg, run_experiment, split, train_classifier_model, train_phantom_segmenter, train_segmenter, write_curves,
    Hyper, Subject, TrainingCurve,
};
use crate::variants::{build_variant_sets, predict_masks, MaskParams, Variant};

pub const WORKERS_ENV: &str = "CXRB_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "cxrb", version, about = "Chest radiograph phantom pipeline")]
struct Cli {
    /// Worker threads for the tensor kernels (default: $CXRB_WORKERS or 1).
    /// `bench` takes a comma-separated list of counts to compare.
    #[arg(long, global = true, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    /// JSON file with `phantom`, `hyper`, `segmenter`, `mask`, `raw` and `bench` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset.
    Phantom(PhantomArgs),
    /// Train the lung segmenter on a phantom directory.
    TrainSeg(TrainSegArgs),
    /// Predict lung masks for PGM/raw images.
    Segment(SegmentArgs),
    /// Build the four preprocessing variants.
    Variants(VariantsArgs),
    /// Train the classifier on one variant.
    TrainCls(TrainClsArgs),
    /// Run the full four-variant experiment on fresh phantoms.
    Experiment(ExperimentArgs),
    /// Time training steps over image size, batch size and workers.
    Bench(BenchArgs),
    /// Render curve CSVs to an SVG overlay.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 247)]
    n: usize,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl HyperArgs {
    fn apply(&self, mut h: Hyper) -> Hyper {
        if let Some(v) = self.epochs {
            h.epochs = v;
        }
        if let Some(v) = self.batch {
            h.batch_size = v;
        }
        if let Some(v) = self.lr {
            h.lr = v;
        }
        if let Some(v) = self.momentum {
            h.momentum = v;
        }
        if let Some(v) = self.val_fraction {
            h.val_fraction = v;
        }
        if let Some(v) = self.seed {
            h.seed = v;
        }
        h
    }
}

#[derive(Args, Debug)]
struct TrainSegArgs {
    /// Phantom directory written by `phantom`.
    #[arg(long)]
    data: PathBuf,
    /// Train on the bone-free images instead of the raw ones.
    #[arg(long)]
    nobones: bool,
    /// Stop once validation Dice reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory (checkpoint, curve, manifest).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    model: PathBuf,
    /// A PGM/raw file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Decode inputs as headerless raw using the `raw` config section.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VariantsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Phantom directory.
    #[arg(long, conflicts_with_all = ["bones", "nobones"])]
    data: Option<PathBuf>,
    /// Directory of images with bones (paired with --nobones by file stem).
    #[arg(long, requires = "nobones")]
    bones: Option<PathBuf>,
    #[arg(long, requires = "bones")]
    nobones: Option<PathBuf>,
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainClsArgs {
    /// Variant directory written by `variants`.
    #[arg(long)]
    data: PathBuf,
    /// One of v01, v02, v03, v04.
    #[arg(long, default_value = "v01")]
    variant: String,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long)]
    size: Option<usize>,
    /// Existing segmenter checkpoint; trained from fresh phantoms otherwise.
    #[arg(long)]
    segmenter: Option<PathBuf>,
    /// Phantoms used to train the segmenter when none is given.
    #[arg(long, default_value_t = 48)]
    seg_n: usize,
    #[arg(long, default_value_t = 300)]
    seg_epochs: usize,
    #[arg(long, default_value_t = 0.95)]
    seg_stop_at: f64,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    batches: Option<Vec<usize>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding curve_v01.csv … curve_v04.csv.
    #[arg(long)]
    dir: PathBuf,
    /// SVG path (default <dir>/curves.svg).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// (id, label, truth mask, bones image, bone-free image)
type PairedSubject = (String, Option<u8>, Option<Mask>, Image, Image);

fn segmenter_hyper<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<Hyper>, D::Error> {
    use serde::de::Error as _;
    let Some(given) = Option::<serde_json::Map<String, serde_json::Value>>::deserialize(d)? else {
        return Ok(None);
    };
    let mut merged = match serde_json::to_value(Hyper::segmenter()).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("Hyper serializes to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged))
        .map(Some)
        .map_err(D::Error::custom)
}

/// Contents of `--config`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub phantom: Option<PhantomConfig>,
    pub hyper: Option<Hyper>,
    /// Fields left out take [`Hyper::segmenter`] values.
    #[serde(default, deserialize_with = "segmenter_hyper")]
    pub segmenter: Option<Hyper>,
    pub mask: Option<MaskParams>,
    pub raw: Option<crate::io::RawLoaderConfig>,
    pub bench: Option<BenchConfig>,
}

/// Runs the CLI on `argv` (including the program name).
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let echo: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &echo) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn workers(flag: Option<&[usize]>) -> Result<usize> {
    match flag {
        Some([w]) => return Ok(*w),
        Some(_) => return Err(Error::usage("--workers takes a single count outside `bench`")),
        None => {}
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::usage(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

struct Ctx<'a> {
    exec: Exec,
    cfg: FileConfig,
    argv: &'a [String],
    started: Instant,
}

impl Ctx<'_> {
    fn manifest(&self, command: &str, config: serde_json::Value, seeds: Vec<u64>) -> RunManifest {
        RunManifest::new(command, self.argv, config, seeds, self.exec.workers())
    }

    fn finish(&self, m: RunManifest, dir: &Path) -> Result<()> {
        self.finish_at(m, &dir.join("manifest.json"))
    }

    fn finish_at(&self, mut m: RunManifest, path: &Path) -> Result<()> {
        m.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        m.write(path)
    }

    fn mask_params(&self, threshold: Option<f32>, keep: Option<usize>) -> Result<MaskParams> {
        let mut p = self.cfg.mask.unwrap_or_default();
        if let Some(t) = threshold {
            p.threshold = t;
        }
        if let Some(k) = keep {
            p.keep_components = k;
        }
        p.validate()?;
        Ok(p)
    }

    fn image_format(&self, raw: bool, invert: bool) -> Result<ImageFormat> {
        if raw {
            let mut cfg = self
                .cfg
                .raw
                .clone()
                .ok_or_else(|| Error::usage("--raw needs a `raw` section in --config"))?;
            cfg.invert ^= invert;
            Ok(ImageFormat::Raw(cfg))
        } else {
            Ok(ImageFormat::Pgm { invert })
        }
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let grid = match &cli.command {
        Command::Bench(_) => cli.workers.clone(),
        _ => None,
    };
    let flag = if grid.is_some() { None } else { cli.workers.as_deref() };
    let ctx = Ctx {
        exec: Exec::new(workers(flag)?)?,
        cfg: load_config(cli.config.as_deref())?,
        argv,
        started: Instant::now(),
    };
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&ctx, a),
        Command::TrainSeg(a) => cmd_train_seg(&ctx, a),
        Command::Segment(a) => cmd_segment(&ctx, a),
        Command::Variants(a) => cmd_variants(&ctx, a),
        Command::TrainCls(a) => cmd_train_cls(&ctx, a),
        Command::Experiment(a) => cmd_experiment(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a, grid),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

fn phantom_config(ctx: &Ctx, size: Option<usize>) -> PhantomConfig {
    match (ctx.cfg.phantom.clone(), size) {
        (Some(mut c), Some(s)) => {
            let scale = s as f64 / c.size as f64;
            c.nodule_radius_range = (c.nodule_radius_range.0 * scale, c.nodule_radius_range.1 * scale);
            c.size = s;
            c
        }
        (Some(c), None) => c,
        (None, s) => PhantomConfig::with_size(s.unwrap_or(64)),
    }
}

fn cmd_phantom(ctx: &Ctx, a: PhantomArgs) -> Result<()> {
    let cfg = phantom_config(ctx, a.size);
    let samples = generate_dataset(&cfg, a.n, a.seed)?;
    let mut m = ctx.manifest("phantom", serde_json::to_value(&cfg)?, vec![a.seed]);
    m.outputs = export_phantoms(&a.out, &samples)?;
    let positives = samples.iter().filter(|s| s.label == 1).count();
    println!(
        "wrote {} phantoms ({positives} with nodules) to {}",
        samples.len(),
        a.out.display()
    );
    ctx.finish(m, &a.out)
}

fn cmd_train_seg(ctx: &Ctx, a: TrainSegArgs) -> Result<()> {
    let stored = load_phantom_dir(&a.data)?;
    let size = stored[0].bones.width();
    let base = ctx.cfg.segmenter.clone().unwrap_or_else(Hyper::segmenter);
    let hyper = a.hyper.apply(Hyper {
        image_size: size,
        ..base
    });
    let pairs: Vec<(&Image, &Mask)> = stored
        .iter()
        .map(|s| (if a.nobones { &s.nobones } else { &s.bones }, &s.mask))
        .collect();
    let fit = train_segmenter(&pairs, &hyper, &ctx.exec, a.stop_at)?;
    mkdir(&a.out)?;
    let mut m = ctx.manifest("train-seg", serde_json::to_value(&hyper)?, vec![hyper.seed]);
    for s in &stored {
        for f in &s.files {
            m.add_input(f)?;
        }
    }
    let ckpt = a.out.join("segmenter.ckpt");
    save_checkpoint(&fit.model, &ckpt)?;
    let curve = write_text(&a.out.join("curve_seg.csv"), &fit.curve.to_csv())?;
    m.outputs = vec![ckpt, curve];
    println!(
        "trained {} epochs, best validation Dice {}",
        fit.curve.len(),
        fit.best_val_dice.map_or("n/a".into(), |d| format!("{d:.4}"))
    );
    ctx.finish(m, &a.out)
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::usage(format!("{} holds no files", input.display())));
        }
        Ok(files)
    } else {
        Ok(vec![input.to_path_buf()])
    }
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_segment(ctx: &Ctx, a: SegmentArgs) -> Result<()> {
    let params = ctx.mask_params(a.threshold, a.keep)?;
    let model = load_checkpoint(&a.model)?;
    let format = ctx.image_format(a.raw, a.invert)?;
    let s = model.input_size();
    let files = input_files(&a.input)?;
    let images = files
        .iter()
        .map(|f| load_image(f, &format)?.resize(s, s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Image> = images.iter().collect();
    let probs = predict_masks(&model, &ctx.exec, &refs)?;
    mkdir(&a.out)?;
    let mut m = ctx.manifest("segment", serde_json::to_value(params)?, vec![]);
    m.add_input(&a.model)?;
    for (f, p) in files.iter().zip(&probs) {
        m.add_input(f)?;
        let name = stem(f);
        let prob_path = a.out.join(format!("{name}_prob.pgm"));
        let mask_path = a.out.join(format!("{name}_mask.pgm"));
        write_pgm(&prob_path, p, PgmDepth::Sixteen)?;
        write_mask_pgm(&mask_path, &binarize_mask(p, params.threshold, params.keep_components)?)?;
        m.outputs.extend([prob_path, mask_path]);
    }
    println!("segmented {} images into {}", files.len(), a.out.display());
    ctx.finish(m, &a.out)
}

fn cmd_variants(ctx: &Ctx, a: VariantsArgs) -> Result<()> {
    let params = ctx.mask_params(a.threshold, a.keep)?;
    let model = load_checkpoint(&a.model)?;
    let s = model.input_size();
    let mut m = ctx.manifest("variants", serde_json::to_value(params)?, vec![]);
    m.add_input(&a.model)?;
    let mut subjects: Vec<PairedSubject> = Vec::new();
    if let Some(dir) = &a.data {
        for p in load_phantom_dir(dir)? {
            for f in &p.files {
                m.add_input(f)?;
            }
            subjects.push((p.sidecar.id, Some(p.sidecar.label), Some(p.mask), p.bones, p.nobones));
        }
    } else if let (Some(b), Some(nb)) = (&a.bones, &a.nobones) {
        let format = ctx.image_format(a.raw, a.invert)?;
        let pairing = pair_datasets(b, nb)?;
        for skipped in &pairing.unpaired {
            eprintln!("skipping unpaired file stem {skipped}");
        }
        for p in pairing.pairs {
            m.add_input(&p.bones)?;
            m.add_input(&p.nobones)?;
            let bones = load_image(&p.bones, &format)?.resize(s, s)?;
            let nobones = load_image(&p.nobones, &format)?.resize(s, s)?;
            subjects.push((p.stem, None, None, bones, nobones));
        }
    } else {
        return Err(Error::usage("give either --data or both --bones and --nobones"));
    }
    let pairs: Vec<(&Image, &Image)> = subjects.iter().map(|s| (&s.3, &s.4)).collect();
    let sets = build_variant_sets(&pairs, &model, &ctx.exec, params)?;
    let items: Vec<_> = subjects
        .iter()
        .zip(&sets)
        .map(|(s, set)| (s.0.clone(), s.1, s.2.as_ref(), set))
        .collect();
    m.outputs = export_variants(&a.out, &items, params)?;
    println!("wrote variants for {} subjects to {}", sets.len(), a.out.display());
    ctx.finish(m, &a.out)
}

fn parse_variant(tag: &str) -> Result<Variant> {
    Variant::ALL
        .into_iter()
        .find(|v| v.tag() == tag || v.label() == tag)
        .ok_or_else(|| Error::usage(format!("unknown variant `{tag}` (expected v01..v04)")))
}

fn cmd_train_cls(ctx: &Ctx, a: TrainClsArgs) -> Result<()> {
    let variant = parse_variant(&a.variant)?;
    let (_, items, files) = load_variant(&a.data, variant)?;
    let mut data = Vec::with_capacity(items.len());
    for (id, im, label) in &items {
        let label = label.ok_or_else(|| Error::usage(format!("subject {id} has no label")))?;
        data.push((im, label));
    }
    let size = items[0].1.width();
    let base = ctx.cfg.hyper.clone().unwrap_or_default();
    let hyper = a.hyper.apply(Hyper {
        image_size: size,
        ..base
    });
    let labels: Vec<u8> = data.iter().map(|d| d.1).collect();
    let (train, val) = split(&labels, hyper.val_fraction, hyper.seed)?;
    let model = build_classifier(&ClassifierConfig::new(size), hyper.seed)?;
    let (model, curve) = train_classifier_model(model, &data, &train, &val, &hyper, &ctx.exec)?;
    mkdir(&a.out)?;
    let mut m = ctx.manifest("train-cls", serde_json::to_value(&hyper)?, vec![hyper.seed]);
    for f in &files {
        m.add_input(f)?;
    }
    let ckpt = a.out.join(format!("classifier_{}.ckpt", variant.tag()));
    save_checkpoint(&model, &ckpt)?;
    let csv = write_text(&a.out.join(format!("curve_{}.csv", variant.tag())), &curve.to_csv())?;
    m.outputs = vec![ckpt, csv];
    if let Some(last) = curve.records.last() {
        println!(
            "{}: epoch {} train_acc {:.3} val_acc {:.3}",
            variant.label(),
            last.epoch,
            last.train_acc,
            last.val_acc
        );
    }
    ctx.finish(m, &a.out)
}

fn cmd_experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<()> {
    let pcfg = phantom_config(ctx, a.size);
    let base = ctx.cfg.hyper.clone().unwrap_or_default();
    let hyper = a.hyper.apply(Hyper {
        image_size: pcfg.size,
        ..base
    });
    mkdir(&a.out)?;
    let mut m = ctx.manifest(
        "experiment",
        serde_json::json!({ "phantom": pcfg, "hyper": hyper }),
        vec![hyper.seed],
    );
    let segmenter = match &a.segmenter {
        Some(path) => {
            m.add_input(path)?;
            load_checkpoint(path)?
        }
        None => {
            let seg_hyper = ctx.cfg.segmenter.clone().unwrap_or(Hyper {
                epochs: a.seg_epochs,
                seed: hyper.seed,
                image_size: pcfg.size,
                ..Hyper::segmenter()
            });
            let fit = train_phantom_segmenter(&pcfg, a.seg_n, &seg_hyper, Some(a.seg_stop_at), &ctx.exec)?;
            println!(
                "segmenter: {} epochs, best validation Dice {:.4}",
                fit.curve.len(),
                fit.best_val_dice.unwrap_or(0.0)
            );
            let ckpt = a.out.join("segmenter.ckpt");
            save_checkpoint(&fit.model, &ckpt)?;
            m.outputs.push(ckpt);
            m.outputs
                .push(write_text(&a.out.join("curve_seg.csv"), &fit.curve.to_csv())?);
            fit.model
        }
    };
    let phantoms = generate_dataset(&pcfg, a.n, hyper.seed)?;
    let subjects: Vec<Subject> = phantoms
        .iter()
        .enumerate()
        .map(|(i, p)| Subject::from_phantom(crate::io::phantom_id(i), p))
        .collect();
    let report = run_experiment(&subjects, &segmenter, &hyper, ctx.mask_params(None, None)?, &ctx.exec)?;
    m.outputs.extend(write_curves(&report, &a.out)?);
    m.outputs.push(write_text(
        &a.out.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?);
    let curves: Vec<(String, TrainingCurve)> = Variant::ALL
        .iter()
        .map(|v| (v.label().to_string(), report.variant(*v).curve.clone()))
        .collect();
    m.outputs
        .push(write_text(&a.out.join("curves.svg"), &render_svg(&curves))?);
    println!("majority baseline {:.3}", report.majority_baseline);
    for v in Variant::ALL {
        let r = report.variant(v);
        let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        println!(
            "{}: final val_acc {} train_acc {} gap {}",
            v.label(),
            fmt(r.final_val_acc),
            fmt(r.final_train_acc),
            fmt(r.overtraining_gap)
        );
    }
    ctx.finish(m, &a.out)
}

fn cmd_bench(ctx: &Ctx, a: BenchArgs, grid: Option<Vec<usize>>) -> Result<()> {
    let mut cfg = ctx.cfg.bench.clone().unwrap_or_default();
    if let Some(v) = a.sizes {
        cfg.sizes = v;
    }
    if let Some(v) = a.batches {
        cfg.batches = v;
    }
    if let Some(v) = grid {
        cfg.workers = v;
    }
    if let Some(v) = a.runs {
        cfg.runs = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if !cfg.workers.contains(&1) {
        cfg.workers.insert(0, 1);
    }
    let env = Environment::detect();
    let points = run_grid(&cfg, |p| {
        println!(
            "image {:>5} batch {:>2} workers {:>2}: {:.4} s",
            p.image_size, p.batch_size, p.workers, p.median_seconds
        )
    })?;
    let table = speedup_report(&points)?;
    mkdir(&a.out)?;
    let mut m = ctx.manifest("bench", serde_json::to_value(&cfg)?, vec![cfg.seed]);
    m.outputs = vec![
        write_text(&a.out.join("bench_times.csv"), &times_csv(&points))?,
        write_text(&a.out.join("bench_speedup.csv"), &table.to_csv())?,
        write_text(&a.out.join("environment.json"), &serde_json::to_string_pretty(&env)?)?,
        write_text(
            &a.out.join("bench_points.json"),
            &serde_json::to_string_pretty(&points)?,
        )?,
    ];
    print!("{}", table.summary());
    ctx.finish(m, &a.out)
}

fn cmd_report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let mut curves = Vec::new();
    let mut m = ctx.manifest("report", serde_json::Value::Null, vec![]);
    for v in Variant::ALL {
        let path = a.dir.join(format!("curve_{}.csv", v.tag()));
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let curve = TrainingCurve::from_csv(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        m.add_input(&path)?;
        curves.push((v.label().to_string(), curve));
    }
    if curves.is_empty() {
        return Err(Error::usage(format!("no curve_v0*.csv files in {}", a.dir.display())));
    }
    let out = a.out.unwrap_or_else(|| a.dir.join("curves.svg"));
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    m.outputs = vec![write_text(&out, &render_svg(&curves))?];
    println!("wrote {}", out.display());
    // Kept beside the SVG so it never replaces the manifest of the run
    // that produced the curves.
    ctx.finish_at(m, &out.with_extension("manifest.json"))
}
