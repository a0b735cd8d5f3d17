//! The `multires` command line: synthetic data, training, fine-tuning,
//! tiled prediction, evaluation, architecture analysis and gradient checks.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multires::arch::{analyze, build, build_mlp, Downsampling, RfAnalyzer};
use multires::dataset::{Dataset, Tile};
use multires::eval::{erode_labels, predict_tiled, ConfusionMatrix, EvalReport};
use multires::io::{
    load_checkpoint, load_raster, save_checkpoint, save_label_png, save_raster, synth_scene, write_atomic,
    Checkpoint, Raster, CLASS_NAMES, N_CLASSES,
};
use multires::nn::{grad_check, init_params, random_targets, ArchGraph, Family, GradCheckConfig, ParamStore};
use multires::train::{finetune, trace_csv, train, TraceRow};
use multires::{Error, ErrorClass, Result, Shape4, Tensor4};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "multires", version, about = "Dense semantic labeling with multi-resolution FCNs")]
pub struct Cli {
    /// Run configuration of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Recorded with the run. Computation is single-threaded with a fixed
    /// summation order, so runs are reproducible either way.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// fcn, skip, unpool, mlp or dilation.
    #[arg(long, global = true, value_parser = config::parse_arch)]
    pub arch: Option<Family>,
    /// Output directory (synth, train, finetune) or file (predict, eval, analyze).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train and validation scenes from `train_seeds` and `val_seeds`.
    Synth {
        /// Also write a PNG preview of each label map.
        #[arg(long)]
        preview: bool,
    },
    /// Train a network from scratch.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint of the same run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Warm-start a derived network from a base checkpoint and train it.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        from: PathBuf,
    },
    /// Label one image by overlapping tiles.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        /// Also write the class scores.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Score label rasters against references, or a model on the validation scenes.
    Eval {
        #[arg(long, num_args = 1..)]
        pred: Vec<PathBuf>,
        #[arg(long = "ref", num_args = 1..)]
        reference: Vec<PathBuf>,
        #[arg(long, conflicts_with = "pred")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        /// Boundary erosion radius; defaults to `erosion_radius`.
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Per-layer receptive field, stride, parameters and memory.
    Analyze {
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Compare backpropagation with central differences in f64.
    Gradcheck {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 60)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// The configuration file, if any, with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(a) = cli.arch {
        cfg.arch = a;
    }
    cfg.deterministic |= cli.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("this command needs --out".into()))
}

fn execute(cli: &Cli, w: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Synth { preview } => cmd_synth(&cfg, require_out(cli)?, *preview, w),
        Command::Train { data, resume } => cmd_train(&cfg, data, resume.as_deref(), require_out(cli)?, w),
        Command::Finetune { data, from } => cmd_finetune(&cfg, data, from, require_out(cli)?, w),
        Command::Predict {
            model,
            image,
            tile_size,
            overlap,
            scores,
            preview,
        } => {
            let ck = load_checkpoint(model)?;
            let g = graph_from_meta(&ck)?;
            let img = load_raster(image)?.to_tensor()?;
            let tile = tile_size.unwrap_or(cfg.tile_size);
            let overlap = overlap.or(cfg.overlap).unwrap_or_else(|| RfAnalyzer::new(&g).halo());
            let p = predict_tiled(&g, &ck.params, &img, tile, overlap)?;
            let s = img.shape();
            save_raster(require_out(cli)?, &Raster::labels(s.h, s.w, p.labels.clone())?)?;
            if let Some(path) = scores {
                save_raster(path, &Raster::from_tensor(&p.scores))?;
            }
            if let Some(path) = preview {
                save_label_png(path, &p.labels, s.h, s.w)?;
            }
            writeln!(w, "labeled {}x{} pixels with {} (tile {tile}, overlap {overlap})", s.h, s.w, g.family())
                .map_err(io_err(Path::new("stdout")))
        }
        Command::Eval {
            pred,
            reference,
            model,
            data,
            radius,
        } => {
            let r = radius.unwrap_or(cfg.erosion_radius);
            let m = match (model, data) {
                (Some(model), Some(data)) => eval_model(&cfg, model, data, r)?,
                (Some(_), None) => return Err(Error::InvalidArgument("--model needs --data".into())),
                _ => eval_rasters(pred, reference, r)?,
            };
            let rep = EvalReport::new(&m, &CLASS_NAMES)?;
            if let Some(path) = &cli.out {
                write_atomic(path, rep.to_csv().as_bytes())?;
            }
            let text = format!(
                "{}overall accuracy: {:.6}\nmean F1: {:.6}\n",
                rep.to_table(),
                rep.overall_accuracy,
                rep.mean_f1
            );
            w.write_all(text.as_bytes()).map_err(io_err(Path::new("stdout")))
        }
        Command::Analyze { size } => {
            let g = graph_for(&cfg, cfg.arch)?;
            let rep = analyze(&g, Shape4::new(1, g.in_channels(), *size, *size)?)?;
            if let Some(path) = &cli.out {
                write_atomic(path, rep.to_csv().as_bytes())?;
            }
            w.write_all(rep.to_text().as_bytes()).map_err(io_err(Path::new("stdout")))
        }
        Command::Gradcheck {
            size,
            coords,
            epsilon,
            tolerance,
        } => cmd_gradcheck(&cfg, *size, *coords, *epsilon, *tolerance, w),
    }
}

fn graph_for(cfg: &RunConfig, family: Family) -> Result<ArchGraph> {
    let spec = cfg.spec();
    match family {
        Family::Mlp => build_mlp(&spec, cfg.mlp_hidden),
        f => build(f, &spec),
    }
}

fn downsampling_name(d: Downsampling) -> &'static str {
    match d {
        Downsampling::Sixteen => "16",
        Downsampling::Literal32 => "32",
    }
}

fn meta(cfg: &RunConfig, family: Family) -> BTreeMap<String, String> {
    [
        ("family", family.to_string()),
        ("classes", N_CLASSES.to_string()),
        ("downsampling", downsampling_name(cfg.downsampling).to_string()),
        ("mlp_hidden", cfg.mlp_hidden.to_string()),
        ("seed", cfg.train.seed.to_string()),
        ("deterministic", cfg.deterministic.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Rebuilds the network a checkpoint was written for.
pub fn graph_from_meta(ck: &Checkpoint) -> Result<ArchGraph> {
    let get = |k: &str| {
        ck.meta
            .get(k)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{k}` entry")))
    };
    let text = format!(
        "arch = {}\ndownsampling = {}\nmlp_hidden = {}\nclasses = {}\n",
        get("family")?,
        get("downsampling")?,
        get("mlp_hidden")?,
        get("classes")?
    );
    let cfg = RunConfig::parse(&text).map_err(|e| Error::Format(e.to_string()))?;
    let g = graph_for(&cfg, cfg.arch)?;
    check_params(&g, &ck.params)?;
    Ok(g)
}

fn check_params(g: &ArchGraph, p: &ParamStore<f32>) -> Result<()> {
    let missing: Vec<String> = g
        .params()
        .iter()
        .filter(|d| p.get(&d.name).is_none_or(|e| e.value.shape() != d.shape))
        .map(|d| d.name.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingParams(missing))
    }
}

fn scene_stem(seed: u64) -> String {
    format!("scene_{seed:06}")
}

fn cmd_synth(cfg: &RunConfig, out: &Path, preview: bool, w: &mut dyn Write) -> Result<()> {
    let mut n = 0;
    for (split, seeds) in [("train", &cfg.train_seeds), ("val", &cfg.val_seeds)] {
        let dir = out.join(split);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for &seed in &seeds.0 {
            let tile = synth_scene(&multires::io::SceneConfig { seed, ..cfg.scene() })?;
            let stem = dir.join(scene_stem(seed));
            save_raster(&stem.with_extension("image.mrst"), &Raster::from_tensor(&tile.image))?;
            let (h, wd) = (tile.height(), tile.width());
            save_raster(&stem.with_extension("labels.mrst"), &Raster::labels(h, wd, tile.labels.clone())?)?;
            if preview {
                save_label_png(&stem.with_extension("labels.png"), &tile.labels, h, wd)?;
            }
            n += 1;
        }
    }
    writeln!(w, "wrote {n} scenes to {}", out.display()).map_err(io_err(Path::new("stdout")))
}

/// Image and label rasters of one split, ordered by file name.
pub fn load_split(dir: &Path) -> Result<Dataset> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".image.mrst"))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::InvalidArgument(format!("no *.image.mrst files in {}", dir.display())));
    }
    let mut tiles = Vec::with_capacity(images.len());
    for img in images {
        let name = img.to_string_lossy().replace(".image.mrst", ".labels.mrst");
        let labels = load_raster(Path::new(&name))?;
        let (h, w) = (labels.h, labels.w);
        let image = load_raster(&img)?.to_tensor()?;
        tiles.push(Tile::new(image, labels.into_u8()?, vec![false; h * w])?);
    }
    Dataset::new(tiles, N_CLASSES)
}

fn finish_training(
    cfg: &RunConfig,
    family: Family,
    out: &Path,
    params: &ParamStore<f32>,
    trace: &[TraceRow],
    w: &mut dyn Write,
) -> Result<()> {
    let model = out.join("model.ckpt");
    save_checkpoint(
        &model,
        &Checkpoint {
            iter: cfg.train.max_iters,
            meta: meta(cfg, family),
            params: params.clone(),
        },
    )?;
    write_atomic(&out.join("trace.csv"), trace_csv(trace).as_bytes())?;
    let last = trace.last().map_or(f64::NAN, |r| r.loss);
    writeln!(
        w,
        "{family}: {} iterations, final loss {last:.4}, model {}",
        trace.len(),
        model.display()
    )
    .map_err(io_err(Path::new("stdout")))
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())
}

fn periodic_saver<'a>(
    cfg: &'a RunConfig,
    family: Family,
    out: &'a Path,
) -> impl FnMut(u64, &ParamStore<f32>) -> Result<()> + 'a {
    move |done, p| {
        if done == cfg.train.max_iters {
            return Ok(());
        }
        save_checkpoint(
            &out.join(format!("ckpt_{done:06}.ckpt")),
            &Checkpoint {
                iter: done,
                meta: meta(cfg, family),
                params: p.clone(),
            },
        )
    }
}

fn cmd_train(cfg: &RunConfig, data: &Path, resume: Option<&Path>, out: &Path, w: &mut dyn Write) -> Result<()> {
    let ds = load_split(&data.join("train"))?;
    let g = graph_for(cfg, cfg.arch)?;
    let (mut params, start) = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            check_params(&g, &ck.params)?;
            (ck.params, ck.iter)
        }
        None => (init_params::<f32>(&g, cfg.train.seed)?, 0),
    };
    prepare_out(cfg, out)?;
    let trace = train(&g, &mut params, &ds, &cfg.train, start, periodic_saver(cfg, cfg.arch, out))?;
    finish_training(cfg, cfg.arch, out, &params, &trace, w)
}

fn cmd_finetune(cfg: &RunConfig, data: &Path, from: &Path, out: &Path, w: &mut dyn Write) -> Result<()> {
    let ds = load_split(&data.join("train"))?;
    let base = load_checkpoint(from)?;
    let g = graph_for(cfg, cfg.arch)?;
    prepare_out(cfg, out)?;
    let (params, trace) = finetune(&g, &base.params, &ds, &cfg.train, periodic_saver(cfg, cfg.arch, out))?;
    finish_training(cfg, cfg.arch, out, &params, &trace, w)
}

fn eval_model(cfg: &RunConfig, model: &Path, data: &Path, radius: usize) -> Result<ConfusionMatrix> {
    let ck = load_checkpoint(model)?;
    let g = graph_from_meta(&ck)?;
    let ds = load_split(&data.join("val"))?;
    let overlap = cfg.overlap.unwrap_or_else(|| RfAnalyzer::new(&g).halo());
    let mut m = ConfusionMatrix::new(N_CLASSES);
    for t in &ds.tiles {
        let p = predict_tiled(&g, &ck.params, &t.image, cfg.tile_size, overlap)?;
        let ignore = erode_labels(&t.labels, t.height(), t.width(), radius)?;
        m.accumulate(&p.labels, &t.labels, Some(&ignore))?;
    }
    Ok(m)
}

fn eval_rasters(pred: &[PathBuf], reference: &[PathBuf], radius: usize) -> Result<ConfusionMatrix> {
    if pred.is_empty() || pred.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching --pred and --ref lists, got {} and {}",
            pred.len(),
            reference.len()
        )));
    }
    let mut m = ConfusionMatrix::new(N_CLASSES);
    for (p, r) in pred.iter().zip(reference) {
        let (p, r) = (load_raster(p)?, load_raster(r)?);
        if (p.c, p.h, p.w) != (r.c, r.h, r.w) || r.c != 1 {
            return Err(Error::Shape(format!(
                "prediction {}x{}x{} against reference {}x{}x{}",
                p.c, p.h, p.w, r.c, r.h, r.w
            )));
        }
        let (h, w) = (r.h, r.w);
        let (p, r) = (p.into_u8()?, r.into_u8()?);
        let ignore = erode_labels(&r, h, w, radius)?;
        m.accumulate(&p, &r, Some(&ignore))?;
    }
    Ok(m)
}

fn cmd_gradcheck(
    cfg: &RunConfig,
    size: usize,
    coords: usize,
    epsilon: f64,
    tolerance: f64,
    w: &mut dyn Write,
) -> Result<()> {
    let g = graph_for(cfg, cfg.arch)?;
    let params = init_params::<f64>(&g, cfg.train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let shape = Shape4::new(1, g.in_channels(), size, size)?;
    let x = Tensor4::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0));
    let targets = random_targets(&g, shape, cfg.train.seed)?;
    let check = GradCheckConfig {
        epsilon,
        coords,
        seed: cfg.train.seed,
        ..Default::default()
    };
    let rep = grad_check(&g, &params, &x, &targets, &check)?;
    let text = format!(
        "{}: {} coordinates on a {size}x{size} input\nmax rel. error {:.3e}, mean {:.3e}\n\
         structurally zero gradients: {} tensors, largest |g| {:.1e}\n",
        g.family(),
        rep.checks.len(),
        rep.max_rel_error,
        rep.mean_rel_error,
        rep.structural_zero_params.len(),
        rep.structural_zero_max
    );
    w.write_all(text.as_bytes()).map_err(io_err(Path::new("stdout")))?;
    if rep.passed(tolerance) && rep.checks.len() == coords {
        Ok(())
    } else {
        Err(Error::GradCheckFailed {
            max_rel_error: rep.max_rel_error,
            tolerance,
        })
    }
}
