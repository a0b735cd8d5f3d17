//! `key = value` run configuration.

use std::fmt::Write as _;
use std::ops::Range;
use std::str::FromStr;

use multires::arch::{BaseSpec, Downsampling, MLP_HIDDEN};
use multires::io::{SceneConfig, BANDS, N_CLASSES};
use multires::nn::Family;
use multires::train::TrainConfig;
use multires::{Error, Result};

/// Scene seeds, written `a..b` or as a comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl Seeds {
    pub fn range(r: Range<u64>) -> Self {
        Seeds(r.collect())
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("`{t}` is not a seed"));
        let seeds = if let Some((a, b)) = s.split_once("..") {
            let (a, b) = (num(a)?, num(b)?);
            (a..b).collect()
        } else {
            s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
        };
        if seeds.is_empty() {
            return Err("empty seed list".into());
        }
        Ok(Seeds(seeds))
    }
}

impl std::fmt::Display for Seeds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let v = &self.0;
        let contiguous = v.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous && v.len() > 2 {
            write!(f, "{}..{}", v[0], v[v.len() - 1] + 1)
        } else {
            let parts: Vec<String> = v.iter().map(u64::to_string).collect();
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: Family,
    pub downsampling: Downsampling,
    pub mlp_hidden: usize,
    pub train: TrainConfig,
    pub train_seeds: Seeds,
    pub val_seeds: Seeds,
    pub scene_size: usize,
    pub noise: f64,
    pub relief: f64,
    pub erosion_radius: usize,
    pub tile_size: usize,
    /// `None`: the network's halo.
    pub overlap: Option<usize>,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        RunConfig {
            arch: Family::Fcn,
            downsampling: Downsampling::Sixteen,
            mlp_hidden: MLP_HIDDEN,
            train: TrainConfig::default(),
            train_seeds: Seeds::range(0..16),
            val_seeds: Seeds::range(1000..1004),
            scene_size: scene.height,
            noise: scene.noise,
            relief: scene.relief,
            erosion_radius: 2,
            tile_size: 256,
            overlap: None,
            deterministic: false,
        }
    }
}

pub const KEYS: [&str; 24] = [
    "arch",
    "downsampling",
    "mlp_hidden",
    "base_lr",
    "decay_period",
    "momentum",
    "weight_decay",
    "decay_all",
    "batch_size",
    "patch_size",
    "max_iters",
    "seed",
    "finetune_lr",
    "checkpoint_every",
    "train_seeds",
    "val_seeds",
    "scene_size",
    "noise",
    "relief",
    "erosion_radius",
    "tile_size",
    "overlap",
    "deterministic",
    "classes",
];

pub fn parse_arch(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Family::ALL.iter().map(|f| f.as_str()).collect();
        format!("unknown architecture `{s}` (one of {})", names.join(", "))
    })
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            c.set(key.trim(), value.trim())
                .map_err(|m| Error::Config(format!("line {}: {m}", i + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "arch" => self.arch = parse_arch(v)?,
            "downsampling" => {
                self.downsampling = match v {
                    "16" => Downsampling::Sixteen,
                    "32" => Downsampling::Literal32,
                    _ => return Err(format!("downsampling must be 16 or 32, got `{v}`")),
                }
            }
            "mlp_hidden" => self.mlp_hidden = parse_value(v)?,
            "base_lr" => t.base_lr = parse_value(v)?,
            "decay_period" => t.decay_period = parse_value(v)?,
            "momentum" => t.momentum = parse_value(v)?,
            "weight_decay" => t.weight_decay = parse_value(v)?,
            "decay_all" => t.decay_all = parse_value(v)?,
            "batch_size" => t.batch_size = parse_value(v)?,
            "patch_size" => t.patch_size = parse_value(v)?,
            "max_iters" => t.max_iters = parse_value(v)?,
            "seed" => t.seed = parse_value(v)?,
            "finetune_lr" => t.finetune_lr = parse_value(v)?,
            "checkpoint_every" => t.checkpoint_every = parse_value(v)?,
            "train_seeds" => self.train_seeds = v.parse()?,
            "val_seeds" => self.val_seeds = v.parse()?,
            "scene_size" => self.scene_size = parse_value(v)?,
            "noise" => self.noise = parse_value(v)?,
            "relief" => self.relief = parse_value(v)?,
            "erosion_radius" => self.erosion_radius = parse_value(v)?,
            "tile_size" => self.tile_size = parse_value(v)?,
            "overlap" => {
                self.overlap = if v == "auto" { None } else { Some(parse_value(v)?) };
            }
            "deterministic" => self.deterministic = parse_value(v)?,
            "classes" => {
                if parse_value::<usize>(v)? != N_CLASSES {
                    return Err(format!("the synthetic benchmark has {N_CLASSES} classes"));
                }
            }
            _ => return Err(format!("unknown key `{key}`; valid keys: {}", KEYS.join(", "))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.scene().validate()?;
        if self.mlp_hidden == 0 || self.tile_size == 0 {
            return Err(Error::Config("mlp_hidden and tile_size must be positive".into()));
        }
        if self.arch == Family::Custom {
            return Err(Error::Config("arch must name a built-in family".into()));
        }
        Ok(())
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            height: self.scene_size,
            width: self.scene_size,
            noise: self.noise,
            relief: self.relief,
            ..SceneConfig::default()
        }
    }

    pub fn spec(&self) -> BaseSpec {
        BaseSpec::standard(BANDS, N_CLASSES, self.downsampling)
    }

    /// Every key, one per line; parses back to `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("arch", self.arch.to_string());
        kv(
            "downsampling",
            match self.downsampling {
                Downsampling::Sixteen => "16",
                Downsampling::Literal32 => "32",
            }
            .into(),
        );
        kv("mlp_hidden", self.mlp_hidden.to_string());
        kv("base_lr", format!("{:?}", t.base_lr));
        kv("decay_period", t.decay_period.to_string());
        kv("momentum", format!("{:?}", t.momentum));
        kv("weight_decay", format!("{:?}", t.weight_decay));
        kv("decay_all", t.decay_all.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("patch_size", t.patch_size.to_string());
        kv("max_iters", t.max_iters.to_string());
        kv("seed", t.seed.to_string());
        kv("finetune_lr", format!("{:?}", t.finetune_lr));
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("train_seeds", self.train_seeds.to_string());
        kv("val_seeds", self.val_seeds.to_string());
        kv("scene_size", self.scene_size.to_string());
        kv("noise", format!("{:?}", self.noise));
        kv("relief", format!("{:?}", self.relief));
        kv("erosion_radius", self.erosion_radius.to_string());
        kv("tile_size", self.tile_size.to_string());
        kv("overlap", self.overlap.map_or("auto".into(), |o| o.to_string()));
        kv("deterministic", self.deterministic.to_string());
        kv("classes", N_CLASSES.to_string());
        s
    }
}
