//! Procedural aerial scenes: roads with parked cars, buildings, tree
//! clusters and speckle clutter on a low-vegetation background, rendered
//! as DSM, NIR, R and G bands in `[0, 1]`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Tile};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const IMPERVIOUS: u8 = 0;
pub const BUILDING: u8 = 1;
pub const LOW_VEG: u8 = 2;
pub const TREE: u8 = 3;
pub const CAR: u8 = 4;
pub const CLUTTER: u8 = 5;
pub const N_CLASSES: usize = 6;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["impervious", "building", "low_veg", "tree", "car", "clutter"];
pub const BANDS: usize = 4;

/// Pixel-fraction targets per foreground class; low vegetation fills the
/// rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub impervious: (f64, f64),
    pub building: (f64, f64),
    pub tree: (f64, f64),
    pub car: (f64, f64),
    pub clutter: (f64, f64),
    /// Standard deviation of the per-band Gaussian noise.
    pub noise: f64,
    /// Minimum building height above ground in DSM units.
    pub relief: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            height: 256,
            width: 256,
            impervious: (0.12, 0.25),
            building: (0.12, 0.25),
            tree: (0.08, 0.18),
            car: (0.01, 0.03),
            clutter: (0.002, 0.01),
            noise: 0.03,
            relief: 0.4,
        }
    }
}

const GROUND: f64 = 0.1;
const TERRAIN: f64 = 0.03;
const MAX_HEIGHT_SCALE: f64 = 1.6;

impl SceneConfig {
    pub fn ranges(&self) -> [(u8, (f64, f64)); 5] {
        [
            (IMPERVIOUS, self.impervious),
            (BUILDING, self.building),
            (TREE, self.tree),
            (CAR, self.car),
            (CLUTTER, self.clutter),
        ]
    }

    /// Range of the low-vegetation fraction implied by the others.
    pub fn background_range(&self) -> (f64, f64) {
        let (lo, hi) = self
            .ranges()
            .iter()
            .fold((0.0, 0.0), |(a, b), (_, (l, h))| (a + l, b + h));
        (1.0 - hi, 1.0 - lo)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 64 || self.width < 64 {
            return bad(format!("scene must be at least 64x64, got {}x{}", self.height, self.width));
        }
        for (class, (lo, hi)) in self.ranges() {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!(
                    "{} fraction range [{lo}, {hi}] is empty or outside [0, 1]",
                    CLASS_NAMES[class as usize]
                ));
            }
        }
        if self.car.1 > self.impervious.0 {
            return bad("cars sit on roads: car fraction must not exceed the impervious minimum".into());
        }
        if self.background_range().0 < 0.1 {
            return bad("class fractions leave less than 10% of the scene for background".into());
        }
        if !(self.noise >= 0.0 && self.relief > 0.0) {
            return bad("noise must be non-negative and relief positive".into());
        }
        if GROUND + TERRAIN + MAX_HEIGHT_SCALE * self.relief > 1.0 {
            return bad(format!("relief {} pushes buildings above DSM 1.0", self.relief));
        }
        Ok(())
    }
}

struct Canvas {
    h: usize,
    w: usize,
    labels: Vec<u8>,
    counts: [usize; N_CLASSES],
    /// DSM, NIR, R, G before noise.
    bands: [Vec<f64>; BANDS],
    /// Prior state of every pixel painted since the last `commit`.
    journal: Vec<(usize, u8, [f64; BANDS])>,
}

impl Canvas {
    fn fraction(&self, class: u8) -> f64 {
        self.counts[class as usize] as f64 / (self.h * self.w) as f64
    }

    fn paint(&mut self, i: usize, class: u8, spectrum: [f64; 3], height: f64) {
        self.journal.push((i, self.labels[i], std::array::from_fn(|b| self.bands[b][i])));
        self.counts[self.labels[i] as usize] -= 1;
        self.counts[class as usize] += 1;
        self.labels[i] = class;
        self.bands[0][i] += height;
        for b in 0..3 {
            self.bands[b + 1][i] = spectrum[b];
        }
    }

    /// Keeps the object painted since the last call unless it pushes
    /// `class` above `limit`.
    fn commit(&mut self, class: u8, limit: f64) -> bool {
        let keep = self.fraction(class) <= limit;
        if !keep {
            while let Some((i, label, bands)) = self.journal.pop() {
                self.counts[self.labels[i] as usize] -= 1;
                self.counts[label as usize] += 1;
                self.labels[i] = label;
                for (b, v) in bands.into_iter().enumerate() {
                    self.bands[b][i] = v;
                }
            }
        }
        self.journal.clear();
        keep
    }

    /// Pixels of the bounding box `[y0, y1) x [x0, x1)` clipped to the image.
    fn boxed(&self, y0: f64, y1: f64, x0: f64, x1: f64) -> impl Iterator<Item = (usize, usize)> {
        let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
        let (ya, yb, xa, xb) = (clip(y0, self.h), clip(y1, self.h), clip(x0, self.w), clip(x1, self.w));
        (ya..yb).flat_map(move |y| (xa..xb).map(move |x| (y, x)))
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f64; 3], spread: f64) -> [f64; 3] {
    base.map(|v| v + rng.random_range(-spread..=spread))
}

/// Roads: straight bands across the scene, `(y, x, direction, half width)`.
fn roads(c: &mut Canvas, rng: &mut ChaCha8Rng, target: f64, limit: f64) -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    for _ in 0..64 {
        if c.fraction(IMPERVIOUS) >= target {
            break;
        }
        let (py, px) = (rng.random_range(0.0..c.h as f64), rng.random_range(0.0..c.w as f64));
        let angle = if rng.random_bool(0.5) {
            rng.random_range(0..2) as f64 * PI / 2.0
        } else {
            rng.random_range(0.0..PI)
        };
        let half = rng.random_range(3.0..6.0);
        let (dy, dx) = (angle.sin(), angle.cos());
        let tone = rng.random_range(-0.05..0.05);
        for y in 0..c.h {
            for x in 0..c.w {
                let i = y * c.w + x;
                let d = ((y as f64 - py) * dx - (x as f64 - px) * dy).abs();
                if d <= half && c.labels[i] == LOW_VEG {
                    c.paint(i, IMPERVIOUS, [0.35 + tone, 0.45 + tone, 0.45 + tone], 0.0);
                }
            }
        }
        if c.commit(IMPERVIOUS, limit) {
            out.push((py, px, angle, half));
        }
    }
    out
}

fn buildings(c: &mut Canvas, rng: &mut ChaCha8Rng, target: f64, limit: f64, relief: f64) {
    for _ in 0..400 {
        if c.fraction(BUILDING) >= target {
            break;
        }
        let (a, b): (f64, f64) = (rng.random_range(6.0..20.0), rng.random_range(6.0..20.0));
        let (cy, cx) = (rng.random_range(0.0..c.h as f64), rng.random_range(0.0..c.w as f64));
        let angle = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..PI / 2.0) };
        let (s, co) = angle.sin_cos();
        let roof = if rng.random_bool(0.5) {
            jitter(rng, [0.4, 0.62, 0.35], 0.06)
        } else {
            jitter(rng, [0.42, 0.5, 0.5], 0.06)
        };
        let height = relief * rng.random_range(1.1..MAX_HEIGHT_SCALE);
        let r = a.hypot(b);
        let cells: Vec<_> = c.boxed(cy - r, cy + r + 1.0, cx - r, cx + r + 1.0).collect();
        for (y, x) in cells {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let (u, v) = (dy * co - dx * s, dy * s + dx * co);
            let i = y * c.w + x;
            if u.abs() <= a && v.abs() <= b && c.labels[i] == LOW_VEG {
                c.paint(i, BUILDING, roof, height);
            }
        }
        c.commit(BUILDING, limit);
    }
}

fn trees(c: &mut Canvas, rng: &mut ChaCha8Rng, target: f64, limit: f64, relief: f64) {
    for _ in 0..400 {
        if c.fraction(TREE) >= target {
            break;
        }
        let (cy, cx) = (rng.random_range(0.0..c.h as f64), rng.random_range(0.0..c.w as f64));
        for _ in 0..rng.random_range(3..8) {
            let (oy, ox) = (cy + rng.random_range(-10.0..10.0), cx + rng.random_range(-10.0..10.0));
            let rad: f64 = rng.random_range(3.0..7.0);
            let crown = relief * rng.random_range(0.3..0.6);
            let leaf = jitter(rng, [0.8, 0.2, 0.38], 0.05);
            let cells: Vec<_> = c.boxed(oy - rad, oy + rad + 1.0, ox - rad, ox + rad + 1.0).collect();
            for (y, x) in cells {
                let d = (y as f64 - oy).hypot(x as f64 - ox);
                let i = y * c.w + x;
                if d <= rad && c.labels[i] == LOW_VEG {
                    c.paint(i, TREE, leaf, crown * (1.0 - 0.5 * d / rad));
                }
            }
        }
        c.commit(TREE, limit);
    }
}

fn cars(c: &mut Canvas, rng: &mut ChaCha8Rng, target: f64, limit: f64, roads: &[(f64, f64, f64, f64)]) {
    if roads.is_empty() {
        return;
    }
    for _ in 0..2000 {
        if c.fraction(CAR) >= target {
            break;
        }
        let (py, px, angle, half) = roads[rng.random_range(0..roads.len())];
        let (dy, dx) = (angle.sin(), angle.cos());
        let t = rng.random_range(-(c.h.max(c.w) as f64)..c.h.max(c.w) as f64);
        let off = rng.random_range(-0.5..0.5) * half;
        let (cy, cx) = (py + t * dy - off * dx, px + t * dx + off * dy);
        let (a, b) = (rng.random_range(3.5..5.0), rng.random_range(1.8..2.5));
        let paint = [rng.random_range(0.3..0.6), rng.random(), rng.random()];
        let cells: Vec<_> = c.boxed(cy - a, cy + a + 1.0, cx - a, cx + a + 1.0).collect();
        for (y, x) in cells {
            let (ry, rx) = (y as f64 - cy, x as f64 - cx);
            let (u, v) = (ry * dy + rx * dx, ry * dx - rx * dy);
            let i = y * c.w + x;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 && c.labels[i] == IMPERVIOUS {
                c.paint(i, CAR, paint, 0.04);
            }
        }
        c.commit(CAR, limit);
    }
}

fn clutter(c: &mut Canvas, rng: &mut ChaCha8Rng, target: f64, limit: f64) {
    for _ in 0..2000 {
        if c.fraction(CLUTTER) >= target {
            break;
        }
        let (y0, x0) = (rng.random_range(0..c.h), rng.random_range(0..c.w));
        let side = rng.random_range(2..5) as f64;
        let look = [rng.random(), rng.random(), rng.random()];
        let height = rng.random_range(0.0..0.1);
        let cells: Vec<_> = c.boxed(y0 as f64, y0 as f64 + side, x0 as f64, x0 as f64 + side).collect();
        for (y, x) in cells {
            let i = y * c.w + x;
            if c.labels[i] == LOW_VEG {
                c.paint(i, CLUTTER, look, height);
            }
        }
        c.commit(CLUTTER, limit);
    }
}

/// One scene as a tile with no ignored pixels.
pub fn synth_scene(config: &SceneConfig) -> Result<Tile> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // aim inside the range; objects overshooting the upper bound are undone
    let targets = config
        .ranges()
        .map(|(_, (lo, hi))| lo + (hi - lo) * rng.random_range(0.1..0.9));
    let (imp, car) = (config.impervious.1, config.car.1);

    // gently rolling ground and a textured meadow
    let (fy, fx, ph) = (rng.random_range(1.0..3.0), rng.random_range(1.0..3.0), rng.random_range(0.0..2.0 * PI));
    let mut c = Canvas {
        h,
        w,
        labels: vec![LOW_VEG; h * w],
        counts: [0; N_CLASSES],
        bands: std::array::from_fn(|_| vec![0.0; h * w]),
        journal: Vec::new(),
    };
    c.counts[LOW_VEG as usize] = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u, v) = (y as f64 / h as f64, x as f64 / w as f64);
            c.bands[0][i] = GROUND + TERRAIN * (2.0 * PI * (fy * u + fx * v) + ph).sin();
            let grain = 0.05 * ((0.9 * y as f64).sin() * (1.3 * x as f64).cos());
            c.bands[1][i] = 0.68 + grain;
            c.bands[2][i] = 0.3 + grain * 0.5;
            c.bands[3][i] = 0.52 + grain * 0.5;
        }
    }

    // cars are painted over road, so roads cover both
    let road_list = roads(&mut c, &mut rng, targets[0] + targets[3], imp + targets[3]);
    buildings(&mut c, &mut rng, targets[1], config.building.1, config.relief);
    trees(&mut c, &mut rng, targets[2], config.tree.1, config.relief);
    cars(&mut c, &mut rng, targets[3], car, &road_list);
    clutter(&mut c, &mut rng, targets[4], config.clutter.1);

    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(BANDS * h * w);
    for band in &c.bands {
        data.extend(band.iter().map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32));
    }
    let image = Tensor4::from_vec(Shape4::new(1, BANDS, h, w)?, data)?;
    Tile::new(image, c.labels, vec![false; h * w])
}

/// Scenes for seeds `seeds`, otherwise configured as `config`.
pub fn synth_dataset(config: &SceneConfig, seeds: impl IntoIterator<Item = u64>) -> Result<Dataset> {
    let tiles = seeds
        .into_iter()
        .map(|seed| synth_scene(&SceneConfig { seed, ..config.clone() }))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(tiles, N_CLASSES)
}
