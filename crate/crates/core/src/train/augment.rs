use rand::Rng;

use crate::dataset::{Dataset, Tile};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

/// An element of the dihedral group of the square: bit 0 flips columns,
/// bit 1 flips rows, bit 2 transposes (applied before the flips).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct D4(u8);

impl D4 {
    pub const IDENTITY: D4 = D4(0);

    pub fn all() -> impl Iterator<Item = D4> {
        (0..8).map(D4)
    }

    pub fn new(id: u8) -> Option<Self> {
        (id < 8).then_some(D4(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn inverse(self) -> Self {
        if self.0 & 4 == 0 {
            self
        } else {
            // transposing swaps the roles of the two flips
            D4(4 | (self.0 & 1) << 1 | (self.0 & 2) >> 1)
        }
    }

    /// Source position in a `p x p` input of output position `(y, x)`.
    pub fn source(self, y: usize, x: usize, p: usize) -> (usize, usize) {
        let (mut a, mut b) = if self.0 & 4 != 0 { (x, y) } else { (y, x) };
        if self.0 & 2 != 0 {
            a = p - 1 - a;
        }
        if self.0 & 1 != 0 {
            b = p - 1 - b;
        }
        (a, b)
    }

    /// Transforms a row-major `p x p` plane.
    pub fn apply<T: Copy>(self, plane: &[T], p: usize) -> Vec<T> {
        assert_eq!(plane.len(), p * p, "plane is not {p}x{p}");
        let mut out = Vec::with_capacity(p * p);
        for y in 0..p {
            for x in 0..p {
                let (a, b) = self.source(y, x, p);
                out.push(plane[a * p + b]);
            }
        }
        out
    }
}

/// A training crop with its labels and ignore flags, all under the same
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPatch {
    pub image: Tensor4<f32>,
    pub labels: Vec<u8>,
    pub ignore: Vec<bool>,
    pub transform: D4,
    pub tile: usize,
    pub y: usize,
    pub x: usize,
}

/// Crops the `p x p` window at `(y, x)` of `tile` and applies `t`.
pub fn augment(tile: &Tile, y: usize, x: usize, p: usize, t: D4) -> Result<(Tensor4<f32>, Vec<u8>, Vec<bool>)> {
    let image = tile.image.crop(y, x, p, p)?;
    let labels = t.apply(&crop_plane(&tile.labels, tile.width(), y, x, p), p);
    let ignore = t.apply(&crop_plane(&tile.ignore, tile.width(), y, x, p), p);
    let mut out = Tensor4::zeros(image.shape());
    for c in 0..image.shape().c {
        out.plane_mut(0, c).copy_from_slice(&t.apply(image.plane(0, c), p));
    }
    Ok((out, labels, ignore))
}

fn crop_plane<T: Copy>(v: &[T], w: usize, y: usize, x: usize, p: usize) -> Vec<T> {
    (0..p)
        .flat_map(|r| v[(y + r) * w + x..][..p].iter().copied())
        .collect()
}

/// Draws `batch_size` patches: a uniform tile among those that fit the
/// patch, a uniform position, a uniform transform.
pub fn sample_batch(
    dataset: &Dataset,
    patch_size: usize,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<AugmentedPatch>> {
    let eligible: Vec<usize> = dataset
        .tiles
        .iter()
        .enumerate()
        .filter(|(_, t)| t.height() >= patch_size && t.width() >= patch_size)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no tile is at least {patch_size}x{patch_size}"
        )));
    }
    (0..batch_size)
        .map(|_| {
            let tile = eligible[rng.random_range(0..eligible.len())];
            let t = &dataset.tiles[tile];
            let y = rng.random_range(0..=t.height() - patch_size);
            let x = rng.random_range(0..=t.width() - patch_size);
            let transform = D4(rng.random_range(0..8));
            let (image, labels, ignore) = augment(t, y, x, patch_size, transform)?;
            Ok(AugmentedPatch {
                image,
                labels,
                ignore,
                transform,
                tile,
                y,
                x,
            })
        })
        .collect()
}

/// Stacks patches into network input, one-hot targets and ignore flags.
pub fn assemble(patches: &[AugmentedPatch], n_classes: usize) -> Result<(Tensor4<f32>, Tensor4<f32>, Vec<bool>)> {
    let images: Vec<Tensor4<f32>> = patches.iter().map(|p| p.image.clone()).collect();
    let x = Tensor4::stack(&images)?;
    let s = x.shape();
    let labels: Vec<u8> = patches.iter().flat_map(|p| p.labels.iter().copied()).collect();
    let mut ignore: Vec<bool> = patches.iter().flat_map(|p| p.ignore.iter().copied()).collect();
    for (flag, &l) in ignore.iter_mut().zip(&labels) {
        *flag |= l as usize >= n_classes;
    }
    let targets = crate::nn::one_hot(&labels, Shape4::new(s.n, n_classes, s.h, s.w)?)?;
    Ok((x, targets, ignore))
}
