//! Labeled rasters as consumed by training and evaluation.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// One labeled image: a `1 x C x H x W` raster, `H * W` class labels and an
/// ignore flag per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub image: Tensor4<f32>,
    pub labels: Vec<u8>,
    pub ignore: Vec<bool>,
}

impl Tile {
    pub fn new(image: Tensor4<f32>, labels: Vec<u8>, ignore: Vec<bool>) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 {
            return Err(Error::Shape(format!("tile image must hold one sample, got {}", s.n)));
        }
        if labels.len() != s.plane() || ignore.len() != s.plane() {
            return Err(Error::Shape(format!(
                "{}x{} image with {} labels and {} ignore flags",
                s.h,
                s.w,
                labels.len(),
                ignore.len()
            )));
        }
        Ok(Tile { image, labels, ignore })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    pub fn channels(&self) -> usize {
        self.image.shape().c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tiles: Vec<Tile>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(tiles: Vec<Tile>, n_classes: usize) -> Result<Self> {
        if let Some(first) = tiles.first() {
            if tiles.iter().any(|t| t.channels() != first.channels()) {
                return Err(Error::Shape("tiles disagree on channel count".into()));
            }
        }
        Ok(Dataset { tiles, n_classes })
    }

    pub fn channels(&self) -> Option<usize> {
        self.tiles.first().map(Tile::channels)
    }
}
