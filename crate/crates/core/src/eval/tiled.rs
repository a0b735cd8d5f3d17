use crate::arch::RfAnalyzer;
use crate::error::{Error, Result};
use crate::nn::{predict, ArchGraph, ParamStore};
use crate::tensor::{Shape4, Tensor4};

/// One axis of a tile: the network sees `[start, start + len)` and the
/// output is kept on `[write_start, write_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub write_start: usize,
    pub write_end: usize,
}

/// Splits `[0, length)` into cores of `tile` pixels, each extended by
/// `overlap` on both sides, with window bounds on multiples of `multiple`
/// and clipped to the image.
pub fn tile_windows(length: usize, tile: usize, overlap: usize, multiple: usize) -> Result<Vec<Window>> {
    if tile == 0 || multiple == 0 {
        return Err(Error::InvalidArgument("tile size and multiple must be positive".into()));
    }
    if length % multiple != 0 {
        return Err(Error::Shape(format!(
            "image side {length} is not a multiple of {multiple}"
        )));
    }
    let mut out = Vec::new();
    let mut c0 = 0;
    while c0 < length {
        let c1 = (c0 + tile).min(length);
        let start = c0.saturating_sub(overlap) / multiple * multiple;
        let end = ((c1 + overlap).div_ceil(multiple) * multiple).min(length);
        out.push(Window {
            start,
            len: end - start,
            write_start: c0,
            write_end: c1,
        });
        c0 = c1;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TiledPrediction {
    /// Arg-max class per pixel; ties go to the lower class index.
    pub labels: Vec<u8>,
    /// Pre-softmax class scores, `1 x K x H x W`.
    pub scores: Tensor4<f32>,
}

/// Inference on a `1 x C x H x W` image in independent tiles. `overlap`
/// must cover the network halo so that every written pixel sees the same
/// input as in a whole-image pass.
pub fn predict_tiled(
    graph: &ArchGraph,
    params: &ParamStore<f32>,
    image: &Tensor4<f32>,
    tile_size: usize,
    overlap: usize,
) -> Result<TiledPrediction> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::Shape(format!("expected a single image, got {} samples", s.n)));
    }
    let halo = RfAnalyzer::new(graph).halo();
    if overlap < halo {
        return Err(Error::OverlapTooSmall {
            required: halo,
            given: overlap,
        });
    }
    let m = graph.size_multiple();
    let rows = tile_windows(s.h, tile_size, overlap, m)?;
    let cols = tile_windows(s.w, tile_size, overlap, m)?;
    let k = graph.n_classes();
    let mut scores = Tensor4::zeros(Shape4::new(1, k, s.h, s.w)?);
    for wy in &rows {
        for wx in &cols {
            let crop = image.crop(wy.start, wx.start, wy.len, wx.len)?;
            let out = predict(graph, params, &crop)?;
            for c in 0..k {
                for y in wy.write_start..wy.write_end {
                    let src = &out.plane(0, c)[(y - wy.start) * wx.len..][..wx.len];
                    let dst = &mut scores.plane_mut(0, c)[y * s.w..][..s.w];
                    dst[wx.write_start..wx.write_end]
                        .copy_from_slice(&src[wx.write_start - wx.start..wx.write_end - wx.start]);
                }
            }
        }
    }
    Ok(TiledPrediction {
        labels: argmax_labels(&scores),
        scores,
    })
}

/// Per-pixel arg-max over channels of sample 0.
pub fn argmax_labels(scores: &Tensor4<f32>) -> Vec<u8> {
    let s = scores.shape();
    let p = s.plane();
    (0..p)
        .map(|i| {
            let mut best = 0;
            for c in 1..s.c {
                if scores.plane(0, c)[i] > scores.plane(0, best)[i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}
