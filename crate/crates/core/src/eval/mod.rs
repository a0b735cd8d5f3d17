//! Confusion-matrix metrics, boundary erosion of reference labels, and
//! overlap-tiled inference on large images.

mod tiled;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use tiled::{argmax_labels, predict_tiled, tile_windows, TiledPrediction, Window};

/// `k x k` counts; row = reference class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Shape(format!("{} counts for {k} classes", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Adds every pixel not flagged in `ignore`. Labels outside `0..k` are
    /// rejected.
    pub fn accumulate(&mut self, predicted: &[u8], reference: &[u8], ignore: Option<&[bool]>) -> Result<()> {
        if predicted.len() != reference.len() || ignore.is_some_and(|m| m.len() != reference.len()) {
            return Err(Error::Shape(format!(
                "{} predictions, {} references, {} ignore flags",
                predicted.len(),
                reference.len(),
                ignore.map_or(reference.len(), <[bool]>::len)
            )));
        }
        for (i, (&p, &r)) in predicted.iter().zip(reference).enumerate() {
            if ignore.is_some_and(|m| m[i]) {
                continue;
            }
            let (p, r) = (p as usize, r as usize);
            if p >= self.k || r >= self.k {
                return Err(Error::InvalidArgument(format!(
                    "label {} outside 0..{}",
                    p.max(r),
                    self.k
                )));
            }
            self.counts[r * self.k + p] += 1;
        }
        Ok(())
    }

    fn nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::NoValidPixels),
            t => Ok(t),
        }
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.nonempty()?;
        Ok(self.trace() as f64 / total as f64)
    }

    /// TP / (TP + FP); 0 when the class is never predicted.
    pub fn precision(&self, k: usize) -> f64 {
        let predicted: u64 = (0..self.k).map(|r| self.get(r, k)).sum();
        ratio(self.get(k, k), predicted)
    }

    /// TP / (TP + FN); 0 when the class never occurs.
    pub fn recall(&self, k: usize) -> f64 {
        let support: u64 = (0..self.k).map(|p| self.get(k, p)).sum();
        ratio(self.get(k, k), support)
    }

    pub fn f1(&self, k: usize) -> f64 {
        f1_score(self.precision(k), self.recall(k))
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub overall_accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub pixels: u64,
}

impl EvalReport {
    /// Fails when the matrix is empty. Missing names are filled with
    /// `class<i>`.
    pub fn new(m: &ConfusionMatrix, class_names: &[&str]) -> Result<Self> {
        let overall_accuracy = m.overall_accuracy()?;
        let k = m.classes();
        let f1: Vec<f64> = (0..k).map(|i| m.f1(i)).collect();
        Ok(EvalReport {
            class_names: (0..k)
                .map(|i| class_names.get(i).map_or_else(|| format!("class{i}"), |s| s.to_string()))
                .collect(),
            overall_accuracy,
            precision: (0..k).map(|i| m.precision(i)).collect(),
            recall: (0..k).map(|i| m.recall(i)).collect(),
            mean_f1: f1.iter().sum::<f64>() / k as f64,
            f1,
            pixels: m.total(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1\n");
        for (i, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(s, "{name},{:.6},{:.6},{:.6}", self.precision[i], self.recall[i], self.f1[i]);
        }
        let _ = writeln!(s, "mean_f1,,,{:.6}", self.mean_f1);
        let _ = writeln!(s, "overall_accuracy,,,{:.6}", self.overall_accuracy);
        s
    }

    /// One row: per-class F1, mean F1 and overall accuracy, in percent.
    pub fn to_table(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut s = String::new();
        for name in &self.class_names {
            let _ = write!(s, "{name:>width$} ");
        }
        let _ = writeln!(s, "{:>width$} {:>width$}", "mean F1", "OA");
        for f in &self.f1 {
            let _ = write!(s, "{:>width$.2} ", 100.0 * f);
        }
        let _ = writeln!(
            s,
            "{:>width$.2} {:>width$.2}",
            100.0 * self.mean_f1,
            100.0 * self.overall_accuracy
        );
        let _ = writeln!(s, "({} pixels; F1 of a class never referenced nor predicted counts as 0)", self.pixels);
        s
    }
}

/// Flags every pixel within Chebyshev distance `r` of a pixel with a
/// different label. `r = 0` flags nothing.
pub fn erode_labels(labels: &[u8], height: usize, width: usize, r: usize) -> Result<Vec<bool>> {
    if labels.len() != height * width {
        return Err(Error::Shape(format!("{} labels for {height}x{width}", labels.len())));
    }
    if r == 0 {
        return Ok(vec![false; labels.len()]);
    }
    // a window holds another label exactly when its min and max differ
    let lo = square_filter(labels, height, width, r, u8::min);
    let hi = square_filter(labels, height, width, r, u8::max);
    Ok(lo.iter().zip(&hi).map(|(a, b)| a != b).collect())
}

/// Separable `(2r+1) x (2r+1)` reduction, truncated at the borders.
fn square_filter(v: &[u8], h: usize, w: usize, r: usize, f: fn(u8, u8) -> u8) -> Vec<u8> {
    let mut rows = vec![0u8; v.len()];
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = v[y * w + a..=y * w + b].iter().copied().reduce(f).unwrap();
        }
    }
    let mut out = vec![0u8; v.len()];
    for y in 0..h {
        let (a, b) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (a..=b).map(|yy| rows[yy * w + x]).reduce(f).unwrap();
        }
    }
    out
}
