//! Car-presence scoring: the per-pair detected/present ratio averaged over
//! pairs, plus a deterministic color-blob detector so the count of cars in a
//! predicted image needs no human annotation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pix2pix::{Checkpoint, Predictor};
use crate::raster::RasterImage;
use crate::scene::{CarBox, SceneMeta};

/// Cars detected in the prediction vs. present in the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub n_p: usize,
    pub n_g: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub id: String,
    pub counts: PairCounts,
    /// min(n_p/n_g, 1); None when n_g = 0 (excluded from the mean).
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pairs: Vec<PairEval>,
    /// Number of pairs with n_g > 0.
    pub m: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Per-channel absolute color difference accepted as "this car's paint".
    pub color_tolerance: f64,
    /// Blobs smaller than this many pixels are noise.
    pub min_blob_area: usize,
    /// A blob counts as the car when IoU(blob bbox, ground-truth box) reaches
    /// this threshold.
    pub iou_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            color_tolerance: 0.2,
            min_blob_area: 4,
            iou_threshold: 0.3,
        }
    }
}

/// Mean of clamped per-pair ratios; pairs with an empty ground truth carry
/// no signal and are excluded from m.
pub fn score(pairs: &[PairCounts]) -> Result<EvalReport> {
    score_with_ids(
        pairs
            .iter()
            .enumerate()
            .map(|(i, &c)| (format!("pair{i}"), c)),
    )
}

pub fn score_with_ids<I>(pairs: I) -> Result<EvalReport>
where
    I: IntoIterator<Item = (String, PairCounts)>,
{
    let mut evals = Vec::new();
    let mut m = 0usize;
    let mut total = 0.0f64;
    for (id, counts) in pairs {
        let ratio = if counts.n_g > 0 {
            let r = (counts.n_p as f64 / counts.n_g as f64).min(1.0);
            m += 1;
            total += r;
            Some(r)
        } else {
            None
        };
        evals.push(PairEval { id, counts, ratio });
    }
    if m == 0 {
        return Err(Error::UndefinedScore);
    }
    Ok(EvalReport {
        pairs: evals,
        m,
        score: total / m as f64,
    })
}

fn bbox_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let ix0 = a.0.max(b.0);
    let iy0 = a.1.max(b.1);
    let ix1 = a.2.min(b.2);
    let iy1 = a.3.min(b.3);
    if ix1 < ix0 || iy1 < iy0 {
        return 0.0;
    }
    let inter = ((ix1 - ix0 + 1) * (iy1 - iy0 + 1)) as f64;
    let area = |r: (usize, usize, usize, usize)| ((r.2 - r.0 + 1) * (r.3 - r.1 + 1)) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Search window around a ground-truth box: the box dilated by 30% of each
/// dimension (at least 2 px), clipped to the image. Color evidence for one
/// car is collected locally so a same-colored neighbor elsewhere in the
/// frame cannot stand in for it.
fn search_window(b: &CarBox, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let mx = (((b.u1 - b.u0 + 1) as f64 * 0.3).ceil() as usize).max(2);
    let my = (((b.v1 - b.v0 + 1) as f64 * 0.3).ceil() as usize).max(2);
    (
        b.u0.saturating_sub(mx),
        b.v0.saturating_sub(my),
        (b.u1 + mx).min(w - 1),
        (b.v1 + my).min(h - 1),
    )
}

/// Per-box detection flags: a ground-truth car counts as detected when a
/// 4-connected region of pixels within color tolerance of its body color,
/// inside the search window, has enough area and bbox IoU with the box.
pub fn detect_boxes(
    predicted: &RasterImage,
    meta: &SceneMeta,
    det: &DetectorConfig,
) -> Result<Vec<bool>> {
    if predicted.channels() != 3 {
        return Err(Error::invalid("predicted image", "expected 3 channels"));
    }
    let (w, h) = (predicted.width(), predicted.height());
    for b in &meta.boxes {
        if b.u1 >= w || b.v1 >= h {
            return Err(Error::ShapeMismatch {
                expected: format!("boxes within {w}x{h}"),
                got: format!("box ({},{})-({},{})", b.u0, b.v0, b.u1, b.v1),
            });
        }
    }
    let tol = det.color_tolerance as f32;
    let mut flags = Vec::with_capacity(meta.boxes.len());
    for b in &meta.boxes {
        let win = search_window(b, w, h);
        let (wx, wy) = (win.2 - win.0 + 1, win.3 - win.1 + 1);
        let color = b.body_color.map(|c| c as f32);
        let mask: Vec<bool> = (0..wx * wy)
            .map(|i| {
                let (u, v) = (win.0 + i % wx, win.1 + i / wx);
                (0..3).all(|ch| (predicted.data[[ch, v, u]] - color[ch]).abs() <= tol)
            })
            .collect();
        let mut seen = vec![false; wx * wy];
        let mut detected = false;
        for start in 0..wx * wy {
            if !mask[start] || seen[start] {
                continue;
            }
            // flood fill one component, tracking area and bbox
            let mut stack = vec![start];
            seen[start] = true;
            let mut area = 0usize;
            let (mut bu0, mut bv0, mut bu1, mut bv1) = (usize::MAX, usize::MAX, 0, 0);
            while let Some(i) = stack.pop() {
                area += 1;
                let (x, y) = (i % wx, i / wx);
                bu0 = bu0.min(x);
                bv0 = bv0.min(y);
                bu1 = bu1.max(x);
                bv1 = bv1.max(y);
                let mut push = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < wx {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - wx);
                }
                if y + 1 < wy {
                    push(i + wx);
                }
            }
            if area < det.min_blob_area {
                continue;
            }
            let blob = (bu0 + win.0, bv0 + win.1, bu1 + win.0, bv1 + win.1);
            if bbox_iou(blob, (b.u0, b.v0, b.u1, b.v1)) >= det.iou_threshold {
                detected = true;
                break;
            }
        }
        flags.push(detected);
    }
    Ok(flags)
}

/// Number of ground-truth cars found in the predicted image (0 <= n_p <= n_g).
pub fn detect_cars(
    predicted: &RasterImage,
    meta: &SceneMeta,
    det: &DetectorConfig,
) -> Result<usize> {
    Ok(detect_boxes(predicted, meta, det)?
        .iter()
        .filter(|&&d| d)
        .count())
}

/// One test pair ready for evaluation.
pub struct EvalItem {
    pub id: String,
    pub input: RasterImage,
    pub target: RasterImage,
    pub meta: SceneMeta,
}

/// Predict each pair, count cars, and score. With `use_target_as_prediction`
/// the ground-truth image itself is scored (an upper-bound sanity mode).
pub fn evaluate_run(
    ckpt: Option<&Checkpoint>,
    items: &[EvalItem],
    det: &DetectorConfig,
    use_target_as_prediction: bool,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut predictor = match (use_target_as_prediction, ckpt) {
        (true, _) => None,
        (false, Some(c)) => Some(Predictor::from_checkpoint(c)?),
        (false, None) => {
            return Err(Error::invalid("evaluate_run", "checkpoint required unless scoring ground truth"))
        }
    };
    let mut counted = Vec::with_capacity(items.len());
    for item in items {
        let predicted = match &mut predictor {
            Some(p) => p.predict(&item.input)?,
            None => item.target.clone(),
        };
        let n_p = detect_cars(&predicted, &item.meta, det)?;
        counted.push((item.id.clone(), PairCounts { n_p, n_g: item.meta.n_g() }));
    }
    score_with_ids(counted)
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair_id,n_p,n_g,ratio\n");
        for p in &self.pairs {
            writeln!(
                out,
                "{},{},{},{}",
                p.id,
                p.counts.n_p,
                p.counts.n_g,
                p.ratio.map_or(String::from(""), |r| r.to_string())
            )
            .unwrap();
        }
        writeln!(out, "# m={} score={}", self.m, self.score).unwrap();
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        format!("m={} score={:.4}", self.m, self.score)
    }
}
