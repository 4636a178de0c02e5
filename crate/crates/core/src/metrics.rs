//! Segmentation metrics: confusion matrix / IoU, probability transects and a
//! boundary-sharpness score.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::probmaps::{LabelMap, ProbMap};

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<i64>,
    /// Ground-truth pixels whose prediction carried the ignore index.
    unassigned: Vec<i64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            unassigned: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> i64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> i64 {
        self.counts.iter().sum::<i64>() + self.unassigned.iter().sum::<i64>()
    }

    /// Accumulate every non-ignored ground-truth pixel. Ignored predictions count as misses.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(shape_err(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if pred.num_classes() != self.classes || gt.num_classes() != self.classes {
            return Err(shape_err(format!(
                "class counts differ: matrix {}, prediction {}, ground truth {}",
                self.classes,
                pred.num_classes(),
                gt.num_classes()
            )));
        }
        for px in 0..gt.labels().len() {
            let Some(g) = gt.class_at(px) else { continue };
            match pred.class_at(px) {
                Some(p) => self.counts[g * self.classes + p] += 1,
                // a false negative with no matching false positive
                None => self.unassigned[g] += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(
            self.classes, other.classes,
            "merging matrices of different sizes"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unassigned.iter_mut().zip(&other.unassigned) {
            *a += b;
        }
    }

    /// Per-class IoU; `None` for classes absent from both prediction and ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: i64 = (0..self.classes).map(|p| self.get(c, p)).sum::<i64>() - tp
                    + self.unassigned[c];
                let fp: i64 = (0..self.classes).map(|g| self.get(g, c)).sum::<i64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// IoU per class; absent classes report `NaN` here and are skipped in `mean`.
    pub per_class: Vec<f32>,
    pub mean: f32,
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn argmax_labels(pred: &ProbMap) -> LabelMap {
    let shape = pred.shape();
    let n = shape.pixels();
    let p = pred.data();
    let labels = (0..n)
        .map(|px| {
            let mut best = 0;
            for c in 1..shape.classes {
                if p[c * n + px] > p[best * n + px] {
                    best = c;
                }
            }
            best as i32
        })
        .collect();
    LabelMap::new(shape.height, shape.width, labels, shape.classes, None)
        .expect("argmax labels are in range")
}

pub fn miou(pred_labels: &LabelMap, gt_labels: &LabelMap) -> Result<IouReport> {
    let mut cm = ConfusionMatrix::new(gt_labels.num_classes());
    cm.accumulate(pred_labels, gt_labels)?;
    Ok(iou_report(&cm))
}

pub fn iou_report(cm: &ConfusionMatrix) -> IouReport {
    let ious = cm.iou();
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    IouReport {
        per_class: ious
            .iter()
            .map(|v| v.map_or(f32::NAN, |x| x as f32))
            .collect(),
        mean: mean as f32,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

/// Predicted probability and ground-truth indicator along one image line.
#[derive(Clone, Debug, PartialEq)]
pub struct Transect {
    pub axis: Axis,
    pub index: usize,
    pub class: usize,
    pub probability: Vec<f32>,
    pub gt: Vec<f32>,
}

impl Transect {
    /// `pixel_index,probability,gt` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pixel_index,probability,gt\n");
        for (i, (p, g)) in self.probability.iter().zip(&self.gt).enumerate() {
            out.push_str(&format!("{i},{p},{g}\n"));
        }
        out
    }

    /// Indices where the GT indicator differs from the previous position.
    pub fn gt_transitions(&self) -> Vec<usize> {
        self.gt
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(i, _)| i + 1)
            .collect()
    }
}

pub fn transect(
    pred: &ProbMap,
    gt: &ProbMap,
    class: usize,
    axis: Axis,
    index: usize,
) -> Result<Transect> {
    let shape = pred.shape();
    if gt.shape() != shape {
        return Err(shape_err(format!(
            "prediction {shape} and ground truth {} differ",
            gt.shape()
        )));
    }
    if class >= shape.classes {
        return Err(arg_err(format!(
            "class {class} out of range for {} classes",
            shape.classes
        )));
    }
    let (limit, len) = match axis {
        Axis::Row => (shape.height, shape.width),
        Axis::Column => (shape.width, shape.height),
    };
    if index >= limit {
        return Err(arg_err(format!(
            "{axis:?} index {index} out of range (< {limit})"
        )));
    }
    let at = |k: usize| match axis {
        Axis::Row => (index, k),
        Axis::Column => (k, index),
    };
    let probability = (0..len)
        .map(|k| {
            let (r, c) = at(k);
            pred.get(class, r, c)
        })
        .collect();
    let gt_trace = (0..len)
        .map(|k| {
            let (r, c) = at(k);
            gt.get(class, r, c)
        })
        .collect();
    Ok(Transect {
        axis,
        index,
        class,
        probability,
        gt: gt_trace,
    })
}

/// Mean `|p_c(a) - p_c(b)|` over 4-adjacent pixel pairs whose labels differ,
/// with `c` the class of `a`. Pairs touching an ignored pixel are skipped.
pub fn boundary_sharpness(pred: &ProbMap, gt_labels: &LabelMap) -> Result<f32> {
    let shape = pred.shape();
    if shape != gt_labels.shape() {
        return Err(shape_err(format!(
            "prediction {shape} and labels {} differ",
            gt_labels.shape()
        )));
    }
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    let mut visit = |a: (usize, usize), b: (usize, usize)| {
        let (Some(ca), Some(cb)) = (
            gt_labels.class_at(a.0 * w + a.1),
            gt_labels.class_at(b.0 * w + b.1),
        ) else {
            return;
        };
        if ca != cb {
            let d = pred.get(ca, a.0, a.1) - pred.get(ca, b.0, b.1);
            total += d.abs() as f64;
            pairs += 1;
        }
    };
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                visit((i, j), (i, j + 1));
            }
            if i + 1 < h {
                visit((i, j), (i + 1, j));
            }
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        (total / pairs as f64) as f32
    })
}
