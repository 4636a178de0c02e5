//! Label maps, probability maps and the pixel-wise cross-entropy losses.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_IGNORE_INDEX: i32 = 255;

/// Channel count and spatial extent of a `[C, H, W]` map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MapShape {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn new(classes: usize, height: usize, width: usize) -> Self {
        Self {
            classes,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.classes * self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.classes, self.height, self.width]
    }

    fn from_dims(dims: &[usize], what: &str) -> Result<Self> {
        match *dims {
            [c, h, w] => Ok(Self::new(c, h, w)),
            _ => Err(shape_err(format!("{what} must be [C, H, W], got {dims:?}"))),
        }
    }
}

impl std::fmt::Display for MapShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}]", self.classes, self.height, self.width)
    }
}

pub(crate) fn ensure_same_shape(a: MapShape, b: MapShape, what: &str) -> Result<()> {
    if a != b {
        return Err(shape_err(format!("{what}: shapes {a} and {b} differ")));
    }
    Ok(())
}

/// Per-pixel class indices with an optional ignore value.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    ignore_index: Option<i32>,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<i32>,
        num_classes: usize,
        ignore_index: Option<i32>,
    ) -> Result<Self> {
        if labels.len() != height * width {
            return Err(shape_err(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Argument("label map needs at least one class".into()));
        }
        if let Some((idx, &bad)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| Some(l) != ignore_index && (l < 0 || l as usize >= num_classes))
        {
            return Err(Error::Data(format!(
                "label {bad} at pixel ({}, {}) is outside [0, {num_classes})",
                idx / width.max(1),
                idx % width.max(1)
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            ignore_index,
            labels,
        })
    }

    pub fn from_tensor(
        t: &Tensor<i32>,
        num_classes: usize,
        ignore_index: Option<i32>,
    ) -> Result<Self> {
        let &[h, w] = t.dims() else {
            return Err(shape_err(format!(
                "labels must be [H, W], got {:?}",
                t.dims()
            )));
        };
        Self::new(h, w, t.data().to_vec(), num_classes, ignore_index)
    }

    pub fn to_tensor(&self) -> Tensor<i32> {
        Tensor::new(vec![self.height, self.width], self.labels.clone())
            .expect("label map dims match its buffer")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_index(&self) -> Option<i32> {
        self.ignore_index
    }

    pub fn shape(&self) -> MapShape {
        MapShape::new(self.num_classes, self.height, self.width)
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.width + col]
    }

    /// Class index at flat pixel `idx`, or `None` when the pixel is ignored.
    pub fn class_at(&self, idx: usize) -> Option<usize> {
        let l = self.labels[idx];
        if Some(l) == self.ignore_index {
            None
        } else {
            Some(l as usize)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbKind {
    GroundTruth,
    Predicted,
}

/// Per-category probabilities, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    shape: MapShape,
    kind: ProbKind,
    data: Vec<f32>,
}

/// Tolerance on per-pixel channel sums of a predicted map.
pub const PREDICTED_SUM_TOL: f32 = 1e-5;

impl ProbMap {
    /// Wrap a tensor, checking the invariants for `kind`.
    pub fn from_tensor(t: Tensor<f32>, kind: ProbKind) -> Result<Self> {
        let shape = MapShape::from_dims(t.dims(), "probability map")?;
        let map = Self {
            shape,
            kind,
            data: t.into_data(),
        };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("probability {v} outside [0, 1]")));
        }
        let n = self.shape.pixels();
        for px in 0..n {
            let sum: f32 = (0..self.shape.classes).map(|c| self.data[c * n + px]).sum();
            let ok = match self.kind {
                ProbKind::Predicted => (sum - 1.0).abs() <= PREDICTED_SUM_TOL,
                ProbKind::GroundTruth => sum == 1.0 || sum == 0.0,
            };
            if !ok {
                return Err(Error::Data(format!(
                    "{:?} map: channel sum {sum} at pixel {px}",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(shape: MapShape, kind: ProbKind, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, kind, data }
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn kind(&self) -> ProbKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.shape.height + row) * self.shape.width + col]
    }

    /// Ground-truth pixels with all-zero channels are ignored pixels.
    pub fn is_ignored(&self, px: usize) -> bool {
        let n = self.shape.pixels();
        (0..self.shape.classes).all(|c| self.data[c * n + px] == 0.0)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.shape.dims(), self.data.clone()).expect("shape matches buffer")
    }

    pub fn channel_tensor(&self, c: usize) -> Tensor<f32> {
        Tensor::new(
            vec![self.shape.height, self.shape.width],
            self.channel(c).to_vec(),
        )
        .expect("shape matches buffer")
    }
}

/// Raw network outputs, `[C, H, W]`, finite values only.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitMap {
    shape: MapShape,
    data: Vec<f32>,
}

impl LogitMap {
    pub fn new(shape: MapShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(shape_err(format!(
                "logits {shape} need {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite logit {} at index {i}",
                data[i]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: MapShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        let shape = MapShape::from_dims(t.dims(), "logits")?;
        Self::new(shape, t.into_data())
    }

    /// Gradient buffers may legitimately hold any value; skip the finiteness check.
    pub(crate) fn from_parts(shape: MapShape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(self.shape.dims(), self.data.clone()).expect("shape matches buffer")
    }
}

pub fn one_hot(labels: &LabelMap) -> ProbMap {
    let shape = labels.shape();
    let n = shape.pixels();
    let mut data = vec![0.0f32; shape.len()];
    for px in 0..n {
        if let Some(c) = labels.class_at(px) {
            data[c * n + px] = 1.0;
        }
    }
    ProbMap::from_parts(shape, ProbKind::GroundTruth, data)
}

/// Channel-wise softmax at every pixel, max-subtracted.
pub fn softmax(logits: &LogitMap) -> ProbMap {
    let shape = logits.shape();
    let n = shape.pixels();
    let z = logits.data();
    let mut out = vec![0.0f32; shape.len()];
    let mut exps = vec![0.0f64; shape.classes];
    for px in 0..n {
        let max = (0..shape.classes)
            .map(|c| z[c * n + px])
            .fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut total = 0.0f64;
        for (c, e) in exps.iter_mut().enumerate() {
            *e = (z[c * n + px] as f64 - max).exp();
            total += *e;
        }
        for (c, e) in exps.iter().enumerate() {
            out[c * n + px] = (e / total) as f32;
        }
    }
    ProbMap::from_parts(shape, ProbKind::Predicted, out)
}

/// Which pixel-wise loss forms the main term of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeVariant {
    /// Softmax over channels followed by negative log-likelihood.
    #[default]
    SoftmaxCe,
    /// Independent per-channel logistic loss on raw logits.
    BceLogits,
}

impl std::str::FromStr for CeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" | "softmax_ce" | "ce" => Ok(CeVariant::SoftmaxCe),
            "bce" | "bce_logits" => Ok(CeVariant::BceLogits),
            _ => Err(Error::Argument(format!("unknown CE variant {s:?}"))),
        }
    }
}

/// Cross-entropy of `logits` against a ground-truth map, with its exact gradient.
///
/// Ignored pixels (all-zero ground truth) contribute neither loss nor gradient
/// and are excluded from the mean.
pub fn ce_loss(logits: &LogitMap, gt: &ProbMap, variant: CeVariant) -> Result<(f32, LogitMap)> {
    ensure_same_shape(logits.shape(), gt.shape(), "ce_loss")?;
    if gt.kind() != ProbKind::GroundTruth {
        return Err(Error::Argument(
            "ce_loss target must be a ground-truth map".into(),
        ));
    }
    let shape = logits.shape();
    let n = shape.pixels();
    let classes = shape.classes;
    let z = logits.data();
    let y = gt.data();

    let active: Vec<bool> = (0..n).map(|px| !gt.is_ignored(px)).collect();
    let n_active = active.iter().filter(|&&a| a).count();
    let mut grad = vec![0.0f32; shape.len()];
    if n_active == 0 {
        return Ok((0.0, LogitMap::from_parts(shape, grad)));
    }

    let mut total = 0.0f64;
    match variant {
        CeVariant::SoftmaxCe => {
            let scale = 1.0 / n_active as f64;
            let mut exps = vec![0.0f64; classes];
            for px in (0..n).filter(|&px| active[px]) {
                let max = (0..classes)
                    .map(|c| z[c * n + px] as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (c, e) in exps.iter_mut().enumerate() {
                    *e = (z[c * n + px] as f64 - max).exp();
                    sum += *e;
                }
                let lse = max + sum.ln();
                for (c, &e) in exps.iter().enumerate() {
                    let idx = c * n + px;
                    let yc = y[idx] as f64;
                    total += yc * (lse - z[idx] as f64);
                    grad[idx] = ((e / sum - yc) * scale) as f32;
                }
            }
            total *= scale;
        }
        CeVariant::BceLogits => {
            let scale = 1.0 / (n_active * classes) as f64;
            for px in (0..n).filter(|&px| active[px]) {
                for c in 0..classes {
                    let idx = c * n + px;
                    let zc = z[idx] as f64;
                    let yc = y[idx] as f64;
                    total += zc.max(0.0) - zc * yc + (-zc.abs()).exp().ln_1p();
                    grad[idx] = ((sigmoid(zc) - yc) * scale) as f32;
                }
            }
            total *= scale;
        }
    }
    Ok((total as f32, LogitMap::from_parts(shape, grad)))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pull a gradient with respect to probabilities back through the softmax.
///
/// Per pixel: `dz_c = p_c * (g_c - sum_k p_k g_k)`.
pub fn softmax_vjp(probs: &ProbMap, upstream: &[f32]) -> Vec<f32> {
    let shape = probs.shape();
    let n = shape.pixels();
    let p = probs.data();
    let mut out = vec![0.0f32; shape.len()];
    for px in 0..n {
        let dot: f64 = (0..shape.classes)
            .map(|c| p[c * n + px] as f64 * upstream[c * n + px] as f64)
            .sum();
        for c in 0..shape.classes {
            let idx = c * n + px;
            out[idx] = (p[idx] as f64 * (upstream[idx] as f64 - dot)) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(h: usize, w: usize, data: Vec<i32>, c: usize) -> LabelMap {
        LabelMap::new(h, w, data, c, Some(DEFAULT_IGNORE_INDEX)).unwrap()
    }

    #[test]
    fn one_hot_vectors() {
        let l = labels(1, 2, vec![2, 255], 4);
        let gt = one_hot(&l);
        let px0: Vec<f32> = (0..4).map(|c| gt.get(c, 0, 0)).collect();
        let px1: Vec<f32> = (0..4).map(|c| gt.get(c, 0, 1)).collect();
        assert_eq!(px0, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(px1, vec![0.0; 4]);

        let single = one_hot(&labels(1, 1, vec![0], 1));
        assert_eq!(single.data(), &[1.0]);
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let err = LabelMap::new(1, 2, vec![0, 4], 4, Some(255)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(matches!(
            LabelMap::new(1, 1, vec![-1], 4, None),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            LabelMap::new(1, 1, vec![255], 4, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn softmax_values() {
        let uniform = LogitMap::new(MapShape::new(4, 1, 1), vec![0.7; 4]).unwrap();
        assert!(softmax(&uniform)
            .data()
            .iter()
            .all(|&p| (p - 0.25).abs() < 1e-7));

        let two = LogitMap::new(MapShape::new(2, 1, 1), vec![0.0, 3f32.ln()]).unwrap();
        let p = softmax(&two);
        assert!((p.data()[0] - 0.25).abs() < 1e-6);
        assert!((p.data()[1] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = vec![0.3, -1.2, 2.5];
        let shifted: Vec<f32> = z.iter().map(|v| v + 100.0).collect();
        let a = softmax(&LogitMap::new(MapShape::new(3, 1, 1), z).unwrap());
        let b = softmax(&LogitMap::new(MapShape::new(3, 1, 1), shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn logits_reject_non_finite() {
        assert!(matches!(
            LogitMap::new(MapShape::new(1, 1, 2), vec![0.0, f32::NAN]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn saturated_ce_is_tiny() {
        let gt = one_hot(&labels(1, 2, vec![1, 0], 2));
        let z = LogitMap::new(MapShape::new(2, 1, 2), vec![-10.0, 10.0, 10.0, -10.0]).unwrap();
        let (loss, _) = ce_loss(&z, &gt, CeVariant::SoftmaxCe).unwrap();
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn uniform_ce_is_ln_c() {
        let gt = one_hot(&labels(2, 2, vec![0, 1, 2, 4], 5));
        let z = LogitMap::zeros(MapShape::new(5, 2, 2));
        let (loss, _) = ce_loss(&z, &gt, CeVariant::SoftmaxCe).unwrap();
        assert!((loss - 5f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let gt = one_hot(&labels(1, 3, vec![0, 1, 2], 3));
        let z = LogitMap::zeros(MapShape::new(3, 1, 3));
        let (loss, grad) = ce_loss(&z, &gt, CeVariant::BceLogits).unwrap();
        assert!((loss - 2f32.ln()).abs() < 1e-6);
        // d/dz at z = 0 is (0.5 - y) / (N * C)
        assert!((grad.data()[0] - (-0.5 / 9.0)).abs() < 1e-7);
        assert!((grad.data()[1] - (0.5 / 9.0)).abs() < 1e-7);
    }

    #[test]
    fn ignored_pixels_are_excluded() {
        let gt = one_hot(&labels(1, 2, vec![0, 255], 2));
        let z = LogitMap::new(MapShape::new(2, 1, 2), vec![0.0, 3.0, 0.0, -2.0]).unwrap();
        for variant in [CeVariant::SoftmaxCe, CeVariant::BceLogits] {
            let (loss, grad) = ce_loss(&z, &gt, variant).unwrap();
            assert_eq!(grad.data()[1], 0.0);
            assert_eq!(grad.data()[3], 0.0);
            let only_first = LogitMap::new(MapShape::new(2, 1, 1), vec![0.0, 0.0]).unwrap();
            let gt1 = one_hot(&labels(1, 1, vec![0], 2));
            let (ref_loss, _) = ce_loss(&only_first, &gt1, variant).unwrap();
            assert!((loss - ref_loss).abs() < 1e-7);
        }
    }

    #[test]
    fn all_ignored_gives_zero() {
        let gt = one_hot(&labels(1, 2, vec![255, 255], 2));
        let z = LogitMap::new(MapShape::new(2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (loss, grad) = ce_loss(&z, &gt, CeVariant::SoftmaxCe).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ce_rejects_mismatched_shapes() {
        let gt = one_hot(&labels(1, 2, vec![0, 1], 2));
        let z = LogitMap::zeros(MapShape::new(2, 2, 1));
        assert!(matches!(
            ce_loss(&z, &gt, CeVariant::SoftmaxCe),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn prob_map_validation() {
        let bad = Tensor::new(vec![2, 1, 1], vec![0.3f32, 0.3]).unwrap();
        assert!(ProbMap::from_tensor(bad.clone(), ProbKind::Predicted).is_err());
        assert!(ProbMap::from_tensor(bad, ProbKind::GroundTruth).is_err());
        let ok = Tensor::new(vec![2, 1, 2], vec![0.0f32, 1.0, 0.0, 0.0]).unwrap();
        assert!(ProbMap::from_tensor(ok, ProbKind::GroundTruth).is_ok());
    }
}
