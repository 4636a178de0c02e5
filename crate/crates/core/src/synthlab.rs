//! Synthetic label scenes and a toy trainer.
//!
//! The trainer fits a free parameter field `theta` whose logits are
//! `box_blur(theta, radius)`. The blur stands in for the smoothness bias of a
//! convolutional predictor: with it, cross-entropy alone leaves soft
//! transitions at label edges, which is the regime the CPG term targets.

use serde::{Deserialize, Serialize};

use crate::cpg::{combined_loss_with_target, CpgConfig, CpgTarget};
use crate::error::{arg_err, Error, Result};
use crate::metrics::{argmax_labels, boundary_sharpness, miou};
use crate::probmaps::{softmax, LabelMap, LogitMap, MapShape};

/// Largest canvas `generate_scene` will rasterize.
pub const MAX_SCENE_PIXELS: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// One rasterization primitive. Later primitives overwrite earlier ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Rect {
        class: usize,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Disk {
        class: usize,
        center_row: usize,
        center_col: usize,
        radius: usize,
    },
    /// A 1-3 px wide bar. `position` is its first row/column; `start` and
    /// `length` bound it along its long axis (default: the whole canvas).
    Bar {
        class: usize,
        orientation: Orientation,
        position: usize,
        thickness: usize,
        #[serde(default)]
        start: usize,
        #[serde(default)]
        length: Option<usize>,
    },
}

impl Primitive {
    pub fn class(&self) -> usize {
        match *self {
            Primitive::Rect { class, .. }
            | Primitive::Disk { class, .. }
            | Primitive::Bar { class, .. } => class,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: usize,
    /// Class count; defaults to one more than the largest class used.
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default)]
    pub shapes: Vec<Primitive>,
    /// Recorded with the scene. Rasterization itself draws no random numbers.
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// 128x128, two classes, sixteen one-pixel vertical poles.
    pub fn poles() -> Self {
        let shapes = (0..16)
            .map(|k| Primitive::Bar {
                class: 1,
                orientation: Orientation::Vertical,
                position: 4 + 8 * k,
                thickness: 1,
                start: 16,
                length: Some(96),
            })
            .collect();
        Self {
            height: 128,
            width: 128,
            background: 0,
            classes: Some(2),
            shapes,
            seed: 0,
        }
    }

    /// Two-class vertical step: left half class 0, right half class 1.
    pub fn step(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            background: 0,
            classes: Some(2),
            shapes: vec![Primitive::Rect {
                class: 1,
                top: 0,
                left: width / 2,
                height,
                width: width - width / 2,
            }],
            seed: 0,
        }
    }

    /// Resolve `builtin:poles` / `builtin:step`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "poles" => Some(Self::poles()),
            "step" => Some(Self::step(64, 64)),
            _ => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("scene spec: {e}")))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.unwrap_or_else(|| {
            self.shapes
                .iter()
                .map(Primitive::class)
                .chain(std::iter::once(self.background))
                .max()
                .unwrap_or(0)
                + 1
        })
    }
}

fn fits(start: usize, len: usize, limit: usize) -> bool {
    start.checked_add(len).is_some_and(|end| end <= limit)
}

pub fn generate_scene(spec: &SceneSpec) -> Result<LabelMap> {
    let (h, w) = (spec.height, spec.width);
    if h == 0 || w == 0 {
        return Err(arg_err(format!("scene must be non-empty, got {h}x{w}")));
    }
    if h.checked_mul(w).is_none_or(|n| n > MAX_SCENE_PIXELS) {
        return Err(arg_err(format!(
            "scene {h}x{w} exceeds {MAX_SCENE_PIXELS} pixels"
        )));
    }
    let classes = spec.num_classes();
    if classes > i32::MAX as usize {
        return Err(arg_err(format!("{classes} classes is too many")));
    }
    let check_class = |c: usize| {
        if c >= classes {
            Err(arg_err(format!(
                "class {c} out of range for {classes} classes"
            )))
        } else {
            Ok(c as i32)
        }
    };
    let mut labels = vec![check_class(spec.background)?; h * w];

    for (idx, shape) in spec.shapes.iter().enumerate() {
        let class = check_class(shape.class())?;
        let out_of_bounds = || {
            arg_err(format!(
                "primitive {idx} ({shape:?}) leaves the {h}x{w} canvas"
            ))
        };
        match *shape {
            Primitive::Rect {
                top,
                left,
                height,
                width,
                ..
            } => {
                if !fits(top, height, h) || !fits(left, width, w) {
                    return Err(out_of_bounds());
                }
                for i in top..top + height {
                    labels[i * w + left..i * w + left + width].fill(class);
                }
            }
            Primitive::Disk {
                center_row,
                center_col,
                radius,
                ..
            } => {
                if center_row < radius
                    || center_col < radius
                    || !fits(center_row, radius + 1, h)
                    || !fits(center_col, radius + 1, w)
                {
                    return Err(out_of_bounds());
                }
                let r2 = (radius * radius) as u64;
                for i in center_row - radius..=center_row + radius {
                    for j in center_col - radius..=center_col + radius {
                        let di = i.abs_diff(center_row) as u64;
                        let dj = j.abs_diff(center_col) as u64;
                        if di * di + dj * dj <= r2 {
                            labels[i * w + j] = class;
                        }
                    }
                }
            }
            Primitive::Bar {
                orientation,
                position,
                thickness,
                start,
                length,
                ..
            } => {
                if !(1..=3).contains(&thickness) {
                    return Err(arg_err(format!(
                        "primitive {idx}: bar thickness must be 1-3 px, got {thickness}"
                    )));
                }
                let (across, along) = match orientation {
                    Orientation::Vertical => (w, h),
                    Orientation::Horizontal => (h, w),
                };
                let length = length.unwrap_or(along.saturating_sub(start));
                if !fits(position, thickness, across) || !fits(start, length, along) {
                    return Err(out_of_bounds());
                }
                for a in start..start + length {
                    for t in position..position + thickness {
                        let (i, j) = match orientation {
                            Orientation::Vertical => (a, t),
                            Orientation::Horizontal => (t, a),
                        };
                        labels[i * w + j] = class;
                    }
                }
            }
        }
    }
    LabelMap::new(h, w, labels, classes, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub steps: usize,
    /// Per-pixel step size; see [`train_toy`].
    pub lr: f32,
    pub lr_power: f32,
    pub blur_radius: usize,
    pub cpg: CpgConfig,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.3,
            lr_power: 2.0,
            blur_radius: 2,
            cpg: CpgConfig::default(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(arg_err("steps must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(arg_err(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lr_power.is_finite() && self.lr_power >= 0.0) {
            return Err(arg_err(format!(
                "lr_power must be >= 0, got {}",
                self.lr_power
            )));
        }
        self.cpg.validate()
    }

    /// Polynomially decayed rate for 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f32 {
        let frac = 1.0 - step as f64 / self.steps as f64;
        (self.lr as f64 * frac.powf(self.lr_power as f64)) as f32
    }
}

/// Normalized `(2r+1)^2` box filter with replicate padding, applied per plane.
#[derive(Clone, Copy, Debug)]
pub struct BoxBlur {
    pub radius: usize,
}

impl BoxBlur {
    fn rows(&self, src: &[f32], h: usize, w: usize) -> Vec<f32> {
        let r = self.radius as isize;
        let norm = 1.0 / (2 * r + 1) as f32;
        let mut out = vec![0.0f32; h * w];
        for i in 0..h {
            let row = &src[i * w..(i + 1) * w];
            for j in 0..w {
                let mut acc = 0.0f32;
                for d in -r..=r {
                    acc += row[(j as isize + d).clamp(0, w as isize - 1) as usize];
                }
                out[i * w + j] = acc * norm;
            }
        }
        out
    }

    fn rows_adjoint(&self, up: &[f32], h: usize, w: usize) -> Vec<f32> {
        let r = self.radius as isize;
        let norm = 1.0 / (2 * r + 1) as f32;
        let mut out = vec![0.0f32; h * w];
        for i in 0..h {
            for j in 0..w {
                let v = up[i * w + j] * norm;
                for d in -r..=r {
                    out[i * w + (j as isize + d).clamp(0, w as isize - 1) as usize] += v;
                }
            }
        }
        out
    }

    fn cols(&self, src: &[f32], h: usize, w: usize) -> Vec<f32> {
        let r = self.radius as isize;
        let norm = 1.0 / (2 * r + 1) as f32;
        let mut out = vec![0.0f32; h * w];
        for i in 0..h {
            for d in -r..=r {
                let si = (i as isize + d).clamp(0, h as isize - 1) as usize;
                for j in 0..w {
                    out[i * w + j] += src[si * w + j];
                }
            }
            for v in &mut out[i * w..(i + 1) * w] {
                *v *= norm;
            }
        }
        out
    }

    fn cols_adjoint(&self, up: &[f32], h: usize, w: usize) -> Vec<f32> {
        let r = self.radius as isize;
        let norm = 1.0 / (2 * r + 1) as f32;
        let mut out = vec![0.0f32; h * w];
        for i in 0..h {
            for d in -r..=r {
                let di = (i as isize + d).clamp(0, h as isize - 1) as usize;
                for j in 0..w {
                    out[di * w + j] += up[i * w + j] * norm;
                }
            }
        }
        out
    }

    fn for_each_plane(shape: MapShape, data: &[f32], f: impl Fn(&[f32]) -> Vec<f32>) -> Vec<f32> {
        let n = shape.pixels();
        (0..shape.classes)
            .flat_map(|c| f(&data[c * n..(c + 1) * n]))
            .collect()
    }

    pub fn apply(&self, shape: MapShape, data: &[f32]) -> Vec<f32> {
        if self.radius == 0 {
            return data.to_vec();
        }
        let (h, w) = (shape.height, shape.width);
        Self::for_each_plane(shape, data, |p| self.cols(&self.rows(p, h, w), h, w))
    }

    pub fn adjoint(&self, shape: MapShape, data: &[f32]) -> Vec<f32> {
        if self.radius == 0 {
            return data.to_vec();
        }
        let (h, w) = (shape.height, shape.width);
        Self::for_each_plane(shape, data, |p| {
            self.rows_adjoint(&self.cols_adjoint(p, h, w), h, w)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub lr: f32,
    pub ce: f32,
    pub cpg: f32,
    pub combined: f32,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logits: LogitMap,
    pub history: Vec<StepSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub miou: f32,
    pub per_class: Vec<f32>,
    pub sharpness: f32,
}

impl TrainOutcome {
    pub fn evaluate(&self, labels: &LabelMap) -> Result<FitSummary> {
        let pred = softmax(&self.logits);
        let iou = miou(&argmax_labels(&pred), labels)?;
        Ok(FitSummary {
            miou: iou.mean,
            per_class: iou.per_class,
            sharpness: boundary_sharpness(&pred, labels)?,
        })
    }
}

/// Full-batch gradient descent on `ce + alpha * cpg` over logits `blur(theta)`.
///
/// `theta` starts at zero. Step `t` moves by
/// `lr * (1 - t/steps)^lr_power * H * W * d(loss)/d(theta)`: both loss terms
/// are means, so the pixel-count factor makes `lr` a per-pixel step size whose
/// useful range does not depend on the image size.
pub fn train_toy(labels: &LabelMap, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shape = labels.shape();
    let target = CpgTarget::from_labels(labels, &cfg.cpg)?;
    let blur = BoxBlur {
        radius: cfg.blur_radius,
    };
    let pixel_scale = shape.pixels() as f32;

    let mut theta = vec![0.0f32; shape.len()];
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let logits =
            LogitMap::new(shape, blur.apply(shape, &theta)).map_err(|e| Error::Training {
                step,
                reason: e.to_string(),
            })?;
        let report = combined_loss_with_target(&logits, &target, &cfg.cpg)?;
        if !report.combined.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("combined loss is {}", report.combined),
            });
        }
        let lr = cfg.lr_at(step);
        let grad_theta = blur.adjoint(shape, report.grad_logits.data());
        let step_size = lr * pixel_scale;
        for (t, g) in theta.iter_mut().zip(&grad_theta) {
            *t -= step_size * g;
        }
        history.push(StepSummary {
            step,
            lr,
            ce: report.ce,
            cpg: report.cpg,
            combined: report.combined,
        });
    }
    let logits = LogitMap::new(shape, blur.apply(shape, &theta)).map_err(|e| Error::Training {
        step: cfg.steps,
        reason: e.to_string(),
    })?;
    Ok(TrainOutcome { logits, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize, w: usize, shapes: Vec<Primitive>) -> SceneSpec {
        SceneSpec {
            height: h,
            width: w,
            background: 0,
            classes: Some(2),
            shapes,
            seed: 7,
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let l = generate_scene(&spec(4, 5, vec![])).unwrap();
        assert!(l.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn full_rect_overwrites() {
        let rect = Primitive::Rect {
            class: 1,
            top: 0,
            left: 0,
            height: 4,
            width: 5,
        };
        let l = generate_scene(&spec(4, 5, vec![rect])).unwrap();
        assert!(l.labels().iter().all(|&v| v == 1));
    }

    #[test]
    fn single_pixel_bar() {
        let bar = Primitive::Bar {
            class: 1,
            orientation: Orientation::Vertical,
            position: 5,
            thickness: 1,
            start: 0,
            length: None,
        };
        let l = generate_scene(&spec(16, 16, vec![bar])).unwrap();
        let ones: Vec<usize> = (0..256).filter(|&i| l.labels()[i] == 1).collect();
        assert_eq!(ones.len(), 16);
        assert!(ones.iter().all(|i| i % 16 == 5));
    }

    #[test]
    fn disk_rasterizes_symmetric() {
        let disk = Primitive::Disk {
            class: 1,
            center_row: 5,
            center_col: 5,
            radius: 2,
        };
        let l = generate_scene(&spec(11, 11, vec![disk])).unwrap();
        // radius-2 lattice disk has 13 points
        assert_eq!(l.labels().iter().filter(|&&v| v == 1).count(), 13);
    }

    #[test]
    fn out_of_bounds_primitives() {
        let cases = vec![
            Primitive::Rect {
                class: 1,
                top: 3,
                left: 0,
                height: 2,
                width: 1,
            },
            Primitive::Disk {
                class: 1,
                center_row: 1,
                center_col: 2,
                radius: 2,
            },
            Primitive::Bar {
                class: 1,
                orientation: Orientation::Horizontal,
                position: 3,
                thickness: 2,
                start: 0,
                length: None,
            },
        ];
        for p in cases {
            assert!(matches!(
                generate_scene(&spec(4, 4, vec![p])),
                Err(Error::Argument(_))
            ));
        }
        let thick = Primitive::Bar {
            class: 1,
            orientation: Orientation::Vertical,
            position: 0,
            thickness: 4,
            start: 0,
            length: None,
        };
        assert!(generate_scene(&spec(8, 8, vec![thick])).is_err());
        let bad_class = Primitive::Rect {
            class: 2,
            top: 0,
            left: 0,
            height: 1,
            width: 1,
        };
        assert!(generate_scene(&spec(4, 4, vec![bad_class])).is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        let text = r#"{"height": 8, "width": 8, "background": 0,
            "shapes": [{"kind": "bar", "class": 2, "orientation": "horizontal", "position": 3, "thickness": 2}],
            "seed": 3}"#;
        let s = SceneSpec::from_json(text).unwrap();
        assert_eq!(s.num_classes(), 3);
        let l = generate_scene(&s).unwrap();
        assert_eq!(l.labels().iter().filter(|&&v| v == 2).count(), 16);
        let again = SceneSpec::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(again, s);
        assert!(SceneSpec::from_json("{\"height\": 1}").is_err());
    }

    #[test]
    fn poles_scene_layout() {
        let l = generate_scene(&SceneSpec::poles()).unwrap();
        assert_eq!((l.height(), l.width(), l.num_classes()), (128, 128, 2));
        assert_eq!(l.labels().iter().filter(|&&v| v == 1).count(), 16 * 96);
    }

    #[test]
    fn blur_adjoint_identity() {
        let shape = MapShape::new(2, 5, 7);
        let u: Vec<f32> = (0..shape.len())
            .map(|i| ((i * 29) % 13) as f32 - 6.0)
            .collect();
        let v: Vec<f32> = (0..shape.len())
            .map(|i| ((i * 17) % 7) as f32 * 0.5)
            .collect();
        for radius in [1, 2, 3] {
            let b = BoxBlur { radius };
            let lhs: f64 = b
                .apply(shape, &u)
                .iter()
                .zip(&v)
                .map(|(a, b)| (*a * *b) as f64)
                .sum();
            let rhs: f64 = u
                .iter()
                .zip(b.adjoint(shape, &v))
                .map(|(a, b)| (*a * b) as f64)
                .sum();
            assert!(
                (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let shape = MapShape::new(1, 4, 6);
        let out = BoxBlur { radius: 2 }.apply(shape, &vec![3.0; shape.len()]);
        assert!(out.iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainerConfig {
            steps: 10,
            lr: 0.5,
            ..TrainerConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.5);
        assert!((cfg.lr_at(5) - 0.125).abs() < 1e-7);
    }

    #[test]
    fn unconstrained_ce_fits_exactly() {
        let labels = generate_scene(&SceneSpec::step(12, 12)).unwrap();
        let cfg = TrainerConfig {
            steps: 500,
            lr: 0.5,
            blur_radius: 0,
            cpg: CpgConfig::new(3, 0.0),
            ..TrainerConfig::default()
        };
        let out = train_toy(&labels, &cfg).unwrap();
        assert_eq!(out.history.len(), 500);
        let fit = out.evaluate(&labels).unwrap();
        assert_eq!(fit.miou, 1.0);
        let last = out.history.last().unwrap();
        assert!(last.ce < out.history[0].ce);
        assert!(out.history.iter().all(|s| s.combined.is_finite()));
    }

    #[test]
    fn rejects_bad_config() {
        let labels = generate_scene(&SceneSpec::step(4, 4)).unwrap();
        let zero_steps = TrainerConfig {
            steps: 0,
            ..TrainerConfig::default()
        };
        assert!(train_toy(&labels, &zero_steps).is_err());
        let zero_lr = TrainerConfig {
            lr: 0.0,
            ..TrainerConfig::default()
        };
        assert!(train_toy(&labels, &zero_lr).is_err());
    }
}
