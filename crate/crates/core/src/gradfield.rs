//! Per-channel gradient fields, their adjoint, and boundary masks.
//!
//! Correlation follows the un-flipped indexing
//! `G(i, j) = sum_{r,c} K(r, c) * I(i + r - m, j + c - m)` with out-of-image
//! reads clamped to the nearest edge pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::kernels::GradKernel;
use crate::probmaps::{MapShape, ProbMap};
use crate::tensor::Tensor;

/// Values at or below this magnitude count as "no gradient" when building masks.
pub const BOUNDARY_EPS: f32 = 1e-6;

/// Direction planes of a [`GradField`], in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    X = 0,
    Y = 1,
}

/// `[C, 2, H, W]` gradient values; direction axis is `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    shape: MapShape,
    data: Vec<f32>,
}

impl GradField {
    pub fn zeros(shape: MapShape) -> Self {
        Self {
            shape,
            data: vec![0.0; 2 * shape.len()],
        }
    }

    pub fn from_data(shape: MapShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != 2 * shape.len() {
            return Err(shape_err(format!(
                "gradient field over {shape} needs {} values, got {}",
                2 * shape.len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        let shape = match *t.dims() {
            [c, 2, h, w] => MapShape::new(c, h, w),
            _ => {
                return Err(shape_err(format!(
                    "gradient field must be [C, 2, H, W], got {:?}",
                    t.dims()
                )))
            }
        };
        Self::from_data(shape, t.into_data())
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

    pub fn plane(&self, c: usize, dir: Direction) -> &[f32] {
        let n = self.shape.pixels();
        let start = (2 * c + dir as usize) * n;
        &self.data[start..start + n]
    }

    pub fn get(&self, c: usize, dir: Direction, row: usize, col: usize) -> f32 {
        self.plane(c, dir)[row * self.shape.width + col]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        let s = self.shape;
        Tensor::new(vec![s.classes, 2, s.height, s.width], self.data.clone())
            .expect("shape matches buffer")
    }
}

/// Copy of `src` surrounded by `pad` replicated edge pixels on every side.
fn replicate_pad(src: &[f32], h: usize, w: usize, pad: usize) -> Vec<f32> {
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let mut out = vec![0.0f32; ph * pw];
    for (p, row) in out.chunks_exact_mut(pw).enumerate() {
        let sr = p.saturating_sub(pad).min(h - 1);
        let src_row = &src[sr * w..(sr + 1) * w];
        row[..pad].fill(src_row[0]);
        row[pad..pad + w].copy_from_slice(src_row);
        row[pad + w..].fill(src_row[w - 1]);
    }
    out
}

/// Correlate one `h x w` plane with a square `ksize` kernel, replicate padding.
pub(crate) fn correlate_plane(
    src: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    ksize: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    if h == 0 || w == 0 {
        return out;
    }
    let m = ksize / 2;
    let padded = replicate_pad(src, h, w, m);
    let pw = w + 2 * m;
    for (i, out_row) in out.chunks_exact_mut(w).enumerate() {
        for r in 0..ksize {
            let pad_row = &padded[(i + r) * pw..(i + r + 1) * pw];
            for c in 0..ksize {
                let k = kernel[r * ksize + c];
                if k == 0.0 {
                    continue;
                }
                for (o, &v) in out_row.iter_mut().zip(&pad_row[c..c + w]) {
                    *o += k * v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate_plane`]: scatter `upstream` back through the taps and
/// fold the padding ring onto the clamped source pixels. Accumulates into `out`.
pub(crate) fn correlate_plane_adjoint(
    upstream: &[f32],
    h: usize,
    w: usize,
    kernel: &[f32],
    ksize: usize,
    out: &mut [f32],
) {
    if h == 0 || w == 0 {
        return;
    }
    let m = ksize / 2;
    let pw = w + 2 * m;
    let ph = h + 2 * m;
    let mut padded = vec![0.0f32; ph * pw];
    for (i, up_row) in upstream.chunks_exact(w).enumerate() {
        for r in 0..ksize {
            let pad_row = &mut padded[(i + r) * pw..(i + r + 1) * pw];
            for c in 0..ksize {
                let k = kernel[r * ksize + c];
                if k == 0.0 {
                    continue;
                }
                for (p, &u) in pad_row[c..c + w].iter_mut().zip(up_row) {
                    *p += k * u;
                }
            }
        }
    }
    for (p, pad_row) in padded.chunks_exact(pw).enumerate() {
        let dst = p.saturating_sub(m).min(h - 1);
        let out_row = &mut out[dst * w..(dst + 1) * w];
        for (q, &v) in pad_row.iter().enumerate() {
            out_row[q.saturating_sub(m).min(w - 1)] += v;
        }
    }
}

fn check_kernel_fits(shape: MapShape, kernel: &GradKernel) -> Result<()> {
    let limit = 2 * shape.height.min(shape.width) + 1;
    if kernel.size() > limit {
        return Err(shape_err(format!(
            "kernel size {} exceeds the limit {limit} for a {}x{} image",
            kernel.size(),
            shape.height,
            shape.width
        )));
    }
    Ok(())
}

/// Gradient field of arbitrary `[C, H, W]` data.
pub fn correlate_raw(shape: MapShape, data: &[f32], kernel: &GradKernel) -> Result<GradField> {
    if data.len() != shape.len() {
        return Err(shape_err(format!(
            "map {shape} needs {} values, got {}",
            shape.len(),
            data.len()
        )));
    }
    check_kernel_fits(shape, kernel)?;
    let (h, w, n) = (shape.height, shape.width, shape.pixels());
    let ksize = kernel.size();
    let planes: Vec<Vec<f32>> = (0..2 * shape.classes)
        .into_par_iter()
        .map(|idx| {
            let c = idx / 2;
            let k = if idx % 2 == 0 {
                kernel.kx()
            } else {
                kernel.ky()
            };
            correlate_plane(&data[c * n..(c + 1) * n], h, w, k, ksize)
        })
        .collect();
    Ok(GradField {
        shape,
        data: planes.concat(),
    })
}

pub fn correlate(map: &ProbMap, kernel: &GradKernel) -> Result<GradField> {
    correlate_raw(map.shape(), map.data(), kernel)
}

/// Exact adjoint of [`correlate_raw`]; returns `[C, H, W]` data.
pub fn correlate_transpose_raw(upstream: &GradField, kernel: &GradKernel) -> Vec<f32> {
    let shape = upstream.shape();
    let (h, w) = (shape.height, shape.width);
    let ksize = kernel.size();
    let channels: Vec<Vec<f32>> = (0..shape.classes)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0f32; h * w];
            correlate_plane_adjoint(
                upstream.plane(c, Direction::X),
                h,
                w,
                kernel.kx(),
                ksize,
                &mut acc,
            );
            correlate_plane_adjoint(
                upstream.plane(c, Direction::Y),
                h,
                w,
                kernel.ky(),
                ksize,
                &mut acc,
            );
            acc
        })
        .collect();
    channels.concat()
}

pub fn correlate_transpose(upstream: &GradField, kernel: &GradKernel) -> Tensor<f32> {
    let data = correlate_transpose_raw(upstream, kernel);
    Tensor::new(upstream.shape().dims(), data).expect("shape matches buffer")
}

/// Gradient magnitude and angle in `(-pi, pi]`, each `[C, H, W]`.
pub fn magnitude_direction(field: &GradField) -> (Tensor<f32>, Tensor<f32>) {
    let shape = field.shape();
    let n = shape.pixels();
    let mut mag = Vec::with_capacity(shape.len());
    let mut theta = Vec::with_capacity(shape.len());
    for c in 0..shape.classes {
        let gx = field.plane(c, Direction::X);
        let gy = field.plane(c, Direction::Y);
        for px in 0..n {
            let (x, y) = (gx[px], gy[px]);
            mag.push(x.hypot(y));
            theta.push(angle(x, y));
        }
    }
    (
        Tensor::new(shape.dims(), mag).expect("shape matches buffer"),
        Tensor::new(shape.dims(), theta).expect("shape matches buffer"),
    )
}

fn angle(x: f32, y: f32) -> f32 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let t = y.atan2(x);
    // atan2(-0, negative) lands on -pi; the half-open range wants +pi
    if t == -std::f32::consts::PI {
        std::f32::consts::PI
    } else {
        t
    }
}

/// How mask elements are counted and which residuals they admit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCollapse {
    /// Each direction plane is masked independently.
    #[default]
    PerDirection,
    /// A pixel is masked in both planes when either plane has a gradient.
    PerPixel,
}

impl std::str::FromStr for MaskCollapse {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_direction" | "per-direction" => Ok(MaskCollapse::PerDirection),
            "per_pixel" | "per-pixel" => Ok(MaskCollapse::PerPixel),
            _ => Err(crate::Error::Argument(format!("unknown mask mode {s:?}"))),
        }
    }
}

/// `[C, 2, H, W]` indicator of ground-truth gradient support.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMask {
    shape: MapShape,
    mask: Vec<bool>,
    n_plus: usize,
    per_class: Vec<usize>,
}

impl BoundaryMask {
    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    /// Total number of set mask elements.
    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    /// Set elements per class, summed over both directions.
    pub fn per_class_counts(&self) -> &[usize] {
        &self.per_class
    }

    pub fn plane(&self, c: usize, dir: Direction) -> &[bool] {
        let n = self.shape.pixels();
        let start = (2 * c + dir as usize) * n;
        &self.mask[start..start + n]
    }

    pub fn get(&self, c: usize, dir: Direction, row: usize, col: usize) -> bool {
        self.plane(c, dir)[row * self.shape.width + col]
    }

    /// Columns with at least one set element in channel `c`, direction `dir`.
    pub fn columns(&self, c: usize, dir: Direction) -> Vec<usize> {
        let w = self.shape.width;
        let plane = self.plane(c, dir);
        (0..w)
            .filter(|&j| (0..self.shape.height).any(|i| plane[i * w + j]))
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        let s = self.shape;
        let data = self
            .mask
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![s.classes, 2, s.height, s.width], data).expect("shape matches buffer")
    }
}

pub fn extract_boundary(gt_field: &GradField) -> BoundaryMask {
    extract_boundary_with(gt_field, MaskCollapse::PerDirection)
}

pub fn extract_boundary_with(gt_field: &GradField, collapse: MaskCollapse) -> BoundaryMask {
    let shape = gt_field.shape();
    let n = shape.pixels();
    let mut mask: Vec<bool> = gt_field
        .data()
        .iter()
        .map(|v| v.abs() > BOUNDARY_EPS)
        .collect();
    if collapse == MaskCollapse::PerPixel {
        for c in 0..shape.classes {
            let (xs, ys) = mask[2 * c * n..2 * (c + 1) * n].split_at_mut(n);
            for (x, y) in xs.iter_mut().zip(ys.iter_mut()) {
                let any = *x || *y;
                *x = any;
                *y = any;
            }
        }
    }
    let per_class: Vec<usize> = mask
        .chunks_exact(2 * n.max(1))
        .map(|chunk| chunk.iter().filter(|&&b| b).count())
        .collect();
    let per_class = if n == 0 {
        vec![0; shape.classes]
    } else {
        per_class
    };
    let n_plus = per_class.iter().sum();
    BoundaryMask {
        shape,
        mask,
        n_plus,
        per_class,
    }
}
