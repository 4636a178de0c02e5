//! Reference implementations in f64, written directly from the defining
//! formulas with explicit clamped indexing. Used only to cross-check the
//! library; nothing here calls into `cpg_core` computation paths.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Softmax,
    Bce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collapse {
    PerDirection,
    PerPixel,
}

/// `kx(i, j) = (j - m) / ((i - m)^2 + (j - m)^2)`, zero on the center column.
pub fn kernel_x(size: usize) -> Vec<Vec<f64>> {
    let m = (size / 2) as f64;
    (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let (di, dj) = (i as f64 - m, j as f64 - m);
                    if dj == 0.0 {
                        0.0
                    } else {
                        dj / (di * di + dj * dj)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn kernel_y(size: usize) -> Vec<Vec<f64>> {
    let kx = kernel_x(size);
    (0..size)
        .map(|i| (0..size).map(|j| kx[j][i]).collect())
        .collect()
}

fn clampi(v: isize, n: usize) -> usize {
    v.max(0).min(n as isize - 1) as usize
}

/// Correlation of one plane with clamped reads.
pub fn correlate(plane: &[f64], h: usize, w: usize, k: &[Vec<f64>]) -> Vec<f64> {
    let size = k.len();
    let m = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (r, krow) in k.iter().enumerate() {
                for (c, &kv) in krow.iter().enumerate() {
                    let si = clampi(i as isize + r as isize - m, h);
                    let sj = clampi(j as isize + c as isize - m, w);
                    acc += kv * plane[si * w + sj];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

pub struct Instance {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Class per pixel, `None` for ignored.
    pub labels: Vec<Option<usize>>,
    pub logits: Vec<f64>,
}

impl Instance {
    pub fn random(rng: &mut StdRng, kernel_size: usize, max_classes: usize) -> Self {
        let m = kernel_size / 2;
        let classes = rng.gen_range(2..=max_classes);
        let lo = m.max(1);
        let height = rng.gen_range(lo..=8);
        let width = rng.gen_range(lo..=8);
        let n = height * width;
        let labels = (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(rng.gen_range(0..classes))
                }
            })
            .collect();
        let logits = (0..classes * n)
            .map(|_| rng.gen_range(-3.0f32..3.0) as f64)
            .collect();
        Self {
            classes,
            height,
            width,
            labels,
            logits,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut y = vec![0.0; self.classes * n];
        for (px, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                y[c * n + px] = 1.0;
            }
        }
        y
    }
}

pub fn softmax(z: &[f64], classes: usize, n: usize) -> Vec<f64> {
    let mut p = vec![0.0; z.len()];
    for px in 0..n {
        let max = (0..classes)
            .map(|c| z[c * n + px])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..classes).map(|c| (z[c * n + px] - max).exp()).sum();
        for c in 0..classes {
            p[c * n + px] = (z[c * n + px] - max).exp() / denom;
        }
    }
    p
}

pub fn ce(inst: &Instance, z: &[f64], variant: Variant) -> f64 {
    let n = inst.pixels();
    let active: Vec<usize> = (0..n).filter(|&px| inst.labels[px].is_some()).collect();
    if active.is_empty() {
        return 0.0;
    }
    match variant {
        Variant::Softmax => {
            let p = softmax(z, inst.classes, n);
            let total: f64 = active
                .iter()
                .map(|&px| -p[inst.labels[px].unwrap() * n + px].ln())
                .sum();
            total / active.len() as f64
        }
        Variant::Bce => {
            let y = inst.one_hot();
            let mut total = 0.0;
            for &px in &active {
                for c in 0..inst.classes {
                    let s = 1.0 / (1.0 + (-z[c * n + px]).exp());
                    let yc = y[c * n + px];
                    total -= yc * s.ln() + (1.0 - yc) * (1.0 - s).ln();
                }
            }
            total / (active.len() * inst.classes) as f64
        }
    }
}

/// Gradient planes `[C][2][H*W]` of a `[C, H, W]` map.
pub fn grad_planes(
    map: &[f64],
    classes: usize,
    h: usize,
    w: usize,
    size: usize,
) -> Vec<[Vec<f64>; 2]> {
    let (kx, ky) = (kernel_x(size), kernel_y(size));
    let n = h * w;
    (0..classes)
        .map(|c| {
            let plane = &map[c * n..(c + 1) * n];
            [correlate(plane, h, w, &kx), correlate(plane, h, w, &ky)]
        })
        .collect()
}

pub fn boundary_mask(gt_planes: &[[Vec<f64>; 2]], collapse: Collapse) -> Vec<[Vec<bool>; 2]> {
    gt_planes
        .iter()
        .map(|[gx, gy]| {
            let mx: Vec<bool> = gx.iter().map(|v| v.abs() > 1e-6).collect();
            let my: Vec<bool> = gy.iter().map(|v| v.abs() > 1e-6).collect();
            match collapse {
                Collapse::PerDirection => [mx, my],
                Collapse::PerPixel => {
                    let any: Vec<bool> = mx.iter().zip(&my).map(|(a, b)| *a || *b).collect();
                    [any.clone(), any]
                }
            }
        })
        .collect()
}

/// Masked mean squared gradient difference, 0 when nothing is masked.
pub fn cpg(inst: &Instance, z: &[f64], size: usize, collapse: Collapse) -> f64 {
    let (c, h, w) = (inst.classes, inst.height, inst.width);
    let gt = grad_planes(&inst.one_hot(), c, h, w, size);
    let mask = boundary_mask(&gt, collapse);
    let pred = grad_planes(&softmax(z, c, h * w), c, h, w, size);
    let mut sum = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for d in 0..2 {
            for px in 0..h * w {
                if mask[ch][d][px] {
                    let r = gt[ch][d][px] - pred[ch][d][px];
                    sum += r * r;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn combined(
    inst: &Instance,
    z: &[f64],
    size: usize,
    alpha: f64,
    variant: Variant,
    collapse: Collapse,
) -> f64 {
    ce(inst, z, variant) + alpha * cpg(inst, z, size, collapse)
}

/// Central finite differences of `f` at `x`.
pub fn central_diff(x: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest element-wise relative error. Each denominator is floored at 1% of
/// the reference gradient's largest magnitude so near-zero entries are judged
/// against the scale of the whole gradient rather than against themselves.
pub fn max_rel_err(analytic: &[f32], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-10);
    analytic
        .iter()
        .zip(reference)
        .map(|(&a, &r)| {
            let a = a as f64;
            (a - r).abs() / a.abs().max(r.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
