//! Sobel-family differentiation kernels of arbitrary odd size.

use crate::error::{arg_err, Result};

/// Matched x/y differentiation kernels of size `M x M`, stored row-major.
///
/// `kx(i, j) = (j - m) / ((i - m)^2 + (j - m)^2)` with a zero center column,
/// where `m = (M - 1) / 2`, and `ky = kx^T`. For `M = 3` this is the Sobel
/// operator scaled by one half.
#[derive(Clone, Debug, PartialEq)]
pub struct GradKernel {
    size: usize,
    kx: Vec<f32>,
    ky: Vec<f32>,
}

impl GradKernel {
    pub fn new(size: usize) -> Result<Self> {
        validate_size(size)?;
        let m = (size / 2) as i64;
        let mut kx = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                let (di, dj) = (i as i64 - m, j as i64 - m);
                if dj != 0 {
                    kx[i * size + j] = (dj as f64 / (di * di + dj * dj) as f64) as f32;
                }
            }
        }
        let mut ky = vec![0.0f32; size * size];
        for i in 0..size {
            for j in 0..size {
                ky[i * size + j] = kx[j * size + i];
            }
        }
        Ok(Self { size, kx, ky })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half_width(&self) -> usize {
        self.size / 2
    }

    pub fn kx(&self) -> &[f32] {
        &self.kx
    }

    pub fn ky(&self) -> &[f32] {
        &self.ky
    }

    pub fn kx_at(&self, row: usize, col: usize) -> f32 {
        self.kx[row * self.size + col]
    }

    pub fn ky_at(&self, row: usize, col: usize) -> f32 {
        self.ky[row * self.size + col]
    }

    /// Per-row sums of `kx`, adding mirrored entries pairwise first.
    /// Antisymmetry then makes every sum exactly zero.
    pub fn row_sums(&self) -> Vec<f32> {
        let m = self.half_width();
        self.kx
            .chunks_exact(self.size)
            .map(|row| (0..m).map(|j| row[j] + row[self.size - 1 - j]).sum::<f32>() + row[m])
            .collect()
    }

    /// `kx` rendered as whitespace-separated rows.
    pub fn format_kx(&self) -> String {
        let mut out = String::new();
        for row in self.kx.chunks_exact(self.size) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>9.6}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }
}

pub fn validate_size(size: usize) -> Result<()> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(arg_err(format!(
            "kernel size must be odd and >= 3, got {size}"
        )));
    }
    Ok(())
}

pub fn generate_kernel(size: usize) -> Result<GradKernel> {
    GradKernel::new(size)
}
