//! The convolution-based probability gradient (CPG) loss and the combined
//! objective `ce + alpha * cpg`.
//!
//! The forward pass correlates ground-truth and predicted probabilities with
//! the same [`GradKernel`], keeps only positions where the ground-truth
//! gradient is nonzero, and averages the squared difference over those
//! positions. The ground-truth branch is constant, so the backward pass only
//! runs through the prediction: correlation adjoint, then softmax Jacobian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradfield::{
    correlate, correlate_transpose_raw, extract_boundary_with, BoundaryMask, GradField,
    MaskCollapse,
};
use crate::kernels::{validate_size, GradKernel};
use crate::probmaps::{
    ce_loss, ensure_same_shape, one_hot, softmax, softmax_vjp, CeVariant, LabelMap, LogitMap,
    ProbKind, ProbMap,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpgConfig {
    pub kernel_size: usize,
    pub alpha: f32,
    #[serde(default)]
    pub ce_variant: CeVariant,
    #[serde(default)]
    pub mask_collapse: MaskCollapse,
}

impl Default for CpgConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            alpha: 1.0,
            ce_variant: CeVariant::SoftmaxCe,
            mask_collapse: MaskCollapse::PerDirection,
        }
    }
}

impl CpgConfig {
    pub fn new(kernel_size: usize, alpha: f32) -> Self {
        Self {
            kernel_size,
            alpha,
            ..Self::default()
        }
    }

    pub fn with_ce(mut self, variant: CeVariant) -> Self {
        self.ce_variant = variant;
        self
    }

    pub fn with_collapse(mut self, collapse: MaskCollapse) -> Self {
        self.mask_collapse = collapse;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_size(self.kernel_size)?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Argument(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<GradKernel> {
        self.validate()?;
        GradKernel::new(self.kernel_size)
    }
}

/// Everything derived from the ground truth alone. Reusable across steps.
#[derive(Clone, Debug)]
pub struct CpgTarget {
    gt: ProbMap,
    kernel: GradKernel,
    gt_field: GradField,
    mask: BoundaryMask,
    collapse: MaskCollapse,
}

impl CpgTarget {
    pub fn new(gt: ProbMap, cfg: &CpgConfig) -> Result<Self> {
        if gt.kind() != ProbKind::GroundTruth {
            return Err(Error::Argument(
                "CPG target must be a ground-truth map".into(),
            ));
        }
        let kernel = cfg.kernel()?;
        let gt_field = correlate(&gt, &kernel)?;
        let mask = extract_boundary_with(&gt_field, cfg.mask_collapse);
        Ok(Self {
            gt,
            kernel,
            gt_field,
            mask,
            collapse: cfg.mask_collapse,
        })
    }

    pub fn from_labels(labels: &LabelMap, cfg: &CpgConfig) -> Result<Self> {
        Self::new(one_hot(labels), cfg)
    }

    pub fn gt(&self) -> &ProbMap {
        &self.gt
    }

    pub fn kernel(&self) -> &GradKernel {
        &self.kernel
    }

    pub fn gt_field(&self) -> &GradField {
        &self.gt_field
    }

    pub fn mask(&self) -> &BoundaryMask {
        &self.mask
    }

    /// Loss value and masked residual `mask * (grad_gt - grad_pred)`.
    pub fn forward(&self, pred: &ProbMap) -> Result<(f32, GradField)> {
        ensure_same_shape(self.gt.shape(), pred.shape(), "cpg_forward")?;
        let pred_field = correlate(pred, &self.kernel)?;
        let mut residual = GradField::zeros(pred.shape());
        let mut sum_sq = 0.0f64;
        for (((r, &g), &p), &m) in residual
            .data_mut()
            .iter_mut()
            .zip(self.gt_field.data())
            .zip(pred_field.data())
            .zip(self.mask.as_slice())
        {
            if m {
                *r = g - p;
                sum_sq += (*r as f64) * (*r as f64);
            }
        }
        let n_plus = self.mask.n_plus();
        let loss = if n_plus == 0 {
            0.0
        } else {
            (sum_sq / n_plus as f64) as f32
        };
        Ok((loss, residual))
    }
}

/// Result of [`cpg_forward`].
#[derive(Clone, Debug)]
pub struct CpgForward {
    pub loss: f32,
    pub mask: BoundaryMask,
    pub residual: GradField,
}

pub fn cpg_forward(gt: &ProbMap, pred: &ProbMap, cfg: &CpgConfig) -> Result<CpgForward> {
    let target = CpgTarget::new(gt.clone(), cfg)?;
    let (loss, residual) = target.forward(pred)?;
    Ok(CpgForward {
        loss,
        mask: target.mask,
        residual,
    })
}

/// Gradient of the CPG loss with respect to the logits that produced `pred`.
pub fn cpg_backward(
    mask: &BoundaryMask,
    residual: &GradField,
    pred: &ProbMap,
    logits: &LogitMap,
    cfg: &CpgConfig,
) -> Result<LogitMap> {
    let shape = pred.shape();
    ensure_same_shape(shape, logits.shape(), "cpg_backward logits")?;
    ensure_same_shape(shape, residual.shape(), "cpg_backward residual")?;
    ensure_same_shape(shape, mask.shape(), "cpg_backward mask")?;
    let kernel = cfg.kernel()?;
    Ok(cpg_backward_with_kernel(mask, residual, pred, &kernel))
}

fn cpg_backward_with_kernel(
    mask: &BoundaryMask,
    residual: &GradField,
    pred: &ProbMap,
    kernel: &GradKernel,
) -> LogitMap {
    let shape = pred.shape();
    let n_plus = mask.n_plus();
    if n_plus == 0 {
        return LogitMap::zeros(shape);
    }
    let scale = -2.0 / n_plus as f32;
    let mut upstream = GradField::zeros(shape);
    for ((u, &r), &m) in upstream
        .data_mut()
        .iter_mut()
        .zip(residual.data())
        .zip(mask.as_slice())
    {
        if m {
            *u = scale * r;
        }
    }
    let d_prob = correlate_transpose_raw(&upstream, kernel);
    LogitMap::from_parts(shape, softmax_vjp(pred, &d_prob))
}

/// Scalar loss components and the gradient of `combined` with respect to logits.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub ce: f32,
    pub cpg: f32,
    pub combined: f32,
    pub grad_logits: LogitMap,
    pub n_plus: usize,
    pub per_class_boundary_counts: Vec<usize>,
}

pub fn combined_loss(logits: &LogitMap, labels: &LabelMap, cfg: &CpgConfig) -> Result<LossReport> {
    ensure_same_shape(labels.shape(), logits.shape(), "combined_loss")?;
    let target = CpgTarget::from_labels(labels, cfg)?;
    combined_loss_with_target(logits, &target, cfg)
}

/// [`combined_loss`] against a precomputed ground-truth side.
pub fn combined_loss_with_target(
    logits: &LogitMap,
    target: &CpgTarget,
    cfg: &CpgConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if cfg.kernel_size != target.kernel.size() || cfg.mask_collapse != target.collapse {
        return Err(Error::Argument(
            "config does not match the precomputed CPG target".into(),
        ));
    }
    ensure_same_shape(target.gt.shape(), logits.shape(), "combined_loss")?;
    let (ce, ce_grad) = ce_loss(logits, &target.gt, cfg.ce_variant)?;
    let pred = softmax(logits);
    let (cpg, residual) = target.forward(&pred)?;
    let cpg_grad = cpg_backward_with_kernel(&target.mask, &residual, &pred, &target.kernel);

    let mut grad = ce_grad;
    for (g, &c) in grad.data_mut().iter_mut().zip(cpg_grad.data()) {
        *g += cfg.alpha * c;
    }
    Ok(LossReport {
        ce,
        cpg,
        combined: ce + cfg.alpha * cpg,
        grad_logits: grad,
        n_plus: target.mask.n_plus(),
        per_class_boundary_counts: target.mask.per_class_counts().to_vec(),
    })
}
