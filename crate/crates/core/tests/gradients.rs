//! Analytic gradients against central finite differences of the f64 reference.

mod support;

use cpg_core::{
    ce_loss, combined_loss, cpg_backward, cpg_forward, one_hot, softmax, CeVariant, CpgConfig,
    LabelMap, LogitMap, MapShape, MaskCollapse,
};
use rand::rngs::StdRng;
use rand::SeedableRng;
use support::oracle::{self, Collapse, Instance, Variant};

const FD_STEP: f64 = 1e-3;

fn to_lib(inst: &Instance) -> (LabelMap, LogitMap) {
    let labels = inst
        .labels
        .iter()
        .map(|l| l.map_or(255, |c| c as i32))
        .collect();
    let labels = LabelMap::new(inst.height, inst.width, labels, inst.classes, Some(255)).unwrap();
    let shape = MapShape::new(inst.classes, inst.height, inst.width);
    let z = inst.logits.iter().map(|&v| v as f32).collect();
    (labels, LogitMap::new(shape, z).unwrap())
}

fn lib_variant(v: Variant) -> CeVariant {
    match v {
        Variant::Softmax => CeVariant::SoftmaxCe,
        Variant::Bce => CeVariant::BceLogits,
    }
}

#[test]
fn ce_gradients_match_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..120 {
        let inst = Instance::random(&mut rng, 3, 5);
        let variant = if i % 2 == 0 {
            Variant::Softmax
        } else {
            Variant::Bce
        };
        let (labels, logits) = to_lib(&inst);
        let (loss, grad) = ce_loss(&logits, &one_hot(&labels), lib_variant(variant)).unwrap();
        let reference = oracle::ce(&inst, &inst.logits, variant);
        assert!((loss as f64 - reference).abs() <= 1e-5 * reference.abs().max(1.0));
        let fd = oracle::central_diff(&inst.logits, FD_STEP, |z| oracle::ce(&inst, z, variant));
        let err = oracle::max_rel_err(grad.data(), &fd);
        assert!(err <= 1e-4, "instance {i} ({variant:?}): rel err {err}");
        worst = worst.max(err);
    }
    eprintln!("ce worst relative error {worst:.3e}");
}

#[test]
fn cpg_backward_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(12);
    for i in 0..60 {
        let size = if i % 2 == 0 { 3 } else { 5 };
        let inst = Instance::random(&mut rng, size, 4);
        let (labels, logits) = to_lib(&inst);
        let cfg = CpgConfig::new(size, 1.0);
        let gt = one_hot(&labels);
        let pred = softmax(&logits);
        let fwd = cpg_forward(&gt, &pred, &cfg).unwrap();
        let reference = oracle::cpg(&inst, &inst.logits, size, Collapse::PerDirection);
        assert!((fwd.loss as f64 - reference).abs() <= 1e-5 * reference.max(1.0));

        let grad = cpg_backward(&fwd.mask, &fwd.residual, &pred, &logits, &cfg).unwrap();
        let fd = oracle::central_diff(&inst.logits, FD_STEP, |z| {
            oracle::cpg(&inst, z, size, Collapse::PerDirection)
        });
        let err = oracle::max_rel_err(grad.data(), &fd);
        assert!(err <= 1e-4, "instance {i} (M={size}): rel err {err}");
    }
}

#[test]
fn per_pixel_collapse_gradients() {
    let mut rng = StdRng::seed_from_u64(13);
    for i in 0..30 {
        let inst = Instance::random(&mut rng, 3, 4);
        let (labels, logits) = to_lib(&inst);
        let cfg = CpgConfig::new(3, 1.0).with_collapse(MaskCollapse::PerPixel);
        let report = combined_loss(&logits, &labels, &cfg).unwrap();
        let f =
            |z: &[f64]| oracle::combined(&inst, z, 3, 1.0, Variant::Softmax, Collapse::PerPixel);
        assert!((report.combined as f64 - f(&inst.logits)).abs() <= 1e-5);
        let fd = oracle::central_diff(&inst.logits, FD_STEP, f);
        let err = oracle::max_rel_err(report.grad_logits.data(), &fd);
        assert!(err <= 1e-4, "instance {i}: rel err {err}");
    }
}

#[test]
fn combined_gradient_alpha_one() {
    let mut rng = StdRng::seed_from_u64(14);
    for i in 0..50 {
        let inst = Instance::random(&mut rng, 3, 5);
        let (labels, logits) = to_lib(&inst);
        let cfg = CpgConfig::new(3, 1.0);
        let report = combined_loss(&logits, &labels, &cfg).unwrap();
        let f = |z: &[f64]| {
            oracle::combined(&inst, z, 3, 1.0, Variant::Softmax, Collapse::PerDirection)
        };
        let fd = oracle::central_diff(&inst.logits, FD_STEP, f);
        let err = oracle::max_rel_err(report.grad_logits.data(), &fd);
        assert!(err <= 1e-4, "instance {i}: rel err {err}");
    }
}

#[test]
fn zero_residual_gives_zero_cpg_gradient() {
    // a prediction that reproduces the GT gradients exactly: constant GT
    // gradients vanish, and so do uniform-prediction gradients
    let labels = LabelMap::new(3, 3, vec![1; 9], 2, None).unwrap();
    let logits = LogitMap::zeros(MapShape::new(2, 3, 3));
    let cfg = CpgConfig::new(3, 1.0);
    let fwd = cpg_forward(&one_hot(&labels), &softmax(&logits), &cfg).unwrap();
    assert_eq!(fwd.mask.n_plus(), 0);
    assert_eq!(fwd.loss, 0.0);
    let grad = cpg_backward(&fwd.mask, &fwd.residual, &softmax(&logits), &logits, &cfg).unwrap();
    assert!(grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn saturated_optimum_has_zero_gradient() {
    // saturated logits reproduce the one-hot map up to f32 rounding
    let labels = LabelMap::new(
        4,
        4,
        (0..16).map(|i| (i % 4 >= 2) as i32).collect(),
        2,
        None,
    )
    .unwrap();
    let gt = one_hot(&labels);
    let z: Vec<f32> = gt
        .data()
        .iter()
        .map(|&y| if y == 1.0 { 60.0 } else { -60.0 })
        .collect();
    let logits = LogitMap::new(gt.shape(), z).unwrap();
    let pred = softmax(&logits);
    let cfg = CpgConfig::new(3, 1.0);
    let fwd = cpg_forward(&gt, &pred, &cfg).unwrap();
    assert!(fwd.mask.n_plus() > 0);
    assert_eq!(fwd.loss, 0.0);
    let grad = cpg_backward(&fwd.mask, &fwd.residual, &pred, &logits, &cfg).unwrap();
    assert!(grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn alpha_zero_is_plain_cross_entropy() {
    let mut rng = StdRng::seed_from_u64(15);
    for _ in 0..20 {
        let inst = Instance::random(&mut rng, 3, 4);
        let (labels, logits) = to_lib(&inst);
        for variant in [CeVariant::SoftmaxCe, CeVariant::BceLogits] {
            let report =
                combined_loss(&logits, &labels, &CpgConfig::new(3, 0.0).with_ce(variant)).unwrap();
            let (ce, grad) = ce_loss(&logits, &one_hot(&labels), variant).unwrap();
            assert_eq!(report.combined, ce);
            assert_eq!(report.grad_logits.data(), grad.data());
        }
    }
}

#[test]
fn doubling_alpha_doubles_the_cpg_contribution() {
    let mut rng = StdRng::seed_from_u64(16);
    for _ in 0..20 {
        let inst = Instance::random(&mut rng, 5, 4);
        let (labels, logits) = to_lib(&inst);
        let one = combined_loss(&logits, &labels, &CpgConfig::new(5, 1.5)).unwrap();
        let two = combined_loss(&logits, &labels, &CpgConfig::new(5, 3.0)).unwrap();
        assert_eq!(one.cpg, two.cpg);
        let (d1, d2) = (one.combined - one.ce, two.combined - two.ce);
        assert!(
            (d2 - 2.0 * d1).abs() <= 1e-6 * d2.abs().max(1.0),
            "{d1} vs {d2}"
        );
    }
}
