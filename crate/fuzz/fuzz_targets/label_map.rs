#![no_main]

use cpg_core::tensor::tensor_from_bytes;
use cpg_core::{combined_loss, CpgConfig, LabelMap, LogitMap};
use libfuzzer_sys::fuzz_target;

// first byte: class count; second byte: ignore index; rest: a `.cpgt` file
fuzz_target!(|data: &[u8]| {
    let [classes, ignore, rest @ ..] = data else {
        return;
    };
    let Ok(t) = tensor_from_bytes(rest) else {
        return;
    };
    let Ok(t) = t.into_i32() else { return };
    let Ok(labels) = LabelMap::from_tensor(&t, *classes as usize, Some(*ignore as i32)) else {
        return;
    };
    if labels.shape().len() > 1 << 14 {
        return;
    }
    let logits = LogitMap::zeros(labels.shape());
    for size in [3, 5] {
        if let Ok(report) = combined_loss(&logits, &labels, &CpgConfig::new(size, 1.0)) {
            assert!(report.combined.is_finite());
            assert!(report.grad_logits.data().iter().all(|g| g.is_finite()));
        }
    }
});
