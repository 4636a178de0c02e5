#![no_main]

use cpg_core::synthlab::{generate_scene, SceneSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(spec) = SceneSpec::from_json(text) else {
        return;
    };
    if spec.height.saturating_mul(spec.width) > 1 << 16 {
        return;
    }
    if let Ok(labels) = generate_scene(&spec) {
        assert_eq!(labels.labels().len(), spec.height * spec.width);
        assert!(labels
            .labels()
            .iter()
            .all(|&l| (l as usize) < labels.num_classes()));
    }
});
