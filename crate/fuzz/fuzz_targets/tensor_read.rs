#![no_main]

use cpg_core::tensor::{read_tensor, tensor_from_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let whole = tensor_from_bytes(data);
    let streamed = read_tensor(data);
    if let Ok(t) = whole {
        // the encoding is canonical, so a clean parse re-encodes to the input
        let mut back = Vec::new();
        t.write_to(&mut back).unwrap();
        assert_eq!(back, data);
        assert!(streamed.is_ok());
    }
});
