#![no_main]

use calibforge::dataset::{manifest_from_json, manifest_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = manifest_from_json(text) {
        let again = manifest_from_json(&manifest_to_json(&m)).expect("written manifests parse");
        assert_eq!(manifest_to_json(&again), manifest_to_json(&m));
    }
});
