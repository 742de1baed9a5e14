#![no_main]

use calibforge::evaluation::parse_predictions_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(preds) = parse_predictions_jsonl(text) {
        assert!(preds.len() <= text.lines().count());
    }
});
