#![no_main]

use calibforge::depth_io::{decode_depth_png, encode_depth_png};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(dm) = decode_depth_png(data) {
        let bytes = encode_depth_png(&dm).expect("decoded maps encode");
        assert_eq!(decode_depth_png(&bytes).unwrap(), dm);
    }
});
