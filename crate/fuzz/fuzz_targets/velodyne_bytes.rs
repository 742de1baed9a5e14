#![no_main]

use calibforge::dataset::{encode_velodyne, parse_velodyne_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pc) = parse_velodyne_bytes(data) {
        assert_eq!(pc.len() * 16, data.len());
        // Finite inputs survive a re-encode unchanged.
        if pc.points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            assert_eq!(parse_velodyne_bytes(&encode_velodyne(&pc)).unwrap().points, pc.points);
        }
    }
});
