#![no_main]

use calibforge::dataset::kitti_calibration_from_text;
use libfuzzer_sys::fuzz_target;

// Input: cam-to-cam text, a NUL byte, velo-to-cam text.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (cam, velo) = text.split_once('\0').unwrap_or((text, ""));
    if let Ok((k, t)) = kitti_calibration_from_text(cam, velo) {
        assert!(k.validate().is_ok());
        assert!(t.to_homogeneous().iter().all(|v| v.is_finite()));
    }
});
