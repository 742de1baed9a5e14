#![no_main]

use calibforge::se3::RigidTransform;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = serde_json::from_str::<RigidTransform>(text) {
        let back: RigidTransform = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
    if let Ok(t) = RigidTransform::parse_row_major_3x4(text) {
        assert!(t.to_homogeneous().iter().all(|v| v.is_finite()));
    }
});
