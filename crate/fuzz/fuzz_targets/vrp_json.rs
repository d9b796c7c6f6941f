#![no_main]

use byzrp_core::model::VrpSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = VrpSet::from_json_slice(data) {
        let again = VrpSet::from_json_slice(&set.to_json_bytes()).expect("own output parses");
        assert_eq!(set, again);
    }
});
