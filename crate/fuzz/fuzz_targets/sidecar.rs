#![no_main]

use byzrp_core::model::Skiplist;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(list) = Skiplist::parse_sidecar(text) {
        let out = list.to_sidecar();
        let again = Skiplist::parse_sidecar(&out).expect("own output parses");
        assert_eq!(again.to_sidecar(), out);
        assert_eq!(again.domains(), list.domains());
    }
});
