#![no_main]

use byzrp_core::model::{parse_skiplist, serialize_skiplist};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(domains) = parse_skiplist(text) {
        let again = parse_skiplist(&serialize_skiplist(&domains)).expect("own output parses");
        assert_eq!(domains, again);
    }
});
