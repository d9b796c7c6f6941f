#![no_main]

use byzrp_core::model::Peerlist;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(list) = Peerlist::parse(text) {
        let again = Peerlist::parse(&list.serialize(None)).expect("own output parses");
        assert_eq!(list, again);
        if let Some(first) = list.iter().next() {
            let without = Peerlist::parse(&list.serialize(Some(first))).unwrap();
            assert!(!without.contains(first));
            assert_eq!(without.len(), list.len() - 1);
        }
    }
});
