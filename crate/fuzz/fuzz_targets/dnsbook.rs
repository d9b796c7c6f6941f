#![no_main]

use byzrp_core::model::DnsBook;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(book) = DnsBook::parse(text) {
        assert!(book.len() <= text.lines().count());
    }
});
