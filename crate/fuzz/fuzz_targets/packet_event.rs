#![no_main]

use byzrp_core::monitor::PacketEvent;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(ev) = text.parse::<PacketEvent>() {
        let again: PacketEvent = ev.to_string().parse().expect("own output parses");
        assert_eq!(ev, again);
    }
});
