#![no_main]

use byzrp_core::sim::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(s) = ScenarioConfig::from_json(text) {
        let again = ScenarioConfig::from_json(&s.to_json()).expect("own output parses");
        assert_eq!(s, again);
    }
});
