#![no_main]

use byzrp_core::config::NodeConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = NodeConfig::from_toml(text) {
        let again = NodeConfig::from_toml(&c.to_toml()).expect("own output parses");
        assert_eq!(c, again);
    }
});
