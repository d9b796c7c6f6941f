#![no_main]

//! Feeds a byte stream to a cache as a router would, one PDU at a time.

use byzrp_core::model::{Asn, Vrp, VrpSet};
use byzrp_core::rtr::{handle_decode_error, handle_pdu, CacheState, DecodeError, Pdu, Timing};
use libfuzzer_sys::fuzz_target;

fn cache() -> CacheState {
    let mut state = CacheState::new(3, Timing::default());
    for asns in [&[1u32, 2][..], &[2, 3], &[3]] {
        let set: VrpSet = asns
            .iter()
            .map(|a| Vrp::roa(Asn(*a), "192.0.2.0/24".parse().unwrap(), 24, "ARIN").unwrap())
            .collect();
        state = state.publish_update(&set).0;
    }
    state
}

fuzz_target!(|data: &[u8]| {
    let state = cache();
    let mut buf = data;
    loop {
        match Pdu::decode(buf) {
            Ok((pdu, used)) => {
                let resp = handle_pdu(&state, &pdu, &buf[..used]);
                buf = &buf[used..];
                if resp.close {
                    break;
                }
            }
            Err(DecodeError::Incomplete(_)) => break,
            Err(err) => {
                if let Some(resp) = handle_decode_error(&err, buf) {
                    assert!(resp.close);
                }
                break;
            }
        }
    }
});
