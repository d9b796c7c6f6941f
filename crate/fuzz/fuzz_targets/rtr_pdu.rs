#![no_main]

use byzrp_core::rtr::{Pdu, MAX_PDU_LEN};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((pdu, used)) = Pdu::decode(data) {
        assert!(used <= data.len() && used as u32 <= MAX_PDU_LEN);
        let bytes = pdu.encode();
        let (again, n) = Pdu::decode(&bytes).expect("own output decodes");
        assert_eq!(n, bytes.len());
        assert_eq!(pdu, again);
    }
});
