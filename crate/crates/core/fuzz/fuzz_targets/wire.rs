#![no_main]

use libfuzzer_sys::fuzz_target;
use swarmvm::wire::Message;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Message::decode(data) {
        assert_eq!(m.encode().as_bytes(), data);
    }
});
