#![no_main]

use libfuzzer_sys::fuzz_target;
use swarmvm::lang::narrow::narrow_bytes;
use swarmvm::lang::Image;

fuzz_target!(|data: &[u8]| {
    if let Ok(n) = narrow_bytes(data) {
        assert!(n.len() <= data.len());
        Image::from_bytes(&n).expect("narrowed image must load");
    }
});
