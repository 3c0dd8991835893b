#![no_main]

use libfuzzer_sys::fuzz_target;
use swarmvm::lang::{compile, CompileOptions};

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        let _ = compile(src, &CompileOptions::default());
    }
});
