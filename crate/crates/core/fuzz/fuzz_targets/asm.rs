#![no_main]

use libfuzzer_sys::fuzz_target;
use swarmvm::lang::asm::{assemble, disassemble};
use swarmvm::lang::Width;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else {
        return;
    };
    for w in [Width::Narrow, Width::Wide] {
        if let Ok(p) = assemble(src, w) {
            let text = disassemble(&p);
            let again = assemble(&text, w).expect("disassembly must reassemble");
            assert_eq!(disassemble(&again), text);
        }
    }
});
