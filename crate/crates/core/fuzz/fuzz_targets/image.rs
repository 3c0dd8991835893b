#![no_main]

use std::collections::BTreeMap;
use std::sync::Arc;

use libfuzzer_sys::fuzz_target;
use swarmvm::lang::Image;
use swarmvm::vm::{Vm, VmConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(img) = Image::from_bytes(data) else {
        return;
    };
    let cfg = VmConfig {
        budget: Some(5_000),
        ..VmConfig::default()
    };
    if let Ok(mut vm) = Vm::new(Arc::new(img), &cfg, 0) {
        let _ = vm.timestep(&[], &BTreeMap::new());
    }
});
