//! Timestep overhead and instruction throughput measurement.
//!
//! Overhead is the time spent in the substeps around the script (sensor
//! store, ingest of a synthetic inbox, flush); throughput is instructions
//! per second while running `step`. Together they give the instruction
//! budget that fits in a timestep of a given length.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::lang::image::Image;
use crate::vm::{Fault, Vm, VmConfig, VmError};
use crate::wire::{Delivery, Message, RobotId};

/// Timestep length the budget is derived for, in seconds.
pub const TIMESTEP_SECONDS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BenchError {
    #[error("measurement time must be positive")]
    BadDuration,
    #[error("{0}")]
    Vm(#[from] VmError),
    #[error("{0}")]
    Fault(#[from] Fault),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    pub timesteps: u64,
    pub instructions: u64,
    pub instructions_per_second: f64,
    /// Mean per-timestep time outside the script, in seconds.
    pub overhead_seconds: f64,
    pub budget: u64,
}

/// Instructions that fit in a [`TIMESTEP_SECONDS`] timestep once the fixed
/// overhead is paid.
pub fn derive_budget(overhead_seconds: f64, instructions_per_second: f64) -> u64 {
    let spare = (TIMESTEP_SECONDS - overhead_seconds).max(0.0);
    let b = spare * instructions_per_second.max(0.0);
    if b.is_finite() {
        b.floor() as u64
    } else {
        0
    }
}

/// One swarm-list frame from each of `n` neighbors in a ring of radius 1.
pub fn synthetic_inbox(n: usize) -> Vec<Delivery> {
    (0..n)
        .map(|i| {
            let robot = i as RobotId + 1;
            Delivery {
                sender: robot,
                distance: 1.0,
                azimuth: (i as f32 / n as f32) * std::f32::consts::TAU - std::f32::consts::PI,
                elevation: 0.0,
                frame: Message::Swarm { robot, bits: 0 }.encode(),
            }
        })
        .collect()
}

pub fn run(image: Arc<Image>, config: &VmConfig, seconds: f64) -> Result<BenchReport, BenchError> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(BenchError::BadDuration);
    }
    let mut cfg = config.clone();
    cfg.budget = None;
    let mut vm = Vm::new(image, &cfg, 0)?;
    vm.register_named("goto", crate::sim::goto_host())?;
    let sensors = BTreeMap::new();
    let inbox = synthetic_inbox(8);
    let first = vm.timestep(&[], &sensors);
    if let Some(f) = first.status {
        return Err(f.into());
    }
    let limit = Duration::from_secs_f64(seconds);
    let started = Instant::now();
    let mut overhead = Duration::ZERO;
    let mut script = Duration::ZERO;
    let mut instructions = 0;
    let mut timesteps = 0;
    while started.elapsed() < limit {
        let t0 = Instant::now();
        vm.set_sensors(&sensors);
        vm.ingest(&inbox)?;
        let t1 = Instant::now();
        let before = vm.counters().instructions;
        vm.run_step()?;
        let t2 = Instant::now();
        instructions += vm.counters().instructions - before;
        vm.flush();
        let t3 = Instant::now();
        overhead += (t1 - t0) + (t3 - t2);
        script += t2 - t1;
        timesteps += 1;
    }
    let ips = if script.is_zero() {
        0.0
    } else {
        instructions as f64 / script.as_secs_f64()
    };
    let overhead_seconds = overhead.as_secs_f64() / timesteps.max(1) as f64;
    Ok(BenchReport {
        timesteps,
        instructions,
        instructions_per_second: ips,
        overhead_seconds,
        budget: derive_budget(overhead_seconds, ips),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_formula() {
        assert_eq!(derive_budget(0.0, 1000.0), 100);
        assert_eq!(derive_budget(0.05, 1000.0), 50);
        assert_eq!(derive_budget(0.2, 1000.0), 0);
        assert_eq!(derive_budget(0.01, f64::INFINITY), 0);
    }
}
