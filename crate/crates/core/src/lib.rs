//! A compact swarm-robotics virtual machine: 16-bit values, an arena heap
//! with mark collection, neighbor and stigmergy runtimes, a small script
//! compiler and a discrete-time simulator.

pub mod bench;
pub mod heap;
pub mod lang;
pub mod neighbors;
pub mod ringbuf;
pub mod sim;
pub mod stigmergy;
pub mod strings;
pub mod swarm;
pub mod value;
pub mod vm;
pub mod wire;
