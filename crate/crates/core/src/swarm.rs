//! Swarm membership: one bit per swarm, eight swarms.

use thiserror::Error;

use crate::ringbuf::{OverflowPolicy, RingBuffer};
use crate::wire::RobotId;

pub const MAX_SWARMS: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("swarm id {0} outside 0..=7")]
pub struct SwarmRange(pub i32);

/// Membership bitfield: bit `i` set means member of swarm `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Hash)]
pub struct SwarmList(pub u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersection,
    Difference,
}

pub fn check_id(id: i32) -> Result<u8, SwarmRange> {
    if (0..MAX_SWARMS as i32).contains(&id) {
        Ok(id as u8)
    } else {
        Err(SwarmRange(id))
    }
}

impl SwarmList {
    pub fn contains(self, id: u8) -> bool {
        debug_assert!(id < MAX_SWARMS);
        self.0 & (1 << id) != 0
    }

    pub fn with(self, id: u8, member: bool) -> SwarmList {
        if member {
            SwarmList(self.0 | 1 << id)
        } else {
            SwarmList(self.0 & !(1 << id))
        }
    }

    /// Sets `dest` to `op(a, b)` on this robot's own bits.
    pub fn apply(self, op: SetOp, a: u8, b: u8, dest: u8) -> SwarmList {
        let (x, y) = (self.contains(a), self.contains(b));
        let r = match op {
            SetOp::Union => x || y,
            SetOp::Intersection => x && y,
            SetOp::Difference => x && !y,
        };
        self.with(dest, r)
    }
}

/// This robot's membership plus what neighbors last reported.
#[derive(Clone, Debug)]
pub struct SwarmRegistry {
    own: SwarmList,
    neighbors: RingBuffer<(RobotId, u8)>,
    dirty: bool,
    since_sent: u32,
    period: u32,
}

impl SwarmRegistry {
    /// `period`: resend the own list at least every `period` timesteps.
    pub fn new(capacity: usize, period: u32) -> SwarmRegistry {
        SwarmRegistry {
            own: SwarmList(0),
            neighbors: RingBuffer::new(capacity, OverflowPolicy::Overwrite),
            dirty: false,
            since_sent: 0,
            period: period.max(1),
        }
    }

    pub fn own(&self) -> SwarmList {
        self.own
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn capacity(&self) -> usize {
        self.neighbors.capacity()
    }

    pub fn join(&mut self, id: i32) -> Result<(), SwarmRange> {
        let id = check_id(id)?;
        self.set_own(self.own.with(id, true));
        Ok(())
    }

    pub fn leave(&mut self, id: i32) -> Result<(), SwarmRange> {
        let id = check_id(id)?;
        self.set_own(self.own.with(id, false));
        Ok(())
    }

    pub fn is_member(&self, id: i32) -> Result<bool, SwarmRange> {
        Ok(self.own.contains(check_id(id)?))
    }

    pub fn set_op(&mut self, op: SetOp, a: i32, b: i32, dest: i32) -> Result<(), SwarmRange> {
        let (a, b, dest) = (check_id(a)?, check_id(b)?, check_id(dest)?);
        self.set_own(self.own.apply(op, a, b, dest));
        Ok(())
    }

    fn set_own(&mut self, l: SwarmList) {
        if l != self.own {
            self.own = l;
            self.dirty = true;
        }
    }

    pub fn on_message(&mut self, robot: RobotId, bits: u8) {
        let found = self.neighbors.iter().position(|e| e.0 == robot);
        if let Some(i) = found {
            self.neighbors.get_mut(i).expect("index from iter").1 = bits;
            return;
        }
        self.neighbors
            .push((robot, bits))
            .expect("overwrite ring never rejects");
    }

    pub fn neighbor(&self, robot: RobotId) -> Option<SwarmList> {
        self.neighbors
            .iter()
            .find(|e| e.0 == robot)
            .map(|e| SwarmList(e.1))
    }

    pub fn neighbors(&self) -> impl Iterator<Item = (RobotId, SwarmList)> + '_ {
        self.neighbors.iter().map(|&(r, b)| (r, SwarmList(b)))
    }

    /// Called once per timestep; true when the own list should be sent.
    pub fn due(&mut self) -> bool {
        self.since_sent += 1;
        self.dirty || self.since_sent >= self.period
    }

    pub fn mark_sent(&mut self) {
        self.dirty = false;
        self.since_sent = 0;
    }
}
