//! Neighbor table and topic subscriptions.
//!
//! Records live in a fixed ring, not on the heap. Hearing a robot moves its
//! record to the newest position, so when the ring is full the robot heard
//! least recently is the one dropped.

use thiserror::Error;

use crate::ringbuf::{OverflowPolicy, RingBuffer};
use crate::value::{StrId, Value};
use crate::wire::RobotId;

pub const DEFAULT_STALENESS: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct NeighborRecord {
    pub robot: RobotId,
    pub distance: f32,
    pub azimuth: f32,
    pub elevation: f32,
    /// Timesteps since last heard.
    pub age: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("subscription table full")]
pub struct SubscriptionsFull;

#[derive(Clone, Debug)]
pub struct NeighborTable {
    records: RingBuffer<NeighborRecord>,
    staleness: u8,
    subs: Vec<(StrId, Value)>,
    sub_capacity: usize,
}

impl NeighborTable {
    pub fn new(capacity: usize, staleness: u8, sub_capacity: usize) -> NeighborTable {
        NeighborTable {
            records: RingBuffer::new(capacity, OverflowPolicy::Overwrite),
            staleness,
            subs: Vec::with_capacity(sub_capacity),
            sub_capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.records.capacity()
    }

    pub fn sub_capacity(&self) -> usize {
        self.sub_capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records, least recently heard first.
    pub fn records(&self) -> impl Iterator<Item = NeighborRecord> + '_ {
        self.records.iter().copied()
    }

    pub fn get(&self, robot: RobotId) -> Option<NeighborRecord> {
        self.records.iter().find(|r| r.robot == robot).copied()
    }

    pub fn update(&mut self, robot: RobotId, distance: f32, azimuth: f32, elevation: f32) {
        if self.records.iter().any(|r| r.robot == robot) {
            self.records.retain(|r| r.robot != robot);
        }
        self.records
            .push(NeighborRecord {
                robot,
                distance,
                azimuth,
                elevation,
                age: 0,
            })
            .expect("overwrite ring never rejects");
    }

    /// Start of a timestep's ingest: everyone gets one step older.
    pub fn age_all(&mut self) {
        for i in 0..self.records.len() {
            let r = self.records.get_mut(i).expect("in range");
            r.age = r.age.saturating_add(1);
        }
    }

    /// Drops records older than the staleness limit.
    pub fn evict_stale(&mut self) {
        let limit = self.staleness;
        self.records.retain(|r| r.age <= limit);
    }

    pub fn listen(&mut self, topic: StrId, f: Value) -> Result<(), SubscriptionsFull> {
        if let Some(s) = self.subs.iter_mut().find(|s| s.0 == topic) {
            s.1 = f;
            return Ok(());
        }
        if self.subs.len() >= self.sub_capacity {
            return Err(SubscriptionsFull);
        }
        self.subs.push((topic, f));
        Ok(())
    }

    pub fn ignore(&mut self, topic: StrId) {
        self.subs.retain(|s| s.0 != topic);
    }

    pub fn listener(&self, topic: StrId) -> Option<Value> {
        self.subs.iter().find(|s| s.0 == topic).map(|s| s.1)
    }

    pub fn subscriptions(&self) -> usize {
        self.subs.len()
    }
}
