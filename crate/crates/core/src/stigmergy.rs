//! Virtual stigmergy: a small replicated key-value store.
//!
//! Entries are ordered by `(timestamp, origin)`. A received entry that is
//! newer than the local one replaces it and is relayed; an older one makes
//! the receiver send its own entry back. `get` schedules a query carrying
//! the local entry, so neighbors holding something newer answer with it.
//!
//! Outgoing traffic is kept as per-key pending flags and turned into
//! messages when the VM flushes its outbox; a flag that does not fit stays
//! set for the next timestep.

use thiserror::Error;

use crate::value::{StrId, Value};
use crate::wire::{is_sendable, Message, RobotId, StigWire};

pub type StigEntry = StigWire;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum StigError {
    #[error("stigmergy store full")]
    StoreFull,
    #[error("stigmergy values cannot be tables")]
    TableValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    Accepted,
    RebroadcastOwn,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pending {
    None,
    Query,
    Put,
}

#[derive(Clone, Copy, Debug)]
struct Slot {
    entry: StigEntry,
    pending: Pending,
}

fn stamp(e: &StigEntry) -> (u16, RobotId) {
    (e.timestamp, e.origin)
}

/// Deterministic join of two entries for the same key: the later
/// `(timestamp, origin)` wins, ties broken on the value's raw encoding.
pub fn merge(a: StigEntry, b: StigEntry) -> StigEntry {
    let ka = (
        a.timestamp,
        a.origin,
        a.value.tag() as u8,
        a.value.payload(),
    );
    let kb = (
        b.timestamp,
        b.origin,
        b.value.tag() as u8,
        b.value.payload(),
    );
    if kb > ka {
        b
    } else {
        a
    }
}

#[derive(Clone, Debug)]
pub struct StigStore {
    slots: Vec<Slot>,
    capacity: usize,
    /// Keys queried while absent locally.
    absent_queries: Vec<StrId>,
}

impl StigStore {
    pub fn new(capacity: usize) -> StigStore {
        StigStore {
            slots: Vec::with_capacity(capacity),
            capacity,
            absent_queries: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn find(&self, key: StrId) -> Option<usize> {
        self.slots.iter().position(|s| s.entry.key == key)
    }

    pub fn entry(&self, key: StrId) -> Option<StigEntry> {
        self.find(key).map(|i| self.slots[i].entry)
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = StigEntry> + '_ {
        self.slots.iter().map(|s| s.entry)
    }

    /// Entries sorted by key, for comparing replicas.
    pub fn snapshot(&self) -> Vec<StigEntry> {
        let mut v: Vec<_> = self.entries().collect();
        v.sort_by_key(|e| e.key);
        v
    }

    pub fn put(&mut self, key: StrId, value: Value, me: RobotId) -> Result<(), StigError> {
        if !is_sendable(value) {
            return Err(StigError::TableValue);
        }
        match self.find(key) {
            Some(i) => {
                let s = &mut self.slots[i];
                s.entry.timestamp = s.entry.timestamp.saturating_add(1);
                s.entry.value = value;
                s.entry.origin = me;
                s.pending = Pending::Put;
            }
            None => {
                if self.slots.len() >= self.capacity {
                    return Err(StigError::StoreFull);
                }
                self.absent_queries.retain(|&k| k != key);
                self.slots.push(Slot {
                    entry: StigEntry {
                        key,
                        value,
                        timestamp: 1,
                        origin: me,
                    },
                    pending: Pending::Put,
                });
            }
        }
        Ok(())
    }

    /// Current value, or nil. Schedules a read-repair query.
    pub fn get(&mut self, key: StrId) -> Value {
        match self.find(key) {
            Some(i) => {
                let s = &mut self.slots[i];
                if s.pending == Pending::None {
                    s.pending = Pending::Query;
                }
                s.entry.value
            }
            None => {
                if !self.absent_queries.contains(&key) && self.absent_queries.len() < self.capacity
                {
                    self.absent_queries.push(key);
                }
                Value::Nil
            }
        }
    }

    /// Merges an entry heard from a neighbor (a put or a query).
    pub fn on_message(&mut self, e: StigEntry) -> MergeOutcome {
        if !is_sendable(e.value) {
            return MergeOutcome::Ignored;
        }
        let local = self.find(e.key);
        let mine = local.map(|i| stamp(&self.slots[i].entry)).unwrap_or((0, 0));
        let theirs = stamp(&e);
        if theirs > mine {
            match local {
                Some(i) => {
                    self.slots[i] = Slot {
                        entry: e,
                        pending: Pending::Put,
                    }
                }
                None if self.slots.len() < self.capacity => {
                    self.absent_queries.retain(|&k| k != e.key);
                    self.slots.push(Slot {
                        entry: e,
                        pending: Pending::Put,
                    });
                }
                None => return MergeOutcome::Ignored,
            }
            MergeOutcome::Accepted
        } else if theirs < mine {
            let i = local.expect("a local stamp above (0, 0) has an entry");
            self.slots[i].pending = Pending::Put;
            MergeOutcome::RebroadcastOwn
        } else {
            MergeOutcome::Ignored
        }
    }

    pub fn has_pending(&self) -> bool {
        !self.absent_queries.is_empty() || self.slots.iter().any(|s| s.pending != Pending::None)
    }

    /// Turns up to `max` pending flags into messages. Puts go first, then
    /// queries, each in insertion order.
    pub fn drain_pending(&mut self, max: usize) -> Vec<Message> {
        let mut out = Vec::new();
        for s in &mut self.slots {
            if out.len() == max {
                return out;
            }
            if s.pending == Pending::Put {
                out.push(Message::StigPut(s.entry));
                s.pending = Pending::None;
            }
        }
        for s in &mut self.slots {
            if out.len() == max {
                return out;
            }
            if s.pending == Pending::Query {
                out.push(Message::StigQuery(s.entry));
                s.pending = Pending::None;
            }
        }
        while out.len() < max && !self.absent_queries.is_empty() {
            let key = self.absent_queries.remove(0);
            out.push(Message::StigQuery(StigEntry {
                key,
                value: Value::Nil,
                timestamp: 0,
                origin: 0,
            }));
        }
        out
    }
}
