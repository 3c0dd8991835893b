//! Pre-allocated arena heap.
//!
//! ```text
//!  0                rop                 lsp                  size
//!  | objects  ->     |     unclaimed     |     <- segments    |
//! ```
//!
//! Objects are 3-byte slots (2 payload bytes, 1 metadata byte) written left
//! to right. Table storage lives in fixed-size segments written right to
//! left: 2 metadata bytes followed by `pairs_per_segment` 4-byte slots, each
//! holding a key and a value object index. A table whose keys are the dense
//! integers `0..n` keeps its segment chain in array mode, where every 4-byte
//! slot holds two consecutive value indices instead of a key/value pair.
//!
//! Objects are immutable once written, so the same object index may be
//! referenced from several stack slots and table slots.

use std::fmt::Write as _;

use thiserror::Error;

use crate::value::{ObjIdx, Tag, Value};

/// "No object" marker inside segment slots.
pub const NO_OBJ: ObjIdx = 0xFFFF;
const NO_SEG: u16 = 0x1FFF;

pub const OBJECT_SIZE: usize = 3;
pub const MIN_ARENA: usize = 64;
pub const MAX_ARENA: usize = 32 * 1024;

// object metadata byte
const META_TAG: u8 = 0b0000_0111;
const META_MARK: u8 = 0b0000_1000;
const META_PERM: u8 = 0b0001_0000;
const META_VALID: u8 = 0b0010_0000;

// segment metadata word
const SEG_VALID: u16 = 0x8000;
const SEG_MARK: u16 = 0x4000;
const SEG_ARRAY: u16 = 0x2000;
const SEG_NEXT: u16 = 0x1FFF;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HeapError {
    #[error("heap configuration: {0}")]
    Config(String),
    #[error("out of heap memory")]
    OutOfMemory,
    #[error("table key must be an int or a string, got {0}")]
    BadKey(&'static str),
    #[error("object {0} is not a live table")]
    NotATable(ObjIdx),
    #[error("object {0} is not live")]
    InvalidObject(ObjIdx),
}

/// Cursor and occupancy snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeapStats {
    pub arena: usize,
    pub rop: usize,
    pub lsp: usize,
    pub segment_size: usize,
    pub live_objects: usize,
    pub dead_objects: usize,
    pub live_segments: usize,
    pub dead_segments: usize,
}

impl HeapStats {
    pub fn object_bytes(&self) -> usize {
        self.rop
    }

    pub fn segment_bytes(&self) -> usize {
        self.arena - self.lsp
    }

    pub fn unclaimed(&self) -> usize {
        self.lsp - self.rop
    }

    /// Bytes held by objects and segments that are currently valid.
    pub fn live_bytes(&self) -> usize {
        self.live_objects * OBJECT_SIZE + self.live_segments * self.segment_size
    }
}

#[derive(Clone, Debug)]
pub struct Heap {
    arena: Box<[u8]>,
    rop: usize,
    lsp: usize,
    pairs: usize,
    seg_size: usize,
    /// No free object slot exists below this index.
    obj_hint: usize,
    /// No free segment exists below this index.
    seg_hint: usize,
    high_water: usize,
}

impl Heap {
    pub fn new(arena_size: usize, pairs_per_segment: usize) -> Result<Heap, HeapError> {
        if !(MIN_ARENA..=MAX_ARENA).contains(&arena_size) {
            return Err(HeapError::Config(format!(
                "arena size {arena_size} outside {MIN_ARENA}..={MAX_ARENA}"
            )));
        }
        if !(1..=64).contains(&pairs_per_segment) {
            return Err(HeapError::Config(format!(
                "pairs per segment {pairs_per_segment} outside 1..=64"
            )));
        }
        Ok(Heap {
            arena: vec![0; arena_size].into_boxed_slice(),
            rop: 0,
            lsp: arena_size,
            pairs: pairs_per_segment,
            seg_size: 2 + 4 * pairs_per_segment,
            obj_hint: 0,
            seg_hint: 0,
            high_water: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.arena.len()
    }

    pub fn rop(&self) -> usize {
        self.rop
    }

    pub fn lsp(&self) -> usize {
        self.lsp
    }

    pub fn unclaimed(&self) -> usize {
        self.lsp - self.rop
    }

    pub fn pairs_per_segment(&self) -> usize {
        self.pairs
    }

    pub fn segment_size(&self) -> usize {
        self.seg_size
    }

    /// Largest `rop + segment bytes` seen since the last reset.
    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn reset_high_water(&mut self) {
        self.high_water = self.claimed();
    }

    fn claimed(&self) -> usize {
        self.rop + (self.arena.len() - self.lsp)
    }

    fn bump_high_water(&mut self) {
        self.high_water = self.high_water.max(self.claimed());
    }

    fn object_slots(&self) -> usize {
        self.rop / OBJECT_SIZE
    }

    fn segment_count(&self) -> usize {
        (self.arena.len() - self.lsp) / self.seg_size
    }

    // ---- raw object access ----

    fn meta(&self, idx: ObjIdx) -> u8 {
        self.arena[idx as usize * OBJECT_SIZE + 2]
    }

    fn set_meta(&mut self, idx: ObjIdx, m: u8) {
        self.arena[idx as usize * OBJECT_SIZE + 2] = m;
    }

    fn raw_payload(&self, idx: ObjIdx) -> u16 {
        let o = idx as usize * OBJECT_SIZE;
        u16::from_le_bytes([self.arena[o], self.arena[o + 1]])
    }

    fn write_object(&mut self, idx: ObjIdx, tag: Tag, payload: u16) {
        let o = idx as usize * OBJECT_SIZE;
        self.arena[o..o + 2].copy_from_slice(&payload.to_le_bytes());
        self.arena[o + 2] = META_VALID | tag as u8;
    }

    pub fn is_valid(&self, idx: ObjIdx) -> bool {
        (idx as usize) < self.object_slots() && self.meta(idx) & META_VALID != 0
    }

    pub fn is_permanent(&self, idx: ObjIdx) -> bool {
        self.is_valid(idx) && self.meta(idx) & META_PERM != 0
    }

    /// Marks a live object as never collectable.
    pub fn set_permanent(&mut self, idx: ObjIdx, perm: bool) -> Result<(), HeapError> {
        if !self.is_valid(idx) {
            return Err(HeapError::InvalidObject(idx));
        }
        let m = self.meta(idx);
        self.set_meta(idx, if perm { m | META_PERM } else { m & !META_PERM });
        Ok(())
    }

    fn tag_of(&self, idx: ObjIdx) -> Tag {
        Tag::from_u8(self.meta(idx) & META_TAG).expect("object tags are written from Tag")
    }

    /// Decodes a live object. A table header decodes to `Value::Table(idx)`.
    pub fn value(&self, idx: ObjIdx) -> Result<Value, HeapError> {
        if !self.is_valid(idx) {
            return Err(HeapError::InvalidObject(idx));
        }
        Ok(match self.tag_of(idx) {
            Tag::Table => Value::Table(idx),
            tag => Value::from_parts(tag, self.raw_payload(idx)),
        })
    }

    // ---- raw segment access ----

    fn seg_base(&self, seg: u16) -> usize {
        self.arena.len() - (seg as usize + 1) * self.seg_size
    }

    fn seg_meta(&self, seg: u16) -> u16 {
        let b = self.seg_base(seg);
        u16::from_le_bytes([self.arena[b], self.arena[b + 1]])
    }

    fn set_seg_meta(&mut self, seg: u16, m: u16) {
        let b = self.seg_base(seg);
        self.arena[b..b + 2].copy_from_slice(&m.to_le_bytes());
    }

    fn seg_valid(&self, seg: u16) -> bool {
        (seg as usize) < self.segment_count() && self.seg_meta(seg) & SEG_VALID != 0
    }

    fn seg_next(&self, seg: u16) -> Option<u16> {
        let n = self.seg_meta(seg) & SEG_NEXT;
        (n != NO_SEG).then_some(n)
    }

    fn set_seg_next(&mut self, seg: u16, next: Option<u16>) {
        let m = self.seg_meta(seg) & !SEG_NEXT;
        self.set_seg_meta(seg, m | next.unwrap_or(NO_SEG));
    }

    fn seg_is_array(&self, seg: u16) -> bool {
        self.seg_meta(seg) & SEG_ARRAY != 0
    }

    /// Half-slot access: each segment holds `2 * pairs` 2-byte cells.
    fn cell(&self, seg: u16, i: usize) -> ObjIdx {
        let o = self.seg_base(seg) + 2 + 2 * i;
        u16::from_le_bytes([self.arena[o], self.arena[o + 1]])
    }

    fn set_cell(&mut self, seg: u16, i: usize, v: ObjIdx) {
        let o = self.seg_base(seg) + 2 + 2 * i;
        self.arena[o..o + 2].copy_from_slice(&v.to_le_bytes());
    }

    fn cells(&self) -> usize {
        2 * self.pairs
    }

    // ---- allocation ----

    fn alloc_slot(&mut self) -> Result<ObjIdx, HeapError> {
        let slots = self.object_slots();
        for i in self.obj_hint..slots {
            if self.meta(i as ObjIdx) & META_VALID == 0 {
                self.obj_hint = i + 1;
                return Ok(i as ObjIdx);
            }
        }
        self.obj_hint = slots;
        if self.rop + OBJECT_SIZE > self.lsp || slots >= NO_OBJ as usize {
            return Err(HeapError::OutOfMemory);
        }
        self.rop += OBJECT_SIZE;
        self.obj_hint = slots + 1;
        self.bump_high_water();
        Ok(slots as ObjIdx)
    }

    /// Stores a non-structured value in a fresh (or reused) 3-byte slot.
    /// A `Value::Table` already names its header object and is returned
    /// as-is.
    pub fn obj_alloc(&mut self, v: Value) -> Result<ObjIdx, HeapError> {
        if let Value::Table(t) = v {
            return if self.is_valid(t) && self.tag_of(t) == Tag::Table {
                Ok(t)
            } else {
                Err(HeapError::NotATable(t))
            };
        }
        let idx = self.alloc_slot()?;
        self.write_object(idx, v.tag(), v.payload());
        Ok(idx)
    }

    fn alloc_segment(&mut self, array: bool) -> Result<u16, HeapError> {
        let count = self.segment_count();
        let mut found = None;
        for s in self.seg_hint..count {
            if self.seg_meta(s as u16) & SEG_VALID == 0 {
                found = Some(s as u16);
                break;
            }
        }
        let seg = match found {
            Some(s) => {
                self.seg_hint = s as usize + 1;
                s
            }
            None => {
                self.seg_hint = count;
                if self.lsp < self.rop + self.seg_size || count >= NO_SEG as usize {
                    return Err(HeapError::OutOfMemory);
                }
                self.lsp -= self.seg_size;
                self.seg_hint = count + 1;
                self.bump_high_water();
                count as u16
            }
        };
        let flags = SEG_VALID | if array { SEG_ARRAY } else { 0 };
        self.set_seg_meta(seg, flags | NO_SEG);
        for i in 0..self.cells() {
            self.set_cell(seg, i, NO_OBJ);
        }
        Ok(seg)
    }

    /// Allocates an empty table: one segment plus its header object.
    pub fn table_new(&mut self) -> Result<Value, HeapError> {
        // When the header allocation fails the segment is unreachable and the
        // next collection reclaims it.
        let seg = self.alloc_segment(true)?;
        let idx = self.alloc_slot()?;
        self.write_object(idx, Tag::Table, seg);
        Ok(Value::Table(idx))
    }

    // ---- tables ----

    fn table_head(&self, t: ObjIdx) -> Result<u16, HeapError> {
        if !self.is_valid(t) || self.tag_of(t) != Tag::Table {
            return Err(HeapError::NotATable(t));
        }
        Ok(self.raw_payload(t))
    }

    fn chain(&self, head: u16) -> Vec<u16> {
        let mut out = vec![head];
        let mut s = head;
        while let Some(n) = self.seg_next(s) {
            out.push(n);
            s = n;
        }
        out
    }

    fn check_key(key: Value) -> Result<(), HeapError> {
        match key {
            Value::Int(_) | Value::Str(_) => Ok(()),
            other => Err(HeapError::BadKey(other.tag().name())),
        }
    }

    /// Number of leading filled cells of an array-mode chain.
    fn array_len(&self, chain: &[u16]) -> usize {
        let per = self.cells();
        let mut n = 0;
        for &s in chain {
            for i in 0..per {
                if self.cell(s, i) == NO_OBJ {
                    return n;
                }
                n += 1;
            }
        }
        n
    }

    /// Looks up `key` and returns the stored value object, if any. Never
    /// allocates.
    pub fn table_get_ref(&self, t: ObjIdx, key: Value) -> Result<Option<ObjIdx>, HeapError> {
        let head = self.table_head(t)?;
        Self::check_key(key)?;
        let per = self.cells();
        if self.seg_is_array(head) {
            let Value::Int(k) = key else { return Ok(None) };
            if k < 0 {
                return Ok(None);
            }
            let (mut pos, mut s) = (k as usize, head);
            while pos >= per {
                match self.seg_next(s) {
                    Some(n) => s = n,
                    None => return Ok(None),
                }
                pos -= per;
            }
            let v = self.cell(s, pos);
            return Ok((v != NO_OBJ).then_some(v));
        }
        for s in self.chain(head) {
            for p in 0..self.pairs {
                let k = self.cell(s, 2 * p);
                if k != NO_OBJ && self.value(k)? == key {
                    return Ok(Some(self.cell(s, 2 * p + 1)));
                }
            }
        }
        Ok(None)
    }

    pub fn table_get(&self, t: Value, key: Value) -> Result<Value, HeapError> {
        let Value::Table(t) = t else {
            return Err(HeapError::NotATable(NO_OBJ));
        };
        match self.table_get_ref(t, key)? {
            Some(v) => self.value(v),
            None => Ok(Value::Nil),
        }
    }

    /// Stores `val` under `key`, allocating objects for both. Setting
    /// `Value::Nil` deletes the key.
    pub fn table_set(&mut self, t: Value, key: Value, val: Value) -> Result<(), HeapError> {
        let Value::Table(t) = t else {
            return Err(HeapError::NotATable(NO_OBJ));
        };
        self.table_head(t)?;
        Self::check_key(key)?;
        let k = self.obj_alloc(key)?;
        let v = self.obj_alloc(val)?;
        self.table_set_ref(t, k, v)
    }

    /// Stores the value object `val_obj` under the key held by `key_obj`.
    ///
    /// On error the table is unchanged; objects or segments allocated before
    /// the failure are unreachable and reclaimed by the next collection.
    pub fn table_set_ref(
        &mut self,
        t: ObjIdx,
        key_obj: ObjIdx,
        val_obj: ObjIdx,
    ) -> Result<(), HeapError> {
        let head = self.table_head(t)?;
        let key = self.value(key_obj)?;
        Self::check_key(key)?;
        let deleting = self.value(val_obj)?.is_nil();
        let chain = self.chain(head);

        if self.seg_is_array(head) {
            let len = self.array_len(&chain);
            match key {
                Value::Int(k) if k >= 0 && (k as usize) < len => {
                    let k = k as usize;
                    if !deleting {
                        let (s, i) = self.array_pos(&chain, k);
                        self.set_cell(s, i, val_obj);
                        return Ok(());
                    }
                    if k + 1 == len {
                        let (s, i) = self.array_pos(&chain, k);
                        self.set_cell(s, i, NO_OBJ);
                        return Ok(());
                    }
                    // a hole would break density
                    self.convert_to_pairs(&chain, len, 0)?;
                }
                Value::Int(k) if k >= 0 && k as usize == len => {
                    if deleting {
                        return Ok(());
                    }
                    let per = self.cells();
                    if len == chain.len() * per {
                        let seg = self.alloc_segment(true)?;
                        self.set_seg_next(*chain.last().expect("chain has a head"), Some(seg));
                        self.set_cell(seg, 0, val_obj);
                    } else {
                        let (s, i) = self.array_pos(&chain, len);
                        self.set_cell(s, i, val_obj);
                    }
                    return Ok(());
                }
                _ => {
                    if deleting {
                        return Ok(());
                    }
                    self.convert_to_pairs(&chain, len, 1)?;
                }
            }
        }
        self.pair_set(head, key, key_obj, val_obj, deleting)
    }

    fn array_pos(&self, chain: &[u16], k: usize) -> (u16, usize) {
        let per = self.cells();
        (chain[k / per], k % per)
    }

    /// Rewrites an array-mode chain holding `len` values as key/value pairs,
    /// leaving room for `extra` more entries.
    fn convert_to_pairs(
        &mut self,
        chain: &[u16],
        len: usize,
        extra: usize,
    ) -> Result<(), HeapError> {
        let values: Vec<ObjIdx> = (0..len)
            .map(|k| {
                let (s, i) = self.array_pos(chain, k);
                self.cell(s, i)
            })
            .collect();
        // allocate everything first so a failure leaves the table intact
        let mut keys = Vec::with_capacity(len);
        for k in 0..len {
            keys.push(self.obj_alloc(Value::Int(k as i16))?);
        }
        let needed = (len + extra).div_ceil(self.pairs).max(1);
        let mut segs = chain.to_vec();
        while segs.len() < needed {
            segs.push(self.alloc_segment(false)?);
        }
        for (n, &s) in segs.iter().enumerate() {
            let next = segs.get(n + 1).copied();
            self.set_seg_meta(s, SEG_VALID | next.unwrap_or(NO_SEG));
            for i in 0..self.cells() {
                self.set_cell(s, i, NO_OBJ);
            }
        }
        for (n, (&k, &v)) in keys.iter().zip(&values).enumerate() {
            let s = segs[n / self.pairs];
            let p = n % self.pairs;
            self.set_cell(s, 2 * p, k);
            self.set_cell(s, 2 * p + 1, v);
        }
        Ok(())
    }

    fn pair_set(
        &mut self,
        head: u16,
        key: Value,
        key_obj: ObjIdx,
        val_obj: ObjIdx,
        deleting: bool,
    ) -> Result<(), HeapError> {
        let chain = self.chain(head);
        let mut free = None;
        for &s in &chain {
            for p in 0..self.pairs {
                let k = self.cell(s, 2 * p);
                if k == NO_OBJ {
                    free.get_or_insert((s, p));
                } else if self.value(k)? == key {
                    if deleting {
                        self.set_cell(s, 2 * p, NO_OBJ);
                        self.set_cell(s, 2 * p + 1, NO_OBJ);
                    } else {
                        self.set_cell(s, 2 * p + 1, val_obj);
                    }
                    return Ok(());
                }
            }
        }
        if deleting {
            return Ok(());
        }
        let (s, p) = match free {
            Some(slot) => slot,
            None => {
                let seg = self.alloc_segment(false)?;
                self.set_seg_next(*chain.last().expect("chain has a head"), Some(seg));
                (seg, 0)
            }
        };
        self.set_cell(s, 2 * p, key_obj);
        self.set_cell(s, 2 * p + 1, val_obj);
        Ok(())
    }

    /// Live `(key, value)` object pairs in storage order. Array-mode keys are
    /// reported as `Value::Int` positions, so no objects are needed.
    pub fn table_entries(&self, t: ObjIdx) -> Result<Vec<(Value, ObjIdx)>, HeapError> {
        let head = self.table_head(t)?;
        let chain = self.chain(head);
        let mut out = Vec::new();
        if self.seg_is_array(head) {
            let len = self.array_len(&chain);
            for k in 0..len {
                let (s, i) = self.array_pos(&chain, k);
                out.push((Value::Int(k as i16), self.cell(s, i)));
            }
        } else {
            for s in chain {
                for p in 0..self.pairs {
                    let k = self.cell(s, 2 * p);
                    if k != NO_OBJ {
                        out.push((self.value(k)?, self.cell(s, 2 * p + 1)));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn table_len(&self, t: ObjIdx) -> Result<usize, HeapError> {
        Ok(self.table_entries(t)?.len())
    }

    /// True when the table's chain is stored in array mode.
    pub fn table_is_array(&self, t: ObjIdx) -> Result<bool, HeapError> {
        Ok(self.seg_is_array(self.table_head(t)?))
    }

    /// Number of segments in the table's chain.
    pub fn table_segments(&self, t: ObjIdx) -> Result<usize, HeapError> {
        Ok(self.chain(self.table_head(t)?).len())
    }

    /// Copies a table into a fresh one stored in pair mode regardless of its
    /// keys. Used to compare both storage layouts.
    pub fn table_clone_as_pairs(&mut self, t: ObjIdx) -> Result<Value, HeapError> {
        let entries = self.table_entries(t)?;
        let seg = self.alloc_segment(false)?;
        let idx = self.alloc_slot()?;
        self.write_object(idx, Tag::Table, seg);
        for (k, v) in entries {
            let ko = self.obj_alloc(k)?;
            let kv = self.value(ko)?;
            self.pair_set(seg, kv, ko, v, false)?;
        }
        Ok(Value::Table(idx))
    }

    // ---- garbage collection ----

    /// Mark-and-invalidate collection. Returns the number of bytes whose
    /// slots were invalidated.
    ///
    /// Permanent objects and `roots` (plus everything reachable through
    /// table headers, segment links and segment slots) survive. Afterwards
    /// `rop` and `lsp` are tight around the outermost valid entries.
    pub fn gc_collect(&mut self, roots: impl IntoIterator<Item = ObjIdx>) -> usize {
        let slots = self.object_slots();
        let segs = self.segment_count();
        for i in 0..slots {
            let m = self.meta(i as ObjIdx);
            self.set_meta(i as ObjIdx, m & !META_MARK);
        }
        for s in 0..segs {
            let m = self.seg_meta(s as u16);
            self.set_seg_meta(s as u16, m & !SEG_MARK);
        }

        let mut work: Vec<ObjIdx> = (0..slots as ObjIdx)
            .filter(|&i| self.meta(i) & (META_VALID | META_PERM) == META_VALID | META_PERM)
            .collect();
        work.extend(roots);
        while let Some(o) = work.pop() {
            if !self.is_valid(o) {
                continue;
            }
            let m = self.meta(o);
            if m & META_MARK != 0 {
                continue;
            }
            self.set_meta(o, m | META_MARK);
            if self.tag_of(o) != Tag::Table {
                continue;
            }
            let mut s = Some(self.raw_payload(o));
            while let Some(seg) = s {
                if !self.seg_valid(seg) {
                    break;
                }
                let sm = self.seg_meta(seg);
                if sm & SEG_MARK != 0 {
                    break;
                }
                self.set_seg_meta(seg, sm | SEG_MARK);
                for i in 0..self.cells() {
                    let c = self.cell(seg, i);
                    if c != NO_OBJ {
                        work.push(c);
                    }
                }
                s = self.seg_next(seg);
            }
        }

        let mut reclaimed = 0;
        for i in 0..slots as ObjIdx {
            let m = self.meta(i);
            if m & META_VALID != 0 && m & META_MARK == 0 {
                self.set_meta(i, 0);
                reclaimed += OBJECT_SIZE;
            }
        }
        for s in 0..segs as u16 {
            let m = self.seg_meta(s);
            if m & SEG_VALID != 0 && m & SEG_MARK == 0 {
                self.set_seg_meta(s, NO_SEG);
                reclaimed += self.seg_size;
            }
        }

        while self.rop > 0 && self.meta((self.rop / OBJECT_SIZE - 1) as ObjIdx) & META_VALID == 0 {
            self.rop -= OBJECT_SIZE;
        }
        while self.lsp < self.arena.len()
            && self.seg_meta(self.segment_count() as u16 - 1) & SEG_VALID == 0
        {
            self.lsp += self.seg_size;
        }
        self.obj_hint = 0;
        self.seg_hint = 0;
        reclaimed
    }

    pub fn stats(&self) -> HeapStats {
        let slots = self.object_slots();
        let segs = self.segment_count();
        let live_objects = (0..slots)
            .filter(|&i| self.meta(i as ObjIdx) & META_VALID != 0)
            .count();
        let live_segments = (0..segs)
            .filter(|&s| self.seg_meta(s as u16) & SEG_VALID != 0)
            .count();
        HeapStats {
            arena: self.arena.len(),
            rop: self.rop,
            lsp: self.lsp,
            segment_size: self.seg_size,
            live_objects,
            dead_objects: slots - live_objects,
            live_segments,
            dead_segments: segs - live_segments,
        }
    }

    /// Text dump of every live entry, one per line:
    ///
    /// `O <index> <tag> <payload-hex> <perm|->` for objects and
    /// `S <index> <arr|kv> <next|-> <slots...>` for segments, where array
    /// slots are value indices and pair slots are `key:value`, `_` marking
    /// an empty cell.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for i in 0..self.object_slots() as ObjIdx {
            let m = self.meta(i);
            if m & META_VALID == 0 {
                continue;
            }
            let perm = if m & META_PERM != 0 { "perm" } else { "-" };
            let _ = writeln!(
                out,
                "O {i} {} {:04x} {perm}",
                self.tag_of(i).name(),
                self.raw_payload(i)
            );
        }
        let cell = |c: ObjIdx| {
            if c == NO_OBJ {
                "_".to_string()
            } else {
                c.to_string()
            }
        };
        for s in 0..self.segment_count() as u16 {
            if self.seg_meta(s) & SEG_VALID == 0 {
                continue;
            }
            let next = self.seg_next(s).map_or("-".to_string(), |n| n.to_string());
            let _ = write!(out, "S {s}");
            if self.seg_is_array(s) {
                let _ = write!(out, " arr {next}");
                for i in 0..self.cells() {
                    let _ = write!(out, " {}", cell(self.cell(s, i)));
                }
            } else {
                let _ = write!(out, " kv {next}");
                for p in 0..self.pairs {
                    let _ = write!(
                        out,
                        " {}:{}",
                        cell(self.cell(s, 2 * p)),
                        cell(self.cell(s, 2 * p + 1))
                    );
                }
            }
            out.push('\n');
        }
        out
    }
}
