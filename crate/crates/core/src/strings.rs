//! String interning. Every string a program uses is replaced by a 2-byte id;
//! the texts stay in the read-only program image and never touch the heap.
//!
//! Ids `0..NATIVE_COUNT` are reserved for runtime keywords and are the same
//! in every build.

use std::collections::HashMap;

use thiserror::Error;

use crate::value::StrId;

pub const MAX_STRING_LEN: usize = 255;

/// Reserved native strings in id order. Frozen: changing this table breaks
/// every compiled image.
pub const NATIVE_STRINGS: [&str; 32] = [
    "id",           // 0
    "swarm",        // 1
    "stigmergy",    // 2
    "neighbors",    // 3
    "broadcast",    // 4
    "listen",       // 5
    "ignore",       // 6
    "put",          // 7
    "get",          // 8
    "foreach",      // 9
    "map",          // 10
    "reduce",       // 11
    "filter",       // 12
    "count",        // 13
    "join",         // 14
    "leave",        // 15
    "in",           // 16
    "select",       // 17
    "unselect",     // 18
    "exec",         // 19
    "create",       // 20
    "union",        // 21
    "intersection", // 22
    "difference",   // 23
    "distance",     // 24
    "azimuth",      // 25
    "elevation",    // 26
    "init",         // 27
    "step",         // 28
    "size",         // 29
    "abs",          // 30
    "sqrt",         // 31
];

pub const NATIVE_COUNT: u16 = NATIVE_STRINGS.len() as u16;

/// Named constants for the native ids the runtime refers to.
pub mod native {
    use crate::value::StrId;

    pub const ID: StrId = 0;
    pub const SWARM: StrId = 1;
    pub const STIGMERGY: StrId = 2;
    pub const NEIGHBORS: StrId = 3;
    pub const BROADCAST: StrId = 4;
    pub const LISTEN: StrId = 5;
    pub const IGNORE: StrId = 6;
    pub const PUT: StrId = 7;
    pub const GET: StrId = 8;
    pub const FOREACH: StrId = 9;
    pub const MAP: StrId = 10;
    pub const REDUCE: StrId = 11;
    pub const FILTER: StrId = 12;
    pub const COUNT: StrId = 13;
    pub const JOIN: StrId = 14;
    pub const LEAVE: StrId = 15;
    pub const IN: StrId = 16;
    pub const SELECT: StrId = 17;
    pub const UNSELECT: StrId = 18;
    pub const EXEC: StrId = 19;
    pub const CREATE: StrId = 20;
    pub const UNION: StrId = 21;
    pub const INTERSECTION: StrId = 22;
    pub const DIFFERENCE: StrId = 23;
    pub const DISTANCE: StrId = 24;
    pub const AZIMUTH: StrId = 25;
    pub const ELEVATION: StrId = 26;
    pub const INIT: StrId = 27;
    pub const STEP: StrId = 28;
    pub const SIZE: StrId = 29;
    pub const ABS: StrId = 30;
    pub const SQRT: StrId = 31;
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StringError {
    #[error("string table full")]
    TableFull,
    #[error("string of {0} bytes exceeds {MAX_STRING_LEN}")]
    TooLong(usize),
    #[error("unknown string id {0}")]
    UnknownId(StrId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StringTable {
    texts: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, StrId>,
}

impl Default for StringTable {
    fn default() -> Self {
        Self::new()
    }
}

impl StringTable {
    /// A table holding exactly the native strings.
    pub fn new() -> Self {
        let mut t = StringTable {
            texts: Vec::with_capacity(NATIVE_STRINGS.len()),
            index: HashMap::new(),
        };
        for s in NATIVE_STRINGS {
            t.push_unchecked(s.as_bytes().to_vec());
        }
        t
    }

    fn push_unchecked(&mut self, text: Vec<u8>) -> StrId {
        let id = self.texts.len() as StrId;
        self.index.insert(text.clone(), id);
        self.texts.push(text);
        id
    }

    pub fn intern(&mut self, text: impl AsRef<[u8]>) -> Result<StrId, StringError> {
        let text = text.as_ref();
        if text.len() > MAX_STRING_LEN {
            return Err(StringError::TooLong(text.len()));
        }
        if let Some(&id) = self.index.get(text) {
            return Ok(id);
        }
        // 0xFFFF stays free as the "no string" sentinel.
        if self.texts.len() >= 0xFFFF {
            return Err(StringError::TableFull);
        }
        Ok(self.push_unchecked(text.to_vec()))
    }

    /// Appends `text` with the next id even if it is already present.
    /// Only image decoding uses this, to reproduce a table byte for byte.
    pub(crate) fn push_raw(&mut self, text: Vec<u8>) -> Result<StrId, StringError> {
        if text.len() > MAX_STRING_LEN {
            return Err(StringError::TooLong(text.len()));
        }
        if self.texts.len() >= 0xFFFF {
            return Err(StringError::TableFull);
        }
        let id = self.texts.len() as StrId;
        self.index.entry(text.clone()).or_insert(id);
        self.texts.push(text);
        Ok(id)
    }

    pub fn lookup(&self, id: StrId) -> Result<&[u8], StringError> {
        self.texts
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(StringError::UnknownId(id))
    }

    /// Lossy UTF-8 view, for diagnostics and reports.
    pub fn text(&self, id: StrId) -> String {
        match self.lookup(id) {
            Ok(b) => String::from_utf8_lossy(b).into_owned(),
            Err(_) => format!("<str#{id}>"),
        }
    }

    pub fn find(&self, text: impl AsRef<[u8]>) -> Option<StrId> {
        self.index.get(text.as_ref()).copied()
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn is_native(id: StrId) -> bool {
        id < NATIVE_COUNT
    }

    /// Texts in id order, natives included.
    pub fn iter(&self) -> impl Iterator<Item = (StrId, &[u8])> {
        self.texts
            .iter()
            .enumerate()
            .map(|(i, t)| (i as StrId, t.as_slice()))
    }

    /// Texts of user (non-native) strings in id order.
    pub fn user_strings(&self) -> impl Iterator<Item = &[u8]> {
        self.texts[NATIVE_COUNT as usize..]
            .iter()
            .map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natives_are_reserved() {
        let mut t = StringTable::new();
        assert_eq!(t.intern("stigmergy"), Ok(native::STIGMERGY));
        assert_eq!(t.intern("neighbors"), Ok(native::NEIGHBORS));
        for (i, s) in NATIVE_STRINGS.iter().enumerate() {
            assert_eq!(t.lookup(i as StrId).unwrap(), s.as_bytes());
        }
        assert_eq!(t.intern("x"), Ok(NATIVE_COUNT));
    }

    #[test]
    fn frozen_native_assignment() {
        // Golden: natives are part of the image format.
        let joined = NATIVE_STRINGS.join(",");
        assert_eq!(
            joined,
            "id,swarm,stigmergy,neighbors,broadcast,listen,ignore,put,get,foreach,map,\
             reduce,filter,count,join,leave,in,select,unselect,exec,create,union,\
             intersection,difference,distance,azimuth,elevation,init,step,size,abs,sqrt"
        );
    }

    #[test]
    fn intern_is_idempotent() {
        let mut t = StringTable::new();
        let a = t.intern("x").unwrap();
        assert_eq!(t.intern("x"), Ok(a));
        let id = t.intern("abc").unwrap();
        assert_eq!(t.lookup(id).unwrap(), b"abc");
        assert_eq!(a.to_le_bytes().len(), 2);
    }

    #[test]
    fn errors() {
        let mut t = StringTable::new();
        assert_eq!(t.lookup(0xFFFF), Err(StringError::UnknownId(0xFFFF)));
        assert_eq!(t.intern(vec![b'a'; 256]), Err(StringError::TooLong(256)));
        assert!(t.intern(vec![b'a'; 255]).is_ok());
    }

    #[test]
    fn table_full() {
        let mut t = StringTable::new();
        for i in 0..(0xFFFF - NATIVE_COUNT as u32) {
            t.intern(i.to_le_bytes()).unwrap();
        }
        assert_eq!(t.intern("one more"), Err(StringError::TableFull));
    }
}
