//! Fixed-capacity circular queue.
//!
//! Storage is allocated once at construction. Push, pop and indexed access
//! touch at most one slot, so every operation is O(1). An explicit length is
//! kept instead of sacrificing a slot, so `capacity` means what it says.

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// Pushing into a full buffer fails with [`RingError::Full`].
    Reject,
    /// Pushing into a full buffer drops the oldest element.
    Overwrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum RingError {
    #[error("ring buffer full")]
    Full,
    #[error("ring buffer empty")]
    Empty,
    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug)]
pub struct RingBuffer<T> {
    storage: Box<[T]>,
    start: usize,
    len: usize,
    policy: OverflowPolicy,
}

impl<T: Copy + Default> RingBuffer<T> {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
        RingBuffer {
            storage: vec![T::default(); capacity].into_boxed_slice(),
            start: 0,
            len: 0,
            policy,
        }
    }
}

impl<T: Copy> RingBuffer<T> {
    pub fn capacity(&self) -> usize {
        self.storage.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity()
    }

    pub fn policy(&self) -> OverflowPolicy {
        self.policy
    }

    /// Size in bytes of one stored element.
    pub fn elem_size(&self) -> usize {
        std::mem::size_of::<T>()
    }

    fn slot(&self, i: usize) -> usize {
        let j = self.start + i;
        if j >= self.capacity() {
            j - self.capacity()
        } else {
            j
        }
    }

    /// Appends `item`. Returns the evicted element under the overwrite
    /// policy when the buffer was full.
    pub fn push(&mut self, item: T) -> Result<Option<T>, RingError> {
        if self.is_full() {
            match self.policy {
                OverflowPolicy::Reject => Err(RingError::Full),
                OverflowPolicy::Overwrite => {
                    let old = std::mem::replace(&mut self.storage[self.start], item);
                    self.start = self.slot(1);
                    Ok(Some(old))
                }
            }
        } else {
            let end = self.slot(self.len);
            self.storage[end] = item;
            self.len += 1;
            Ok(None)
        }
    }

    /// Removes and returns the oldest element.
    pub fn pop(&mut self) -> Result<T, RingError> {
        if self.len == 0 {
            return Err(RingError::Empty);
        }
        let item = self.storage[self.start];
        self.start = self.slot(1);
        self.len -= 1;
        Ok(item)
    }

    /// The `i`-th oldest element.
    pub fn at(&self, i: usize) -> Result<T, RingError> {
        self.get(i).copied().ok_or(RingError::OutOfRange {
            index: i,
            len: self.len,
        })
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        (i < self.len).then(|| &self.storage[self.slot(i)])
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut T> {
        if i < self.len {
            let s = self.slot(i);
            Some(&mut self.storage[s])
        } else {
            None
        }
    }

    pub fn clear(&mut self) {
        self.start = 0;
        self.len = 0;
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len).map(move |i| &self.storage[self.slot(i)])
    }

    /// Keeps only the elements matching `keep`, preserving order. Linear in
    /// the length; used for eviction sweeps, not on the push/pop path.
    pub fn retain(&mut self, mut keep: impl FnMut(&T) -> bool) {
        let mut w = 0;
        for r in 0..self.len {
            let item = self.storage[self.slot(r)];
            if keep(&item) {
                let s = self.slot(w);
                self.storage[s] = item;
                w += 1;
            }
        }
        self.len = w;
    }
}
