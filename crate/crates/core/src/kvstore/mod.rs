//! Ordered key/value store abstraction.
//!
//! The engine needs only point operations, bounded range scans in either
//! direction, a range count, and test-and-set. [`MemStore`] is the in-memory
//! reference implementation; [`LatencyStore`] decorates any store with
//! injected delays and a request trace.

pub mod keycodec;
pub mod latency;

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use latency::{LatencyProfile, LatencyStore, SimClock, TraceRow};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("invalid range: start key sorts after end key")]
    InvalidRange,
    #[error("range limit must be at least 1")]
    ZeroLimit,
    #[error("storage unavailable")]
    Unavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvRecord {
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

/// Operation kinds, used for accounting, latency profiles and traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Get,
    Put,
    Delete,
    Range,
    Count,
    TestAndSet,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Get,
        OpKind::Put,
        OpKind::Delete,
        OpKind::Range,
        OpKind::Count,
        OpKind::TestAndSet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Get => "get",
            OpKind::Put => "put",
            OpKind::Delete => "delete",
            OpKind::Range => "range",
            OpKind::Count => "count",
            OpKind::TestAndSet => "test_and_set",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// An ordered byte-keyed store. Implementations must be safe for concurrent
/// callers and make every per-key operation atomic.
pub trait KvStore: Send + Sync {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError>;
    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError>;
    fn delete(&self, key: &[u8]) -> Result<(), KvError>;
    /// Up to `limit` records with `start <= key < end`, in `direction` order.
    /// A missing `end` means unbounded above.
    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError>;
    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError>;
    /// Writes `new` iff the current value equals `expected` (`None` matches an
    /// absent key). Returns whether the write happened.
    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError>;
}

impl<S: KvStore + ?Sized> KvStore for std::sync::Arc<S> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError> {
        (**self).get(key)
    }
    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError> {
        (**self).put(key, value)
    }
    fn delete(&self, key: &[u8]) -> Result<(), KvError> {
        (**self).delete(key)
    }
    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError> {
        (**self).get_range(start, end, limit, direction)
    }
    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError> {
        (**self).count_range(start, end)
    }
    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError> {
        (**self).test_and_set(key, expected, new)
    }
}

fn check_range(start: &[u8], end: Option<&[u8]>) -> Result<(), KvError> {
    match end {
        Some(end) if start > end => Err(KvError::InvalidRange),
        _ => Ok(()),
    }
}

fn bounds<'a>(start: &'a [u8], end: Option<&'a [u8]>) -> (Bound<&'a [u8]>, Bound<&'a [u8]>) {
    (
        Bound::Included(start),
        end.map_or(Bound::Unbounded, Bound::Excluded),
    )
}

/// In-memory ordered store backed by a `BTreeMap` under a read/write lock.
#[derive(Debug, Default)]
pub struct MemStore {
    map: RwLock<BTreeMap<Vec<u8>, Vec<u8>>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies every record out, in key order.
    pub fn snapshot(&self) -> Vec<KvRecord> {
        self.map
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| KvRecord {
                key: k.clone(),
                value: v.clone(),
            })
            .collect()
    }

    pub fn from_records(records: impl IntoIterator<Item = KvRecord>) -> Self {
        let map = records.into_iter().map(|r| (r.key, r.value)).collect();
        MemStore {
            map: RwLock::new(map),
        }
    }
}

impl KvStore for MemStore {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError> {
        Ok(self.map.read().unwrap().get(key).cloned())
    }

    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError> {
        self.map
            .write()
            .unwrap()
            .insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    fn delete(&self, key: &[u8]) -> Result<(), KvError> {
        self.map.write().unwrap().remove(key);
        Ok(())
    }

    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError> {
        if limit == 0 {
            return Err(KvError::ZeroLimit);
        }
        check_range(start, end)?;
        let map = self.map.read().unwrap();
        let range = map.range::<[u8], _>(bounds(start, end));
        let rec = |(k, v): (&Vec<u8>, &Vec<u8>)| KvRecord {
            key: k.clone(),
            value: v.clone(),
        };
        Ok(match direction {
            Direction::Ascending => range.take(limit).map(rec).collect(),
            Direction::Descending => range.rev().take(limit).map(rec).collect(),
        })
    }

    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError> {
        check_range(start, end)?;
        Ok(self
            .map
            .read()
            .unwrap()
            .range::<[u8], _>(bounds(start, end))
            .count() as u64)
    }

    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError> {
        let mut map = self.map.write().unwrap();
        if map.get(key).map(Vec::as_slice) != expected {
            return Ok(false);
        }
        map.insert(key.to_vec(), new.to_vec());
        Ok(true)
    }
}

/// Counts requests per operation kind and records returned, independently of
/// the executor's own accounting.
#[derive(Debug)]
pub struct CountingStore<S> {
    inner: S,
    counts: Mutex<BTreeMap<OpKind, u64>>,
    records: AtomicU64,
}

impl<S: KvStore> CountingStore<S> {
    pub fn new(inner: S) -> Self {
        CountingStore {
            inner,
            counts: Mutex::new(BTreeMap::new()),
            records: AtomicU64::new(0),
        }
    }

    fn bump(&self, kind: OpKind) {
        *self.counts.lock().unwrap().entry(kind).or_default() += 1;
    }

    pub fn count(&self, kind: OpKind) -> u64 {
        self.counts.lock().unwrap().get(&kind).copied().unwrap_or(0)
    }

    /// Total requests of any kind.
    pub fn total(&self) -> u64 {
        self.counts.lock().unwrap().values().sum()
    }

    /// Records returned by gets and range scans.
    pub fn records_returned(&self) -> u64 {
        self.records.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.counts.lock().unwrap().clear();
        self.records.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: KvStore> KvStore for CountingStore<S> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError> {
        self.bump(OpKind::Get);
        let r = self.inner.get(key)?;
        if r.is_some() {
            self.records.fetch_add(1, Ordering::Relaxed);
        }
        Ok(r)
    }
    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError> {
        self.bump(OpKind::Put);
        self.inner.put(key, value)
    }
    fn delete(&self, key: &[u8]) -> Result<(), KvError> {
        self.bump(OpKind::Delete);
        self.inner.delete(key)
    }
    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError> {
        self.bump(OpKind::Range);
        let r = self.inner.get_range(start, end, limit, direction)?;
        self.records.fetch_add(r.len() as u64, Ordering::Relaxed);
        Ok(r)
    }
    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError> {
        self.bump(OpKind::Count);
        self.inner.count_range(start, end)
    }
    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError> {
        self.bump(OpKind::TestAndSet);
        self.inner.test_and_set(key, expected, new)
    }
}

/// Wrapper whose availability can be toggled, for fault tests.
#[derive(Debug)]
pub struct FlakyStore<S> {
    inner: S,
    available: AtomicBool,
}

impl<S: KvStore> FlakyStore<S> {
    pub fn new(inner: S) -> Self {
        FlakyStore {
            inner,
            available: AtomicBool::new(true),
        }
    }

    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), KvError> {
        if self.available.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(KvError::Unavailable)
        }
    }
}

impl<S: KvStore> KvStore for FlakyStore<S> {
    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, KvError> {
        self.check()?;
        self.inner.get(key)
    }
    fn put(&self, key: &[u8], value: &[u8]) -> Result<(), KvError> {
        self.check()?;
        self.inner.put(key, value)
    }
    fn delete(&self, key: &[u8]) -> Result<(), KvError> {
        self.check()?;
        self.inner.delete(key)
    }
    fn get_range(
        &self,
        start: &[u8],
        end: Option<&[u8]>,
        limit: usize,
        direction: Direction,
    ) -> Result<Vec<KvRecord>, KvError> {
        self.check()?;
        self.inner.get_range(start, end, limit, direction)
    }
    fn count_range(&self, start: &[u8], end: Option<&[u8]>) -> Result<u64, KvError> {
        self.check()?;
        self.inner.count_range(start, end)
    }
    fn test_and_set(
        &self,
        key: &[u8],
        expected: Option<&[u8]>,
        new: &[u8],
    ) -> Result<bool, KvError> {
        self.check()?;
        self.inner.test_and_set(key, expected, new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn point_operations() {
        let s = MemStore::new();
        assert_eq!(s.get(b"k").unwrap(), None);
        s.put(b"k", b"1").unwrap();
        assert_eq!(s.get(b"k").unwrap(), Some(b"1".to_vec()));
        s.put(b"k", b"2").unwrap();
        assert_eq!(s.get(b"k").unwrap(), Some(b"2".to_vec()));
        s.delete(b"k").unwrap();
        assert_eq!(s.get(b"k").unwrap(), None);
    }

    #[test]
    fn ranges_and_counts() {
        let s = MemStore::new();
        assert!(s
            .get_range(b"a", Some(b"z"), 5, Direction::Ascending)
            .unwrap()
            .is_empty());
        assert_eq!(s.count_range(b"a", Some(b"z")).unwrap(), 0);
        for k in [b"p1", b"p3", b"p2"] {
            s.put(k, b"v").unwrap();
        }
        s.put(b"q1", b"v").unwrap();
        // Oracle: sort the inserted keys and take the largest two.
        let mut inserted = vec![b"p1".to_vec(), b"p3".to_vec(), b"p2".to_vec()];
        inserted.sort();
        let expected: Vec<_> = inserted.iter().rev().take(2).cloned().collect();
        let got: Vec<_> = s
            .get_range(b"p", Some(b"q"), 2, Direction::Descending)
            .unwrap()
            .into_iter()
            .map(|r| r.key)
            .collect();
        assert_eq!(got, expected);
        assert_eq!(
            s.get_range(b"p", Some(b"q"), 10, Direction::Ascending)
                .unwrap()
                .len(),
            3
        );
        assert_eq!(s.count_range(b"p", Some(b"q")).unwrap(), 3);
        assert_eq!(s.count_range(b"r", Some(b"s")).unwrap(), 0);
        assert_eq!(
            s.get_range(b"z", Some(b"a"), 1, Direction::Ascending),
            Err(KvError::InvalidRange)
        );
        assert_eq!(
            s.get_range(b"a", None, 0, Direction::Ascending),
            Err(KvError::ZeroLimit)
        );
    }

    #[test]
    fn test_and_set_semantics() {
        let s = MemStore::new();
        assert!(s.test_and_set(b"k", None, b"1").unwrap());
        assert!(!s.test_and_set(b"k", Some(b"x"), b"2").unwrap());
        assert_eq!(s.get(b"k").unwrap(), Some(b"1".to_vec()));
        assert!(s.test_and_set(b"k", Some(b"1"), b"2").unwrap());
    }

    #[test]
    fn concurrent_test_and_set_has_single_winner() {
        for round in 0..50u32 {
            let s = Arc::new(MemStore::new());
            let key = round.to_be_bytes();
            let wins: u32 = std::thread::scope(|scope| {
                let handles: Vec<_> = (0..8u8)
                    .map(|i| {
                        let s = Arc::clone(&s);
                        scope.spawn(move || s.test_and_set(&key, None, &[i]).unwrap() as u32)
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).sum()
            });
            assert_eq!(wins, 1);
        }
    }

    #[test]
    fn flaky_store_reports_unavailable() {
        let s = FlakyStore::new(MemStore::new());
        s.set_available(false);
        assert_eq!(s.get(b"k"), Err(KvError::Unavailable));
        s.set_available(true);
        assert_eq!(s.get(b"k"), Ok(None));
    }
}
