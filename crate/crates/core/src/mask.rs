//! Sparse point-index masks and the set algebra the whole pipeline runs on.
//!
//! An [`InstanceMask`] is a strictly increasing, non-empty list of point
//! indices. Intersections use a sorted merge, switching to galloping search
//! when the operands are badly unbalanced, or to a [`BitMask`] probe when one
//! side is dense relative to the cloud (see [`PreparedMask`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Masks larger than `N / DENSITY_DIVISOR` are probed through a bitset.
pub const DENSITY_DIVISOR: usize = 32;

/// Size ratio above which the intersection gallops through the larger mask.
const GALLOP_RATIO: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct InstanceMask {
    indices: Vec<u32>,
}

impl InstanceMask {
    /// Builds a mask from an already sorted, duplicate-free index list.
    pub fn new(indices: Vec<u32>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyMask);
        }
        if let Some(pos) = indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::NonMonotone { position: pos + 1 });
        }
        Ok(Self { indices })
    }

    /// Builds a mask from arbitrary indices, sorting and deduplicating.
    pub fn from_unsorted<I: IntoIterator<Item = u32>>(iter: I) -> Result<Self> {
        let mut indices: Vec<u32> = iter.into_iter().collect();
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices)
    }

    /// Contiguous range `[start, end)`.
    pub fn range(start: u32, end: u32) -> Result<Self> {
        Self::new((start..end).collect())
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn into_indices(self) -> Vec<u32> {
        self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> u32 {
        self.indices[0]
    }

    pub fn last(&self) -> u32 {
        self.indices[self.indices.len() - 1]
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// `|self ∩ other|`.
    pub fn intersection_count(&self, other: &InstanceMask) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (&self.indices, &other.indices)
        } else {
            (&other.indices, &self.indices)
        };
        if large.len() / small.len() >= GALLOP_RATIO {
            gallop_count(small, large)
        } else {
            merge_count(small, large)
        }
    }

    /// `|self ∪ other|` without materializing the union.
    pub fn union_count(&self, other: &InstanceMask) -> usize {
        self.len() + other.len() - self.intersection_count(other)
    }

    pub fn union(&self, other: &InstanceMask) -> InstanceMask {
        let (a, b) = (&self.indices, &other.indices);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        InstanceMask { indices: out }
    }

    /// Intersection as a mask, or `None` when disjoint.
    pub fn intersection(&self, other: &InstanceMask) -> Option<InstanceMask> {
        let (a, b) = (&self.indices, &other.indices);
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        if out.is_empty() {
            None
        } else {
            Some(InstanceMask { indices: out })
        }
    }

    /// Intersection over union.
    pub fn iou(&self, other: &InstanceMask) -> f64 {
        let inter = self.intersection_count(other);
        inter as f64 / (self.len() + other.len() - inter) as f64
    }

    /// Run-length encoding as `(start, len)` runs over the sorted indices.
    pub fn to_runs(&self) -> Vec<(u32, u32)> {
        let mut runs: Vec<(u32, u32)> = Vec::new();
        for &idx in &self.indices {
            match runs.last_mut() {
                Some((start, len)) if *start + *len == idx => *len += 1,
                _ => runs.push((idx, 1)),
            }
        }
        runs
    }

    /// Decodes runs. Runs must be ascending, non-overlapping and non-empty.
    pub fn from_runs(runs: &[(u32, u32)]) -> Result<Self> {
        let mut indices = Vec::new();
        for (k, &(start, len)) in runs.iter().enumerate() {
            if len == 0 {
                return Err(Error::InvalidValue(format!("run {k} has zero length")));
            }
            let end = start as u64 + len as u64;
            if end > u32::MAX as u64 + 1 {
                return Err(Error::IndexOutOfRange {
                    index: end - 1,
                    limit: u32::MAX as u64 + 1,
                });
            }
            if let Some(&prev) = indices.last() {
                if start <= prev {
                    return Err(Error::NonMonotone {
                        position: indices.len(),
                    });
                }
            }
            indices.extend(start..=(end - 1) as u32);
        }
        Self::new(indices)
    }

    /// Fails if any index is `>= n`.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        if self.last() as usize >= n {
            return Err(Error::IndexOutOfRange {
                index: self.last() as u64,
                limit: n as u64,
            });
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for InstanceMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let indices = Vec::<u32>::deserialize(d)?;
        InstanceMask::new(indices).map_err(serde::de::Error::custom)
    }
}

fn merge_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let (x, y) = (a[i], b[j]);
        i += (x <= y) as usize;
        j += (y <= x) as usize;
        n += (x == y) as usize;
    }
    n
}

fn gallop_count(small: &[u32], large: &[u32]) -> usize {
    let mut rest = large;
    let mut n = 0;
    for &x in small {
        // exponential probe then binary search inside the bracket
        let mut hi = 1;
        while hi < rest.len() && rest[hi] < x {
            hi *= 2;
        }
        let lo = hi / 2;
        let hi = (hi + 1).min(rest.len());
        match rest[lo..hi].binary_search(&x) {
            Ok(p) => {
                n += 1;
                rest = &rest[lo + p + 1..];
            }
            Err(p) => rest = &rest[lo + p..],
        }
        if rest.is_empty() {
            break;
        }
    }
    n
}

/// Fixed-size bitset over `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    words: Vec<u64>,
    domain: usize,
}

impl BitMask {
    pub fn new(domain: usize) -> Self {
        Self {
            words: vec![0; domain.div_ceil(64)],
            domain,
        }
    }

    pub fn from_mask(mask: &InstanceMask, domain: usize) -> Self {
        let mut bits = Self::new(domain);
        for &i in mask.indices() {
            bits.insert(i as usize);
        }
        bits
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.domain);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.domain && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of mask indices set in this bitset.
    pub fn count_members(&self, mask: &InstanceMask) -> usize {
        mask.indices()
            .iter()
            .filter(|&&i| self.contains(i as usize))
            .count()
    }
}

/// A mask paired with an optional dense probe, chosen by density.
#[derive(Debug, Clone)]
pub struct PreparedMask<'a> {
    mask: &'a InstanceMask,
    dense: Option<BitMask>,
}

impl<'a> PreparedMask<'a> {
    pub fn new(mask: &'a InstanceMask, domain: usize) -> Self {
        let dense = (mask.len() > domain / DENSITY_DIVISOR && domain > 0)
            .then(|| BitMask::from_mask(mask, domain.max(mask.last() as usize + 1)));
        Self { mask, dense }
    }

    pub fn mask(&self) -> &InstanceMask {
        self.mask
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    pub fn intersection_count(&self, other: &InstanceMask) -> usize {
        match &self.dense {
            Some(bits) if other.len() < self.mask.len() => bits.count_members(other),
            _ => self.mask.intersection_count(other),
        }
    }
}
