//! Memory-bank fusion of per-frame lifted 2D instances into scene-level
//! proposals.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{InstanceMask, PreparedMask};
use crate::scene::{FeatureVector, Proposal, ProposalSet, Source};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub iou_merge: f64,
    pub feat_merge: f64,
    pub merge_period: usize,
    pub min_points: usize,
    pub min_frames: usize,
    pub frame_stride: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_merge: 0.25,
            feat_merge: 0.75,
            merge_period: 30,
            min_points: 50,
            min_frames: 2,
            frame_stride: 10,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_merge) {
            return Err(Error::Config(format!("fusion.iou_merge = {} outside [0,1]", self.iou_merge)));
        }
        if !(-1.0..=1.0).contains(&self.feat_merge) {
            return Err(Error::Config(format!("fusion.feat_merge = {} outside [-1,1]", self.feat_merge)));
        }
        if self.merge_period == 0 {
            return Err(Error::Config("fusion.merge_period must be >= 1".into()));
        }
        if self.frame_stride == 0 {
            return Err(Error::Config("fusion.frame_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether a frame id falls on the sampling stride.
    pub fn selects_frame(&self, frame_id: u32) -> bool {
        frame_id % self.frame_stride == 0
    }

    fn matches(&self, iou: f64, cosine: f64) -> bool {
        iou >= self.iou_merge && cosine >= self.feat_merge
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub mask: InstanceMask,
    pub feature: FeatureVector,
    frames: BTreeSet<u32>,
    pub last_update: u32,
    first_seen: u64,
}

impl BankEntry {
    fn new(mask: InstanceMask, feature: FeatureVector, frame: u32, first_seen: u64) -> Self {
        Self {
            mask,
            feature,
            frames: BTreeSet::from([frame]),
            last_update: frame,
            first_seen,
        }
    }

    /// Number of distinct frames that contributed to this entry.
    pub fn frames_seen(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.iter().copied()
    }

    fn absorb(&mut self, mask: &InstanceMask, feature: &FeatureVector, frames: &BTreeSet<u32>, last: u32) {
        let (wa, wb) = (self.frames_seen() as f64, frames.len() as f64);
        self.feature = weighted_mean(&self.feature, wa, feature, wb);
        self.mask = self.mask.union(mask);
        self.frames.extend(frames);
        self.last_update = self.last_update.max(last);
    }
}

fn weighted_mean(a: &FeatureVector, wa: f64, b: &FeatureVector, wb: f64) -> FeatureVector {
    let mean: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| wa * *x as f64 + wb * *y as f64)
        .collect();
    match FeatureVector::normalized_from(&mean) {
        Ok(f) => f,
        Err(_) if wb > wa => b.clone(),
        Err(_) => a.clone(),
    }
}

/// Sequential memory bank. Frames must be ingested in order.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    config: FusionConfig,
    point_count: usize,
    entries: Vec<BankEntry>,
    ingested: usize,
    next_seq: u64,
}

impl MemoryBank {
    pub fn new(point_count: usize, config: FusionConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            point_count,
            entries: Vec::new(),
            ingested: 0,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frames_ingested(&self) -> usize {
        self.ingested
    }

    /// Adds one frame's lifted instances, then compacts when the merge
    /// period elapses.
    pub fn ingest_frame(&mut self, lifted: Vec<(InstanceMask, FeatureVector)>, frame: u32) -> Result<()> {
        for (mask, feature) in lifted {
            let feature = self.check(&mask, feature)?;
            self.insert(mask, feature, frame);
        }
        self.ingested += 1;
        if self.ingested % self.config.merge_period == 0 {
            self.compact(false);
        }
        Ok(())
    }

    /// Appends an entry without matching it against the bank and without
    /// counting a frame. Used to restore a bank or to build fixtures.
    pub fn push_entry(&mut self, mask: InstanceMask, feature: FeatureVector, frame: u32) -> Result<()> {
        let feature = self.check(&mask, feature)?;
        self.entries.push(BankEntry::new(mask, feature, frame, self.next_seq));
        self.next_seq += 1;
        Ok(())
    }

    fn check(&self, mask: &InstanceMask, feature: FeatureVector) -> Result<FeatureVector> {
        mask.check_bounds(self.point_count)?;
        if let Some(e) = self.entries.first() {
            if e.feature.dim() != feature.dim() {
                return Err(Error::DimensionMismatch {
                    expected: e.feature.dim(),
                    found: feature.dim(),
                });
            }
        }
        feature.to_unit()
    }

    fn insert(&mut self, mask: InstanceMask, feature: FeatureVector, frame: u32) {
        let prepared = PreparedMask::new(&mask, self.point_count);
        let mut best: Option<(usize, f64)> = None;
        for (k, e) in self.entries.iter().enumerate() {
            let inter = prepared.intersection_count(&e.mask) as f64;
            let iou = inter / ((mask.len() + e.mask.len()) as f64 - inter);
            if self.config.matches(iou, feature.cosine(&e.feature)) && best.is_none_or(|(_, b)| iou > b) {
                best = Some((k, iou));
            }
        }
        match best {
            Some((k, _)) => {
                let frames = BTreeSet::from([frame]);
                self.entries[k].absorb(&mask, &feature, &frames, frame);
            }
            None => {
                self.entries.push(BankEntry::new(mask, feature, frame, self.next_seq));
                self.next_seq += 1;
            }
        }
    }

    /// Merges matching entry pairs until none remain, then drops entries
    /// under `min_points` and, at end of sequence, under `min_frames`.
    pub fn compact(&mut self, end_of_sequence: bool) {
        loop {
            let mut changed = false;
            let mut i = 0;
            while i < self.entries.len() {
                let mut j = i + 1;
                while j < self.entries.len() {
                    let (a, b) = (&self.entries[i], &self.entries[j]);
                    if self.config.matches(a.mask.iou(&b.mask), a.feature.cosine(&b.feature)) {
                        let b = self.entries.remove(j);
                        let first = b.first_seen;
                        let a = &mut self.entries[i];
                        a.absorb(&b.mask, &b.feature, &b.frames, b.last_update);
                        a.first_seen = a.first_seen.min(first);
                        changed = true;
                    } else {
                        j += 1;
                    }
                }
                i += 1;
            }
            if !changed {
                break;
            }
        }
        let (min_points, min_frames) = (self.config.min_points, self.config.min_frames);
        self.entries
            .retain(|e| e.mask.len() >= min_points && (!end_of_sequence || e.frames_seen() >= min_frames));
    }

    /// Terminal compaction and conversion to a proposal set ordered by
    /// descending size, ties by first-seen order.
    pub fn finalize(mut self) -> Result<ProposalSet> {
        self.compact(true);
        let mut entries = self.entries;
        entries.sort_by(|a, b| b.mask.len().cmp(&a.mask.len()).then(a.first_seen.cmp(&b.first_seen)));
        let proposals = entries
            .into_iter()
            .enumerate()
            .map(|(k, e)| Proposal::new(format!("2d_{k:04}"), e.mask, Source::Path2D).with_feature(e.feature))
            .collect();
        ProposalSet::new(self.point_count, proposals)
    }

    /// Snapshot of the current entries with their frame counts.
    pub fn checkpoint(&self) -> Result<(ProposalSet, Vec<u32>)> {
        let proposals = self
            .entries
            .iter()
            .enumerate()
            .map(|(k, e)| Proposal::new(format!("bank_{k:04}"), e.mask.clone(), Source::Path2D).with_feature(e.feature.clone()))
            .collect();
        let frames = self.entries.iter().map(|e| e.frames_seen() as u32).collect();
        Ok((ProposalSet::new(self.point_count, proposals)?, frames))
    }
}
