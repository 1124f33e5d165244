//! Per-mask feature assembly from multi-view, multi-level image crops, and
//! query-time ranking.
//!
//! The image encoder is external. A [`FeatureProvider`] turns crop requests
//! into one vector per crop; everything else happens here.

use std::path::PathBuf;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::formats::{crops_to_jsonl, CropRequest};
use crate::io::fvec;
use crate::mask::InstanceMask;
use crate::projection::{bbox3d_to_crop, rank_frames, CropParams, FrameVisibility, ProjectionParams};
use crate::scene::{CameraFrame, FeatureVector, PointCloud, ProposalSet};

/// Deterministic pseudo-random unit vector for `text`.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> FeatureVector {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(text.as_bytes());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    loop {
        let v: Vec<f64> = (0..dim.max(1)).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Ok(f) = FeatureVector::normalized_from(&v) {
            return f;
        }
    }
}

/// Source of one feature vector per image crop.
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;

    /// One vector per request, in request order.
    fn features(&self, requests: &[CropRequest]) -> Result<Vec<FeatureVector>>;
}

/// Embeds each crop's geometry with [`hash_embed`].
#[derive(Debug, Clone, Copy)]
pub struct HashProvider {
    pub dim: usize,
    pub seed: u64,
}

impl FeatureProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, requests: &[CropRequest]) -> Result<Vec<FeatureVector>> {
        Ok(requests
            .par_iter()
            .map(|r| {
                let key = format!(
                    "crop:{}:{}:{},{},{},{}",
                    r.frame_id, r.level, r.u_min, r.v_min, r.u_max, r.v_max
                );
                hash_embed(&key, self.dim, self.seed)
            })
            .collect())
    }
}

/// Runs `program [args..] <requests.jsonl> <response.bin>` and reads the
/// response vectors.
#[derive(Debug, Clone)]
pub struct CommandProvider {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub dim: usize,
}

impl FeatureProvider for CommandProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, requests: &[CropRequest]) -> Result<Vec<FeatureVector>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let req = dir.path().join("requests.jsonl");
        let resp = dir.path().join("response.bin");
        std::fs::write(&req, crops_to_jsonl(requests)).map_err(|e| Error::io(&req, e))?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&req)
            .arg(&resp)
            .output()
            .map_err(|e| Error::ProviderBatch(format!("cannot run {}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::ProviderBatch(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let (_, vectors) = fvec::read_features(&resp)?;
        Ok(vectors)
    }
}

/// Serves precomputed vectors from a response file whose records follow
/// the request order.
#[derive(Debug, Clone)]
pub struct ResponseFileProvider {
    dim: usize,
    vectors: Vec<FeatureVector>,
}

impl ResponseFileProvider {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (dim, vectors) = fvec::read_features(path)?;
        Ok(Self { dim, vectors })
    }
}

impl FeatureProvider for ResponseFileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, requests: &[CropRequest]) -> Result<Vec<FeatureVector>> {
        if requests.len() != self.vectors.len() {
            return Err(Error::ProviderBatch(format!(
                "response file holds {} vectors for {} requests",
                self.vectors.len(),
                requests.len()
            )));
        }
        Ok(self.vectors.clone())
    }
}

/// Calls the provider and checks count, dimension and magnitude of every
/// returned vector.
pub fn fetch(provider: &dyn FeatureProvider, requests: &[CropRequest]) -> Result<Vec<FeatureVector>> {
    let out = provider.features(requests)?;
    if out.len() != requests.len() {
        return Err(Error::ProviderBatch(format!(
            "provider returned {} vectors for {} requests",
            out.len(),
            requests.len()
        )));
    }
    for (r, f) in requests.iter().zip(&out) {
        let bad = |message: String| Error::Provider {
            proposal_id: r.proposal_id.clone(),
            frame_id: r.frame_id,
            level: r.level,
            message,
        };
        if f.dim() != provider.dim() {
            return Err(bad(format!("dimension {} != {}", f.dim(), provider.dim())));
        }
        if !(f.norm() > 1e-9) {
            return Err(bad("zero vector".into()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub top_k: usize,
    pub crops: CropParams,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            top_k: 5,
            crops: CropParams::default(),
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("features.top_k must be >= 1".into()));
        }
        self.crops.validate()
    }
}

/// Cloud, frames and their precomputed per-point visibility.
pub struct SceneViews<'a> {
    pub cloud: &'a PointCloud,
    pub frames: Vec<&'a CameraFrame>,
    pub visibility: Vec<FrameVisibility>,
    pub params: ProjectionParams,
}

impl<'a> SceneViews<'a> {
    pub fn new(cloud: &'a PointCloud, frames: Vec<&'a CameraFrame>, params: ProjectionParams) -> Self {
        let visibility = frames
            .par_iter()
            .map(|f| FrameVisibility::compute(cloud, f, &params))
            .collect();
        Self {
            cloud,
            frames,
            visibility,
            params,
        }
    }

    fn frame(&self, id: u32) -> &CameraFrame {
        self.frames
            .iter()
            .find(|f| f.frame_id() == id)
            .expect("ranked frame belongs to the view set")
    }
}

/// Crops over the `top_k` most-visible frames, `levels` per frame.
pub fn mask_crop_requests(
    proposal_id: &str,
    mask: &InstanceMask,
    views: &SceneViews,
    params: &FeatureParams,
) -> Result<Vec<CropRequest>> {
    let ranked = rank_frames(mask, &views.visibility, params.top_k)?;
    let mut out = Vec::with_capacity(ranked.len() * params.crops.levels as usize);
    for (frame_id, _) in ranked {
        let crops = bbox3d_to_crop(mask, views.cloud, views.frame(frame_id), &params.crops, &views.params)?;
        out.extend(crops.iter().map(|c| CropRequest::new(proposal_id, c)));
    }
    Ok(out)
}

/// Flat mean of crop vectors, renormalized.
pub fn pool_features(vectors: &[FeatureVector]) -> Result<FeatureVector> {
    let dim = vectors.first().ok_or(Error::ZeroVector)?.dim();
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += *x as f64;
        }
    }
    FeatureVector::normalized_from(&acc)
}

pub fn assemble_mask_feature(
    mask: &InstanceMask,
    views: &SceneViews,
    provider: &dyn FeatureProvider,
    params: &FeatureParams,
) -> Result<FeatureVector> {
    let requests = mask_crop_requests("mask", mask, views, params)?;
    pool_features(&fetch(provider, &requests)?)
}

#[derive(Debug, Clone)]
pub struct AssembledSet {
    pub set: ProposalSet,
    /// Proposals not visible in any frame; they keep no feature.
    pub skipped: Vec<String>,
}

/// All crop requests for a set, in proposal order, plus the ids of
/// proposals that no frame sees.
pub fn set_crop_requests(
    set: &ProposalSet,
    views: &SceneViews,
    params: &FeatureParams,
) -> Result<(Vec<Vec<CropRequest>>, Vec<String>)> {
    let per: Vec<Result<Vec<CropRequest>>> = set
        .proposals()
        .par_iter()
        .map(|p| match mask_crop_requests(&p.id, &p.mask, views, params) {
            Err(Error::NoVisibleFrame) => Ok(Vec::new()),
            other => other,
        })
        .collect();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let skipped = set
        .iter()
        .zip(&per)
        .filter(|(_, r)| r.is_empty())
        .map(|(p, _)| p.id.clone())
        .collect();
    Ok((per, skipped))
}

/// Replaces every proposal's feature with one assembled from crops, in a
/// single provider batch.
pub fn assemble_set_features(
    set: &ProposalSet,
    views: &SceneViews,
    provider: &dyn FeatureProvider,
    params: &FeatureParams,
) -> Result<AssembledSet> {
    params.validate()?;
    let (per, skipped) = set_crop_requests(set, views, params)?;
    let flat: Vec<CropRequest> = per.iter().flatten().cloned().collect();
    let vectors = fetch(provider, &flat)?;
    let mut offset = 0;
    let mut proposals = Vec::with_capacity(set.len());
    for (p, reqs) in set.iter().zip(&per) {
        let mut p = p.clone();
        p.feature = if reqs.is_empty() {
            None
        } else {
            let f = pool_features(&vectors[offset..offset + reqs.len()])?;
            offset += reqs.len();
            Some(f)
        };
        proposals.push(p);
    }
    Ok(AssembledSet {
        set: ProposalSet::new(set.point_count(), proposals)?,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub hits: Vec<(String, f64)>,
    /// Proposals without a feature.
    pub skipped: Vec<String>,
}

/// Proposals by descending cosine to `query`, ties in input order.
pub fn rank_by_query(set: &ProposalSet, query: &FeatureVector, top_n: usize) -> Result<Ranking> {
    let mut hits = Vec::new();
    let mut skipped = Vec::new();
    for p in set.iter() {
        match &p.feature {
            Some(f) if f.dim() != query.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: query.dim(),
                    found: f.dim(),
                })
            }
            Some(f) => hits.push((p.id.clone(), f.cosine(query))),
            None => skipped.push(p.id.clone()),
        }
    }
    hits.sort_by(|a, b| b.1.total_cmp(&a.1));
    hits.truncate(top_n);
    Ok(Ranking { hits, skipped })
}
