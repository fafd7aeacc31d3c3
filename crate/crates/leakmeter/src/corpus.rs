//! Corpus data model: segments, speakers, pseudo-profiles and embedding sets.
//!
//! A corpus is described by a manifest (one [`SegmentRecord`] per speech
//! segment) plus one embedding matrix per (SID model, condition) pair. The
//! manifest is stored as JSON Lines; embeddings live in the XVEC container
//! or its CSV fallback (see [`crate::ingest`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a segment is original speech or the de-identified rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Orig,
    Deid,
}

/// Minimum seconds of detected speech in the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationClass {
    S10,
    S30,
    S60,
}

/// Metadata for one speech segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub speaker_id: String,
    pub session_id: String,
    pub condition: Condition,
    /// Pseudo-profile index; present exactly when `condition` is `Deid`.
    pub profile_id: Option<u32>,
    pub duration_class: DurationClass,
}

impl SegmentRecord {
    fn check(&self) -> Result<()> {
        match (self.condition, self.profile_id) {
            (Condition::Orig, Some(_)) => {
                Err(Error::ProfileOnOriginal(self.segment_id.clone()))
            }
            (Condition::Deid, None) => Err(Error::MissingProfileId(self.segment_id.clone())),
            _ => Ok(()),
        }
    }
}

/// A validated corpus: canonically ordered segments plus derived indices.
///
/// Segments are held sorted by `segment_id`, so every downstream artifact
/// derived from a manifest is byte-deterministic. Immutable after
/// construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    segments: Vec<SegmentRecord>,
    /// speaker_id -> indices into `segments`
    speakers: BTreeMap<String, Vec<usize>>,
    /// (speaker_id, profile_id) -> indices into `segments`
    profiles: BTreeMap<(String, u32), Vec<usize>>,
    /// Set when the manifest holds no original speech at all.
    deid_only: bool,
}

impl CorpusManifest {
    /// Builds a manifest from records, canonicalizing order and deriving
    /// the speaker and profile indices.
    pub fn build(records: Vec<SegmentRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut segments = records;
        for r in &segments {
            r.check()?;
        }
        segments.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        for w in segments.windows(2) {
            if w[0].segment_id == w[1].segment_id {
                return Err(Error::DuplicateSegmentId(w[0].segment_id.clone()));
            }
        }

        let mut speakers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut profiles: BTreeMap<(String, u32), Vec<usize>> = BTreeMap::new();
        for (i, r) in segments.iter().enumerate() {
            speakers.entry(r.speaker_id.clone()).or_default().push(i);
            if let Some(p) = r.profile_id {
                profiles
                    .entry((r.speaker_id.clone(), p))
                    .or_default()
                    .push(i);
            }
        }
        let deid_only = segments.iter().all(|r| r.condition == Condition::Deid);
        Ok(CorpusManifest {
            segments,
            speakers,
            profiles,
            deid_only,
        })
    }

    /// Segments in canonical (segment_id) order.
    pub fn segments(&self) -> &[SegmentRecord] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn deid_only(&self) -> bool {
        self.deid_only
    }

    /// Number of distinct speakers.
    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }

    /// Speaker ids in canonical order.
    pub fn speaker_ids(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(|s| s.as_str())
    }

    /// All segments of one speaker, canonical order.
    pub fn segments_of(&self, speaker_id: &str) -> impl Iterator<Item = &SegmentRecord> {
        self.speakers
            .get(speaker_id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.segments[i])
    }

    /// Profile indices present in the manifest, canonical order.
    pub fn profile_ids(&self) -> BTreeSet<u32> {
        self.profiles.keys().map(|(_, p)| *p).collect()
    }

    /// Segments of one (speaker, profile), canonical order.
    pub fn profile_segments_of(
        &self,
        speaker_id: &str,
        profile: u32,
    ) -> impl Iterator<Item = &SegmentRecord> {
        self.profiles
            .get(&(speaker_id.to_string(), profile))
            .into_iter()
            .flatten()
            .map(move |&i| &self.segments[i])
    }

    /// Segments matching a condition (and profile, for `Deid`), with an
    /// optional duration-class filter. Canonical order.
    pub fn select(
        &self,
        condition: Condition,
        profile: Option<u32>,
        duration: Option<DurationClass>,
    ) -> Vec<&SegmentRecord> {
        self.segments
            .iter()
            .filter(|r| r.condition == condition)
            .filter(|r| profile.map_or(true, |p| r.profile_id == Some(p)))
            .filter(|r| duration.map_or(true, |d| r.duration_class == d))
            .collect()
    }

    /// Looks up a record by segment id.
    pub fn get(&self, segment_id: &str) -> Option<&SegmentRecord> {
        self.segments
            .binary_search_by(|r| r.segment_id.as_str().cmp(segment_id))
            .ok()
            .map(|i| &self.segments[i])
    }

    /// Speakers that appear in de-identified segments but have no original
    /// speech. Empty for well-covered manifests and for deid-only manifests.
    pub fn coverage_gaps(&self) -> Vec<String> {
        if self.deid_only {
            return Vec::new();
        }
        self.speakers
            .iter()
            .filter(|(_, idxs)| {
                let has_deid = idxs
                    .iter()
                    .any(|&i| self.segments[i].condition == Condition::Deid);
                let has_orig = idxs
                    .iter()
                    .any(|&i| self.segments[i].condition == Condition::Orig);
                has_deid && !has_orig
            })
            .map(|(s, _)| s.clone())
            .collect()
    }
}

/// Builds a manifest from segment records; rejects duplicate ids and
/// original records carrying a profile.
pub fn build_manifest(records: Vec<SegmentRecord>) -> Result<CorpusManifest> {
    CorpusManifest::build(records)
}

/// Dense n x d embedding set keyed by segment id.
///
/// Values are promoted to f64 in memory; the on-disk container stores f32
/// (see [`crate::ingest`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    sid_model_tag: String,
    dim: usize,
    ids: Vec<String>,
    values: Vec<f64>,
    /// id -> row, for O(log n) lookup without re-sorting ids.
    index: BTreeMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Creates a matrix from rows in the given id order.
    pub fn new(
        sid_model_tag: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("dim must be >= 1".into()));
        }
        if values.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {} rows of dim {}, got {}",
                ids.len() * dim,
                ids.len(),
                dim,
                values.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (row, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateSegmentId(id.clone()));
            }
        }
        for (row, chunk) in values.chunks(dim).enumerate() {
            if let Some(_bad) = chunk.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    row,
                    id: ids[row].clone(),
                });
            }
        }
        Ok(EmbeddingMatrix {
            sid_model_tag: sid_model_tag.into(),
            dim,
            ids,
            values,
            index,
        })
    }

    pub fn sid_model_tag(&self) -> &str {
        &self.sid_model_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Row ids in storage order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Embedding for a segment id, if present.
    pub fn get(&self, segment_id: &str) -> Option<&[f64]> {
        self.index.get(segment_id).map(|&i| self.row(i))
    }

    pub fn contains(&self, segment_id: &str) -> bool {
        self.index.contains_key(segment_id)
    }

    /// Merges several matrices with disjoint ids and equal dims into one.
    pub fn merge(tag: impl Into<String>, parts: &[&EmbeddingMatrix]) -> Result<Self> {
        let tag = tag.into();
        let dim = match parts.first() {
            Some(m) => m.dim,
            None => return Err(Error::DimensionMismatch("no matrices to merge".into())),
        };
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for m in parts {
            if m.dim != dim {
                return Err(Error::DimensionMismatch(format!(
                    "cannot merge dim {} with dim {}",
                    m.dim, dim
                )));
            }
            ids.extend(m.ids.iter().cloned());
            values.extend_from_slice(&m.values);
        }
        EmbeddingMatrix::new(tag, dim, ids, values)
    }
}

/// Outcome of cross-checking a manifest against an embedding set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Manifest segment ids with no embedding row.
    pub missing_embeddings: Vec<String>,
    /// Embedding row ids not present in the manifest.
    pub unknown_segments: Vec<String>,
    /// Rows with non-finite values or a dimension clash (id, description).
    pub inconsistencies: Vec<(String, String)>,
    pub ok: bool,
}

/// Cross-checks a manifest against an embedding matrix. All problems are
/// collected into the report; nothing aborts early.
pub fn validate_corpus(manifest: &CorpusManifest, emb: &EmbeddingMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    for r in manifest.segments() {
        if !emb.contains(&r.segment_id) {
            report.missing_embeddings.push(r.segment_id.clone());
        }
    }
    let mut sorted_ids: Vec<&String> = emb.ids().iter().collect();
    sorted_ids.sort();
    for id in sorted_ids {
        if manifest.get(id).is_none() {
            report.unknown_segments.push(id.clone());
        }
    }
    // EmbeddingMatrix construction already rejects NaN/Inf and ragged rows;
    // re-scan here so hand-built matrices from other sources are also caught.
    for (i, id) in emb.ids().iter().enumerate() {
        if emb.row(i).iter().any(|v| !v.is_finite()) {
            report
                .inconsistencies
                .push((id.clone(), "non-finite value".into()));
        }
    }
    report.inconsistencies.sort();
    report.ok = report.missing_embeddings.is_empty()
        && report.unknown_segments.is_empty()
        && report.inconsistencies.is_empty();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(
        seg: &str,
        spk: &str,
        sess: &str,
        condition: Condition,
        profile: Option<u32>,
    ) -> SegmentRecord {
        SegmentRecord {
            segment_id: seg.into(),
            speaker_id: spk.into(),
            session_id: sess.into(),
            condition,
            profile_id: profile,
            duration_class: DurationClass::S10,
        }
    }

    #[test]
    fn single_orig_record() {
        let m = build_manifest(vec![rec("a", "s1", "x", Condition::Orig, None)]).unwrap();
        assert_eq!(m.speaker_count(), 1);
        assert_eq!(m.len(), 1);
        assert!(m.profile_ids().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = build_manifest(vec![
            rec("a", "s1", "x", Condition::Orig, None),
            rec("a", "s2", "y", Condition::Orig, None),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateSegmentId(_)));
    }

    #[test]
    fn profile_on_original_rejected() {
        let err = build_manifest(vec![rec("a", "s1", "x", Condition::Orig, Some(1))]).unwrap_err();
        assert!(matches!(err, Error::ProfileOnOriginal(_)));
    }

    #[test]
    fn deid_without_profile_rejected() {
        let err = build_manifest(vec![rec("a", "s1", "x", Condition::Deid, None)]).unwrap_err();
        assert!(matches!(err, Error::MissingProfileId(_)));
    }

    #[test]
    fn permutation_invariant() {
        let records = vec![
            rec("c", "s2", "x", Condition::Orig, None),
            rec("a", "s1", "x", Condition::Orig, None),
            rec("b", "s1", "y", Condition::Deid, Some(1)),
        ];
        let mut shuffled = records.clone();
        shuffled.reverse();
        assert_eq!(
            build_manifest(records).unwrap(),
            build_manifest(shuffled).unwrap()
        );
    }

    #[test]
    fn coverage_gap_detected() {
        let m = build_manifest(vec![
            rec("a", "s1", "x", Condition::Orig, None),
            rec("b", "s2", "y", Condition::Deid, Some(1)),
        ])
        .unwrap();
        assert_eq!(m.coverage_gaps(), vec!["s2".to_string()]);
        assert!(!m.deid_only());
    }

    #[test]
    fn deid_only_flag() {
        let m = build_manifest(vec![rec("a", "s1", "x", Condition::Deid, Some(1))]).unwrap();
        assert!(m.deid_only());
        assert!(m.coverage_gaps().is_empty());
    }

    #[test]
    fn validate_matching_sets_ok() {
        let m = build_manifest(vec![
            rec("a", "s1", "x", Condition::Orig, None),
            rec("b", "s1", "y", Condition::Orig, None),
        ])
        .unwrap();
        let emb = EmbeddingMatrix::new("t", 2, vec!["a".into(), "b".into()], vec![1.0; 4]).unwrap();
        let report = validate_corpus(&m, &emb);
        assert!(report.ok);
    }

    #[test]
    fn validate_reports_missing_embedding() {
        let m = build_manifest(vec![
            rec("a", "s1", "x", Condition::Orig, None),
            rec("b", "s1", "y", Condition::Orig, None),
        ])
        .unwrap();
        let emb = EmbeddingMatrix::new("t", 2, vec!["a".into()], vec![1.0; 2]).unwrap();
        let report = validate_corpus(&m, &emb);
        assert!(!report.ok);
        assert_eq!(report.missing_embeddings, vec!["b".to_string()]);
        assert!(report.unknown_segments.is_empty());
    }

    #[test]
    fn validate_reports_unknown_segment() {
        let m = build_manifest(vec![rec("a", "s1", "x", Condition::Orig, None)]).unwrap();
        let emb = EmbeddingMatrix::new("t", 2, vec!["a".into(), "z".into()], vec![1.0; 4]).unwrap();
        let report = validate_corpus(&m, &emb);
        assert!(!report.ok);
        assert_eq!(report.unknown_segments, vec!["z".to_string()]);
    }

    #[test]
    fn matrix_rejects_nan() {
        let err =
            EmbeddingMatrix::new("t", 2, vec!["a".into()], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { .. }));
    }

    #[test]
    fn index_rebuild_is_idempotent() {
        let records = vec![
            rec("a", "s1", "x", Condition::Orig, None),
            rec("b", "s1", "y", Condition::Deid, Some(2)),
            rec("c", "s2", "x", Condition::Orig, None),
        ];
        let m1 = build_manifest(records).unwrap();
        let m2 = build_manifest(m1.segments().to_vec()).unwrap();
        assert_eq!(m1, m2);
    }
}
