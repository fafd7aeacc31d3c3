//! Closed-set identification: gallery search, CMC curve, AUC-CMC and mean
//! rank.
//!
//! The gallery holds segments (several per speaker); a probe's rank is the
//! position of the first gallery entry with the probe's speaker when
//! entries are sorted by descending cosine score, ties broken by canonical
//! entry order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, CorpusManifest, EmbeddingMatrix};
use crate::error::{Error, Result};

/// One enrolled gallery entry.
#[derive(Debug, Clone)]
pub struct GalleryEntry {
    pub segment_id: String,
    pub speaker_id: String,
    pub embedding: Vec<f64>,
}

/// Enrolled reference entries for identification, in canonical
/// (segment_id) order.
#[derive(Debug, Clone)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
    dim: usize,
    /// speaker_id -> number of gallery entries
    multiplicity: BTreeMap<String, usize>,
}

impl Gallery {
    pub fn new(mut entries: Vec<GalleryEntry>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::DimensionMismatch(
                "gallery needs at least 2 entries".into(),
            ));
        }
        entries.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        let dim = entries[0].embedding.len();
        if entries.iter().any(|e| e.embedding.len() != dim) {
            return Err(Error::DimensionMismatch("ragged gallery embeddings".into()));
        }
        let mut multiplicity: BTreeMap<String, usize> = BTreeMap::new();
        for e in &entries {
            *multiplicity.entry(e.speaker_id.clone()).or_insert(0) += 1;
        }
        Ok(Gallery {
            entries,
            dim,
            multiplicity,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn multiplicity(&self, speaker_id: &str) -> usize {
        self.multiplicity.get(speaker_id).copied().unwrap_or(0)
    }

    pub fn has_speaker(&self, speaker_id: &str) -> bool {
        self.multiplicity.contains_key(speaker_id)
    }
}

/// A query embedding with its true identity.
#[derive(Debug, Clone)]
pub struct Probe {
    pub segment_id: String,
    pub speaker_id: String,
    pub embedding: Vec<f64>,
}

/// Builds the gallery from segments of `gallery_condition` and the probe
/// set from segments of `probe_condition` (a de-identified profile).
/// Every probe speaker must be enrolled.
pub fn build_gallery(
    manifest: &CorpusManifest,
    emb: &EmbeddingMatrix,
    probe_profile: u32,
) -> Result<(Gallery, Vec<Probe>)> {
    let mut entries = Vec::new();
    for r in manifest.select(Condition::Orig, None, None) {
        let e = emb
            .get(&r.segment_id)
            .ok_or_else(|| Error::MissingEmbedding(r.segment_id.clone()))?;
        entries.push(GalleryEntry {
            segment_id: r.segment_id.clone(),
            speaker_id: r.speaker_id.clone(),
            embedding: e.to_vec(),
        });
    }
    let gallery = Gallery::new(entries)?;

    let mut probes = Vec::new();
    for r in manifest.select(Condition::Deid, Some(probe_profile), None) {
        if !gallery.has_speaker(&r.speaker_id) {
            return Err(Error::ProbeWithoutGalleryIdentity(r.speaker_id.clone()));
        }
        let e = emb
            .get(&r.segment_id)
            .ok_or_else(|| Error::MissingEmbedding(r.segment_id.clone()))?;
        probes.push(Probe {
            segment_id: r.segment_id.clone(),
            speaker_id: r.speaker_id.clone(),
            embedding: e.to_vec(),
        });
    }
    if probes.is_empty() {
        return Err(Error::EmptyScenario(format!(
            "no probes for profile {probe_profile}"
        )));
    }
    Ok((gallery, probes))
}

fn cosine_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    let denom = (nx * ny).sqrt();
    if denom == 0.0 {
        return f64::NEG_INFINITY;
    }
    dot / denom
}

/// Rank of the first correct-speaker entry for one probe, 1-based.
pub fn rank_probe(gallery: &Gallery, probe: &Probe) -> Result<usize> {
    if probe.embedding.len() != gallery.dim() {
        return Err(Error::DimensionMismatch(format!(
            "probe dim {} vs gallery dim {}",
            probe.embedding.len(),
            gallery.dim()
        )));
    }
    if !gallery.has_speaker(&probe.speaker_id) {
        return Err(Error::ProbeWithoutGalleryIdentity(probe.speaker_id.clone()));
    }
    let scores: Vec<f64> = gallery
        .entries()
        .iter()
        .map(|e| cosine_unchecked(&e.embedding, &probe.embedding))
        .collect();
    // Rank = 1 + number of entries placed ahead of the best correct entry,
    // where "ahead" is a higher score, or an equal score at an earlier
    // canonical position.
    let mut best_correct: Option<usize> = None;
    for (i, e) in gallery.entries().iter().enumerate() {
        if e.speaker_id == probe.speaker_id && best_correct.map_or(true, |b| scores[i] > scores[b])
        {
            best_correct = Some(i);
        }
    }
    let b = best_correct.expect("checked speaker presence");
    let mut rank = 1usize;
    for (i, &s) in scores.iter().enumerate() {
        if i == b {
            continue;
        }
        if s > scores[b] || (s == scores[b] && i < b) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Ranks for a whole probe set; probes are processed in parallel.
pub fn rank_probes(gallery: &Gallery, probes: &[Probe]) -> Result<Vec<usize>> {
    probes
        .par_iter()
        .map(|p| rank_probe(gallery, p))
        .collect()
}

/// Identification hit-rates per rank: `hits[k-1]` is the fraction of
/// probes with rank <= k, for k = 1..=G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub hits: Vec<f64>,
    pub n_probes: usize,
    pub gallery_size: usize,
}

impl CmcCurve {
    /// Hit rate at rank k (1-based).
    pub fn hit_rate(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.gallery_size {
            return Err(Error::RankOutOfRange {
                k,
                g: self.gallery_size,
            });
        }
        Ok(self.hits[k - 1])
    }

    /// Normalized area under the curve: mean of hits over ranks 1..=G.
    pub fn auc(&self) -> f64 {
        self.hits.iter().sum::<f64>() / self.gallery_size as f64
    }

    /// Averages several curves over the same gallery size.
    pub fn average(curves: &[CmcCurve]) -> Result<CmcCurve> {
        let g = curves
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no curves to average".into()))?
            .gallery_size;
        if curves.iter().any(|c| c.gallery_size != g) {
            return Err(Error::DimensionMismatch(
                "cannot average curves over different gallery sizes".into(),
            ));
        }
        let mut hits = vec![0.0; g];
        for c in curves {
            for (h, v) in hits.iter_mut().zip(&c.hits) {
                *h += v / curves.len() as f64;
            }
        }
        Ok(CmcCurve {
            hits,
            n_probes: curves.iter().map(|c| c.n_probes).sum(),
            gallery_size: g,
        })
    }
}

/// Builds the CMC curve from per-probe ranks.
pub fn cmc_from_ranks(ranks: &[usize], gallery_size: usize) -> Result<CmcCurve> {
    if ranks.is_empty() {
        return Err(Error::EmptyScenario("no probes for CMC".into()));
    }
    let mut counts = vec![0usize; gallery_size];
    for &r in ranks {
        debug_assert!(r >= 1 && r <= gallery_size);
        counts[r - 1] += 1;
    }
    let mut hits = Vec::with_capacity(gallery_size);
    let mut acc = 0usize;
    for c in counts {
        acc += c;
        hits.push(acc as f64 / ranks.len() as f64);
    }
    Ok(CmcCurve {
        hits,
        n_probes: ranks.len(),
        gallery_size,
    })
}

/// Ranks every probe and accumulates the CMC curve.
pub fn cmc_curve(gallery: &Gallery, probes: &[Probe]) -> Result<CmcCurve> {
    let ranks = rank_probes(gallery, probes)?;
    cmc_from_ranks(&ranks, gallery.size())
}

/// Arithmetic mean of probe ranks.
pub fn mean_rank(gallery: &Gallery, probes: &[Probe]) -> Result<f64> {
    let ranks = rank_probes(gallery, probes)?;
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

/// JSON shape of the CMC report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcReport {
    #[serde(rename = "G")]
    pub gallery_size: usize,
    pub n_probes: usize,
    pub hits: Vec<f64>,
    pub auc_cmc: f64,
    pub mean_rank: f64,
    /// Hit rate at the conventional report ranks that fit the gallery.
    #[serde(with = "rank_keys")]
    pub hit_at: BTreeMap<usize, f64>,
}

/// JSON object keys are strings; map the rank keys through explicitly so
/// the report round-trips.
mod rank_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<usize, f64>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        // Stream in numeric key order.
        ser.collect_map(map.iter().map(|(k, v)| (k.to_string(), *v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<usize, f64>, D::Error> {
        let as_strings: BTreeMap<String, f64> = BTreeMap::deserialize(de)?;
        as_strings
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|e| D::Error::custom(format!("rank key {k:?}: {e}")))
            })
            .collect()
    }
}

/// Report ranks mirrored from the evaluation tables.
pub const REPORT_RANKS: [usize; 5] = [1, 5, 10, 20, 50];

impl CmcReport {
    pub fn from_ranks(ranks: &[usize], gallery_size: usize) -> Result<CmcReport> {
        let curve = cmc_from_ranks(ranks, gallery_size)?;
        let mut hit_at = BTreeMap::new();
        for &k in REPORT_RANKS.iter() {
            if let Ok(h) = curve.hit_rate(k) {
                hit_at.insert(k, h);
            }
        }
        Ok(CmcReport {
            gallery_size,
            n_probes: curve.n_probes,
            auc_cmc: curve.auc(),
            mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len() as f64,
            hits: curve.hits,
            hit_at,
        })
    }
}

/// Writes the plot-ready CMC curve: `k,hit_rate`.
pub fn write_cmc_csv(curve: &CmcCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["k", "hit_rate"])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    for (i, h) in curve.hits.iter().enumerate() {
        w.write_record([format!("{}", i + 1), format!("{h}")])
            .map_err(|e| Error::ParseFailure(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
