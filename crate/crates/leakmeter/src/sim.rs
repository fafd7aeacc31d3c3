//! Synthetic corpus and SDID-system simulator.
//!
//! Generates a manifest plus original and de-identified embedding sets
//! with controllable identity leakage, so every metric in the suite can
//! be validated against known ground truth:
//!
//! - original segment:        `c_s + sigma_w * noise`
//! - profile centroid:        `a_{s,p} = (1 - leak) * spread * r_{s,p} + leak * c_s`
//! - de-identified segment:   `a_{s,p} + sigma_w * noise + tau * drift`
//! - optional global rotation of all de-identified vectors.
//!
//! `leak`, `tau` and `pseudo_spread` are simulator knobs, not estimates of
//! any real anonymization system. Everything is a pure function of the
//! config, including its seed: speakers get independent substreams derived
//! by hashing the speaker index into the master seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_manifest, Condition, CorpusManifest, DurationClass, EmbeddingMatrix, SegmentRecord,
};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Embedding dimension.
    pub dim: usize,
    pub n_speakers: usize,
    pub sessions_per_speaker: usize,
    pub segments_per_session: usize,
    /// Pseudo-voices generated per speaker.
    pub n_profiles: u32,
    /// Profiles that actually emit de-identified segments.
    pub selected_profiles: Vec<u32>,
    /// Identity leakage `lambda` in [0, 1]: 0 = private, 1 = full leak.
    pub leak: f64,
    /// Within-speaker noise scale `sigma_w`.
    pub within_speaker_noise: f64,
    /// Per-segment pseudo-voice drift scale `tau`.
    pub profile_instability: f64,
    /// Rotate all de-identified vectors by one fixed orthogonal matrix.
    pub rotate_manifold: bool,
    /// Scale of the pseudo-voice cloud.
    pub pseudo_spread: f64,
    /// Optional global segment budget: emission stops, round-robin over
    /// speakers, once this many segments exist. Mirrors corpora whose
    /// session counts are uneven.
    pub segment_budget: Option<usize>,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 {
            return fail("dim must be >= 1".into());
        }
        if self.n_speakers == 0 || self.sessions_per_speaker == 0 || self.segments_per_session == 0
        {
            return fail("speaker/session/segment counts must be >= 1".into());
        }
        if self.n_profiles == 0 {
            return fail("n_profiles must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return fail(format!("leak {} outside [0, 1]", self.leak));
        }
        if self.within_speaker_noise < 0.0 || self.profile_instability < 0.0 {
            return fail("noise scales must be >= 0".into());
        }
        if self.pseudo_spread <= 0.0 {
            return fail("pseudo_spread must be > 0".into());
        }
        for &p in &self.selected_profiles {
            if p == 0 || p > self.n_profiles {
                return fail(format!("selected profile {p} outside 1..={}", self.n_profiles));
            }
        }
        Ok(())
    }
}

/// Named configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Corpus shaped like the evaluation data: 223 speakers, 2,983
    /// segments, two selected profiles of eight.
    PaperShape,
    /// Five speakers, d = 8; for examples and quick tests.
    Tiny,
    /// Rotation-dominant privacy: local identity destroyed by a global
    /// rotation while the subspace stays linearly alignable.
    DecouplingA,
    /// Local-leak-dominant: neighborhoods retain identity while the global
    /// subspace overlap stays moderate.
    DecouplingB,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name {
            "paper_shape" => Ok(Preset::PaperShape),
            "tiny" => Ok(Preset::Tiny),
            "decoupling_a" => Ok(Preset::DecouplingA),
            "decoupling_b" => Ok(Preset::DecouplingB),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperShape => "paper_shape",
            Preset::Tiny => "tiny",
            Preset::DecouplingA => "decoupling_a",
            Preset::DecouplingB => "decoupling_b",
        }
    }
}

/// Builds the configuration for a named preset.
pub fn preset(name: Preset) -> SimConfig {
    match name {
        Preset::PaperShape => SimConfig {
            seed: 1,
            dim: 64,
            n_speakers: 223,
            sessions_per_speaker: 7,
            segments_per_session: 1,
            n_profiles: 8,
            selected_profiles: vec![1, 2],
            leak: 0.0,
            within_speaker_noise: 0.1,
            profile_instability: 0.0,
            rotate_manifold: false,
            pseudo_spread: 1.0,
            segment_budget: Some(2983),
        },
        Preset::Tiny => SimConfig {
            seed: 1,
            dim: 8,
            n_speakers: 5,
            sessions_per_speaker: 6,
            segments_per_session: 1,
            n_profiles: 8,
            selected_profiles: vec![1, 2],
            leak: 0.2,
            within_speaker_noise: 0.1,
            profile_instability: 0.0,
            rotate_manifold: false,
            pseudo_spread: 1.0,
            segment_budget: None,
        },
        Preset::DecouplingA => SimConfig {
            seed: 1,
            dim: 64,
            n_speakers: 300,
            sessions_per_speaker: 6,
            segments_per_session: 1,
            n_profiles: 8,
            selected_profiles: vec![1, 2],
            leak: 1.0,
            within_speaker_noise: 0.1,
            profile_instability: 0.0,
            rotate_manifold: true,
            pseudo_spread: 1.0,
            segment_budget: None,
        },
        Preset::DecouplingB => SimConfig {
            seed: 1,
            dim: 64,
            n_speakers: 300,
            sessions_per_speaker: 6,
            segments_per_session: 1,
            n_profiles: 8,
            selected_profiles: vec![1, 2],
            leak: 0.3,
            within_speaker_noise: 0.1,
            profile_instability: 0.05,
            rotate_manifold: false,
            pseudo_spread: 1.2,
            segment_budget: None,
        },
    }
}

/// Everything needed to re-derive or verify the generated embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SimConfig,
    /// speaker_id -> centroid
    pub speaker_centroids: BTreeMap<String, Vec<f64>>,
    /// "speaker_id/p{n}" -> pseudo-voice centroid (selected profiles only)
    pub profile_centroids: BTreeMap<String, Vec<f64>>,
    /// Row-major global rotation, when `rotate_manifold` is set.
    pub rotation: Option<Vec<Vec<f64>>>,
}

/// Simulator output: manifest, embedding matrices, and the ground truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub manifest: CorpusManifest,
    pub orig: EmbeddingMatrix,
    /// One matrix per selected profile.
    pub deid: BTreeMap<u32, EmbeddingMatrix>,
    pub ground_truth: GroundTruth,
}

impl SimOutput {
    /// All embedding matrices merged into one id space.
    pub fn merged_embeddings(&self) -> Result<EmbeddingMatrix> {
        let mut parts: Vec<&EmbeddingMatrix> = vec![&self.orig];
        parts.extend(self.deid.values());
        EmbeddingMatrix::merge(self.orig.sid_model_tag(), &parts)
    }
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal via Box-Muller; two uniform draws per value keeps the
/// stream layout fixed.
fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unit-scaled Gaussian vector: E|v|^2 = 1.
fn gauss_vec(rng: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    (0..d).map(|_| gauss(rng) * scale).collect()
}

fn random_orthogonal(rng: &mut ChaCha20Rng, d: usize) -> Mat {
    // Gram-Schmidt with a second pass over a random Gaussian matrix.
    let mut cols: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| gauss(rng)).collect()).collect();
    for j in 0..d {
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..d).map(|i| cols[j][i] * cols[k][i]).sum();
                for i in 0..d {
                    let v = cols[k][i];
                    cols[j][i] -= dot * v;
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut q = Mat::zeros(d, d);
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    q
}

struct SpeakerDraw {
    centroid: Vec<f64>,
    /// Selected-profile centroids, keyed by profile id.
    profiles: BTreeMap<u32, Vec<f64>>,
    /// Per (session, chunk): orig embedding and (profile, deid embedding).
    sessions: Vec<Vec<(Vec<f64>, (u32, Vec<f64>))>>,
}

fn draw_speaker(cfg: &SimConfig, index: usize) -> SpeakerDraw {
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix(cfg.seed, 0xA11CE ^ index as u64));
    let d = cfg.dim;
    let centroid = gauss_vec(&mut rng, d);

    // Pseudo-voice centroids are drawn for all profiles so generation is
    // independent of which subset is selected.
    let mut all_profiles: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for p in 1..=cfg.n_profiles {
        let r = gauss_vec(&mut rng, d);
        let a: Vec<f64> = r
            .iter()
            .zip(&centroid)
            .map(|(ri, ci)| (1.0 - cfg.leak) * cfg.pseudo_spread * ri + cfg.leak * ci)
            .collect();
        all_profiles.insert(p, a);
    }

    let k = cfg.selected_profiles.len();
    let mut sessions = Vec::with_capacity(cfg.sessions_per_speaker);
    for j in 0..cfg.sessions_per_speaker {
        let mut chunks = Vec::with_capacity(cfg.segments_per_session);
        let profile = if k == 0 {
            0
        } else {
            cfg.selected_profiles[(index + j) % k]
        };
        for _c in 0..cfg.segments_per_session {
            let orig: Vec<f64> = centroid
                .iter()
                .map(|ci| ci + cfg.within_speaker_noise * gauss(&mut rng) / (d as f64).sqrt())
                .collect();
            let deid: Vec<f64> = if k == 0 {
                Vec::new()
            } else {
                all_profiles[&profile]
                    .iter()
                    .map(|ai| {
                        ai + cfg.within_speaker_noise * gauss(&mut rng) / (d as f64).sqrt()
                            + cfg.profile_instability * gauss(&mut rng) / (d as f64).sqrt()
                    })
                    .collect()
            };
            chunks.push((orig, (profile, deid)));
        }
        sessions.push(chunks);
    }

    let profiles = cfg
        .selected_profiles
        .iter()
        .map(|p| (*p, all_profiles[p].clone()))
        .collect();
    SpeakerDraw {
        centroid,
        profiles,
        sessions,
    }
}

/// Runs the simulator: a pure function of the config.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let d = cfg.dim;
    let speakers: Vec<SpeakerDraw> = (0..cfg.n_speakers)
        .map(|i| draw_speaker(cfg, i))
        .collect();

    let rotation = if cfg.rotate_manifold {
        let mut rng = ChaCha20Rng::seed_from_u64(splitmix(cfg.seed, 0x0707A7E));
        Some(random_orthogonal(&mut rng, d))
    } else {
        None
    };

    let speaker_name = |i: usize| format!("spk{i:04}");
    let duration_cycle = [DurationClass::S10, DurationClass::S30, DurationClass::S60];

    // Emission is round-robin over speakers at the session level; the
    // budget truncates the tail, which leaves later speakers with fewer
    // sessions, like real corpora.
    let budget = cfg.segment_budget.unwrap_or(usize::MAX);
    let mut records = Vec::new();
    let mut orig_ids = Vec::new();
    let mut orig_values = Vec::new();
    let mut deid_ids: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut deid_values: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut emitted = 0usize;

    'rounds: for j in 0..cfg.sessions_per_speaker {
        for (i, spk) in speakers.iter().enumerate() {
            let session_id = format!("{}_s{j:03}", speaker_name(i));
            for (c, (orig, (profile, deid))) in spk.sessions[j].iter().enumerate() {
                if emitted >= budget {
                    break 'rounds;
                }
                let duration =
                    duration_cycle[(j * cfg.segments_per_session + c) % duration_cycle.len()];
                let orig_id = format!("{}_s{j:03}_c{c:02}_o", speaker_name(i));
                records.push(SegmentRecord {
                    segment_id: orig_id.clone(),
                    speaker_id: speaker_name(i),
                    session_id: session_id.clone(),
                    condition: Condition::Orig,
                    profile_id: None,
                    duration_class: duration,
                });
                orig_ids.push(orig_id);
                orig_values.extend_from_slice(orig);
                emitted += 1;

                if deid.is_empty() {
                    continue;
                }
                if emitted >= budget {
                    break 'rounds;
                }
                let deid_id = format!("{}_s{j:03}_c{c:02}_p{profile}", speaker_name(i));
                records.push(SegmentRecord {
                    segment_id: deid_id.clone(),
                    speaker_id: speaker_name(i),
                    session_id: session_id.clone(),
                    condition: Condition::Deid,
                    profile_id: Some(*profile),
                    duration_class: duration,
                });
                let rotated: Vec<f64> = match &rotation {
                    Some(q) => {
                        let mut out = vec![0.0; d];
                        for (r, item) in out.iter_mut().enumerate() {
                            // row vector times Q: out[r] = sum_k deid[k] * q[k][r]
                            let mut acc = 0.0;
                            for (k, &v) in deid.iter().enumerate() {
                                acc += v * q.get(k, r);
                            }
                            *item = acc;
                        }
                        out
                    }
                    None => deid.clone(),
                };
                deid_ids.entry(*profile).or_default().push(deid_id);
                deid_values
                    .entry(*profile)
                    .or_default()
                    .extend_from_slice(&rotated);
                emitted += 1;
            }
        }
    }

    let manifest = build_manifest(records)?;
    let orig = EmbeddingMatrix::new("sim", d, orig_ids, orig_values)?;
    let mut deid = BTreeMap::new();
    for (p, ids) in deid_ids {
        let values = deid_values.remove(&p).unwrap();
        deid.insert(p, EmbeddingMatrix::new("sim", d, ids, values)?);
    }

    let mut speaker_centroids = BTreeMap::new();
    let mut profile_centroids = BTreeMap::new();
    for (i, spk) in speakers.iter().enumerate() {
        speaker_centroids.insert(speaker_name(i), spk.centroid.clone());
        for (p, a) in &spk.profiles {
            profile_centroids.insert(format!("{}/p{p}", speaker_name(i)), a.clone());
        }
    }
    let ground_truth = GroundTruth {
        config: cfg.clone(),
        speaker_centroids,
        profile_centroids,
        rotation: rotation.map(|q| {
            (0..d)
                .map(|i| (0..d).map(|j| q.get(i, j)).collect())
                .collect()
        }),
    };

    Ok(SimOutput {
        manifest,
        orig,
        deid,
        ground_truth,
    })
}

/// Returns a manifest whose de-identified segments carry uniformly
/// permuted speaker labels; original segments are untouched. The random
/// baseline of the identification metrics.
pub fn shuffle_labels(manifest: &CorpusManifest, seed: u64) -> CorpusManifest {
    let mut records = manifest.segments().to_vec();
    let deid_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.condition == Condition::Deid)
        .map(|(i, _)| i)
        .collect();
    let mut labels: Vec<String> = deid_idx
        .iter()
        .map(|&i| records[i].speaker_id.clone())
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(splitmix(seed, 0x5811FF1E));
    // Fisher-Yates over the label multiset.
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    for (slot, label) in deid_idx.iter().zip(labels) {
        records[*slot].speaker_id = label;
    }
    build_manifest(records).expect("relabeling preserves manifest validity")
}

/// Writes the ground-truth sidecar JSON.
pub fn write_ground_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), gt)
        .map_err(|e| Error::ParseFailure(e.to_string()))
}

/// Reads the ground-truth sidecar JSON.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::ParseFailure(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn tiny_preset_shape() {
        let cfg = preset(Preset::Tiny);
        assert_eq!(cfg.n_speakers, 5);
        assert_eq!(cfg.dim, 8);
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.manifest.speaker_count(), 5);
        assert!(out.deid.contains_key(&1) && out.deid.contains_key(&2));
    }

    #[test]
    fn paper_shape_counts() {
        let cfg = preset(Preset::PaperShape);
        assert_eq!(cfg.n_speakers, 223);
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.manifest.speaker_count(), 223);
        assert_eq!(out.manifest.len(), 2983);
        let orig_count = out.manifest.select(Condition::Orig, None, None).len();
        // The original side is about half the corpus.
        assert!((1300..=1700).contains(&orig_count), "orig side {orig_count}");
    }

    #[test]
    fn output_passes_validation() {
        let out = simulate(&preset(Preset::Tiny)).unwrap();
        let merged = out.merged_embeddings().unwrap();
        let report = validate_corpus(&out.manifest, &merged);
        assert!(report.ok);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = preset(Preset::Tiny);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.orig, b.orig);
        assert_eq!(a.deid, b.deid);
        let mut cfg2 = cfg;
        cfg2.seed = 2;
        let c = simulate(&cfg2).unwrap();
        assert_ne!(a.orig, c.orig);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = preset(Preset::Tiny);
        cfg.leak = 1.5;
        assert!(matches!(simulate(&cfg).unwrap_err(), Error::InvalidConfig(_)));
        let mut cfg = preset(Preset::Tiny);
        cfg.selected_profiles = vec![9];
        assert!(matches!(simulate(&cfg).unwrap_err(), Error::InvalidConfig(_)));
        let mut cfg = preset(Preset::Tiny);
        cfg.pseudo_spread = 0.0;
        assert!(matches!(simulate(&cfg).unwrap_err(), Error::InvalidConfig(_)));
    }

    #[test]
    fn unknown_preset_name() {
        assert!(matches!(
            Preset::parse("bogus").unwrap_err(),
            Error::UnknownPreset(_)
        ));
        assert_eq!(Preset::parse("paper_shape").unwrap(), Preset::PaperShape);
    }

    #[test]
    fn shuffle_single_speaker_is_identity() {
        let out = simulate(&SimConfig {
            n_speakers: 1,
            ..preset(Preset::Tiny)
        })
        .unwrap();
        let shuffled = shuffle_labels(&out.manifest, 99);
        assert_eq!(shuffled, out.manifest);
    }

    #[test]
    fn shuffle_preserves_label_multiset_and_orig() {
        let out = simulate(&preset(Preset::Tiny)).unwrap();
        let s1 = shuffle_labels(&out.manifest, 1);
        let s2 = shuffle_labels(&out.manifest, 2);

        let labels = |m: &CorpusManifest| {
            let mut v: Vec<String> = m
                .segments()
                .iter()
                .filter(|r| r.condition == Condition::Deid)
                .map(|r| r.speaker_id.clone())
                .collect();
            v.sort();
            v
        };
        assert_eq!(labels(&s1), labels(&out.manifest));
        assert_eq!(labels(&s2), labels(&out.manifest));
        // Different seeds give different assignments.
        assert_ne!(s1, s2);
        // Original segments keep their speakers.
        for (a, b) in out
            .manifest
            .segments()
            .iter()
            .zip(s1.segments())
            .filter(|(a, _)| a.condition == Condition::Orig)
        {
            assert_eq!(a.speaker_id, b.speaker_id);
        }
    }

    #[test]
    fn rotation_is_orthogonal_and_applied() {
        let mut cfg = preset(Preset::Tiny);
        cfg.rotate_manifold = true;
        let out = simulate(&cfg).unwrap();
        let q = out.ground_truth.rotation.as_ref().unwrap();
        let d = cfg.dim;
        let qm = Mat::from_rows(q.clone());
        assert!(crate::linalg::orthogonality_defect(&qm) < 1e-10);

        // Un-rotating a deid vector must reproduce the unrotated run.
        let mut plain_cfg = cfg.clone();
        plain_cfg.rotate_manifold = false;
        let plain = simulate(&plain_cfg).unwrap();
        let emb_rot = out.deid[&1].row(0);
        let emb_plain = plain.deid[&1].row(0);
        // row * Q * Q^T = row
        let mut unrot = vec![0.0; d];
        for (r, item) in unrot.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in 0..d {
                acc += emb_rot[k] * qm.get(r, k);
            }
            *item = acc;
        }
        for (a, b) in unrot.iter().zip(emb_plain) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ground_truth_roundtrip() {
        let out = simulate(&preset(Preset::Tiny)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.json");
        write_ground_truth(&out.ground_truth, &p).unwrap();
        let back = read_ground_truth(&p).unwrap();
        assert_eq!(back.config, out.ground_truth.config);
        assert_eq!(back.speaker_centroids, out.ground_truth.speaker_centroids);
    }
}
