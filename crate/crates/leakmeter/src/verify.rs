//! Trial scoring and the equal error rate.
//!
//! Scores are cosine similarities computed in double precision. The EER
//! sweep uses every distinct score as a threshold with the convention
//! FRR(t) = |{target < t}| / n_target and FAR(t) = |{nontarget >= t}| /
//! n_nontarget, and linearly interpolates between the two operating
//! points where FAR - FRR changes sign.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::trials::{Label, TrialList};

/// Cosine similarity of two equal-length vectors.
pub fn cosine_score(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of {} vs {} dims",
            x.len(),
            y.len()
        )));
    }
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 {
        return Err(Error::ZeroNormVector("left operand".into()));
    }
    if ny == 0.0 {
        return Err(Error::ZeroNormVector("right operand".into()));
    }
    Ok(dot / (nx.sqrt() * ny.sqrt()))
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
    pub score: f64,
}

/// Per-trial similarity scores with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<ScoredTrial>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl ScoreSet {
    pub fn new(scores: Vec<ScoredTrial>) -> Self {
        let n_target = scores.iter().filter(|s| s.label == Label::Target).count();
        let n_nontarget = scores.len() - n_target;
        ScoreSet {
            scores,
            n_target,
            n_nontarget,
        }
    }

    pub fn target_scores(&self) -> Vec<f64> {
        self.scores
            .iter()
            .filter(|s| s.label == Label::Target)
            .map(|s| s.score)
            .collect()
    }

    pub fn nontarget_scores(&self) -> Vec<f64> {
        self.scores
            .iter()
            .filter(|s| s.label == Label::NonTarget)
            .map(|s| s.score)
            .collect()
    }
}

/// Scores every trial in the list by cosine similarity. Trials are scored
/// in parallel chunks; output order is the list's canonical order no
/// matter the worker count.
pub fn score_trials(trials: &TrialList, emb: &EmbeddingMatrix) -> Result<ScoreSet> {
    let scores: Vec<ScoredTrial> = trials
        .trials
        .par_iter()
        .map(|t| {
            let x = emb
                .get(&t.enroll_id)
                .ok_or_else(|| Error::MissingEmbedding(t.enroll_id.clone()))?;
            let y = emb
                .get(&t.test_id)
                .ok_or_else(|| Error::MissingEmbedding(t.test_id.clone()))?;
            Ok(ScoredTrial {
                enroll_id: t.enroll_id.clone(),
                test_id: t.test_id.clone(),
                label: t.label,
                score: cosine_score(x, y)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScoreSet::new(scores))
}

/// One ROC operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

/// Equal error rate with its threshold and the full ROC sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub roc: Vec<OperatingPoint>,
}

/// Computes the EER by sweeping all distinct scores as thresholds.
pub fn eer(scores: &ScoreSet) -> Result<EerResult> {
    if scores.n_target == 0 {
        return Err(Error::DegenerateLabels("no target scores".into()));
    }
    if scores.n_nontarget == 0 {
        return Err(Error::DegenerateLabels("no nontarget scores".into()));
    }
    for s in &scores.scores {
        if !s.score.is_finite() {
            return Err(Error::ParseFailure(format!(
                "non-finite score for ({}, {})",
                s.enroll_id, s.test_id
            )));
        }
    }

    let mut targets = scores.target_scores();
    let mut nontargets = scores.nontarget_scores();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nontargets.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;
    // count of elements < t (targets) and >= t (nontargets) via binary search
    let frr_at = |t: f64| targets.partition_point(|&x| x < t) as f64 / nt;
    let far_at = |t: f64| (nontargets.len() - nontargets.partition_point(|&x| x < t)) as f64 / nn;

    let mut roc: Vec<OperatingPoint> = thresholds
        .iter()
        .map(|&t| OperatingPoint {
            far: far_at(t),
            frr: frr_at(t),
            threshold: t,
        })
        .collect();
    // A final point past the largest score, so FRR reaches 1 and FAR 0 and
    // a sign change always exists.
    let last = *thresholds.last().unwrap();
    let past = if last == f64::MAX { last } else { f64::MAX };
    roc.push(OperatingPoint {
        far: 0.0,
        frr: 1.0,
        threshold: past,
    });

    // Find the first operating point where FAR - FRR <= 0; interpolate
    // with its predecessor.
    let mut eer_val = f64::NAN;
    let mut eer_thr = f64::NAN;
    for i in 0..roc.len() {
        let d = roc[i].far - roc[i].frr;
        if d == 0.0 {
            eer_val = roc[i].far;
            eer_thr = roc[i].threshold;
            break;
        }
        if d < 0.0 {
            if i == 0 {
                eer_val = (roc[i].far + roc[i].frr) / 2.0;
                eer_thr = roc[i].threshold;
            } else {
                let d0 = roc[i - 1].far - roc[i - 1].frr;
                let d1 = d;
                let t = d0 / (d0 - d1);
                eer_val = roc[i - 1].far + t * (roc[i].far - roc[i - 1].far);
                eer_thr = roc[i - 1].threshold + t * (roc[i].threshold - roc[i - 1].threshold);
            }
            break;
        }
    }
    debug_assert!(eer_val.is_finite());

    Ok(EerResult {
        eer: eer_val,
        threshold: eer_thr,
        roc,
    })
}

/// JSON shape of the EER report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub roc: Vec<(f64, f64, f64)>,
}

impl EerReport {
    pub fn from_result(r: &EerResult, scores: &ScoreSet) -> Self {
        EerReport {
            eer: r.eer,
            threshold: r.threshold,
            n_target: scores.n_target,
            n_nontarget: scores.n_nontarget,
            roc: r.roc.iter().map(|p| (p.far, p.frr, p.threshold)).collect(),
        }
    }
}

/// Writes scores as CSV: `enroll_id,test_id,label,score`.
pub fn write_scores(scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["enroll_id", "test_id", "label", "score"])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    for s in &scores.scores {
        w.write_record([
            s.enroll_id.as_str(),
            s.test_id.as_str(),
            s.label.as_str(),
            &format!("{}", s.score),
        ])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a score CSV produced by this tool or an external back-end.
pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut scores = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseFailure(e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::ParseFailure(format!(
                "row {line}: expected 4 columns, got {}",
                rec.len()
            )));
        }
        let score: f64 = rec[3]
            .parse()
            .map_err(|e| Error::ParseFailure(format!("row {line}: {e}")))?;
        scores.push(ScoredTrial {
            enroll_id: rec[0].to_string(),
            test_id: rec[1].to_string(),
            label: Label::parse(&rec[2])?,
            score,
        });
    }
    Ok(ScoreSet::new(scores))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_manifest, Condition, DurationClass, SegmentRecord};
    use crate::trials::{gen_set1, TrialGenOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn set_from(targets: &[f64], nontargets: &[f64]) -> ScoreSet {
        let mut scores = Vec::new();
        for (i, &s) in targets.iter().enumerate() {
            scores.push(ScoredTrial {
                enroll_id: format!("t{i}e"),
                test_id: format!("t{i}t"),
                label: Label::Target,
                score: s,
            });
        }
        for (i, &s) in nontargets.iter().enumerate() {
            scores.push(ScoredTrial {
                enroll_id: format!("n{i}e"),
                test_id: format!("n{i}t"),
                label: Label::NonTarget,
                score: s,
            });
        }
        ScoreSet::new(scores)
    }

    #[test]
    fn cosine_identity_orthogonal_oblique() {
        assert!((cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-15);
        let c = cosine_score(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_score(&[0.0, 0.0], &[1.0, 0.0]).unwrap_err(),
            Error::ZeroNormVector(_)
        ));
        assert!(matches!(
            cosine_score(&[1.0], &[1.0, 0.0]).unwrap_err(),
            Error::DimensionMismatch(_)
        ));
    }

    #[test]
    fn perfect_separation_gives_zero() {
        let s = set_from(&[0.9, 0.8, 0.7], &[0.3, 0.2, 0.1]);
        let r = eer(&s).unwrap();
        assert_eq!(r.eer, 0.0);
    }

    // targets {0.9, 0.8, 0.2}, nontargets {0.7, 0.1, 0.05}: sweeping all six
    // distinct thresholds puts the crossing at t = 0.7 where FAR = FRR = 1/3.
    #[test]
    fn hand_computed_crossing() {
        let s = set_from(&[0.9, 0.8, 0.2], &[0.7, 0.1, 0.05]);
        let r = eer(&s).unwrap();
        assert!((r.eer - 1.0 / 3.0).abs() < 1e-12, "eer = {}", r.eer);
        assert!((r.threshold - 0.7).abs() < 1e-12);
        assert!((r.eer - brute::eer_brute_force(&s)).abs() <= brute::step(&s));
    }

    #[test]
    fn same_distribution_is_chance() {
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let targets: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nontargets: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = set_from(&targets, &nontargets);
        let r = eer(&s).unwrap();
        assert!((r.eer - 0.5).abs() < 0.01, "eer = {}", r.eer);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let s = set_from(&[0.5], &[]);
        assert!(matches!(
            eer(&s).unwrap_err(),
            Error::DegenerateLabels(_)
        ));
    }

    #[test]
    fn roc_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let targets: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0) + 0.2).collect();
        let nontargets: Vec<f64> = (0..700).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = set_from(&targets, &nontargets);
        let r = eer(&s).unwrap();
        for w in r.roc.windows(2) {
            assert!(w[0].far >= w[1].far);
            assert!(w[0].frr <= w[1].frr);
            assert!(w[0].threshold <= w[1].threshold);
        }
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let targets: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nontargets: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.2..0.8)).collect();
        let s1 = set_from(&targets, &nontargets);
        let f = |x: f64| (3.0 * x).tanh() * 2.0 + x * 0.1;
        let t2: Vec<f64> = targets.iter().map(|&x| f(x)).collect();
        let n2: Vec<f64> = nontargets.iter().map(|&x| f(x)).collect();
        let s2 = set_from(&t2, &n2);
        let r1 = eer(&s1).unwrap();
        let r2 = eer(&s2).unwrap();
        assert!((r1.eer - r2.eer).abs() < 1e-12);
    }

    #[test]
    fn label_swap_complements() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let a: Vec<f64> = (0..200).map(|_| rng.gen_range(0.3..1.3)).collect();
        let b: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s1 = set_from(&a, &b);
        let s2 = set_from(&b, &a);
        let r1 = eer(&s1).unwrap();
        let r2 = eer(&s2).unwrap();
        let step = brute::step(&s1);
        assert!(
            (r2.eer - (1.0 - r1.eer)).abs() <= step,
            "{} vs 1 - {}",
            r2.eer,
            r1.eer
        );
    }

    #[test]
    fn interpolated_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..50 {
            let nt = rng.gen_range(1..1000);
            let nn = rng.gen_range(1..1000);
            let shift = rng.gen_range(-0.5..1.5);
            let targets: Vec<f64> = (0..nt).map(|_| rng.gen_range(0.0..1.0) + shift).collect();
            let nontargets: Vec<f64> = (0..nn).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = set_from(&targets, &nontargets);
            let r = eer(&s).unwrap();
            let bf = brute::eer_brute_force(&s);
            assert!(
                (r.eer - bf).abs() <= brute::step(&s),
                "interp {} vs brute {} (nt={nt}, nn={nn})",
                r.eer,
                bf
            );
        }
    }

    #[test]
    fn score_trials_matches_ids_and_flags_missing() {
        let m = build_manifest(vec![
            SegmentRecord {
                segment_id: "a-o".into(),
                speaker_id: "sa".into(),
                session_id: "1".into(),
                condition: Condition::Orig,
                profile_id: None,
                duration_class: DurationClass::S10,
            },
            SegmentRecord {
                segment_id: "a-d".into(),
                speaker_id: "sa".into(),
                session_id: "2".into(),
                condition: Condition::Deid,
                profile_id: Some(1),
                duration_class: DurationClass::S10,
            },
            SegmentRecord {
                segment_id: "b-o".into(),
                speaker_id: "sb".into(),
                session_id: "1".into(),
                condition: Condition::Orig,
                profile_id: None,
                duration_class: DurationClass::S10,
            },
            SegmentRecord {
                segment_id: "b-d".into(),
                speaker_id: "sb".into(),
                session_id: "2".into(),
                condition: Condition::Deid,
                profile_id: Some(1),
                duration_class: DurationClass::S10,
            },
        ])
        .unwrap();
        let trials = gen_set1(&m, 1, &TrialGenOptions::default()).unwrap();
        let emb = EmbeddingMatrix::new(
            "t",
            2,
            vec!["a-o".into(), "a-d".into(), "b-o".into(), "b-d".into()],
            vec![1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0],
        )
        .unwrap();
        let scored = score_trials(&trials, &emb).unwrap();
        assert_eq!(scored.scores.len(), trials.trials.len());
        for (s, t) in scored.scores.iter().zip(&trials.trials) {
            assert_eq!(s.enroll_id, t.enroll_id);
            assert_eq!(s.test_id, t.test_id);
        }

        let small = EmbeddingMatrix::new("t", 2, vec!["a-o".into()], vec![1.0, 0.0]).unwrap();
        match score_trials(&trials, &small).unwrap_err() {
            Error::MissingEmbedding(id) => assert!(!id.is_empty()),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parallel_and_sequential_scores_identical() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut records = Vec::new();
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for s in 0..40 {
            for c in 0..2 {
                let (cond, prof, sess) = if c == 0 {
                    (Condition::Orig, None, "1")
                } else {
                    (Condition::Deid, Some(1), "2")
                };
                let id = format!("s{s:02}c{c}");
                records.push(SegmentRecord {
                    segment_id: id.clone(),
                    speaker_id: format!("spk{s:02}"),
                    session_id: sess.into(),
                    condition: cond,
                    profile_id: prof,
                    duration_class: DurationClass::S10,
                });
                ids.push(id);
                for _ in 0..8 {
                    values.push(rng.gen_range(-1.0..1.0));
                }
            }
        }
        let m = build_manifest(records).unwrap();
        let emb = EmbeddingMatrix::new("t", 8, ids, values).unwrap();
        let trials = gen_set1(&m, 1, &TrialGenOptions::default()).unwrap();

        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let seq = pool1.install(|| score_trials(&trials, &emb)).unwrap();
        let par = pool8.install(|| score_trials(&trials, &emb)).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn score_csv_roundtrip() {
        let s = set_from(&[0.25, 0.5], &[0.1]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        write_scores(&s, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("enroll_id,test_id,label,score\n"));
        let back = read_scores(&p).unwrap();
        assert_eq!(back, s);
    }
}
