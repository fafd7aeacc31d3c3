//! Trial-set construction for the three evaluation scenarios.
//!
//! - `set1`: original vs de-identified speech of one pseudo-profile.
//! - `set2`: consistency/collision among de-identified segments of one
//!   pseudo-profile.
//! - `xprof`: distinctness of two pseudo-profiles of the same speaker.
//!
//! Generation is a pure function of (manifest, parameters, seed); repeated
//! runs give byte-identical lists. Target pairs always span different
//! sessions. Non-target pools can be capped by seeded sampling without
//! replacement; the sampler keeps at least one non-target per speaker that
//! contributes a target, so per-speaker coverage survives the cap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Condition, CorpusManifest, DurationClass, SegmentRecord};
use crate::error::{Error, Result};

/// Trial label: same (pseudo-)identity or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    NonTarget,
    Target,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonTarget => "nontarget",
            Label::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(Label::Target),
            "nontarget" => Ok(Label::NonTarget),
            other => Err(Error::ParseFailure(format!("unknown label {other:?}"))),
        }
    }
}

/// The three trial scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Set1,
    Set2,
    Xprof,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Set1 => "set1",
            Scenario::Set2 => "set2",
            Scenario::Xprof => "xprof",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "set1" => Ok(Scenario::Set1),
            "set2" => Ok(Scenario::Set2),
            "xprof" => Ok(Scenario::Xprof),
            other => Err(Error::ParseFailure(format!("unknown scenario {other:?}"))),
        }
    }
}

/// One enroll/test pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
    pub scenario: Scenario,
}

/// A labeled trial set for one scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialList {
    pub scenario: Scenario,
    /// Profile selector(s): one profile for set1/set2, two for xprof.
    pub profiles: Vec<u32>,
    pub trials: Vec<Trial>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

impl TrialList {
    fn assemble(scenario: Scenario, profiles: Vec<u32>, mut trials: Vec<Trial>) -> TrialList {
        // Canonical order: scenario is constant here; label (lexicographic,
        // so nontarget before target), then (enroll_id, test_id).
        trials.sort_by(|a, b| {
            a.label
                .as_str()
                .cmp(b.label.as_str())
                .then_with(|| a.enroll_id.cmp(&b.enroll_id))
                .then_with(|| a.test_id.cmp(&b.test_id))
        });
        let n_target = trials.iter().filter(|t| t.label == Label::Target).count();
        let n_nontarget = trials.len() - n_target;
        TrialList {
            scenario,
            profiles,
            trials,
            n_target,
            n_nontarget,
        }
    }
}

/// Cap on the non-target pool, as a multiple of the target count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NonTargetCap {
    /// Keep every candidate pair.
    Exhaustive,
    /// Seeded sampling down to at most `ratio * n_target` pairs.
    Ratio(f64),
}

impl NonTargetCap {
    /// The paper-scale set1 preset: non-targets ~90x targets.
    pub fn paper_set1() -> Self {
        NonTargetCap::Ratio(940_567.0 / 10_458.0)
    }
}

/// Common knobs for the generators.
#[derive(Debug, Clone, Default)]
pub struct TrialGenOptions {
    pub seed: u64,
    /// Cap on the non-target pool. `None` picks the scenario default:
    /// exhaustive for set1/set2, twice the target count for cross-profile.
    pub cap: Option<NonTargetCap>,
    /// Restrict both sides to one duration class; default: all classes.
    pub duration: Option<DurationClass>,
}

/// Canonical enroll/test orientation: ORIG before DEID, then smaller
/// segment_id first.
fn orient<'a>(a: &'a SegmentRecord, b: &'a SegmentRecord) -> (&'a SegmentRecord, &'a SegmentRecord) {
    let key = |r: &SegmentRecord| (r.condition, r.segment_id.clone());
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}

fn make_trial(scenario: Scenario, label: Label, a: &SegmentRecord, b: &SegmentRecord) -> Trial {
    let (e, t) = orient(a, b);
    Trial {
        enroll_id: e.segment_id.clone(),
        test_id: t.segment_id.clone(),
        label,
        scenario,
    }
}

/// Seeded downsampling of the non-target pool. Every speaker in
/// `covered_speakers` that appears in some candidate keeps at least one
/// pair, even if that overshoots the cap.
fn subsample_nontargets(
    mut candidates: Vec<(Trial, String, String)>,
    covered_speakers: &BTreeSet<String>,
    cap: NonTargetCap,
    n_target: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Trial> {
    let keep = match cap {
        NonTargetCap::Exhaustive => {
            return candidates.into_iter().map(|(t, _, _)| t).collect();
        }
        NonTargetCap::Ratio(r) => {
            let k = (r * n_target as f64).floor() as usize;
            if k >= candidates.len() {
                return candidates.into_iter().map(|(t, _, _)| t).collect();
            }
            k
        }
    };

    candidates.sort_by(|a, b| a.0.cmp(&b.0));
    let mut selected: Vec<bool> = vec![false; candidates.len()];
    let mut speaker_pairs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, spk_a, spk_b)) in candidates.iter().enumerate() {
        speaker_pairs.entry(spk_a).or_default().push(i);
        speaker_pairs.entry(spk_b).or_default().push(i);
    }

    // Coverage pass: one seeded pick per still-uncovered target speaker.
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut n_selected = 0usize;
    for spk in covered_speakers {
        if covered.contains(spk.as_str()) {
            continue;
        }
        if let Some(pool) = speaker_pairs.get(spk.as_str()) {
            let &pick = pool.choose(rng).expect("non-empty pool");
            if !selected[pick] {
                selected[pick] = true;
                n_selected += 1;
            }
            covered.insert(&candidates[pick].1);
            covered.insert(&candidates[pick].2);
        }
    }

    // Fill pass: uniform sampling without replacement up to the cap.
    if n_selected < keep {
        let mut remaining: Vec<usize> =
            (0..candidates.len()).filter(|&i| !selected[i]).collect();
        let (picks, _) = remaining.partial_shuffle(rng, keep - n_selected);
        for &i in picks.iter() {
            selected[i] = true;
        }
    }

    candidates
        .into_iter()
        .enumerate()
        .filter(|(i, _)| selected[*i])
        .map(|(_, (t, _, _))| t)
        .collect()
}

/// Scenario 1: original vs de-identified speech of profile `n`.
///
/// Targets pair each speaker's original segments with their de-identified
/// segments of profile `n` from other sessions. Non-targets pair original
/// speech of one speaker with de-identified speech of another.
pub fn gen_set1(
    manifest: &CorpusManifest,
    profile: u32,
    opts: &TrialGenOptions,
) -> Result<TrialList> {
    let orig = manifest.select(Condition::Orig, None, opts.duration);
    let deid = manifest.select(Condition::Deid, Some(profile), opts.duration);
    if orig.is_empty() || deid.is_empty() {
        return Err(Error::EmptyScenario(format!("set1 profile {profile}")));
    }

    let mut targets = Vec::new();
    let mut target_speakers: BTreeSet<String> = BTreeSet::new();
    let mut candidates = Vec::new();
    for o in &orig {
        for d in &deid {
            if o.speaker_id == d.speaker_id {
                if o.session_id != d.session_id {
                    targets.push(make_trial(Scenario::Set1, Label::Target, o, d));
                    target_speakers.insert(o.speaker_id.clone());
                }
            } else {
                candidates.push((
                    make_trial(Scenario::Set1, Label::NonTarget, o, d),
                    o.speaker_id.clone(),
                    d.speaker_id.clone(),
                ));
            }
        }
    }
    if targets.is_empty() && candidates.is_empty() {
        return Err(Error::EmptyScenario(format!("set1 profile {profile}")));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(opts.seed, 0x5e71, profile as u64));
    let nontargets = subsample_nontargets(
        candidates,
        &target_speakers,
        opts.cap,
        targets.len(),
        &mut rng,
    );
    targets.extend(nontargets);
    Ok(TrialList::assemble(Scenario::Set1, vec![profile], targets))
}

/// Scenario 2: consistency/collision among de-identified segments of
/// profile `n`.
///
/// Targets pair segments of the same pseudo-voice across sessions;
/// non-targets pair pseudo-voices of different speakers.
pub fn gen_set2(
    manifest: &CorpusManifest,
    profile: u32,
    opts: &TrialGenOptions,
) -> Result<TrialList> {
    let deid = manifest.select(Condition::Deid, Some(profile), opts.duration);
    if deid.len() < 2 {
        return Err(Error::EmptyScenario(format!("set2 profile {profile}")));
    }

    let mut targets = Vec::new();
    let mut target_speakers: BTreeSet<String> = BTreeSet::new();
    let mut candidates = Vec::new();
    for (i, a) in deid.iter().enumerate() {
        for b in deid.iter().skip(i + 1) {
            if a.speaker_id == b.speaker_id {
                if a.session_id != b.session_id {
                    targets.push(make_trial(Scenario::Set2, Label::Target, a, b));
                    target_speakers.insert(a.speaker_id.clone());
                }
            } else {
                candidates.push((
                    make_trial(Scenario::Set2, Label::NonTarget, a, b),
                    a.speaker_id.clone(),
                    b.speaker_id.clone(),
                ));
            }
        }
    }
    if targets.is_empty() && candidates.is_empty() {
        return Err(Error::EmptyScenario(format!("set2 profile {profile}")));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(opts.seed, 0x5e72, profile as u64));
    let nontargets = subsample_nontargets(
        candidates,
        &target_speakers,
        opts.cap,
        targets.len(),
        &mut rng,
    );
    targets.extend(nontargets);
    Ok(TrialList::assemble(Scenario::Set2, vec![profile], targets))
}

/// Cross-profile distinctness for profiles `p1` and `p2`.
///
/// Targets are same-speaker same-profile pairs (pooled over both
/// profiles); non-targets are same-speaker cross-profile pairs, extended
/// to cross-speaker cross-profile pairs when `include_cross_speaker` is
/// set. Non-targets are sized to twice the target count by default.
pub fn gen_cross_profile(
    manifest: &CorpusManifest,
    p1: u32,
    p2: u32,
    include_cross_speaker: bool,
    opts: &TrialGenOptions,
) -> Result<TrialList> {
    let d1 = manifest.select(Condition::Deid, Some(p1), opts.duration);
    let d2 = manifest.select(Condition::Deid, Some(p2), opts.duration);
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::EmptyScenario(format!("xprof profiles {p1},{p2}")));
    }

    let mut targets = Vec::new();
    let mut target_speakers: BTreeSet<String> = BTreeSet::new();
    for side in [&d1, &d2] {
        for (i, a) in side.iter().enumerate() {
            for b in side.iter().skip(i + 1) {
                if a.speaker_id == b.speaker_id && a.session_id != b.session_id {
                    targets.push(make_trial(Scenario::Xprof, Label::Target, a, b));
                    target_speakers.insert(a.speaker_id.clone());
                }
            }
        }
    }

    let mut candidates = Vec::new();
    for a in &d1 {
        for b in &d2 {
            let same_speaker = a.speaker_id == b.speaker_id;
            if same_speaker || include_cross_speaker {
                candidates.push((
                    make_trial(Scenario::Xprof, Label::NonTarget, a, b),
                    a.speaker_id.clone(),
                    b.speaker_id.clone(),
                ));
            }
        }
    }
    if targets.is_empty() && candidates.is_empty() {
        return Err(Error::EmptyScenario(format!("xprof profiles {p1},{p2}")));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(
        opts.seed,
        0x5e73,
        ((p1 as u64) << 32) | p2 as u64,
    ));
    let nontargets = subsample_nontargets(
        candidates,
        &target_speakers,
        opts.cap,
        targets.len(),
        &mut rng,
    );
    targets.extend(nontargets);
    Ok(TrialList::assemble(Scenario::Xprof, vec![p1, p2], targets))
}

fn mix_seed(seed: u64, domain: u64, payload: u64) -> u64 {
    // splitmix64 over (seed, domain, payload) so scenario streams never
    // collide across profiles or seeds.
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(payload.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One audit violation: the offending trial index plus a description.
#[derive(Debug, Clone, Serialize)]
pub struct AuditViolation {
    pub index: usize,
    pub message: String,
}

/// Result of auditing a trial list against the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub violations: Vec<AuditViolation>,
    pub ok: bool,
}

/// Checks scenario label rules, self-pairs, duplicates, and id membership.
pub fn audit_trials(list: &TrialList, manifest: &CorpusManifest) -> AuditReport {
    let mut violations = Vec::new();
    let mut push = |index: usize, message: String| {
        violations.push(AuditViolation { index, message });
    };

    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (i, t) in list.trials.iter().enumerate() {
        if t.scenario != list.scenario {
            push(i, format!("scenario {:?} differs from list", t.scenario));
        }
        if t.enroll_id == t.test_id {
            push(i, "self-pair".into());
            continue;
        }
        let key = if t.enroll_id <= t.test_id {
            (t.enroll_id.clone(), t.test_id.clone())
        } else {
            (t.test_id.clone(), t.enroll_id.clone())
        };
        if !seen.insert(key) {
            push(i, "duplicate unordered pair".into());
        }
        let (e, p) = match (manifest.get(&t.enroll_id), manifest.get(&t.test_id)) {
            (Some(e), Some(p)) => (e, p),
            _ => {
                push(i, "segment id missing from manifest".into());
                continue;
            }
        };
        match list.scenario {
            Scenario::Set1 => {
                if e.condition != Condition::Orig || p.condition != Condition::Deid {
                    push(i, "set1 requires ORIG enroll and DEID test".into());
                    continue;
                }
                if let [profile] = list.profiles[..] {
                    if p.profile_id != Some(profile) {
                        push(i, format!("test profile {:?} differs from selector", p.profile_id));
                    }
                }
                match t.label {
                    Label::Target => {
                        if e.speaker_id != p.speaker_id {
                            push(i, "set1 target across different speakers".into());
                        }
                        if e.session_id == p.session_id {
                            push(i, "set1 target within one session".into());
                        }
                    }
                    Label::NonTarget => {
                        if e.speaker_id == p.speaker_id {
                            push(i, "set1 nontarget with equal speakers".into());
                        }
                    }
                }
            }
            Scenario::Set2 => {
                if e.condition != Condition::Deid || p.condition != Condition::Deid {
                    push(i, "set2 requires DEID on both sides".into());
                    continue;
                }
                if let [profile] = list.profiles[..] {
                    if e.profile_id != Some(profile) || p.profile_id != Some(profile) {
                        push(i, "set2 profile differs from selector".into());
                    }
                }
                match t.label {
                    Label::Target => {
                        if e.speaker_id != p.speaker_id {
                            push(i, "set2 target across different speakers".into());
                        }
                        if e.session_id == p.session_id {
                            push(i, "set2 target within one session".into());
                        }
                    }
                    Label::NonTarget => {
                        if e.speaker_id == p.speaker_id {
                            push(i, "set2 nontarget with equal speakers".into());
                        }
                    }
                }
            }
            Scenario::Xprof => {
                if e.condition != Condition::Deid || p.condition != Condition::Deid {
                    push(i, "xprof requires DEID on both sides".into());
                    continue;
                }
                let allowed: BTreeSet<Option<u32>> =
                    list.profiles.iter().map(|&p| Some(p)).collect();
                if !allowed.is_empty()
                    && (!allowed.contains(&e.profile_id) || !allowed.contains(&p.profile_id))
                {
                    push(i, "xprof profile outside selectors".into());
                }
                match t.label {
                    Label::Target => {
                        if e.speaker_id != p.speaker_id {
                            push(i, "xprof target across different speakers".into());
                        }
                        if e.profile_id != p.profile_id {
                            push(i, "xprof target across different profiles".into());
                        }
                        if e.session_id == p.session_id {
                            push(i, "xprof target within one session".into());
                        }
                    }
                    Label::NonTarget => {
                        if e.profile_id == p.profile_id {
                            push(i, "xprof nontarget with equal profiles".into());
                        }
                    }
                }
            }
        }
    }

    if list.n_target != list.trials.iter().filter(|t| t.label == Label::Target).count() {
        push(usize::MAX, "n_target differs from list content".into());
    }
    if list.n_nontarget != list.trials.len() - list.n_target.min(list.trials.len()) {
        push(usize::MAX, "n_nontarget differs from list content".into());
    }

    AuditReport {
        ok: violations.is_empty(),
        violations,
    }
}

/// Writes a trial list as CSV: `enroll_id,test_id,label,scenario`, one row
/// per trial in canonical order.
pub fn write_trials(list: &TrialList, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["enroll_id", "test_id", "label", "scenario"])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    for t in &list.trials {
        w.write_record([
            t.enroll_id.as_str(),
            t.test_id.as_str(),
            t.label.as_str(),
            t.scenario.as_str(),
        ])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a trial CSV back into per-scenario lists (profile selectors are
/// not stored in the CSV and come back empty).
pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<TrialList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut by_scenario: BTreeMap<Scenario, Vec<Trial>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseFailure(e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::ParseFailure(format!(
                "row {line}: expected 4 columns, got {}",
                rec.len()
            )));
        }
        let scenario = Scenario::parse(&rec[3])?;
        by_scenario.entry(scenario).or_default().push(Trial {
            enroll_id: rec[0].to_string(),
            test_id: rec[1].to_string(),
            label: Label::parse(&rec[2])?,
            scenario,
        });
    }
    Ok(by_scenario
        .into_iter()
        .map(|(scenario, trials)| TrialList::assemble(scenario, Vec::new(), trials))
        .collect())
}

/// Writes several lists into one CSV, ordered by scenario.
pub fn write_trial_sets(lists: &[TrialList], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["enroll_id", "test_id", "label", "scenario"])
        .map_err(|e| Error::ParseFailure(e.to_string()))?;
    let mut ordered: Vec<&TrialList> = lists.iter().collect();
    ordered.sort_by_key(|l| l.scenario);
    for list in ordered {
        for t in &list.trials {
            w.write_record([
                t.enroll_id.as_str(),
                t.test_id.as_str(),
                t.label.as_str(),
                t.scenario.as_str(),
            ])
            .map_err(|e| Error::ParseFailure(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_manifest;

    fn rec(
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

    fn two_speaker_manifest() -> CorpusManifest {
        build_manifest(vec![
            rec("a-o", "sa", "1", Condition::Orig, None),
            rec("a-d", "sa", "2", Condition::Deid, Some(1)),
            rec("b-o", "sb", "1", Condition::Orig, None),
            rec("b-d", "sb", "2", Condition::Deid, Some(1)),
        ])
        .unwrap()
    }

    #[test]
    fn set1_exhaustive_small() {
        let m = two_speaker_manifest();
        let list = gen_set1(&m, 1, &TrialGenOptions::default()).unwrap();
        assert_eq!(list.n_target, 2);
        assert_eq!(list.n_nontarget, 2);
        assert!(audit_trials(&list, &m).ok);
        // Enroll side is always the ORIG segment.
        for t in &list.trials {
            assert!(t.enroll_id.ends_with("-o"));
        }
    }

    #[test]
    fn set1_requires_orig() {
        let m = build_manifest(vec![
            rec("a-d", "sa", "1", Condition::Deid, Some(1)),
            rec("b-d", "sb", "2", Condition::Deid, Some(1)),
        ])
        .unwrap();
        assert!(matches!(
            gen_set1(&m, 1, &TrialGenOptions::default()).unwrap_err(),
            Error::EmptyScenario(_)
        ));
    }

    #[test]
    fn set1_deid_only_speaker_is_test_side_only() {
        let m = build_manifest(vec![
            rec("a-o", "sa", "1", Condition::Orig, None),
            rec("a-d", "sa", "2", Condition::Deid, Some(1)),
            rec("c-d", "sc", "1", Condition::Deid, Some(1)),
        ])
        .unwrap();
        let list = gen_set1(&m, 1, &TrialGenOptions::default()).unwrap();
        // sc has no orig: it can only appear as the deid test side.
        assert!(list
            .trials
            .iter()
            .all(|t| t.enroll_id != "c-d"));
        assert!(list.trials.iter().any(|t| t.test_id == "c-d"));
        assert!(audit_trials(&list, &m).ok);
    }

    #[test]
    fn set2_single_speaker_three_sessions() {
        let m = build_manifest(vec![
            rec("d1", "sa", "1", Condition::Deid, Some(1)),
            rec("d2", "sa", "2", Condition::Deid, Some(1)),
            rec("d3", "sa", "3", Condition::Deid, Some(1)),
        ])
        .unwrap();
        let list = gen_set2(&m, 1, &TrialGenOptions::default()).unwrap();
        assert_eq!(list.n_target, 3);
        assert_eq!(list.n_nontarget, 0);
        assert!(audit_trials(&list, &m).ok);
    }

    #[test]
    fn set2_two_speakers_two_segments() {
        let m = build_manifest(vec![
            rec("a1", "sa", "1", Condition::Deid, Some(1)),
            rec("a2", "sa", "2", Condition::Deid, Some(1)),
            rec("b1", "sb", "1", Condition::Deid, Some(1)),
            rec("b2", "sb", "2", Condition::Deid, Some(1)),
        ])
        .unwrap();
        let list = gen_set2(&m, 1, &TrialGenOptions::default()).unwrap();
        assert_eq!(list.n_target, 2);
        assert_eq!(list.n_nontarget, 4);
        assert!(audit_trials(&list, &m).ok);
    }

    fn xprof_manifest() -> CorpusManifest {
        build_manifest(vec![
            rec("p1a", "sa", "1", Condition::Deid, Some(1)),
            rec("p1b", "sa", "2", Condition::Deid, Some(1)),
            rec("p2a", "sa", "3", Condition::Deid, Some(2)),
            rec("p2b", "sa", "4", Condition::Deid, Some(2)),
        ])
        .unwrap()
    }

    #[test]
    fn xprof_single_speaker() {
        let m = xprof_manifest();
        let list =
            gen_cross_profile(&m, 1, 2, false, &TrialGenOptions::default()).unwrap();
        assert_eq!(list.n_target, 2);
        assert_eq!(list.n_nontarget, 4);
        assert!(audit_trials(&list, &m).ok);
    }

    #[test]
    fn xprof_default_sizing_caps_at_twice_targets() {
        let mut records = Vec::new();
        for s in 0..4 {
            for sess in 0..3 {
                records.push(rec(
                    &format!("s{s}p1x{sess}"),
                    &format!("spk{s}"),
                    &format!("{sess}"),
                    Condition::Deid,
                    Some(1),
                ));
                records.push(rec(
                    &format!("s{s}p2x{sess}"),
                    &format!("spk{s}"),
                    &format!("{sess}"),
                    Condition::Deid,
                    Some(2),
                ));
            }
        }
        let m = build_manifest(records).unwrap();
        let opts = TrialGenOptions {
            cap: NonTargetCap::Ratio(2.0),
            ..Default::default()
        };
        let list = gen_cross_profile(&m, 1, 2, false, &opts).unwrap();
        assert_eq!(list.n_nontarget, 2 * list.n_target);
        assert!(audit_trials(&list, &m).ok);
    }

    #[test]
    fn xprof_without_cross_speaker_keeps_speakers_equal() {
        let mut records = Vec::new();
        for s in 0..3 {
            for sess in 0..2 {
                records.push(rec(
                    &format!("s{s}p1x{sess}"),
                    &format!("spk{s}"),
                    &format!("{sess}"),
                    Condition::Deid,
                    Some(1),
                ));
                records.push(rec(
                    &format!("s{s}p2x{sess}"),
                    &format!("spk{s}"),
                    &format!("{sess}"),
                    Condition::Deid,
                    Some(2),
                ));
            }
        }
        let m = build_manifest(records).unwrap();
        let list =
            gen_cross_profile(&m, 1, 2, false, &TrialGenOptions::default()).unwrap();
        for t in list.trials.iter().filter(|t| t.label == Label::NonTarget) {
            let e = m.get(&t.enroll_id).unwrap();
            let p = m.get(&t.test_id).unwrap();
            assert_eq!(e.speaker_id, p.speaker_id);
        }
    }

    #[test]
    fn determinism_same_seed_same_list() {
        let m = two_speaker_manifest();
        let opts = TrialGenOptions {
            seed: 42,
            cap: NonTargetCap::Ratio(0.5),
            duration: None,
        };
        let a = gen_set1(&m, 1, &opts).unwrap();
        let b = gen_set1(&m, 1, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn audit_flags_self_pair_and_bad_target() {
        let m = two_speaker_manifest();
        let list = TrialList {
            scenario: Scenario::Set1,
            profiles: vec![1],
            trials: vec![
                Trial {
                    enroll_id: "a-o".into(),
                    test_id: "a-o".into(),
                    label: Label::Target,
                    scenario: Scenario::Set1,
                },
                Trial {
                    enroll_id: "a-o".into(),
                    test_id: "b-d".into(),
                    label: Label::Target,
                    scenario: Scenario::Set1,
                },
            ],
            n_target: 2,
            n_nontarget: 0,
        };
        let report = audit_trials(&list, &m);
        assert!(!report.ok);
        assert!(report
            .violations
            .iter()
            .any(|v| v.message.contains("self-pair")));
        assert!(report
            .violations
            .iter()
            .any(|v| v.message.contains("different speakers")));
    }

    #[test]
    fn coverage_survives_tight_cap() {
        // 6 speakers, tight cap: every speaker with a target trial must
        // still appear in some nontarget.
        let mut records = Vec::new();
        for s in 0..6 {
            records.push(rec(
                &format!("o{s}"),
                &format!("spk{s}"),
                "1",
                Condition::Orig,
                None,
            ));
            records.push(rec(
                &format!("d{s}"),
                &format!("spk{s}"),
                "2",
                Condition::Deid,
                Some(1),
            ));
        }
        let m = build_manifest(records).unwrap();
        let opts = TrialGenOptions {
            seed: 7,
            cap: NonTargetCap::Ratio(0.2),
            duration: None,
        };
        let list = gen_set1(&m, 1, &opts).unwrap();
        for s in 0..6 {
            let spk = format!("spk{s}");
            let appears = list
                .trials
                .iter()
                .filter(|t| t.label == Label::NonTarget)
                .any(|t| {
                    m.get(&t.enroll_id).unwrap().speaker_id == spk
                        || m.get(&t.test_id).unwrap().speaker_id == spk
                });
            assert!(appears, "speaker {spk} lost coverage");
        }
    }

    #[test]
    fn trial_csv_roundtrip() {
        let m = two_speaker_manifest();
        let list = gen_set1(&m, 1, &TrialGenOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trials(&list, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("enroll_id,test_id,label,scenario\n"));
        let lists = read_trials(&p).unwrap();
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].trials, list.trials);
    }
}
